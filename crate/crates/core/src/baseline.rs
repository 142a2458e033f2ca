//! Centralized Kalman filters over all stacked TDOA rows. One filter sees the
//! linear (half squared range difference) rows, the other linearizes the
//! range-difference model around a chosen position every step.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{NcvModel, TargetState};
use crate::error::{Error, Result};
use crate::measurement::{LinearTdoaModel, NonlinearTdoaModel};

/// Symmetry and PSD slack for covariances.
pub const COV_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub estimate: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl KalmanState {
    pub fn new(estimate: Vector6<f64>, covariance: Matrix6<f64>) -> Result<Self> {
        if estimate
            .iter()
            .chain(covariance.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::param("initial estimate or covariance not finite"));
        }
        if (covariance - covariance.transpose()).amax() > COV_TOL {
            return Err(Error::param("initial covariance is not symmetric"));
        }
        let min_eig = covariance.symmetric_eigen().eigenvalues.min();
        if min_eig < -COV_TOL {
            return Err(Error::param(format!(
                "initial covariance has eigenvalue {min_eig}"
            )));
        }
        Ok(KalmanState {
            estimate,
            covariance,
        })
    }
}

/// Time update with `(F, G Q Gᵀ)`.
pub fn kf_predict(state: &KalmanState, model: &NcvModel) -> KalmanState {
    let f = model.transition();
    let p = f * state.covariance * f.transpose() + model.state_noise_cov();
    KalmanState {
        estimate: f * state.estimate,
        covariance: symmetrize(&p),
    }
}

/// Measurement update given the innovation `ν = y - ŷ` directly.
///
/// Joseph form keeps the covariance PSD. The innovation covariance goes
/// through a Cholesky solve.
pub fn kf_update(
    prior: &KalmanState,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    innovation: &DVector<f64>,
) -> Result<KalmanState> {
    let m = h.nrows();
    if h.ncols() != 6 || r.shape() != (m, m) || innovation.len() != m {
        return Err(Error::param(format!(
            "update shapes disagree: H {}x{}, R {}x{}, innovation {}",
            h.nrows(),
            h.ncols(),
            r.nrows(),
            r.ncols(),
            innovation.len()
        )));
    }
    if m == 0 {
        return Ok(prior.clone());
    }
    let p = DMatrix::from_column_slice(6, 6, prior.covariance.as_slice());
    let ph_t = &p * h.transpose();
    let s = h * &ph_t + r;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or_else(|| {
        Error::NumericFailure("innovation covariance is not positive definite".into())
    })?;
    // K = P Hᵀ S⁻¹, from S Kᵀ = H P.
    let k = chol.solve(&ph_t.transpose()).transpose();
    let x = prior.estimate + Vector6::from_column_slice((&k * innovation).as_slice());
    let i_kh = DMatrix::identity(6, 6) - &k * h;
    let p_new = &i_kh * p * i_kh.transpose() + &k * r * k.transpose();
    let p_new = Matrix6::from_column_slice(p_new.as_slice());
    if !x.iter().chain(p_new.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericFailure("non-finite Kalman update".into()));
    }
    Ok(KalmanState {
        estimate: x,
        covariance: symmetrize(&p_new),
    })
}

/// Predict, then update with `ν = y - H x⁻`.
pub fn kf_step(
    state: &KalmanState,
    model: &NcvModel,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    if h.ncols() != 6 || y.len() != h.nrows() {
        return Err(Error::param("H and y disagree"));
    }
    let prior = kf_predict(state, model);
    let pred = h * DVector::from_column_slice(prior.estimate.as_slice());
    kf_update(&prior, h, r, &(y - pred))
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

/// Where the range-difference rows are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionSource {
    /// Oracle: the true target position.
    True,
    /// The filter's own predicted position.
    Estimated,
}

/// What both baseline runs share.
#[derive(Debug, Clone)]
pub struct BaselineInputs<'a> {
    pub model: &'a NcvModel,
    pub linear: &'a LinearTdoaModel,
    pub nonlinear: &'a NonlinearTdoaModel,
    /// `x_0 … x_K`.
    pub truth: &'a [TargetState],
    pub init: KalmanState,
    /// Measurement standard deviation assumed by the filters.
    pub filter_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct KfRun {
    /// `x_k - x̂_{k|k}` for `k = 0..=K`.
    pub errors: Vec<Vector6<f64>>,
    /// Stacked `H` used at each step `1..=K`.
    pub h_history: Vec<DMatrix<f64>>,
    pub final_state: KalmanState,
}

impl KfRun {
    /// Mean of `‖e_k‖² / 6` over the final quarter of the steps.
    pub fn steady_state_mse(&self) -> f64 {
        let n = self.errors.len();
        if n == 0 {
            return 0.0;
        }
        let start = n - (n / 4).max(1);
        let tail = &self.errors[start..];
        tail.iter().map(|e| e.norm_squared() / 6.0).sum::<f64>() / tail.len() as f64
    }
}

impl BaselineInputs<'_> {
    fn check(&self) -> Result<()> {
        if self.truth.is_empty() {
            return Err(Error::param(
                "baseline run needs at least the initial state",
            ));
        }
        if self.linear.len() != self.nonlinear.len() {
            return Err(Error::param(
                "linear and nonlinear models cover different networks",
            ));
        }
        if !(self.filter_sigma.is_finite() && self.filter_sigma > 0.0) {
            return Err(Error::param("filter measurement sigma must be > 0"));
        }
        Ok(())
    }

    fn r_stack(&self, rows: usize) -> DMatrix<f64> {
        DMatrix::identity(rows, rows) * (self.filter_sigma * self.filter_sigma)
    }
}

/// Linear model: stacked `H` is fixed, the known bias is removed from `y`.
pub fn kf_linear_tdoa_run<R: Rng + ?Sized>(
    inputs: &BaselineInputs<'_>,
    rng: &mut R,
) -> Result<KfRun> {
    inputs.check()?;
    let h = inputs.linear.stacked_h();
    let r = inputs.r_stack(h.nrows());
    let mut state = inputs.init.clone();
    let mut errors = vec![inputs.truth[0].0 - state.estimate];
    let mut h_history = Vec::with_capacity(inputs.truth.len() - 1);
    for x in &inputs.truth[1..] {
        let parts: Vec<DVector<f64>> = (0..inputs.linear.len())
            .map(|i| inputs.linear.measure_debiased(&x.position(), i, rng))
            .collect();
        let y = crate::filter::stack_measurements(&parts);
        state = kf_step(&state, inputs.model, &h, &r, &y)?;
        errors.push(x.0 - state.estimate);
        h_history.push(h.clone());
    }
    Ok(KfRun {
        errors,
        h_history,
        final_state: state,
    })
}

/// Range-difference model linearized at the true or the predicted position:
/// `ŷ = h(p_eval) + H (p̂⁻ - p_eval)`.
pub fn kf_nonlinear_tdoa_run<R: Rng + ?Sized>(
    inputs: &BaselineInputs<'_>,
    source: PositionSource,
    rng: &mut R,
) -> Result<KfRun> {
    inputs.check()?;
    let nl = inputs.nonlinear;
    let mut state = inputs.init.clone();
    let mut errors = vec![inputs.truth[0].0 - state.estimate];
    let mut h_history = Vec::with_capacity(inputs.truth.len() - 1);
    for x in &inputs.truth[1..] {
        let p_true = x.position();
        let parts: Vec<DVector<f64>> = (0..nl.len())
            .map(|i| nl.measure(&p_true, i, rng))
            .collect::<Result<_>>()?;
        let y = crate::filter::stack_measurements(&parts);
        let prior = kf_predict(&state, inputs.model);
        let p_hat = Vector3::new(prior.estimate[0], prior.estimate[1], prior.estimate[2]);
        let p_eval = match source {
            PositionSource::True => p_true,
            PositionSource::Estimated => p_hat,
        };
        let hs: Vec<DMatrix<f64>> = (0..nl.len())
            .map(|i| nl.jacobian(&p_eval, i))
            .collect::<Result<_>>()?;
        let preds: Vec<DVector<f64>> = (0..nl.len())
            .map(|i| nl.predict(&p_eval, i))
            .collect::<Result<_>>()?;
        let h = stack_rows(&hs);
        let mut offset = DVector::zeros(6);
        offset.rows_mut(0, 3).copy_from(&(p_hat - p_eval));
        let y_hat = crate::filter::stack_measurements(&preds) + &h * offset;
        let r = inputs.r_stack(h.nrows());
        state = kf_update(&prior, &h, &r, &(y - y_hat))?;
        errors.push(x.0 - state.estimate);
        h_history.push(h);
    }
    Ok(KfRun {
        errors,
        h_history,
        final_state: state,
    })
}

fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, 6);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_trajectory, ManeuverMode};
    use crate::network::{SensorNetwork, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(sigma_q: f64, sigma_r: f64, seed: u64) -> (NcvModel, SensorNetwork, Vec<TargetState>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SensorNetwork::build(&Topology::Cycle, 6)
            .unwrap()
            .place_uniform(0.0, 10.0, &mut rng)
            .unwrap()
            .design_weights()
            .unwrap();
        let model = NcvModel::isotropic(1.0, sigma_q).unwrap();
        let x0 = TargetState::new(Vector3::new(5.0, 5.0, 5.0), Vector3::new(0.1, -0.05, 0.02));
        let truth = generate_trajectory(&model, x0, 100, &ManeuverMode::Random, &mut rng);
        let _ = sigma_r;
        (model, net, truth)
    }

    fn check_cov(p: &Matrix6<f64>) {
        assert!((p - p.transpose()).amax() <= COV_TOL);
        assert!(p.symmetric_eigen().eigenvalues.min() >= -COV_TOL);
    }

    #[test]
    fn noiseless_exact_init_stays_exact() {
        let (model, net, truth) = setup(0.0, 0.0, 1);
        let lin = LinearTdoaModel::new(&net, 0.0).unwrap();
        let nl = NonlinearTdoaModel::new(&net, 0.0).unwrap();
        let init = KalmanState::new(truth[0].0, Matrix6::identity()).unwrap();
        let inputs = BaselineInputs {
            model: &model,
            linear: &lin,
            nonlinear: &nl,
            truth: &truth,
            init,
            filter_sigma: 1.0,
        };
        let run = kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(run.errors.iter().all(|e| e.amax() <= 1e-9));
    }

    #[test]
    fn empty_update_only_grows_covariance() {
        let model = NcvModel::isotropic(0.5, 0.3).unwrap();
        let s0 = KalmanState::new(Vector6::repeat(1.0), Matrix6::identity()).unwrap();
        let h = DMatrix::zeros(2, 6);
        let r = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![3.0, -1.0]);
        let s1 = kf_step(&s0, &model, &h, &r, &y).unwrap();
        let pred = kf_predict(&s0, &model);
        assert_eq!(s1.estimate, pred.estimate);
        let f = model.transition();
        let expect = f * s0.covariance * f.transpose() + model.state_noise_cov();
        assert!((s1.covariance - expect).amax() < 1e-14);
    }

    #[test]
    fn singular_innovation_covariance_is_reported() {
        let model = NcvModel::isotropic(1.0, 0.0).unwrap();
        let s0 = KalmanState::new(Vector6::zeros(), Matrix6::zeros()).unwrap();
        let h = DMatrix::from_fn(1, 6, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let r = DMatrix::zeros(1, 1);
        let y = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            kf_step(&s0, &model, &h, &r, &y),
            Err(Error::NumericFailure(_))
        ));
    }

    /// Hand-rolled scalar filter on the x axis: position observed, velocity not.
    #[test]
    fn matches_scalar_oracle() {
        let (t, q, rv) = (0.5, 0.2, 0.3);
        let model = NcvModel::isotropic(t, q).unwrap();
        let mut h = DMatrix::zeros(1, 6);
        h[(0, 0)] = 1.0;
        let r = DMatrix::from_element(1, 1, rv * rv);
        let mut s = KalmanState::new(Vector6::zeros(), Matrix6::identity() * 2.0).unwrap();
        // 2x2 oracle for (x, vx).
        let (mut x, mut v) = (0.0f64, 0.0f64);
        let (mut p11, mut p12, mut p22) = (2.0f64, 0.0f64, 2.0f64);
        let qq = q * q;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let y: f64 = rng.random_range(-3.0..3.0);
            s = kf_step(&s, &model, &h, &r, &DVector::from_vec(vec![y])).unwrap();
            // predict
            x += t * v;
            let a11 = p11 + 2.0 * t * p12 + t * t * p22 + qq * t.powi(4) / 4.0;
            let a12 = p12 + t * p22 + qq * t.powi(3) / 2.0;
            let a22 = p22 + qq * t * t;
            // update
            let sv = a11 + rv * rv;
            let (k1, k2) = (a11 / sv, a12 / sv);
            let innov = y - x;
            x += k1 * innov;
            v += k2 * innov;
            p11 = (1.0 - k1) * a11;
            p12 = (1.0 - k1) * a12;
            p22 = a22 - k2 * a12;
            assert!((s.estimate[0] - x).abs() < 1e-12);
            assert!((s.estimate[3] - v).abs() < 1e-12);
            assert!((s.covariance[(0, 0)] - p11).abs() < 1e-12);
            assert!((s.covariance[(0, 3)] - p12).abs() < 1e-12);
            assert!((s.covariance[(3, 3)] - p22).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_convention_does_not_matter() {
        let (model, net, truth) = setup(0.05, 0.1, 4);
        let lin = LinearTdoaModel::new(&net, 0.1).unwrap();
        let h = lin.stacked_h();
        let r = DMatrix::identity(h.nrows(), h.nrows()) * 0.01;
        let bias = crate::filter::stack_measurements(
            &(0..6).map(|i| lin.bias(i).clone()).collect::<Vec<_>>(),
        );
        let init = KalmanState::new(Vector6::repeat(2.0), Matrix6::identity() * 10.0).unwrap();
        let (mut a, mut b) = (init.clone(), init);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for x in &truth[1..] {
            let raw = crate::filter::stack_measurements(
                &(0..6)
                    .map(|i| lin.measure(&x.position(), i, &mut rng))
                    .collect::<Vec<_>>(),
            );
            a = kf_step(&a, &model, &h, &r, &(&raw - &bias)).unwrap();
            let prior = kf_predict(&b, &model);
            let pred = &h * DVector::from_column_slice(prior.estimate.as_slice()) + &bias;
            b = kf_update(&prior, &h, &r, &(&raw - pred)).unwrap();
            assert!((a.estimate - b.estimate).amax() <= 1e-12 * (1.0 + a.estimate.amax()));
        }
    }

    #[test]
    fn sensor_order_does_not_matter() {
        let (model, net, truth) = setup(0.02, 0.0, 5);
        let pos = net.positions().unwrap().to_vec();
        let perm = [3usize, 0, 5, 1, 4, 2];
        // Relabel: new sensor k is old sensor perm[k]; cycle edges follow.
        let inv: Vec<usize> = (0..6)
            .map(|old| perm.iter().position(|&p| p == old).unwrap())
            .collect();
        let edges = net.edges().iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let net2 = SensorNetwork::build(&Topology::EdgeList { edges }, 6)
            .unwrap()
            .place_sensors(perm.iter().map(|&p| pos[p]).collect())
            .unwrap();
        let runs: Vec<KfRun> = [&net, &net2]
            .iter()
            .map(|n| {
                let lin = LinearTdoaModel::new(n, 0.0).unwrap();
                let nl = NonlinearTdoaModel::new(n, 0.0).unwrap();
                let init = KalmanState::new(
                    truth[0].0 + Vector6::repeat(3.0),
                    Matrix6::identity() * 25.0,
                )
                .unwrap();
                let inputs = BaselineInputs {
                    model: &model,
                    linear: &lin,
                    nonlinear: &nl,
                    truth: &truth,
                    init,
                    filter_sigma: 0.1,
                };
                kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
            })
            .collect();
        for (a, b) in runs[0].errors.iter().zip(&runs[1].errors) {
            assert!((a - b).amax() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_h_fixed_nonlinear_h_moves() {
        let (model, net, truth) = setup(0.05, 0.1, 6);
        let lin = LinearTdoaModel::new(&net, 0.1).unwrap();
        let nl = NonlinearTdoaModel::new(&net, 0.1).unwrap();
        let init =
            KalmanState::new(truth[0].0 + Vector6::repeat(1.0), Matrix6::identity() * 4.0).unwrap();
        let inputs = BaselineInputs {
            model: &model,
            linear: &lin,
            nonlinear: &nl,
            truth: &truth,
            init,
            filter_sigma: 0.1,
        };
        let a = kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(a.h_history.windows(2).all(|w| w[0] == w[1]));
        let b = kf_nonlinear_tdoa_run(
            &inputs,
            PositionSource::Estimated,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!(b
            .h_history
            .windows(2)
            .any(|w| (&w[0] - &w[1]).amax() > 1e-12));
        assert_eq!(a.h_history[0].nrows(), b.h_history[0].nrows());
        check_cov(&a.final_state.covariance);
        check_cov(&b.final_state.covariance);
    }

    #[test]
    fn oracle_linearization_converges_noiseless() {
        let (model, net, truth) = setup(0.0, 0.0, 7);
        let lin = LinearTdoaModel::new(&net, 0.0).unwrap();
        let nl = NonlinearTdoaModel::new(&net, 0.0).unwrap();
        let init = KalmanState::new(
            truth[0].0 + Vector6::new(1.0, -1.0, 0.5, 0.1, 0.0, -0.1),
            Matrix6::identity() * 4.0,
        )
        .unwrap();
        let inputs = BaselineInputs {
            model: &model,
            linear: &lin,
            nonlinear: &nl,
            truth: &truth,
            init,
            filter_sigma: 1e-3,
        };
        let run = kf_nonlinear_tdoa_run(
            &inputs,
            PositionSource::True,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(run.errors.last().unwrap().norm() < 1e-6 * run.errors[0].norm());
        let run = kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(run.errors.last().unwrap().norm() < 1e-6 * run.errors[0].norm());
    }

    #[test]
    fn seeded_runs_repeat() {
        let (model, net, truth) = setup(0.05, 0.1, 8);
        let lin = LinearTdoaModel::new(&net, 0.1).unwrap();
        let nl = NonlinearTdoaModel::new(&net, 0.1).unwrap();
        let init = KalmanState::new(truth[0].0, Matrix6::identity()).unwrap();
        let inputs = BaselineInputs {
            model: &model,
            linear: &lin,
            nonlinear: &nl,
            truth: &truth,
            init,
            filter_sigma: 0.1,
        };
        let a = kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = kf_linear_tdoa_run(&inputs, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.errors, b.errors);
    }
}
