//! Nearly-constant-velocity target model.
//!
//! State layout is `(p_x, p_y, p_z, v_x, v_y, v_z)`. The transition is
//! `x_{k+1} = F x_k + G q_k` with `F = [[I, T I], [0, I]]` and
//! `G = [[T²/2 I], [T I]]`.

use nalgebra::{Matrix3, Matrix6, Matrix6x3, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState(pub Vector6<f64>);

impl TargetState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        TargetState(Vector6::new(
            position.x, position.y, position.z, velocity.x, velocity.y, velocity.z,
        ))
    }

    pub fn zero() -> Self {
        TargetState(Vector6::zeros())
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != STATE_DIM {
            return Err(Error::param(format!(
                "target state needs {STATE_DIM} entries, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("target state has non-finite entries"));
        }
        Ok(TargetState(Vector6::from_column_slice(values)))
    }

    pub fn position(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcvModel {
    period: f64,
    f: Matrix6<f64>,
    g: Matrix6x3<f64>,
    q: Matrix3<f64>,
    q_factor: Matrix3<f64>,
}

impl NcvModel {
    pub fn new(period: f64, q: Matrix3<f64>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::param(format!(
                "sampling period must be > 0, got {period}"
            )));
        }
        let q_factor = psd_factor(&q)?;
        let i3 = Matrix3::<f64>::identity();
        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * period));
        let mut g = Matrix6x3::zeros();
        g.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(i3 * (period * period / 2.0)));
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i3 * period));
        Ok(NcvModel {
            period,
            f,
            g,
            q,
            q_factor,
        })
    }

    /// `Q = σ_q² I₃`.
    pub fn isotropic(period: f64, sigma_q: f64) -> Result<Self> {
        Self::new(period, Matrix3::identity() * (sigma_q * sigma_q))
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn transition(&self) -> &Matrix6<f64> {
        &self.f
    }

    pub fn input(&self) -> &Matrix6x3<f64> {
        &self.g
    }

    pub fn process_cov(&self) -> &Matrix3<f64> {
        &self.q
    }

    /// `G Q Gᵀ`, the process noise as seen by the state.
    pub fn state_noise_cov(&self) -> Matrix6<f64> {
        self.g * self.q * self.g.transpose()
    }

    pub fn step(&self, x: &TargetState, q: &Vector3<f64>) -> TargetState {
        TargetState(self.f * x.0 + self.g * q)
    }

    /// Checked variant of [`NcvModel::step`] for untyped inputs.
    pub fn step_slice(&self, x: &[f64], q: &[f64]) -> Result<TargetState> {
        let x = TargetState::from_slice(x)?;
        if q.len() != 3 {
            return Err(Error::param(format!(
                "process input needs 3 entries, got {}",
                q.len()
            )));
        }
        Ok(self.step(&x, &Vector3::from_column_slice(q)))
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        sample_with_factor(&self.q_factor, rng)
    }
}

/// Draws `q ~ N(0, Q)`. Deterministic for a seeded generator.
pub fn sample_process_noise<R: Rng + ?Sized>(
    q: &Matrix3<f64>,
    rng: &mut R,
) -> Result<Vector3<f64>> {
    let l = psd_factor(q)?;
    Ok(sample_with_factor(&l, rng))
}

fn sample_with_factor<R: Rng + ?Sized>(l: &Matrix3<f64>, rng: &mut R) -> Vector3<f64> {
    let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    l * z
}

/// Square-root factor `L` with `L Lᵀ = Q` for a symmetric PSD `Q`.
fn psd_factor(q: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("process covariance has non-finite entries"));
    }
    let scale = q.abs().max().max(1.0);
    if (q - q.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::param("process covariance is not symmetric"));
    }
    if q.iter().all(|&v| v == 0.0) {
        return Ok(Matrix3::zeros());
    }
    let eig = SymmetricEigen::new(*q);
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(Error::param(
            "process covariance is not positive semidefinite",
        ));
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&sqrt_vals))
}

/// One piece of a scripted maneuver: constant acceleration from `start_step` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSegment {
    pub start_step: usize,
    pub accel: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ManeuverMode {
    /// Gaussian input `q_k ~ N(0, Q)`.
    #[default]
    Random,
    /// Piecewise-constant input, noise-free.
    Scripted { segments: Vec<ManeuverSegment> },
}

impl ManeuverMode {
    fn input_at<R: Rng + ?Sized>(
        &self,
        model: &NcvModel,
        step: usize,
        rng: &mut R,
    ) -> Vector3<f64> {
        match self {
            ManeuverMode::Random => model.sample_noise(rng),
            ManeuverMode::Scripted { segments } => segments
                .iter()
                .filter(|s| s.start_step <= step)
                .max_by_key(|s| s.start_step)
                .map(|s| Vector3::from(s.accel))
                .unwrap_or_else(Vector3::zeros),
        }
    }
}

/// States `x_0..=x_steps`.
pub fn generate_trajectory<R: Rng + ?Sized>(
    model: &NcvModel,
    x0: TargetState,
    steps: usize,
    mode: &ManeuverMode,
    rng: &mut R,
) -> Vec<TargetState> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0);
    let mut x = x0;
    for k in 0..steps {
        let q = mode.input_at(model, k, rng);
        x = model.step(&x, &q);
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_period_blocks() {
        let m = NcvModel::isotropic(1.0, 0.0).unwrap();
        let f = m.transition();
        assert_eq!(f.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::identity());
        assert_eq!(f.fixed_view::<3, 3>(3, 0).into_owned(), Matrix3::zeros());
        let g = m.input();
        assert_eq!(
            g.fixed_view::<3, 3>(0, 0).into_owned(),
            Matrix3::identity() * 0.5
        );
        assert_eq!(g.fixed_view::<3, 3>(3, 0).into_owned(), Matrix3::identity());
    }

    #[test]
    fn half_period_entries() {
        let m = NcvModel::isotropic(0.5, 1.0).unwrap();
        assert_eq!(m.transition()[(0, 3)], 0.5);
        assert_eq!(m.input()[(0, 0)], 0.125);
        assert_eq!(m.input()[(3, 0)], 0.5);
    }

    #[test]
    fn transition_has_unit_spectral_radius() {
        for t in [0.1, 0.5, 1.0, 3.0] {
            let m = NcvModel::isotropic(t, 1.0).unwrap();
            let f = DMatrix::from_iterator(6, 6, m.transition().iter().cloned());
            assert!((spectral_radius(&f).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NcvModel::isotropic(0.0, 1.0).is_err());
        assert!(NcvModel::isotropic(-1.0, 1.0).is_err());
        let not_psd = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(NcvModel::new(1.0, not_psd).is_err());
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(NcvModel::new(1.0, asym).is_err());
    }

    #[test]
    fn step_examples() {
        let m = NcvModel::isotropic(1.0, 0.0).unwrap();
        let z = m.step(&TargetState::zero(), &Vector3::zeros());
        assert_eq!(z, TargetState::zero());
        let x = TargetState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0));
        let y = m.step(&x, &Vector3::zeros());
        assert_eq!(y.0, Vector6::new(3.0, 0.0, 0.0, 2.0, 0.0, 0.0));
        let y = m.step(&TargetState::zero(), &Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(y.0, Vector6::new(0.5, 0.0, 0.0, 1.0, 0.0, 0.0));
        assert!(m.step_slice(&[0.0; 5], &[0.0; 3]).is_err());
        assert!(m.step_slice(&[0.0; 6], &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(
                sample_process_noise(&Matrix3::zeros(), &mut rng).unwrap(),
                Vector3::zeros()
            );
        }
    }

    #[test]
    fn sample_covariance_matches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = Matrix3::zeros();
        let mut mean = Vector3::zeros();
        let samples: Vec<_> = (0..n)
            .map(|_| sample_process_noise(&Matrix3::identity(), &mut rng).unwrap())
            .collect();
        for s in &samples {
            mean += s;
        }
        mean /= n as f64;
        for s in &samples {
            let d = s - mean;
            acc += d * d.transpose();
        }
        acc /= (n - 1) as f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (acc[(i, j)] - target).abs() < 0.05,
                    "cov[{i},{j}] = {}",
                    acc[(i, j)]
                );
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let q = Matrix3::identity() * 2.0;
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            assert_eq!(
                sample_process_noise(&q, &mut a).unwrap(),
                sample_process_noise(&q, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn scripted_maneuver_is_piecewise_constant() {
        let m = NcvModel::isotropic(1.0, 5.0).unwrap();
        let mode = ManeuverMode::Scripted {
            segments: vec![
                ManeuverSegment {
                    start_step: 0,
                    accel: [0.0, 0.0, 0.0],
                },
                ManeuverSegment {
                    start_step: 2,
                    accel: [1.0, 0.0, 0.0],
                },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = generate_trajectory(&m, TargetState::zero(), 3, &mode, &mut rng);
        assert_eq!(traj[2], TargetState::zero());
        assert_eq!(traj[3].0, Vector6::new(0.5, 0.0, 0.0, 1.0, 0.0, 0.0));
    }

    mod props {
        use super::*;
        use crate::linalg::mat_pow;
        use proptest::prelude::*;

        fn vec6() -> impl Strategy<Value = [f64; 6]> {
            prop::array::uniform6(-100.0..100.0f64)
        }

        proptest! {
            #[test]
            fn noise_free_stepping_is_matrix_power(t in 0.01..2.0f64, x in vec6(), k in 0usize..40) {
                let m = NcvModel::isotropic(t, 0.0).unwrap();
                let x0 = TargetState::from_slice(&x).unwrap();
                let mut xs = x0;
                for _ in 0..k {
                    xs = m.step(&xs, &Vector3::zeros());
                }
                let f = DMatrix::from_iterator(6, 6, m.transition().iter().cloned());
                let fk = mat_pow(&f, k);
                let expect = fk * nalgebra::DVector::from_column_slice(&x);
                for i in 0..6 {
                    let tol = 1e-10 * (1.0 + expect[i].abs());
                    prop_assert!((xs.0[i] - expect[i]).abs() <= tol);
                }
            }

            #[test]
            fn step_is_linear(x1 in vec6(), x2 in vec6(), q1 in prop::array::uniform3(-5.0..5.0f64), q2 in prop::array::uniform3(-5.0..5.0f64)) {
                let m = NcvModel::isotropic(0.7, 1.0).unwrap();
                let a = TargetState::from_slice(&x1).unwrap();
                let b = TargetState::from_slice(&x2).unwrap();
                let qa = Vector3::from(q1);
                let qb = Vector3::from(q2);
                let lhs = m.step(&TargetState(a.0 + b.0), &(qa + qb));
                let rhs = m.step(&a, &qa).0 + m.step(&b, &qb).0;
                prop_assert!((lhs.0 - rhs).abs().max() <= 1e-12 * (1.0 + rhs.abs().max()));
            }
        }
    }
}
