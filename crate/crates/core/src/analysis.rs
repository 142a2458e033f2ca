//! Stability analysis of the networked error dynamics: distributed
//! observability, closed-loop matrices, the delay bound test and gain design.
//!
//! Closed loop, delay-free and augmented:
//!
//! ```text
//! F̂  = (I - K D̄_H)(W ⊗ F),                 D̄_H = D_Hᵀ D_H
//! F̂_ = W̄F with its first block row premultiplied by (I - K D̄_H)
//! ```

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use faer::linalg::solvers::Solve;
use faer::{c64, Mat};
use nalgebra::{DMatrix, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delay::DelayProfile;
use crate::error::{Error, Result};
use crate::filter::GainSet;
use crate::linalg::{block_diag, distinct_eigenvalues, kron, mat_pow, numeric_rank, to_faer};

pub use crate::linalg::spectral_radius;

/// Relative singular-value threshold for the observability rank test.
pub const RANK_TOL: f64 = 1e-12;

const MAX_CERTIFY_ROUNDS: usize = 6;

/// Consensus weights, local dynamics and per-node measurement rows: the
/// pieces every stability question is asked about.
#[derive(Debug, Clone)]
pub struct Plant {
    w: DMatrix<f64>,
    f: Matrix6<f64>,
    h: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observability {
    pub observable: bool,
    /// Every mode with `|λ| ≥ 1` is observable (PBH test).
    pub detectable: bool,
    pub rank: usize,
    pub dim: usize,
    /// Numeric rank of `F`, standing in for its structural rank.
    pub rank_f: usize,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub f_hat: DMatrix<f64>,
    pub f_hat_aug: DMatrix<f64>,
    pub rho_free: f64,
    pub rho_aug: f64,
}

impl Plant {
    pub fn new(w: DMatrix<f64>, f: Matrix6<f64>, h: Vec<DMatrix<f64>>) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::param("weight matrix must be square and non-empty"));
        }
        if h.len() != w.nrows() {
            return Err(Error::param(format!(
                "{} measurement blocks for {} nodes",
                h.len(),
                w.nrows()
            )));
        }
        if let Some(i) = h.iter().position(|b| b.ncols() != 6) {
            return Err(Error::param(format!(
                "measurement block {i} must have 6 columns"
            )));
        }
        Ok(Plant { w, f, h })
    }

    pub fn nodes(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn transition(&self) -> &Matrix6<f64> {
        &self.f
    }

    fn f_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(6, 6, self.f.as_slice())
    }

    /// `D_H = diag[H_i]`.
    pub fn d_h(&self) -> DMatrix<f64> {
        block_diag(&self.h)
    }

    /// `D̄_H = D_Hᵀ D_H`.
    pub fn d_h_bar(&self) -> DMatrix<f64> {
        let blocks: Vec<_> = self.h.iter().map(|h| h.transpose() * h).collect();
        block_diag(&blocks)
    }

    /// `W ⊗ F^p`.
    pub fn wf_pow(&self, p: usize) -> DMatrix<f64> {
        kron(&self.w, &mat_pow(&self.f_dyn(), p))
    }

    fn check_gains(&self, gains: &GainSet) -> Result<()> {
        if gains.len() != self.nodes() {
            return Err(Error::param(format!(
                "{} gain blocks for {} nodes",
                gains.len(),
                self.nodes()
            )));
        }
        Ok(())
    }

    /// `I - K D̄_H`.
    fn injection(&self, gains: &GainSet) -> Result<DMatrix<f64>> {
        self.check_gains(gains)?;
        let nn = 6 * self.nodes();
        Ok(DMatrix::identity(nn, nn) - gains.stacked() * self.d_h_bar())
    }

    /// Rank test on the observability matrix of `(W ⊗ F, D̄_H)`.
    pub fn check_distributed_observability(&self) -> Observability {
        let a = self.wf_pow(1);
        let c = self.d_h_bar();
        let dim = a.nrows();
        let mut obs = DMatrix::zeros(dim * dim, dim);
        let mut blk = c.clone();
        for r in 0..dim {
            obs.view_mut((r * dim, 0), (dim, dim)).copy_from(&blk);
            blk = &blk * &a;
        }
        let rank = numeric_rank(&obs, RANK_TOL);
        let detectable = rank == dim || pbh_detectable(&a, &c);
        Observability {
            observable: rank == dim,
            detectable,
            rank,
            dim,
            rank_f: numeric_rank(&self.f_dyn(), RANK_TOL),
        }
    }

    /// Delay-free and (if a profile is given) augmented closed loop.
    pub fn build_closed_loop(
        &self,
        gains: &GainSet,
        profile: Option<&DelayProfile>,
    ) -> Result<ClosedLoop> {
        let inj = self.injection(gains)?;
        let f_hat = &inj * self.wf_pow(1);
        let rho_free = spectral_radius(&f_hat)?;
        let (f_hat_aug, rho_aug) = match profile {
            Some(p) if p.tau_bar() > 0 => {
                let m = self.augmented(&inj, p)?;
                let r = spectral_radius(&m)?;
                (m, r)
            }
            Some(p) => {
                if p.len() != self.nodes() {
                    return Err(Error::param(
                        "delay profile does not match the network size",
                    ));
                }
                (f_hat.clone(), rho_free)
            }
            None => (f_hat.clone(), rho_free),
        };
        Ok(ClosedLoop {
            f_hat,
            f_hat_aug,
            rho_free,
            rho_aug,
        })
    }

    fn augmented(&self, inj: &DMatrix<f64>, profile: &DelayProfile) -> Result<DMatrix<f64>> {
        if profile.len() != self.nodes() {
            return Err(Error::param(
                "delay profile does not match the network size",
            ));
        }
        let mut m = profile.augmented_wf(&self.w, &self.f_dyn())?;
        let nn = 6 * self.nodes();
        let top = inj * m.rows(0, nn);
        m.rows_mut(0, nn).copy_from(&top);
        Ok(m)
    }

    /// Spectral radius of the delay bound test matrix
    /// `(I - K D̄_H)(W ⊗ F^{τ+1})` for a uniform delay `τ`.
    pub fn bound_radius(&self, gains: &GainSet, tau: usize) -> Result<f64> {
        let inj = self.injection(gains)?;
        spectral_radius(&(inj * self.wf_pow(tau + 1)))
    }

    /// Largest `τ ≤ cap` such that the bound test passes for every delay
    /// `0..=τ`; `None` when it already fails at zero.
    pub fn max_delay_bound(&self, gains: &GainSet, cap: i64) -> Result<Option<usize>> {
        if cap < 0 {
            return Err(Error::param(format!(
                "delay cap must be non-negative, got {cap}"
            )));
        }
        let inj = self.injection(gains)?;
        let f = self.f_dyn();
        let mut fp = f.clone();
        let mut best = None;
        for tau in 0..=cap as usize {
            if spectral_radius(&(&inj * kron(&self.w, &fp)))? >= 1.0 {
                break;
            }
            best = Some(tau);
            fp = &fp * &f;
        }
        Ok(best)
    }

    /// Augmented radii under uniform delays `0..=tau_max`.
    pub fn uniform_delay_radii(
        &self,
        gains: &GainSet,
        net: &crate::network::SensorNetwork,
        tau_max: usize,
    ) -> Result<Vec<f64>> {
        let inj = self.injection(gains)?;
        (0..=tau_max)
            .map(|t| {
                let p = DelayProfile::uniform(net, t);
                if t == 0 {
                    spectral_radius(&(&inj * self.wf_pow(1)))
                } else {
                    spectral_radius(&self.augmented(&inj, &p)?)
                }
            })
            .collect()
    }

    /// Same as [`Plant::uniform_delay_radii`] with links taken from the
    /// off-diagonal support of `W`.
    pub fn uniform_delay_radii_on_support(
        &self,
        gains: &GainSet,
        tau_max: usize,
    ) -> Result<Vec<f64>> {
        let inj = self.injection(gains)?;
        (0..=tau_max)
            .map(|t| {
                if t == 0 {
                    spectral_radius(&(&inj * self.wf_pow(1)))
                } else {
                    spectral_radius(
                        &self.augmented(&inj, &DelayProfile::uniform_on_support(&self.w, t))?,
                    )
                }
            })
            .collect()
    }

    /// Searches block-diagonal gains that make every target closed loop
    /// Schur stable. The delay-free loop is always a target; `profiles`
    /// adds augmented loops for known delay profiles.
    pub fn design_gains(&self, profiles: &[DelayProfile], opts: &DesignOptions) -> Result<Design> {
        opts.validate()?;
        let obs = self.check_distributed_observability();
        if !obs.detectable {
            let best_radius = spectral_radius(&self.wf_pow(1))?;
            return Err(Error::DesignFailure { best_radius });
        }
        let mut problem = DesignProblem::new(self, profiles, opts)?;
        let stop = opts.stop_radius.unwrap_or(1.0 - opts.margin);
        problem.stop = stop;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

        // Start: scaled least-squares injection on the position block.
        let mut x = problem.alpha_beta_grid();
        let mut best = problem.radius(&x)?;
        let mut extra = Vec::new();
        let mut rounds = 0;
        loop {
            for &p in &opts.sharpness {
                if best < stop {
                    break;
                }
                let (x_new, r) = problem.minimize(x.clone(), p, opts.budget)?;
                if r < best {
                    best = r;
                    x = x_new;
                }
            }
            (x, best) = problem.polish(x, best, opts, &mut rng)?;

            // Bound certification: every uniform delay up to the bound the
            // gains claim must itself be stable, otherwise it becomes a target.
            let Some(cap) = opts.certify_bound else { break };
            if rounds >= MAX_CERTIFY_ROUNDS || best >= 1.0 - opts.margin {
                break;
            }
            let gains = problem.gains(&x);
            let Some(tau_star) = self.max_delay_bound(&gains, cap)? else {
                break;
            };
            let radii = self.uniform_delay_radii_on_support(&gains, tau_star)?;
            let worst = (1..radii.len())
                .filter(|t| !problem.has_uniform(*t))
                .max_by(|&a, &b| radii[a].total_cmp(&radii[b]));
            match worst {
                Some(t) if radii[t] >= 1.0 - opts.margin => {
                    let p = DelayProfile::uniform_on_support(&self.w, t);
                    problem.add_target(&p, Some(t))?;
                    extra.push(p);
                    best = problem.radius(&x)?;
                }
                _ => break,
            }
            rounds += 1;
        }
        let evaluations = *problem.evals.borrow();

        let gains = problem.gains(&x);
        let free = self.build_closed_loop(&gains, None)?;
        let mut radii = vec![free.rho_free];
        for p in profiles {
            radii.push(self.build_closed_loop(&gains, Some(p))?.rho_aug);
        }
        let certified: Vec<f64> = extra
            .iter()
            .map(|p| Ok(self.build_closed_loop(&gains, Some(p))?.rho_aug))
            .collect::<Result<_>>()?;
        let worst = radii.iter().chain(&certified).cloned().fold(0.0, f64::max);
        if worst >= 1.0 - opts.margin {
            return Err(Error::DesignFailure { best_radius: worst });
        }
        Ok(Design {
            gains,
            rho_free: free.rho_free,
            rho_targets: radii[1..].to_vec(),
            certified_uniform: extra.iter().map(|p| p.tau_bar()).collect(),
            evaluations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignOptions {
    /// Quasi-Newton iterations per sharpness stage.
    pub budget: usize,
    /// Required distance of every target radius below one.
    pub margin: f64,
    /// Stop once every target radius is below this; defaults to `1 - margin`.
    pub stop_radius: Option<f64>,
    /// When set, uniform delays up to the resulting delay bound (capped
    /// here) whose augmented loop is not stable are added as targets.
    pub certify_bound: Option<i64>,
    /// Exponents of the smooth spectral max, applied in order.
    pub sharpness: Vec<f64>,
    /// Eigenvalues per target entering the smooth max.
    pub top_k: usize,
    /// Random perturbation rounds after the gradient stages.
    pub polish: usize,
    pub polish_step: f64,
    pub seed: u64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            budget: 60,
            margin: 0.005,
            stop_radius: None,
            certify_bound: None,
            sharpness: vec![200.0, 1000.0],
            top_k: 80,
            polish: 20,
            polish_step: 0.01,
            seed: 0,
        }
    }
}

impl DesignOptions {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::param(format!(
                "design margin {} outside [0, 1)",
                self.margin
            )));
        }
        if self.top_k == 0 {
            return Err(Error::param("design top_k must be positive"));
        }
        if self.sharpness.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return Err(Error::param(
                "design sharpness exponents must be finite and >= 1",
            ));
        }
        if !(self.polish_step.is_finite() && self.polish_step >= 0.0) {
            return Err(Error::param("design polish step must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Design {
    pub gains: GainSet,
    pub rho_free: f64,
    /// Augmented radius per supplied profile, in order.
    pub rho_targets: Vec<f64>,
    /// Uniform delays added as targets during bound certification.
    pub certified_uniform: Vec<usize>,
    pub evaluations: usize,
}

/// Rank of `[A - μI; C]` at every eigenvalue with `|μ| ≥ 1`. Complex `μ`
/// uses the real form of the pencil.
fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let Ok(eig) = distinct_eigenvalues(a) else {
        return false;
    };
    let n = a.nrows();
    eig.iter().filter(|mu| mu.norm() >= 1.0 - 1e-9).all(|mu| {
        if mu.im.abs() < 1e-12 {
            let mut m = DMatrix::zeros(n + c.nrows(), n);
            m.rows_mut(0, n)
                .copy_from(&(a - DMatrix::identity(n, n) * mu.re));
            m.rows_mut(n, c.nrows()).copy_from(c);
            numeric_rank(&m, RANK_TOL) == n
        } else {
            let shifted = a - DMatrix::identity(n, n) * mu.re;
            let im = DMatrix::identity(n, n) * mu.im;
            let mut m = DMatrix::zeros(2 * (n + c.nrows()), 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            m.view_mut((0, n), (n, n)).copy_from(&im);
            m.view_mut((n, 0), (n, n)).copy_from(&(-&im));
            m.view_mut((n, n), (n, n)).copy_from(&shifted);
            m.view_mut((2 * n, 0), c.shape()).copy_from(c);
            m.view_mut((2 * n + c.nrows(), n), c.shape()).copy_from(c);
            numeric_rank(&m, RANK_TOL) == 2 * n
        }
    })
}

/// Per node, `D̄_i = U_i S_i U_iᵀ` on its range, and `K_i = Θ_i S_i⁻¹ U_iᵀ`
/// so that `K_i D̄_i = Θ_i U_iᵀ`. The parameters are the entries of `Θ_i`.
struct NodeBasis {
    u: DMatrix<f64>,
    s: Vec<f64>,
    offset: usize,
}

struct Target {
    /// First block row of `W̄F`, `6N x 6N(τ̄+1)`.
    top: Mat<f64>,
    top_c: Mat<c64>,
}

struct DesignProblem<'a> {
    plant: &'a Plant,
    bases: Vec<NodeBasis>,
    targets: Vec<Target>,
    /// Uniform delay of each target, if it is one.
    uniform: Vec<Option<usize>>,
    n_params: usize,
    stop: f64,
    top_k: usize,
    sharpness: RefCell<f64>,
    /// Last point evaluated, shared between cost and gradient calls.
    cache: RefCell<Option<(Vec<f64>, f64, f64, Vec<f64>)>>,
    evals: RefCell<usize>,
    best: RefCell<(f64, Vec<f64>)>,
}

impl<'a> DesignProblem<'a> {
    fn new(plant: &'a Plant, profiles: &[DelayProfile], opts: &DesignOptions) -> Result<Self> {
        let mut bases = Vec::with_capacity(plant.nodes());
        let mut offset = 0;
        for h in &plant.h {
            let g = h.transpose() * h;
            let eig = g.symmetric_eigen();
            let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..6)
                .filter(|&k| eig.eigenvalues[k] > 6.0 * smax * RANK_TOL && smax > 0.0)
                .collect();
            let u = DMatrix::from_fn(6, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
            let s = keep.iter().map(|&k| eig.eigenvalues[k]).collect();
            bases.push(NodeBasis { u, s, offset });
            offset += 6 * keep.len();
        }
        let nn = 6 * plant.nodes();
        let mut targets = vec![Target::new(&plant.wf_pow(1))];
        for p in profiles {
            if p.len() != plant.nodes() {
                return Err(Error::param(
                    "design profile does not match the network size",
                ));
            }
            let m = p.augmented_wf(&plant.w, &plant.f_dyn())?;
            targets.push(Target::new(&m.rows(0, nn).into_owned()));
        }
        let uniform = vec![None; targets.len()];
        Ok(DesignProblem {
            plant,
            bases,
            targets,
            uniform,
            n_params: offset,
            stop: 0.0,
            top_k: opts.top_k,
            sharpness: RefCell::new(opts.sharpness.first().copied().unwrap_or(200.0)),
            cache: RefCell::new(None),
            evals: RefCell::new(0),
            best: RefCell::new((f64::INFINITY, Vec::new())),
        })
    }

    fn add_target(&mut self, profile: &DelayProfile, uniform: Option<usize>) -> Result<()> {
        let nn = 6 * self.plant.nodes();
        let m = profile.augmented_wf(&self.plant.w, &self.plant.f_dyn())?;
        self.targets.push(Target::new(&m.rows(0, nn).into_owned()));
        self.uniform.push(uniform);
        *self.cache.borrow_mut() = None;
        Ok(())
    }

    fn has_uniform(&self, tau: usize) -> bool {
        self.uniform.contains(&Some(tau))
    }

    /// Seeded random perturbations of one node block at a time.
    fn polish(
        &self,
        mut x: Vec<f64>,
        mut best: f64,
        opts: &DesignOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, f64)> {
        let mut step = opts.polish_step;
        for _ in 0..opts.polish {
            if best < self.stop {
                break;
            }
            let node = rng.random_range(0..self.plant.nodes());
            let mut cand = x.clone();
            for v in &mut cand[self.param_range(node)] {
                *v += step * (rng.random::<f64>() * 2.0 - 1.0);
            }
            let r = self.radius(&cand)?;
            if r < best {
                best = r;
                x = cand;
            } else {
                step *= 0.98;
            }
        }
        Ok((x, best))
    }

    fn param_range(&self, node: usize) -> std::ops::Range<usize> {
        let b = &self.bases[node];
        b.offset..b.offset + 6 * b.s.len()
    }

    /// `Θ_i` for node `i`, `6 x r_i`, row-major in the parameter vector.
    fn theta(&self, x: &[f64], node: usize) -> DMatrix<f64> {
        let b = &self.bases[node];
        let r = b.s.len();
        DMatrix::from_fn(6, r, |a, c| x[b.offset + a * r + c])
    }

    fn gains(&self, x: &[f64]) -> GainSet {
        let blocks = (0..self.plant.nodes())
            .map(|i| {
                let b = &self.bases[i];
                let s_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    b.s.len(),
                    b.s.iter().map(|v| 1.0 / v),
                ));
                let k = self.theta(x, i) * s_inv * b.u.transpose();
                Matrix6::from_column_slice(k.as_slice())
            })
            .collect();
        GainSet { blocks }
    }

    /// Parameters of the given gains, `Θ_i = K_i U_i S_i`.
    fn params_of(&self, gains: &GainSet) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params];
        for (i, b) in self.bases.iter().enumerate() {
            let k = DMatrix::from_column_slice(6, 6, gains.blocks[i].as_slice());
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(b.s.clone()));
            let theta = k * &b.u * s;
            let r = b.s.len();
            for a in 0..6 {
                for c in 0..r {
                    x[b.offset + a * r + c] = theta[(a, c)];
                }
            }
        }
        x
    }

    /// Best `K_i = [α P; (β/T) P]`, `P = (D̄_i)_pos⁺`, over a small grid.
    fn alpha_beta_grid(&self) -> Vec<f64> {
        let period = self.plant.f[(0, 3)].abs().max(f64::EPSILON);
        let mut best = (f64::INFINITY, vec![0.0; self.n_params]);
        for &alpha in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            for &beta in &[0.01, 0.05, 0.1, 0.2, 0.4] {
                let blocks = self
                    .plant
                    .h
                    .iter()
                    .map(|h| {
                        let g = h.transpose() * h;
                        let pos = g.view((0, 0), (3, 3)).into_owned();
                        let p = pos
                            .pseudo_inverse(1e-12)
                            .unwrap_or_else(|_| DMatrix::zeros(3, 3));
                        let mut k = Matrix6::zeros();
                        for r in 0..3 {
                            for c in 0..3 {
                                k[(r, c)] = alpha * p[(r, c)];
                                k[(r + 3, c)] = beta / period * p[(r, c)];
                            }
                        }
                        k
                    })
                    .collect();
                let x = self.params_of(&GainSet { blocks });
                if let Ok(r) = self.radius(&x) {
                    if r < best.0 {
                        best = (r, x);
                    }
                }
            }
        }
        best.1
    }

    /// Full closed-loop matrix of one target.
    fn closed_loop(&self, t: &Target, x: &[f64]) -> Mat<f64> {
        let nn = t.top.nrows();
        let m = t.top.ncols();
        let mut a = Mat::<f64>::zeros(m, m);
        for i in 0..self.plant.nodes() {
            let b = &self.bases[i];
            // (Θ_i U_iᵀ), 6x6
            let p = self.theta(x, i) * b.u.transpose();
            for row in 0..6 {
                let gr = 6 * i + row;
                for col in 0..m {
                    let mut v = t.top[(gr, col)];
                    for q in 0..6 {
                        let pq = p[(row, q)];
                        if pq != 0.0 {
                            v -= pq * t.top[(6 * i + q, col)];
                        }
                    }
                    a[(gr, col)] = v;
                }
            }
        }
        for r in nn..m {
            a[(r, r - nn)] = 1.0;
        }
        a
    }

    fn radius(&self, x: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in &self.targets {
            let ev = self
                .closed_loop(t, x)
                .eigenvalues()
                .map_err(|e| Error::NumericFailure(format!("eigensolver: {e:?}")))?;
            worst = ev.iter().map(|z| z.norm()).fold(worst, f64::max);
        }
        *self.evals.borrow_mut() += 1;
        Ok(worst)
    }

    /// Smooth max `J = (Σ |λ|^p)^{1/p}` over the leading eigenvalues of all
    /// targets, the true max radius, and `∇J`.
    fn evaluate(&self, x: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        if let Some((cx, j, r, g)) = self.cache.borrow().as_ref() {
            if cx.as_slice() == x {
                return Ok((*j, *r, g.clone()));
            }
        }
        let p = *self.sharpness.borrow();
        struct Lead {
            lambda: c64,
            target: usize,
            u: Vec<c64>,
            v: Vec<c64>,
        }
        let mut leads: Vec<Lead> = Vec::new();
        for (ti, t) in self.targets.iter().enumerate() {
            let a = self.closed_loop(t, x);
            let evd = a
                .eigen()
                .map_err(|e| Error::NumericFailure(format!("eigensolver: {e:?}")))?;
            let u = evd.U();
            let s = evd.S().column_vector();
            let m = u.nrows();
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| s[b].norm().total_cmp(&s[a].norm()));
            order.truncate(self.top_k.min(m));
            // Rows of U⁻¹ for the selected eigenvalues: solve Uᵀ X = E.
            let lu = u.partial_piv_lu();
            let mut e = Mat::<c64>::zeros(m, order.len());
            for (c, &k) in order.iter().enumerate() {
                e[(k, c)] = c64::new(1.0, 0.0);
            }
            let rows = lu.solve_transpose(&e);
            for (c, &k) in order.iter().enumerate() {
                leads.push(Lead {
                    lambda: s[k],
                    target: ti,
                    u: (0..m).map(|r| u[(r, k)]).collect(),
                    v: (0..m).map(|r| rows[(r, c)]).collect(),
                });
            }
        }
        let rmax = leads.iter().map(|l| l.lambda.norm()).fold(0.0, f64::max);
        if !rmax.is_finite() || rmax == 0.0 {
            return Err(Error::NumericFailure(
                "degenerate closed-loop spectrum".into(),
            ));
        }
        let sum: f64 = leads.iter().map(|l| (l.lambda.norm() / rmax).powf(p)).sum();
        let j = rmax * sum.powf(1.0 / p);
        let mut grad = vec![0.0; self.n_params];
        for l in &leads {
            let modulus = l.lambda.norm();
            if modulus == 0.0 {
                continue;
            }
            let coef = (modulus / rmax).powf(p - 1.0) * sum.powf(1.0 / p - 1.0);
            if coef < 1e-14 {
                continue;
            }
            let phase = l.lambda.conj() / modulus;
            let t = &self.targets[l.target];
            // z = top · u over the first block.
            let m = t.top_c.ncols();
            let nn = t.top_c.nrows();
            let mut z = vec![c64::new(0.0, 0.0); nn];
            for col in 0..m {
                let uc = l.u[col];
                if uc == c64::new(0.0, 0.0) {
                    continue;
                }
                for (row, zr) in z.iter_mut().enumerate() {
                    *zr += t.top_c[(row, col)] * uc;
                }
            }
            for (i, b) in self.bases.iter().enumerate() {
                let r = b.s.len();
                for c in 0..r {
                    let mut hz = c64::new(0.0, 0.0);
                    for q in 0..6 {
                        hz += z[6 * i + q] * b.u[(q, c)];
                    }
                    for a in 0..6 {
                        let dl = -(l.v[6 * i + a] * hz);
                        grad[b.offset + a * r + c] += coef * (phase * dl).re;
                    }
                }
            }
        }
        *self.evals.borrow_mut() += 1;
        {
            let mut best = self.best.borrow_mut();
            if rmax < best.0 {
                *best = (rmax, x.to_vec());
            }
        }
        *self.cache.borrow_mut() = Some((x.to_vec(), j, rmax, grad.clone()));
        Ok((j, rmax, grad))
    }

    /// L-BFGS on the smooth max; returns the best point seen by true radius.
    fn minimize(&self, x0: Vec<f64>, sharpness: f64, iters: usize) -> Result<(Vec<f64>, f64)> {
        *self.sharpness.borrow_mut() = sharpness;
        *self.cache.borrow_mut() = None;
        *self.best.borrow_mut() = (f64::INFINITY, Vec::new());
        let (_, r0, _) = self.evaluate(&x0)?;
        if iters > 0 && r0 >= self.stop {
            let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
            // A failed line search on this non-smooth surface ends the stage,
            // and so does reaching the stop radius.
            let _ = Executor::new(self, solver)
                .configure(|s| s.param(x0.clone()).max_iters(iters as u64))
                .run();
        }
        let (r, x) = self.best.borrow().clone();
        if x.is_empty() || r > r0 {
            return Ok((x0, r0));
        }
        Ok((x, r))
    }
}

impl Target {
    fn new(top: &DMatrix<f64>) -> Self {
        let t = to_faer(top);
        let tc = Mat::from_fn(t.nrows(), t.ncols(), |i, j| c64::new(t[(i, j)], 0.0));
        Target { top: t, top_c: tc }
    }
}

impl CostFunction for &DesignProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if self.best.borrow().0 < self.stop {
            return Err(argmin::core::Error::msg("stop radius reached"));
        }
        let (j, _, _) = self.evaluate(x)?;
        Ok(j)
    }
}

impl Gradient for &DesignProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let (_, _, g) = self.evaluate(x)?;
        Ok(g)
    }
}
