//! Scenario setup, gain resolution, analysis, and the Monte Carlo loop.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{GainMode, InitCenter, Scenario};
use crate::analysis::{Observability, Plant};
use crate::delay::DelayProfile;
use crate::dynamics::{generate_trajectory, NcvModel, TargetState};
use crate::error::{Error, Result};
use crate::filter::{DistributedFilter, FilterSetup, GainSet};
use crate::measurement::LinearTdoaModel;
use crate::network::SensorNetwork;
use crate::par::{try_map_indexed, Execution};

/// Independent random streams. Each `(purpose, index)` pair gets its own
/// ChaCha stream under the master seed, so adding trials or consuming more
/// numbers in one stream never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Geometry = 1,
    Delays = 2,
    TrialTruth = 3,
    TrialInit = 4,
    TrialMeasurement = 5,
    BaselineTruth = 6,
    BaselineInit = 7,
    BaselineMeasurement = 8,
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((stream as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// Everything deterministic about a scenario before gains are chosen.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub net: SensorNetwork,
    pub model: NcvModel,
    pub linear: LinearTdoaModel,
    pub profile: DelayProfile,
    pub plant: Plant,
    /// Shared initial target state.
    pub x0: TargetState,
}

impl Prepared {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let s = scenario.clone();
        let mut geo = stream_rng(s.seed, Stream::Geometry, 0);
        let [lo, hi] = s.network.placement_range;
        let net = SensorNetwork::build(&s.network.topology(), s.network.sensors)?;
        let net = if s.network.positions.is_empty() {
            net.place_uniform(lo, hi, &mut geo)?
        } else {
            net.place_sensors(
                s.network
                    .positions
                    .iter()
                    .map(|p| Vector3::from(*p))
                    .collect(),
            )?
        }
        .design_weights()?;

        let q = match &s.target.process_cov {
            Some(rows) => Matrix3::from_fn(|r, c| rows[r][c]),
            None => Matrix3::identity() * (s.target.sigma_q * s.target.sigma_q),
        };
        let model = NcvModel::new(s.target.period, q)?;
        let linear = LinearTdoaModel::new(&net, s.measurement.sigma_r)?;

        let mut delays = stream_rng(s.seed, Stream::Delays, 0);
        let profile = DelayProfile::assign(&net, &s.delay.scheme(), s.delay.tau_bar, &mut delays)?;

        let h = (0..net.len()).map(|i| linear.h(i).clone()).collect();
        let w = net
            .weights()
            .cloned()
            .ok_or_else(|| Error::param("network has no weights"))?;
        let plant = Plant::new(w, *model.transition(), h)?;

        let position = if s.target.initial_position.is_empty() {
            Vector3::from_fn(|_, _| geo.random_range(lo..hi))
        } else {
            Vector3::from_column_slice(&s.target.initial_position)
        };
        let x0 = TargetState::new(position, Vector3::from(s.target.initial_velocity));
        Ok(Prepared {
            scenario: s,
            net,
            model,
            linear,
            profile,
            plant,
            x0,
        })
    }

    pub fn sensors(&self) -> usize {
        self.net.len()
    }

    /// Supplied gains as given, or a design against the delay-free loop,
    /// the scenario's own profile, and any requested uniform delays.
    pub fn resolve_gains(&self) -> Result<ResolvedGains> {
        let g = &self.scenario.gains;
        match g.mode {
            GainMode::Supplied => {
                let blocks = g
                    .blocks
                    .iter()
                    .map(|b| Matrix6::from_row_slice(b))
                    .collect();
                Ok(ResolvedGains {
                    gains: GainSet { blocks },
                    design: None,
                })
            }
            GainMode::Designed => {
                let mut targets = Vec::new();
                if g.include_profile && self.profile.realized_max() > 0 {
                    targets.push(self.profile.trimmed());
                }
                for &t in &g.robust_uniform {
                    targets.push(DelayProfile::uniform(&self.net, t));
                }
                let d = self.plant.design_gains(&targets, &g.design)?;
                Ok(ResolvedGains {
                    gains: d.gains,
                    design: Some(DesignReport {
                        rho_targets: d.rho_targets,
                        certified_uniform: d.certified_uniform,
                        evaluations: d.evaluations,
                    }),
                })
            }
        }
    }

    /// Stability evidence for the given gains on this scenario.
    pub fn analyze(&self, resolved: &ResolvedGains) -> Result<Analysis> {
        let gains = &resolved.gains;
        let loop_ = self.plant.build_closed_loop(gains, Some(&self.profile))?;
        let tau_star = self
            .plant
            .max_delay_bound(gains, self.scenario.analysis.bound_cap)?;
        let Observability {
            observable,
            detectable,
            rank,
            dim,
            ..
        } = self.plant.check_distributed_observability();
        Ok(Analysis {
            rho_free: loop_.rho_free,
            rho_aug: loop_.rho_aug,
            tau_star,
            observable,
            detectable,
            observability_rank: rank,
            state_dim: dim,
            tau_bar_realized: self.profile.realized_max(),
            bound_cap: self.scenario.analysis.bound_cap,
            gains: gains.blocks.iter().map(row_major).collect(),
            design: resolved.design.clone(),
        })
    }
}

fn row_major(m: &Matrix6<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone)]
pub struct ResolvedGains {
    pub gains: GainSet,
    pub design: Option<DesignReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    /// Augmented radius for each design target after the delay-free loop.
    pub rho_targets: Vec<f64>,
    /// Uniform delays added during bound certification.
    pub certified_uniform: Vec<usize>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub rho_free: f64,
    pub rho_aug: f64,
    pub tau_star: Option<usize>,
    pub observable: bool,
    pub detectable: bool,
    pub observability_rank: usize,
    pub state_dim: usize,
    pub tau_bar_realized: usize,
    pub bound_cap: i64,
    /// Row-major gain blocks, one per sensor.
    pub gains: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub design: Option<DesignReport>,
}

/// One Monte Carlo run of the distributed filter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    /// `x_0 … x_steps`.
    pub truth: Vec<TargetState>,
    /// `x_0 - x̂_0^i` per sensor.
    pub initial_errors: Vec<Vector6<f64>>,
    /// `x_k - x̂_{k|k}^i` for `k = 1..=steps`, indexed `[k - 1][i]`.
    pub errors: Vec<Vec<Vector6<f64>>>,
    /// Mean squared error over sensors and states, per step.
    pub mse: Vec<f64>,
    pub summary: TrialSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    /// Mean of the per-step MSE over the final quartile; `None` once diverged.
    pub steady_state_mse: Option<f64>,
    /// Largest per-sensor error norm over the run.
    pub max_error: Option<f64>,
    pub diverged: bool,
}

/// Mean over the last quarter of the slice (at least one element).
pub fn final_quartile_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let tail = &v[v.len() - (v.len() / 4).max(1)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn gaussian(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))
}

pub fn run_trial(p: &Prepared, gains: &GainSet, trial: usize) -> Result<TrialResult> {
    let s = &p.scenario;
    let n = p.sensors();
    let idx = trial as u64;

    let mut truth_rng = stream_rng(s.seed, Stream::TrialTruth, idx);
    let truth = generate_trajectory(&p.model, p.x0, s.steps, &s.target.maneuver, &mut truth_rng);

    let mut init_rng = stream_rng(s.seed, Stream::TrialInit, idx);
    let center = match s.init.center {
        InitCenter::Zero => Vector6::zeros(),
        InitCenter::Truth => p.x0.0,
    };
    let pos = gaussian(s.init.sigma_position)?;
    let vel = gaussian(s.init.sigma_velocity)?;
    let initial: Vec<Vector6<f64>> = (0..n)
        .map(|_| {
            let mut x = center;
            for r in 0..3 {
                x[r] += pos.sample(&mut init_rng);
            }
            for r in 3..6 {
                x[r] += vel.sample(&mut init_rng);
            }
            x
        })
        .collect();
    let initial_errors = initial.iter().map(|x| p.x0.0 - x).collect();

    let setup = FilterSetup {
        net: &p.net,
        profile: &p.profile,
        transition: p.model.transition(),
        measurement: &p.linear,
        gains,
    };
    let mut filter = DistributedFilter::new(&setup, &initial)?;
    let mut meas_rng = stream_rng(s.seed, Stream::TrialMeasurement, idx);
    let mut errors = Vec::with_capacity(s.steps);
    let mut mse = Vec::with_capacity(s.steps);
    let mut diverged = false;
    let mut max_error = 0.0f64;
    for x in &truth[1..] {
        if diverged {
            errors.push(vec![Vector6::repeat(f64::NAN); n]);
            mse.push(f64::NAN);
            continue;
        }
        let y: Vec<_> = (0..n)
            .map(|i| p.linear.measure_debiased(&x.position(), i, &mut meas_rng))
            .collect();
        filter.run_step(&y)?;
        let e: Vec<Vector6<f64>> = filter.posteriors().iter().map(|xh| x.0 - xh).collect();
        if e.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            diverged = true;
        } else {
            max_error = e.iter().map(|v| v.norm()).fold(max_error, f64::max);
        }
        mse.push(e.iter().map(|v| v.norm_squared()).sum::<f64>() / (6 * n) as f64);
        errors.push(e);
    }
    let steady = final_quartile_mean(&mse);
    Ok(TrialResult {
        trial,
        truth,
        initial_errors,
        errors,
        mse,
        summary: TrialSummary {
            trial,
            steady_state_mse: if diverged { None } else { finite(steady) },
            max_error: if diverged { None } else { Some(max_error) },
            diverged,
        },
    })
}

/// All trials plus their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub trials: Vec<TrialResult>,
    /// Per-step MSE averaged over trials, sensors, and states.
    pub mean_mse: Vec<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub steps: usize,
    pub sensors: usize,
    pub steady_state_mse: Option<f64>,
    pub final_mse: Option<f64>,
    pub max_error: Option<f64>,
    pub diverged_trials: Vec<usize>,
    pub per_trial: Vec<TrialSummary>,
}

impl MonteCarlo {
    pub fn from_trials(trials: Vec<TrialResult>, steps: usize, sensors: usize) -> Self {
        let mut mean_mse = vec![0.0; if trials.is_empty() { 0 } else { steps }];
        for t in &trials {
            for (m, v) in mean_mse.iter_mut().zip(&t.mse) {
                *m += v;
            }
        }
        for m in &mut mean_mse {
            *m /= trials.len() as f64;
        }
        let diverged_trials: Vec<usize> = trials
            .iter()
            .filter(|t| t.summary.diverged)
            .map(|t| t.trial)
            .collect();
        let ok = diverged_trials.is_empty();
        let max_error = trials
            .iter()
            .filter_map(|t| t.summary.max_error)
            .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))));
        let summary = Summary {
            trials: trials.len(),
            steps,
            sensors,
            steady_state_mse: (ok && !mean_mse.is_empty())
                .then(|| final_quartile_mean(&mean_mse))
                .and_then(finite),
            final_mse: mean_mse.last().copied().and_then(finite),
            max_error: if ok { max_error } else { None },
            diverged_trials,
            per_trial: trials.iter().map(|t| t.summary.clone()).collect(),
        };
        MonteCarlo {
            trials,
            mean_mse,
            summary,
        }
    }
}

pub fn run_monte_carlo(p: &Prepared, gains: &GainSet, mode: Execution) -> Result<MonteCarlo> {
    let s = &p.scenario;
    let trials = try_map_indexed(s.trials, mode, |t| run_trial(p, gains, t))?;
    Ok(MonteCarlo::from_trials(trials, s.steps, p.sensors()))
}

/// Serializable record of one `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: Scenario,
    pub analysis: Analysis,
    pub summary: Summary,
}

/// Prepare, resolve gains, analyze, and run every trial.
pub fn simulate(scenario: &Scenario, mode: Execution) -> Result<(Report, MonteCarlo)> {
    let p = Prepared::new(scenario)?;
    let resolved = p.resolve_gains()?;
    let analysis = p.analyze(&resolved)?;
    let mc = run_monte_carlo(&p, &resolved.gains, mode)?;
    let report = Report {
        config: p.scenario.clone(),
        analysis,
        summary: mc.summary.clone(),
    };
    Ok((report, mc))
}

/// Distance of each trial's network error from zero, `‖[e_1; …; e_N]‖`,
/// with the initial error first.
pub fn network_error_norms(t: &TrialResult) -> Vec<f64> {
    let norm = |es: &[Vector6<f64>]| es.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt();
    std::iter::once(norm(&t.initial_errors))
        .chain(t.errors.iter().map(|es| norm(es)))
        .collect()
}
