//! Centralized filter comparison between the linear and the range-difference
//! measurement models, on the scenario's geometry.

use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::Scenario;
use super::output::{ensure_dir, write_json, write_trajectory};
use super::run::{stream_rng, Prepared, Stream};
use crate::baseline::{
    kf_linear_tdoa_run, kf_nonlinear_tdoa_run, BaselineInputs, KalmanState, KfRun, PositionSource,
};
use crate::dynamics::generate_trajectory;
use crate::error::{Error, Result};
use crate::measurement::NonlinearTdoaModel;
use crate::par::{try_map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineModel {
    Linear,
    NonlinearTrue,
    NonlinearEstimated,
}

impl BaselineModel {
    pub const ALL: [BaselineModel; 3] = [
        BaselineModel::Linear,
        BaselineModel::NonlinearTrue,
        BaselineModel::NonlinearEstimated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineModel::Linear => "linear",
            BaselineModel::NonlinearTrue => "nonlinear-true",
            BaselineModel::NonlinearEstimated => "nonlinear-estimated",
        }
    }
}

/// Runs of all three models on one trial, sharing truth, initial estimate,
/// and measurement noise seed.
#[derive(Debug, Clone)]
pub struct ComparisonTrial {
    pub trial: usize,
    pub runs: Vec<(BaselineModel, KfRun)>,
}

impl ComparisonTrial {
    pub fn run(&self, model: BaselineModel) -> &KfRun {
        &self
            .runs
            .iter()
            .find(|(m, _)| *m == model)
            .expect("every model is run")
            .1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: BaselineModel,
    /// Final-quarter MSE per trial; `None` for non-finite runs.
    pub steady_state_mse: Vec<Option<f64>>,
    pub mean_steady_state_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: Scenario,
    pub filter_sigma: f64,
    pub models: Vec<ModelSummary>,
    /// Trials where the linear model's steady-state MSE is no larger than
    /// the estimated-position range-difference model's.
    pub linear_not_worse: usize,
    pub trials: usize,
}

pub fn compare_trial(
    p: &Prepared,
    nonlinear: &NonlinearTdoaModel,
    trial: usize,
) -> Result<ComparisonTrial> {
    let s = &p.scenario;
    let idx = trial as u64;
    let mut truth_rng = stream_rng(s.seed, Stream::BaselineTruth, idx);
    let truth = generate_trajectory(&p.model, p.x0, s.steps, &s.target.maneuver, &mut truth_rng);

    let b = &s.baseline;
    let mut init_rng = stream_rng(s.seed, Stream::BaselineInit, idx);
    let pos = Normal::new(0.0, b.init_sigma_position).map_err(|e| Error::param(e.to_string()))?;
    let vel = Normal::new(0.0, b.init_sigma_velocity).map_err(|e| Error::param(e.to_string()))?;
    let mut est = p.x0.0;
    for r in 0..6 {
        est[r] += if r < 3 {
            pos.sample(&mut init_rng)
        } else {
            vel.sample(&mut init_rng)
        };
    }
    let (sp, sv) = (b.init_sigma_position.powi(2), b.init_sigma_velocity.powi(2));
    let cov = Matrix6::from_diagonal(&Vector6::new(sp, sp, sp, sv, sv, sv));
    let inputs = BaselineInputs {
        model: &p.model,
        linear: &p.linear,
        nonlinear,
        truth: &truth,
        init: KalmanState::new(est, cov)?,
        filter_sigma: filter_sigma(s),
    };
    let runs = BaselineModel::ALL
        .iter()
        .map(|&m| {
            let mut rng = stream_rng(s.seed, Stream::BaselineMeasurement, idx);
            let run = match m {
                BaselineModel::Linear => kf_linear_tdoa_run(&inputs, &mut rng),
                BaselineModel::NonlinearTrue => {
                    kf_nonlinear_tdoa_run(&inputs, PositionSource::True, &mut rng)
                }
                BaselineModel::NonlinearEstimated => {
                    kf_nonlinear_tdoa_run(&inputs, PositionSource::Estimated, &mut rng)
                }
            }?;
            Ok((m, run))
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonTrial { trial, runs })
}

/// Measurement deviation the filters assume.
pub fn filter_sigma(s: &Scenario) -> f64 {
    s.measurement.sigma_r.max(s.baseline.min_filter_sigma)
}

pub fn compare_models(
    scenario: &Scenario,
    mode: Execution,
) -> Result<(CompareReport, Vec<ComparisonTrial>)> {
    let p = Prepared::new(scenario)?;
    let nonlinear = NonlinearTdoaModel::new(&p.net, scenario.measurement.sigma_r)?;
    let trials = try_map_indexed(scenario.trials, mode, |t| compare_trial(&p, &nonlinear, t))?;
    let steady = |m: BaselineModel| -> Vec<Option<f64>> {
        trials
            .iter()
            .map(|t| Some(t.run(m).steady_state_mse()).filter(|v| v.is_finite()))
            .collect()
    };
    let models: Vec<ModelSummary> = BaselineModel::ALL
        .iter()
        .map(|&m| {
            let v = steady(m);
            let mean = v
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            ModelSummary {
                model: m,
                steady_state_mse: v,
                mean_steady_state_mse: mean,
            }
        })
        .collect();
    let lin = &models[0].steady_state_mse;
    let est = &models[2].steady_state_mse;
    let linear_not_worse = lin
        .iter()
        .zip(est)
        .filter(|(l, e)| match (l, e) {
            (Some(l), Some(e)) => l <= e,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let report = CompareReport {
        config: p.scenario.clone(),
        filter_sigma: filter_sigma(scenario),
        models,
        linear_not_worse,
        trials: trials.len(),
    };
    Ok((report, trials))
}

/// `compare.csv`, one trajectory file per model (sensor column is 0), and
/// `report.json`.
pub fn emit_comparison(
    report: &CompareReport,
    trials: &[ComparisonTrial],
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    for m in BaselineModel::ALL {
        let per_trial: Vec<Vec<Vec<Vector6<f64>>>> = trials
            .iter()
            .map(|t| t.run(m).errors[1..].iter().map(|e| vec![*e]).collect())
            .collect();
        let rows: Vec<(usize, &[Vec<Vector6<f64>>])> = trials
            .iter()
            .zip(&per_trial)
            .map(|(t, e)| (t.trial, e.as_slice()))
            .collect();
        write_trajectory(&out_dir.join(format!("trajectory_{}.csv", m.name())), &rows)?;
    }
    let path = out_dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let io = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(["trial", "model", "steady_state_mse"])
        .map_err(io)?;
    for (t, trial) in trials.iter().enumerate() {
        for m in &report.models {
            let v = m.steady_state_mse[t].map_or("NaN".to_string(), |v| v.to_string());
            w.write_record([trial.trial.to_string(), m.model.name().to_string(), v])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_json(&out_dir.join("report.json"), report)
}
