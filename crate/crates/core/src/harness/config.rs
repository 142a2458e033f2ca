//! Scenario documents (TOML). Every field has a default, and the resolved
//! scenario serializes back to the full effective configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::DesignOptions;
use crate::delay::DelayScheme;
use crate::dynamics::ManeuverMode;
use crate::error::{Error, Result};
use crate::network::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub steps: usize,
    pub trials: usize,
    pub network: NetworkSpec,
    pub target: TargetSpec,
    pub measurement: MeasurementSpec,
    pub delay: DelaySpec,
    pub gains: GainSpec,
    pub init: InitSpec,
    pub analysis: AnalysisSpec,
    pub baseline: BaselineSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            steps: 200,
            trials: 10,
            network: NetworkSpec::default(),
            target: TargetSpec::default(),
            measurement: MeasurementSpec::default(),
            delay: DelaySpec::default(),
            gains: GainSpec::default(),
            init: InitSpec::default(),
            analysis: AnalysisSpec::default(),
            baseline: BaselineSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Cycle,
    Complete,
    EdgeList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub topology: TopologyKind,
    pub sensors: usize,
    /// Undirected edges, used by `edge-list` only.
    pub edges: Vec<(usize, usize)>,
    /// Explicit sensor positions; empty means seeded uniform placement.
    pub positions: Vec<[f64; 3]>,
    pub placement_range: [f64; 2],
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            topology: TopologyKind::Cycle,
            sensors: 6,
            edges: Vec::new(),
            positions: Vec::new(),
            placement_range: [0.0, 10.0],
        }
    }
}

impl NetworkSpec {
    pub fn topology(&self) -> Topology {
        match self.topology {
            TopologyKind::Cycle => Topology::Cycle,
            TopologyKind::Complete => Topology::Complete,
            TopologyKind::EdgeList => Topology::EdgeList {
                edges: self.edges.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    pub period: f64,
    /// `Q = σ_q² I₃` unless `process_cov` is given.
    pub sigma_q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process_cov: Option<[[f64; 3]; 3]>,
    /// Empty means a seeded draw inside the placement range.
    pub initial_position: Vec<f64>,
    pub initial_velocity: [f64; 3],
    pub maneuver: ManeuverMode,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            period: 1.0,
            sigma_q: 0.01,
            process_cov: None,
            initial_position: Vec::new(),
            initial_velocity: [0.1, 0.1, 0.0],
            maneuver: ManeuverMode::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementSpec {
    /// Standard deviation of each TDOA row.
    pub sigma_r: f64,
}

impl Default for MeasurementSpec {
    fn default() -> Self {
        MeasurementSpec { sigma_r: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Constant,
    UniformRandom,
    PerLink,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySpec {
    pub scheme: SchemeKind,
    pub tau_bar: i64,
    /// Directions of a link get independent delays.
    pub asymmetric: bool,
    /// `(i, j, τ)` triples for `per-link`.
    pub links: Vec<(usize, usize, i64)>,
}

impl Default for DelaySpec {
    fn default() -> Self {
        DelaySpec {
            scheme: SchemeKind::UniformRandom,
            tau_bar: 0,
            asymmetric: false,
            links: Vec::new(),
        }
    }
}

impl DelaySpec {
    pub fn scheme(&self) -> DelayScheme {
        let asymmetric = self.asymmetric;
        match self.scheme {
            SchemeKind::Constant => DelayScheme::Constant,
            SchemeKind::UniformRandom => DelayScheme::UniformRandom { asymmetric },
            SchemeKind::PerLink => DelayScheme::PerLink {
                links: self.links.clone(),
                asymmetric,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    Designed,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSpec {
    pub mode: GainMode,
    /// Supplied gains: one row-major 6x6 block (36 numbers) per sensor.
    pub blocks: Vec<Vec<f64>>,
    /// Design against the scenario's own delay profile as well as the
    /// delay-free loop.
    pub include_profile: bool,
    /// Extra uniform delays to design against.
    pub robust_uniform: Vec<usize>,
    pub design: DesignOptions,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec {
            mode: GainMode::Designed,
            blocks: Vec::new(),
            include_profile: true,
            robust_uniform: Vec::new(),
            design: DesignOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitCenter {
    /// Estimates start at the zero state.
    Zero,
    /// Estimates start at the true initial state.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub center: InitCenter,
    /// Per-node Gaussian perturbation of the initial position estimate.
    pub sigma_position: f64,
    pub sigma_velocity: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            center: InitCenter::Zero,
            sigma_position: 0.0,
            sigma_velocity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Cap for the delay bound search.
    pub bound_cap: i64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec { bound_cap: 20 }
    }
}

/// Centralized filter comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Initial estimate error, position and velocity standard deviations.
    pub init_sigma_position: f64,
    pub init_sigma_velocity: f64,
    /// Floor on the measurement deviation the filters assume, so that
    /// noise-free scenarios still have an invertible innovation covariance.
    pub min_filter_sigma: f64,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            init_sigma_position: 5.0,
            init_sigma_velocity: 0.5,
            min_filter_sigma: 1e-3,
        }
    }
}

/// Command-line overrides, applied before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub tau_bar: Option<i64>,
}

impl Scenario {
    pub fn from_toml_str(doc: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(doc).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&doc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.trials {
            self.trials = t;
        }
        if let Some(t) = o.tau_bar {
            self.delay.tau_bar = t;
        }
        self.validate()?;
        Ok(self)
    }

    /// Field-level checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.steps < 1 {
            return bad("steps", "must be at least 1".into());
        }
        if self.trials < 1 {
            return bad("trials", "must be at least 1".into());
        }
        let n = self.network.sensors;
        if n < 2 {
            return bad(
                "network.sensors",
                format!("need at least 2 sensors, got {n}"),
            );
        }
        if self.network.topology == TopologyKind::EdgeList {
            if let Some(&(a, b)) = self
                .network
                .edges
                .iter()
                .find(|&&(a, b)| a >= n || b >= n || a == b)
            {
                return bad("network.edges", format!("invalid edge ({a}, {b})"));
            }
        }
        if !self.network.positions.is_empty() && self.network.positions.len() != n {
            return bad(
                "network.positions",
                format!("{} positions for {n} sensors", self.network.positions.len()),
            );
        }
        if self
            .network
            .positions
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return bad("network.positions", "non-finite coordinate".into());
        }
        let [lo, hi] = self.network.placement_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(
                "network.placement_range",
                format!("need lo < hi, got [{lo}, {hi}]"),
            );
        }
        let t = &self.target;
        if !(t.period.is_finite() && t.period > 0.0) {
            return bad("target.period", format!("must be > 0, got {}", t.period));
        }
        if !(t.sigma_q.is_finite() && t.sigma_q >= 0.0) {
            return bad("target.sigma_q", format!("must be >= 0, got {}", t.sigma_q));
        }
        if let Some(q) = &t.process_cov {
            if q.iter().flatten().any(|v| !v.is_finite()) {
                return bad("target.process_cov", "non-finite entry".into());
            }
        }
        if !t.initial_position.is_empty() && t.initial_position.len() != 3 {
            return bad(
                "target.initial_position",
                "needs 3 coordinates or none".into(),
            );
        }
        if t.initial_position
            .iter()
            .chain(&t.initial_velocity)
            .any(|v| !v.is_finite())
        {
            return bad("target.initial_position", "non-finite value".into());
        }
        let r = self.measurement.sigma_r;
        if !(r.is_finite() && r >= 0.0) {
            return bad("measurement.sigma_r", format!("must be >= 0, got {r}"));
        }
        if self.delay.tau_bar < 0 {
            return bad(
                "delay.tau_bar",
                format!("must be >= 0, got {}", self.delay.tau_bar),
            );
        }
        if self.delay.scheme == SchemeKind::PerLink {
            if let Some(&(i, j, d)) = self
                .delay
                .links
                .iter()
                .find(|l| l.2 < 0 || l.2 > self.delay.tau_bar)
            {
                return bad(
                    "delay.links",
                    format!("delay {d} on ({i}, {j}) outside [0, tau_bar]"),
                );
            }
        }
        let g = &self.gains;
        if g.mode == GainMode::Supplied {
            if g.blocks.len() != n {
                return bad(
                    "gains.blocks",
                    format!("{} blocks for {n} sensors", g.blocks.len()),
                );
            }
            if let Some(i) = g
                .blocks
                .iter()
                .position(|b| b.len() != 36 || b.iter().any(|v| !v.is_finite()))
            {
                return bad("gains.blocks", format!("block {i} needs 36 finite numbers"));
            }
        }
        let d = &g.design;
        if !(0.0..1.0).contains(&d.margin) {
            return bad(
                "gains.design.margin",
                format!("must lie in [0, 1), got {}", d.margin),
            );
        }
        if d.top_k == 0 {
            return bad("gains.design.top_k", "must be positive".into());
        }
        if d.sharpness.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return bad(
                "gains.design.sharpness",
                "exponents must be finite and >= 1".into(),
            );
        }
        if d.certify_bound.is_some_and(|c| c < 0) {
            return bad("gains.design.certify_bound", "must be >= 0".into());
        }
        let i = &self.init;
        if !(i.sigma_position >= 0.0 && i.sigma_velocity >= 0.0)
            || !(i.sigma_position + i.sigma_velocity).is_finite()
        {
            return bad(
                "init",
                "perturbation deviations must be finite and >= 0".into(),
            );
        }
        if self.analysis.bound_cap < 0 {
            return bad(
                "analysis.bound_cap",
                format!("must be >= 0, got {}", self.analysis.bound_cap),
            );
        }
        let b = &self.baseline;
        if !(b.min_filter_sigma.is_finite() && b.min_filter_sigma > 0.0) {
            return bad("baseline.min_filter_sigma", "must be > 0".into());
        }
        if !(b.init_sigma_position >= 0.0 && b.init_sigma_velocity >= 0.0)
            || !(b.init_sigma_position + b.init_sigma_velocity).is_finite()
        {
            return bad(
                "baseline",
                "initial deviations must be finite and >= 0".into(),
            );
        }
        Ok(())
    }
}
