//! Study configuration and its fail-closed validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use kac_core::alip::TestFunction;
use kac_core::chaos::default_tail_delta;
use kac_core::rates::{delta_bar, vonbahr_min_n};
use kac_core::rescaled::{DEFAULT_CONDITIONED_CAP, DEFAULT_RADIAL_NODES};
use kac_core::{DensityModel, DensitySpec};
use serde::{Deserialize, Serialize};

pub const DEFAULT_GRID: [usize; 9] = [4, 8, 16, 32, 64, 128, 256, 512, 1024];
pub const DEFAULT_FISHER_CAP: usize = 128;
pub const MIN_MONTE_CARLO_SAMPLES: usize = 1000;

/// A measurement taken at every grid point of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    W2,
    Wr { r: f64 },
    L1K1,
    Entropy,
    EntropyGap,
    Fisher,
    FisherN2,
    ConditionedEntropy,
    TailProb {
        k: usize,
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    AlipDistortion { function: TestFunction, q: f64, u: f64 },
}

impl Metric {
    /// The identifier used in the CSV `metric` column and by `plot --metric`.
    pub fn id(&self) -> String {
        match self {
            Metric::W2 => "w2".into(),
            Metric::Wr { r } => format!("wr(r={r})"),
            Metric::L1K1 => "l1_k1".into(),
            Metric::Entropy => "entropy".into(),
            Metric::EntropyGap => "entropy_gap".into(),
            Metric::Fisher => "fisher".into(),
            Metric::FisherN2 => "fisher_n2".into(),
            Metric::ConditionedEntropy => "conditioned_entropy".into(),
            Metric::TailProb { k, q, .. } => format!("tail_prob(k={k},q={q})"),
            Metric::AlipDistortion { function, q, u } => format!("alip_distortion({},q={q},u={u})", function.name()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Metric::W2 => "w2",
            Metric::Wr { .. } => "wr",
            Metric::L1K1 => "l1_k1",
            Metric::Entropy => "entropy",
            Metric::EntropyGap => "entropy_gap",
            Metric::Fisher => "fisher",
            Metric::FisherN2 => "fisher_n2",
            Metric::ConditionedEntropy => "conditioned_entropy",
            Metric::TailProb { .. } => "tail_prob",
            Metric::AlipDistortion { .. } => "alip_distortion",
        }
    }

    /// Whether the estimate is a Monte Carlo average over `samples` draws.
    pub fn monte_carlo(&self) -> bool {
        !matches!(self, Metric::FisherN2 | Metric::AlipDistortion { .. } | Metric::L1K1)
    }

    /// Measured once at `N = 2` rather than over the grid.
    pub fn fixed_dimension(&self) -> Option<usize> {
        match self {
            Metric::FisherN2 => Some(2),
            _ => None,
        }
    }
}

/// A metric as written in a config file: a bare name or a tagged object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricEntry {
    Name(String),
    Full(Metric),
}

impl MetricEntry {
    fn resolve(&self) -> Result<Metric, ConfigError> {
        match self {
            MetricEntry::Full(m) => Ok(m.clone()),
            MetricEntry::Name(name) => match name.as_str() {
                "w2" => Ok(Metric::W2),
                "l1_k1" => Ok(Metric::L1K1),
                "entropy" => Ok(Metric::Entropy),
                "entropy_gap" => Ok(Metric::EntropyGap),
                "fisher" => Ok(Metric::Fisher),
                "fisher_n2" => Ok(Metric::FisherN2),
                "conditioned_entropy" => Ok(Metric::ConditionedEntropy),
                "wr" | "tail_prob" | "alip_distortion" => Err(ConfigError::field(
                    "metrics",
                    format!("`{name}` needs parameters; write it as {{\"metric\": \"{name}\", ...}}"),
                )),
                other => Err(ConfigError::field("metrics", format!("unknown metric `{other}`"))),
            },
        }
    }
}

/// Quadrature resolution per estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Gauss-Legendre nodes over `(−√N, √N)` for the L¹ marginal distance.
    pub l1_nodes: usize,
    /// Radial nodes of the spherical density kernel.
    pub radial_nodes: usize,
    /// Angular nodes of the `N = 2` Fisher information.
    pub circle_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            l1_nodes: 1024,
            radial_nodes: DEFAULT_RADIAL_NODES,
            circle_nodes: 256,
        }
    }
}

fn default_grid() -> Vec<usize> {
    DEFAULT_GRID.to_vec()
}
fn default_samples() -> usize {
    10_000
}
fn default_mixture_draws() -> usize {
    20_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study_id: String,
    pub density: DensitySpec,
    pub metrics: Vec<MetricEntry>,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_mixture_draws")]
    pub mixture_draws: usize,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Largest `N` per metric kind; grid points above it are skipped.
    #[serde(default)]
    pub caps: BTreeMap<String, usize>,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A rejected configuration: the offending field and why.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    fn field(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.reason)
    }
}

/// A configuration that passed validation, with the density and metrics resolved.
#[derive(Debug, Clone)]
pub struct ValidatedStudy {
    pub config: StudyConfig,
    pub base: DensityModel,
    pub metrics: Vec<Metric>,
}

impl ValidatedStudy {
    pub fn cap(&self, metric: &Metric) -> usize {
        if let Some(&c) = self.config.caps.get(metric.kind()) {
            return c;
        }
        match metric {
            Metric::ConditionedEntropy => DEFAULT_CONDITIONED_CAP,
            Metric::Fisher => DEFAULT_FISHER_CAP,
            _ => usize::MAX,
        }
    }

    /// Grid points measured for `metric`, after caps.
    pub fn grid_for(&self, metric: &Metric) -> Vec<usize> {
        if let Some(n) = metric.fixed_dimension() {
            return vec![n];
        }
        let cap = self.cap(metric);
        self.config.n_grid.iter().copied().filter(|&n| n <= cap).collect()
    }
}

fn require(cond: bool, metric: &Metric, tag: &str, reason: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::field(
            "metrics",
            format!("{} [{tag}]: {}", metric.id(), reason.into()),
        ))
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::field("<document>", e.to_string()))
    }

    /// Check every invariant and every estimator precondition before any
    /// computation.
    pub fn validate(&self) -> Result<ValidatedStudy, ConfigError> {
        if self.study_id.is_empty() || self.study_id.contains(['/', '\\', '\n', '\r']) {
            return Err(ConfigError::field("study_id", "must be non-empty and usable as a file name"));
        }
        if self.n_grid.is_empty() {
            return Err(ConfigError::field("n_grid", "must not be empty"));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(ConfigError::field("n_grid", format!("every N must be >= 2, found {n}")));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::field("n_grid", "must be strictly increasing"));
        }
        if self.metrics.is_empty() {
            return Err(ConfigError::field("metrics", "must not be empty"));
        }
        let q = self.quadrature;
        if q.l1_nodes < 32 || q.l1_nodes % 32 != 0 {
            return Err(ConfigError::field("quadrature.l1_nodes", "must be a positive multiple of 32"));
        }
        if q.radial_nodes < 8 {
            return Err(ConfigError::field("quadrature.radial_nodes", "must be at least 8"));
        }
        if q.circle_nodes < 8 || q.circle_nodes % 2 != 0 {
            return Err(ConfigError::field("quadrature.circle_nodes", "must be even and at least 8"));
        }
        if self.mixture_draws < 2 {
            return Err(ConfigError::field("mixture_draws", "must be at least 2"));
        }
        let base = DensityModel::from_spec(&self.density).map_err(|e| ConfigError::field("density", e.to_string()))?;
        let metrics = self.metrics.iter().map(MetricEntry::resolve).collect::<Result<Vec<_>, _>>()?;
        let mut ids: Vec<String> = metrics.iter().map(Metric::id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::field("metrics", "lists the same metric twice"));
        }
        for (kind, &cap) in &self.caps {
            if cap < 2 {
                return Err(ConfigError::field("caps", format!("cap for `{kind}` must be >= 2")));
            }
        }
        if metrics.iter().any(Metric::monte_carlo) && self.samples < MIN_MONTE_CARLO_SAMPLES {
            return Err(ConfigError::field(
                "samples",
                format!("Monte Carlo metrics need at least {MIN_MONTE_CARLO_SAMPLES} samples, got {}", self.samples),
            ));
        }
        let study = ValidatedStudy {
            config: self.clone(),
            base,
            metrics,
        };
        for m in &study.metrics {
            check_metric(&study, m)?;
        }
        Ok(study)
    }
}

fn check_metric(study: &ValidatedStudy, m: &Metric) -> Result<(), ConfigError> {
    let base = &study.base;
    let p = base.moment_order();
    let unit = base.unit_energy();
    match m {
        Metric::W2 => {
            require(unit, m, "W2 rescaled-tensor bound", "base must have unit energy E X² = 1")?;
            require(p > 2.0, m, "W2 rescaled-tensor bound", format!("needs a moment of order p > 2, base has p = {p}"))
        }
        Metric::Wr { r } => {
            require(*r >= 2.0 && r.is_finite(), m, "Wr rescaled-tensor bound", format!("needs r >= 2, got {r}"))?;
            require(*r < p, m, "Wr rescaled-tensor bound", format!("needs a moment of order above r = {r}, base has p = {p}"))
        }
        Metric::L1K1 => {
            require(unit, m, "L1 marginal bound", "base must have unit energy E X² = 1")?;
            require(p > 2.0, m, "L1 marginal bound", format!("needs a moment of order 2 + delta, base has p = {p}"))
        }
        Metric::Entropy | Metric::EntropyGap => {
            require(unit, m, "entropic chaos bound", "base must have unit energy E X² = 1")?;
            require(p > 4.0, m, "entropic chaos bound", format!("needs a moment of order k > 4, base has p = {p}"))?;
            require(
                base.rel_entropy_gaussian().is_ok_and(|h| h.value.is_finite()),
                m,
                "entropic chaos bound",
                "needs finite H(f|γ): quadrature check failed",
            )
        }
        Metric::Fisher | Metric::FisherN2 => {
            let finite = base.differentiable() && base.rel_fisher_gaussian().is_ok_and(|i| i.value.is_finite());
            require(
                finite,
                m,
                "Fisher information inequality",
                "fisher requires differentiable base with finite I(f|γ): quadrature check failed",
            )?;
            require(unit, m, "Fisher information inequality", "base must have unit energy E X² = 1")
        }
        Metric::ConditionedEntropy => {
            require(p > 4.0, m, "conditioned-state entropy rate", format!("needs a moment of order 4 + r, r > 0; base has p = {p}"))
        }
        Metric::TailProb { k, q, delta } => {
            let tag = "von Bahr-Esseen tail bound";
            require(*k >= 1, m, tag, "needs k >= 1")?;
            require(*q > 0.0 && *q < 1.0, m, tag, format!("needs q in (0, 1), got {q}"))?;
            let d = delta_bar(delta.unwrap_or_else(|| default_tail_delta(base)));
            require(d > 0.0 && 2.0 + d < p, m, tag, format!("needs a moment of order 2 + {d}, base has p = {p}"))?;
            let n_min = vonbahr_min_n(*k, *q, base.second_moment()).map_err(|e| ConfigError::field("metrics", e.to_string()))?;
            match study.grid_for(m).iter().find(|&&n| (n as f64) < n_min) {
                Some(n) => require(false, m, tag, format!("needs N >= {n_min:.3}, grid contains {n}")),
                None => Ok(()),
            }
        }
        Metric::AlipDistortion { function, q, u } => {
            let tag = "rescaled-marginal distortion bound";
            if let TestFunction::GaussianProduct { k } = function {
                require((1..=2).contains(k), m, tag, format!("Gaussian test functions need k in {{1, 2}}, got {k}"))?;
            }
            if let TestFunction::SmoothedIndicator { width } = function {
                require(*width > 0.0 && *width < 1.0, m, tag, format!("needs smoothing width in (0, 1), got {width}"))?;
            }
            require(*q > 0.0 && *q < 1.0, m, tag, format!("needs q in (0, 1), got {q}"))?;
            require(*u > -1.0 && *u < 1.0, m, tag, format!("needs u in (-1, 1), got {u}"))
        }
    }
}
