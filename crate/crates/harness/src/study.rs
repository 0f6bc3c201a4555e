//! Executing a validated study: one cell per (metric, N), bounds, slope fits
//! and the audit trail.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kac_core::alip::{distortion_l1, Deformation};
use kac_core::chaos::{
    conditioned_entropy_per_particle, default_tail_delta, entropy_estimates, fisher_n2_exact, fisher_per_particle,
    l1_marginal_distance, tail_probability_check, w2_coupling_estimate, wr_coupling_estimate,
};
use kac_core::rates::{conditioned_rate, entropic_rate, l1_rate, w2_rate, wr_rate, Constant, RatePrediction, Shape};
use kac_core::rescaled::{ConditionedState, RescaledLaw, SphericalDensityKernel};
use kac_core::stats::{fit_loglog, LineFit};
use kac_core::{EstimateWithError, StreamKey};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Metric, StudyConfig, ValidatedStudy};
use crate::output::{write_atomic, OutputError};

/// Standard errors allowed between an estimate and its bound before a
/// violation is flagged.
pub const VIOLATION_SIGMAS: f64 = 3.0;

pub const CSV_HEADER: &str = "study_id,metric,N,estimate,stderr,method,samples,seed,bound,violation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// The estimate should stay below the bound.
    Upper,
    /// The estimate should stay above the bound.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub side: BoundSide,
    pub source: String,
}

impl Bound {
    fn upper(value: f64, source: &str) -> Self {
        Self {
            value,
            side: BoundSide::Upper,
            source: source.into(),
        }
    }

    fn violated_by(&self, e: &EstimateWithError) -> bool {
        let slack = VIOLATION_SIGMAS * e.total_error();
        match self.side {
            BoundSide::Upper => e.value - slack > self.value,
            BoundSide::Lower => e.value + slack < self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub metric: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub estimate: EstimateWithError,
    pub bound: Option<Bound>,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub metric: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub metric: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub reason: String,
}

/// Fitted log-log slope of one metric beside the predicted bound exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub metric: String,
    pub fit: Option<LineFit>,
    pub refusal: Option<String>,
    /// Slope of the predicted bound shape, `−exponent`.
    pub predicted_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub metric: String,
    pub prediction: RatePrediction,
}

/// Catalog functionals used as references, and how randomness was keyed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub base: String,
    pub rel_entropy: Option<EstimateWithError>,
    pub rel_fisher: Option<EstimateWithError>,
    pub second_moment: f64,
    pub fourth_moment: Option<EstimateWithError>,
    /// `None` when every moment is finite.
    pub moment_order: Option<f64>,
    pub master_seed: u64,
    pub rng: String,
    pub workers: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study_id: String,
    pub config: StudyConfig,
    pub cells: Vec<CellResult>,
    pub errors: Vec<CellError>,
    pub skipped: Vec<SkippedCell>,
    pub slopes: Vec<SlopeRow>,
    pub predictions: Vec<PredictionRow>,
    pub audit: Audit,
    pub violation: bool,
}

impl StudyResult {
    /// A bound was violated or an estimator failed.
    pub fn failed(&self) -> bool {
        self.violation || !self.errors.is_empty()
    }

    pub fn cells_for<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.metric == metric)
    }

    /// The CSV table, header included.
    pub fn to_csv(&self) -> Result<Vec<u8>, OutputError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(','))?;
        for c in &self.cells {
            w.serialize(CsvRow {
                study_id: &self.study_id,
                metric: &c.metric,
                n: c.n,
                estimate: c.estimate.value,
                stderr: c.estimate.total_error(),
                method: c.estimate.method.as_str(),
                samples: c.estimate.samples,
                seed: c.seed,
                bound: c.bound.as_ref().map(|b| b.value),
                violation: c.violation,
            })?;
        }
        w.into_inner().map_err(|e| OutputError::Io(e.into_error()))
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    study_id: &'a str,
    metric: &'a str,
    n: usize,
    estimate: f64,
    /// Standard error plus deterministic error bound.
    stderr: f64,
    method: &'a str,
    samples: u64,
    seed: u64,
    bound: Option<f64>,
    violation: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Seed of cell `(metric, N)` derived from the master seed.
pub fn cell_seed(master: u64, label: &str, n: usize) -> u64 {
    StreamKey::new(master).label(label).index(n as u64).derive_seed()
}

struct Measured {
    estimate: EstimateWithError,
    bound: Option<Bound>,
}

enum Job {
    Single { metric: usize, n: usize },
    /// Per-particle entropy and the entropy gap from shared draws.
    EntropyPair { entropy: usize, gap: usize, n: usize },
}

fn jobs(study: &ValidatedStudy) -> (Vec<Job>, Vec<SkippedCell>) {
    let find = |m: &Metric| study.metrics.iter().position(|x| x == m);
    let (entropy, gap) = (find(&Metric::Entropy), find(&Metric::EntropyGap));
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, m) in study.metrics.iter().enumerate() {
        let grid = study.grid_for(m);
        for &n in study.config.n_grid.iter().filter(|n| !grid.contains(n) && m.fixed_dimension().is_none()) {
            skipped.push(SkippedCell {
                metric: m.id(),
                n,
                reason: format!("above the cap {} for {}", study.cap(m), m.kind()),
            });
        }
        for n in grid {
            match (m, entropy, gap) {
                (Metric::EntropyGap, Some(e), Some(_)) if study.grid_for(&study.metrics[e]).contains(&n) => {}
                (Metric::Entropy, Some(e), Some(g)) if study.grid_for(&study.metrics[g]).contains(&n) => {
                    out.push(Job::EntropyPair { entropy: e, gap: g, n })
                }
                _ => out.push(Job::Single { metric: i, n }),
            }
        }
    }
    (out, skipped)
}

struct References {
    h: Option<f64>,
    i: Option<f64>,
}

fn measure(study: &ValidatedStudy, refs: &References, m: &Metric, n: usize, seed: u64) -> kac_core::Result<Measured> {
    let base = &study.base;
    let cfg = &study.config;
    let law = || RescaledLaw::new(base.clone(), n);
    let kernel = || SphericalDensityKernel::with_nodes(base.clone(), n, cfg.quadrature.radial_nodes);
    let plain = |estimate| Measured { estimate, bound: None };
    Ok(match m {
        Metric::W2 => plain(w2_coupling_estimate(&law()?, cfg.samples, seed)?),
        Metric::Wr { r } => plain(wr_coupling_estimate(&law()?, *r, cfg.samples, seed)?),
        Metric::L1K1 => plain(l1_marginal_distance(&law()?, cfg.mixture_draws, cfg.quadrature.l1_nodes, seed)?),
        Metric::Entropy | Metric::EntropyGap => {
            let e = entropy_estimates(&kernel()?, cfg.samples, seed)?;
            entropy_cell(m, &e, refs)
        }
        Metric::Fisher => Measured {
            estimate: fisher_per_particle(&kernel()?, cfg.samples, seed)?,
            bound: refs.i.map(|i| Bound::upper((1.0 - 1.0 / n as f64) * i, "(1 - 1/N) I(f|γ)")),
        },
        Metric::FisherN2 => Measured {
            estimate: fisher_n2_exact(base, cfg.quadrature.circle_nodes)?,
            bound: refs.i.map(|i| Bound::upper(0.5 * i, "I(f|γ) / 2")),
        },
        Metric::ConditionedEntropy => {
            let state = ConditionedState::new(base.clone(), n, study.cap(m))?;
            plain(conditioned_entropy_per_particle(&state, cfg.samples, seed)?.0)
        }
        Metric::TailProb { k, q, delta } => {
            let d = delta.unwrap_or_else(|| default_tail_delta(base));
            let c = tail_probability_check(base, n, *k, *q, d, cfg.samples, seed)?;
            Measured {
                estimate: c.empirical,
                bound: Some(Bound::upper(c.bound, "16 N^(-(δ/2 - (1 + δ/2) q)) E|X|^(2+δ)")),
            }
        }
        Metric::AlipDistortion { function, q, u } => {
            let map = Deformation::PsiInverse {
                n: n as f64,
                q: *q,
                u: *u,
                k: function.dim(),
            };
            let d = distortion_l1(function, &map)?;
            Measured {
                estimate: d.measured,
                bound: Some(Bound::upper(d.bound, "almost-Lipschitz perturbation bound")),
            }
        }
    })
}

fn entropy_cell(m: &Metric, e: &kac_core::chaos::EntropyEstimates, refs: &References) -> Measured {
    if *m == Metric::EntropyGap {
        Measured {
            estimate: e.gap,
            bound: Some(Bound {
                value: 0.0,
                side: BoundSide::Lower,
                source: "H(f|γ) - (1/N) H(f^N|σ^N) >= 0".into(),
            }),
        }
    } else {
        Measured {
            estimate: e.per_particle,
            bound: refs.h.map(|h| Bound::upper(h, "H(f|γ)")),
        }
    }
}

/// Rate prediction compared against the fitted slope of `m`, if any.
pub fn prediction_for(base: &kac_core::DensityModel, m: &Metric) -> Option<RatePrediction> {
    let p = base.moment_order();
    match m {
        Metric::W2 => w2_rate(p).ok(),
        Metric::Wr { r } if *r == 2.0 => w2_rate(p).ok(),
        Metric::Wr { r } => wr_rate(p, *r).ok().map(|(_, pred)| pred),
        Metric::L1K1 => {
            let alip_r = if base.differentiable() { 0.0 } else { 1.0 };
            l1_rate(1, default_tail_delta(base).min(2.0), alip_r).ok()
        }
        Metric::EntropyGap => entropic_rate(p).ok().map(|e| RatePrediction {
            bound: "entropic_chaos".into(),
            shape: Shape::power(e.effective()),
            constant: Constant::Unknown,
            strict: e.strict,
            validity: format!("unit energy, finite moment of order k = {p} > 4"),
        }),
        Metric::ConditionedEntropy if p.is_finite() => conditioned_rate(p - 4.0).ok(),
        _ => None,
    }
}

fn audit(study: &ValidatedStudy) -> Audit {
    let base = &study.base;
    let p = base.moment_order();
    Audit {
        base: base.name(),
        rel_entropy: base.rel_entropy_gaussian().ok(),
        rel_fisher: base.rel_fisher_gaussian().ok(),
        second_moment: base.second_moment(),
        fourth_moment: base.moment(4.0).ok().filter(|e| e.value.is_finite()),
        moment_order: p.is_finite().then_some(p),
        master_seed: study.config.seed,
        rng: "ChaCha8 stream per sample; key derived from (master seed, metric id, N), stream index = sample index".into(),
        workers: rayon::current_num_threads(),
        wall_clock_seconds: 0.0,
    }
}

/// Run every cell of a validated study in the current rayon pool.
pub fn execute(study: &ValidatedStudy) -> StudyResult {
    let start = Instant::now();
    let audit = audit(study);
    let refs = References {
        h: audit.rel_entropy.map(|e| e.value),
        i: audit.rel_fisher.map(|e| e.value),
    };
    let master = study.config.seed;
    let (jobs, skipped) = jobs(study);
    let outcomes: Vec<Vec<(usize, usize, u64, kac_core::Result<Measured>)>> = jobs
        .par_iter()
        .map(|job| match *job {
            Job::Single { metric, n } => {
                let m = &study.metrics[metric];
                let seed = cell_seed(master, &m.id(), n);
                info!("{} N={n}", m.id());
                vec![(metric, n, seed, measure(study, &refs, m, n, seed))]
            }
            Job::EntropyPair { entropy, gap, n } => {
                let seed = cell_seed(master, "entropy", n);
                info!("entropy and entropy_gap N={n}");
                let kernel = SphericalDensityKernel::with_nodes(study.base.clone(), n, study.config.quadrature.radial_nodes);
                match kernel.and_then(|k| entropy_estimates(&k, study.config.samples, seed)) {
                    Ok(e) => vec![
                        (entropy, n, seed, Ok(entropy_cell(&Metric::Entropy, &e, &refs))),
                        (gap, n, seed, Ok(entropy_cell(&Metric::EntropyGap, &e, &refs))),
                    ],
                    Err(err) => vec![(entropy, n, seed, Err(err.clone())), (gap, n, seed, Err(err))],
                }
            }
        })
        .collect();
    let mut flat: Vec<_> = outcomes.into_iter().flatten().collect();
    flat.sort_by_key(|(metric, n, _, _)| (*metric, *n));

    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for (metric, n, seed, outcome) in flat {
        let id = study.metrics[metric].id();
        match outcome {
            Ok(m) => cells.push(CellResult {
                metric: id,
                n,
                seed,
                estimate: m.estimate,
                bound: m.bound,
                violation: false,
            }),
            Err(e) => {
                warn!("{id} N={n}: {e}");
                errors.push(CellError { metric: id, n, message: e.to_string() });
            }
        }
    }

    let predictions: Vec<PredictionRow> = study
        .metrics
        .iter()
        .filter_map(|m| prediction_for(&study.base, m).map(|prediction| PredictionRow { metric: m.id(), prediction }))
        .collect();
    for cell in &mut cells {
        cell.violation = cell.bound.as_ref().is_some_and(|b| b.violated_by(&cell.estimate));
    }
    let violation = cells.iter().any(|c| c.violation);

    let mut result = StudyResult {
        study_id: study.config.study_id.clone(),
        config: study.config.clone(),
        cells,
        errors,
        skipped,
        slopes: Vec::new(),
        predictions,
        audit,
        violation,
    };
    result.slopes = fit_slopes(&result);
    result.audit.wall_clock_seconds = start.elapsed().as_secs_f64();
    result
}

/// Weighted log-log slope per metric beside the predicted exponent.
pub fn fit_slopes(result: &StudyResult) -> Vec<SlopeRow> {
    let mut ids: Vec<&str> = Vec::new();
    for c in &result.cells {
        if !ids.contains(&c.metric.as_str()) {
            ids.push(&c.metric);
        }
    }
    ids.into_iter()
        .map(|id| {
            let cells: Vec<&CellResult> = result.cells_for(id).collect();
            let ns: Vec<f64> = cells.iter().map(|c| c.n as f64).collect();
            let ests: Vec<EstimateWithError> = cells.iter().map(|c| c.estimate).collect();
            let (fit, refusal) = match fit_loglog(&ns, &ests) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let predicted_slope = result
                .predictions
                .iter()
                .find(|p| p.metric == id)
                .map(|p| -p.prediction.shape.exponent);
            SlopeRow {
                metric: id.to_string(),
                fit,
                refusal,
                predicted_slope,
            }
        })
        .collect()
}

/// Render the slope table as aligned text.
pub fn slope_table(rows: &[SlopeRow]) -> String {
    let mut out = format!("{:<40} {:>9} {:>21} {:>10}\n", "metric", "slope", "95% CI", "predicted");
    for r in rows {
        let pred = r.predicted_slope.map_or("-".to_string(), |p| format!("{p:.4}"));
        match (&r.fit, &r.refusal) {
            (Some(f), _) => out.push_str(&format!(
                "{:<40} {:>9.4} [{:>8.4}, {:>8.4}] {:>10}\n",
                r.metric, f.slope, f.ci_low, f.ci_high, pred
            )),
            (None, reason) => out.push_str(&format!(
                "{:<40} {:>9} {:>21} {:>10}  ({})\n",
                r.metric,
                "-",
                "-",
                pred,
                reason.as_deref().unwrap_or("no fit")
            )),
        }
    }
    out
}

/// Paths written by [`run_study`].
#[derive(Debug, Clone)]
pub struct Outputs {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Write `<study_id>.csv` and `<study_id>.json` into `dir`, each atomically.
pub fn write_outputs(result: &StudyResult, dir: &Path) -> Result<Outputs, OutputError> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", result.study_id));
    let json = dir.join(format!("{}.json", result.study_id));
    write_atomic(&csv, &result.to_csv()?)?;
    let mut text = serde_json::to_vec_pretty(result)?;
    text.push(b'\n');
    write_atomic(&json, &text)?;
    Ok(Outputs { csv, json })
}

/// Validate, execute and persist a study. `workers` sizes a dedicated
/// thread pool; `None` uses the global pool.
pub fn run_study(config: &StudyConfig, workers: Option<usize>) -> Result<(StudyResult, Outputs), StudyError> {
    let study = config.validate()?;
    let result = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| OutputError::Io(std::io::Error::other(e)))?
            .install(|| execute(&study)),
        None => execute(&study),
    };
    let outputs = write_outputs(&result, &config.output_dir)?;
    Ok((result, outputs))
}
