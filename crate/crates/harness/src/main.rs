use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use kac_core::rates::{conditioned_rate, entropic_rate, epsilon_n, l1_eta, l1_qstar, n_min, w2_rate, wr_rate};
use kac_core::DensityModel;
use kac_lab::study::{run_study, slope_table, StudyError, StudyResult};
use kac_lab::{emit_plot_data, StudyConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kaclab", version, about = "Convergence studies for rescaled product measures on Kac's sphere")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "KACLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study from a JSON config; writes <study_id>.csv and .json.
    Run { config: PathBuf },
    /// Print predicted rate exponents and constants as JSON.
    Rates {
        /// Marginal order.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Extra moment order, E|X|^(2+delta) finite.
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        /// Almost-Lipschitz class of the base density.
        #[arg(long, default_value_t = 0.0)]
        r: f64,
        /// Moment order of the base (inf for all moments).
        #[arg(long, default_value_t = f64::INFINITY)]
        p: f64,
    },
    /// List the density catalog with its reference functionals.
    ListDensities,
    /// Write two-block plot data for one metric of a result file.
    Plot {
        result: PathBuf,
        #[arg(long)]
        metric: String,
        /// Output path (default: <result stem>.<metric>.dat beside the result).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(path: &Path, workers: Option<usize>) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config = StudyConfig::from_json(&text)?;
    let (result, outputs) = match run_study(&config, workers) {
        Ok(r) => r,
        Err(StudyError::Config(e)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    print!("{}", slope_table(&result.slopes));
    for e in &result.errors {
        eprintln!("estimator error in {} at N = {}: {}", e.metric, e.n, e.message);
    }
    for c in result.cells.iter().filter(|c| c.violation) {
        eprintln!(
            "bound violated: {} at N = {}: {} vs bound {}",
            c.metric,
            c.n,
            c.estimate.value,
            c.bound.as_ref().map_or(f64::NAN, |b| b.value)
        );
    }
    println!("wrote {} and {}", outputs.csv.display(), outputs.json.display());
    Ok(if result.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn rates(k: usize, delta: f64, r: f64, p: f64) -> anyhow::Result<()> {
    let mut out = serde_json::Map::new();
    let q = l1_qstar(k, delta, r)?;
    out.insert(
        "l1".into(),
        json!({
            "eta": l1_eta(k, delta, r)?,
            "q_star": q,
            "n_min": n_min(k, delta)?,
            "psi_constant_at_q_star": epsilon_n(k, q, 2.0)?.1,
        }),
    );
    if p > 2.0 {
        out.insert("w2".into(), serde_json::to_value(w2_rate(p)?)?);
        if p.is_finite() && p > 3.0 {
            let (b, pred) = wr_rate(p, 3.0)?;
            out.insert("wr_r3".into(), json!({ "b": b, "prediction": pred }));
        }
    }
    if p > 4.0 {
        out.insert("entropic".into(), serde_json::to_value(entropic_rate(p)?)?);
        if p.is_finite() {
            out.insert("conditioned".into(), serde_json::to_value(conditioned_rate(p - 4.0)?)?);
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn list_densities() -> anyhow::Result<()> {
    let rows: Vec<_> = DensityModel::catalog()
        .iter()
        .map(|d| {
            let p = d.moment_order();
            json!({
                "name": d.name(),
                "spec": d.spec(),
                "moment_order": if p.is_finite() { json!(p) } else { json!("inf") },
                "unit_energy": d.unit_energy(),
                "differentiable": d.differentiable(),
                "bounded": d.bounded(),
                "rel_entropy": d.rel_entropy_gaussian().ok().map(|e| e.value),
                "rel_fisher": d.rel_fisher_gaussian().ok().map(|e| e.value),
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

fn plot(path: &Path, metric: &str, out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let result: StudyResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let out = out.unwrap_or_else(|| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("result");
        let safe: String = metric.chars().map(|c| if c.is_alphanumeric() || c == '_' { c } else { '_' }).collect();
        path.with_file_name(format!("{stem}.{safe}.dat"))
    });
    emit_plot_data(&result, metric, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config, cli.workers),
        Command::Rates { k, delta, r, p } => rates(k, delta, r, p).map(|_| ExitCode::SUCCESS),
        Command::ListDensities => list_densities().map(|_| ExitCode::SUCCESS),
        Command::Plot { result, metric, out } => plot(&result, &metric, out).map(|_| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
