use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use swconf::conformal::QuantileRule;
use swconf::dataset::{gen_synthetic_scm_with, inject_collider, load_dataset, write_dataset, Dataset, ScmParams};
use swconf::experiments::{role_prior, run_experiment, ExperimentConfig};
use swconf::graph::OrderRule;
use swconf::pipeline::{run_multi_seed, run_pipeline, RunConfig, Variant};
use swconf::prior::{load_edge_prior, EdgePrior};

#[derive(Parser)]
#[command(name = "swconf", version, about = "Structure-weighted conformal intervals for treatment effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Scm,
    Collider,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Collider,
    Washout,
    Calibration,
    Ksweep,
    Ablation,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Stratified,
    Appendix,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantileArg {
    Sentinel,
    Capped,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on a CSV dataset.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        /// JSON map of "u->v" keys to probabilities; uniform when omitted.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0.10)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha_ci: f64,
        #[arg(long, default_value_t = 0.05)]
        clip_eps: f64,
        /// Train, calibration and test fractions.
        #[arg(long, value_parser = parse_splits, default_value = "0.6,0.2,0.2")]
        splits: [f64; 3],
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated seeds; produces a multi-seed report.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// full, uniform_prior, no_pruning or top1.
        #[arg(long, default_value = "full")]
        variant: Variant,
        #[arg(long)]
        crossfit: bool,
        #[arg(long, default_value_t = 5)]
        crossfit_folds: usize,
        #[arg(long, value_enum, default_value = "stratified")]
        order_rule: OrderArg,
        #[arg(long)]
        fallback_empty_adjustment: bool,
        #[arg(long)]
        max_edges: Option<usize>,
        #[arg(long, value_enum, default_value = "sentinel")]
        quantile_rule: QuantileArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (CSV plus metadata JSON).
    Synth {
        #[arg(long, value_enum, default_value = "scm")]
        kind: SynthKind,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Metadata path; defaults to the CSV path with a `.meta.json` suffix.
        #[arg(long)]
        meta_out: Option<PathBuf>,
        /// Also write a prior concentrated on the true edges.
        #[arg(long)]
        prior_out: Option<PathBuf>,
        /// JSON file with SCM coefficients.
        #[arg(long)]
        scm: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment on the synthetic SCM.
    Experiment {
        #[arg(long, value_enum)]
        name: ExperimentName,
        /// JSON experiment configuration; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Elicit an edge prior from a chat-completion endpoint.
    #[cfg(feature = "http")]
    Elicit {
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value = "default")]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, default_value_t = 3)]
        retries: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_splits(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected three fractions, got {}", v.len()))
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            writeln!(f, "{text}")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load(data: &Path, meta: &Path) -> Result<Dataset> {
    load_dataset(data, meta).with_context(|| format!("loading {}", data.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(f).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            data,
            meta,
            prior,
            k,
            alpha,
            alpha_ci,
            clip_eps,
            splits,
            seed,
            seeds,
            variant,
            crossfit,
            crossfit_folds,
            order_rule,
            fallback_empty_adjustment,
            max_edges,
            quantile_rule,
            out,
        } => {
            let dataset = load(&data, &meta)?;
            let prior = match prior {
                Some(p) => load_edge_prior(&p, &dataset.names()).with_context(|| format!("loading {}", p.display()))?,
                None => EdgePrior::uniform(),
            };
            let cfg = RunConfig {
                k,
                alpha,
                alpha_ci,
                clip_eps,
                splits,
                seed,
                seeds: seeds.clone().unwrap_or_default(),
                crossfit,
                crossfit_folds,
                order_rule: match order_rule {
                    OrderArg::Stratified => OrderRule::Stratified,
                    OrderArg::Appendix => OrderRule::Appendix,
                },
                fallback_empty_adjustment,
                variant,
                max_edges,
                quantile_rule: match quantile_rule {
                    QuantileArg::Sentinel => QuantileRule::Sentinel,
                    QuantileArg::Capped => QuantileRule::Capped,
                },
                ..RunConfig::default()
            };
            match seeds {
                Some(list) if !list.is_empty() => {
                    write_json(&run_multi_seed(&cfg, &dataset, &prior, &list)?, out.as_deref())?
                }
                _ => write_json(&run_pipeline(&cfg, &dataset, &prior)?, out.as_deref())?,
            }
        }
        Command::Synth {
            kind,
            n,
            seed,
            out,
            meta_out,
            prior_out,
            scm,
        } => {
            let params: ScmParams = match scm {
                Some(p) => read_json(&p)?,
                None => ScmParams::default(),
            };
            let base = gen_synthetic_scm_with(n, seed, &params)?;
            let data = match kind {
                SynthKind::Scm => base,
                SynthKind::Collider => inject_collider(&base, seed)?,
            };
            let meta_path = meta_out.unwrap_or_else(|| out.with_extension("meta.json"));
            write_dataset(&data, &out, &meta_path)?;
            if let Some(p) = prior_out {
                role_prior(&data, 0.95, 0.05)?.save(&p)?;
            }
            eprintln!("wrote {} rows to {} ({})", data.n(), out.display(), meta_path.display());
        }
        Command::Experiment { name, config, out } => {
            let cfg: ExperimentConfig = match config {
                Some(p) => read_json(&p)?,
                None => ExperimentConfig::default(),
            };
            let name = match name {
                ExperimentName::Collider => "collider",
                ExperimentName::Washout => "washout",
                ExperimentName::Calibration => "calibration",
                ExperimentName::Ksweep => "ksweep",
                ExperimentName::Ablation => "ablation",
            };
            write_json(&run_experiment(name, &cfg)?, out.as_deref())?;
        }
        #[cfg(feature = "http")]
        Command::Elicit {
            endpoint,
            model,
            data,
            meta,
            retries,
            out,
        } => {
            let dataset = load(&data, &meta)?;
            let names = dataset.names();
            let t = &names[dataset.treatment_index()];
            let y = &names[dataset.outcome_index()];
            let (prior, warnings) =
                swconf::prior::elicit_prior_http(&endpoint, &model, &names, t, y, dataset.description(), retries);
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if prior.is_empty() && !warnings.is_empty() {
                eprintln!("writing the uniform fallback prior");
            }
            prior.save(&out)?;
        }
    }
    Ok(())
}
