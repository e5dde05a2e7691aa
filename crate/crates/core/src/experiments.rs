//! Monte Carlo drivers on the synthetic SCM: collider stress, prior
//! washout, calibration sweep, K sweep and ablations.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{gen_synthetic_scm_with, inject_collider, Dataset, ScmParams};
use crate::error::{Error, Result};
use crate::linalg::mean;
use crate::pipeline::{fit_pipeline, run_pipeline, RunConfig, RunReport, Variant, DEFAULT_SEEDS};
use crate::prior::EdgePrior;

pub const COLLIDER: &str = "X_col";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// High probability on true edges, low elsewhere.
    #[default]
    Role,
    Uniform,
    /// `1 − p` of the role prior.
    Inverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub n: usize,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub k_list: Vec<usize>,
    pub scm: ScmParams,
    pub prior: PriorKind,
    pub p_present: f64,
    pub p_absent: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            n: 1000,
            n_list: vec![100, 500, 2000],
            seeds: DEFAULT_SEEDS.to_vec(),
            alphas: vec![0.01, 0.05, 0.10, 0.20, 0.30, 0.50],
            k_list: vec![1, 3, 5, 10],
            scm: ScmParams::default(),
            prior: PriorKind::Role,
            p_present: 0.95,
            p_absent: 0.05,
        }
    }
}

/// Prior built from the data's true edges.
pub fn role_prior(data: &Dataset, p_present: f64, p_absent: f64) -> Result<EdgePrior> {
    let names = data.names();
    let edges: Vec<(String, String)> = data
        .true_edges()
        .ok_or_else(|| Error::InvalidData("dataset carries no true edges".into()))?
        .iter()
        .map(|&(u, v)| (names[u].clone(), names[v].clone()))
        .collect();
    EdgePrior::from_graph(&edges, &names, p_present, p_absent)
}

pub fn synthetic_prior(kind: PriorKind, data: &Dataset, p_present: f64, p_absent: f64) -> Result<EdgePrior> {
    Ok(match kind {
        PriorKind::Role => role_prior(data, p_present, p_absent)?,
        PriorKind::Uniform => EdgePrior::uniform(),
        PriorKind::Inverted => role_prior(data, p_present, p_absent)?.inverted(),
    })
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| mean(&v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub coverage_pseudo: f64,
    pub coverage_cate: Option<f64>,
    pub mean_width: Option<f64>,
    pub rmse: Option<f64>,
    pub pre_filter_collider_pct: Option<f64>,
    /// Share of runs whose final strategies adjust for a post-treatment variable.
    pub post_treatment_adjusted_pct: f64,
}

impl ArmSummary {
    pub fn of(runs: &[RunReport]) -> Self {
        Self {
            coverage_pseudo: mean_of(runs.iter().map(|r| r.coverage_pseudo)).unwrap_or(f64::NAN),
            coverage_cate: mean_of(runs.iter().filter_map(|r| r.coverage_cate)),
            mean_width: mean_of(runs.iter().filter_map(|r| r.mean_width)),
            rmse: mean_of(runs.iter().filter_map(|r| r.rmse)),
            pre_filter_collider_pct: mean_of(runs.iter().filter_map(|r| r.pre_filter_collider_pct)),
            post_treatment_adjusted_pct: 100.0 * runs.iter().filter(|r| r.post_treatment_adjusted).count() as f64
                / runs.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColliderReport {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub method: ArmSummary,
    pub naive: ArmSummary,
    /// Runs whose final strategies never contain the collider.
    pub method_excludes_collider_pct: f64,
    pub method_runs: Vec<RunReport>,
    pub naive_runs: Vec<RunReport>,
}

pub fn collider_data(n: usize, seed: u64, scm: &ScmParams) -> Result<Dataset> {
    inject_collider(&gen_synthetic_scm_with(n, seed, scm)?, seed)
}

/// Full method versus a baseline forced to adjust for every pre-treatment
/// covariate plus the injected collider.
pub fn run_collider_stress(cfg: &ExperimentConfig, n: usize, seeds: &[u64]) -> Result<ColliderReport> {
    let pairs = seeds
        .par_iter()
        .map(|&seed| -> Result<(RunReport, RunReport)> {
            let data = collider_data(n, seed, &cfg.scm)?;
            let prior = synthetic_prior(cfg.prior, &data, cfg.p_present, cfg.p_absent)?;
            let run = cfg.run.with_seed(seed);
            let method = run_pipeline(&run, &data, &prior)?;
            let mut forced: Vec<String> = data
                .pre_treatment_covariates()
                .into_iter()
                .map(|i| data.names()[i].clone())
                .collect();
            forced.push(COLLIDER.into());
            let naive_cfg = RunConfig {
                forced_adjustment: Some(forced),
                ..run
            };
            let naive = run_pipeline(&naive_cfg, &data, &prior)?;
            Ok((method, naive))
        })
        .collect::<Result<Vec<_>>>()?;
    let (method_runs, naive_runs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let excludes = method_runs
        .iter()
        .filter(|r| r.strategies.iter().all(|s| !s.variables.iter().any(|v| v == COLLIDER)))
        .count();
    Ok(ColliderReport {
        n,
        seeds: seeds.to_vec(),
        method: ArmSummary::of(&method_runs),
        naive: ArmSummary::of(&naive_runs),
        method_excludes_collider_pct: 100.0 * excludes as f64 / method_runs.len().max(1) as f64,
        method_runs,
        naive_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WashoutRow {
    pub n: usize,
    pub prior: PriorKind,
    pub valid_strategy_mass: f64,
    pub sigma_struct: Option<f64>,
    pub delta_n: Option<f64>,
    pub mean_width: Option<f64>,
    pub coverage_pseudo: f64,
    pub coverage_cate: Option<f64>,
    /// Calibration points where the aggregate score exceeded the weighted
    /// graph score, summed over seeds.
    pub jensen_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WashoutReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<WashoutRow>,
}

impl WashoutReport {
    pub fn row(&self, n: usize, prior: PriorKind) -> Option<&WashoutRow> {
        self.rows.iter().find(|r| r.n == n && r.prior == prior)
    }
}

pub fn run_washout(cfg: &ExperimentConfig, n_list: &[usize], seeds: &[u64]) -> Result<WashoutReport> {
    let kinds = [PriorKind::Role, PriorKind::Uniform, PriorKind::Inverted];
    let mut rows = Vec::new();
    for &n in n_list {
        for kind in kinds {
            let runs = seeds
                .par_iter()
                .map(|&seed| {
                    let data = gen_synthetic_scm_with(n, seed, &cfg.scm)?;
                    let prior = synthetic_prior(kind, &data, cfg.p_present, cfg.p_absent)?;
                    run_pipeline(&cfg.run.with_seed(seed), &data, &prior)
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(WashoutRow {
                n,
                prior: kind,
                valid_strategy_mass: mean_of(runs.iter().filter_map(|r| r.valid_strategy_mass)).unwrap_or(f64::NAN),
                sigma_struct: mean_of(runs.iter().filter_map(|r| r.sigma_struct.map(|s| s.mean))),
                delta_n: mean_of(runs.iter().filter_map(|r| r.delta_n)),
                mean_width: mean_of(runs.iter().filter_map(|r| r.mean_width)),
                coverage_pseudo: mean_of(runs.iter().map(|r| r.coverage_pseudo)).unwrap_or(f64::NAN),
                coverage_cate: mean_of(runs.iter().filter_map(|r| r.coverage_cate)),
                jensen_violations: runs.iter().map(|r| r.jensen_violations).sum(),
            });
        }
    }
    Ok(WashoutReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub quantile_hat: Option<f64>,
    pub coverage_pseudo: f64,
    pub coverage_cate: Option<f64>,
    pub mean_width: Option<f64>,
}

/// One fitted model recalibrated at each level on the same split.
pub fn run_calibration_sweep(run: &RunConfig, data: &Dataset, prior: &EdgePrior, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("alphas must be strictly increasing".into()));
    }
    let fitted = fit_pipeline(run, data, prior)?;
    alphas
        .iter()
        .map(|&alpha| {
            let model = fitted.model.with_alpha(&fitted.cal, alpha)?;
            let m = fitted.metrics_at(alpha)?;
            Ok(SweepRow {
                alpha,
                quantile_hat: model.quantile_hat,
                coverage_pseudo: m.coverage_pseudo,
                coverage_cate: m.coverage_cate,
                mean_width: m.mean_width,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub coverage_pseudo: f64,
    pub coverage_pseudo_min: f64,
    pub mean_width: Option<f64>,
    pub mean_strategies: f64,
    /// Wall-clock time over all seeds; informational only.
    pub runtime_ms: f64,
}

pub fn run_k_sweep(cfg: &ExperimentConfig, n: usize, seeds: &[u64], k_list: &[usize]) -> Result<Vec<KSweepRow>> {
    k_list
        .iter()
        .map(|&k| {
            let start = Instant::now();
            let runs = seeds
                .par_iter()
                .map(|&seed| {
                    let data = gen_synthetic_scm_with(n, seed, &cfg.scm)?;
                    let prior = synthetic_prior(cfg.prior, &data, cfg.p_present, cfg.p_absent)?;
                    let run = RunConfig { k, ..cfg.run.with_seed(seed) };
                    run_pipeline(&run, &data, &prior)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KSweepRow {
                k,
                coverage_pseudo: mean_of(runs.iter().map(|r| r.coverage_pseudo)).unwrap_or(f64::NAN),
                coverage_pseudo_min: runs.iter().map(|r| r.coverage_pseudo).fold(f64::INFINITY, f64::min),
                mean_width: mean_of(runs.iter().filter_map(|r| r.mean_width)),
                mean_strategies: mean_of(runs.iter().map(|r| r.strategies.len() as f64)).unwrap_or(f64::NAN),
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub summary: ArmSummary,
    pub sigma_struct: Option<f64>,
}

pub fn run_ablation(cfg: &ExperimentConfig, n: usize, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    [Variant::Full, Variant::UniformPrior, Variant::NoPruning, Variant::Top1]
        .into_iter()
        .map(|variant| {
            let runs = seeds
                .par_iter()
                .map(|&seed| {
                    let data = gen_synthetic_scm_with(n, seed, &cfg.scm)?;
                    let prior = synthetic_prior(cfg.prior, &data, cfg.p_present, cfg.p_absent)?;
                    run_pipeline(&RunConfig { variant, ..cfg.run.with_seed(seed) }, &data, &prior)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                variant,
                summary: ArmSummary::of(&runs),
                sigma_struct: mean_of(runs.iter().filter_map(|r| r.sigma_struct.map(|s| s.mean))),
            })
        })
        .collect()
}

/// Dispatches a named experiment and returns its JSON report.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let value = match name {
        "collider" => serde_json::to_value(run_collider_stress(cfg, cfg.n, &cfg.seeds)?)?,
        "washout" => serde_json::to_value(run_washout(cfg, &cfg.n_list, &cfg.seeds)?)?,
        "calibration" => {
            let data = gen_synthetic_scm_with(cfg.n, cfg.run.seed, &cfg.scm)?;
            let prior = synthetic_prior(cfg.prior, &data, cfg.p_present, cfg.p_absent)?;
            serde_json::to_value(run_calibration_sweep(&cfg.run, &data, &prior, &cfg.alphas)?)?
        }
        "ksweep" => serde_json::to_value(run_k_sweep(cfg, cfg.n, &cfg.seeds, &cfg.k_list)?)?,
        "ablation" => serde_json::to_value(run_ablation(cfg, cfg.n, &cfg.seeds)?)?,
        other => return Err(Error::InvalidConfig(format!("unknown experiment {other:?}"))),
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n: 300,
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn collider_method_never_adjusts_for_collider() {
        let r = run_collider_stress(&small(), 300, &[3, 4]).unwrap();
        assert_eq!(r.method_excludes_collider_pct, 100.0);
        assert_eq!(r.naive.post_treatment_adjusted_pct, 100.0);
        assert_eq!(r.method.post_treatment_adjusted_pct, 0.0);
    }

    #[test]
    fn calibration_sweep_is_monotone() {
        let cfg = small();
        let data = gen_synthetic_scm_with(400, 8, &cfg.scm).unwrap();
        let prior = role_prior(&data, 0.95, 0.05).unwrap();
        let rows = run_calibration_sweep(&cfg.run, &data, &prior, &cfg.alphas).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].coverage_pseudo >= w[1].coverage_pseudo);
            assert!(w[0].mean_width.unwrap_or(f64::INFINITY) >= w[1].mean_width.unwrap());
        }
        assert!(run_calibration_sweep(&cfg.run, &data, &prior, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn k_one_matches_top1() {
        let data = gen_synthetic_scm_with(300, 11, &ScmParams::default()).unwrap();
        let prior = EdgePrior::uniform();
        let base = RunConfig { k: 1, ..RunConfig::default() };
        let a = run_pipeline(&base, &data, &prior).unwrap();
        let b = run_pipeline(&RunConfig { variant: Variant::Top1, ..base }, &data, &prior).unwrap();
        assert_eq!(a.strategies, b.strategies);
        assert_eq!((a.coverage_pseudo, a.mean_width, a.quantile_hat), (b.coverage_pseudo, b.mean_width, b.quantile_hat));
    }

    #[test]
    fn unknown_experiment_is_rejected() {
        assert!(run_experiment("nope", &small()).is_err());
    }

    #[test]
    fn inverted_prior_flips_probabilities() {
        let data = gen_synthetic_scm_with(100, 1, &ScmParams::default()).unwrap();
        let p = synthetic_prior(PriorKind::Inverted, &data, 0.95, 0.05).unwrap();
        assert!((p.prob("C1", "T") - 0.05).abs() < 1e-12);
        assert!((p.prob("N1", "Y") - 0.95).abs() < 1e-12);
    }
}
