//! End-to-end structure-weighted conformal runs, metrics and multi-seed
//! aggregation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{aggregate, calibrate, AggregatedEvaluation, ConformalModel, Interval, QuantileRule};
use crate::dataset::{split_dataset, Dataset, SplitIndices, SplitTag, TemporalStatus};
use crate::error::{Error, Result};
use crate::estimation::{evaluate_strategy, fit_effect_bounds, fit_nuisances, StrategyEvaluation};
use crate::graph::{admissible_pairs, sample_ensemble, Dag, EnsembleConfig, OrderRule};
use crate::identification::{is_valid_backdoor, strategies_from_ensemble, AdjustmentStrategy};
use crate::independence::prune_graph;
use crate::linalg::{mean, std_dev};
use crate::prior::EdgePrior;
use crate::weighting::{normalize_weights, select_bic_variant, structural_log_prior, BicVariant, GraphScorer, StrategyWeights};

pub const DEFAULT_SEEDS: [u64; 10] = [42, 123, 456, 789, 1024, 2048, 3333, 7777, 9999, 31415];

const ENSEMBLE_STREAM: u64 = 0x5851_F42D_4C95_7F2D;
const CROSSFIT_STREAM: u64 = 0x1405_7B7E_F767_814F;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    UniformPrior,
    NoPruning,
    Top1,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "uniform_prior" | "uniform-prior" => Ok(Self::UniformPrior),
            "no_pruning" | "no-pruning" => Ok(Self::NoPruning),
            "top1" => Ok(Self::Top1),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub alpha: f64,
    pub alpha_ci: f64,
    pub clip_eps: f64,
    pub splits: [f64; 3],
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub crossfit: bool,
    pub crossfit_folds: usize,
    pub order_rule: OrderRule,
    pub fallback_empty_adjustment: bool,
    pub variant: Variant,
    pub max_edges: Option<usize>,
    pub max_attempts: Option<usize>,
    pub quantile_rule: QuantileRule,
    /// Overrides automatic BIC selection.
    pub bic: Option<BicVariant>,
    /// Skip the ensemble and adjust for exactly these variables.
    pub forced_adjustment: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 0.10,
            alpha_ci: 0.05,
            clip_eps: 0.05,
            splits: [0.6, 0.2, 0.2],
            seed: 42,
            seeds: DEFAULT_SEEDS.to_vec(),
            crossfit: false,
            crossfit_folds: 5,
            order_rule: OrderRule::Stratified,
            fallback_empty_adjustment: false,
            variant: Variant::Full,
            max_edges: None,
            max_attempts: None,
            quantile_rule: QuantileRule::Sentinel,
            bic: None,
            forced_adjustment: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !unit(self.alpha) || !unit(self.alpha_ci) {
            return Err(Error::InvalidConfig("alpha and alpha_ci must lie in (0, 1)".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::InvalidConfig("clip_eps must lie in (0, 0.5)".into()));
        }
        if self.crossfit_folds == 0 {
            return Err(Error::InvalidConfig("crossfit_folds must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            mean: mean(xs),
            std: std_dev(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: xs.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub coverage_pseudo: f64,
    pub coverage_cate: Option<f64>,
    /// `None` when the interval is the whole line.
    pub mean_width: Option<f64>,
    pub rmse_midpoint: Option<f64>,
    pub rmse_tau: Option<f64>,
}

fn rmse(pred: impl Iterator<Item = f64>, truth: &[f64]) -> f64 {
    let sq: f64 = pred.zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (sq / truth.len() as f64).sqrt()
}

/// Coverage of the aggregated pseudo-outcome and (when known) of the true
/// CATE, mean width, and RMSE of the interval midpoint and of `tau_point`.
pub fn evaluate_metrics(
    intervals: &[Interval],
    bar_gamma: &[f64],
    true_cate: Option<&[f64]>,
    tau_point: Option<&[f64]>,
) -> Result<Metrics> {
    let n = intervals.len();
    if n == 0 || bar_gamma.len() != n || true_cate.is_some_and(|t| t.len() != n) || tau_point.is_some_and(|t| t.len() != n) {
        return Err(Error::InvalidData("metric inputs are empty or misaligned".into()));
    }
    let cover = |targets: &[f64]| {
        intervals.iter().zip(targets).filter(|(i, &v)| i.contains(v)).count() as f64 / n as f64
    };
    let finite = intervals.iter().all(|i| i.quantile.is_some());
    Ok(Metrics {
        coverage_pseudo: cover(bar_gamma),
        coverage_cate: true_cate.map(cover),
        mean_width: finite.then(|| intervals.iter().map(Interval::width).sum::<f64>() / n as f64),
        rmse_midpoint: true_cate.map(|t| rmse(intervals.iter().map(Interval::midpoint), t)),
        rmse_tau: true_cate.zip(tau_point).map(|(t, p)| rmse(p.iter().copied(), t)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub edges: Vec<(String, String)>,
    pub pruned_edges: Vec<(String, String)>,
    pub log_bic: Option<f64>,
    pub log_structural_prior: Option<f64>,
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub key: String,
    pub variables: Vec<String>,
    pub weight: f64,
    pub source_graph_count: usize,
    /// Valid backdoor set in the data-generating graph, when known.
    pub valid_in_truth: Option<bool>,
    pub propensity_range: (f64, f64),
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seed: u64,
    pub split_sizes: (usize, usize, usize),
    pub stages: Vec<String>,
    pub warnings: Vec<String>,
    pub bic_variant: Option<BicVariant>,
    pub ensemble_attempts: usize,
    pub graphs: Vec<GraphReport>,
    pub strategies: Vec<StrategyReport>,
    pub quantile_hat: Option<f64>,
    pub quantile_rank: usize,
    pub coverage_pseudo: f64,
    pub coverage_cate: Option<f64>,
    pub mean_width: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_tau: Option<f64>,
    pub sigma_struct: Option<Summary>,
    pub jensen_gap_mean: f64,
    pub jensen_violations: usize,
    pub delta_n: Option<f64>,
    pub valid_strategy_mass: Option<f64>,
    pub pre_filter_collider_pct: Option<f64>,
    /// Whether any final strategy adjusts for a post-treatment variable.
    pub post_treatment_adjusted: bool,
}

/// Everything computed by one run before metric extraction.
#[derive(Debug, Clone)]
pub struct FittedRun {
    pub split: SplitIndices,
    pub model: ConformalModel,
    pub cal: AggregatedEvaluation,
    pub test: AggregatedEvaluation,
    pub test_true_cate: Option<Vec<f64>>,
    report: RunReport,
}

impl FittedRun {
    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn into_report(self) -> RunReport {
        self.report
    }

    pub fn metrics(&self) -> Result<Metrics> {
        self.metrics_for(&self.model)
    }

    fn metrics_for(&self, model: &ConformalModel) -> Result<Metrics> {
        let intervals = model.intervals(&self.test);
        evaluate_metrics(
            &intervals,
            &self.test.bar_gamma,
            self.test_true_cate.as_deref(),
            Some(&self.test.bar_tau),
        )
    }

    /// Metrics after recalibrating on the same calibration scores.
    pub fn metrics_at(&self, alpha: f64) -> Result<Metrics> {
        self.metrics_for(&self.model.with_alpha(&self.cal, alpha)?)
    }
}

fn truth_dag(data: &Dataset) -> Option<Dag> {
    let edges = data.true_edges()?;
    Dag::from_edges(data.names(), edges.iter().copied(), data.treatment_index(), data.outcome_index()).ok()
}

struct Structure {
    weights: StrategyWeights,
    graphs: Vec<GraphReport>,
    attempts: usize,
    bic_variant: Option<BicVariant>,
    delta_n: Option<f64>,
    pre_filter_pct: Option<f64>,
}

fn forced_structure(data: &Dataset, names: &[String]) -> Result<Structure> {
    let vars = names
        .iter()
        .map(|n| {
            data.index_of(n)
                .filter(|&i| i < data.d())
                .ok_or_else(|| Error::UnknownVariable(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = AdjustmentStrategy::new(vars, &data.names());
    s.source_graph_count = 1;
    Ok(Structure {
        weights: StrategyWeights::single(s),
        graphs: Vec::new(),
        attempts: 0,
        bic_variant: None,
        delta_n: None,
        pre_filter_pct: None,
    })
}

fn ensemble_structure(
    cfg: &RunConfig,
    data: &Dataset,
    prior: &EdgePrior,
    train: &crate::dataset::Rows<'_>,
    truth: Option<&Dag>,
    stages: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<Structure> {
    let meta = data.meta();
    let mut ens_cfg = EnsembleConfig::new(cfg.k);
    ens_cfg.order_rule = cfg.order_rule;
    ens_cfg.max_edges = cfg.max_edges;
    if let Some(m) = cfg.max_attempts {
        ens_cfg.max_attempts = m;
    }
    let ensemble = sample_ensemble(prior, meta, &ens_cfg, cfg.seed ^ ENSEMBLE_STREAM)?;
    warnings.extend(ensemble.warnings.iter().cloned());
    stages.push(format!("sample_ensemble: {} DAGs", ensemble.dags.len()));

    let train_matrix = train.full_matrix();
    let pruned: Vec<Dag> = if cfg.variant == Variant::NoPruning {
        stages.push("prune: skipped".into());
        ensemble.dags.clone()
    } else {
        let out: Vec<Dag> = ensemble.dags.par_iter().map(|g| prune_graph(g, &train_matrix, cfg.alpha_ci)).collect();
        let removed: usize = ensemble.dags.iter().zip(&out).map(|(a, b)| a.edges().len() - b.edges().len()).sum();
        stages.push(format!("prune: {removed} edges removed"));
        out
    };

    let ident = strategies_from_ensemble(&pruned, meta, cfg.fallback_empty_adjustment)?;
    warnings.extend(ident.warnings.iter().cloned());
    stages.push(format!(
        "identify: {} strategies from {} graphs",
        ident.strategies.len(),
        ident.surviving_graphs()
    ));

    let variant = cfg.bic.unwrap_or_else(|| select_bic_variant(&train_matrix, data.outcome_index()));
    if variant == BicVariant::Gaussian {
        warnings.push("Gaussian BIC applied to the binary treatment node is a working score".into());
    }
    let scorer = GraphScorer::new(&train_matrix, variant);
    let scores: Vec<Option<(f64, f64)>> = pruned
        .par_iter()
        .zip(&ident.graph_strategy)
        .map(|(g, s)| {
            s.map(|_| {
                let a = admissible_pairs(g.order(), meta);
                (scorer.bic(g), structural_log_prior(g, prior, &a))
            })
        })
        .collect();
    let mut log_w = Vec::new();
    let mut groups = Vec::new();
    for (sc, s) in scores.iter().zip(&ident.graph_strategy) {
        if let (Some((b, p)), Some(k)) = (sc, s) {
            log_w.push(b + p);
            groups.push(*k);
        }
    }
    let w = normalize_weights(&log_w, &groups, ident.strategies.len())?;
    let mut weights = StrategyWeights {
        strategies: ident.strategies.clone(),
        weights: w,
    };
    if cfg.variant == Variant::Top1 {
        weights = weights.top1();
    }
    stages.push(format!("weight: {:?} BIC", variant));

    // separation of the target-aligned class from the rest: valid sets in
    // the true graph when known, else the top-weighted strategy
    let top_key = weights.top1().strategies[0].key.clone();
    let aligned = |k: usize| match truth {
        Some(t) => is_valid_backdoor(t, &ident.strategies[k].variables),
        None => ident.strategies[k].key == top_key,
    };
    let mut in_class = Vec::new();
    let mut out_class = Vec::new();
    for (sc, s) in scores.iter().zip(&ident.graph_strategy) {
        if let (Some((b, _)), Some(k)) = (sc, s) {
            if aligned(*k) {
                in_class.push(*b);
            } else {
                out_class.push(*b);
            }
        }
    }
    let delta_n = (!in_class.is_empty() && !out_class.is_empty()).then(|| {
        in_class.iter().copied().fold(f64::INFINITY, f64::min) - out_class.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });

    let edge_names = |g: &Dag| g.record().edges;
    let graphs = ensemble
        .dags
        .iter()
        .zip(&pruned)
        .zip(scores.iter().zip(&ident.graph_strategy))
        .map(|((g, p), (sc, s))| GraphReport {
            edges: edge_names(g),
            pruned_edges: edge_names(p),
            log_bic: sc.map(|x| x.0),
            log_structural_prior: sc.map(|x| x.1),
            strategy: s.map(|k| ident.strategies[k].key.clone()),
        })
        .collect();

    Ok(Structure {
        weights,
        graphs,
        attempts: ensemble.attempts,
        bic_variant: Some(variant),
        delta_n,
        pre_filter_pct: Some(100.0 * ident.pre_filter_fraction()),
    })
}

/// Runs every stage and keeps the intermediate objects.
pub fn fit_pipeline(cfg: &RunConfig, data: &Dataset, prior: &EdgePrior) -> Result<FittedRun> {
    cfg.validate()?;
    let mut stages = Vec::new();
    let mut warnings = Vec::new();
    let split = split_dataset(data, (cfg.splits[0], cfg.splits[1], cfg.splits[2]), cfg.seed)?;
    stages.push(format!("split: {:?}", split.sizes()));
    let train = split.rows(data, SplitTag::Train);
    let cal = split.rows(data, SplitTag::Calibration);
    let test = split.rows(data, SplitTag::Test);
    let truth = truth_dag(data);

    let uniform;
    let prior = if cfg.variant == Variant::UniformPrior {
        uniform = EdgePrior::uniform();
        &uniform
    } else {
        prior
    };
    let structure = match &cfg.forced_adjustment {
        Some(names) => {
            stages.push("forced adjustment: ensemble skipped".into());
            forced_structure(data, names)?
        }
        None => ensemble_structure(cfg, data, prior, &train, truth.as_ref(), &mut stages, &mut warnings)?,
    };
    let weights = structure.weights;

    let pre = data.pre_treatment_covariates();
    let fits = weights
        .strategies
        .par_iter()
        .map(|s| -> Result<_> {
            let fit = fit_nuisances(&train, s, cfg.clip_eps, cfg.crossfit, cfg.crossfit_folds, cfg.seed ^ CROSSFIT_STREAM)?;
            let bounds = fit_effect_bounds(&train, &fit, cfg.alpha, &pre)?;
            Ok((fit, bounds))
        })
        .collect::<Result<Vec<_>>>()?;
    stages.push(format!("fit_nuisances: {} strategies", fits.len()));

    let evals = |rows: &crate::dataset::Rows<'_>| -> Result<Vec<StrategyEvaluation>> {
        fits.par_iter().map(|(f, b)| evaluate_strategy(f, b, rows)).collect()
    };
    let cal_evals = evals(&cal)?;
    let cal_agg = aggregate(&weights.weights, &cal_evals)?;
    let bound_models: Vec<_> = fits.iter().map(|(_, b)| b.clone()).collect();
    let model = calibrate(weights.clone(), bound_models, &cal_agg, cfg.alpha, cfg.quantile_rule)?;
    if model.quantile_hat.is_none() {
        warnings.push(format!(
            "calibration rank {} exceeds n_cal = {}; intervals are the whole line",
            model.rank, model.n_cal
        ));
    }
    stages.push(format!("calibrate: n_cal = {}", model.n_cal));

    let test_evals = evals(&test)?;
    let test_agg = aggregate(&weights.weights, &test_evals)?;
    stages.push(format!("evaluate_test: n_test = {}", test_agg.len()));

    let mut strategy_reports = Vec::with_capacity(fits.len());
    for ((s, w), (f, b)) in weights.strategies.iter().zip(&weights.weights).zip(&fits) {
        let e: Vec<f64> = f.propensities(&cal).into_iter().chain(f.propensities(&test)).collect();
        let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        warnings.extend(f.warnings.iter().chain(&b.warnings).map(|m| format!("{}: {m}", s.key)));
        strategy_reports.push(StrategyReport {
            key: s.key.clone(),
            variables: s.names.clone(),
            weight: *w,
            source_graph_count: s.source_graph_count,
            valid_in_truth: truth.as_ref().map(|t| is_valid_backdoor(t, &s.variables)),
            propensity_range: (lo, hi),
            warnings: Vec::new(),
        });
    }
    let valid_strategy_mass = truth.as_ref().map(|_| {
        strategy_reports
            .iter()
            .filter(|s| s.valid_in_truth == Some(true))
            .map(|s| s.weight)
            .sum::<f64>()
            + 0.0 // an empty float sum is -0.0
    });
    let meta = data.meta();
    let post_treatment_adjusted = weights
        .strategies
        .iter()
        .flat_map(|s| &s.variables)
        .any(|&v| meta[v].temporal_status == TemporalStatus::PostTreatment);

    let test_true_cate = test.true_cate();
    let intervals = model.intervals(&test_agg);
    let m = evaluate_metrics(&intervals, &test_agg.bar_gamma, test_true_cate.as_deref(), Some(&test_agg.bar_tau))?;
    stages.push("metrics".into());

    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        split_sizes: split.sizes(),
        stages,
        warnings,
        bic_variant: structure.bic_variant,
        ensemble_attempts: structure.attempts,
        graphs: structure.graphs,
        strategies: strategy_reports,
        quantile_hat: model.quantile_hat,
        quantile_rank: model.rank,
        coverage_pseudo: m.coverage_pseudo,
        coverage_cate: m.coverage_cate,
        mean_width: m.mean_width,
        rmse: m.rmse_midpoint,
        rmse_tau: m.rmse_tau,
        sigma_struct: Summary::of(&test_agg.sigma_struct),
        jensen_gap_mean: cal_agg.jensen_gap_mean(),
        jensen_violations: cal_agg.jensen_violations(),
        delta_n: structure.delta_n,
        valid_strategy_mass,
        pre_filter_collider_pct: structure.pre_filter_pct,
        post_treatment_adjusted,
    };
    Ok(FittedRun {
        split,
        model,
        cal: cal_agg,
        test: test_agg,
        test_true_cate,
        report,
    })
}

pub fn run_pipeline(cfg: &RunConfig, data: &Dataset, prior: &EdgePrior) -> Result<RunReport> {
    fit_pipeline(cfg, data, prior).map(FittedRun::into_report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<RunReport>,
    pub summary: BTreeMap<String, Summary>,
}

pub fn summarize_runs(runs: &[RunReport]) -> BTreeMap<String, Summary> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, xs: Vec<f64>| {
        if let Some(s) = Summary::of(&xs) {
            out.insert(name.to_string(), s);
        }
    };
    put("coverage_pseudo", runs.iter().map(|r| r.coverage_pseudo).collect());
    put("coverage_cate", runs.iter().filter_map(|r| r.coverage_cate).collect());
    put("mean_width", runs.iter().filter_map(|r| r.mean_width).collect());
    put("rmse", runs.iter().filter_map(|r| r.rmse).collect());
    put("rmse_tau", runs.iter().filter_map(|r| r.rmse_tau).collect());
    put("sigma_struct", runs.iter().filter_map(|r| r.sigma_struct.map(|s| s.mean)).collect());
    put("jensen_gap_mean", runs.iter().map(|r| r.jensen_gap_mean).collect());
    put("delta_n", runs.iter().filter_map(|r| r.delta_n).collect());
    put("valid_strategy_mass", runs.iter().filter_map(|r| r.valid_strategy_mass).collect());
    put("pre_filter_collider_pct", runs.iter().filter_map(|r| r.pre_filter_collider_pct).collect());
    out
}

/// One run per seed on the same data (seeds drive the split and ensemble).
pub fn run_multi_seed(cfg: &RunConfig, data: &Dataset, prior: &EdgePrior, seeds: &[u64]) -> Result<MultiSeedReport> {
    let runs = seeds
        .par_iter()
        .map(|&s| run_pipeline(&cfg.with_seed(s), data, prior))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiSeedReport {
        summary: summarize_runs(&runs),
        runs,
    })
}
