//! Graph scoring (BIC plus Bernoulli structural prior) and posterior weights
//! over collapsed adjustment strategies.
//!
//! BIC follows the higher-is-better convention `log L − (d/2) log n`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdmissiblePairs, Dag};
use crate::identification::AdjustmentStrategy;
use crate::linalg::least_squares_or_ridge;
use crate::prior::EdgePrior;

/// Shifted log-weights are floored here before exponentiation.
pub const LOG_WEIGHT_FLOOR: f64 = -500.0;
const RIDGE_JITTER: f64 = 1e-8;
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphScore {
    pub log_bic: f64,
    pub log_structural_prior: f64,
    pub log_weight: f64,
}

impl GraphScore {
    pub fn new(log_bic: f64, log_structural_prior: f64) -> Self {
        Self {
            log_bic,
            log_structural_prior,
            log_weight: log_bic + log_structural_prior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BicVariant {
    Gaussian,
    Discrete,
}

fn unique_count(col: &[f64]) -> usize {
    let mut v: Vec<f64> = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Discrete when the outcome is binary or more than half of the columns
/// take at most five distinct values.
pub fn select_bic_variant(data: &DMatrix<f64>, outcome: usize) -> BicVariant {
    let cols: Vec<Vec<f64>> = data.column_iter().map(|c| c.iter().copied().collect()).collect();
    let y_binary = unique_count(&cols[outcome]) <= 2;
    let few_levels = cols.iter().filter(|c| unique_count(c) <= 5).count();
    if y_binary || 2 * few_levels > cols.len() {
        BicVariant::Discrete
    } else {
        BicVariant::Gaussian
    }
}

/// Gaussian log-likelihood of an OLS fit (with intercept) at the MLE
/// variance, and its free-parameter count `|parents| + 2`.
pub fn gaussian_node_loglik(y: &[f64], parents: &[&[f64]]) -> (f64, usize, bool) {
    let n = y.len();
    let x = crate::linalg::design_with_intercept(n, parents);
    let yv = DVector::from_column_slice(y);
    let (beta, ridged) = least_squares_or_ridge(&x, &yv, RIDGE_JITTER);
    let rss = (yv - x * beta).norm_squared();
    let var = (rss / n as f64).max(MIN_VARIANCE);
    let loglik = -0.5 * n as f64 * ((2.0 * PI * var).ln() + 1.0);
    (loglik, parents.len() + 2, ridged)
}

/// Sum of per-node Gaussian log-likelihoods minus `(d/2) log n`.
pub fn bic_gaussian(g: &Dag, data: &DMatrix<f64>) -> f64 {
    let n = data.nrows();
    let cols: Vec<Vec<f64>> = data.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut loglik = 0.0;
    let mut dof = 0;
    for v in 0..g.n_nodes() {
        let pa = g.parents(v);
        let pcols: Vec<&[f64]> = pa.iter().map(|&p| cols[p].as_slice()).collect();
        let (ll, d, ridged) = gaussian_node_loglik(&cols[v], &pcols);
        if ridged {
            log::warn!("singular parent design for node {}; ridge-regularized", g.nodes()[v]);
        }
        loglik += ll;
        dof += d;
    }
    loglik - 0.5 * dof as f64 * (n as f64).ln()
}

/// Column codes after discretization: values with more than ten distinct
/// levels are cut at the 0/20/40/60/80/100 % sample quantiles (duplicate
/// edges dropped, right-closed bins, lowest edge included).
#[derive(Debug, Clone)]
pub struct DiscreteColumn {
    pub codes: Vec<usize>,
    pub levels: usize,
}

fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn discretize(col: &[f64]) -> DiscreteColumn {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq = sorted.clone();
    uniq.dedup();
    let raw: Vec<usize> = if uniq.len() > 10 {
        let mut edges: Vec<f64> = (0..=5).map(|k| quantile_linear(&sorted, k as f64 / 5.0)).collect();
        edges.dedup();
        col.iter()
            .map(|&x| {
                (1..edges.len())
                    .find(|&i| x <= edges[i])
                    .map_or(edges.len() - 2, |i| i - 1)
            })
            .collect()
    } else {
        col.iter()
            .map(|x| uniq.binary_search_by(|u| u.total_cmp(x)).expect("value present"))
            .collect()
    };
    // relabel to the observed levels only
    let present: BTreeSet<usize> = raw.iter().copied().collect();
    let relabel: HashMap<usize, usize> = present.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    DiscreteColumn {
        codes: raw.iter().map(|c| relabel[c]).collect(),
        levels: present.len(),
    }
}

/// Multinomial conditional log-likelihood (MLE, `0 log 0 = 0`) and the free
/// parameter count `(L_v − 1) Π L_p`.
pub fn discrete_node_loglik(child: &DiscreteColumn, parents: &[&DiscreteColumn]) -> (f64, usize) {
    let n = child.codes.len();
    let mut counts: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let mut cfg = 0usize;
        for p in parents {
            cfg = cfg * p.levels + p.codes[i];
        }
        counts.entry(cfg).or_insert_with(|| vec![0; child.levels])[child.codes[i]] += 1;
    }
    let mut cfgs: Vec<_> = counts.into_iter().collect();
    cfgs.sort_unstable_by_key(|(k, _)| *k);
    let loglik: f64 = cfgs
        .iter()
        .map(|(_, c)| {
            let total: usize = c.iter().sum();
            c.iter()
                .filter(|&&k| k > 0)
                .map(|&k| k as f64 * (k as f64 / total as f64).ln())
                .sum::<f64>()
        })
        .sum();
    let dof = (child.levels.saturating_sub(1)) * parents.iter().map(|p| p.levels).product::<usize>();
    (loglik, dof)
}

pub fn bic_discrete(g: &Dag, data: &DMatrix<f64>) -> f64 {
    let cols: Vec<DiscreteColumn> = data
        .column_iter()
        .map(|c| discretize(&c.iter().copied().collect::<Vec<_>>()))
        .collect();
    bic_discrete_columns(g, &cols)
}

fn bic_discrete_columns(g: &Dag, cols: &[DiscreteColumn]) -> f64 {
    let n = cols[0].codes.len();
    let mut loglik = 0.0;
    let mut dof = 0;
    for v in 0..g.n_nodes() {
        let pa: Vec<&DiscreteColumn> = g.parents(v).iter().map(|&p| &cols[p]).collect();
        let (ll, d) = discrete_node_loglik(&cols[v], &pa);
        loglik += ll;
        dof += d;
    }
    loglik - 0.5 * dof as f64 * (n as f64).ln()
}

/// BIC scorer bound to one training matrix (discretization done once).
#[derive(Debug, Clone)]
pub struct GraphScorer<'a> {
    data: &'a DMatrix<f64>,
    variant: BicVariant,
    discrete: Option<Vec<DiscreteColumn>>,
}

impl<'a> GraphScorer<'a> {
    pub fn new(data: &'a DMatrix<f64>, variant: BicVariant) -> Self {
        let discrete = (variant == BicVariant::Discrete).then(|| {
            data.column_iter()
                .map(|c| discretize(&c.iter().copied().collect::<Vec<_>>()))
                .collect()
        });
        Self { data, variant, discrete }
    }

    pub fn variant(&self) -> BicVariant {
        self.variant
    }

    pub fn bic(&self, g: &Dag) -> f64 {
        match &self.discrete {
            Some(cols) => bic_discrete_columns(g, cols),
            None => bic_gaussian(g, self.data),
        }
    }
}

/// `Σ_{E} ln p + Σ_{A \ E} ln(1 − p)` with probabilities clipped at the
/// prior's log-sum level.
pub fn structural_log_prior(g: &Dag, prior: &EdgePrior, admissible: &AdmissiblePairs) -> f64 {
    let names = g.nodes();
    debug_assert!(g.edges().iter().all(|&e| admissible.contains(e)));
    admissible
        .pairs
        .iter()
        .map(|&(u, v)| {
            let p = prior.prior_prob(&names[u], &names[v]);
            if g.has_edge(u, v) {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyWeights {
    pub strategies: Vec<AdjustmentStrategy>,
    pub weights: Vec<f64>,
}

impl StrategyWeights {
    pub fn single(strategy: AdjustmentStrategy) -> Self {
        Self {
            strategies: vec![strategy],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Keeps only the highest-weight strategy, at weight one.
    pub fn top1(&self) -> Self {
        let best = self
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("non-empty weights");
        Self::single(self.strategies[best].clone())
    }
}

/// Stabilized softmax over graph log-weights, summed within strategy groups.
///
/// `groups[k]` is the strategy index of graph `k`.
pub fn normalize_weights(log_weights: &[f64], groups: &[usize], n_strategies: usize) -> Result<Vec<f64>> {
    if log_weights.is_empty() || n_strategies == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if log_weights.len() != groups.len() || groups.iter().any(|&g| g >= n_strategies) {
        return Err(Error::InvalidConfig("graph-to-strategy map does not match the scores".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = vec![0.0; n_strategies];
    for (&lw, &g) in log_weights.iter().zip(groups) {
        w[g] += (lw - max).max(LOG_WEIGHT_FLOOR).exp();
    }
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}
