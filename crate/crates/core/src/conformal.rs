//! Strategy aggregation, composite nonconformity scores, split-conformal
//! calibration, final intervals and structural uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{EffectBoundModel, StrategyEvaluation};
use crate::weighting::StrategyWeights;

/// `max(q_low − γ, γ − q_high)`; negative inside the band.
pub fn composite_score(bar_gamma: f64, q_low: f64, q_high: f64) -> f64 {
    (q_low - bar_gamma).max(bar_gamma - q_high)
}

/// Per-strategy score, used for the Jensen diagnostic.
pub fn graph_score(gamma: f64, q_low: f64, q_high: f64) -> f64 {
    composite_score(gamma, q_low, q_high)
}

/// Exact test of `a − b ≤ c` for finite floats (no rounding of `a − b`).
pub fn sub_at_most(a: f64, b: f64, c: f64) -> bool {
    if c == f64::INFINITY {
        return true;
    }
    if c == f64::NEG_INFINITY {
        return false;
    }
    let s = a - b;
    if !s.is_finite() || !a.is_finite() || !b.is_finite() {
        return s <= c;
    }
    if s != c {
        return s < c;
    }
    // TwoSum error term of s = fl(a + (−b))
    let nb = -b;
    let bb = s - a;
    let err = (a - (s - bb)) + (nb - bb);
    err <= 0.0
}

/// Exact test of `composite_score(γ, lo, hi) ≤ q`.
pub fn score_at_most(bar_gamma: f64, q_low: f64, q_high: f64, q: f64) -> bool {
    sub_at_most(q_low, bar_gamma, q) && sub_at_most(bar_gamma, q_high, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// Whole-line interval when `⌈(1−α)(n+1)⌉ > n`.
    #[default]
    Sentinel,
    /// Cap the rank at `n` (returns the largest score).
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalQuantile {
    /// `None` is the +∞ sentinel.
    pub value: Option<f64>,
    pub rank: usize,
    pub n: usize,
}

impl ConformalQuantile {
    pub fn get(&self) -> f64 {
        self.value.unwrap_or(f64::INFINITY)
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_none()
    }
}

pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil().max(1.0) as usize
}

pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<ConformalQuantile> {
    conformal_quantile_with(scores, alpha, QuantileRule::Sentinel)
}

pub fn conformal_quantile_with(scores: &[f64], alpha: f64, rule: QuantileRule) -> Result<ConformalQuantile> {
    if scores.is_empty() {
        return Err(Error::InvalidData("no calibration scores".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = conformal_rank(n, alpha);
    let value = if rank <= n {
        Some(sorted[rank - 1])
    } else {
        match rule {
            QuantileRule::Sentinel => {
                log::warn!("calibration set too small for alpha = {alpha} (rank {rank} > n = {n}); interval is the whole line");
                None
            }
            QuantileRule::Capped => Some(sorted[n - 1]),
        }
    };
    Ok(ConformalQuantile { value, rank, n })
}

/// Weighted aggregation of strategy outputs on a set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedEvaluation {
    pub bar_gamma: Vec<f64>,
    pub bar_q_low: Vec<f64>,
    pub bar_q_high: Vec<f64>,
    /// `[strategy][unit]` graph-conditional scores.
    pub per_strategy_scores: Vec<Vec<f64>>,
    /// Aggregated composite scores `E_i`, in the form
    /// `max(Σ w (q_low − γ), Σ w (γ − q_high))`.
    pub scores: Vec<f64>,
    /// Weighted graph-conditional scores `E†_i = Σ w max(…)`.
    pub dagger: Vec<f64>,
    /// `Σ w τ̂_k` per unit.
    pub bar_tau: Vec<f64>,
    pub sigma_struct: Vec<f64>,
}

impl AggregatedEvaluation {
    pub fn len(&self) -> usize {
        self.bar_gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bar_gamma.is_empty()
    }

    pub fn jensen_violations(&self) -> usize {
        self.scores.iter().zip(&self.dagger).filter(|(e, d)| e > d).count()
    }

    pub fn jensen_gap_mean(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.scores.iter().zip(&self.dagger).map(|(e, d)| d - e).sum::<f64>() / self.len() as f64
    }
}

pub fn aggregate(weights: &[f64], evals: &[StrategyEvaluation]) -> Result<AggregatedEvaluation> {
    if weights.len() != evals.len() || evals.is_empty() {
        return Err(Error::InvalidConfig("strategy weights and evaluations differ in length".into()));
    }
    let n = evals[0].pseudo.len();
    if evals.iter().any(|e| e.pseudo.len() != n) {
        return Err(Error::InvalidConfig("strategy evaluations cover different rows".into()));
    }
    let mut out = AggregatedEvaluation {
        bar_gamma: vec![0.0; n],
        bar_q_low: vec![0.0; n],
        bar_q_high: vec![0.0; n],
        per_strategy_scores: Vec::with_capacity(evals.len()),
        scores: vec![0.0; n],
        dagger: vec![0.0; n],
        bar_tau: vec![0.0; n],
        sigma_struct: vec![0.0; n],
    };
    let mut lower_excess = vec![0.0; n];
    let mut upper_excess = vec![0.0; n];
    for (&w, ev) in weights.iter().zip(evals) {
        let mut ks = Vec::with_capacity(n);
        for i in 0..n {
            let (g, lo, hi) = (ev.pseudo[i], ev.q_low[i], ev.q_high[i]);
            let lo_gap = lo - g;
            let hi_gap = g - hi;
            let s = lo_gap.max(hi_gap);
            ks.push(s);
            out.bar_gamma[i] += w * g;
            out.bar_q_low[i] += w * lo;
            out.bar_q_high[i] += w * hi;
            out.bar_tau[i] += w * ev.tau_hat[i];
            lower_excess[i] += w * lo_gap;
            upper_excess[i] += w * hi_gap;
            out.dagger[i] += w * s;
        }
        out.per_strategy_scores.push(ks);
    }
    for i in 0..n {
        out.scores[i] = lower_excess[i].max(upper_excess[i]);
        let taus: Vec<f64> = evals.iter().map(|e| e.tau_hat[i]).collect();
        out.sigma_struct[i] = structural_uncertainty(weights, &taus);
    }
    Ok(out)
}

/// Posterior dispersion `sqrt(Σ w (τ̂_k − τ̄)²)`.
pub fn structural_uncertainty(weights: &[f64], tau_hats: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), tau_hats.len());
    let bar: f64 = weights.iter().zip(tau_hats).map(|(w, t)| w * t).sum();
    weights
        .iter()
        .zip(tau_hats)
        .map(|(w, t)| w * (t - bar) * (t - bar))
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Final interval `[q̄_low − Q̂, q̄_high + Q̂]`.
///
/// Membership is decided exactly from the unrounded endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub q_low: f64,
    pub q_high: f64,
    /// `None` for the whole-line sentinel.
    pub quantile: Option<f64>,
}

impl Interval {
    pub fn new(q_low: f64, q_high: f64, quantile: Option<f64>) -> Self {
        Self { q_low, q_high, quantile }
    }

    pub fn lower(&self) -> f64 {
        self.quantile.map_or(f64::NEG_INFINITY, |q| self.q_low - q)
    }

    pub fn upper(&self) -> f64 {
        self.quantile.map_or(f64::INFINITY, |q| self.q_high + q)
    }

    pub fn width(&self) -> f64 {
        (self.upper() - self.lower()).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.q_low + self.q_high)
    }

    pub fn contains(&self, v: f64) -> bool {
        match self.quantile {
            None => true,
            // q_low − q ≤ v and v ≤ q_high + q, both exact
            Some(q) => sub_at_most(self.q_low, v, q) && sub_at_most(v, self.q_high, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    /// `None` is the +∞ sentinel.
    pub quantile_hat: Option<f64>,
    pub rank: usize,
    pub alpha: f64,
    pub n_cal: usize,
    pub rule: QuantileRule,
    pub weights: StrategyWeights,
    pub bound_models: Vec<EffectBoundModel>,
}

pub fn calibrate(
    weights: StrategyWeights,
    bound_models: Vec<EffectBoundModel>,
    cal: &AggregatedEvaluation,
    alpha: f64,
    rule: QuantileRule,
) -> Result<ConformalModel> {
    if weights.len() != bound_models.len() {
        return Err(Error::InvalidConfig("one bound model per strategy is required".into()));
    }
    let violations = cal.jensen_violations();
    if violations > 0 {
        log::error!("aggregate score exceeded the weighted graph score at {violations} calibration points");
    }
    let q = conformal_quantile_with(&cal.scores, alpha, rule)?;
    Ok(ConformalModel {
        quantile_hat: q.value,
        rank: q.rank,
        alpha,
        n_cal: cal.len(),
        rule,
        weights,
        bound_models,
    })
}

impl ConformalModel {
    pub fn quantile(&self) -> f64 {
        self.quantile_hat.unwrap_or(f64::INFINITY)
    }

    /// Recalibrates the same aggregated scores at another level.
    pub fn with_alpha(&self, cal: &AggregatedEvaluation, alpha: f64) -> Result<Self> {
        let q = conformal_quantile_with(&cal.scores, alpha, self.rule)?;
        Ok(Self {
            quantile_hat: q.value,
            rank: q.rank,
            alpha,
            ..self.clone()
        })
    }

    /// `x` is a full covariate row indexed by variable.
    pub fn predict_interval(&self, x: &[f64]) -> Interval {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (w, m) in self.weights.weights.iter().zip(&self.bound_models) {
            let z: Vec<f64> = m.covariates.iter().map(|&j| x[j]).collect();
            let (l, _, h) = m.predict(&z);
            lo += w * l;
            hi += w * h;
        }
        Interval::new(lo, hi, self.quantile_hat)
    }

    pub fn intervals(&self, agg: &AggregatedEvaluation) -> Vec<Interval> {
        agg.bar_q_low
            .iter()
            .zip(&agg.bar_q_high)
            .map(|(&lo, &hi)| Interval::new(lo, hi, self.quantile_hat))
            .collect()
    }

    /// `τ̂_k(x)` for every strategy at a full covariate row.
    pub fn tau_hats(&self, x: &[f64]) -> Vec<f64> {
        self.bound_models
            .iter()
            .map(|m| {
                let z: Vec<f64> = m.covariates.iter().map(|&j| x[j]).collect();
                m.predict(&z).1
            })
            .collect()
    }

    pub fn structural_uncertainty(&self, x: &[f64]) -> f64 {
        structural_uncertainty(&self.weights.weights, &self.tau_hats(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identification::AdjustmentStrategy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(g: &[f64], lo: &[f64], hi: &[f64]) -> StrategyEvaluation {
        StrategyEvaluation {
            pseudo: g.to_vec(),
            q_low: lo.to_vec(),
            q_high: hi.to_vec(),
            tau_hat: lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_score(0.5, -1.0, 1.0), -0.5);
        assert_eq!(composite_score(2.0, -1.0, 1.0), 1.0);
        assert_eq!(composite_score(0.3, 0.3, 0.3), 0.0);
    }

    #[test]
    fn jensen_hand_example() {
        let agg = aggregate(&[0.5, 0.5], &[ev(&[-2.0], &[0.0], &[1.0]), ev(&[2.0], &[-1.0], &[0.0])]).unwrap();
        assert_eq!(agg.dagger[0], 2.0);
        assert_eq!((agg.bar_gamma[0], agg.bar_q_low[0], agg.bar_q_high[0]), (0.0, -0.5, 0.5));
        assert_eq!(agg.scores[0], -0.5);
        assert_eq!(composite_score(agg.bar_gamma[0], agg.bar_q_low[0], agg.bar_q_high[0]), -0.5);
    }

    #[test]
    fn single_strategy_scores_coincide() {
        let agg = aggregate(&[1.0], &[ev(&[0.7, -3.0], &[0.0, -1.0], &[1.0, 2.0])]).unwrap();
        for i in 0..2 {
            assert_eq!(agg.scores[i], agg.dagger[i]);
            assert_eq!(agg.scores[i], composite_score(agg.bar_gamma[i], agg.bar_q_low[i], agg.bar_q_high[i]));
        }
        assert_eq!(agg.sigma_struct, vec![0.0, 0.0]);
    }

    #[test]
    fn jensen_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let k = rng.random_range(1..6);
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let evals: Vec<StrategyEvaluation> = (0..k)
                .map(|_| {
                    let c: f64 = rng.random_range(-5.0..5.0);
                    let h: f64 = rng.random_range(0.0..3.0);
                    ev(&[rng.random_range(-8.0..8.0)], &[c - h], &[c + h])
                })
                .collect();
            let agg = aggregate(&w, &evals).unwrap();
            assert!(agg.scores[0] <= agg.dagger[0]);
        }
    }

    #[test]
    fn quantile_examples() {
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        let q = conformal_quantile(&nine, 0.1).unwrap();
        assert_eq!((q.rank, q.value), (9, Some(9.0)));
        assert_eq!(conformal_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap().value, Some(2.0));
        let q = conformal_quantile(&[1.0, 2.0, 3.0], 0.1).unwrap();
        assert!(q.is_infinite() && q.rank == 4 && q.get() == f64::INFINITY);
        let capped = conformal_quantile_with(&[1.0, 2.0, 3.0], 0.1, QuantileRule::Capped).unwrap();
        assert_eq!(capped.value, Some(3.0));
        assert!(conformal_quantile(&[], 0.1).is_err());
    }

    #[test]
    fn interval_examples() {
        let i = Interval::new(0.0, 1.0, Some(0.5));
        assert_eq!((i.lower(), i.upper()), (-0.5, 1.5));
        let i = Interval::new(0.0, 1.0, Some(-0.2));
        assert_eq!((i.lower(), i.upper()), (0.2, 0.8));
        let i = Interval::new(0.0, 1.0, None);
        assert!(i.contains(1e300) && i.width() == f64::INFINITY);
    }

    #[test]
    fn exact_comparison_resolves_rounding() {
        // fl(1 − 1e-16) rounds to q, so a float-only test disagrees with the
        // interval endpoint test; both exact predicates agree
        let q = 1.0 - f64::EPSILON / 2.0;
        assert_eq!(1.0 - 1e-16, q);
        assert!(!sub_at_most(1.0, 1e-16, q));
        let i = Interval::new(1.0, 5.0, Some(q));
        assert!(!i.contains(1e-16));
        assert!(!score_at_most(1e-16, 1.0, 5.0, q));
        assert!(sub_at_most(3.0, 1.0, 2.0) && !sub_at_most(3.0, 1.0, 1.9999999));
    }

    #[test]
    fn sigma_struct_examples() {
        assert_eq!(structural_uncertainty(&[1.0], &[3.0]), 0.0);
        assert_eq!(structural_uncertainty(&[0.5, 0.5], &[0.0, 2.0]), 1.0);
        assert_eq!(structural_uncertainty(&[0.2, 0.3, 0.5], &[1.5, 1.5, 1.5]), 0.0);
    }

    #[test]
    fn exchangeable_scores_cover_at_nominal_rate() {
        // expected coverage is exactly ⌈0.9 · 100⌉ / 100 = 0.90; allow 3 s.e.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 10_000;
        let mut hits = 0;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..99).map(|_| rng.random::<f64>()).collect();
            let q = conformal_quantile(&scores, 0.1).unwrap().get();
            if rng.random::<f64>() <= q {
                hits += 1;
            }
        }
        let frac = hits as f64 / trials as f64;
        let se = (0.9f64 * 0.1 / trials as f64).sqrt();
        assert!(frac >= 0.90 - 3.0 * se && frac <= 0.91 + 3.0 * se, "coverage {frac}");
    }

    #[test]
    fn model_prediction_averages_bounds() {
        let strat = |v: Vec<usize>| AdjustmentStrategy::new(v, &["A".into(), "B".into()]);
        let bm = |c: f64| EffectBoundModel {
            covariates: vec![1],
            dr_coefs: vec![c, 1.0],
            sandwich_cov: vec![1.0, 0.0, 0.0, 0.0],
            z_crit: 1.0,
            warnings: vec![],
        };
        let model = ConformalModel {
            quantile_hat: Some(0.25),
            rank: 1,
            alpha: 0.1,
            n_cal: 1,
            rule: QuantileRule::Sentinel,
            weights: StrategyWeights {
                strategies: vec![strat(vec![0]), strat(vec![1])],
                weights: vec![0.5, 0.5],
            },
            bound_models: vec![bm(0.0), bm(2.0)],
        };
        let i = model.predict_interval(&[100.0, 1.0]);
        assert_eq!((i.q_low, i.q_high), (1.0, 3.0));
        assert_eq!((i.lower(), i.upper()), (0.75, 3.25));
        assert_eq!(model.structural_uncertainty(&[0.0, 1.0]), 1.0);
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_alpha(
            scores in proptest::collection::vec(-10.0f64..10.0, 1..60),
            a1 in 0.01f64..0.99,
            a2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let q1 = conformal_quantile(&scores, lo).unwrap().get();
            let q2 = conformal_quantile(&scores, hi).unwrap().get();
            prop_assert!(q1 >= q2);
        }

        #[test]
        fn membership_matches_score(
            g in -1e3f64..1e3, c in -1e3f64..1e3, h in 0.0f64..1e2, q in -50.0f64..50.0,
        ) {
            let i = Interval::new(c - h, c + h, Some(q));
            prop_assert_eq!(i.contains(g), score_at_most(g, c - h, c + h, q));
        }
    }
}
