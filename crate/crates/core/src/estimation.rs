//! Nuisance models, AIPW pseudo-outcomes and linear doubly robust effect
//! bounds for a single adjustment strategy.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Rows, SplitTag};
use crate::error::{Error, Result};
use crate::identification::AdjustmentStrategy;
use crate::linalg::{design_with_intercept, ridge};

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_JITTER: f64 = 1e-8;
pub const OUTCOME_RIDGE: f64 = 1e-6;
pub const BOUND_JITTER: f64 = 1e-8;
const ETA_CAP: f64 = 30.0;

fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta.clamp(-ETA_CAP, ETA_CAP)).exp())
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Returns `None` when the iteration diverges or fails to converge.
pub fn logistic_irls(x: &DMatrix<f64>, t: &[f64]) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    let tv = DVector::from_column_slice(t);
    let mut beta = DVector::zeros(p);
    for _ in 0..IRLS_MAX_ITER {
        let eta = x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut xtwx = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            xtwx += w[i] * row.transpose() * row;
        }
        for j in 0..p {
            xtwx[(j, j)] += IRLS_JITTER;
        }
        let grad = x.transpose() * (&tv - &mu);
        let step = xtwx.cholesky()?.solve(&grad);
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        beta += &step;
        if step.amax() < IRLS_TOL {
            return Some(beta);
        }
    }
    None
}

/// Intercept-only logistic fit: the log-odds of the treated fraction.
pub fn intercept_only_logit(t: &[f64], p: usize) -> DVector<f64> {
    let frac = (t.iter().sum::<f64>() / t.len() as f64).clamp(1e-12, 1.0 - 1e-12);
    let mut beta = DVector::zeros(p);
    beta[0] = (frac / (1.0 - frac)).ln();
    beta
}

pub fn aipw(mu1: f64, mu0: f64, e: f64, t: f64, y: f64) -> f64 {
    mu1 - mu0 + t * (y - mu1) / e - (1.0 - t) * (y - mu0) / (1.0 - e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub propensity_coefs: Vec<f64>,
    pub mu0_coefs: Vec<f64>,
    pub mu1_coefs: Vec<f64>,
    pub clip_eps: f64,
    pub strategy: AdjustmentStrategy,
    /// Fold of each training row when cross-fitting.
    pub crossfit_folds: Option<Vec<usize>>,
    /// Out-of-fold training pseudo-outcomes when cross-fitting.
    pub oof_pseudo: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

struct ArmModels {
    e: DVector<f64>,
    mu0: DVector<f64>,
    mu1: DVector<f64>,
}

fn strategy_design(rows: &Rows<'_>, strategy: &AdjustmentStrategy) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = strategy.variables.iter().map(|&v| rows.column(v)).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    design_with_intercept(rows.len(), &refs)
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

fn fit_arm_models(x: &DMatrix<f64>, t: &[f64], y: &[f64], warnings: &mut Vec<String>, label: &str) -> Result<ArmModels> {
    let e = logistic_irls(x, t).unwrap_or_else(|| {
        warnings.push(format!("{label}: propensity IRLS did not converge; using intercept-only model"));
        intercept_only_logit(t, x.ncols())
    });
    let mut arm = |val: f64| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == val).collect();
        if idx.is_empty() {
            return Err(Error::MissingTreatmentArm { arm: val as u8, split: "train" });
        }
        let xa = select_rows(x, &idx);
        let ya = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]));
        Ok(ridge(&xa, &ya, OUTCOME_RIDGE, false)
            .or_else(|| ridge(&xa, &ya, OUTCOME_RIDGE, true))
            .unwrap_or_else(|| {
                warnings.push(format!("{label}: outcome regression for arm {val} is singular; using zero coefficients"));
                DVector::zeros(x.ncols())
            }))
    };
    let mu0 = arm(0.0)?;
    let mu1 = arm(1.0)?;
    Ok(ArmModels { e, mu0, mu1 })
}

fn pseudo_from_models(m: &ArmModels, x: &DMatrix<f64>, t: &[f64], y: &[f64], eps: f64) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let row = x.row(i);
            let e = sigmoid(row.dot(&m.e.transpose())).clamp(eps, 1.0 - eps);
            aipw(row.dot(&m.mu1.transpose()), row.dot(&m.mu0.transpose()), e, t[i], y[i])
        })
        .collect()
}

/// Assigns folds within each arm so every fold holds both arms.
fn assign_folds(t: &[f64], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; t.len()];
    for arm in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == arm).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out[i] = k % folds;
        }
    }
    out
}

pub fn effective_folds(folds: usize, t: &[f64]) -> usize {
    let n1 = t.iter().filter(|&&v| v == 1.0).count();
    let n0 = t.len() - n1;
    folds.min(n0.min(n1)).max(1)
}

pub fn fit_nuisances(
    train: &Rows<'_>,
    strategy: &AdjustmentStrategy,
    eps: f64,
    crossfit: bool,
    folds: usize,
    seed: u64,
) -> Result<NuisanceFit> {
    train.require("fit_nuisances", &[SplitTag::Train], "train")?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidConfig(format!("clip_eps must lie in (0, 0.5), got {eps}")));
    }
    let x = strategy_design(train, strategy);
    let t = train.treatment();
    let y = train.outcome();
    let mut warnings = Vec::new();
    let full = fit_arm_models(&x, &t, &y, &mut warnings, &strategy.key)?;

    let (crossfit_folds, oof_pseudo) = if crossfit {
        let k = effective_folds(folds, &t);
        if k < 2 {
            warnings.push(format!("{}: cross-fitting reduced to a single fold", strategy.key));
            (Some(vec![0; t.len()]), Some(pseudo_from_models(&full, &x, &t, &y, eps)))
        } else {
            let assign = assign_folds(&t, k, seed);
            let mut pseudo = vec![0.0; t.len()];
            for f in 0..k {
                let (held, fit_idx): (Vec<usize>, Vec<usize>) = (0..t.len()).partition(|&i| assign[i] == f);
                let sub = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let m = fit_arm_models(&select_rows(&x, &fit_idx), &sub(&t, &fit_idx), &sub(&y, &fit_idx), &mut warnings, &strategy.key)?;
                let p = pseudo_from_models(&m, &select_rows(&x, &held), &sub(&t, &held), &sub(&y, &held), eps);
                for (i, v) in held.into_iter().zip(p) {
                    pseudo[i] = v;
                }
            }
            (Some(assign), Some(pseudo))
        }
    } else {
        (None, None)
    };

    Ok(NuisanceFit {
        propensity_coefs: full.e.iter().copied().collect(),
        mu0_coefs: full.mu0.iter().copied().collect(),
        mu1_coefs: full.mu1.iter().copied().collect(),
        clip_eps: eps,
        strategy: strategy.clone(),
        crossfit_folds,
        oof_pseudo,
        warnings,
    })
}

impl NuisanceFit {
    fn linear(coefs: &[f64], z: &[f64]) -> f64 {
        coefs[0] + coefs[1..].iter().zip(z).map(|(b, v)| b * v).sum::<f64>()
    }

    /// `z` holds the strategy variables in strategy order.
    pub fn propensity(&self, z: &[f64]) -> f64 {
        sigmoid(Self::linear(&self.propensity_coefs, z)).clamp(self.clip_eps, 1.0 - self.clip_eps)
    }

    pub fn mu0(&self, z: &[f64]) -> f64 {
        Self::linear(&self.mu0_coefs, z)
    }

    pub fn mu1(&self, z: &[f64]) -> f64 {
        Self::linear(&self.mu1_coefs, z)
    }

    pub fn pseudo_outcome(&self, z: &[f64], t: f64, y: f64) -> f64 {
        aipw(self.mu1(z), self.mu0(z), self.propensity(z), t, y)
    }

    fn z_rows(&self, rows: &Rows<'_>) -> Vec<Vec<f64>> {
        let cols: Vec<Vec<f64>> = self.strategy.variables.iter().map(|&v| rows.column(v)).collect();
        (0..rows.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    }

    pub fn propensities(&self, rows: &Rows<'_>) -> Vec<f64> {
        self.z_rows(rows).iter().map(|z| self.propensity(z)).collect()
    }

    fn pseudo_outcomes_unchecked(&self, rows: &Rows<'_>) -> Vec<f64> {
        let t = rows.treatment();
        let y = rows.outcome();
        self.z_rows(rows)
            .iter()
            .enumerate()
            .map(|(i, z)| self.pseudo_outcome(z, t[i], y[i]))
            .collect()
    }

    /// Training pseudo-outcomes for the bound model: out-of-fold when
    /// cross-fitted, in-sample otherwise.
    pub fn train_pseudo_outcomes(&self, train: &Rows<'_>) -> Result<Vec<f64>> {
        train.require("train_pseudo_outcomes", &[SplitTag::Train], "train")?;
        Ok(match &self.oof_pseudo {
            Some(p) if p.len() == train.len() => p.clone(),
            _ => self.pseudo_outcomes_unchecked(train),
        })
    }
}

/// Linear regression of pseudo-outcomes on effect-modifier covariates with
/// an HC0 sandwich covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectBoundModel {
    /// Covariate indices of the design (after the intercept).
    pub covariates: Vec<usize>,
    pub dr_coefs: Vec<f64>,
    /// Row-major `p × p`.
    pub sandwich_cov: Vec<f64>,
    pub z_crit: f64,
    pub warnings: Vec<String>,
}

pub fn z_critical(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

pub fn fit_effect_bounds(train: &Rows<'_>, fit: &NuisanceFit, alpha: f64, covariates: &[usize]) -> Result<EffectBoundModel> {
    train.require("fit_effect_bounds", &[SplitTag::Train], "train")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if train.len() <= covariates.len() + 2 {
        return Err(Error::InvalidData(format!(
            "effect bounds need more than {} training rows, got {}",
            covariates.len() + 2,
            train.len()
        )));
    }
    let pseudo = fit.train_pseudo_outcomes(train)?;
    let cols: Vec<Vec<f64>> = covariates.iter().map(|&v| train.column(v)).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let x = design_with_intercept(train.len(), &refs);
    let p = x.ncols();
    let mut warnings = Vec::new();
    let xtx = x.transpose() * &x;
    let bread = match xtx.clone().try_inverse().filter(|m| m.iter().all(|v| v.is_finite())) {
        Some(inv) if xtx.clone().cholesky().is_some() => inv,
        _ => {
            warnings.push("singular effect-bound design; ridge-regularized".to_string());
            let mut reg = xtx.clone();
            for j in 0..p {
                reg[(j, j)] += BOUND_JITTER;
            }
            reg.try_inverse().ok_or_else(|| Error::InvalidData("effect-bound design is not invertible".into()))?
        }
    };
    let yv = DVector::from_vec(pseudo);
    let beta = &bread * (x.transpose() * &yv);
    let resid = &yv - &x * &beta;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let row = x.row(i);
        meat += resid[i] * resid[i] * row.transpose() * row;
    }
    let cov = &bread * meat * &bread;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(EffectBoundModel {
        covariates: covariates.to_vec(),
        dr_coefs: beta.iter().copied().collect(),
        sandwich_cov: cov.transpose().iter().copied().collect(),
        z_crit: z_critical(alpha),
        warnings,
    })
}

impl EffectBoundModel {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let p = self.dr_coefs.len();
        DMatrix::from_row_slice(p, p, &self.sandwich_cov)
    }

    /// `x` holds the bound covariates in model order. Returns
    /// `(q_low, τ̂, q_high)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64, f64) {
        let p = self.dr_coefs.len();
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend_from_slice(x);
        let tau: f64 = row.iter().zip(&self.dr_coefs).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for i in 0..p {
            for j in 0..p {
                quad += row[i] * self.sandwich_cov[i * p + j] * row[j];
            }
        }
        let half = self.z_crit * quad.max(0.0).sqrt();
        (tau - half, tau, tau + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub pseudo: Vec<f64>,
    pub q_low: Vec<f64>,
    pub q_high: Vec<f64>,
    pub tau_hat: Vec<f64>,
}

pub fn evaluate_strategy(fit: &NuisanceFit, bounds: &EffectBoundModel, rows: &Rows<'_>) -> Result<StrategyEvaluation> {
    rows.require("evaluate_strategy", &[SplitTag::Calibration, SplitTag::Test], "calibration or test")?;
    let pseudo = fit.pseudo_outcomes_unchecked(rows);
    let cols: Vec<Vec<f64>> = bounds.covariates.iter().map(|&v| rows.column(v)).collect();
    let mut q_low = Vec::with_capacity(rows.len());
    let mut q_high = Vec::with_capacity(rows.len());
    let mut tau_hat = Vec::with_capacity(rows.len());
    let mut x = vec![0.0; cols.len()];
    for i in 0..rows.len() {
        for (slot, c) in x.iter_mut().zip(&cols) {
            *slot = c[i];
        }
        let (lo, tau, hi) = bounds.predict(&x);
        q_low.push(lo);
        tau_hat.push(tau);
        q_high.push(hi);
    }
    Ok(StrategyEvaluation { pseudo, q_low, q_high, tau_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic_scm;
    use crate::dataset::{split_dataset, Dataset, TemporalStatus, VariableMeta};
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64, separated: bool) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let t: Vec<f64> = x
            .iter()
            .map(|&v| {
                if separated {
                    (v > 0.0) as u8 as f64
                } else {
                    (rng.random::<f64>() < sigmoid(0.8 * v)) as u8 as f64
                }
            })
            .collect();
        let y: Vec<f64> = x.iter().zip(&t).map(|(a, b)| 1.0 + a + 2.0 * b + 0.1 * rng.random::<f64>()).collect();
        Dataset::new(
            vec![x],
            vec![VariableMeta::new("X", TemporalStatus::PreTreatment)],
            ("T".into(), t),
            ("Y".into(), y),
            None,
        )
        .unwrap()
    }

    fn all_rows(data: &Dataset) -> Vec<usize> {
        (0..data.n()).collect()
    }

    #[test]
    fn empty_strategy_propensity_is_treated_fraction() {
        let data = toy(200, 1, false);
        let idx = all_rows(&data);
        let rows = Rows::new(&data, &idx, SplitTag::Train);
        let strat = AdjustmentStrategy::new(vec![], &data.names());
        let fit = fit_nuisances(&rows, &strat, 0.05, false, 5, 0).unwrap();
        let frac = data.treatment().iter().sum::<f64>() / 200.0;
        assert!((fit.propensity(&[]) - frac).abs() < 1e-6);
    }

    #[test]
    fn separated_data_stays_clipped() {
        let data = toy(200, 2, true);
        let idx = all_rows(&data);
        let rows = Rows::new(&data, &idx, SplitTag::Train);
        let strat = AdjustmentStrategy::new(vec![0], &data.names());
        let fit = fit_nuisances(&rows, &strat, 0.05, false, 5, 0).unwrap();
        let e = fit.propensities(&rows);
        assert!(e.iter().all(|&p| (0.05..=0.95).contains(&p)));
        assert!(fit.propensity_coefs.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn irls_matches_known_fit() {
        // symmetric 2x2 table: logit coefficients have closed forms
        let x = DMatrix::from_row_slice(8, 2, &[1., 0., 1., 0., 1., 0., 1., 0., 1., 1., 1., 1., 1., 1., 1., 1.]);
        let t = [1., 0., 0., 0., 1., 1., 1., 0.];
        let b = logistic_irls(&x, &t).unwrap();
        assert!((b[0] - (1.0f64 / 3.0).ln()).abs() < 1e-6);
        assert!((b[1] - (3.0f64.ln() - (1.0f64 / 3.0).ln())).abs() < 1e-6);
    }

    #[test]
    fn aipw_hand_values() {
        assert_eq!(aipw(1.0, 0.0, 0.5, 1.0, 2.0), 3.0);
        assert_eq!(aipw(1.0, 0.0, 0.5, 0.0, 0.0), 1.0);
        assert_eq!(aipw(1.5, 0.25, 0.3, 1.0, 1.5), 1.25);
        assert_eq!(aipw(1.5, 0.25, 0.3, 0.0, 0.25), 1.25);
    }

    #[test]
    fn effective_fold_count() {
        let t = [1., 1., 1., 0., 0., 0., 0., 0., 0., 0.];
        assert_eq!(effective_folds(5, &t), 3);
        assert_eq!(effective_folds(2, &t), 2);
        assert_eq!(effective_folds(5, &[0., 0., 0.]), 1);
    }

    #[test]
    fn crossfit_assigns_every_row_out_of_fold() {
        let data = toy(120, 3, false);
        let idx = all_rows(&data);
        let rows = Rows::new(&data, &idx, SplitTag::Train);
        let strat = AdjustmentStrategy::new(vec![0], &data.names());
        let fit = fit_nuisances(&rows, &strat, 0.05, true, 5, 9).unwrap();
        let folds = fit.crossfit_folds.as_ref().unwrap();
        assert_eq!(folds.iter().max(), Some(&4));
        let oof = fit.train_pseudo_outcomes(&rows).unwrap();
        assert!(oof.iter().all(|v| v.is_finite()));
        assert_ne!(oof, fit.pseudo_outcomes_unchecked(&rows));
    }

    #[test]
    fn z_critical_value() {
        let expected = 1.6448536269514722;
        assert!((z_critical(0.10) - expected).abs() < 1e-9);
        assert!((z_critical(0.05) - 1.959963984540054).abs() < 1e-9);
    }

    #[test]
    fn constant_pseudo_outcomes_give_degenerate_band() {
        // y = 2 + 3t exactly with Z = ∅ → every pseudo-outcome equals 3
        let n = 40;
        let t: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = t.iter().map(|v| 2.0 + 3.0 * v).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = Dataset::new(
            vec![x],
            vec![VariableMeta::new("X", TemporalStatus::PreTreatment)],
            ("T".into(), t),
            ("Y".into(), y),
            None,
        )
        .unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let rows = Rows::new(&data, &idx, SplitTag::Train);
        let strat = AdjustmentStrategy::new(vec![], &data.names());
        let fit = fit_nuisances(&rows, &strat, 0.05, false, 5, 0).unwrap();
        let b = fit_effect_bounds(&rows, &fit, 0.1, &[]).unwrap();
        let (lo, tau, hi) = b.predict(&[]);
        assert!((tau - 3.0).abs() < 1e-9 && (hi - lo).abs() < 1e-9);
    }

    #[test]
    fn sandwich_matches_explicit_formula() {
        let data = gen_synthetic_scm(300, 5).unwrap();
        let split = split_dataset(&data, (0.6, 0.2, 0.2), 5).unwrap();
        let train = split.rows(&data, SplitTag::Train);
        let strat = AdjustmentStrategy::new((0..5).collect(), &data.names());
        let fit = fit_nuisances(&train, &strat, 0.05, false, 5, 0).unwrap();
        let b = fit_effect_bounds(&train, &fit, 0.1, &[0, 1]).unwrap();
        // oracle: normal equations on the pseudo-outcomes, then HC0 by loops
        let yv = fit.train_pseudo_outcomes(&train).unwrap();
        let c0 = train.column(0);
        let c1 = train.column(1);
        let n = yv.len();
        let rows: Vec<[f64; 3]> = (0..n).map(|i| [1.0, c0[i], c1[i]]).collect();
        let mut xtx = [[0.0; 3]; 3];
        let mut xty = [0.0; 3];
        for (r, y) in rows.iter().zip(&yv) {
            for a in 0..3 {
                xty[a] += r[a] * y;
                for c in 0..3 {
                    xtx[a][c] += r[a] * r[c];
                }
            }
        }
        let inv = DMatrix::from_fn(3, 3, |a, c| xtx[a][c]).try_inverse().unwrap();
        let beta = &inv * DVector::from_column_slice(&xty);
        for k in 0..3 {
            assert!((beta[k] - b.dr_coefs[k]).abs() < 1e-8);
        }
        let mut meat = DMatrix::<f64>::zeros(3, 3);
        for (r, y) in rows.iter().zip(&yv) {
            let e = y - (beta[0] + beta[1] * r[1] + beta[2] * r[2]);
            for a in 0..3 {
                for c in 0..3 {
                    meat[(a, c)] += e * e * r[a] * r[c];
                }
            }
        }
        let cov = &inv * meat * &inv;
        let got = b.cov_matrix();
        for a in 0..3 {
            for c in 0..3 {
                assert!((got[(a, c)] - cov[(a, c)]).abs() < 1e-8 * (1.0 + cov[(a, c)].abs()));
                assert_eq!(got[(a, c)], got[(c, a)]);
            }
        }
        assert!(got.clone().symmetric_eigenvalues().iter().all(|&l| l >= -1e-12));
    }

    #[test]
    fn data_separation_is_enforced() {
        let data = gen_synthetic_scm(200, 1).unwrap();
        let split = split_dataset(&data, (0.6, 0.2, 0.2), 1).unwrap();
        let train = split.rows(&data, SplitTag::Train);
        let cal = split.rows(&data, SplitTag::Calibration);
        let strat = AdjustmentStrategy::new(vec![0, 1], &data.names());
        assert!(matches!(fit_nuisances(&cal, &strat, 0.05, false, 5, 0), Err(Error::DataLeak { .. })));
        let fit = fit_nuisances(&train, &strat, 0.05, false, 5, 0).unwrap();
        assert!(matches!(fit_effect_bounds(&cal, &fit, 0.1, &[0]), Err(Error::DataLeak { .. })));
        let b = fit_effect_bounds(&train, &fit, 0.1, &[0]).unwrap();
        assert!(matches!(evaluate_strategy(&fit, &b, &train), Err(Error::DataLeak { .. })));
        let ev = evaluate_strategy(&fit, &b, &cal).unwrap();
        for i in 0..cal.len() {
            assert!(ev.pseudo[i].is_finite());
            assert!(ev.q_low[i] <= ev.tau_hat[i] && ev.tau_hat[i] <= ev.q_high[i]);
        }
        assert_eq!(ev, evaluate_strategy(&fit, &b, &cal).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn band_is_symmetric_and_nonnegative(seed in 0u64..1000, xs in proptest::collection::vec(-5.0f64..5.0, 2)) {
            let data = gen_synthetic_scm(150, seed).unwrap();
            let idx: Vec<usize> = (0..150).collect();
            let train = Rows::new(&data, &idx, SplitTag::Train);
            let strat = AdjustmentStrategy::new(vec![0, 1, 2, 3, 4], &data.names());
            let fit = fit_nuisances(&train, &strat, 0.05, false, 5, 0).unwrap();
            let b = fit_effect_bounds(&train, &fit, 0.1, &[0, 2]).unwrap();
            let (lo, tau, hi) = b.predict(&xs);
            prop_assert!(hi - lo >= 0.0);
            prop_assert!(((hi - tau) - (tau - lo)).abs() <= 1e-9 * (1.0 + tau.abs()));
        }
    }
}
