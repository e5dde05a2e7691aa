//! Synthetic structural causal models with known effects and graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, TemporalStatus, VariableMeta};
use crate::error::{Error, Result};

pub const N_CONFOUNDERS: usize = 5;
pub const N_COLLIDERS: usize = 4;
pub const N_NOISE: usize = 4;

/// Coefficients of the synthetic SCM.
///
/// Confounders `C1..C5 ~ N(0,1)`; treatment `T ~ Bernoulli(clip(σ(β_e ΣC)))`;
/// outcome `Y = β_y ΣC + τ(C) T + σ_y ε` with `τ(C) = τ_0 + τ_1 C1`;
/// collider-like `K_j = a T + b Y + σ_k ε_j`; noise `N1..N4 ~ N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmParams {
    pub propensity_coef: f64,
    /// True propensities are clamped to `[overlap, 1 - overlap]`.
    pub overlap: f64,
    pub outcome_coef: f64,
    pub outcome_noise: f64,
    pub effect_base: f64,
    pub effect_slope: f64,
    pub collider_t: f64,
    pub collider_y: f64,
    pub collider_noise: f64,
}

impl Default for ScmParams {
    fn default() -> Self {
        Self {
            propensity_coef: 0.4,
            overlap: 0.05,
            outcome_coef: 1.0,
            outcome_noise: 1.0,
            effect_base: 1.0,
            effect_slope: 0.5,
            collider_t: 0.3,
            collider_y: 0.4,
            collider_noise: 0.5,
        }
    }
}

pub fn gen_synthetic_scm(n: usize, seed: u64) -> Result<Dataset> {
    gen_synthetic_scm_with(n, seed, &ScmParams::default())
}

/// Columns are `C1..C5, K1..K4, N1..N4`; `K_j` are post-treatment.
pub fn gen_synthetic_scm_with(n: usize, seed: u64, p: &ScmParams) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::InvalidData(format!("synthetic SCM needs n >= 20, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = N_CONFOUNDERS + N_COLLIDERS + N_NOISE;
    let mut cols = vec![Vec::with_capacity(n); d];
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);

    for _ in 0..n {
        let c: [f64; N_CONFOUNDERS] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let noise: [f64; N_NOISE] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let sum_c: f64 = c.iter().sum();
        let e = (1.0 / (1.0 + (-p.propensity_coef * sum_c).exp())).clamp(p.overlap, 1.0 - p.overlap);
        let ti = if rng.random::<f64>() < e { 1.0 } else { 0.0 };
        let tau_i = p.effect_base + p.effect_slope * c[0];
        let eps: f64 = rng.sample(StandardNormal);
        let yi = p.outcome_coef * sum_c + tau_i * ti + p.outcome_noise * eps;
        for (j, cj) in c.iter().enumerate() {
            cols[j].push(*cj);
        }
        for k in 0..N_COLLIDERS {
            let ek: f64 = rng.sample(StandardNormal);
            cols[N_CONFOUNDERS + k].push(p.collider_t * ti + p.collider_y * yi + p.collider_noise * ek);
        }
        for (k, nk) in noise.iter().enumerate() {
            cols[N_CONFOUNDERS + N_COLLIDERS + k].push(*nk);
        }
        t.push(ti);
        y.push(yi);
        tau.push(tau_i);
    }

    let mut meta = Vec::with_capacity(d);
    meta.extend((1..=N_CONFOUNDERS).map(|j| VariableMeta::new(format!("C{j}"), TemporalStatus::PreTreatment)));
    meta.extend((1..=N_COLLIDERS).map(|j| VariableMeta::new(format!("K{j}"), TemporalStatus::PostTreatment)));
    meta.extend((1..=N_NOISE).map(|j| VariableMeta::new(format!("N{j}"), TemporalStatus::PreTreatment)));

    let (ti, yi) = (d, d + 1);
    let mut edges = vec![(ti, yi)];
    for j in 0..N_CONFOUNDERS {
        edges.push((j, ti));
        edges.push((j, yi));
    }
    for k in N_CONFOUNDERS..N_CONFOUNDERS + N_COLLIDERS {
        edges.push((ti, k));
        edges.push((yi, k));
    }
    edges.sort_unstable();

    Ok(Dataset::new(cols, meta, ("T".into(), t), ("Y".into(), y), Some(tau))?
        .with_description("Synthetic SCM with five confounders, four collider-like and four noise covariates.")
        .with_true_edges(edges))
}

pub fn inject_collider(data: &Dataset, seed: u64) -> Result<Dataset> {
    inject_collider_with(data, seed, 0.5)
}

/// Appends `X_col = 0.3 T + 0.4 Y + ε`, `ε ~ N(0, noise_sd²)`, marked post-treatment.
pub fn inject_collider_with(data: &Dataset, seed: u64, noise_sd: f64) -> Result<Dataset> {
    const NAME: &str = "X_col";
    if data.index_of(NAME).is_some() {
        return Err(Error::NameCollision(NAME.into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xcol: Vec<f64> = data
        .treatment()
        .iter()
        .zip(data.outcome())
        .map(|(t, y)| {
            let e: f64 = rng.sample(StandardNormal);
            0.3 * t + 0.4 * y + noise_sd * e
        })
        .collect();

    let d = data.d();
    let (mut cols, meta, t, y, tau, edges, description) = data.clone().into_parts();
    let mut cov_meta: Vec<VariableMeta> = meta[..d].to_vec();
    let t_name = meta[d].name.clone();
    let y_name = meta[d + 1].name.clone();
    cols.push(xcol);
    cov_meta.push(VariableMeta::new(NAME, TemporalStatus::PostTreatment));

    let mut out = Dataset::new(cols, cov_meta, (t_name, t), (y_name, y), tau)?.with_description(description);
    if let Some(edges) = edges {
        let shift = |v: usize| if v >= d { v + 1 } else { v };
        let mut e: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (shift(u), shift(v))).collect();
        e.push((d + 1, d));
        e.push((d + 2, d));
        e.sort_unstable();
        out = out.with_true_edges(e);
    }
    Ok(out)
}
