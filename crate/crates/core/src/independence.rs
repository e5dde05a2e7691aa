//! Fisher-z partial-correlation tests and single-pass greedy edge pruning.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::graph::Dag;
use crate::linalg::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CITestResult {
    /// Fisher z statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub r: f64,
    /// Sample size the test was run on.
    pub df_n: usize,
    /// Set when |r| = 1 (p = 0 by convention).
    pub boundary: bool,
}

/// Why a test could not be run; the caller keeps the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    TooFewRows,
    SingularConditioning,
    ZeroVariance,
}

fn residuals(x: &DMatrix<f64>, y: DVector<f64>) -> Result<DVector<f64>, Degenerate> {
    let beta = least_squares(x, &y).ok_or(Degenerate::SingularConditioning)?;
    Ok(y - x * beta)
}

/// Pearson correlation of the OLS residuals of columns `x` and `y` after
/// regressing each on the conditioning columns plus an intercept.
pub fn partial_correlation(data: &DMatrix<f64>, x: usize, y: usize, conditioning: &[usize]) -> Result<f64, Degenerate> {
    let n = data.nrows();
    if n <= conditioning.len() + 3 {
        return Err(Degenerate::TooFewRows);
    }
    let mut design = DMatrix::from_element(n, conditioning.len() + 1, 1.0);
    for (j, &c) in conditioning.iter().enumerate() {
        design.set_column(j + 1, &data.column(c));
    }
    let ex = residuals(&design, data.column(x).into_owned())?;
    let ey = residuals(&design, data.column(y).into_owned())?;
    let (sxx, syy) = (ex.norm_squared(), ey.norm_squared());
    let scale = data.column(x).norm_squared().max(data.column(y).norm_squared()).max(1.0);
    if sxx <= 1e-24 * scale || syy <= 1e-24 * scale {
        return Err(Degenerate::ZeroVariance);
    }
    Ok((ex.dot(&ey) / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `z = atanh(r) · sqrt(n − s − 3)` with a two-sided standard-normal p-value.
pub fn fisher_z_pvalue(r: f64, n: usize, s: usize) -> CITestResult {
    debug_assert!(n >= s + 4);
    if r.abs() >= 1.0 {
        return CITestResult {
            statistic: f64::INFINITY.copysign(r),
            p_value: 0.0,
            r,
            df_n: n,
            boundary: true,
        };
    }
    let z = r.atanh() * ((n - s - 3) as f64).sqrt();
    CITestResult {
        statistic: z,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0),
        r,
        df_n: n,
        boundary: false,
    }
}

pub fn ci_test(data: &DMatrix<f64>, x: usize, y: usize, conditioning: &[usize]) -> Result<CITestResult, Degenerate> {
    let r = partial_correlation(data, x, y, conditioning)?;
    Ok(fisher_z_pvalue(r, data.nrows(), conditioning.len()))
}

/// Visits edges in `(π(u), π(v))` order and drops `u → v` when
/// `u ⟂ v | Pa(v) \ {u}` is not rejected at `alpha_ci`. Parent sets are read
/// from the graph as pruned so far. The treatment → outcome edge is never tested.
///
/// `train` columns must be aligned with the graph's node indices.
pub fn prune_graph(g: &Dag, train: &DMatrix<f64>, alpha_ci: f64) -> Dag {
    let mut out = g.clone();
    let protected = (g.treatment(), g.outcome());
    for (u, v) in g.canonical_edges() {
        if (u, v) == protected {
            continue;
        }
        let cond: Vec<usize> = out.parents(v).into_iter().filter(|&p| p != u).collect();
        match ci_test(train, u, v, &cond) {
            Ok(res) if res.p_value > alpha_ci => {
                out.remove_edge(u, v);
            }
            Ok(_) => {}
            Err(why) => log::warn!(
                "degenerate CI test for {} -> {} ({why:?}); keeping the edge",
                g.nodes()[u],
                g.nodes()[v]
            ),
        }
    }
    out
}
