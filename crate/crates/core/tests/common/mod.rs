//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swconf::graph::Dag;

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Residuals of `y` regressed on `xs` plus an intercept, via normal equations.
pub fn residuals(y: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
    let n = y.len();
    let p = xs.len() + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(xs.iter().map(|c| c[i])).collect() };
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        let r = row(i);
        for a in 0..p {
            xty[a] += r[a] * y[i];
            for b in 0..p {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let beta = gauss_solve(xtx, xty).expect("non-singular design");
    (0..n)
        .map(|i| y[i] - row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn partial_corr_oracle(cols: &[Vec<f64>], x: usize, y: usize, z: &[usize]) -> f64 {
    let zs: Vec<Vec<f64>> = z.iter().map(|&k| cols[k].clone()).collect();
    pearson(&residuals(&cols[x], &zs), &residuals(&cols[y], &zs))
}

fn descendants_of(n: usize, edges: &[(usize, usize)], v: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            if a == u && !seen[b] {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen
}

/// Whether the undirected path `path` is blocked by `z` (Pearl's rules).
fn blocked(n: usize, edges: &[(usize, usize)], path: &[usize], z: &[usize]) -> bool {
    let has = |a: usize, b: usize| edges.contains(&(a, b));
    for w in path.windows(3) {
        let (a, m, b) = (w[0], w[1], w[2]);
        let collider = has(a, m) && has(b, m);
        if collider {
            let desc = descendants_of(n, edges, m);
            if !z.contains(&m) && !z.iter().any(|&q| desc[q]) {
                return true;
            }
        } else if z.contains(&m) {
            return true;
        }
    }
    false
}

/// All simple paths between `x` and `y` ignoring edge direction.
pub fn simple_paths(n: usize, edges: &[(usize, usize)], x: usize, y: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, edges: &[(usize, usize)], y: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().unwrap();
        if u == y {
            out.push(path.clone());
            return;
        }
        for v in 0..n {
            if !path.contains(&v) && (edges.contains(&(u, v)) || edges.contains(&(v, u))) {
                path.push(v);
                go(n, edges, y, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(n, edges, y, &mut vec![x], &mut out);
    out
}

pub fn d_separated_oracle(n: usize, edges: &[(usize, usize)], x: usize, y: usize, z: &[usize]) -> bool {
    simple_paths(n, edges, x, y).iter().all(|p| blocked(n, edges, p, z))
}

/// Pearl's backdoor criterion by path enumeration on the original graph.
pub fn backdoor_oracle(g: &Dag, z: &[usize]) -> bool {
    let n = g.n_nodes();
    let edges: Vec<(usize, usize)> = g.edges().iter().copied().collect();
    let (t, y) = (g.treatment(), g.outcome());
    let desc = descendants_of(n, &edges, t);
    if z.iter().any(|&v| v == t || v == y || desc[v]) {
        return false;
    }
    simple_paths(n, &edges, t, y)
        .iter()
        .filter(|p| edges.contains(&(p[1], t)))
        .all(|p| blocked(n, &edges, p, z))
}

/// Smallest valid set by exhaustive enumeration; ties go to the
/// lexicographically smallest sorted index list.
pub fn exhaustive_min_backdoor(g: &Dag) -> Option<Vec<usize>> {
    let n = g.n_nodes();
    let edges: Vec<(usize, usize)> = g.edges().iter().copied().collect();
    let desc = descendants_of(n, &edges, g.treatment());
    let pool: Vec<usize> = g.covariates().into_iter().filter(|&v| !desc[v]).collect();
    let mut best: Option<Vec<usize>> = None;
    for mask in 0u32..(1 << pool.len()) {
        let z: Vec<usize> = (0..pool.len()).filter(|&i| mask >> i & 1 == 1).map(|i| pool[i]).collect();
        if !backdoor_oracle(g, &z) {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => (z.len(), &z) < (b.len(), b),
        };
        if better {
            best = Some(z);
        }
    }
    best
}

/// Random DAG over `d` covariates plus T (index d) and Y (index d + 1),
/// with T -> Y forced and a random topological order.
pub fn random_dag(d: usize, density: f64, rng: &mut ChaCha8Rng) -> Dag {
    let n = d + 2;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let pos_t = order.iter().position(|&v| v == d).unwrap();
    let pos_y = order.iter().position(|&v| v == d + 1).unwrap();
    if pos_t > pos_y {
        order.swap(pos_t, pos_y);
    }
    let mut edges = vec![(d, d + 1)];
    for i in 0..n {
        for j in i + 1..n {
            let (u, v) = (order[i], order[j]);
            if (u, v) != (d, d + 1) && rng.random::<f64>() < density {
                edges.push((u, v));
            }
        }
    }
    let names = (0..d).map(|i| format!("X{i}")).chain(["T".into(), "Y".into()]).collect();
    Dag::from_edges(names, edges, d, d + 1).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
