//! Candidate DAGs: topological-order sampling under temporal constraints,
//! admissible forward pairs, Bernoulli edge sampling and ensemble dedup.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TemporalStatus, VariableMeta};
use crate::error::{Error, Result};
use crate::prior::EdgePrior;

/// How sampled permutations are corrected to respect temporal metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    /// pre-treatment ≺ T ≺ {Y, post-treatment}, draw order kept within strata.
    #[default]
    Stratified,
    /// Uniform permutation with only T and Y swapped when out of order.
    Appendix,
}

/// A directed acyclic graph over variable indices together with the
/// topological order it was sampled under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<String>,
    order: Vec<usize>,
    edges: BTreeSet<(usize, usize)>,
    treatment: usize,
    outcome: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagRecord {
    pub order: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl Dag {
    /// Validates that `order` is a permutation and that every edge points forward in it.
    pub fn new(
        nodes: Vec<String>,
        order: Vec<usize>,
        edges: BTreeSet<(usize, usize)>,
        treatment: usize,
        outcome: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut seen = vec![false; n];
        if order.len() != n {
            return Err(Error::InvalidGraph("order is not a permutation of the nodes".into()));
        }
        for &v in &order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidGraph("order is not a permutation of the nodes".into()));
            }
        }
        if treatment >= n || outcome >= n || treatment == outcome {
            return Err(Error::InvalidGraph("bad treatment/outcome index".into()));
        }
        let dag = Self {
            nodes,
            order,
            edges,
            treatment,
            outcome,
        };
        let pos = dag.positions();
        for &(u, v) in &dag.edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range")));
            }
            if pos[u] >= pos[v] {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} violates the topological order",
                    dag.nodes[u], dag.nodes[v]
                )));
            }
        }
        Ok(dag)
    }

    /// Builds a DAG from an edge list, deriving a topological order
    /// (Kahn's algorithm, smallest index first). Fails on cycles.
    pub fn from_edges(
        nodes: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        treatment: usize,
        outcome: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        let mut indeg = vec![0usize; n];
        for &(u, v) in &edges {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidGraph(format!("bad edge ({u}, {v})")));
            }
            indeg[v] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for &(_, v) in edges.range((u, 0)..(u + 1, 0)) {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidGraph("edge set contains a cycle".into()));
        }
        Self::new(nodes, order, edges, treatment, outcome)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn treatment(&self) -> usize {
        self.treatment
    }

    pub fn outcome(&self) -> usize {
        self.outcome
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u, v))
    }

    /// `positions()[v]` is the rank of node `v` in the topological order.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (i, &v) in self.order.iter().enumerate() {
            pos[v] = i;
        }
        pos
    }

    pub fn parents(&self, v: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, w)| w == v).map(|&(u, _)| u).collect()
    }

    pub fn children(&self, u: usize) -> Vec<usize> {
        self.edges.range((u, 0)..(u + 1, 0)).map(|&(_, v)| v).collect()
    }

    /// Node indices other than treatment and outcome.
    pub fn covariates(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&v| v != self.treatment && v != self.outcome)
            .collect()
    }

    /// Edges sorted by the positions of their endpoints in the order.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let pos = self.positions();
        let mut e: Vec<_> = self.edges.iter().copied().collect();
        e.sort_by_key(|&(u, v)| (pos[u], pos[v]));
        e
    }

    /// Dedup key: the sorted edge list.
    pub fn key(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub(crate) fn remove_edge(&mut self, u: usize, v: usize) -> bool {
        self.edges.remove(&(u, v))
    }

    pub fn record(&self) -> DagRecord {
        DagRecord {
            order: self.order.iter().map(|&v| self.nodes[v].clone()).collect(),
            edges: self
                .canonical_edges()
                .into_iter()
                .map(|(u, v)| (self.nodes[u].clone(), self.nodes[v].clone()))
                .collect(),
        }
    }
}

fn index_of(meta: &[VariableMeta], status: TemporalStatus) -> usize {
    meta.iter()
        .position(|m| m.temporal_status == status)
        .expect("metadata validated to contain treatment and outcome")
}

/// Uniform permutation of all variables corrected for temporal metadata.
pub fn sample_topological_order<R: Rng + ?Sized>(meta: &[VariableMeta], rule: OrderRule, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..meta.len()).collect();
    perm.shuffle(rng);
    match rule {
        OrderRule::Stratified => {
            let t = index_of(meta, TemporalStatus::Treatment);
            let mut order: Vec<usize> = perm
                .iter()
                .copied()
                .filter(|&v| meta[v].temporal_status == TemporalStatus::PreTreatment)
                .collect();
            order.push(t);
            order.extend(perm.iter().copied().filter(|&v| {
                matches!(
                    meta[v].temporal_status,
                    TemporalStatus::Outcome | TemporalStatus::PostTreatment
                )
            }));
            order
        }
        OrderRule::Appendix => {
            let t = index_of(meta, TemporalStatus::Treatment);
            let y = index_of(meta, TemporalStatus::Outcome);
            let pt = perm.iter().position(|&v| v == t).unwrap();
            let py = perm.iter().position(|&v| v == y).unwrap();
            if pt > py {
                perm.swap(pt, py);
            }
            perm
        }
    }
}

/// Forward pairs under an order that are allowed by temporal metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissiblePairs {
    /// In canonical order: by position of `u`, then of `v`.
    pub pairs: Vec<(usize, usize)>,
}

impl AdmissiblePairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: (usize, usize)) -> bool {
        self.pairs.contains(&pair)
    }
}

/// Treatment and outcome never point into pre-treatment variables, and
/// post-treatment variables never point into the treatment.
fn temporally_allowed(meta: &[VariableMeta], u: usize, v: usize) -> bool {
    use TemporalStatus::*;
    let (su, sv) = (meta[u].temporal_status, meta[v].temporal_status);
    !(matches!(su, Treatment | Outcome) && sv == PreTreatment || su == PostTreatment && sv == Treatment)
}

pub fn admissible_pairs(order: &[usize], meta: &[VariableMeta]) -> AdmissiblePairs {
    let mut pairs = Vec::new();
    for (i, &u) in order.iter().enumerate() {
        for &v in &order[i + 1..] {
            if temporally_allowed(meta, u, v) {
                pairs.push((u, v));
            }
        }
    }
    AdmissiblePairs { pairs }
}

/// Includes each admissible pair independently with its prior probability,
/// then force-adds treatment → outcome.
pub fn sample_dag<R: Rng + ?Sized>(
    prior: &EdgePrior,
    order: &[usize],
    meta: &[VariableMeta],
    rng: &mut R,
) -> Dag {
    let names: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
    let t = index_of(meta, TemporalStatus::Treatment);
    let y = index_of(meta, TemporalStatus::Outcome);
    let mut edges = BTreeSet::new();
    for (u, v) in admissible_pairs(order, meta).pairs {
        let p = prior.prob(&names[u], &names[v]);
        if rng.random::<f64>() < p {
            edges.insert((u, v));
        }
    }
    edges.insert((t, y));
    Dag::new(names, order.to_vec(), edges, t, y).expect("sampled edges follow the order")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k: usize,
    pub max_attempts: usize,
    pub order_rule: OrderRule,
    /// Keep at most this many edges (canonical order, treatment edge always kept).
    pub max_edges: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_attempts: 100 * k,
            order_rule: OrderRule::Stratified,
            max_edges: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub dags: Vec<Dag>,
    pub attempts: usize,
    pub warnings: Vec<String>,
}

fn truncate_edges(dag: &mut Dag, max_edges: usize) {
    let protected = (dag.treatment, dag.outcome);
    let mut kept = 1;
    for (u, v) in dag.canonical_edges() {
        if (u, v) == protected {
            continue;
        }
        if kept < max_edges {
            kept += 1;
        } else {
            dag.remove_edge(u, v);
        }
    }
}

/// Samples up to `k` DAGs with distinct edge sets from one seeded stream.
pub fn sample_ensemble(prior: &EdgePrior, meta: &[VariableMeta], cfg: &EnsembleConfig, seed: u64) -> Result<Ensemble> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("ensemble size K must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut dags = Vec::with_capacity(cfg.k);
    let mut attempts = 0;
    while dags.len() < cfg.k && attempts < cfg.max_attempts.max(cfg.k) {
        attempts += 1;
        let order = sample_topological_order(meta, cfg.order_rule, &mut rng);
        let mut dag = sample_dag(prior, &order, meta, &mut rng);
        if let Some(m) = cfg.max_edges {
            truncate_edges(&mut dag, m);
        }
        if seen.insert(dag.key()) {
            dags.push(dag);
        }
    }
    assert!(!dags.is_empty(), "the forced treatment edge makes every draw non-empty");
    let mut warnings = Vec::new();
    if dags.len() < cfg.k {
        let msg = format!(
            "only {} unique DAGs found in {attempts} attempts (requested {})",
            dags.len(),
            cfg.k
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Ensemble { dags, attempts, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TemporalStatus::*;
    use crate::prior::EdgePrior;

    fn meta(spec: &[(&str, TemporalStatus)]) -> Vec<VariableMeta> {
        spec.iter().map(|(n, s)| VariableMeta::new(*n, *s)).collect()
    }

    fn names(m: &[VariableMeta]) -> Vec<String> {
        m.iter().map(|v| v.name.clone()).collect()
    }

    fn constant_prior(m: &[VariableMeta], p: f64) -> EdgePrior {
        EdgePrior::from_graph(&[], &names(m), 0.0, p).unwrap()
    }

    /// Independent cycle check by depth-first search.
    fn has_cycle(dag: &Dag) -> bool {
        fn visit(dag: &Dag, v: usize, state: &mut [u8]) -> bool {
            state[v] = 1;
            for c in dag.children(v) {
                if state[c] == 1 || (state[c] == 0 && visit(dag, c, state)) {
                    return true;
                }
            }
            state[v] = 2;
            false
        }
        let mut state = vec![0u8; dag.n_nodes()];
        (0..dag.n_nodes()).any(|v| state[v] == 0 && visit(dag, v, &mut state))
    }

    #[test]
    fn stratified_order_respects_time() {
        let m = meta(&[("A", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(sample_topological_order(&m, OrderRule::Stratified, &mut rng), vec![0, 1, 2]);
        }
        let m = meta(&[("T", Treatment), ("Y", Outcome)]);
        for rule in [OrderRule::Stratified, OrderRule::Appendix] {
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                assert_eq!(sample_topological_order(&m, rule, &mut rng), vec![0, 1]);
            }
        }
    }

    #[test]
    fn within_stratum_order_is_uniform() {
        let m = meta(&[("A", PreTreatment), ("B", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 10_000;
        let a_first = (0..trials)
            .filter(|_| {
                let o = sample_topological_order(&m, OrderRule::Stratified, &mut rng);
                o.iter().position(|&v| v == 0) < o.iter().position(|&v| v == 1)
            })
            .count();
        let f = a_first as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.02, "A-before-B frequency {f}");
    }

    #[test]
    fn admissible_pair_counts() {
        let m = meta(&[("T", Treatment), ("Y", Outcome)]);
        assert_eq!(admissible_pairs(&[0, 1], &m).pairs, vec![(0, 1)]);
        let m = meta(&[("A", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        assert_eq!(admissible_pairs(&[0, 1, 2], &m).pairs, vec![(0, 1), (0, 2), (1, 2)]);
        for d in 0..8 {
            let mut spec: Vec<VariableMeta> = (0..d).map(|i| VariableMeta::new(format!("X{i}"), PreTreatment)).collect();
            spec.push(VariableMeta::new("T", Treatment));
            spec.push(VariableMeta::new("Y", Outcome));
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let order = sample_topological_order(&spec, OrderRule::Stratified, &mut rng);
            // enumerate forward pairs directly
            let pos: Vec<usize> = (0..spec.len()).map(|v| order.iter().position(|&w| w == v).unwrap()).collect();
            let brute = (0..spec.len())
                .flat_map(|u| (0..spec.len()).map(move |v| (u, v)))
                .filter(|&(u, v)| pos[u] < pos[v])
                .count();
            assert_eq!(admissible_pairs(&order, &spec).len(), brute);
            assert_eq!(brute, (d + 2) * (d + 1) / 2);
        }
    }

    #[test]
    fn appendix_rule_filters_temporal_violations() {
        let m = meta(&[("A", PreTreatment), ("P", PostTreatment), ("T", Treatment), ("Y", Outcome)]);
        // order: P, T, Y, A
        let pairs = admissible_pairs(&[1, 2, 3, 0], &m).pairs;
        assert!(!pairs.contains(&(1, 2)), "post-treatment into T");
        assert!(!pairs.contains(&(2, 0)) && !pairs.contains(&(3, 0)), "T/Y into pre-treatment");
        assert!(pairs.contains(&(2, 3)) && pairs.contains(&(1, 0)));
    }

    #[test]
    fn sample_dag_extremes() {
        let m = meta(&[("A", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = sample_dag(&constant_prior(&m, 0.0), &[0, 1, 2], &m, &mut rng);
        assert_eq!(empty.key(), vec![(1, 2)]);
        let full = sample_dag(&constant_prior(&m, 1.0), &[0, 1, 2], &m, &mut rng);
        assert_eq!(full.key(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn bernoulli_inclusion_frequency() {
        let m = meta(&[("A", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        let prior = EdgePrior::from_pairs([(("A".to_string(), "T".to_string()), 0.5)], &names(&m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let hits = (0..10_000)
            .filter(|_| sample_dag(&prior, &[0, 1, 2], &m, &mut rng).has_edge(0, 1))
            .count();
        let f = hits as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.02, "inclusion frequency {f}");
    }

    #[test]
    fn ensemble_dedup_and_exhaustion() {
        let m = meta(&[("T", Treatment), ("Y", Outcome)]);
        let e = sample_ensemble(&constant_prior(&m, 1.0), &m, &EnsembleConfig::new(5), 42).unwrap();
        assert_eq!(e.dags.len(), 1);
        assert_eq!(e.warnings.len(), 1);
        assert_eq!(e.attempts, 500);
    }

    #[test]
    fn ensemble_is_unique_and_deterministic() {
        let d = crate::dataset::gen_synthetic_scm(30, 1).unwrap();
        let prior = EdgePrior::uniform();
        let cfg = EnsembleConfig::new(5);
        let a = sample_ensemble(&prior, d.meta(), &cfg, 42).unwrap();
        assert_eq!(a.dags.len(), 5);
        let keys: HashSet<_> = a.dags.iter().map(Dag::key).collect();
        assert_eq!(keys.len(), 5);
        let b = sample_ensemble(&prior, d.meta(), &cfg, 42).unwrap();
        assert_eq!(a.dags, b.dags);
    }

    #[test]
    fn max_edges_keeps_treatment_edge() {
        let d = crate::dataset::gen_synthetic_scm(30, 1).unwrap();
        let prior = constant_prior(d.meta(), 0.9);
        let mut cfg = EnsembleConfig::new(3);
        cfg.max_edges = Some(4);
        for dag in sample_ensemble(&prior, d.meta(), &cfg, 1).unwrap().dags {
            assert!(dag.edges().len() <= 4);
            assert!(dag.has_edge(dag.treatment(), dag.outcome()));
        }
    }

    #[test]
    fn from_edges_rejects_cycles() {
        let n = vec!["A".to_string(), "T".into(), "Y".into()];
        assert!(Dag::from_edges(n.clone(), [(0, 1), (1, 2), (2, 0)], 1, 2).is_err());
        let g = Dag::from_edges(n, [(0, 1), (1, 2)], 1, 2).unwrap();
        assert_eq!(g.order(), &[0, 1, 2]);
    }

    #[test]
    fn sampled_dags_satisfy_structural_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..10_000u64 {
            let d = 1 + (trial % 6) as usize;
            let mut m: Vec<VariableMeta> = (0..d)
                .map(|i| {
                    let s = if i % 3 == 2 { PostTreatment } else { PreTreatment };
                    VariableMeta::new(format!("X{i}"), s)
                })
                .collect();
            m.push(VariableMeta::new("T", Treatment));
            m.push(VariableMeta::new("Y", Outcome));
            let nm = names(&m);
            let pairs: Vec<_> = nm
                .iter()
                .flat_map(|u| nm.iter().map(move |v| (u.clone(), v.clone())))
                .filter(|(u, v)| u != v)
                .map(|p| {
                    let x: f64 = rng.random();
                    (p, x)
                })
                .collect();
            let prior = EdgePrior::from_pairs(pairs, &nm).unwrap();
            let rule = if trial % 2 == 0 { OrderRule::Stratified } else { OrderRule::Appendix };
            let order = sample_topological_order(&m, rule, &mut rng);
            let dag = sample_dag(&prior, &order, &m, &mut rng);
            assert!(!has_cycle(&dag));
            let (t, y) = (dag.treatment(), dag.outcome());
            assert!(dag.has_edge(t, y));
            let pos = dag.positions();
            for &(u, v) in dag.edges() {
                assert_ne!(u, v);
                if u == t || u == y {
                    assert_ne!(m[v].temporal_status, PreTreatment);
                }
                if m[u].temporal_status == PostTreatment {
                    assert!(v != t && pos[u] > pos[t] || rule == OrderRule::Appendix && v != t);
                }
            }
        }
    }
}
