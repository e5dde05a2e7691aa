//! Backdoor adjustment: d-separation, minimum-cardinality set search,
//! temporal admissibility filtering and strategy collapse.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::dataset::{TemporalStatus, VariableMeta};
use crate::error::{Error, Result};
use crate::graph::Dag;

/// Default cap on the number of candidate covariates for exact search.
pub const SEARCH_CAP: usize = 20;

/// A unique backdoor adjustment set shared by one or more graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentStrategy {
    /// Sorted covariate indices.
    pub variables: Vec<usize>,
    pub names: Vec<String>,
    pub source_graph_count: usize,
    pub key: String,
}

impl AdjustmentStrategy {
    pub fn new(mut variables: Vec<usize>, all_names: &[String]) -> Self {
        variables.sort_unstable();
        variables.dedup();
        Self {
            names: variables.iter().map(|&v| all_names[v].clone()).collect(),
            key: strategy_key(&variables),
            variables,
            source_graph_count: 0,
        }
    }
}

pub fn strategy_key(variables: &[usize]) -> String {
    format!("[{}]", variables.iter().join(","))
}

/// All nodes reachable from `node` along directed edges, excluding `node`.
pub fn descendants(g: &Dag, node: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([node]);
    while let Some(u) = queue.pop_front() {
        for c in g.children(u) {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen.remove(&node);
    seen
}

/// d-separation of `x` and `y` given `z` over an explicit edge list, by
/// reachability in the moralized ancestral graph of `{x, y} ∪ z`.
pub fn d_separated(n: usize, edges: &BTreeSet<(usize, usize)>, x: usize, y: usize, z: &[usize]) -> bool {
    let mut parents = vec![Vec::new(); n];
    for &(u, v) in edges {
        parents[v].push(u);
    }
    let mut relevant = vec![false; n];
    let mut stack: Vec<usize> = [x, y].iter().chain(z).copied().collect();
    while let Some(v) = stack.pop() {
        if !std::mem::replace(&mut relevant[v], true) {
            stack.extend(parents[v].iter().copied());
        }
    }
    let mut adj = vec![Vec::new(); n];
    for v in (0..n).filter(|&v| relevant[v]) {
        let pa = &parents[v];
        for (i, &p) in pa.iter().enumerate() {
            adj[p].push(v);
            adj[v].push(p);
            for &q in &pa[i + 1..] {
                adj[p].push(q);
                adj[q].push(p);
            }
        }
    }
    let mut blocked = vec![false; n];
    for &v in z {
        blocked[v] = true;
    }
    if blocked[x] || blocked[y] {
        return true;
    }
    let mut seen = vec![false; n];
    seen[x] = true;
    let mut queue = VecDeque::from([x]);
    while let Some(u) = queue.pop_front() {
        if u == y {
            return false;
        }
        for &w in &adj[u] {
            if relevant[w] && !blocked[w] && !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    true
}

/// Backdoor criterion: `z` holds no descendant of the treatment and
/// d-separates treatment and outcome once the treatment's outgoing edges
/// are removed.
pub fn is_valid_backdoor(g: &Dag, z: &[usize]) -> bool {
    let (t, y) = (g.treatment(), g.outcome());
    if z.contains(&t) || z.contains(&y) {
        return false;
    }
    let desc = descendants(g, t);
    if z.iter().any(|v| desc.contains(v)) {
        return false;
    }
    let backdoor_graph: BTreeSet<(usize, usize)> = g.edges().iter().copied().filter(|&(u, _)| u != t).collect();
    d_separated(g.n_nodes(), &backdoor_graph, t, y, z)
}

/// Smallest valid set among `candidates` (non-descendants of the treatment
/// only), searching by increasing cardinality and, within a cardinality, in
/// lexicographic order of sorted indices.
pub fn minimum_backdoor_set_among(g: &Dag, candidates: &[usize], cap: usize) -> Result<Option<Vec<usize>>> {
    let desc = descendants(g, g.treatment());
    let pool: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|v| *v != g.treatment() && *v != g.outcome() && !desc.contains(v))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() > cap {
        return Err(Error::Intractable { pool: pool.len(), cap });
    }
    for size in 0..=pool.len() {
        for z in pool.iter().copied().combinations(size) {
            if is_valid_backdoor(g, &z) {
                return Ok(Some(z));
            }
        }
    }
    Ok(None)
}

/// Minimum-cardinality valid set over all covariates of the graph.
pub fn minimum_backdoor_set(g: &Dag) -> Result<Option<Vec<usize>>> {
    minimum_backdoor_set_among(g, &g.covariates(), SEARCH_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub strategies: Vec<AdjustmentStrategy>,
    /// Strategy index per input graph; `None` for excluded graphs.
    pub graph_strategy: Vec<Option<usize>>,
    /// Graphs whose unfiltered minimum set used a post-treatment variable.
    pub pre_filter_post_treatment: usize,
    pub n_graphs: usize,
    pub warnings: Vec<String>,
}

impl Identification {
    pub fn pre_filter_fraction(&self) -> f64 {
        if self.n_graphs == 0 {
            0.0
        } else {
            self.pre_filter_post_treatment as f64 / self.n_graphs as f64
        }
    }

    pub fn surviving_graphs(&self) -> usize {
        self.graph_strategy.iter().flatten().count()
    }
}

/// Per graph: minimum backdoor set, hard post-treatment filter, and
/// exclusion (or empty-set fallback) when no admissible set remains.
/// Graphs that select the same set are collapsed into one strategy.
pub fn strategies_from_ensemble(
    graphs: &[Dag],
    meta: &[VariableMeta],
    fallback_empty: bool,
) -> Result<Identification> {
    let names: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
    let is_post = |v: &usize| meta[*v].temporal_status == TemporalStatus::PostTreatment;
    let admissible: Vec<usize> = (0..meta.len())
        .filter(|&v| meta[v].temporal_status == TemporalStatus::PreTreatment)
        .collect();

    let mut by_key: BTreeMap<String, usize> = BTreeMap::new();
    let mut strategies: Vec<AdjustmentStrategy> = Vec::new();
    let mut graph_strategy = Vec::with_capacity(graphs.len());
    let mut pre_filter = 0;
    let mut warnings = Vec::new();

    for (k, g) in graphs.iter().enumerate() {
        let raw = minimum_backdoor_set(g)?;
        let chosen = match raw {
            Some(z) if !z.iter().any(is_post) => Some(z),
            other => {
                if other.is_some() {
                    pre_filter += 1;
                }
                let filtered: Option<Vec<usize>> = other.map(|z| z.into_iter().filter(|v| !is_post(v)).collect());
                match filtered {
                    Some(z) if is_valid_backdoor(g, &z) => Some(z),
                    _ => minimum_backdoor_set_among(g, &admissible, SEARCH_CAP)?,
                }
            }
        };
        let chosen = match chosen {
            Some(z) => Some(z),
            None if fallback_empty => {
                let msg = format!("graph {k}: no admissible backdoor set; falling back to the empty set");
                log::warn!("{msg}");
                warnings.push(msg);
                Some(Vec::new())
            }
            None => {
                let msg = format!("graph {k}: no admissible backdoor set; excluded from the ensemble");
                log::warn!("{msg}");
                warnings.push(msg);
                None
            }
        };
        let idx = chosen.map(|z| {
            let s = AdjustmentStrategy::new(z, &names);
            let idx = *by_key.entry(s.key.clone()).or_insert_with(|| {
                strategies.push(s);
                strategies.len() - 1
            });
            strategies[idx].source_graph_count += 1;
            idx
        });
        graph_strategy.push(idx);
    }

    if strategies.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(Identification {
        strategies,
        graph_strategy,
        pre_filter_post_treatment: pre_filter,
        n_graphs: graphs.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TemporalStatus::*;

    fn dag(names: &[&str], edges: &[(usize, usize)]) -> Dag {
        let n = names.len();
        Dag::from_edges(
            names.iter().map(|s| s.to_string()).collect(),
            edges.iter().copied(),
            n - 2,
            n - 1,
        )
        .unwrap()
    }

    #[test]
    fn descendant_examples() {
        // A=0, B=1, T=2, Y=3; T -> A -> B
        let g = dag(&["A", "B", "T", "Y"], &[(2, 0), (0, 1), (2, 3)]);
        assert_eq!(descendants(&g, 2), BTreeSet::from([0, 1, 3]));
        let g = dag(&["A", "T", "Y"], &[(1, 2)]);
        assert_eq!(descendants(&g, 1), BTreeSet::from([2]));
    }

    #[test]
    fn canonical_confounding() {
        let g = dag(&["W", "T", "Y"], &[(0, 1), (0, 2), (1, 2)]);
        assert!(is_valid_backdoor(&g, &[0]));
        assert!(!is_valid_backdoor(&g, &[]));
        assert_eq!(minimum_backdoor_set(&g).unwrap(), Some(vec![0]));
    }

    #[test]
    fn collider_descendant_is_rejected() {
        // W=0, C=1, T=2, Y=3
        let g = dag(&["W", "C", "T", "Y"], &[(0, 2), (0, 3), (2, 3), (2, 1), (3, 1)]);
        assert!(!is_valid_backdoor(&g, &[0, 1]));
        assert!(is_valid_backdoor(&g, &[0]));
    }

    #[test]
    fn mediator_paths_do_not_need_blocking() {
        // T -> M -> Y is causal; the empty set is a valid backdoor set
        let g = dag(&["M", "T", "Y"], &[(1, 0), (0, 2), (1, 2)]);
        assert!(is_valid_backdoor(&g, &[]));
    }

    #[test]
    fn empty_set_when_only_treatment_edge() {
        let g = dag(&["A", "B", "T", "Y"], &[(2, 3)]);
        assert_eq!(minimum_backdoor_set(&g).unwrap(), Some(vec![]));
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        // X1 and X3 each block the single backdoor path T <- X1 -> X3 -> Y
        let g = dag(&["X1", "X2", "X3", "T", "Y"], &[(0, 3), (0, 2), (2, 4), (3, 4)]);
        assert!(is_valid_backdoor(&g, &[0]));
        assert!(is_valid_backdoor(&g, &[2]));
        assert_eq!(minimum_backdoor_set(&g).unwrap(), Some(vec![0]));
    }

    #[test]
    fn search_cap() {
        let names: Vec<String> = (0..23).map(|i| format!("V{i}")).collect();
        let g = Dag::from_edges(names, [(21, 22)], 21, 22).unwrap();
        assert!(matches!(minimum_backdoor_set(&g), Err(Error::Intractable { pool: 21, cap: 20 })));
    }

    fn meta(spec: &[(&str, TemporalStatus)]) -> Vec<VariableMeta> {
        spec.iter().map(|(n, s)| VariableMeta::new(*n, *s)).collect()
    }

    #[test]
    fn duplicate_strategies_collapse() {
        let m = meta(&[("W", PreTreatment), ("A", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        let g1 = dag(&["W", "A", "T", "Y"], &[(0, 2), (0, 3), (2, 3)]);
        let g2 = dag(&["W", "A", "T", "Y"], &[(0, 2), (0, 3), (2, 3), (1, 3)]);
        let id = strategies_from_ensemble(&[g1, g2], &m, false).unwrap();
        assert_eq!(id.strategies.len(), 1);
        assert_eq!(id.strategies[0].variables, vec![0]);
        assert_eq!(id.strategies[0].source_graph_count, 2);
        assert_eq!(id.graph_strategy, vec![Some(0), Some(0)]);
    }

    #[test]
    fn post_treatment_confounder_excludes_graph() {
        // appendix-rule graph where the post-treatment P is the only confounder
        let m = meta(&[("P", PostTreatment), ("T", Treatment), ("Y", Outcome)]);
        let g = dag(&["P", "T", "Y"], &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(minimum_backdoor_set(&g).unwrap(), Some(vec![0]));
        assert!(matches!(
            strategies_from_ensemble(std::slice::from_ref(&g), &m, false),
            Err(Error::EmptyEnsemble)
        ));
        let fallback = strategies_from_ensemble(&[g], &m, true).unwrap();
        assert_eq!(fallback.strategies[0].variables, Vec::<usize>::new());
        assert_eq!(fallback.pre_filter_post_treatment, 1);
    }

    #[test]
    fn post_treatment_alternative_is_replaced() {
        // W -> T, W -> P -> Y: {P} and {W} both block; P (index 0) wins the
        // unfiltered tie, the filter swaps in W.
        let m = meta(&[("P", PostTreatment), ("W", PreTreatment), ("T", Treatment), ("Y", Outcome)]);
        let g = dag(&["P", "W", "T", "Y"], &[(1, 2), (1, 0), (0, 3), (2, 3)]);
        assert_eq!(minimum_backdoor_set(&g).unwrap(), Some(vec![0]));
        let id = strategies_from_ensemble(&[g], &m, false).unwrap();
        assert_eq!(id.strategies[0].variables, vec![1]);
        assert_eq!(id.pre_filter_post_treatment, 1);
    }
}
