//! Edge-probability priors `P(u → v)` over ordered variable pairs.

mod elicit;

#[cfg(feature = "http")]
pub use elicit::elicit_prior_http;
pub use elicit::{build_pair_list, build_user_prompt, extract_json_object, parse_prior_response, SYSTEM_MESSAGE};

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

/// Clip level applied to stored probabilities (and thus to edge sampling).
pub const CLIP_SAMPLE: f64 = 1e-4;
/// Clip level applied inside the structural-prior log-sum.
pub const CLIP_PRIOR: f64 = 1e-6;
/// Probability reported for any pair absent from the prior.
pub const DEFAULT_PROBABILITY: f64 = 0.5;

pub fn clip_probability(p: f64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0 && eps < 0.5);
    p.min(1.0 - eps).max(eps)
}

/// Immutable map from ordered name pairs to clipped edge probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePrior {
    probs: BTreeMap<(String, String), f64>,
    clip_sample: f64,
    clip_prior: f64,
}

impl Default for EdgePrior {
    fn default() -> Self {
        Self::uniform()
    }
}

impl EdgePrior {
    /// The prior with no stored pairs: every lookup is 0.5.
    pub fn uniform() -> Self {
        Self {
            probs: BTreeMap::new(),
            clip_sample: CLIP_SAMPLE,
            clip_prior: CLIP_PRIOR,
        }
    }

    /// Validates pairs against `variables` and clips every probability.
    pub fn from_pairs<I>(pairs: I, variables: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = ((String, String), f64)>,
    {
        let known: HashSet<&str> = variables.iter().map(String::as_str).collect();
        let mut probs = BTreeMap::new();
        for ((u, v), p) in pairs {
            if u == v {
                return Err(Error::SelfLoop(format!("{u}->{v}")));
            }
            for name in [&u, &v] {
                if !known.contains(name.as_str()) {
                    return Err(Error::UnknownVariable(name.clone()));
                }
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidPrior(format!("P({u}->{v}) = {p} is outside [0, 1]")));
            }
            probs.insert((u, v), clip_probability(p, CLIP_SAMPLE));
        }
        Ok(Self {
            probs,
            clip_sample: CLIP_SAMPLE,
            clip_prior: CLIP_PRIOR,
        })
    }

    /// Parses a flat `{"u->v": p}` map.
    pub fn from_json_map(map: &BTreeMap<String, f64>, variables: &[String]) -> Result<Self> {
        let pairs = map
            .iter()
            .map(|(k, &p)| parse_pair_key(k).map(|pair| (pair, p)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(pairs, variables)
    }

    /// Prior that puts `p_present` on every listed edge and `p_absent` on
    /// every other ordered pair of distinct variables.
    pub fn from_graph(
        edges: &[(String, String)],
        variables: &[String],
        p_present: f64,
        p_absent: f64,
    ) -> Result<Self> {
        let present: HashSet<(&str, &str)> = edges.iter().map(|(u, v)| (u.as_str(), v.as_str())).collect();
        let mut pairs = Vec::new();
        for u in variables {
            for v in variables {
                if u != v {
                    let p = if present.contains(&(u.as_str(), v.as_str())) {
                        p_present
                    } else {
                        p_absent
                    };
                    pairs.push(((u.clone(), v.clone()), p));
                }
            }
        }
        Self::from_pairs(pairs, variables)
    }

    /// Stored probability (sampling clip level), or 0.5 when unstored.
    pub fn prob(&self, u: &str, v: &str) -> f64 {
        self.probs
            .get(&(u.to_string(), v.to_string()))
            .copied()
            .unwrap_or(DEFAULT_PROBABILITY)
    }

    /// Probability as used inside the structural log prior.
    pub fn prior_prob(&self, u: &str, v: &str) -> f64 {
        clip_probability(self.prob(u, v), self.clip_prior)
    }

    pub fn clip_sample(&self) -> f64 {
        self.clip_sample
    }

    pub fn clip_prior(&self) -> f64 {
        self.clip_prior
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &f64)> {
        self.probs.iter()
    }

    /// Replaces every stored `p` by `1 − p`; unstored pairs stay at 0.5.
    pub fn inverted(&self) -> Self {
        Self {
            probs: self.probs.iter().map(|(k, p)| (k.clone(), 1.0 - p)).collect(),
            ..self.clone()
        }
    }

    /// Dense `V × V` lookup table over variable indices.
    pub fn matrix(&self, names: &[String]) -> Vec<Vec<f64>> {
        names
            .iter()
            .map(|u| names.iter().map(|v| if u == v { 0.0 } else { self.prob(u, v) }).collect())
            .collect()
    }

    pub fn to_json_map(&self) -> BTreeMap<String, f64> {
        self.probs.iter().map(|((u, v), p)| (format!("{u}->{v}"), *p)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(File::create(path)?, &self.to_json_map())?;
        Ok(())
    }
}

pub fn parse_pair_key(key: &str) -> Result<(String, String)> {
    let (u, v) = key
        .split_once("->")
        .ok_or_else(|| Error::InvalidPrior(format!("malformed pair key `{key}`")))?;
    let (u, v) = (u.trim(), v.trim());
    if u.is_empty() || v.is_empty() || v.contains("->") {
        return Err(Error::InvalidPrior(format!("malformed pair key `{key}`")));
    }
    Ok((u.to_string(), v.to_string()))
}

pub fn load_edge_prior(path: impl AsRef<Path>, variables: &[String]) -> Result<EdgePrior> {
    let map: BTreeMap<String, f64> = serde_json::from_reader(File::open(path)?)?;
    EdgePrior::from_json_map(&map, variables)
}
