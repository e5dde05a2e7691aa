//! Tabular data, temporal metadata, and train/calibration/test splits.
//!
//! Variables are indexed `0..d` for covariates in column order, `d` for the
//! treatment and `d + 1` for the outcome. Graph nodes use the same indices.

mod io;
mod synth;

pub use io::{load_dataset, write_dataset, MetadataFile};
pub use synth::{
    gen_synthetic_scm, gen_synthetic_scm_with, inject_collider, inject_collider_with, ScmParams, N_COLLIDERS, N_CONFOUNDERS,
    N_NOISE,
};

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalStatus {
    PreTreatment,
    Treatment,
    Outcome,
    PostTreatment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableMeta {
    pub name: String,
    pub temporal_status: TemporalStatus,
}

impl VariableMeta {
    pub fn new(name: impl Into<String>, temporal_status: TemporalStatus) -> Self {
        Self {
            name: name.into(),
            temporal_status,
        }
    }
}

/// Checks the metadata contract: unique non-empty names, exactly one
/// treatment and one outcome.
pub fn validate_meta(meta: &[VariableMeta]) -> Result<()> {
    let mut seen = HashSet::new();
    for m in meta {
        if m.name.is_empty() {
            return Err(Error::InvalidData("empty variable name".into()));
        }
        if !seen.insert(m.name.as_str()) {
            return Err(Error::DuplicateName(m.name.clone()));
        }
    }
    let count = |s| meta.iter().filter(|m| m.temporal_status == s).count();
    if count(TemporalStatus::Treatment) != 1 || count(TemporalStatus::Outcome) != 1 {
        return Err(Error::InvalidData(
            "metadata needs exactly one treatment and one outcome variable".into(),
        ));
    }
    Ok(())
}

/// Observational data set with per-variable temporal metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
    meta: Vec<VariableMeta>,
    true_cate: Option<Vec<f64>>,
    true_edges: Option<Vec<(usize, usize)>>,
    description: String,
}

impl Dataset {
    /// `covariate_meta` describes the covariate columns in order; the treatment
    /// and outcome entries are appended from the given names.
    pub fn new(
        columns: Vec<Vec<f64>>,
        covariate_meta: Vec<VariableMeta>,
        treatment: (String, Vec<f64>),
        outcome: (String, Vec<f64>),
        true_cate: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (t_name, treatment) = treatment;
        let (y_name, outcome) = outcome;
        let n = outcome.len();
        if columns.is_empty() {
            return Err(Error::InvalidData("at least one covariate is required".into()));
        }
        if n < 10 {
            return Err(Error::InvalidData(format!("need at least 10 rows, got {n}")));
        }
        if columns.len() != covariate_meta.len() {
            return Err(Error::InvalidData("covariate metadata length mismatch".into()));
        }
        if treatment.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidData("columns have unequal lengths".into()));
        }
        if let Some(tau) = &true_cate {
            if tau.len() != n {
                return Err(Error::InvalidData("true_cate length mismatch".into()));
            }
        }
        if let Some(m) = covariate_meta
            .iter()
            .find(|m| matches!(m.temporal_status, TemporalStatus::Treatment | TemporalStatus::Outcome))
        {
            return Err(Error::InvalidData(format!(
                "covariate `{}` cannot carry treatment/outcome status",
                m.name
            )));
        }
        for (row, &t) in treatment.iter().enumerate() {
            if t != 0.0 && t != 1.0 {
                return Err(Error::NonBinaryTreatment {
                    column: t_name,
                    row,
                    value: t,
                });
            }
        }
        let mut meta = covariate_meta;
        meta.push(VariableMeta::new(t_name, TemporalStatus::Treatment));
        meta.push(VariableMeta::new(y_name, TemporalStatus::Outcome));
        validate_meta(&meta)?;
        for (j, col) in columns
            .iter()
            .chain([&treatment, &outcome])
            .chain(true_cate.iter())
            .enumerate()
        {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                let column = meta.get(j).map_or_else(|| "true_cate".to_string(), |m| m.name.clone());
                return Err(Error::MissingValue { column, row });
            }
        }
        Ok(Self {
            columns,
            treatment,
            outcome,
            meta,
            true_cate,
            true_edges: None,
            description: String::new(),
        })
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    /// Attaches the generating graph (edges over variable indices) for synthetic data.
    pub fn with_true_edges(mut self, edges: Vec<(usize, usize)>) -> Self {
        self.true_edges = Some(edges);
        self
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    /// Number of covariates.
    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn treatment_index(&self) -> usize {
        self.d()
    }

    pub fn outcome_index(&self) -> usize {
        self.d() + 1
    }

    /// Metadata for all `d + 2` variables (covariates, treatment, outcome).
    pub fn meta(&self) -> &[VariableMeta] {
        &self.meta
    }

    pub fn names(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.name == name)
    }

    pub fn covariate(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Column for any variable index, including treatment and outcome.
    pub fn variable(&self, i: usize) -> &[f64] {
        match i.cmp(&self.d()) {
            std::cmp::Ordering::Less => &self.columns[i],
            std::cmp::Ordering::Equal => &self.treatment,
            std::cmp::Ordering::Greater => &self.outcome,
        }
    }

    pub fn true_cate(&self) -> Option<&[f64]> {
        self.true_cate.as_deref()
    }

    pub fn true_edges(&self) -> Option<&[(usize, usize)]> {
        self.true_edges.as_deref()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn pre_treatment_covariates(&self) -> Vec<usize> {
        (0..self.d())
            .filter(|&j| self.meta[j].temporal_status == TemporalStatus::PreTreatment)
            .collect()
    }

    /// `rows × (d + 2)` matrix of covariates, treatment and outcome.
    pub fn full_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        let p = self.d() + 2;
        DMatrix::from_fn(rows.len(), p, |r, c| self.variable(c)[rows[r]])
    }

    pub(crate) fn into_parts(self) -> (Vec<Vec<f64>>, Vec<VariableMeta>, Vec<f64>, Vec<f64>, Option<Vec<f64>>, Option<Vec<(usize, usize)>>, String) {
        (
            self.columns,
            self.meta,
            self.treatment,
            self.outcome,
            self.true_cate,
            self.true_edges,
            self.description,
        )
    }
}

/// Which partition a set of rows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Calibration,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Calibration => "calibration",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn rows<'a>(&'a self, data: &'a Dataset, tag: SplitTag) -> Rows<'a> {
        let idx = match tag {
            SplitTag::Train => &self.train,
            SplitTag::Calibration => &self.cal,
            SplitTag::Test => &self.test,
        };
        Rows { data, idx, tag }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.cal.len(), self.test.len())
    }
}

/// A tagged view of dataset rows. Estimators check the tag to keep
/// nuisance fitting on train rows and evaluation on held-out rows.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    pub data: &'a Dataset,
    pub idx: &'a [usize],
    pub tag: SplitTag,
}

impl<'a> Rows<'a> {
    pub fn new(data: &'a Dataset, idx: &'a [usize], tag: SplitTag) -> Self {
        Self { data, idx, tag }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        let col = self.data.variable(var);
        self.idx.iter().map(|&i| col[i]).collect()
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.column(self.data.treatment_index())
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.column(self.data.outcome_index())
    }

    pub fn true_cate(&self) -> Option<Vec<f64>> {
        self.data
            .true_cate()
            .map(|tau| self.idx.iter().map(|&i| tau[i]).collect())
    }

    pub fn full_matrix(&self) -> DMatrix<f64> {
        self.data.full_matrix(self.idx)
    }

    pub fn require(&self, stage: &'static str, allowed: &[SplitTag], expected: &'static str) -> Result<()> {
        if allowed.contains(&self.tag) {
            Ok(())
        } else {
            Err(Error::DataLeak {
                stage,
                expected,
                got: self.tag.as_str(),
            })
        }
    }
}

/// Deterministic three-way partition. Calibration and test sizes are
/// `floor(n · fraction)`; the remainder goes to train.
pub fn split_dataset(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ft, fc, fe) = fractions;
    if !(ft > 0.0 && fc > 0.0 && fe > 0.0) {
        return Err(Error::InvalidSplit("fractions must be positive".into()));
    }
    if (ft + fc + fe - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions sum to {}, expected 1",
            ft + fc + fe
        )));
    }
    let n = data.n();
    let n_cal = (n as f64 * fc + 1e-9).floor() as usize;
    let n_test = (n as f64 * fe + 1e-9).floor() as usize;
    if n_cal == 0 || n_test == 0 || n_cal + n_test >= n {
        return Err(Error::InvalidSplit(format!(
            "n = {n} with fractions {fractions:?} leaves an empty split"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut cal = perm[..n_cal].to_vec();
    let mut test = perm[n_cal..n_cal + n_test].to_vec();
    let mut train = perm[n_cal + n_test..].to_vec();
    cal.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();

    let t = data.treatment();
    for arm in [0u8, 1u8] {
        if !train.iter().any(|&i| t[i] == arm as f64) {
            return Err(Error::MissingTreatmentArm { arm, split: "train" });
        }
    }
    Ok(SplitIndices { train, cal, test })
}
