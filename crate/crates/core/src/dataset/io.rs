use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, TemporalStatus, VariableMeta};
use crate::error::{Error, Result};

/// JSON metadata naming the treatment, outcome and post-treatment columns.
///
/// `true_cate` optionally names a column holding the known effect; that
/// column is not treated as a covariate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetadataFile {
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub post_treatment: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_cate: Option<String>,
    /// Edges of the data-generating graph, as `[parent, child]` names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_edges: Option<Vec<(String, String)>>,
}

pub fn load_dataset(path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Dataset> {
    let meta: MetadataFile = serde_json::from_reader(File::open(meta_path)?)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let mut seen = HashSet::new();
    for h in &headers {
        if h.is_empty() {
            return Err(Error::InvalidData("empty column name in header".into()));
        }
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateName(h.clone()));
        }
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&meta.treatment)?;
    let y_col = find(&meta.outcome)?;
    let tau_col = meta.true_cate.as_deref().map(find).transpose()?;
    for name in &meta.post_treatment {
        if !seen.contains(name.as_str()) {
            return Err(Error::UnknownVariable(name.clone()));
        }
        if *name == meta.treatment || *name == meta.outcome {
            return Err(Error::InvalidData(format!("`{name}` cannot be post-treatment")));
        }
    }

    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::InvalidData(format!("row {row} has {} fields", record.len())));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::MissingValue {
                column: headers[j].clone(),
                row,
            })?;
            if !v.is_finite() {
                return Err(Error::MissingValue {
                    column: headers[j].clone(),
                    row,
                });
            }
            raw[j].push(v);
        }
    }

    let post: HashSet<&str> = meta.post_treatment.iter().map(String::as_str).collect();
    let mut columns = Vec::new();
    let mut cov_meta = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut tau = None;
    for (j, col) in raw.into_iter().enumerate() {
        if j == t_col {
            treatment = col;
        } else if j == y_col {
            outcome = col;
        } else if Some(j) == tau_col {
            tau = Some(col);
        } else {
            let status = if post.contains(headers[j].as_str()) {
                TemporalStatus::PostTreatment
            } else {
                TemporalStatus::PreTreatment
            };
            cov_meta.push(VariableMeta::new(headers[j].clone(), status));
            columns.push(col);
        }
    }
    let data = Dataset::new(
        columns,
        cov_meta,
        (meta.treatment, treatment),
        (meta.outcome, outcome),
        tau,
    )?
    .with_description(meta.description);
    match meta.true_edges {
        Some(edges) => {
            let idx = |name: &str| data.index_of(name).ok_or_else(|| Error::UnknownVariable(name.to_string()));
            let edges = edges
                .iter()
                .map(|(u, v)| Ok((idx(u)?, idx(v)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(data.with_true_edges(edges))
        }
        None => Ok(data),
    }
}

/// Writes the data file and its metadata. A known effect is emitted as an
/// extra `true_cate` column referenced from the metadata.
pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
    let names = data.names();
    let mut tau_name = "true_cate".to_string();
    while names.contains(&tau_name) {
        tau_name.push('_');
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = names.clone();
    if data.true_cate().is_some() {
        header.push(tau_name.clone());
    }
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = (0..data.d() + 2).map(|v| format!("{}", data.variable(v)[i])).collect();
        if let Some(tau) = data.true_cate() {
            row.push(format!("{}", tau[i]));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;

    let meta = MetadataFile {
        treatment: names[data.treatment_index()].clone(),
        outcome: names[data.outcome_index()].clone(),
        post_treatment: data
            .meta()
            .iter()
            .filter(|m| m.temporal_status == TemporalStatus::PostTreatment)
            .map(|m| m.name.clone())
            .collect(),
        description: data.description().to_string(),
        true_cate: data.true_cate().map(|_| tau_name),
        true_edges: data
            .true_edges()
            .map(|e| e.iter().map(|&(u, v)| (names[u].clone(), names[v].clone())).collect()),
    };
    serde_json::to_writer_pretty(File::create(meta_path)?, &meta)?;
    Ok(())
}
