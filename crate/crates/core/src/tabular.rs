//! Data model, CSV ingestion, categorical encoding and moderator stratification.
//!
//! A [`Dataset`] is stored column-wise: one vector per covariate plus the
//! binary treatment, moderator and outcome columns and the survey weight.
//! Rows whose analysis variables are missing are dropped during ingestion and
//! counted; anything else that violates the schema is an error naming the
//! offending row and column.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens treated as a missing value.
pub const MISSING_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "."];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    /// Declared levels, in order. The first one is the reference level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl CovariateSpec {
    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Categorical,
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn continuous(name: &str) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Continuous,
            levels: Vec::new(),
        }
    }
}

/// Column roles and covariate declarations for an input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub treatment: String,
    pub moderator: String,
    pub outcome: String,
    #[serde(default)]
    pub survey_weight: Option<String>,
    pub covariates: Vec<CovariateSpec>,
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: SchemaConfig = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        let roles = [&self.treatment, &self.moderator, &self.outcome];
        for name in roles
            .into_iter()
            .chain(self.survey_weight.as_ref())
            .chain(self.covariates.iter().map(|c| &c.name))
        {
            if name.is_empty() {
                return Err(Error::Config("empty column name in schema".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("column `{name}` used twice in schema")));
            }
        }
        for cov in &self.covariates {
            match cov.kind {
                CovariateKind::Categorical => {
                    if cov.levels.len() < 2 {
                        return Err(Error::Config(format!(
                            "categorical covariate `{}` needs at least two levels",
                            cov.name
                        )));
                    }
                    let mut lv = std::collections::BTreeSet::new();
                    for l in &cov.levels {
                        if !lv.insert(l.as_str()) {
                            return Err(Error::Config(format!(
                                "covariate `{}` declares level `{l}` twice",
                                cov.name
                            )));
                        }
                    }
                }
                CovariateKind::Continuous => {
                    if !cov.levels.is_empty() {
                        return Err(Error::Config(format!(
                            "continuous covariate `{}` must not declare levels",
                            cov.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn covariate(&self, name: &str) -> Option<(usize, &CovariateSpec)> {
        self.covariates.iter().enumerate().find(|(_, c)| c.name == name)
    }
}

/// Values of one covariate across rows.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// Index into the declared level list.
    Categorical(Vec<u32>),
    Continuous(Vec<f64>),
}

impl ColumnData {
    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: SchemaConfig,
    /// One entry per schema covariate, same order.
    pub covariates: Vec<ColumnData>,
    pub treatment: Vec<u8>,
    pub moderator: Vec<u8>,
    pub outcome: Vec<u8>,
    pub weights: Vec<f64>,
    /// Zero-based index of each row among the data rows of the source file.
    pub row_ids: Vec<usize>,
    /// Rows dropped at ingestion because an analysis variable was missing.
    pub dropped: usize,
}

impl Dataset {
    /// Builds a dataset from already-parsed columns, checking every invariant.
    pub fn from_columns(
        schema: SchemaConfig,
        covariates: Vec<ColumnData>,
        treatment: Vec<u8>,
        moderator: Vec<u8>,
        outcome: Vec<u8>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = treatment.len();
        if moderator.len() != n || outcome.len() != n || weights.len() != n {
            return Err(Error::Dimension("role columns differ in length".into()));
        }
        if covariates.len() != schema.covariates.len() {
            return Err(Error::Dimension(format!(
                "{} covariate columns for {} declared covariates",
                covariates.len(),
                schema.covariates.len()
            )));
        }
        for (spec, col) in schema.covariates.iter().zip(&covariates) {
            match (spec.kind, col) {
                (CovariateKind::Categorical, ColumnData::Categorical(v)) => {
                    if v.len() != n {
                        return Err(Error::Dimension(format!("column `{}` length", spec.name)));
                    }
                    if let Some(&bad) = v.iter().find(|&&l| l as usize >= spec.levels.len()) {
                        return Err(Error::UnknownLevel {
                            covariate: spec.name.clone(),
                            level: format!("#{bad}"),
                        });
                    }
                }
                (CovariateKind::Continuous, ColumnData::Continuous(v)) => {
                    if v.len() != n {
                        return Err(Error::Dimension(format!("column `{}` length", spec.name)));
                    }
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::Ingest {
                            row: i,
                            column: spec.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "column `{}` does not match its declared kind",
                        spec.name
                    )))
                }
            }
        }
        for (name, col) in [
            (&schema.treatment, &treatment),
            (&schema.moderator, &moderator),
            (&schema.outcome, &outcome),
        ] {
            if let Some(i) = col.iter().position(|&v| v > 1) {
                return Err(Error::Ingest {
                    row: i,
                    column: name.clone(),
                    message: format!("value {} is not binary", col[i]),
                });
            }
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Ingest {
                row: i,
                column: schema.survey_weight.clone().unwrap_or_else(|| "weight".into()),
                message: format!("weight {} is not finite and positive", weights[i]),
            });
        }
        Ok(Dataset {
            schema,
            covariates,
            treatment,
            moderator,
            outcome,
            weights,
            row_ids: (0..n).collect(),
            dropped: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    /// Rows at the given positions, in the given order. Metadata is kept.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            covariates: self.covariates.iter().map(|c| c.select(rows)).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            moderator: rows.iter().map(|&i| self.moderator[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            weights: rows.iter().map(|&i| self.weights[i]).collect(),
            row_ids: rows.iter().map(|&i| self.row_ids[i]).collect(),
            dropped: self.dropped,
        }
    }

    /// Positions of the rows with moderator value `z`.
    pub fn stratum_rows(&self, z: u8) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.moderator[i] == z).collect()
    }

    /// Row counts of the four (treatment, moderator) cells, indexed `[t][z]`.
    pub fn cell_counts(&self) -> [[usize; 2]; 2] {
        let mut counts = [[0usize; 2]; 2];
        for (&t, &z) in self.treatment.iter().zip(&self.moderator) {
            counts[t as usize][z as usize] += 1;
        }
        counts
    }

    /// Fails unless every (treatment, moderator) cell holds at least two rows.
    ///
    /// Only the moderator levels that occur in the data are checked, so a
    /// single stratum passes as long as both arms are populated.
    pub fn check_cells(&self) -> Result<()> {
        let counts = self.cell_counts();
        for z in 0..2u8 {
            let present = counts[0][z as usize] + counts[1][z as usize] > 0;
            if !present {
                continue;
            }
            for t in 0..2u8 {
                let count = counts[t as usize][z as usize];
                if count < 2 {
                    return Err(Error::SparseCell {
                        treatment: t,
                        moderator: z,
                        count,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&t| t as f64).collect()
    }

    pub fn outcome_f64(&self) -> Vec<f64> {
        self.outcome.iter().map(|&t| t as f64).collect()
    }
}

fn is_missing(field: &str) -> bool {
    MISSING_TOKENS.contains(&field.trim())
}

fn parse_binary(field: &str, row: usize, column: &str) -> Result<u8> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Ingest {
        row,
        column: column.to_string(),
        message: format!("`{field}` is not a number"),
    })?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Ingest {
            row,
            column: column.to_string(),
            message: format!("value `{field}` is not binary (0/1)"),
        })
    }
}

/// Reads a CSV (header row required) according to `schema`.
///
/// Row numbers in errors are zero-based data-row indices (the header is not
/// counted). Rows with a missing analysis variable are dropped and counted
/// in [`Dataset::dropped`].
pub fn load_dataset<R: Read>(source: R, schema: &SchemaConfig) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_idx = find(&schema.treatment)?;
    let z_idx = find(&schema.moderator)?;
    let y_idx = find(&schema.outcome)?;
    let w_idx = schema.survey_weight.as_deref().map(find).transpose()?;
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut covariates: Vec<ColumnData> = schema
        .covariates
        .iter()
        .map(|c| match c.kind {
            CovariateKind::Categorical => ColumnData::Categorical(Vec::new()),
            CovariateKind::Continuous => ColumnData::Continuous(Vec::new()),
        })
        .collect();
    let (mut treatment, mut moderator, mut outcome, mut weights, mut row_ids) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0usize;

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut needed = vec![t_idx, z_idx, y_idx];
        needed.extend(w_idx);
        needed.extend(&cov_idx);
        if needed.iter().any(|&i| is_missing(field(i))) {
            dropped += 1;
            continue;
        }
        let t = parse_binary(field(t_idx), row, &schema.treatment)?;
        let z = parse_binary(field(z_idx), row, &schema.moderator)?;
        let y = parse_binary(field(y_idx), row, &schema.outcome)?;
        let w = match (w_idx, &schema.survey_weight) {
            (Some(i), Some(name)) => {
                let raw = field(i).trim();
                let w: f64 = raw.parse().map_err(|_| Error::Ingest {
                    row,
                    column: name.clone(),
                    message: format!("`{raw}` is not a number"),
                })?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Ingest {
                        row,
                        column: name.clone(),
                        message: format!("weight {w} is not finite and positive"),
                    });
                }
                w
            }
            _ => 1.0,
        };
        for ((spec, &i), col) in schema.covariates.iter().zip(&cov_idx).zip(covariates.iter_mut()) {
            let raw = field(i).trim();
            match col {
                ColumnData::Categorical(v) => {
                    let level = spec.levels.iter().position(|l| l == raw).ok_or_else(|| {
                        Error::Ingest {
                            row,
                            column: spec.name.clone(),
                            message: format!("level `{raw}` is not declared"),
                        }
                    })?;
                    v.push(level as u32);
                }
                ColumnData::Continuous(v) => {
                    let x: f64 = raw.parse().map_err(|_| Error::Ingest {
                        row,
                        column: spec.name.clone(),
                        message: format!("`{raw}` is not a number"),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Ingest {
                            row,
                            column: spec.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                    v.push(x);
                }
            }
        }
        treatment.push(t);
        moderator.push(z);
        outcome.push(y);
        weights.push(w);
        row_ids.push(row);
    }

    Ok(Dataset {
        schema: schema.clone(),
        covariates,
        treatment,
        moderator,
        outcome,
        weights,
        row_ids,
        dropped,
    })
}

/// Rows with moderator value `z`. Fails on an empty stratum.
pub fn stratify(ds: &Dataset, z: u8) -> Result<Dataset> {
    let rows = ds.stratum_rows(z);
    if rows.is_empty() {
        return Err(Error::EmptyStratum(z));
    }
    Ok(ds.select(&rows))
}

/// Identifies a design column: the covariate and, for indicators, the level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub covariate: String,
    pub level: Option<String>,
}

impl std::fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.level {
            Some(level) => write!(f, "{}={}", self.covariate, level),
            None => f.write_str(&self.covariate),
        }
    }
}

/// Dense numeric design, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<ColumnLabel>,
}

impl DesignMatrix {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            n_rows: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn push_column(&mut self, label: ColumnLabel, values: Vec<f64>) {
        assert_eq!(values.len(), self.n_rows, "column length mismatch");
        self.labels.push(label);
        self.columns.push(values);
    }
}

fn encode_with(ds: &Dataset, include_moderator: bool, drop_reference: bool) -> Result<DesignMatrix> {
    let n = ds.n_rows();
    let mut design = DesignMatrix {
        n_rows: n,
        columns: Vec::new(),
        labels: Vec::new(),
    };
    for (spec, col) in ds.schema.covariates.iter().zip(&ds.covariates) {
        match col {
            ColumnData::Categorical(v) => {
                if let Some(&bad) = v.iter().find(|&&l| l as usize >= spec.levels.len()) {
                    return Err(Error::UnknownLevel {
                        covariate: spec.name.clone(),
                        level: format!("#{bad}"),
                    });
                }
                let first = usize::from(drop_reference);
                for (k, level) in spec.levels.iter().enumerate().skip(first) {
                    let values = v.iter().map(|&l| if l as usize == k { 1.0 } else { 0.0 }).collect();
                    design.push_column(
                        ColumnLabel {
                            covariate: spec.name.clone(),
                            level: Some(level.clone()),
                        },
                        values,
                    );
                }
            }
            ColumnData::Continuous(v) => design.push_column(
                ColumnLabel {
                    covariate: spec.name.clone(),
                    level: None,
                },
                v.clone(),
            ),
        }
    }
    if include_moderator {
        design.push_column(
            ColumnLabel {
                covariate: ds.schema.moderator.clone(),
                level: None,
            },
            ds.moderator.iter().map(|&z| z as f64).collect(),
        );
    }
    Ok(design)
}

/// Reference-coded design: each categorical covariate with `L` levels gives
/// `L - 1` indicators (first declared level dropped), continuous covariates
/// pass through, and the moderator is appended last when requested.
pub fn encode(ds: &Dataset, include_moderator: bool) -> Result<DesignMatrix> {
    encode_with(ds, include_moderator, true)
}

/// One indicator per categorical level, reference level included.
///
/// Used for balance diagnostics and as the input of the boosted propensity
/// model, where every level should be separable by a single split.
pub fn encode_full(ds: &Dataset, include_moderator: bool) -> Result<DesignMatrix> {
    encode_with(ds, include_moderator, false)
}
