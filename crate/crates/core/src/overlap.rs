//! Covariate overlap across treatment arms within each moderator level.
//!
//! Categorical covariates are cross-tabulated by (level, T, Z); a level that
//! is never observed in some (T, Z) cell is an empty cell. Continuous
//! covariates get per-cell order statistics, and a range violation is raised
//! when one arm's observed values lie entirely outside the other arm's
//! [min, max] within a stratum.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{ColumnData, CovariateKind, Dataset};

/// Counts and survey-weighted proportions of one categorical covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub covariate: String,
    pub levels: Vec<String>,
    /// `counts[level][t][z]`.
    pub counts: Vec<[[usize; 2]; 2]>,
    /// Survey-weighted share of each level within its (t, z) cell; NaN for
    /// an empty cell.
    pub proportions: Vec<[[f64; 2]; 2]>,
}

impl ContingencyTable {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().flatten().sum()
    }
}

pub fn crosstab(ds: &Dataset, covariate: &str) -> Result<ContingencyTable> {
    let (idx, spec) = ds
        .schema
        .covariate(covariate)
        .ok_or_else(|| Error::UnknownCovariate(covariate.to_string()))?;
    let ColumnData::Categorical(codes) = &ds.covariates[idx] else {
        return Err(Error::Config(format!("crosstab needs a categorical covariate; `{covariate}` is continuous")));
    };
    let nl = spec.levels.len();
    let mut counts = vec![[[0usize; 2]; 2]; nl];
    let mut wsum = vec![[[0.0f64; 2]; 2]; nl];
    let mut cell_w = [[0.0f64; 2]; 2];
    for i in 0..ds.n_rows() {
        let (l, t, z) = (codes[i] as usize, ds.treatment[i] as usize, ds.moderator[i] as usize);
        counts[l][t][z] += 1;
        wsum[l][t][z] += ds.weights[i];
        cell_w[t][z] += ds.weights[i];
    }
    let proportions = wsum
        .iter()
        .map(|w| {
            let mut p = [[f64::NAN; 2]; 2];
            for t in 0..2 {
                for z in 0..2 {
                    if cell_w[t][z] > 0.0 {
                        p[t][z] = w[t][z] / cell_w[t][z];
                    }
                }
            }
            p
        })
        .collect();
    Ok(ContingencyTable {
        covariate: covariate.to_string(),
        levels: spec.levels.clone(),
        counts,
        proportions,
    })
}

/// Order statistics of a continuous covariate in one (T, Z) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub treatment: u8,
    pub moderator: u8,
    pub n: usize,
    pub min: f64,
    pub q01: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q99: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSummary {
    pub covariate: String,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyCell {
    pub covariate: String,
    pub level: String,
    pub treatment: u8,
    pub moderator: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Every value of the arm is below the other arm's minimum.
    Below,
    /// Every value of the arm is above the other arm's maximum.
    Above,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub covariate: String,
    /// Arm whose support lies outside the other's hull.
    pub treatment: u8,
    pub moderator: u8,
    pub direction: Direction,
}

/// Treated minus control 1st and 99th percentiles within a stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileGap {
    pub covariate: String,
    pub moderator: u8,
    pub q01_gap: f64,
    pub q99_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub n_rows: usize,
    pub categorical: Vec<ContingencyTable>,
    pub continuous: Vec<ContinuousSummary>,
    pub empty_cells: Vec<EmptyCell>,
    pub range_violations: Vec<RangeViolation>,
    pub percentile_gaps: Vec<PercentileGap>,
}

impl OverlapReport {
    pub fn is_clean(&self) -> bool {
        self.empty_cells.is_empty() && self.range_violations.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text tables: level percentages per (T, Z) cell for categorical
    /// covariates, order statistics for continuous ones, then findings.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Overlap audit ({} rows)", self.n_rows);
        let _ = writeln!(s);
        for tab in &self.categorical {
            let _ = writeln!(
                s,
                "{:<24} {:>14} {:>14} {:>14} {:>14}",
                tab.covariate, "T=0,Z=0", "T=1,Z=0", "T=0,Z=1", "T=1,Z=1"
            );
            for (k, level) in tab.levels.iter().enumerate() {
                let _ = write!(s, "  {level:<22}");
                for z in 0..2 {
                    for t in 0..2 {
                        let cell = format!("{} ({:.1}%)", tab.counts[k][t][z], 100.0 * tab.proportions[k][t][z]);
                        let _ = write!(s, " {cell:>14}");
                    }
                }
                let _ = writeln!(s);
            }
            let _ = writeln!(s);
        }
        for c in &self.continuous {
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
                c.covariate, "n", "min", "q01", "median", "q99", "max"
            );
            for cell in &c.cells {
                let _ = writeln!(
                    s,
                    "  T={},Z={}{:<14} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                    cell.treatment, cell.moderator, "", cell.n, cell.min, cell.q01, cell.median, cell.q99, cell.max
                );
            }
            let _ = writeln!(s);
        }
        if self.is_clean() {
            let _ = writeln!(s, "No empty cells and no range violations.");
        }
        for e in &self.empty_cells {
            let _ = writeln!(
                s,
                "EMPTY CELL: {}={} has no rows with T={}, Z={}",
                e.covariate, e.level, e.treatment, e.moderator
            );
        }
        for v in &self.range_violations {
            let dir = match v.direction {
                Direction::Below => "below",
                Direction::Above => "above",
            };
            let _ = writeln!(
                s,
                "RANGE VIOLATION: {} with T={} lies entirely {dir} the other arm within Z={}",
                v.covariate, v.treatment, v.moderator
            );
        }
        s
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn moderator_levels(ds: &Dataset) -> Vec<u8> {
    (0..2u8).filter(|&z| ds.moderator.contains(&z)).collect()
}

/// Audits every schema covariate. Empty cells are only sought within
/// moderator levels that occur in the data.
pub fn overlap_report(ds: &Dataset) -> Result<OverlapReport> {
    let strata = moderator_levels(ds);
    let mut report = OverlapReport {
        n_rows: ds.n_rows(),
        categorical: Vec::new(),
        continuous: Vec::new(),
        empty_cells: Vec::new(),
        range_violations: Vec::new(),
        percentile_gaps: Vec::new(),
    };
    for (spec, col) in ds.schema.covariates.iter().zip(&ds.covariates) {
        match (spec.kind, col) {
            (CovariateKind::Categorical, ColumnData::Categorical(_)) => {
                let tab = crosstab(ds, &spec.name)?;
                for (k, level) in tab.levels.iter().enumerate() {
                    for &z in &strata {
                        for t in 0..2u8 {
                            if tab.counts[k][t as usize][z as usize] == 0 {
                                report.empty_cells.push(EmptyCell {
                                    covariate: spec.name.clone(),
                                    level: level.clone(),
                                    treatment: t,
                                    moderator: z,
                                });
                            }
                        }
                    }
                }
                report.categorical.push(tab);
            }
            (_, ColumnData::Continuous(x)) => {
                let mut cells = Vec::new();
                for &z in &strata {
                    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
                    for i in 0..ds.n_rows() {
                        if ds.moderator[i] == z {
                            arms[ds.treatment[i] as usize].push(x[i]);
                        }
                    }
                    for a in &mut arms {
                        a.sort_by(f64::total_cmp);
                    }
                    for t in 0..2u8 {
                        let v = &arms[t as usize];
                        cells.push(CellSummary {
                            treatment: t,
                            moderator: z,
                            n: v.len(),
                            min: v.first().copied().unwrap_or(f64::NAN),
                            q01: quantile(v, 0.01),
                            q25: quantile(v, 0.25),
                            median: quantile(v, 0.5),
                            q75: quantile(v, 0.75),
                            q99: quantile(v, 0.99),
                            max: v.last().copied().unwrap_or(f64::NAN),
                        });
                    }
                    let [c, tr] = &arms;
                    if c.is_empty() || tr.is_empty() {
                        continue;
                    }
                    report.percentile_gaps.push(PercentileGap {
                        covariate: spec.name.clone(),
                        moderator: z,
                        q01_gap: quantile(tr, 0.01) - quantile(c, 0.01),
                        q99_gap: quantile(tr, 0.99) - quantile(c, 0.99),
                    });
                    for (t, own, other) in [(1u8, tr, c), (0u8, c, tr)] {
                        let direction = if own.last() < other.first() {
                            Some(Direction::Below)
                        } else if own.first() > other.last() {
                            Some(Direction::Above)
                        } else {
                            None
                        };
                        if let Some(direction) = direction {
                            report.range_violations.push(RangeViolation {
                                covariate: spec.name.clone(),
                                treatment: t,
                                moderator: z,
                                direction,
                            });
                        }
                    }
                }
                report.continuous.push(ContinuousSummary {
                    covariate: spec.name.clone(),
                    cells,
                });
            }
            (_, ColumnData::Categorical(_)) => unreachable!("schema and column kinds agree"),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{CovariateSpec, SchemaConfig};

    fn schema(covs: Vec<CovariateSpec>) -> SchemaConfig {
        SchemaConfig {
            treatment: "t".into(),
            moderator: "z".into(),
            outcome: "y".into(),
            survey_weight: None,
            covariates: covs,
        }
    }

    fn six_rows() -> Dataset {
        Dataset::from_columns(
            schema(vec![CovariateSpec::categorical("job", &["work", "student"])]),
            vec![ColumnData::Categorical(vec![0, 0, 1, 0, 1, 0])],
            vec![1, 0, 0, 1, 0, 0],
            vec![0, 0, 1, 1, 1, 0],
            vec![0, 1, 0, 1, 0, 1],
            vec![1.0; 6],
        )
        .unwrap()
    }

    #[test]
    fn crosstab_matches_hand_tally() {
        let tab = crosstab(&six_rows(), "job").unwrap();
        // [level][t][z]
        assert_eq!(tab.counts[0], [[2, 0], [1, 1]]);
        assert_eq!(tab.counts[1], [[0, 2], [0, 0]]);
        assert_eq!(tab.total(), 6);
        assert_eq!(tab.proportions[1][0][1], 1.0);
        assert!(tab.proportions[1][1][0].abs() < 1e-15);
    }

    #[test]
    fn level_seen_only_in_one_arm_is_an_empty_cell() {
        let r = overlap_report(&six_rows()).unwrap();
        let student: Vec<_> = r.empty_cells.iter().filter(|e| e.level == "student").collect();
        assert_eq!(student.len(), 3);
        assert!(student.iter().any(|e| e.treatment == 1 && e.moderator == 1));
        assert!(!r.is_clean());
    }

    #[test]
    fn single_row_crosstab() {
        let ds = Dataset::from_columns(
            schema(vec![CovariateSpec::categorical("a", &["x", "y"])]),
            vec![ColumnData::Categorical(vec![1])],
            vec![1],
            vec![0],
            vec![0],
            vec![1.0],
        )
        .unwrap();
        let tab = crosstab(&ds, "a").unwrap();
        assert_eq!(tab.total(), 1);
        assert_eq!(tab.counts[1][1][0], 1);
    }

    #[test]
    fn disjoint_continuous_supports_are_flagged() {
        let ds = Dataset::from_columns(
            schema(vec![CovariateSpec::continuous("x")]),
            vec![ColumnData::Continuous(vec![0.0, 1.0, 2.0, 3.0])],
            vec![1, 1, 0, 0],
            vec![0; 4],
            vec![0, 1, 0, 1],
            vec![1.0; 4],
        )
        .unwrap();
        let r = overlap_report(&ds).unwrap();
        assert_eq!(r.range_violations.len(), 2);
        assert_eq!(r.range_violations[0].treatment, 1);
        assert_eq!(r.range_violations[0].direction, Direction::Below);
        assert_eq!(r.range_violations[1].direction, Direction::Above);
        assert!(r.to_text().contains("RANGE VIOLATION"));
    }

    #[test]
    fn unknown_and_continuous_covariates_are_rejected() {
        let ds = six_rows();
        assert!(matches!(crosstab(&ds, "nope"), Err(Error::UnknownCovariate(_))));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile(&[4.0], 0.99), 4.0);
    }
}
