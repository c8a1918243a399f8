//! Covariate balance: weighted standardized mean differences, weighted
//! Kolmogorov–Smirnov statistics and pre/post weighting balance tables.
//!
//! The SMD denominator is the weighted standard deviation of the covariate
//! over the whole stratum, computed once with survey weights and reused for
//! both phases, so pre- and post-weighting SMDs share a scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ps::{PropensityFit, Stratum};
use crate::tabular::{encode_full, ColumnLabel, Dataset};

/// Flag threshold applied to both |SMD| and KS.
pub const BALANCE_THRESHOLD: f64 = 0.10;

/// Weighted mean of `x` over rows with `t == arm`. Returns `None` for an empty arm.
pub fn arm_mean(x: &[f64], t: &[u8], w: &[f64], arm: u8) -> Option<f64> {
    let (mut sw, mut swx) = (0.0, 0.0);
    for ((&xi, &ti), &wi) in x.iter().zip(t).zip(w) {
        if ti == arm {
            sw += wi;
            swx += wi * xi;
        }
    }
    (sw > 0.0).then(|| swx / sw)
}

/// Weighted (population) standard deviation of `x` over all rows.
pub fn pooled_sd(x: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mean = x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() / sw;
    let var = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| wi * (xi - mean) * (xi - mean))
        .sum::<f64>()
        / sw;
    var.max(0.0).sqrt()
}

fn check_lengths(x: &[f64], t: &[u8], w: &[f64]) -> Result<()> {
    if x.len() != t.len() || x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "x has {} rows, t {}, w {}",
            x.len(),
            t.len(),
            w.len()
        )));
    }
    Ok(())
}

/// SMD with an explicit denominator `sd`.
pub fn smd_with_sd(x: &[f64], t: &[u8], w: &[f64], sd: f64) -> Result<f64> {
    check_lengths(x, t, w)?;
    let m1 = arm_mean(x, t, w, 1).ok_or(Error::SingleClass("treatment"))?;
    let m0 = arm_mean(x, t, w, 0).ok_or(Error::SingleClass("treatment"))?;
    let diff = m1 - m0;
    if sd > 0.0 {
        return Ok(diff / sd);
    }
    let scale = m1.abs().max(m0.abs()).max(1.0);
    if diff.abs() <= 1e-12 * scale {
        Ok(0.0)
    } else {
        Err(Error::UndefinedBalance(format!("difference {diff:e}")))
    }
}

/// Weighted SMD: `(mean_T - mean_C) / sd`, with `sd` the weighted standard
/// deviation of `x` over both arms under the same weights.
pub fn weighted_smd(x: &[f64], t: &[u8], w: &[f64]) -> Result<f64> {
    check_lengths(x, t, w)?;
    smd_with_sd(x, t, w, pooled_sd(x, w))
}

/// Weighted two-sample KS statistic: the largest gap between the
/// right-continuous weighted ECDFs of the two arms, over observed values.
pub fn weighted_ks(x: &[f64], t: &[u8], w: &[f64]) -> Result<f64> {
    check_lengths(x, t, w)?;
    let (mut w1, mut w0) = (0.0, 0.0);
    for (&ti, &wi) in t.iter().zip(w) {
        if ti == 1 {
            w1 += wi
        } else {
            w0 += wi
        }
    }
    if w1 <= 0.0 || w0 <= 0.0 {
        return Err(Error::SingleClass("treatment"));
    }
    if x.iter().all(|&v| v == 0.0 || v == 1.0) {
        // Binary column: the ECDF gap is the proportion difference.
        let d = arm_mean(x, t, w, 1).unwrap_or(0.0) - arm_mean(x, t, w, 0).unwrap_or(0.0);
        return Ok(d.abs());
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let (mut f1, mut f0, mut best) = (0.0f64, 0.0f64, 0.0f64);
    let mut k = 0;
    while k < order.len() {
        let v = x[order[k]];
        while k < order.len() && x[order[k]] == v {
            let i = order[k];
            if t[i] == 1 {
                f1 += w[i] / w1;
            } else {
                f0 += w[i] / w0;
            }
            k += 1;
        }
        best = best.max((f1 - f0).abs());
    }
    Ok(best.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub stratum: Stratum,
    pub covariate: String,
    pub level: Option<String>,
    pub phase: Phase,
    pub mean_treated: f64,
    pub mean_control: f64,
    pub smd: f64,
    pub ks: f64,
    pub flag_smd: bool,
    pub flag_ks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub stratum: Stratum,
    pub phase: Phase,
    pub max_abs_smd: f64,
    pub max_ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
    pub summary: Vec<BalanceSummary>,
}

impl BalanceTable {
    pub fn rows_for(&self, stratum: Stratum) -> impl Iterator<Item = &BalanceRow> {
        self.rows.iter().filter(move |r| r.stratum == stratum)
    }

    pub fn summary_for(&self, stratum: Stratum, phase: Phase) -> Option<&BalanceSummary> {
        self.summary
            .iter()
            .find(|s| s.stratum == stratum && s.phase == phase)
    }

    /// Post-weighting rows that exceed the threshold on either statistic.
    pub fn post_flags(&self) -> Vec<&BalanceRow> {
        self.rows
            .iter()
            .filter(|r| r.phase == Phase::Post && (r.flag_smd || r.flag_ks))
            .collect()
    }
}

/// Balance of one set of columns under survey weights and under composite weights.
pub(crate) fn stratum_rows(
    stratum: Stratum,
    labels: &[ColumnLabel],
    columns: &[Vec<f64>],
    t: &[u8],
    survey: &[f64],
    composite: &[f64],
) -> Result<Vec<BalanceRow>> {
    let mut out = Vec::with_capacity(labels.len() * 2);
    for phase in [Phase::Pre, Phase::Post] {
        let w = match phase {
            Phase::Pre => survey,
            Phase::Post => composite,
        };
        for (label, x) in labels.iter().zip(columns) {
            let sd = pooled_sd(x, survey);
            let smd = smd_with_sd(x, t, w, sd).map_err(|e| match e {
                Error::UndefinedBalance(m) => Error::UndefinedBalance(format!("{label}: {m}")),
                other => other,
            })?;
            let ks = weighted_ks(x, t, w)?;
            out.push(BalanceRow {
                stratum,
                covariate: label.covariate.clone(),
                level: label.level.clone(),
                phase,
                mean_treated: arm_mean(x, t, w, 1).unwrap_or(f64::NAN),
                mean_control: arm_mean(x, t, w, 0).unwrap_or(f64::NAN),
                smd,
                ks,
                flag_smd: smd.abs() > BALANCE_THRESHOLD,
                flag_ks: ks > BALANCE_THRESHOLD,
            });
        }
    }
    Ok(out)
}

/// Pre/post balance for every covariate level within every moderator stratum.
///
/// `fits` index rows of `ds` through [`PropensityFit::rows`]. A pooled fit is
/// split by moderator level so balance is still judged within strata.
pub fn balance_table(ds: &Dataset, fits: &[PropensityFit]) -> Result<BalanceTable> {
    let full = encode_full(ds, false)?;
    let mut rows = Vec::new();
    for fit in fits {
        let groups: Vec<(Stratum, Vec<usize>)> = match fit.stratum {
            Stratum::Level(z) => vec![(Stratum::Level(z), (0..fit.rows.len()).collect())],
            Stratum::Pooled => (0..2u8)
                .map(|z| {
                    let idx: Vec<usize> = (0..fit.rows.len())
                        .filter(|&k| ds.moderator[fit.rows[k]] == z)
                        .collect();
                    (Stratum::Level(z), idx)
                })
                .filter(|(_, idx)| !idx.is_empty())
                .collect(),
        };
        for (stratum, local) in groups {
            let global: Vec<usize> = local.iter().map(|&k| fit.rows[k]).collect();
            let t: Vec<u8> = global.iter().map(|&i| ds.treatment[i]).collect();
            let survey: Vec<f64> = global.iter().map(|&i| ds.weights[i]).collect();
            let composite: Vec<f64> = local.iter().map(|&k| fit.composite_weights[k]).collect();
            let columns: Vec<Vec<f64>> = full
                .columns
                .iter()
                .map(|c| global.iter().map(|&i| c[i]).collect())
                .collect();
            rows.extend(stratum_rows(stratum, &full.labels, &columns, &t, &survey, &composite)?);
        }
    }
    let summary = summarize(&rows);
    Ok(BalanceTable { rows, summary })
}

fn summarize(rows: &[BalanceRow]) -> Vec<BalanceSummary> {
    let mut summary: Vec<BalanceSummary> = Vec::new();
    for r in rows {
        match summary
            .iter_mut()
            .find(|s| s.stratum == r.stratum && s.phase == r.phase)
        {
            Some(s) => {
                s.max_abs_smd = s.max_abs_smd.max(r.smd.abs());
                s.max_ks = s.max_ks.max(r.ks);
            }
            None => summary.push(BalanceSummary {
                stratum: r.stratum,
                phase: r.phase,
                max_abs_smd: r.smd.abs(),
                max_ks: r.ks,
            }),
        }
    }
    summary
}

/// Balance of an arbitrary weight vector over a dataset, within each
/// moderator level present. Handy when weights come from outside the
/// boosted engine.
pub fn balance_with_weights(ds: &Dataset, composite: &[f64]) -> Result<BalanceTable> {
    if composite.len() != ds.n_rows() {
        return Err(Error::Dimension("weights length differs from dataset".into()));
    }
    let full = encode_full(ds, false)?;
    let mut rows = Vec::new();
    for z in 0..2u8 {
        let idx = ds.stratum_rows(z);
        if idx.is_empty() {
            continue;
        }
        let t: Vec<u8> = idx.iter().map(|&i| ds.treatment[i]).collect();
        let survey: Vec<f64> = idx.iter().map(|&i| ds.weights[i]).collect();
        let comp: Vec<f64> = idx.iter().map(|&i| composite[i]).collect();
        let columns: Vec<Vec<f64>> = full
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        rows.extend(stratum_rows(Stratum::Level(z), &full.labels, &columns, &t, &survey, &comp)?);
    }
    let summary = summarize(&rows);
    Ok(BalanceTable { rows, summary })
}
