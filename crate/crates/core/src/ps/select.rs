//! Balance criterion along the boosting path and the stopping-iteration search.

use serde::{Deserialize, Serialize};

use super::boost::{BoostedModel, ScoreCursor, StopMethod};
use super::tree::BinnedDesign;
use super::weights::ate_weight;
use crate::balance::pooled_sd;
use crate::tabular::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub ks_max: f64,
    pub es_max: f64,
}

impl TracePoint {
    pub fn value(&self, method: StopMethod) -> f64 {
        match method {
            StopMethod::KsMax => self.ks_max,
            StopMethod::EsMax => self.es_max,
        }
    }
}

/// Everything needed to score balance of composite weights over a design.
pub struct CriterionData<'a> {
    binned: &'a BinnedDesign,
    columns: &'a [Vec<f64>],
    treatment: Vec<u8>,
    survey: &'a [f64],
    sd: Vec<f64>,
}

impl<'a> CriterionData<'a> {
    pub fn new(binned: &'a BinnedDesign, design: &'a DesignMatrix, treatment: &[f64], survey: &'a [f64]) -> Self {
        let sd = design.columns.iter().map(|c| pooled_sd(c, survey)).collect();
        CriterionData {
            binned,
            columns: &design.columns,
            treatment: treatment.iter().map(|&t| t as u8).collect(),
            survey,
            sd,
        }
    }

    /// `(ks_max, es_max)` of the ATE composite weights implied by `propensities`.
    pub fn evaluate(&self, propensities: &[f64]) -> (f64, f64) {
        let n = self.treatment.len();
        let w: Vec<f64> = (0..n)
            .map(|i| ate_weight(propensities[i], self.treatment[i]) * self.survey[i])
            .collect();
        let (mut w1, mut w0) = (0.0, 0.0);
        for (&t, &wi) in self.treatment.iter().zip(&w) {
            if t == 1 {
                w1 += wi
            } else {
                w0 += wi
            }
        }

        let d = self.binned;
        let mut hist = vec![[0.0f64; 2]; d.total_bins];
        for (r, (&t, &wi)) in self.treatment.iter().zip(&w).enumerate() {
            let arm = t as usize;
            for &b in d.flat_row(r) {
                hist[b as usize][arm] += wi;
            }
        }

        let mut ks_max = 0.0f64;
        let mut es_max = 0.0f64;
        for c in 0..d.n_cols {
            let nb = d.values[c].len();
            let (mut c1, mut c0) = (0.0, 0.0);
            for cell in &hist[d.offsets[c]..d.offsets[c] + nb] {
                c0 += cell[0];
                c1 += cell[1];
                ks_max = ks_max.max((c1 / w1 - c0 / w0).abs());
            }
            if self.sd[c] > 0.0 {
                let (mut s1, mut s0, mut sw1, mut sw0) = (0.0, 0.0, 0.0, 0.0);
                for ((&x, &t), &wi) in self.columns[c].iter().zip(&self.treatment).zip(&w) {
                    if t == 1 {
                        s1 += wi * x;
                        sw1 += wi;
                    } else {
                        s0 += wi * x;
                        sw0 += wi;
                    }
                }
                es_max = es_max.max(((s1 / sw1 - s0 / sw0) / self.sd[c]).abs());
            }
        }
        (ks_max.min(1.0), es_max)
    }
}

/// Balance criterion of `model` after `iteration` trees, with composite
/// weights `ate_weight * sample_weight`.
pub fn evaluate_criterion(
    model: &BoostedModel,
    iteration: usize,
    design: &DesignMatrix,
    treatment: &[f64],
    sample_weights: &[f64],
) -> (f64, f64) {
    let binned = BinnedDesign::new(design);
    let data = CriterionData::new(&binned, design, treatment, sample_weights);
    data.evaluate(&model.propensities(design, iteration))
}

/// Coarse-to-fine search for the iteration minimizing a criterion.
///
/// Evaluates `0, stride, 2*stride, ...` and `n_trees`, then every iteration
/// within `stride` of the coarse minimum. The result is the minimum over all
/// evaluated points, smallest iteration on ties. `eval` is called in
/// ascending order within each pass. Returns the selected iteration and the
/// evaluated points sorted by iteration.
pub fn select_iteration_by<F>(n_trees: usize, stride: usize, mut eval: F) -> (usize, Vec<(usize, f64)>)
where
    F: FnMut(usize) -> f64,
{
    let stride = stride.max(1);
    let mut points: Vec<(usize, f64)> = Vec::new();
    let mut it = 0;
    loop {
        points.push((it, eval(it)));
        if it == n_trees {
            break;
        }
        it = (it + stride).min(n_trees);
    }
    let coarse = argmin(&points);
    let lo = coarse.saturating_sub(stride);
    let hi = (coarse + stride).min(n_trees);
    for it in lo..=hi {
        if points.iter().all(|&(i, _)| i != it) {
            points.push((it, eval(it)));
        }
    }
    points.sort_by_key(|&(i, _)| i);
    (argmin(&points), points)
}

fn argmin(points: &[(usize, f64)]) -> usize {
    let mut best = points[0];
    for &(i, v) in &points[1..] {
        if v < best.1 || (v == best.1 && i < best.0) {
            best = (i, v);
        }
    }
    best.0
}

/// Runs the stopping search for a trained model and returns the selected
/// iteration together with the full criterion trace.
pub fn select_iteration(
    model: &BoostedModel,
    binned: &BinnedDesign,
    data: &CriterionData<'_>,
    method: StopMethod,
    stride: usize,
) -> (usize, Vec<TracePoint>) {
    let mut cursor = ScoreCursor::new(model, binned);
    let mut trace: Vec<TracePoint> = Vec::new();
    let (selected, _) = select_iteration_by(model.n_iterations(), stride, |it| {
        cursor.seek(it);
        let (ks_max, es_max) = data.evaluate(&cursor.propensities());
        let point = TracePoint {
            iteration: it,
            ks_max,
            es_max,
        };
        trace.push(point);
        point.value(method)
    });
    trace.sort_by_key(|p| p.iteration);
    (selected, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_trace_selects_last() {
        let (sel, _) = select_iteration_by(100, 10, |i| -(i as f64));
        assert_eq!(sel, 100);
    }

    #[test]
    fn interior_minimum_is_refined() {
        let (sel, pts) = select_iteration_by(1000, 10, |i| (i as f64 - 137.0).powi(2));
        assert_eq!(sel, 137);
        assert!(pts.iter().any(|&(i, _)| i == 1000));
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn flat_trace_selects_first_point() {
        let (sel, _) = select_iteration_by(50, 10, |_| 1.0);
        assert_eq!(sel, 0);
    }

    #[test]
    fn endpoint_is_included_when_not_on_stride() {
        let (_, pts) = select_iteration_by(25, 10, |i| i as f64);
        let its: Vec<usize> = pts.iter().map(|p| p.0).collect();
        assert!(its.contains(&25));
        assert!(its.contains(&0));
    }
}
