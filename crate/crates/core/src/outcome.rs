//! Composite-weighted logistic outcome model.
//!
//! The outcome is regressed on an intercept, the treatment, the moderator,
//! their product and the encoded covariates. Coefficients come from IRLS on
//! the weighted Bernoulli likelihood; the covariance is the sandwich
//! `A^-1 B A^-1` that treats the weights as fixed. Moderated risk
//! differences are obtained by g-computation with delta-method standard
//! errors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ps::{expit, Stratum};
use crate::tabular::{encode, ColumnLabel, Dataset, DesignMatrix};

pub const MAX_IRLS_ITERATIONS: usize = 100;
const SCORE_TOL: f64 = 1e-10;
const DEVIANCE_TOL: f64 = 1e-12;
/// Coefficients beyond this magnitude are taken as divergence.
const SEPARATION_BOUND: f64 = 30.0;
/// A converged fit with a coefficient this large and fitted probabilities
/// this close to 0 or 1 is treated as separated.
const PINNED_COEF: f64 = 10.0;
const PINNED_PROB: f64 = 1e-8;
const Z_95: f64 = 1.96;

/// Where the treatment, moderator and interaction sit in an outcome design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRoles {
    pub treatment: usize,
    pub moderator: Option<usize>,
    pub interaction: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDesign {
    pub matrix: DesignMatrix,
    pub roles: TermRoles,
}

impl OutcomeDesign {
    pub fn terms(&self) -> Vec<String> {
        self.matrix.labels.iter().map(|l| l.to_string()).collect()
    }

    /// Row `i` with treatment set to `t` and, when present, the moderator
    /// set to `z`; the interaction follows.
    pub fn counterfactual_row(&self, i: usize, t: f64, z: Option<f64>) -> Vec<f64> {
        let mut x = self.matrix.row(i);
        x[self.roles.treatment] = t;
        let zv = match (self.roles.moderator, z) {
            (Some(c), Some(z)) => {
                x[c] = z;
                z
            }
            (Some(c), None) => x[c],
            (None, _) => 0.0,
        };
        if let Some(c) = self.roles.interaction {
            x[c] = t * zv;
        }
        x
    }
}

fn label(name: &str) -> ColumnLabel {
    ColumnLabel {
        covariate: name.to_string(),
        level: None,
    }
}

/// `(Intercept), T, Z, T:Z`, then the reference-coded covariates.
pub fn outcome_design(ds: &Dataset) -> Result<OutcomeDesign> {
    let s = &ds.schema;
    let n = ds.n_rows();
    let t = ds.treatment_f64();
    let z: Vec<f64> = ds.moderator.iter().map(|&v| v as f64).collect();
    let tz: Vec<f64> = t.iter().zip(&z).map(|(a, b)| a * b).collect();
    let mut m = DesignMatrix {
        n_rows: n,
        columns: Vec::new(),
        labels: Vec::new(),
    };
    m.push_column(label("(Intercept)"), vec![1.0; n]);
    m.push_column(label(&s.treatment), t);
    m.push_column(label(&s.moderator), z);
    m.push_column(label(&format!("{}:{}", s.treatment, s.moderator)), tz);
    let x = encode(ds, false)?;
    for (l, c) in x.labels.into_iter().zip(x.columns) {
        m.push_column(l, c);
    }
    Ok(OutcomeDesign {
        matrix: m,
        roles: TermRoles {
            treatment: 1,
            moderator: Some(2),
            interaction: Some(3),
        },
    })
}

/// `(Intercept), T`, then the covariates: the model for a single stratum.
pub fn stratum_outcome_design(ds: &Dataset) -> Result<OutcomeDesign> {
    let n = ds.n_rows();
    let mut m = DesignMatrix {
        n_rows: n,
        columns: Vec::new(),
        labels: Vec::new(),
    };
    m.push_column(label("(Intercept)"), vec![1.0; n]);
    m.push_column(label(&ds.schema.treatment), ds.treatment_f64());
    let x = encode(ds, false)?;
    for (l, c) in x.labels.into_iter().zip(x.columns) {
        m.push_column(l, c);
    }
    Ok(OutcomeDesign {
        matrix: m,
        roles: TermRoles {
            treatment: 1,
            moderator: None,
            interaction: None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Sandwich covariance, row-major `p x p`.
    pub covariance: Vec<f64>,
    pub n: usize,
    /// Sum of the weights as supplied.
    pub weighted_n: f64,
    pub iterations: usize,
    pub final_step_norm: f64,
    /// Final `max |score| / n` on mean-one weights.
    pub max_score: f64,
    pub deviance: f64,
}

impl OutcomeFit {
    pub fn n_terms(&self) -> usize {
        self.coefficients.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.n_terms() + j]
    }

    pub fn se(&self, i: usize) -> f64 {
        self.cov(i, i).max(0.0).sqrt()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.n_terms();
        DMatrix::from_row_slice(p, p, &self.covariance)
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }
}

fn check_inputs(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<()> {
    if y.len() != design.n_rows || w.len() != design.n_rows {
        return Err(Error::Dimension(format!(
            "design has {} rows, outcome {}, weights {}",
            design.n_rows,
            y.len(),
            w.len()
        )));
    }
    if design.n_cols() == 0 {
        return Err(Error::Dimension("outcome design has no columns".into()));
    }
    if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::Config("outcome weights must be finite and positive".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config("outcome must be 0/1".into()));
    }
    if !(y.contains(&0.0) && y.contains(&1.0)) {
        return Err(Error::SingleClass("outcome"));
    }
    Ok(())
}

fn mean_one(w: &[f64]) -> Vec<f64> {
    let m = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / m).collect()
}

fn to_matrix(design: &DesignMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(design.n_rows, design.n_cols(), |i, j| design.columns[j][i])
}

/// Names of columns that are linear combinations of earlier ones under the
/// weighted inner product.
pub fn aliased_columns(design: &DesignMatrix, w: &[f64]) -> Vec<String> {
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for (label, col) in design.labels.iter().zip(&design.columns) {
        let mut v: Vec<f64> = col.iter().zip(&sw).map(|(x, s)| x * s).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>();
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            aliased.push(label.to_string());
        } else {
            let s = norm.sqrt();
            basis.push(v.into_iter().map(|x| x / s).collect());
        }
    }
    aliased
}

fn deviance(p: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let eps = 1e-300;
    -2.0 * p
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&p, &y), &w)| w * (y * p.max(eps).ln() + (1.0 - y) * (1.0 - p).max(eps).ln()))
        .sum::<f64>()
}

/// Information matrix `A = sum w p (1-p) x x'`.
fn information(x: &DMatrix<f64>, p: &[f64], w: &[f64]) -> DMatrix<f64> {
    let k = x.ncols();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let v = w[i] * p[i] * (1.0 - p[i]);
        for c in 0..k {
            let xc = v * x[(i, c)];
            if xc == 0.0 {
                continue;
            }
            for d in c..k {
                a[(c, d)] += xc * x[(i, d)];
            }
        }
    }
    a.fill_lower_triangle_with_upper_triangle();
    a
}

fn fitted(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().map(|&e| expit(e)).collect()
}

/// Weighted logistic regression by IRLS.
///
/// Weights are rescaled to mean one, which changes neither the estimate nor
/// the sandwich covariance. Converged when `max |score| / n < 1e-10`, or
/// when the relative deviance change drops below `1e-12`.
pub fn fit_weighted_logistic(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<OutcomeFit> {
    fit_weighted_logistic_from(design, y, w, None)
}

/// As [`fit_weighted_logistic`], starting IRLS from `start` instead of zero.
pub fn fit_weighted_logistic_from(
    design: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    start: Option<&[f64]>,
) -> Result<OutcomeFit> {
    check_inputs(design, y, w)?;
    if let Some(s) = start {
        if s.len() != design.n_cols() {
            return Err(Error::Dimension("start vector length differs from design".into()));
        }
    }
    let wn = mean_one(w);
    let aliased = aliased_columns(design, &wn);
    if !aliased.is_empty() {
        return Err(Error::RankDeficient(aliased));
    }
    let n = design.n_rows;
    let k = design.n_cols();
    let x = to_matrix(design);
    let terms: Vec<String> = design.labels.iter().map(|l| l.to_string()).collect();

    let mut beta = start.map_or_else(|| DVector::zeros(k), DVector::from_column_slice);
    let mut p = fitted(&x, &beta);
    let mut dev = deviance(&p, y, &wn);
    let mut step_norm = f64::NAN;
    let mut max_score = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITERATIONS {
        let r = DVector::from_iterator(n, (0..n).map(|i| wn[i] * (y[i] - p[i])));
        let score = x.tr_mul(&r);
        max_score = score.amax() / n as f64;
        if max_score < SCORE_TOL {
            converged = true;
            break;
        }
        let a = information(&x, &p, &wn);
        let chol = a.cholesky().ok_or(Error::Singular("IRLS information matrix"))?;
        let step = chol.solve(&score);
        step_norm = step.norm();
        beta += step;
        iterations += 1;
        if let Some((j, &b)) = beta.iter().enumerate().find(|(_, b)| !b.is_finite() || b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation {
                term: terms[j].clone(),
                value: b,
            });
        }
        p = fitted(&x, &beta);
        let new_dev = deviance(&p, y, &wn);
        let rel = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if rel < DEVIANCE_TOL {
            let r = DVector::from_iterator(n, (0..n).map(|i| wn[i] * (y[i] - p[i])));
            max_score = x.tr_mul(&r).amax() / n as f64;
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            score: max_score,
        });
    }
    let pinned = p.iter().any(|&q| q < PINNED_PROB || q > 1.0 - PINNED_PROB);
    let (j, b) = beta
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("design has columns");
    if pinned && b.abs() > PINNED_COEF {
        return Err(Error::Separation {
            term: terms[j].clone(),
            value: b,
        });
    }
    let v = sandwich(&x, &beta, y, &wn)?;
    Ok(OutcomeFit {
        terms,
        coefficients: beta.iter().copied().collect(),
        covariance: row_major(&v),
        n,
        weighted_n: w.iter().sum(),
        iterations,
        final_step_norm: step_norm,
        max_score,
        deviance: dev * w.iter().sum::<f64>() / n as f64,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn sandwich(x: &DMatrix<f64>, beta: &DVector<f64>, y: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
    let p = fitted(x, beta);
    let a = information(x, &p, w);
    let a_inv = a.cholesky().ok_or(Error::Singular("sandwich bread"))?.inverse();
    let k = x.ncols();
    let mut b = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let u = w[i] * (y[i] - p[i]);
        let uu = u * u;
        for c in 0..k {
            let xc = uu * x[(i, c)];
            if xc == 0.0 {
                continue;
            }
            for d in c..k {
                b[(c, d)] += xc * x[(i, d)];
            }
        }
    }
    b.fill_lower_triangle_with_upper_triangle();
    let v = &a_inv * b * &a_inv;
    Ok((&v + v.transpose()) * 0.5)
}

/// `A^-1 B A^-1` at `coefficients`, with `A = sum w p(1-p) x x'` and
/// `B = sum (w (y - p) x)(w (y - p) x)'`.
pub fn sandwich_covariance(coefficients: &[f64], design: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
    check_inputs(design, y, w)?;
    let x = to_matrix(design);
    sandwich(&x, &DVector::from_column_slice(coefficients), y, w)
}

/// Inverse information `A^-1`: the model-based covariance.
pub fn model_covariance(coefficients: &[f64], design: &DesignMatrix, w: &[f64]) -> Result<DMatrix<f64>> {
    let x = to_matrix(design);
    let p = fitted(&x, &DVector::from_column_slice(coefficients));
    Ok(information(&x, &p, w)
        .cholesky()
        .ok_or(Error::Singular("information matrix"))?
        .inverse())
}

/// Weighted average over `rows` of `P(Y=1 | T=1, Z=z) - P(Y=1 | T=0, Z=z)`,
/// with its gradient in the coefficients. `z = None` keeps each row's own
/// moderator value.
pub fn risk_difference(
    coefficients: &[f64],
    design: &OutcomeDesign,
    w: &[f64],
    rows: &[usize],
    z: Option<u8>,
) -> (f64, Vec<f64>) {
    let k = coefficients.len();
    let zf = z.map(|v| v as f64);
    let mut rd = 0.0;
    let mut grad = vec![0.0; k];
    let mut sw = 0.0;
    for &i in rows {
        let x1 = design.counterfactual_row(i, 1.0, zf);
        let x0 = design.counterfactual_row(i, 0.0, zf);
        let p1 = expit(dot(&x1, coefficients));
        let p0 = expit(dot(&x0, coefficients));
        let wi = w[i];
        sw += wi;
        rd += wi * (p1 - p0);
        let (d1, d0) = (p1 * (1.0 - p1), p0 * (1.0 - p0));
        for j in 0..k {
            grad[j] += wi * (d1 * x1[j] - d0 * x0[j]);
        }
    }
    grad.iter_mut().for_each(|g| *g /= sw);
    (rd / sw, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad_form(g: &[f64], fit: &OutcomeFit) -> f64 {
    let k = g.len();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            s += g[i] * fit.cov(i, j) * g[j];
        }
    }
    s
}

/// Two-sided normal p-value of a Wald statistic.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Population over which counterfactual predictions are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MateAveraging {
    /// Every row, with its moderator set to the target level.
    #[default]
    FullSample,
    /// Only rows observed at the target level.
    WithinStratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MateRow {
    pub stratum: Stratum,
    pub risk_difference: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn mate_row(stratum: Stratum, rd: f64, var: f64) -> MateRow {
    let se = var.max(0.0).sqrt();
    MateRow {
        stratum,
        risk_difference: rd,
        se,
        ci_lo: rd - Z_95 * se,
        ci_hi: rd + Z_95 * se,
    }
}

/// Moderated risk differences for `z = 0, 1` with delta-method errors.
///
/// `moderator` holds each row's observed level and is used only for
/// within-stratum averaging. Designs without a moderator term give the
/// plain ATE for every requested level.
pub fn mate_estimates(
    fit: &OutcomeFit,
    design: &OutcomeDesign,
    moderator: &[u8],
    w: &[f64],
    averaging: MateAveraging,
) -> Vec<MateRow> {
    let all: Vec<usize> = (0..design.matrix.n_rows).collect();
    let levels: Vec<u8> = match averaging {
        MateAveraging::FullSample => vec![0, 1],
        MateAveraging::WithinStratum => (0..2u8).filter(|z| moderator.contains(z)).collect(),
    };
    levels
        .into_iter()
        .map(|z| {
            let rows: Vec<usize> = match averaging {
                MateAveraging::FullSample => all.clone(),
                MateAveraging::WithinStratum => all.iter().copied().filter(|&i| moderator[i] == z).collect(),
            };
            let (rd, g) = risk_difference(&fit.coefficients, design, w, &rows, Some(z));
            mate_row(Stratum::Level(z), rd, quad_form(&g, fit))
        })
        .collect()
}

/// Risk difference of the treatment averaged over all rows of a
/// moderator-free design, with its two-sided p-value.
pub fn stratum_effect(fit: &OutcomeFit, design: &OutcomeDesign, w: &[f64]) -> (f64, f64, f64) {
    let rows: Vec<usize> = (0..design.matrix.n_rows).collect();
    let (rd, g) = risk_difference(&fit.coefficients, design, w, &rows, None);
    let se = quad_form(&g, fit).max(0.0).sqrt();
    (rd, se, two_sided_p(rd / se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationTest {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Wald test of the treatment-by-moderator coefficient.
pub fn moderation_test(fit: &OutcomeFit, design: &OutcomeDesign) -> Result<ModerationTest> {
    let j = design
        .roles
        .interaction
        .ok_or_else(|| Error::Config("outcome design has no interaction term".into()))?;
    let row = coefficient_row(fit, j);
    Ok(ModerationTest {
        term: row.term,
        estimate: row.estimate,
        se: row.se,
        z: row.z,
        p_value: row.p_value,
        ci_lo: row.ci_lo,
        ci_hi: row.ci_hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn coefficient_row(fit: &OutcomeFit, j: usize) -> CoefficientRow {
    let b = fit.coefficients[j];
    let se = fit.se(j);
    let z = if se > 0.0 {
        b / se
    } else if b == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(b)
    };
    CoefficientRow {
        term: fit.terms[j].clone(),
        estimate: b,
        se,
        z,
        p_value: two_sided_p(z),
        ci_lo: b - Z_95 * se,
        ci_hi: b + Z_95 * se,
    }
}

pub fn coefficient_table(fit: &OutcomeFit) -> Vec<CoefficientRow> {
    (0..fit.n_terms()).map(|j| coefficient_row(fit, j)).collect()
}

/// Everything step 4 produces for one weight vector.
#[derive(Debug, Clone)]
pub struct OutcomeAnalysis {
    pub design: OutcomeDesign,
    pub fit: OutcomeFit,
    pub mate: Vec<MateRow>,
    pub moderation: ModerationTest,
}

pub fn analyze_outcome(ds: &Dataset, composite: &[f64], averaging: MateAveraging) -> Result<OutcomeAnalysis> {
    let design = outcome_design(ds)?;
    let y = ds.outcome_f64();
    let fit = fit_weighted_logistic(&design.matrix, &y, composite)?;
    let mate = mate_estimates(&fit, &design, &ds.moderator, composite, averaging);
    let moderation = moderation_test(&fit, &design)?;
    Ok(OutcomeAnalysis {
        design,
        fit,
        mate,
        moderation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        let n = cols[0].1.len();
        let mut m = DesignMatrix {
            n_rows: n,
            columns: vec![],
            labels: vec![],
        };
        for (name, c) in cols {
            m.push_column(label(name), c);
        }
        m
    }

    #[test]
    fn intercept_only_is_weighted_logit() {
        let y = vec![1.0, 0.0, 0.0, 1.0, 0.0];
        let w = vec![2.0, 1.0, 1.0, 0.5, 3.0];
        let d = matrix(vec![("(Intercept)", vec![1.0; 5])]);
        let fit = fit_weighted_logistic(&d, &y, &w).unwrap();
        let ybar: f64 = 2.5 / 7.5;
        assert!((fit.coefficients[0] - (ybar / (1.0 - ybar)).ln()).abs() < 1e-10);
    }

    #[test]
    fn aliased_columns_are_named() {
        let d = matrix(vec![
            ("(Intercept)", vec![1.0; 4]),
            ("a", vec![0.0, 1.0, 0.0, 1.0]),
            ("b", vec![1.0, 0.0, 1.0, 0.0]),
        ]);
        let err = fit_weighted_logistic(&d, &[0.0, 1.0, 1.0, 0.0], &[1.0; 4]).unwrap_err();
        match err {
            Error::RankDeficient(cols) => assert_eq!(cols, vec!["b".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn perfect_separation_is_reported() {
        let d = matrix(vec![
            ("(Intercept)", vec![1.0; 6]),
            ("x", vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        ]);
        let err = fit_weighted_logistic(&d, &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &[1.0; 6]).unwrap_err();
        assert!(matches!(err, Error::Separation { .. }), "{err}");
    }

    #[test]
    fn single_class_outcome_is_rejected() {
        let d = matrix(vec![("(Intercept)", vec![1.0; 3])]);
        assert!(matches!(
            fit_weighted_logistic(&d, &[1.0; 3], &[1.0; 3]),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn zero_coefficient_gives_unit_p() {
        assert_eq!(two_sided_p(0.0), 1.0);
        assert!((two_sided_p(1.96) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn covariate_free_risk_difference_is_closed_form() {
        let t = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let y = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let d = OutcomeDesign {
            matrix: matrix(vec![("(Intercept)", vec![1.0; 8]), ("t", t)]),
            roles: TermRoles {
                treatment: 1,
                moderator: None,
                interaction: None,
            },
        };
        let w = vec![1.0; 8];
        let fit = fit_weighted_logistic(&d.matrix, &y, &w).unwrap();
        let (a0, a1) = (fit.coefficients[0], fit.coefficients[1]);
        let rows = mate_estimates(&fit, &d, &[0; 8], &w, MateAveraging::FullSample);
        for r in rows {
            assert!((r.risk_difference - (expit(a0 + a1) - expit(a0))).abs() < 1e-14);
            assert!((r.ci_hi - r.risk_difference - (r.risk_difference - r.ci_lo)).abs() < 1e-14);
        }
    }
}
