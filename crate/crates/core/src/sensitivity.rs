//! Omitted-variable sensitivity grid.
//!
//! For a hypothetical unobserved confounder `U` with standardized mean
//! difference `es` between treatment arms and correlation `rho` with the
//! outcome residuals, `U` is drawn, the propensities are updated on the logit
//! scale, the composite weights are rebuilt and the stratum outcome model is
//! refit with `U` as an extra covariate. Averaging the resulting risk
//! difference and p-value over replicate draws fills one grid cell.
//!
//! `U` is built exactly rather than by rejection. With `<a, b>` the survey
//! weighted inner product, `e1` the standardized residuals, `e2` the
//! standardized treatment indicator made orthogonal to `e1`, and `e3` fresh
//! normal noise made orthogonal to the constant, `e1`, `e2`, the propensity
//! score direction and the outcome score direction,
//!
//! `U = rho * e1 + b * e2 + c * e3`, with `c^2 = 1 - rho^2 - b^2`,
//!
//! where `b` is solved so the SMD of `U` equals `es`. The sample mean, SD,
//! correlation and SMD of `U` therefore hold exactly, and at `es = rho = 0`
//! the refit reproduces the baseline estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::weighted_smd;
use crate::error::{Error, Result};
use crate::outcome::{fit_weighted_logistic, fit_weighted_logistic_from, risk_difference, stratum_outcome_design, two_sided_p, OutcomeDesign};
use crate::ps::{ate_weight, clamp_propensity, expit, PropensityFit, Stratum};
use crate::tabular::{encode_full, ColumnLabel, Dataset};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a seed path, used to give every replicate its
/// own stream.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x9e37_79b9_7f4a_7c15, |h, &p| mix(h ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Effect sizes of `U` on treatment. `None` picks a symmetric grid wide
    /// enough to cover every observed-covariate benchmark.
    pub es_grid: Option<Vec<f64>>,
    pub rho_grid: Vec<f64>,
    pub n_reps: usize,
    pub p_contours: Vec<f64>,
    pub seed: u64,
}

/// `start, start + step, ..., end` in steps of `step_hundredths / 100`,
/// computed from integers so grid values print cleanly.
pub fn hundredths_grid(start: i64, end: i64, step: i64) -> Vec<f64> {
    (0..)
        .map(|k| start + k * step)
        .take_while(|&v| v <= end)
        .map(|v| v as f64 / 100.0)
        .collect()
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            es_grid: None,
            rho_grid: hundredths_grid(0, 40, 5),
            n_reps: 100,
            p_contours: vec![0.05],
            seed: 0,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(es) = &self.es_grid {
            if es.is_empty() || es.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("es_grid must be a nonempty list of finite numbers".into()));
            }
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("rho_grid must be nonempty with values in [0, 1)".into()));
        }
        if self.n_reps == 0 {
            return Err(Error::Config("n_reps must be at least 1".into()));
        }
        if self.p_contours.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("p_contours must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Symmetric grid `-E..=E` in steps of 0.05, where `E` is 1.2 times the
/// largest benchmark effect size rounded up to 0.05, and at least 0.5.
pub fn auto_es_grid(benchmarks: &[Benchmark]) -> Vec<f64> {
    let top = benchmarks.iter().map(|b| b.es).fold(0.0, f64::max);
    let e = ((1.2 * top * 20.0 - 1e-9).ceil() as i64).max(10) * 5;
    hundredths_grid(-e, e, 5)
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

fn wmean(w: &[f64], a: &[f64]) -> f64 {
    w.iter().zip(a).map(|(w, a)| w * a).sum()
}

/// Survey-weighted Pearson correlation.
pub fn weighted_correlation(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Exact construction of simulated confounders for one stratum.
#[derive(Debug, Clone)]
pub struct ConfounderBasis {
    /// Weights normalized to sum to one.
    w: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
    /// Correlation of residuals and treatment.
    c_rt: f64,
    s_rt: f64,
    /// `1 / sqrt(pi (1 - pi))`, the SMD of `U` per unit of its correlation
    /// with the treatment indicator.
    kappa: f64,
    /// Orthonormal basis the noise is projected off.
    q: Vec<Vec<f64>>,
}

impl ConfounderBasis {
    /// `extra` lists further directions the noise must be orthogonal to.
    pub fn new(residuals: &[f64], t: &[u8], w: &[f64], extra: &[&[f64]]) -> Result<Self> {
        let n = t.len();
        if residuals.len() != n || w.len() != n || extra.iter().any(|e| e.len() != n) {
            return Err(Error::Dimension("confounder inputs differ in length".into()));
        }
        let sw: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / sw).collect();
        let standardize = |x: &[f64], what: &str| -> Result<Vec<f64>> {
            let m = wmean(&w, x);
            let c: Vec<f64> = x.iter().map(|v| v - m).collect();
            let var = wdot(&w, &c, &c);
            if var <= 1e-300 {
                return Err(Error::Degenerate(format!("{what} has zero variance")));
            }
            let sd = var.sqrt();
            Ok(c.into_iter().map(|v| v / sd).collect())
        };
        let e1 = standardize(residuals, "outcome residual")?;
        let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        let pi = wmean(&w, &tf);
        let t_std = standardize(&tf, "treatment")?;
        let c_rt = wdot(&w, &e1, &t_std);
        let s_rt = (1.0 - c_rt * c_rt).max(0.0).sqrt();
        if s_rt < 1e-8 {
            return Err(Error::Degenerate("residuals are collinear with treatment".into()));
        }
        let e2: Vec<f64> = t_std.iter().zip(&e1).map(|(t, r)| (t - c_rt * r) / s_rt).collect();
        let mut basis = ConfounderBasis {
            w,
            e1: e1.clone(),
            e2: e2.clone(),
            c_rt,
            s_rt,
            kappa: 1.0 / (pi * (1.0 - pi)).sqrt(),
            q: Vec::new(),
        };
        basis.q.push(vec![1.0; n]);
        basis.q.push(e1);
        basis.q.push(e2);
        for v in extra {
            let mut v = v.to_vec();
            if basis.orthonormalize(&mut v) {
                basis.q.push(v);
            }
        }
        Ok(basis)
    }

    /// Projects `v` off the basis and scales it to unit norm. False when
    /// nothing is left.
    fn orthonormalize(&self, v: &mut [f64]) -> bool {
        let n0 = wdot(&self.w, v, v);
        for _ in 0..2 {
            for q in &self.q {
                let d = wdot(&self.w, v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let nn = wdot(&self.w, v, v);
        if n0 == 0.0 || nn <= 1e-12 * n0 {
            return false;
        }
        let s = nn.sqrt();
        v.iter_mut().for_each(|a| *a /= s);
        true
    }

    /// Loadings `(b, c)` on `e2` and the noise, or `None` when the pair is
    /// infeasible.
    pub fn loadings(&self, es: f64, rho: f64) -> Option<(f64, f64)> {
        let b = (es / self.kappa - rho * self.c_rt) / self.s_rt;
        let c2 = 1.0 - rho * rho - b * b;
        (c2 >= 0.0).then(|| (b, c2.sqrt()))
    }

    pub fn draw(&self, es: f64, rho: f64, seed: u64) -> Result<Option<Vec<f64>>> {
        if !(rho.abs() < 1.0) {
            return Err(Error::Config(format!("|rho| must be below 1, got {rho}")));
        }
        let Some((b, c)) = self.loadings(es, rho) else {
            return Ok(None);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise: Vec<f64> = (0..self.w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        if !self.orthonormalize(&mut noise) {
            return Err(Error::Degenerate("too few rows to draw an independent confounder".into()));
        }
        Ok(Some(
            (0..noise.len())
                .map(|i| rho * self.e1[i] + b * self.e2[i] + c * noise[i])
                .collect(),
        ))
    }
}

/// Draws one simulated confounder with SMD `es` against `t` and
/// correlation `rho` with `residuals`, both under weights `w`. `Ok(None)`
/// marks an infeasible pair.
pub fn simulate_omitted_variable(
    residuals: &[f64],
    t: &[u8],
    w: &[f64],
    es: f64,
    rho: f64,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    ConfounderBasis::new(residuals, t, w, &[])?.draw(es, rho, seed)
}

/// Observed covariate level placed on the grid axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub covariate: String,
    pub level: Option<String>,
    pub es: f64,
    pub rho: f64,
}

/// `|SMD|` against treatment and `|correlation|` with the outcome of every
/// covariate indicator, under survey weights. Constant columns are skipped.
pub fn benchmarks(ds: &Dataset) -> Result<Vec<Benchmark>> {
    let full = encode_full(ds, false)?;
    let y = ds.outcome_f64();
    let mut out = Vec::new();
    for (ColumnLabel { covariate, level }, x) in full.labels.iter().zip(&full.columns) {
        let Ok(smd) = weighted_smd(x, &ds.treatment, &ds.weights) else {
            continue;
        };
        let r = weighted_correlation(x, &y, &ds.weights);
        if r.is_nan() {
            continue;
        }
        out.push(Benchmark {
            covariate: covariate.clone(),
            level: level.clone(),
            es: smd.abs(),
            rho: r.abs(),
        });
    }
    Ok(out)
}

/// Unadjusted stratum estimate the grid is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

/// One moderator stratum prepared for repeated confounder refits.
#[derive(Debug, Clone)]
pub struct StratumContext {
    pub stratum: Stratum,
    pub data: Dataset,
    design: OutcomeDesign,
    y: Vec<f64>,
    base_logit: Vec<f64>,
    base_coefficients: Vec<f64>,
    pub baseline: Baseline,
    pub basis: ConfounderBasis,
}

fn effect(coef: &[f64], cov: impl Fn(usize, usize) -> f64, design: &OutcomeDesign, w: &[f64]) -> (f64, f64, f64) {
    let rows: Vec<usize> = (0..design.matrix.n_rows).collect();
    let (rd, g) = risk_difference(coef, design, w, &rows, None);
    let mut var = 0.0;
    for i in 0..g.len() {
        for j in 0..g.len() {
            var += g[i] * cov(i, j) * g[j];
        }
    }
    let se = var.max(0.0).sqrt();
    (rd, se, two_sided_p(rd / se))
}

impl StratumContext {
    /// `propensities` holds the base propensity of every row of `ds`.
    pub fn new(ds: &Dataset, z: u8, propensities: &[f64]) -> Result<Self> {
        let rows = ds.stratum_rows(z);
        if rows.is_empty() {
            return Err(Error::EmptyStratum(z));
        }
        let data = ds.select(&rows);
        let p: Vec<f64> = rows.iter().map(|&i| clamp_propensity(propensities[i])).collect();
        let t = &data.treatment;
        let composite: Vec<f64> = (0..rows.len())
            .map(|k| ate_weight(p[k], t[k]) * data.weights[k])
            .collect();
        let design = stratum_outcome_design(&data)?;
        let y = data.outcome_f64();
        let fit = fit_weighted_logistic(&design.matrix, &y, &composite)?;
        let (estimate, se, p_value) = effect(&fit.coefficients, |i, j| fit.cov(i, j), &design, &composite);

        // Residuals and the score directions of both refits.
        let fitted: Vec<f64> = (0..rows.len())
            .map(|i| expit(dot(&design.matrix.row(i), &fit.coefficients)))
            .collect();
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let outcome_score: Vec<f64> = (0..rows.len())
            .map(|k| composite[k] / data.weights[k] * resid[k])
            .collect();
        let ps_score: Vec<f64> = (0..rows.len()).map(|k| t[k] as f64 - p[k]).collect();
        let basis = ConfounderBasis::new(&resid, t, &data.weights, &[&ps_score, &outcome_score])?;

        Ok(StratumContext {
            stratum: Stratum::Level(z),
            base_logit: p.iter().map(|&q| (q / (1.0 - q)).ln()).collect(),
            data,
            design,
            y,
            base_coefficients: fit.coefficients,
            baseline: Baseline {
                estimate,
                se,
                p_value,
            },
            basis,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.data.n_rows()
    }

    /// Risk difference and p-value after adjusting for `u`.
    ///
    /// The propensities are updated by a one-parameter logistic regression
    /// of treatment on `u` with the base logits as offset, weighted by the
    /// survey weights; the stratum outcome model is refit with `u` added.
    pub fn adjusted_effect(&self, u: &[f64]) -> Result<(f64, f64)> {
        let n = self.n_rows();
        if u.len() != n {
            return Err(Error::Dimension("confounder length differs from stratum".into()));
        }
        let t = &self.data.treatment;
        let s = &self.data.weights;
        let mut gamma = 0.0;
        let mut converged = false;
        for _ in 0..50 {
            let (mut score, mut info) = (0.0, 0.0);
            for i in 0..n {
                let p = expit(self.base_logit[i] + gamma * u[i]);
                score += s[i] * (t[i] as f64 - p) * u[i];
                info += s[i] * p * (1.0 - p) * u[i] * u[i];
            }
            if info <= 0.0 {
                return Err(Error::Singular("propensity update"));
            }
            let step = score / info;
            gamma += step;
            if !gamma.is_finite() || gamma.abs() > 30.0 {
                return Err(Error::Separation {
                    term: "U (propensity update)".into(),
                    value: gamma,
                });
            }
            if step.abs() < 1e-12 * (1.0 + gamma.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: 50,
                score: f64::NAN,
            });
        }
        let composite: Vec<f64> = (0..n)
            .map(|i| ate_weight(expit(self.base_logit[i] + gamma * u[i]), t[i]) * s[i])
            .collect();

        let mut design = self.design.clone();
        design.matrix.push_column(
            ColumnLabel {
                covariate: "U".into(),
                level: None,
            },
            u.to_vec(),
        );
        let mut start = self.base_coefficients.clone();
        start.push(0.0);
        let fit = fit_weighted_logistic_from(&design.matrix, &self.y, &composite, Some(&start))?;
        let (rd, _, p) = effect(&fit.coefficients, |i, j| fit.cov(i, j), &design, &composite);
        Ok((rd, p))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub es: f64,
    pub rho: f64,
    pub status: CellStatus,
    pub mean_estimate: Option<f64>,
    pub mean_p: Option<f64>,
    /// Replicate standard deviation of the estimate.
    pub estimate_sd: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// First failure message, if any replicate failed.
    pub failure: Option<String>,
}

impl SensitivityCell {
    /// Monte-Carlo standard error of the mean estimate.
    pub fn mc_se(&self) -> Option<f64> {
        self.estimate_sd.map(|sd| sd / (self.n_ok as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub stratum: Stratum,
    pub baseline: Baseline,
    pub es_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub n_reps: usize,
    pub p_contours: Vec<f64>,
    /// Row-major over `es_grid` then `rho_grid`.
    pub cells: Vec<SensitivityCell>,
    pub benchmarks: Vec<Benchmark>,
}

impl SensitivityGrid {
    pub fn cell(&self, es_index: usize, rho_index: usize) -> &SensitivityCell {
        &self.cells[es_index * self.rho_grid.len() + rho_index]
    }

    /// Cell at the grid values closest to `(es, rho)`.
    pub fn nearest(&self, es: f64, rho: f64) -> &SensitivityCell {
        let closest = |g: &[f64], v: f64| {
            (0..g.len())
                .min_by(|&a, &b| (g[a] - v).abs().total_cmp(&(g[b] - v).abs()))
                .expect("grid is nonempty")
        };
        self.cell(closest(&self.es_grid, es), closest(&self.rho_grid, rho))
    }
}

fn run_cell(ctx: &StratumContext, cfg: &SensitivityConfig, z: u8, ei: usize, ri: usize, es: f64, rho: f64) -> SensitivityCell {
    let mut cell = SensitivityCell {
        es,
        rho,
        status: CellStatus::Infeasible,
        mean_estimate: None,
        mean_p: None,
        estimate_sd: None,
        n_ok: 0,
        n_failed: 0,
        failure: None,
    };
    if ctx.basis.loadings(es, rho).is_none() {
        return cell;
    }
    let mut est = Vec::with_capacity(cfg.n_reps);
    let mut ps = Vec::with_capacity(cfg.n_reps);
    for rep in 0..cfg.n_reps {
        let seed = derive_seed(&[cfg.seed, z as u64, ei as u64, ri as u64, rep as u64]);
        let result = ctx
            .basis
            .draw(es, rho, seed)
            .and_then(|u| ctx.adjusted_effect(&u.expect("feasibility checked above")));
        match result {
            Ok((e, p)) => {
                est.push(e);
                ps.push(p);
            }
            Err(e) => {
                cell.n_failed += 1;
                cell.failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    cell.n_ok = est.len();
    if est.is_empty() {
        cell.status = CellStatus::Failed;
        return cell;
    }
    let k = est.len() as f64;
    let m = est.iter().sum::<f64>() / k;
    let var = if est.len() > 1 {
        est.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    cell.status = CellStatus::Ok;
    cell.mean_estimate = Some(m);
    cell.mean_p = Some(ps.iter().sum::<f64>() / k);
    cell.estimate_sd = Some(var.sqrt());
    cell
}

/// Grid for one prepared stratum. Cells run in parallel; every replicate
/// seeds its own generator from `(seed, stratum, es index, rho index, rep)`,
/// so the output does not depend on scheduling.
pub fn stratum_grid(ctx: &StratumContext, cfg: &SensitivityConfig) -> Result<SensitivityGrid> {
    cfg.validate()?;
    let z = match ctx.stratum {
        Stratum::Level(z) => z,
        Stratum::Pooled => 2,
    };
    let bench = benchmarks(&ctx.data)?;
    let es_grid = cfg.es_grid.clone().unwrap_or_else(|| auto_es_grid(&bench));
    let pairs: Vec<(usize, usize)> = (0..es_grid.len())
        .flat_map(|e| (0..cfg.rho_grid.len()).map(move |r| (e, r)))
        .collect();
    let cells = pairs
        .into_par_iter()
        .map(|(ei, ri)| run_cell(ctx, cfg, z, ei, ri, es_grid[ei], cfg.rho_grid[ri]))
        .collect();
    Ok(SensitivityGrid {
        stratum: ctx.stratum,
        baseline: ctx.baseline,
        es_grid,
        rho_grid: cfg.rho_grid.clone(),
        n_reps: cfg.n_reps,
        p_contours: cfg.p_contours.clone(),
        cells,
        benchmarks: bench,
    })
}

/// One grid per moderator level present, using the fitted propensities.
pub fn ov_grid(ds: &Dataset, fits: &[PropensityFit], cfg: &SensitivityConfig) -> Result<Vec<SensitivityGrid>> {
    cfg.validate()?;
    let p = crate::ps::propensities(ds, fits);
    (0..2u8)
        .filter(|z| ds.moderator.contains(z))
        .map(|z| stratum_grid(&StratumContext::new(ds, z, &p)?, cfg))
        .collect()
}
