//! Gradient boosting of the Bernoulli deviance (functional gradient descent
//! on the log-odds of treatment).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{BinnedDesign, Tree, TreeProblem, TREE_MAX_BINS};
use crate::error::{Error, Result};
use crate::tabular::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMethod {
    /// Largest weighted KS statistic over design columns.
    KsMax,
    /// Largest absolute weighted SMD over design columns.
    EsMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub n_trees: usize,
    /// Number of splits per tree.
    pub interaction_depth: usize,
    pub shrinkage: f64,
    pub bag_fraction: f64,
    /// Minimum sample weight per leaf, on the scale where weights average 1.
    pub min_node_weight: f64,
    pub stop_method: StopMethod,
    pub eval_stride: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_trees: 10_000,
            interaction_depth: 2,
            shrinkage: 0.01,
            bag_fraction: 1.0,
            min_node_weight: 10.0,
            stop_method: StopMethod::KsMax,
            eval_stride: 10,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("boost config: {m}")));
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.interaction_depth == 0 {
            return bad("interaction_depth must be positive");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return bad("bag_fraction must lie in (0, 1]");
        }
        if !(self.min_node_weight >= 0.0 && self.min_node_weight.is_finite()) {
            return bad("min_node_weight must be nonnegative");
        }
        if self.eval_stride == 0 {
            return bad("eval_stride must be positive");
        }
        Ok(())
    }
}

/// Lower/upper clamp applied to every propensity before it is used.
pub const PROPENSITY_CLAMP: f64 = 1e-6;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    /// Weighted log-odds of treatment.
    pub initial_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub sample_weights: Vec<f64>,
}

impl BoostedModel {
    pub fn n_iterations(&self) -> usize {
        self.trees.len()
    }

    /// Log-odds for a new row after `iteration` trees.
    pub fn score(&self, row: &[f64], iteration: usize) -> f64 {
        self.initial_score
            + self.shrinkage
                * self.trees[..iteration]
                    .iter()
                    .map(|t| t.predict(row))
                    .sum::<f64>()
    }

    /// Clamped propensity for a new row after `iteration` trees.
    pub fn predict_proba(&self, row: &[f64], iteration: usize) -> f64 {
        clamp_propensity(expit(self.score(row, iteration)))
    }

    /// Clamped propensities for every row of `design` after `iteration` trees.
    pub fn propensities(&self, design: &DesignMatrix, iteration: usize) -> Vec<f64> {
        (0..design.n_rows)
            .map(|r| self.predict_proba(&design.row(r), iteration))
            .collect()
    }
}

/// Training-set scores that can be moved to any iteration by replaying trees.
pub struct ScoreCursor<'a> {
    model: &'a BoostedModel,
    design: &'a BinnedDesign,
    scores: Vec<f64>,
    iteration: usize,
}

impl<'a> ScoreCursor<'a> {
    pub fn new(model: &'a BoostedModel, design: &'a BinnedDesign) -> Self {
        ScoreCursor {
            model,
            design,
            scores: vec![model.initial_score; design.n_rows],
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn seek(&mut self, iteration: usize) {
        assert!(
            iteration <= self.model.trees.len(),
            "iteration {iteration} beyond {} trained trees",
            self.model.trees.len()
        );
        if iteration < self.iteration {
            self.scores.fill(self.model.initial_score);
            self.iteration = 0;
        }
        let nu = self.model.shrinkage;
        for tree in &self.model.trees[self.iteration..iteration] {
            for (r, s) in self.scores.iter_mut().enumerate() {
                *s += nu * tree.predict_binned(self.design.row(r));
            }
        }
        self.iteration = iteration;
    }

    pub fn propensities(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| clamp_propensity(expit(s))).collect()
    }
}

/// Weighted Bernoulli deviance of clamped propensities.
pub fn bernoulli_deviance(p: &[f64], t: &[f64], w: &[f64]) -> f64 {
    -2.0 * p
        .iter()
        .zip(t)
        .zip(w)
        .map(|((&p, &t), &w)| w * (t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
}

fn check_inputs(design: &DesignMatrix, treatment: &[f64], weights: &[f64]) -> Result<()> {
    let n = design.n_rows;
    if treatment.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, treatment {}, weights {}",
            treatment.len(),
            weights.len()
        )));
    }
    if let Some(bad) = treatment.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Dimension(format!("treatment value {bad} is not binary")));
    }
    if let Some(bad) = weights.iter().find(|&&w| !(w.is_finite() && w > 0.0)) {
        return Err(Error::Dimension(format!("sample weight {bad} is not positive")));
    }
    let n1 = treatment.iter().filter(|&&t| t == 1.0).count();
    if n1 == 0 || n1 == n {
        return Err(Error::SingleClass("treatment"));
    }
    Ok(())
}

/// Fits the boosted propensity model on a pre-binned design.
pub fn fit_boosted_binned(
    binned: &BinnedDesign,
    treatment: &[f64],
    sample_weights: &[f64],
    cfg: &BoostConfig,
) -> Result<BoostedModel> {
    cfg.validate()?;
    let n = binned.n_rows;
    // Weights rescaled to mean one so min_node_weight counts observations and
    // the fit does not depend on the overall weight scale.
    let total: f64 = sample_weights.iter().sum();
    let w: Vec<f64> = sample_weights.iter().map(|&x| x * n as f64 / total).collect();
    let w1: f64 = w.iter().zip(treatment).map(|(w, t)| w * t).sum();
    let w0 = n as f64 - w1;
    let initial_score = (w1 / w0).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bag_size = ((cfg.bag_fraction * n as f64).round() as usize).clamp(1, n);

    let mut scores = vec![initial_score; n];
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        for r in 0..n {
            let p = expit(scores[r]);
            residual[r] = treatment[r] - p;
            hessian[r] = p * (1.0 - p);
        }
        let rows: Vec<u32> = if bag_size == n {
            (0..n as u32).collect()
        } else {
            let mut idx: Vec<u32> = sample(&mut rng, n, bag_size).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            idx
        };
        let tree = TreeProblem {
            design: binned,
            residual: &residual,
            hessian: &hessian,
            weight: &w,
            max_splits: cfg.interaction_depth,
            min_node_weight: cfg.min_node_weight,
        }
        .grow(rows);
        for (r, s) in scores.iter_mut().enumerate() {
            *s += cfg.shrinkage * tree.predict_binned(binned.row(r));
        }
        trees.push(tree);
    }
    Ok(BoostedModel {
        initial_score,
        shrinkage: cfg.shrinkage,
        trees,
        n_features: binned.n_cols,
        sample_weights: sample_weights.to_vec(),
    })
}

/// Boosted logistic model of `treatment` on `design`, minimizing the
/// `sample_weights`-weighted Bernoulli deviance. Deterministic for a given
/// config; with `bag_fraction == 1` the seed is irrelevant.
pub fn fit_boosted_propensity(
    design: &DesignMatrix,
    treatment: &[f64],
    sample_weights: &[f64],
    cfg: &BoostConfig,
) -> Result<BoostedModel> {
    check_inputs(design, treatment, sample_weights)?;
    let binned = BinnedDesign::with_max_bins(design, TREE_MAX_BINS);
    fit_boosted_binned(&binned, treatment, sample_weights, cfg)
}

pub(crate) fn validate_inputs(design: &DesignMatrix, treatment: &[f64], weights: &[f64]) -> Result<()> {
    check_inputs(design, treatment, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::ColumnLabel;

    fn one_col(x: Vec<f64>) -> DesignMatrix {
        DesignMatrix {
            n_rows: x.len(),
            columns: vec![x],
            labels: vec![ColumnLabel {
                covariate: "x".into(),
                level: None,
            }],
        }
    }

    #[test]
    fn initial_score_is_weighted_log_odds() {
        let d = one_col(vec![0.0, 1.0, 0.0, 1.0]);
        let t = [1.0, 0.0, 0.0, 0.0];
        let w = [3.0, 1.0, 1.0, 1.0];
        let cfg = BoostConfig {
            n_trees: 1,
            ..Default::default()
        };
        let m = fit_boosted_propensity(&d, &t, &w, &cfg).unwrap();
        assert!((m.initial_score - (3.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_rejected() {
        let d = one_col(vec![0.0, 1.0]);
        let r = fit_boosted_propensity(&d, &[1.0, 1.0], &[1.0, 1.0], &BoostConfig::default());
        assert!(matches!(r, Err(Error::SingleClass(_))));
    }

    #[test]
    fn separable_covariate_pushes_propensities_to_clamps() {
        let x: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let t = x.clone();
        let cfg = BoostConfig {
            n_trees: 3000,
            shrinkage: 0.1,
            min_node_weight: 1.0,
            ..Default::default()
        };
        let d = one_col(x);
        let m = fit_boosted_propensity(&d, &t, &vec![1.0; 40], &cfg).unwrap();
        let mut prev = 0.5;
        for it in [0, 10, 100, 1000, 3000] {
            let p = m.predict_proba(&[1.0], it);
            assert!(p >= prev);
            prev = p;
        }
        assert_eq!(m.predict_proba(&[1.0], 3000), 1.0 - PROPENSITY_CLAMP);
        assert_eq!(m.predict_proba(&[0.0], 3000), PROPENSITY_CLAMP);
    }

    #[test]
    fn cursor_matches_direct_prediction() {
        let x: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64).collect();
        let t: Vec<f64> = (0..30).map(|i| ((i * 5) % 3 == 0) as u8 as f64).collect();
        let d = one_col(x.clone());
        let cfg = BoostConfig {
            n_trees: 50,
            min_node_weight: 2.0,
            ..Default::default()
        };
        let m = fit_boosted_propensity(&d, &t, &vec![1.0; 30], &cfg).unwrap();
        let binned = BinnedDesign::new(&d);
        let mut c = ScoreCursor::new(&m, &binned);
        c.seek(37);
        c.seek(12);
        for (r, &xv) in x.iter().enumerate() {
            assert!((c.scores()[r] - m.score(&[xv], 12)).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(BoostConfig::default().validate().is_ok());
        for cfg in [
            BoostConfig { shrinkage: 0.0, ..Default::default() },
            BoostConfig { bag_fraction: 1.5, ..Default::default() },
            BoostConfig { n_trees: 0, ..Default::default() },
            BoostConfig { eval_stride: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
