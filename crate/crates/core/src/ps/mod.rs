//! Boosted propensity scores with balance-optimized stopping.
//!
//! The model is fit separately within each moderator level (default) or once
//! on the pooled sample with the moderator as a feature. The boosting
//! iteration is chosen to minimize the largest weighted KS statistic (or
//! absolute SMD) over the indicator design, and the resulting propensities are
//! turned into ATE weights and composite (ATE x survey) weights.

pub mod boost;
pub mod select;
pub mod tree;
pub mod weights;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use boost::{
    bernoulli_deviance, clamp_propensity, expit, fit_boosted_binned, fit_boosted_propensity, BoostConfig,
    BoostedModel, ScoreCursor, StopMethod, PROPENSITY_CLAMP,
};
pub use select::{evaluate_criterion, select_iteration, select_iteration_by, CriterionData, TracePoint};
pub use tree::{BinnedDesign, Node, Tree, TREE_MAX_BINS};
pub use weights::{ate_weight, ate_weights, effective_sample_size};

use crate::error::{Error, Result};
use crate::tabular::{encode_full, Dataset, DesignMatrix};

/// Moderator level a fit belongs to, or the pooled sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Stratum {
    Level(u8),
    Pooled,
}

impl Stratum {
    pub fn index(self) -> u64 {
        match self {
            Stratum::Level(z) => z as u64,
            Stratum::Pooled => 2,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stratum::Level(z) => write!(f, "z{z}"),
            Stratum::Pooled => f.write_str("pooled"),
        }
    }
}

impl From<Stratum> for String {
    fn from(s: Stratum) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Stratum {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "z0" => Ok(Stratum::Level(0)),
            "z1" => Ok(Stratum::Level(1)),
            "pooled" => Ok(Stratum::Pooled),
            other => Err(format!("unknown stratum `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsMode {
    #[default]
    Stratified,
    Pooled,
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub stratum: Stratum,
    /// Positions, in the dataset passed to the fitting function, of the rows
    /// this fit covers. Per-row vectors below follow this order.
    pub rows: Vec<usize>,
    pub model: BoostedModel,
    pub selected_iteration: usize,
    pub stop_method: StopMethod,
    /// Criterion at every evaluated iteration, ascending.
    pub criterion_trace: Vec<TracePoint>,
    pub propensities: Vec<f64>,
    pub ps_weights: Vec<f64>,
    pub composite_weights: Vec<f64>,
    pub ess_treated: f64,
    pub ess_control: f64,
}

impl PropensityFit {
    pub fn selected_point(&self) -> TracePoint {
        *self
            .criterion_trace
            .iter()
            .find(|p| p.iteration == self.selected_iteration)
            .expect("selected iteration is in the trace")
    }
}

/// Fits one group of rows: `design` already restricted to them.
fn fit_rows(
    stratum: Stratum,
    rows: Vec<usize>,
    design: &DesignMatrix,
    treatment: &[u8],
    survey: &[f64],
    cfg: &BoostConfig,
) -> Result<PropensityFit> {
    let t: Vec<f64> = treatment.iter().map(|&v| v as f64).collect();
    boost::validate_inputs(design, &t, survey)?;
    let cfg = BoostConfig {
        seed: cfg.seed ^ stratum.index(),
        ..cfg.clone()
    };
    let binned = BinnedDesign::with_max_bins(design, TREE_MAX_BINS);
    let model = fit_boosted_binned(&binned, &t, survey, &cfg)?;
    let exact = BinnedDesign::new(design);
    let data = CriterionData::new(&exact, design, &t, survey);
    let (selected_iteration, criterion_trace) =
        select_iteration(&model, &binned, &data, cfg.stop_method, cfg.eval_stride);

    let mut cursor = ScoreCursor::new(&model, &binned);
    cursor.seek(selected_iteration);
    let propensities = cursor.propensities();
    let ps_weights = ate_weights(&propensities, treatment);
    let composite_weights: Vec<f64> = ps_weights.iter().zip(survey).map(|(a, b)| a * b).collect();
    let arm = |a: u8| {
        effective_sample_size(
            composite_weights
                .iter()
                .zip(treatment)
                .filter(|(_, &t)| t == a)
                .map(|(w, _)| w),
        )
    };
    let (ess_treated, ess_control) = (arm(1), arm(0));
    Ok(PropensityFit {
        stratum,
        rows,
        model,
        selected_iteration,
        stop_method: cfg.stop_method,
        criterion_trace,
        propensities,
        ps_weights,
        composite_weights,
        ess_treated,
        ess_control,
    })
}

/// One fit per moderator level present in `ds`, in level order.
///
/// Strata are independent and are fit in parallel; each uses the seed
/// `cfg.seed ^ level`, so results do not depend on scheduling.
pub fn fit_stratified(ds: &Dataset, cfg: &BoostConfig) -> Result<Vec<PropensityFit>> {
    cfg.validate()?;
    let full = encode_full(ds, false)?;
    let groups: Vec<(u8, Vec<usize>)> = (0..2u8)
        .map(|z| (z, ds.stratum_rows(z)))
        .filter(|(_, rows)| !rows.is_empty())
        .collect();
    if groups.is_empty() {
        return Err(Error::EmptyStratum(0));
    }
    groups
        .into_par_iter()
        .map(|(z, rows)| {
            let design = full.select_rows(&rows);
            let t: Vec<u8> = rows.iter().map(|&i| ds.treatment[i]).collect();
            let w: Vec<f64> = rows.iter().map(|&i| ds.weights[i]).collect();
            fit_rows(Stratum::Level(z), rows, &design, &t, &w, cfg)
        })
        .collect()
}

/// A single fit over all rows with the moderator as an extra feature.
pub fn fit_pooled(ds: &Dataset, cfg: &BoostConfig) -> Result<PropensityFit> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyStratum(0));
    }
    let design = encode_full(ds, true)?;
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    fit_rows(Stratum::Pooled, rows, &design, &ds.treatment, &ds.weights, cfg)
}

pub fn fit_propensities(ds: &Dataset, cfg: &BoostConfig, mode: PsMode) -> Result<Vec<PropensityFit>> {
    match mode {
        PsMode::Stratified => fit_stratified(ds, cfg),
        PsMode::Pooled => Ok(vec![fit_pooled(ds, cfg)?]),
    }
}

fn gather(ds: &Dataset, fits: &[PropensityFit], field: impl Fn(&PropensityFit) -> &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; ds.n_rows()];
    for fit in fits {
        for (k, &i) in fit.rows.iter().enumerate() {
            out[i] = field(fit)[k];
        }
    }
    out
}

/// Composite weights of every dataset row, gathered from the fits.
pub fn composite_weights(ds: &Dataset, fits: &[PropensityFit]) -> Vec<f64> {
    gather(ds, fits, |f| &f.composite_weights)
}

/// Selected-iteration propensities of every dataset row.
pub fn propensities(ds: &Dataset, fits: &[PropensityFit]) -> Vec<f64> {
    gather(ds, fits, |f| &f.propensities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratum_round_trips_through_strings() {
        for s in [Stratum::Level(0), Stratum::Level(1), Stratum::Pooled] {
            assert_eq!(Stratum::try_from(s.to_string()).unwrap(), s);
        }
        assert!(Stratum::try_from("z7".to_string()).is_err());
    }
}
