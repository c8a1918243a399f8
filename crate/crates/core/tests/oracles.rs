//! Independent reimplementations checked against the library.

use modwt_core::balance::{balance_table, Phase};
use modwt_core::demo::{self, DemoConfig};
use modwt_core::ps::{evaluate_criterion, fit_stratified, BoostConfig, Stratum};
use modwt_core::tabular::encode_full;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{brute_ks, design};

#[test]
fn smd_and_ks_match_brute_force_on_random_instances() {
    let (smd, ks) = common::smd_ks_errors(1000, 11);
    assert!(smd <= 1e-12, "max smd error {smd:e}");
    assert!(ks <= 1e-12, "max ks error {ks:e}");
}

#[test]
fn two_by_two_logit_recovers_log_odds_ratio() {
    let e = common::log_odds_ratio_error();
    assert!(e <= 1e-8, "{e:e}");
}

#[test]
fn sandwich_matches_direct_transcription_on_five_rows() {
    let e = common::sandwich_error();
    assert!(e <= 1e-10, "{e:e}");
}

#[test]
fn risk_difference_gradient_matches_central_differences() {
    let e = common::gradient_relative_error();
    assert!(e <= 1e-6, "{e:e}");
}

#[test]
fn criterion_agrees_with_balance_module_at_selected_iteration() {
    let ds = demo::simulate(&DemoConfig {
        n: 500,
        seed: 3,
        ..DemoConfig::default()
    })
    .unwrap();
    let cfg = BoostConfig {
        n_trees: 400,
        ..BoostConfig::default()
    };
    let fits = fit_stratified(&ds, &cfg).unwrap();
    let table = balance_table(&ds, &fits).unwrap();
    let full = encode_full(&ds, false).unwrap();
    for f in &fits {
        let point = f.selected_point();
        let post = table.summary_for(f.stratum, Phase::Post).unwrap();
        assert!((point.ks_max - post.max_ks).abs() <= 1e-12, "{} vs {}", point.ks_max, post.max_ks);
        assert!((point.es_max - post.max_abs_smd).abs() <= 1e-12);

        let design = full.select_rows(&f.rows);
        let t: Vec<f64> = f.rows.iter().map(|&i| ds.treatment[i] as f64).collect();
        let w: Vec<f64> = f.rows.iter().map(|&i| ds.weights[i]).collect();
        let (ks, es) = evaluate_criterion(&f.model, f.selected_iteration, &design, &t, &w);
        assert!((ks - point.ks_max).abs() <= 1e-12);
        assert!((es - point.es_max).abs() <= 1e-12);
    }
    assert!(fits.iter().all(|f| matches!(f.stratum, Stratum::Level(_))));
}

#[test]
fn criterion_on_twenty_rows_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 20;
    let x0: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let x1: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect();
    let t: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 3 != 0))).collect();
    let w: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let d = design(vec![x0.clone(), x1.clone()]);
    let cfg = BoostConfig {
        n_trees: 30,
        min_node_weight: 1.0,
        shrinkage: 0.1,
        ..BoostConfig::default()
    };
    let model = modwt_core::ps::fit_boosted_propensity(&d, &t, &w, &cfg).unwrap();
    let tu: Vec<u8> = t.iter().map(|&v| v as u8).collect();
    for it in [0, 7, 30] {
        let p = model.propensities(&d, it);
        let comp: Vec<f64> = p
            .iter()
            .zip(&tu)
            .zip(&w)
            .map(|((&p, &ti), &wi)| modwt_core::ps::ate_weight(p, ti) * wi)
            .collect();
        let mut ks_max: f64 = 0.0;
        let mut es_max: f64 = 0.0;
        for x in [&x0, &x1] {
            // Mean difference under composite weights over the survey-weighted SD.
            let sd = modwt_core::balance::pooled_sd(x, &w);
            let es = modwt_core::balance::smd_with_sd(x, &tu, &comp, sd).unwrap();
            es_max = es_max.max(es.abs());
            ks_max = ks_max.max(brute_ks(x, &tu, &comp));
        }
        let (ks, es) = evaluate_criterion(&model, it, &d, &t, &w);
        assert!((ks - ks_max).abs() <= 1e-12, "it {it}: ks {ks} vs {ks_max}");
        assert!((es - es_max).abs() <= 1e-12, "it {it}: es {es} vs {es_max}");
    }
}
