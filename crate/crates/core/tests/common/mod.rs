//! Brute-force reference implementations shared by the oracle tests and
//! the acceptance harness.
#![allow(dead_code)]

use modwt_core::balance::{weighted_ks, weighted_smd};
use modwt_core::demo::{self, DemoConfig};
use modwt_core::outcome::{fit_weighted_logistic, outcome_design, risk_difference, sandwich_covariance};
use modwt_core::tabular::{ColumnLabel, DesignMatrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn brute_smd(x: &[f64], t: &[u8], w: &[f64]) -> f64 {
    let mean = |arm: Option<u8>| {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            if arm.is_none_or(|a| t[i] == a) {
                num += w[i] * x[i];
                den += w[i];
            }
        }
        num / den
    };
    let m = mean(None);
    let mut var = 0.0;
    let mut sw = 0.0;
    for i in 0..x.len() {
        var += w[i] * (x[i] - m).powi(2);
        sw += w[i];
    }
    (mean(Some(1)) - mean(Some(0))) / (var / sw).sqrt()
}

pub fn brute_ks(x: &[f64], t: &[u8], w: &[f64]) -> f64 {
    let mut best: f64 = 0.0;
    for &c in x {
        let mut f = [0.0; 2];
        let mut tot = [0.0; 2];
        for j in 0..x.len() {
            let a = t[j] as usize;
            tot[a] += w[j];
            if x[j] <= c {
                f[a] += w[j];
            }
        }
        best = best.max((f[1] / tot[1] - f[0] / tot[0]).abs());
    }
    best
}

pub fn design(cols: Vec<Vec<f64>>) -> DesignMatrix {
    DesignMatrix {
        n_rows: cols[0].len(),
        labels: (0..cols.len())
            .map(|j| ColumnLabel {
                covariate: format!("c{j}"),
                level: None,
            })
            .collect(),
        columns: cols,
    }
}

pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..k).map(|j| f64::from(u8::from(i == j))));
            row
        })
        .collect();
    for col in 0..k {
        let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                for j in 0..2 * k {
                    a[r][j] -= f * a[col][j];
                }
            }
        }
    }
    a.into_iter().map(|r| r[k..].to_vec()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.len())
        .map(|i| (0..b[0].len()).map(|j| (0..b.len()).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Largest absolute SMD and KS discrepancies against the brute-force
/// versions over `instances` random problems with at most 50 rows.
pub fn smd_ks_errors(instances: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut es, mut ek) = (0.0f64, 0.0f64);
    let mut checked = 0;
    while checked < instances {
        let n = rng.random_range(2..=50);
        let kind = rng.random_range(0..3);
        let x: Vec<f64> = (0..n)
            .map(|_| match kind {
                0 => rng.random::<f64>() * 10.0 - 5.0,
                1 => f64::from(u8::from(rng.random::<f64>() < 0.4)),
                _ => f64::from(rng.random_range(0..5u8)),
            })
            .collect();
        let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.1 + 3.0 * rng.random::<f64>()).collect();
        if !t.contains(&0) || !t.contains(&1) || x.iter().all(|&v| v == x[0]) {
            continue;
        }
        es = es.max((weighted_smd(&x, &t, &w).unwrap() - brute_smd(&x, &t, &w)).abs());
        ek = ek.max((weighted_ks(&x, &t, &w).unwrap() - brute_ks(&x, &t, &w)).abs());
        checked += 1;
    }
    (es, ek)
}

/// Treatment coefficient of a saturated 2x2 logit minus the sample log
/// odds ratio, worst case over two weight scales.
pub fn log_odds_ratio_error() -> f64 {
    // Treated 30 events of 50, control 12 of 70.
    let (a, b, c, d) = (30usize, 20usize, 12usize, 58usize);
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (tv, yv, k) in [(1.0, 1.0, a), (1.0, 0.0, b), (0.0, 1.0, c), (0.0, 0.0, d)] {
        t.extend(std::iter::repeat_n(tv, k));
        y.extend(std::iter::repeat_n(yv, k));
    }
    let x = design(vec![vec![1.0; t.len()], t]);
    let lor = ((a * d) as f64 / (b * c) as f64).ln();
    let base = (c as f64 / d as f64).ln();
    [1.0, 2.5]
        .iter()
        .map(|&scale| {
            let fit = fit_weighted_logistic(&x, &y, &vec![scale; y.len()]).unwrap();
            (fit.coefficients[1] - lor).abs().max((fit.coefficients[0] - base).abs())
        })
        .fold(0.0, f64::max)
}

/// Largest entry-wise gap between the library sandwich and a loop-based
/// transcription on a five-row fixture.
pub fn sandwich_error() -> f64 {
    let x = [
        [1.0, 0.0, 0.3],
        [1.0, 1.0, -1.2],
        [1.0, 1.0, 0.8],
        [1.0, 0.0, 2.0],
        [1.0, 1.0, -0.4],
    ];
    let y = [1.0, 0.0, 1.0, 0.0, 1.0];
    let w = [1.0, 2.0, 0.5, 1.5, 3.0];
    let beta = [0.2, -0.5, 0.7];
    let mut a = vec![vec![0.0; 3]; 3];
    let mut b = vec![vec![0.0; 3]; 3];
    for i in 0..5 {
        let eta: f64 = (0..3).map(|j| x[i][j] * beta[j]).sum();
        let p = 1.0 / (1.0 + (-eta).exp());
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += w[i] * p * (1.0 - p) * x[i][r] * x[i][c];
                b[r][c] += (w[i] * (y[i] - p)).powi(2) * x[i][r] * x[i][c];
            }
        }
    }
    let ai = invert(&a);
    let expected = matmul(&matmul(&ai, &b), &ai);
    let d = design((0..3).map(|j| x.iter().map(|r| r[j]).collect()).collect());
    let got = sandwich_covariance(&beta, &d, &y, &w).unwrap();
    let mut worst = 0.0f64;
    for r in 0..3 {
        for c in 0..3 {
            worst = worst.max((got[(r, c)] - expected[r][c]).abs());
        }
    }
    worst
}

/// Worst relative gap between the analytic risk-difference gradient and
/// central differences with step 1e-6.
pub fn gradient_relative_error() -> f64 {
    let ds = demo::simulate(&DemoConfig {
        n: 600,
        seed: 5,
        ..DemoConfig::default()
    })
    .unwrap();
    let od = outcome_design(&ds).unwrap();
    let y = ds.outcome_f64();
    let fit = fit_weighted_logistic(&od.matrix, &y, &ds.weights).unwrap();
    let rows: Vec<usize> = (0..ds.n_rows()).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for z in [Some(0u8), Some(1), None] {
        let (_, grad) = risk_difference(&fit.coefficients, &od, &ds.weights, &rows, z);
        for j in 0..grad.len() {
            let mut up = fit.coefficients.clone();
            let mut dn = fit.coefficients.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (risk_difference(&up, &od, &ds.weights, &rows, z).0
                - risk_difference(&dn, &od, &ds.weights, &rows, z).0)
                / (2.0 * h);
            worst = worst.max((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-12));
        }
    }
    worst
}
