//! Helpers shared by the integration tests: synthetic daily price series for
//! the CLI backtest and a feature matrix built directly from the generative
//! process (with a planted predictive signal) for the evaluation tests.

// not every test binary uses every helper
#![allow(dead_code)]

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use regime_vi::features::FeatureMatrix;
use regime_vi::generate::sample_dataset;
use regime_vi::model::Hyperparameters;

/// Writes a `date,close` CSV of `days` consecutive calendar days following a
/// geometric random walk.
pub fn write_price_csv(path: &std::path::Path, seed: u64, days: usize) {
    let mut rng = StdRng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let mut close = 100.0;
    let mut out = String::from("date,close\n");
    for i in 0..days {
        let date = start + Duration::days(i as i64);
        close *= 1.0 + 0.01 * rng.gen_range(-1.0..1.0);
        out.push_str(&format!("{date},{close:.6}\n"));
    }
    std::fs::write(path, out).unwrap();
}

/// Hyperparameters of a well-separated three-regime process with an intercept
/// in the last slot. `sigma` controls the signal-to-noise of the planted
/// predictive relationship.
pub fn planted_hyperparameters(sigma: f64) -> Hyperparameters {
    let n = 4;
    let mut h = Hyperparameters::default_with(3, n, sigma, Some(3));
    h.m = DMatrix::identity(n, n);
    h.m[(3, 3)] = 1e-6;
    for k in 0..3 {
        let mut mu = DVector::zeros(n);
        mu[k] = 2.5;
        mu[3] = 1.0;
        h.mu0[k] = mu;
    }
    h.r0 = vec![
        {
            let mut r = DMatrix::identity(n, n) * 0.01;
            r[(3, 3)] = 1e-6;
            r
        };
        3
    ];
    h.beta0 = vec![
        DVector::from_vec(vec![0.9, -0.3, 0.0, 0.0]),
        DVector::from_vec(vec![-0.6, 0.6, 0.3, 0.0]),
        DVector::from_vec(vec![0.0, -0.3, 0.9, 0.0]),
    ];
    h.q0 = vec![DMatrix::identity(n, n) * 0.01; 3];
    h
}

/// Samples `rows` observations from the planted process and wraps them as a
/// dated feature matrix so the rolling backtest can consume them directly.
pub fn planted_feature_matrix(
    rows: usize,
    window: usize,
    sigma: f64,
    seed: u64,
) -> (FeatureMatrix, Hyperparameters) {
    let h = planted_hyperparameters(sigma);
    let synth = sample_dataset(&h, rows, seed).unwrap();
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let dates = (0..rows)
        .map(|i| start + Duration::days(i as i64))
        .collect();
    (
        FeatureMatrix {
            dates,
            x: synth.dataset.x,
            y: synth.dataset.y,
            window,
            zero_std_count: 0,
        },
        h,
    )
}
