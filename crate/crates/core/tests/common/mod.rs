//! Synthetic data generators shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stormwatch_core::{DispersionSeries, NaiveDate, SignalKind};

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Noiseless piecewise-linear trend with two slope changes plus weekly and
/// yearly cycles, and its noisy observation.
pub fn recovery_series(days: usize, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let clean: Vec<f64> = (0..days)
        .map(|i| {
            let d = i as f64;
            let t = d / (days - 1) as f64;
            let trend = 5.0 + 1.0 * t - 3.0 * (t - 0.3).max(0.0) + 4.0 * (t - 0.6).max(0.0);
            let weekly = 0.3 * (2.0 * PI * d / 7.0).sin() + 0.1 * (4.0 * PI * d / 7.0).cos();
            let yearly = 0.5 * (2.0 * PI * d / 365.25).cos() + 0.2 * (4.0 * PI * d / 365.25).sin();
            trend + weekly + yearly
        })
        .collect();
    let noisy = clean.iter().map(|c| c + normal.sample(&mut rng)).collect();
    (clean, noisy)
}

pub fn series(kind: SignalKind, start: NaiveDate, values: &[f64]) -> DispersionSeries {
    DispersionSeries::new(kind, start, values.iter().map(|v| Some(*v)).collect()).unwrap()
}
