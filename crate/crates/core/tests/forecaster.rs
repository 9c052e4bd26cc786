mod common;

use common::{date, recovery_series, series};
use stormwatch_core::forecast::{fit, fit_with, FitOptions, HolidayCalendar, HyperParams};
use stormwatch_core::SignalKind;

fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn recovers_trend_and_seasonality() {
    let (clean, noisy) = recovery_series(1460, 0.1, 1);
    let s = series(SignalKind::Topics, date(2000, 1, 1), &noisy);
    let hp = HyperParams { interval_width: 0.95, ..Default::default() };
    let started = std::time::Instant::now();
    let model = fit(&s, &hp, &HolidayCalendar::default()).unwrap();
    let elapsed = started.elapsed();
    let forecast = model.predict_with_interval(s.span());
    let pred: Vec<f64> = forecast.points.iter().map(|p| p.yhat).collect();
    let r2 = r_squared(&clean, &pred);
    let inside = noisy
        .iter()
        .zip(&forecast.points)
        .filter(|(y, p)| p.lower <= **y && **y <= p.upper)
        .count() as f64
        / noisy.len() as f64;
    println!("r2={r2:.5} coverage={inside:.4} sigma={:.4} elapsed={elapsed:?}", model.sigma_resid);
    assert!(r2 >= 0.95);
    assert!((0.92..=0.98).contains(&inside));
}

#[test]
fn coverage_tracks_interval_width() {
    let (_, noisy) = recovery_series(2000, 0.2, 2);
    let s = series(SignalKind::Plot, date(1997, 6, 1), &noisy);
    let model = fit(&s, &HyperParams::default(), &HolidayCalendar::default()).unwrap();
    for w in [0.5, 0.8, 0.9, 0.95] {
        let f = model.with_interval_width(w).unwrap().predict_with_interval(s.span());
        let cov = noisy.iter().zip(&f.points).filter(|(y, p)| p.lower <= **y && **y <= p.upper).count()
            as f64
            / noisy.len() as f64;
        assert!((cov - w).abs() <= 0.03, "width {w}: coverage {cov}");
    }
}

#[test]
fn objective_never_increases_within_a_round() {
    let (_, noisy) = recovery_series(900, 0.1, 3);
    let s = series(SignalKind::Llm, date(2001, 1, 1), &noisy);
    let (_, diag) = fit_with(&s, &HyperParams::default(), &HolidayCalendar::default(), &FitOptions::default())
        .unwrap();
    assert!(!diag.rounds.is_empty());
    for round in &diag.rounds {
        for w in round.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn stiffer_prior_shrinks_changepoints() {
    let (_, noisy) = recovery_series(1000, 0.1, 4);
    let s = series(SignalKind::Entities, date(2002, 1, 1), &noisy);
    let l1 = |scale: f64| {
        let hp = HyperParams { changepoint_prior_scale: scale, ..Default::default() };
        fit(&s, &hp, &HolidayCalendar::default()).unwrap().delta.iter().map(|d| d.abs()).sum::<f64>()
    };
    let norms = [l1(0.5), l1(0.05), l1(0.005)];
    assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
}

#[test]
fn prediction_is_sum_of_components() {
    let (_, noisy) = recovery_series(730, 0.1, 5);
    let s = series(SignalKind::Topics, date(2004, 1, 1), &noisy);
    let mut cal = HolidayCalendar::default();
    cal.add(date(2004, 7, 4), "july4").unwrap();
    cal.add(date(2005, 7, 4), "july4").unwrap();
    cal.add(date(2004, 12, 25), "xmas").unwrap();
    let model = fit(&s, &HyperParams::default(), &cal).unwrap();
    for d in s.span().days().chain([date(2006, 3, 1)]) {
        let c = model.components(d);
        assert!((c.total() - model.predict_point(d)).abs() < 1e-10);
    }
}

#[test]
fn fitting_is_deterministic() {
    let (_, noisy) = recovery_series(800, 0.1, 6);
    let s = series(SignalKind::Plot, date(2003, 1, 1), &noisy);
    let a = fit(&s, &HyperParams::default(), &HolidayCalendar::default()).unwrap();
    let b = fit(&s, &HyperParams::default(), &HolidayCalendar::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.k.to_bits(), b.k.to_bits());
}

#[test]
fn changepoints_respect_range() {
    let (_, noisy) = recovery_series(500, 0.1, 8);
    let s = series(SignalKind::Plot, date(2003, 1, 1), &noisy);
    let hp = HyperParams { changepoint_range: 0.6, weekly_order: 1, yearly_order: 0, ..Default::default() };
    let model = fit(&s, &hp, &HolidayCalendar::default()).unwrap();
    assert_eq!(model.changepoints.len(), model.delta.len());
    assert!(model.changepoints.iter().all(|&c| c < 0.6));
    assert_eq!(model.beta.len(), 2);
}
