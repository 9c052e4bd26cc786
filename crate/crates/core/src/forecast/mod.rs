//! Additive forecaster: piecewise-linear trend, Fourier seasonality and
//! holiday effects, fitted by penalized least squares.
//!
//! The fit minimizes
//!
//! ```text
//! 1/(2 sigma^2) * sum (y_t - yhat_t)^2
//!     + 1/changepoint_prior_scale * |delta|_1
//!     + 1/(2 seasonality_prior_scale^2) * |beta|_2^2
//!     + 1/(2 holiday_prior_scale^2) * |kappa|_2^2
//! ```
//!
//! over present days, on values scaled by their maximum magnitude. `sigma` is
//! re-estimated from the residuals between rounds until it settles.

mod design;
mod solver;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;

pub use self::design::{build_design, changepoint_grid, hinge, ColumnRole, Design, Layout};
pub use self::solver::SolverOptions;
use self::solver::{Penalty, Problem};
use crate::signal::DispersionSeries;
use crate::span::DateSpan;
use crate::stats::normal_quantile;
use crate::{Error, Result};

/// Forecaster hyperparameters. Only the first three are searched.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HyperParams {
    /// Probability mass of the uncertainty band, in (0, 1).
    pub interval_width: f64,
    /// Scale of the Laplace prior on slope changes; smaller is stiffer.
    pub changepoint_prior_scale: f64,
    /// Leading fraction of the training span that may hold changepoints.
    pub changepoint_range: f64,
    pub n_changepoints: usize,
    pub weekly_order: usize,
    pub yearly_order: usize,
    pub seasonality_prior_scale: f64,
    pub holiday_prior_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            interval_width: 0.8,
            changepoint_prior_scale: 0.05,
            changepoint_range: 0.8,
            n_changepoints: 25,
            weekly_order: 3,
            yearly_order: 10,
            seasonality_prior_scale: 10.0,
            holiday_prior_scale: 10.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} out of range")));
        if !(self.interval_width > 0.0 && self.interval_width < 1.0) {
            return bad("interval_width");
        }
        if !(self.changepoint_range > 0.0 && self.changepoint_range <= 1.0) {
            return bad("changepoint_range");
        }
        if !(self.changepoint_prior_scale > 0.0 && self.changepoint_prior_scale.is_finite()) {
            return bad("changepoint_prior_scale");
        }
        if self.seasonality_prior_scale.is_nan() || self.seasonality_prior_scale <= 0.0 {
            return bad("seasonality_prior_scale");
        }
        if self.holiday_prior_scale.is_nan() || self.holiday_prior_scale <= 0.0 {
            return bad("holiday_prior_scale");
        }
        Ok(())
    }

    /// Minimum number of present days needed to fit.
    pub fn min_present_days(&self) -> usize {
        2 * (self.weekly_order + self.yearly_order) + self.n_changepoints + 2
    }
}

/// Named one-day holiday effects.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HolidayCalendar {
    entries: Vec<(NaiveDate, String)>,
}

impl HolidayCalendar {
    pub fn new(entries: Vec<(NaiveDate, String)>) -> Result<Self> {
        let mut cal = Self::default();
        for (d, n) in entries {
            cal.add(d, n)?;
        }
        Ok(cal)
    }

    pub fn add(&mut self, date: NaiveDate, name: impl Into<String>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(d, n)| *d == date && *n == name) {
            return Err(Error::MalformedInput(format!("duplicate holiday {name} on {date}")));
        }
        self.entries.push((date, name));
        Ok(())
    }

    pub fn entries(&self) -> &[(NaiveDate, String)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct names in sorted order; this is the kappa column order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.entries.iter().map(|(_, n)| n.clone()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn is_holiday(&self, date: NaiveDate, name: &str) -> bool {
        self.entries.iter().any(|(d, n)| *d == date && n == name)
    }
}

/// A fitted additive model. Coefficients are in the units of the input series;
/// the trend is expressed on the scaled time axis (0 at the first training
/// day, 1 at the last).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FittedModel {
    /// Base trend slope.
    pub k: f64,
    /// Base offset.
    pub m: f64,
    pub changepoints: Vec<f64>,
    /// Slope adjustment at each changepoint.
    pub delta: Vec<f64>,
    /// Fourier coefficients, weekly then yearly, sin/cos interleaved.
    pub beta: Vec<f64>,
    /// One coefficient per holiday name, in [`HolidayCalendar::names`] order.
    pub kappa: Vec<f64>,
    pub sigma_resid: f64,
    pub train_span: DateSpan,
    pub hyperparams: HyperParams,
    pub holidays: HolidayCalendar,
    pub converged: bool,
}

/// Per-round solver traces, for inspecting convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub rounds: Vec<FitRound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRound {
    /// Residual variance (scaled units) used to weight the penalties.
    pub sigma2: f64,
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub solver: SolverOptions,
    /// Maximum number of sigma re-estimation rounds.
    pub max_rounds: usize,
    /// Relative change in sigma^2 below which the rounds stop.
    pub sigma_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), max_rounds: 6, sigma_tol: 1e-3 }
    }
}

pub fn fit(series: &DispersionSeries, hp: &HyperParams, holidays: &HolidayCalendar) -> Result<FittedModel> {
    fit_with(series, hp, holidays, &FitOptions::default()).map(|(m, _)| m)
}

pub fn fit_with(
    series: &DispersionSeries,
    hp: &HyperParams,
    holidays: &HolidayCalendar,
    opts: &FitOptions,
) -> Result<(FittedModel, FitDiagnostics)> {
    hp.validate()?;
    let present = series.present_count();
    if present < hp.min_present_days() {
        return Err(Error::InsufficientData(format!(
            "{present} present days, model needs at least {}",
            hp.min_present_days()
        )));
    }
    let span = series.span();
    let design = build_design(span, hp, holidays);
    let layout = &design.layout;
    let p = layout.n_cols();

    let y_scale = series.values().iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let y_scale = if y_scale > 0.0 { y_scale } else { 1.0 };
    let observed: Vec<(usize, f64)> = series
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v / y_scale)))
        .collect();

    let base = Problem::from_rows(
        p,
        observed.iter().map(|&(i, y)| (design.row(i), y)),
        vec![Penalty::None; p],
    );

    // Start from ordinary least squares on the two trend columns.
    let mut coef = vec![0.0; p];
    {
        let mut a = [base.gram[0], base.gram[1], base.gram[p], base.gram[p + 1]];
        let mut b = [base.xty[0], base.xty[1]];
        match solver::cholesky_solve(&mut a, &mut b, 2) {
            Some(sol) => coef[..2].copy_from_slice(&sol),
            None => coef[1] = base.xty[1] / base.gram[p + 1],
        }
    }

    let residual_var = |coef: &[f64]| -> f64 {
        let rss: f64 = observed
            .iter()
            .map(|&(i, y)| {
                let r = y - dot(design.row(i), coef);
                r * r
            })
            .sum();
        rss / observed.len() as f64
    };

    let mut sigma2 = residual_var(&coef);
    let mut rounds = Vec::new();
    for _ in 0..opts.max_rounds.max(1) {
        let penalty = (0..p)
            .map(|j| match layout.role(j) {
                ColumnRole::Trend => Penalty::None,
                ColumnRole::Changepoint => Penalty::L1(sigma2 / hp.changepoint_prior_scale),
                ColumnRole::Seasonal => Penalty::L2(sigma2 / (hp.seasonality_prior_scale * hp.seasonality_prior_scale)),
                ColumnRole::Holiday => Penalty::L2(sigma2 / (hp.holiday_prior_scale * hp.holiday_prior_scale)),
            })
            .collect();
        let problem = Problem { penalty, ..base.clone() };
        let sol = problem.solve(coef, &opts.solver);
        coef = sol.coef;
        rounds.push(FitRound {
            sigma2,
            objective_trace: sol.objective_trace,
            sweeps: sol.sweeps,
            converged: sol.converged,
        });
        let next = residual_var(&coef);
        let settled = (next - sigma2).abs() <= opts.sigma_tol * sigma2.max(f64::MIN_POSITIVE);
        sigma2 = next;
        if settled {
            break;
        }
    }

    let converged = rounds.last().is_some_and(|r| r.converged);
    let unscale = |v: &[f64]| v.iter().map(|c| c * y_scale).collect::<Vec<f64>>();
    let cp = layout.changepoint_offset();
    let so = layout.seasonal_offset();
    let ho = layout.holiday_offset();
    let mut model = FittedModel {
        k: coef[0] * y_scale,
        m: coef[1] * y_scale,
        changepoints: layout.changepoints.clone(),
        delta: unscale(&coef[cp..so]),
        beta: unscale(&coef[so..ho]),
        kappa: unscale(&coef[ho..]),
        sigma_resid: 0.0,
        train_span: span,
        hyperparams: *hp,
        holidays: holidays.clone(),
        converged,
    };

    let residuals: Vec<f64> = series
        .iter()
        .filter_map(|(date, v)| v.map(|v| v - model.predict_point(date)))
        .collect();
    model.sigma_resid = crate::stats::sample_std(&residuals);
    Ok((model, FitDiagnostics { rounds }))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Additive parts of one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub trend: f64,
    pub seasonal: f64,
    pub holiday: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.trend + self.seasonal + self.holiday
    }
}

impl FittedModel {
    pub fn layout(&self) -> Layout {
        Layout {
            span: self.train_span,
            changepoints: self.changepoints.clone(),
            weekly_order: self.hyperparams.weekly_order,
            yearly_order: self.hyperparams.yearly_order,
            holiday_names: self.holidays.names(),
        }
    }

    pub fn trend(&self, date: NaiveDate) -> f64 {
        let t = self.layout().scaled_time(date);
        self.k * t
            + self.m
            + self.changepoints.iter().zip(&self.delta).map(|(&s, d)| d * hinge(t, s)).sum::<f64>()
    }

    pub fn components(&self, date: NaiveDate) -> Components {
        let layout = self.layout();
        let mut row = vec![0.0; layout.n_cols()];
        layout.fill_row(date, &self.holidays, &mut row);
        let so = layout.seasonal_offset();
        let ho = layout.holiday_offset();
        Components {
            trend: self.trend(date),
            seasonal: dot(&row[so..ho], &self.beta),
            holiday: dot(&row[ho..], &self.kappa),
        }
    }

    pub fn predict_point(&self, date: NaiveDate) -> f64 {
        let layout = self.layout();
        let mut row = vec![0.0; layout.n_cols()];
        layout.fill_row(date, &self.holidays, &mut row);
        let coef: Vec<f64> = [self.k, self.m]
            .iter()
            .chain(&self.delta)
            .chain(&self.beta)
            .chain(&self.kappa)
            .copied()
            .collect();
        dot(&row, &coef)
    }

    /// Amplitude `sqrt(sin^2 + cos^2)` of the `n`-th weekly harmonic.
    pub fn weekly_amplitude(&self, n: usize) -> Option<f64> {
        if n == 0 || n > self.hyperparams.weekly_order {
            return None;
        }
        let (s, c) = (self.beta[2 * (n - 1)], self.beta[2 * (n - 1) + 1]);
        Some(libm::sqrt(s * s + c * c))
    }

    /// Predictions with a Gaussian band of half-width `z * sigma_resid`.
    pub fn predict_with_interval(&self, span: DateSpan) -> Forecast {
        let z = normal_quantile((1.0 + self.hyperparams.interval_width) / 2.0);
        let half = z * self.sigma_resid;
        let points = span
            .days()
            .map(|date| {
                let yhat = self.predict_point(date);
                ForecastPoint { date, yhat, lower: yhat - half, upper: yhat + half }
            })
            .collect();
        Forecast { span, points }
    }

    /// Same model with another interval width.
    pub fn with_interval_width(&self, interval_width: f64) -> Result<Self> {
        let hyperparams = HyperParams { interval_width, ..self.hyperparams };
        hyperparams.validate()?;
        Ok(Self { hyperparams, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecastPoint {
    pub date: NaiveDate,
    pub yhat: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Forecast {
    pub span: DateSpan,
    pub points: Vec<ForecastPoint>,
}

impl Forecast {
    pub fn get(&self, date: NaiveDate) -> Option<&ForecastPoint> {
        let off = self.span.offset_of(date);
        if off < 0 {
            return None;
        }
        self.points.get(off as usize)
    }
}

/// Which side of the band counts as anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Direction {
    /// Dispersion below the band: coverage converging.
    #[default]
    Low,
    High,
    Both,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Some(Self::Low),
            "high" => Some(Self::High),
            "both" => Some(Self::Both),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::High => "high",
            Self::Both => "both",
        }
    }
}

impl core::fmt::Display for Direction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Days whose present value falls outside the band on the given side.
pub fn flag_anomalies(series: &DispersionSeries, forecast: &Forecast, direction: Direction) -> Result<Vec<bool>> {
    if series.span() != forecast.span {
        return Err(Error::MalformedInput(
            "series and forecast must share a date axis".to_string(),
        ));
    }
    Ok(series
        .values()
        .iter()
        .zip(&forecast.points)
        .map(|(v, pt)| match v {
            None => false,
            Some(y) => match direction {
                Direction::Low => *y < pt.lower,
                Direction::High => *y > pt.upper,
                Direction::Both => *y < pt.lower || *y > pt.upper,
            },
        })
        .collect())
}
