//! Regressor layout for the additive model.
//!
//! Column order: trend slope, intercept, one hinge per changepoint, weekly
//! Fourier pairs, yearly Fourier pairs, one indicator per holiday name.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use chrono::NaiveDate;

use super::{HolidayCalendar, HyperParams};
use crate::span::DateSpan;

pub const WEEKLY_PERIOD: f64 = 7.0;
pub const YEARLY_PERIOD: f64 = 365.25;

/// Which penalty family a column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Trend,
    Changepoint,
    Seasonal,
    Holiday,
}

/// Column bookkeeping shared by fitting and prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub span: DateSpan,
    /// Changepoint locations on the scaled [0, 1] time axis.
    pub changepoints: Vec<f64>,
    pub weekly_order: usize,
    pub yearly_order: usize,
    pub holiday_names: Vec<String>,
}

impl Layout {
    pub fn new(span: DateSpan, hp: &HyperParams, holidays: &HolidayCalendar) -> Self {
        Self {
            span,
            changepoints: changepoint_grid(hp.n_changepoints, hp.changepoint_range),
            weekly_order: hp.weekly_order,
            yearly_order: hp.yearly_order,
            holiday_names: holidays.names(),
        }
    }

    pub fn n_cols(&self) -> usize {
        2 + self.changepoints.len() + self.n_seasonal() + self.holiday_names.len()
    }

    pub fn n_seasonal(&self) -> usize {
        2 * (self.weekly_order + self.yearly_order)
    }

    pub fn changepoint_offset(&self) -> usize {
        2
    }

    pub fn seasonal_offset(&self) -> usize {
        2 + self.changepoints.len()
    }

    pub fn holiday_offset(&self) -> usize {
        self.seasonal_offset() + self.n_seasonal()
    }

    pub fn role(&self, col: usize) -> ColumnRole {
        if col < 2 {
            ColumnRole::Trend
        } else if col < self.seasonal_offset() {
            ColumnRole::Changepoint
        } else if col < self.holiday_offset() {
            ColumnRole::Seasonal
        } else {
            ColumnRole::Holiday
        }
    }

    /// Length of the training span in days, as used to scale time to [0, 1].
    pub fn time_scale(&self) -> f64 {
        (self.span.len_days().saturating_sub(1)).max(1) as f64
    }

    /// Scaled time of `date`; 0 at the first training day, 1 at the last.
    pub fn scaled_time(&self, date: NaiveDate) -> f64 {
        self.span.offset_of(date) as f64 / self.time_scale()
    }

    /// Write the regressor row for `date` into `row` (length [`Self::n_cols`]).
    pub fn fill_row(&self, date: NaiveDate, holidays: &HolidayCalendar, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.n_cols());
        let days = self.span.offset_of(date) as f64;
        let t = days / self.time_scale();
        row[0] = t;
        row[1] = 1.0;
        let cp = self.changepoint_offset();
        for (j, &s) in self.changepoints.iter().enumerate() {
            row[cp + j] = hinge(t, s);
        }
        let mut col = self.seasonal_offset();
        for (order, period) in [(self.weekly_order, WEEKLY_PERIOD), (self.yearly_order, YEARLY_PERIOD)] {
            for n in 1..=order {
                let arg = 2.0 * PI * n as f64 * days / period;
                row[col] = libm::sin(arg);
                row[col + 1] = libm::cos(arg);
                col += 2;
            }
        }
        let ho = self.holiday_offset();
        for (j, name) in self.holiday_names.iter().enumerate() {
            row[ho + j] = if holidays.is_holiday(date, name) { 1.0 } else { 0.0 };
        }
    }
}

/// Slope-change regressor `max(0, t - s)`: the slope term `t * 1{t > s}`
/// combined with its offset `-s * 1{t > s}`, so the trend stays continuous.
pub fn hinge(t: f64, s: f64) -> f64 {
    if t > s {
        t - s
    } else {
        0.0
    }
}

/// `n` changepoints spaced uniformly inside (0, range): `range * j / (n + 1)`.
pub fn changepoint_grid(n: usize, range: f64) -> Vec<f64> {
    (1..=n).map(|j| range * j as f64 / (n + 1) as f64).collect()
}

/// Dense row-major design over a daily grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub layout: Layout,
    rows: Vec<f64>,
}

impl Design {
    pub fn n_rows(&self) -> usize {
        self.layout.span.len_days()
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.rows[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i)[j])
    }
}

/// Regressor rows for every day of `span`.
pub fn build_design(span: DateSpan, hp: &HyperParams, holidays: &HolidayCalendar) -> Design {
    let layout = Layout::new(span, hp, holidays);
    let p = layout.n_cols();
    let mut rows = vec![0.0; p * span.len_days()];
    for (i, date) in span.days().enumerate() {
        layout.fill_row(date, holidays, &mut rows[i * p..(i + 1) * p]);
    }
    Design { layout, rows }
}
