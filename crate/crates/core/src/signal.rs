//! Daily dispersion signals.
//!
//! A day's dispersion is the trace of the sample covariance of that day's
//! document embeddings, divided by the number of documents. Low values mean
//! coverage converged on a narrow set of stories.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;

use crate::span::{add_days, DateSpan};
use crate::{Error, Result};

/// Minimum number of articles for a day to carry a dispersion value.
pub const DEFAULT_MIN_ARTICLES: usize = 2;

/// Trailing smoothing window applied before detection.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 7;

/// The four document representations, each yielding its own signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SignalKind {
    Topics,
    Entities,
    Plot,
    Llm,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] =
        [SignalKind::Topics, SignalKind::Entities, SignalKind::Plot, SignalKind::Llm];

    pub const fn index(self) -> usize {
        match self {
            SignalKind::Topics => 0,
            SignalKind::Entities => 1,
            SignalKind::Plot => 2,
            SignalKind::Llm => 3,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            SignalKind::Topics => "topics",
            SignalKind::Entities => "entities",
            SignalKind::Plot => "plot",
            SignalKind::Llm => "llm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One document's embedding under one representation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DocEmbedding {
    pub doc_id: String,
    pub date: NaiveDate,
    pub outlet: String,
    pub kind: SignalKind,
    pub vector: Vec<f64>,
}

/// Dispersion for one day; `value` is `None` when too few articles appeared.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DailyDispersion {
    pub date: NaiveDate,
    pub kind: SignalKind,
    pub value: Option<f64>,
    pub n_articles: usize,
}

/// Trace of the (n-1)-denominator sample covariance of `vectors`, divided by n.
///
/// Returns `Ok(None)` when fewer than `min_articles` vectors are given (and
/// always when fewer than two, where the sample covariance is undefined).
pub fn compute_daily_trace<V: AsRef<[f64]>>(vectors: &[V], min_articles: usize) -> Result<Option<f64>> {
    let n = vectors.len();
    let dim = match vectors.first() {
        Some(v) => v.as_ref().len(),
        None => return Ok(None),
    };
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.as_ref().len() != dim) {
        return Err(Error::MalformedInput(format!(
            "vector {i} has dimension {}, expected {dim}",
            v.as_ref().len()
        )));
    }
    if dim == 0 {
        return Err(Error::MalformedInput("zero-dimensional embedding".into()));
    }
    if n < min_articles.max(2) {
        return Ok(None);
    }

    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    let mut sum_sq = 0.0;
    for v in vectors {
        for (m, x) in mean.iter().zip(v.as_ref()) {
            let d = x - m;
            sum_sq += d * d;
        }
    }
    let trace = sum_sq / (nf - 1.0);
    Ok(Some(trace / nf))
}

/// A contiguous daily series for one signal kind. Missing days are `None`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DispersionSeries {
    pub kind: SignalKind,
    start: NaiveDate,
    values: Vec<Option<f64>>,
    smoothing_window: Option<usize>,
}

impl DispersionSeries {
    pub fn new(kind: SignalKind, start: NaiveDate, values: Vec<Option<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::MalformedInput("series must cover at least one day".into()));
        }
        if let Some(bad) = values.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::MalformedInput(format!("non-finite dispersion value {bad}")));
        }
        Ok(Self { kind, start, values, smoothing_window: None })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        add_days(self.start, self.values.len() as i64 - 1)
    }

    pub fn span(&self) -> DateSpan {
        DateSpan { start: self.start, end: self.end() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothing_window.is_some()
    }

    pub fn smoothing_window(&self) -> Option<usize> {
        self.smoothing_window
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        add_days(self.start, index as i64)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.values.len()).then_some(off as usize)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.index_of(date).and_then(|i| self.values[i])
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, Option<f64>)> + '_ {
        self.values.iter().enumerate().map(move |(i, v)| (self.date_at(i), *v))
    }

    /// Restrict to `span`, which must lie within the series.
    pub fn slice(&self, span: &DateSpan) -> Result<Self> {
        let (a, b) = match (self.index_of(span.start), self.index_of(span.end)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::SpanConflict(format!(
                    "{span} is not within series span {}",
                    self.span()
                )))
            }
        };
        Ok(Self {
            kind: self.kind,
            start: span.start,
            values: self.values[a..=b].to_vec(),
            smoothing_window: self.smoothing_window,
        })
    }

    /// Append `next` directly after this series, filling any gap with missing days.
    pub fn concat(&self, next: &DispersionSeries) -> Result<Self> {
        if next.kind != self.kind {
            return Err(Error::MalformedInput("cannot concatenate series of different kinds".into()));
        }
        if next.start <= self.end() {
            return Err(Error::SpanConflict(format!(
                "series {} overlaps {}",
                self.span(),
                next.span()
            )));
        }
        let gap = (next.start - self.end()).num_days() as usize - 1;
        let mut values = self.values.clone();
        values.extend(core::iter::repeat_n(None, gap));
        values.extend_from_slice(&next.values);
        let smoothing_window =
            if self.smoothing_window == next.smoothing_window { self.smoothing_window } else { None };
        Ok(Self { kind: self.kind, start: self.start, values, smoothing_window })
    }
}

/// Outcome of [`build_series`] beyond the series itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildReport {
    /// Records dated outside the span.
    pub excluded: usize,
    /// Set when no in-span record existed; the series is then all missing.
    pub empty: bool,
}

/// Per-day dispersion of `records` over `span`.
pub fn build_series(
    records: &[DocEmbedding],
    kind: SignalKind,
    span: DateSpan,
    min_articles: usize,
) -> Result<(DispersionSeries, Vec<DailyDispersion>, BuildReport)> {
    if let Some(r) = records.iter().find(|r| r.kind != kind) {
        return Err(Error::MalformedInput(format!(
            "record {} has kind {}, expected {kind}",
            r.doc_id, r.kind
        )));
    }
    if let Some(first) = records.first() {
        let dim = first.vector.len();
        if let Some(r) = records.iter().find(|r| r.vector.len() != dim) {
            return Err(Error::MalformedInput(format!(
                "record {} has dimension {}, expected {dim}",
                r.doc_id,
                r.vector.len()
            )));
        }
    }

    let days = span.len_days();
    let mut by_day: Vec<Vec<&[f64]>> = vec![Vec::new(); days];
    let mut report = BuildReport::default();
    for r in records {
        if span.contains(r.date) {
            by_day[span.offset_of(r.date) as usize].push(&r.vector);
        } else {
            report.excluded += 1;
        }
    }
    report.empty = by_day.iter().all(Vec::is_empty);

    let mut daily = Vec::with_capacity(days);
    let mut values = Vec::with_capacity(days);
    for (i, vectors) in by_day.iter().enumerate() {
        let value = compute_daily_trace(vectors, min_articles)?;
        daily.push(DailyDispersion {
            date: add_days(span.start, i as i64),
            kind,
            value,
            n_articles: vectors.len(),
        });
        values.push(value);
    }
    Ok((DispersionSeries::new(kind, span.start, values)?, daily, report))
}

/// Trailing mean over the last `window` days, ignoring missing days.
///
/// A day is missing in the output only when every day of its window is missing.
pub fn rolling_mean(series: &DispersionSeries, window: usize) -> Result<DispersionSeries> {
    if window == 0 {
        return Err(Error::InvalidConfig("smoothing window must be at least 1".into()));
    }
    let vals = &series.values;
    let out = (0..vals.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let (sum, count) =
                vals[lo..=i].iter().flatten().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            (count > 0).then(|| sum / count as f64)
        })
        .collect();
    Ok(DispersionSeries {
        kind: series.kind,
        start: series.start,
        values: out,
        smoothing_window: Some(window),
    })
}

/// Sample Pearson correlation over days present in both series.
pub fn pearson(a: &DispersionSeries, b: &DispersionSeries) -> Result<f64> {
    if a.start != b.start || a.len() != b.len() {
        return Err(Error::MalformedInput("series must share a date axis".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        a.values.iter().zip(&b.values).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip();
    pearson_slices(&xs, &ys)
}

/// Correlation of two 0/1 flag vectors (the phi coefficient).
pub fn anomaly_agreement(flags_a: &[bool], flags_b: &[bool]) -> Result<f64> {
    if flags_a.len() != flags_b.len() {
        return Err(Error::MalformedInput("flag vectors differ in length".into()));
    }
    let to_f = |f: &[bool]| f.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    pearson_slices(&to_f(flags_a), &to_f(flags_b))
}

pub(crate) fn pearson_slices(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} paired points, need at least 3")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// The four dispersion series on a shared date axis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SignalBundle {
    series: [DispersionSeries; 4],
}

impl SignalBundle {
    /// Collect one series per kind; order of `series` does not matter.
    pub fn new(series: Vec<DispersionSeries>) -> Result<Self> {
        let mut slots: [Option<DispersionSeries>; 4] = Default::default();
        for s in series {
            let i = s.kind.index();
            if slots[i].is_some() {
                return Err(Error::MalformedInput(format!("duplicate series for {}", s.kind)));
            }
            slots[i] = Some(s);
        }
        let [a, b, c, d] = slots;
        let series = [
            a.ok_or(Error::MissingKind(SignalKind::Topics))?,
            b.ok_or(Error::MissingKind(SignalKind::Entities))?,
            c.ok_or(Error::MissingKind(SignalKind::Plot))?,
            d.ok_or(Error::MissingKind(SignalKind::Llm))?,
        ];
        let axis = series[0].span();
        if series.iter().any(|s| s.span() != axis) {
            return Err(Error::MalformedInput("bundle series must share one date axis".into()));
        }
        Ok(Self { series })
    }

    pub fn get(&self, kind: SignalKind) -> &DispersionSeries {
        &self.series[kind.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DispersionSeries> {
        self.series.iter()
    }

    pub fn span(&self) -> DateSpan {
        self.series[0].span()
    }

    pub fn start(&self) -> NaiveDate {
        self.series[0].start
    }

    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn smoothed(&self, window: usize) -> Result<Self> {
        let [a, b, c, d] = &self.series;
        Ok(Self {
            series: [
                rolling_mean(a, window)?,
                rolling_mean(b, window)?,
                rolling_mean(c, window)?,
                rolling_mean(d, window)?,
            ],
        })
    }

    pub fn slice(&self, span: &DateSpan) -> Result<Self> {
        let [a, b, c, d] = &self.series;
        Ok(Self { series: [a.slice(span)?, b.slice(span)?, c.slice(span)?, d.slice(span)?] })
    }

    pub fn concat(&self, next: &SignalBundle) -> Result<Self> {
        let [a, b, c, d] = &self.series;
        let [e, f, g, h] = &next.series;
        Ok(Self { series: [a.concat(e)?, b.concat(f)?, c.concat(g)?, d.concat(h)?] })
    }

    /// Pairwise Pearson correlations, upper triangle in [`SignalKind::ALL`] order.
    pub fn correlations(&self) -> Vec<(SignalKind, SignalKind, Result<f64>)> {
        pairs().map(|(a, b)| (a, b, pearson(self.get(a), self.get(b)))).collect()
    }
}

/// Pairwise phi coefficients of per-kind anomaly flags.
pub fn anomaly_correlations(flags: &[Vec<bool>; 4]) -> Vec<(SignalKind, SignalKind, Result<f64>)> {
    pairs()
        .map(|(a, b)| (a, b, anomaly_agreement(&flags[a.index()], &flags[b.index()])))
        .collect()
}

fn pairs() -> impl Iterator<Item = (SignalKind, SignalKind)> {
    (0..4).flat_map(|i| (i + 1..4).map(move |j| (SignalKind::ALL[i], SignalKind::ALL[j])))
}
