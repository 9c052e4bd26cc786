//! Anomaly runs, the majority-of-signals rule, and candidate windows.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;

use crate::forecast::{fit, flag_anomalies, Direction, FittedModel, Forecast, HolidayCalendar, HyperParams};
use crate::signal::{SignalBundle, SignalKind};
use crate::span::{add_days, DateSpan};
use crate::{Error, Result};

pub const DEFAULT_QUORUM: usize = 3;
pub const DEFAULT_MIN_DURATION: usize = 2;

/// A maximal run of consecutive flagged days for one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnomalyRun {
    pub kind: SignalKind,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub length: usize,
}

/// Maximal `true` runs as inclusive index pairs.
pub fn index_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, flags.len() - 1));
    }
    runs
}

/// Maximal runs of flagged days; `axis_start` is the date of `flags[0]`.
pub fn extract_runs(flags: &[bool], kind: SignalKind, axis_start: NaiveDate) -> Vec<AnomalyRun> {
    index_runs(flags)
        .into_iter()
        .map(|(a, b)| AnomalyRun {
            kind,
            start: add_days(axis_start, a as i64),
            end: add_days(axis_start, b as i64),
            length: b - a + 1,
        })
        .collect()
}

/// A set of signal kinds, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KindSet(u8);

impl KindSet {
    pub fn insert(&mut self, kind: SignalKind) {
        self.0 |= 1 << kind.index();
    }

    pub fn contains(&self, kind: SignalKind) -> bool {
        self.0 & (1 << kind.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = SignalKind> + '_ {
        SignalKind::ALL.into_iter().filter(|k| self.contains(*k))
    }
}

impl FromIterator<SignalKind> for KindSet {
    fn from_iter<I: IntoIterator<Item = SignalKind>>(iter: I) -> Self {
        let mut s = KindSet::default();
        iter.into_iter().for_each(|k| s.insert(k));
        s
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for KindSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for KindSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        Ok(Vec::<SignalKind>::deserialize(d)?.into_iter().collect())
    }
}

/// Per-kind daily flags over one date axis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlagSet {
    pub start: NaiveDate,
    flags: [Vec<bool>; 4],
}

impl FlagSet {
    pub fn new(start: NaiveDate, flags: [Vec<bool>; 4]) -> Result<Self> {
        let n = flags[0].len();
        if flags.iter().any(|f| f.len() != n) {
            return Err(Error::MalformedInput("flag vectors are not aligned".into()));
        }
        Ok(Self { start, flags })
    }

    /// Build from a keyed map; every kind must be present.
    pub fn from_map(start: NaiveDate, mut map: BTreeMap<SignalKind, Vec<bool>>) -> Result<Self> {
        let mut take = |k| map.remove(&k).ok_or(Error::MissingKind(k));
        let flags = [
            take(SignalKind::Topics)?,
            take(SignalKind::Entities)?,
            take(SignalKind::Plot)?,
            take(SignalKind::Llm)?,
        ];
        Self::new(start, flags)
    }

    pub fn get(&self, kind: SignalKind) -> &[bool] {
        &self.flags[kind.index()]
    }

    pub fn as_array(&self) -> &[Vec<bool>; 4] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn votes(&self, index: usize) -> KindSet {
        SignalKind::ALL.into_iter().filter(|k| self.flags[k.index()][index]).collect()
    }

    /// Drop flagged runs shorter than `min_len` from every kind.
    pub fn without_short_runs(&self, min_len: usize) -> Self {
        let flags = self.flags.clone().map(|f| {
            let mut out = alloc::vec![false; f.len()];
            for (a, b) in index_runs(&f) {
                if b - a + 1 >= min_len {
                    out[a..=b].iter_mut().for_each(|x| *x = true);
                }
            }
            out
        });
        Self { start: self.start, flags }
    }
}

/// Days flagged by at least `quorum` kinds.
pub fn majority_days(flags: &FlagSet, quorum: usize) -> Vec<bool> {
    (0..flags.len()).map(|i| flags.votes(i).len() >= quorum).collect()
}

/// One flagged day inside a candidate window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DayVotes {
    pub date: NaiveDate,
    pub kinds: KindSet,
}

/// A run of days that most signals flag: a storm candidate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CandidateWindow {
    pub id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub votes: Vec<DayVotes>,
    /// Largest distance past the band edge within the window, for the kind
    /// with the most flagged days. Zero until annotated.
    pub peak_deficit: f64,
}

impl CandidateWindow {
    pub fn span(&self) -> DateSpan {
        DateSpan { start: self.start, end: self.end }
    }

    pub fn duration_days(&self) -> usize {
        self.span().len_days()
    }

    /// Number of window days each kind flagged, in [`SignalKind::ALL`] order.
    pub fn vote_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for day in &self.votes {
            for k in day.kinds.iter() {
                counts[k.index()] += 1;
            }
        }
        counts
    }

    /// Kind with the most flagged days; ties go to the earlier kind.
    pub fn most_supporting(&self) -> SignalKind {
        let counts = self.vote_counts();
        let mut best = SignalKind::Topics;
        for k in SignalKind::ALL {
            if counts[k.index()] > counts[best.index()] {
                best = k;
            }
        }
        best
    }
}

pub fn candidate_id(prefix: &str, start: NaiveDate) -> String {
    let stamp = start.format("%Y%m%d");
    if prefix.is_empty() {
        format!("c-{stamp}")
    } else {
        format!("{prefix}-{stamp}")
    }
}

fn window(flags: &FlagSet, a: usize, b: usize, prefix: &str) -> CandidateWindow {
    let start = add_days(flags.start, a as i64);
    CandidateWindow {
        id: candidate_id(prefix, start),
        start,
        end: add_days(flags.start, b as i64),
        votes: (a..=b)
            .map(|i| DayVotes { date: add_days(flags.start, i as i64), kinds: flags.votes(i) })
            .collect(),
        peak_deficit: 0.0,
    }
}

/// Maximal majority runs of at least `min_duration` days.
pub fn form_candidates(
    majority: &[bool],
    flags: &FlagSet,
    min_duration: usize,
    id_prefix: &str,
) -> Result<Vec<CandidateWindow>> {
    if majority.len() != flags.len() {
        return Err(Error::MalformedInput("majority vector is not aligned with flags".into()));
    }
    Ok(index_runs(majority)
        .into_iter()
        .filter(|(a, b)| b - a + 1 >= min_duration)
        .map(|(a, b)| window(flags, a, b, id_prefix))
        .collect())
}

/// How per-signal flags combine into candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CandidateRule {
    /// Days flagged by at least `quorum` kinds, then runs of `min_duration`.
    #[default]
    DayMajority,
    /// Per-kind runs shorter than `min_duration` dropped first, then as `DayMajority`.
    RunsThenMajority,
    /// Any-kind runs of `min_duration` merged into windows; a window is kept
    /// when at least `quorum` kinds have a run inside it.
    WindowMajority,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DetectorConfig {
    pub quorum: usize,
    pub min_duration: usize,
    pub direction: Direction,
    pub rule: CandidateRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            quorum: DEFAULT_QUORUM,
            min_duration: DEFAULT_MIN_DURATION,
            direction: Direction::Low,
            rule: CandidateRule::DayMajority,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quorum == 0 || self.quorum > 4 {
            return Err(Error::InvalidConfig(format!("quorum {} not in 1..=4", self.quorum)));
        }
        if self.min_duration == 0 {
            return Err(Error::InvalidConfig("min_duration must be at least 1".into()));
        }
        Ok(())
    }
}

/// Candidates from per-kind flags under `cfg.rule`.
pub fn candidates_from_flags(flags: &FlagSet, cfg: &DetectorConfig, id_prefix: &str) -> Result<Vec<CandidateWindow>> {
    cfg.validate()?;
    match cfg.rule {
        CandidateRule::DayMajority => {
            form_candidates(&majority_days(flags, cfg.quorum), flags, cfg.min_duration, id_prefix)
        }
        CandidateRule::RunsThenMajority => {
            let filtered = flags.without_short_runs(cfg.min_duration);
            form_candidates(&majority_days(&filtered, cfg.quorum), &filtered, cfg.min_duration, id_prefix)
        }
        CandidateRule::WindowMajority => {
            let filtered = flags.without_short_runs(cfg.min_duration);
            let any: Vec<bool> = (0..filtered.len()).map(|i| !filtered.votes(i).is_empty()).collect();
            Ok(index_runs(&any)
                .into_iter()
                .filter(|&(a, b)| {
                    let kinds: KindSet = (a..=b).flat_map(|i| filtered.votes(i).iter().collect::<Vec<_>>()).collect();
                    kinds.len() >= cfg.quorum
                })
                .map(|(a, b)| window(flags, a, b, id_prefix))
                .collect())
        }
    }
}

/// Fill `peak_deficit` from observed values and forecast bands.
pub fn annotate_deficits(
    candidates: &mut [CandidateWindow],
    bundle: &SignalBundle,
    forecasts: &[Forecast; 4],
    direction: Direction,
) {
    for c in candidates.iter_mut() {
        let kind = c.most_supporting();
        let series = bundle.get(kind);
        let forecast = &forecasts[kind.index()];
        let mut peak = f64::NEG_INFINITY;
        for date in c.span().days() {
            if let (Some(y), Some(p)) = (series.get(date), forecast.get(date)) {
                let d = match direction {
                    Direction::Low => p.lower - y,
                    Direction::High => y - p.upper,
                    Direction::Both => (p.lower - y).max(y - p.upper),
                };
                peak = peak.max(d);
            }
        }
        c.peak_deficit = if peak.is_finite() { peak } else { 0.0 };
    }
}

/// Everything one detection pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub models: [FittedModel; 4],
    pub forecasts: [Forecast; 4],
    pub flags: FlagSet,
    pub candidates: Vec<CandidateWindow>,
}

/// Fit every signal, flag anomalies and form candidates.
pub fn run_detection(
    bundle: &SignalBundle,
    hp: &HyperParams,
    holidays: &HolidayCalendar,
    cfg: &DetectorConfig,
    id_prefix: &str,
) -> Result<Detection> {
    let fit_kind = |k: SignalKind| fit(bundle.get(k), hp, holidays);
    let models = [
        fit_kind(SignalKind::Topics)?,
        fit_kind(SignalKind::Entities)?,
        fit_kind(SignalKind::Plot)?,
        fit_kind(SignalKind::Llm)?,
    ];
    let span = bundle.span();
    let forecasts = [
        models[0].predict_with_interval(span),
        models[1].predict_with_interval(span),
        models[2].predict_with_interval(span),
        models[3].predict_with_interval(span),
    ];
    let flag = |k: SignalKind| flag_anomalies(bundle.get(k), &forecasts[k.index()], cfg.direction);
    let flags = FlagSet::new(
        bundle.start(),
        [
            flag(SignalKind::Topics)?,
            flag(SignalKind::Entities)?,
            flag(SignalKind::Plot)?,
            flag(SignalKind::Llm)?,
        ],
    )?;
    let mut candidates = candidates_from_flags(&flags, cfg, id_prefix)?;
    annotate_deficits(&mut candidates, bundle, &forecasts, cfg.direction);
    Ok(Detection { models, forecasts, flags, candidates })
}
