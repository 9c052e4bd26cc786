//! The expert-validation loop around detection.
//!
//! A campaign is a storm registry driven by events. Searching for candidates
//! is expensive and read-only ([`plan_iteration`]); every mutation goes
//! through [`CampaignState::apply`], so a journal of [`CampaignEvent`]s
//! replays to the same registry.
//!
//! In-Period campaigns repeat detection over one labeled span, re-seeding with
//! the finalized list until a round adds at most `threshold` new storms
//! relative to the registry. Out-Period campaigns tune on a labeled span and
//! queue candidates inside a disjoint target span, one round per target.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{DateTime, Datelike, NaiveDate, Utc};

use crate::detect::{CandidateWindow, DayVotes};
use crate::forecast::{HolidayCalendar, HyperParams};
use crate::signal::{SignalBundle, DEFAULT_SMOOTHING_WINDOW};
use crate::span::DateSpan;
use crate::stats::{self, WelchTest};
use crate::tune::{random_search_with_progress, SearchConfig, SearchObserver, SearchReport, SeedStorm, TrialProgress};
use crate::{Error, Result};

pub const DEFAULT_CONVERGENCE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_MAX_ITERATIONS: u32 = 10;
pub const DEFAULT_WINDOW_YEARS: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    InPeriod,
    OutPeriod,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::InPeriod => "in_period",
            Mode::OutPeriod => "out_period",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_period" => Some(Mode::InPeriod),
            "out_period" => Some(Mode::OutPeriod),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Status {
    Pending,
    Validated,
    Rejected,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Validated => "validated",
            Status::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Status::Pending),
            "validated" => Some(Status::Validated),
            "rejected" => Some(Status::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Verdict {
    Validated,
    Rejected,
}

impl Verdict {
    pub fn status(self) -> Status {
        match self {
            Verdict::Validated => Status::Validated,
            Verdict::Rejected => Status::Rejected,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "validated" => Some(Verdict::Validated),
            "rejected" => Some(Verdict::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StormRecord {
    pub id: String,
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub status: Status,
    /// 0 for storms supplied as seeds.
    pub iteration: u32,
    pub campaign_id: String,
    pub expert_note: Option<String>,
    pub decided_at: Option<DateTime<Utc>>,
}

impl StormRecord {
    pub fn span(&self) -> DateSpan {
        DateSpan { start: self.start, end: self.end }
    }

    pub fn duration_days(&self) -> usize {
        self.span().len_days()
    }

    pub fn to_seed(&self) -> SeedStorm {
        SeedStorm { label: self.label.clone(), start: self.start, end: self.end }
    }
}

/// The best trial of a round, kept for the audit trail.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialSummary {
    pub trial_index: usize,
    pub hyperparams: HyperParams,
    pub precision: f64,
    pub recall: f64,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationReport {
    pub iteration: u32,
    /// Candidates queued for review.
    pub n_candidates: usize,
    pub n_validated: usize,
    pub n_rejected: usize,
    pub n_pending: usize,
    /// Validated storms sharing no day with any storm finalized earlier.
    pub n_new: usize,
    /// Candidates skipped because they overlap an already decided record.
    pub n_known: usize,
    /// Registry size after consolidation; zero while the round is open.
    pub n_finalized: usize,
    pub best_trial: TrialSummary,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CampaignConfig {
    pub search: SearchConfig,
    /// Trailing mean applied to unsmoothed bundles before search.
    pub smoothing_window: Option<usize>,
    pub convergence_threshold: f64,
    pub max_iterations: u32,
    pub window_years: u32,
    pub holidays: HolidayCalendar,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            smoothing_window: Some(DEFAULT_SMOOTHING_WINDOW),
            convergence_threshold: DEFAULT_CONVERGENCE_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            window_years: DEFAULT_WINDOW_YEARS,
            holidays: HolidayCalendar::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.space.validate()?;
        self.search.detector.validate()?;
        if !(0.0..1.0).contains(&self.convergence_threshold) {
            return Err(Error::InvalidConfig(format!(
                "convergence threshold {} outside [0, 1)",
                self.convergence_threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.window_years == 0 {
            return Err(Error::InvalidConfig("window_years must be at least 1".into()));
        }
        if self.smoothing_window == Some(0) {
            return Err(Error::InvalidConfig("smoothing window must be at least 1 day".into()));
        }
        Ok(())
    }
}

/// One expert verdict on a queued candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decision {
    pub candidate_id: String,
    pub verdict: Verdict,
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub note: Option<String>,
    /// Free-form identifier of whoever decided.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub expert: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event", rename_all = "snake_case"))]
pub enum CampaignEvent {
    Created {
        campaign_id: String,
        mode: Mode,
        corpus_span: DateSpan,
        target_span: DateSpan,
        seeds: Vec<SeedStorm>,
        config: CampaignConfig,
        at: DateTime<Utc>,
    },
    IterationStarted {
        iteration: u32,
        best_trial: TrialSummary,
        queued: Vec<CandidateWindow>,
        known: Vec<CandidateWindow>,
        at: DateTime<Utc>,
    },
    Decided {
        candidate_id: String,
        verdict: Verdict,
        label: String,
        note: Option<String>,
        #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
        expert: Option<String>,
        at: DateTime<Utc>,
    },
    IterationClosed {
        iteration: u32,
        at: DateTime<Utc>,
    },
}

impl CampaignEvent {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            CampaignEvent::Created { at, .. }
            | CampaignEvent::IterationStarted { at, .. }
            | CampaignEvent::Decided { at, .. }
            | CampaignEvent::IterationClosed { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CampaignState {
    pub campaign_id: String,
    pub mode: Mode,
    pub corpus_span: DateSpan,
    pub target_span: DateSpan,
    pub seed_storms: Vec<SeedStorm>,
    /// Validated storms after consolidation, sorted by start.
    pub finalized: Vec<StormRecord>,
    /// One record per queued candidate, in queue order.
    pub records: Vec<StormRecord>,
    /// Candidate windows behind `records`, same order.
    pub windows: Vec<CandidateWindow>,
    pub reports: Vec<IterationReport>,
    pub converged: bool,
    pub config: CampaignConfig,
    pub created_at: DateTime<Utc>,
}

impl CampaignState {
    /// Build the `Created` event for a new campaign after checking spans.
    pub fn create(
        campaign_id: &str,
        mode: Mode,
        corpus_span: DateSpan,
        target_span: DateSpan,
        seeds: Vec<SeedStorm>,
        config: CampaignConfig,
        at: DateTime<Utc>,
    ) -> Result<(Self, CampaignEvent)> {
        let event = CampaignEvent::Created {
            campaign_id: campaign_id.to_owned(),
            mode,
            corpus_span,
            target_span,
            seeds,
            config,
            at,
        };
        let state = Self::from_created(&event)?;
        Ok((state, event))
    }

    fn from_created(event: &CampaignEvent) -> Result<Self> {
        let CampaignEvent::Created { campaign_id, mode, corpus_span, target_span, seeds, config, at } = event
        else {
            return Err(Error::MalformedInput("journal must start with a created event".into()));
        };
        if campaign_id.is_empty() {
            return Err(Error::InvalidConfig("campaign id must not be empty".into()));
        }
        config.validate()?;
        if seeds.is_empty() {
            return Err(Error::EmptySeeds);
        }
        if !corpus_span.contains_span(target_span) {
            return Err(Error::SpanConflict(format!("target {target_span} is outside corpus {corpus_span}")));
        }
        match mode {
            Mode::InPeriod => {
                if target_span != corpus_span {
                    return Err(Error::SpanConflict("in-period target must equal the corpus span".into()));
                }
                if let Some(s) = seeds.iter().find(|s| !target_span.contains_span(&s.span())) {
                    return Err(Error::SpanConflict(format!("seed {} lies outside {target_span}", s.label)));
                }
            }
            Mode::OutPeriod => {
                if let Some(s) = seeds.iter().find(|s| s.span().intersects(target_span)) {
                    return Err(Error::SpanConflict(format!(
                        "labeled storm {} overlaps the target span {target_span}",
                        s.label
                    )));
                }
                if let Some(s) = seeds.iter().find(|s| !corpus_span.contains_span(&s.span())) {
                    return Err(Error::SpanConflict(format!("seed {} lies outside {corpus_span}", s.label)));
                }
            }
        }
        let finalized = match mode {
            Mode::InPeriod => consolidate(
                &seeds
                    .iter()
                    .enumerate()
                    .map(|(i, s)| StormRecord {
                        id: format!("{campaign_id}-seed-{i:04}"),
                        label: s.label.clone(),
                        start: s.start,
                        end: s.end,
                        status: Status::Validated,
                        iteration: 0,
                        campaign_id: campaign_id.clone(),
                        expert_note: None,
                        decided_at: Some(*at),
                    })
                    .collect::<Vec<_>>(),
            ),
            Mode::OutPeriod => Vec::new(),
        };
        Ok(Self {
            campaign_id: campaign_id.clone(),
            mode: *mode,
            corpus_span: *corpus_span,
            target_span: *target_span,
            seed_storms: seeds.clone(),
            finalized,
            records: Vec::new(),
            windows: Vec::new(),
            reports: Vec::new(),
            converged: false,
            config: config.clone(),
            created_at: *at,
        })
    }

    /// Rebuild a campaign from its journal.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a CampaignEvent>) -> Result<Self> {
        let mut it = events.into_iter();
        let first = it.next().ok_or_else(|| Error::MalformedInput("empty journal".into()))?;
        let mut state = Self::from_created(first)?;
        for e in it {
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn open_iteration(&self) -> Option<u32> {
        self.reports.last().filter(|r| !r.closed).map(|r| r.iteration)
    }

    pub fn iterations_done(&self) -> u32 {
        self.reports.iter().filter(|r| r.closed).count() as u32
    }

    /// True when the iteration budget ran out before convergence.
    pub fn exhausted(&self) -> bool {
        !self.converged && self.iterations_done() >= self.config.max_iterations
    }

    /// Seeds the next search round scores against.
    pub fn current_seeds(&self) -> Vec<SeedStorm> {
        match self.mode {
            Mode::InPeriod => self.finalized.iter().map(StormRecord::to_seed).collect(),
            Mode::OutPeriod => self.seed_storms.clone(),
        }
    }

    pub fn record(&self, candidate_id: &str) -> Option<&StormRecord> {
        self.records.iter().find(|r| r.id == candidate_id)
    }

    pub fn window(&self, candidate_id: &str) -> Option<&CandidateWindow> {
        self.windows.iter().find(|w| w.id == candidate_id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &StormRecord> + '_ {
        self.records.iter().filter(|r| r.status == Status::Pending)
    }

    /// Whether a window overlaps a finalized storm or a rejected candidate.
    pub fn is_known(&self, span: &DateSpan) -> bool {
        self.finalized.iter().any(|r| r.span().intersects(span))
            || self
                .records
                .iter()
                .any(|r| r.status != Status::Pending && r.span().intersects(span))
    }

    /// Apply one event. Fails without mutating when the event is invalid.
    pub fn apply(&mut self, event: &CampaignEvent) -> Result<()> {
        match event {
            CampaignEvent::Created { .. } => {
                Err(Error::MalformedInput("campaign already created".into()))
            }
            CampaignEvent::IterationStarted { iteration, best_trial, queued, known, .. } => {
                if self.converged {
                    return Err(Error::AlreadyConverged);
                }
                if let Some(open) = self.open_iteration() {
                    let pending = self.pending().count();
                    return Err(Error::IterationOpen { iteration: open, pending });
                }
                if self.exhausted() {
                    return Err(Error::InvalidConfig(format!(
                        "iteration limit {} reached",
                        self.config.max_iterations
                    )));
                }
                let expected = self.iterations_done() + 1;
                if *iteration != expected {
                    return Err(Error::MalformedInput(format!(
                        "iteration {iteration} started, expected {expected}"
                    )));
                }
                for (i, w) in queued.iter().enumerate() {
                    if !self.target_span.contains_span(&w.span()) {
                        return Err(Error::SpanConflict(format!("candidate {} leaves the target span", w.id)));
                    }
                    if self.record(&w.id).is_some() || queued[..i].iter().any(|o| o.id == w.id) {
                        return Err(Error::MalformedInput(format!("duplicate candidate id {}", w.id)));
                    }
                }
                for w in queued {
                    self.records.push(StormRecord {
                        id: w.id.clone(),
                        label: String::new(),
                        start: w.start,
                        end: w.end,
                        status: Status::Pending,
                        iteration: *iteration,
                        campaign_id: self.campaign_id.clone(),
                        expert_note: None,
                        decided_at: None,
                    });
                    self.windows.push(w.clone());
                }
                self.reports.push(IterationReport {
                    iteration: *iteration,
                    n_candidates: queued.len(),
                    n_validated: 0,
                    n_rejected: 0,
                    n_pending: queued.len(),
                    n_new: 0,
                    n_known: known.len(),
                    n_finalized: 0,
                    best_trial: *best_trial,
                    closed: false,
                });
                Ok(())
            }
            CampaignEvent::Decided { candidate_id, verdict, label, note, at, .. } => {
                if *verdict == Verdict::Validated && label.trim().is_empty() {
                    return Err(Error::MalformedInput(format!("validated storm {candidate_id} needs a label")));
                }
                let open = self.open_iteration();
                let rec = self
                    .records
                    .iter_mut()
                    .find(|r| r.id == *candidate_id)
                    .ok_or_else(|| Error::UnknownCandidate(candidate_id.clone()))?;
                if rec.status != Status::Pending || Some(rec.iteration) != open {
                    return Err(Error::AlreadyDecided(candidate_id.clone()));
                }
                rec.status = verdict.status();
                rec.label = label.clone();
                rec.expert_note = note.clone();
                rec.decided_at = Some(*at);
                let report = self.reports.last_mut().expect("open iteration has a report");
                report.n_pending -= 1;
                match verdict {
                    Verdict::Validated => report.n_validated += 1,
                    Verdict::Rejected => report.n_rejected += 1,
                }
                Ok(())
            }
            CampaignEvent::IterationClosed { iteration, .. } => {
                let open = self.open_iteration().ok_or(Error::NoOpenIteration)?;
                if open != *iteration {
                    return Err(Error::MalformedInput(format!("iteration {iteration} is not the open one")));
                }
                let pending = self.pending().count();
                if pending > 0 {
                    return Err(Error::IterationOpen { iteration: open, pending });
                }
                let fresh: Vec<StormRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.iteration == open && r.status == Status::Validated)
                    .cloned()
                    .collect();
                let n_new = fresh
                    .iter()
                    .filter(|r| !self.finalized.iter().any(|f| f.span().intersects(&r.span())))
                    .count();
                let mut all = core::mem::take(&mut self.finalized);
                all.extend(fresh);
                self.finalized = consolidate(&all);
                let n_finalized = self.finalized.len();
                let report = self.reports.last_mut().expect("open iteration has a report");
                report.n_new = n_new;
                report.n_finalized = n_finalized;
                report.closed = true;
                self.converged = match self.mode {
                    Mode::InPeriod => check_convergence(n_new, n_finalized, self.config.convergence_threshold)?,
                    // a transfer round has nothing left to iterate on
                    Mode::OutPeriod => true,
                };
                Ok(())
            }
        }
    }

    /// Record verdicts, one event per accepted decision. Rejected decisions
    /// come back as per-item errors and leave the rest in place.
    pub fn ingest_decisions(
        &mut self,
        decisions: &[Decision],
        at: DateTime<Utc>,
    ) -> (Vec<CampaignEvent>, Vec<(String, Error)>) {
        let mut applied = Vec::new();
        let mut failed = Vec::new();
        for d in decisions {
            let event = CampaignEvent::Decided {
                candidate_id: d.candidate_id.clone(),
                verdict: d.verdict,
                label: d.label.clone(),
                note: d.note.clone(),
                expert: d.expert.clone(),
                at,
            };
            match self.apply(&event) {
                Ok(()) => applied.push(event),
                Err(e) => failed.push((d.candidate_id.clone(), e)),
            }
        }
        (applied, failed)
    }

    pub fn close_iteration(&mut self, at: DateTime<Utc>) -> Result<CampaignEvent> {
        let iteration = self.open_iteration().ok_or(Error::NoOpenIteration)?;
        let event = CampaignEvent::IterationClosed { iteration, at };
        self.apply(&event)?;
        Ok(event)
    }

    /// Report for the open round, or the latest closed one.
    pub fn current_report(&self) -> Option<&IterationReport> {
        self.reports.last()
    }
}

/// An iteration ready to be applied, plus the full search record behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub event: CampaignEvent,
    pub search: SearchReport,
}

fn prepare_bundle(state: &CampaignState, bundle: &SignalBundle) -> Result<SignalBundle> {
    if bundle.span() != state.corpus_span {
        return Err(Error::SpanConflict(format!(
            "signals cover {}, campaign corpus is {}",
            bundle.span(),
            state.corpus_span
        )));
    }
    match state.config.smoothing_window {
        Some(w) if !bundle.iter().any(|s| s.is_smoothed()) => bundle.smoothed(w),
        _ => Ok(bundle.clone()),
    }
}

/// Clip a candidate to `span`, dropping it when fewer than `min_days` remain.
fn clip(w: &CandidateWindow, span: &DateSpan, min_days: usize, prefix: &str) -> Option<CandidateWindow> {
    let cut = w.span().intersection(span)?;
    if cut.len_days() < min_days {
        return None;
    }
    if cut == w.span() {
        return Some(w.clone());
    }
    let votes: Vec<DayVotes> = w.votes.iter().filter(|v| cut.contains(v.date)).cloned().collect();
    Some(CandidateWindow {
        id: crate::detect::candidate_id(prefix, cut.start),
        start: cut.start,
        end: cut.end,
        votes,
        peak_deficit: w.peak_deficit,
    })
}

/// Run the search for the next round without touching the state.
pub fn plan_iteration(
    state: &CampaignState,
    bundle: &SignalBundle,
    at: DateTime<Utc>,
    observer: &dyn SearchObserver,
) -> Result<IterationPlan> {
    if state.converged {
        return Err(Error::AlreadyConverged);
    }
    if let Some(open) = state.open_iteration() {
        return Err(Error::IterationOpen { iteration: open, pending: state.pending().count() });
    }
    if state.exhausted() {
        return Err(Error::InvalidConfig(format!("iteration limit {} reached", state.config.max_iterations)));
    }
    let seeds = state.current_seeds();
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let bundle = prepare_bundle(state, bundle)?;
    let mut search_cfg = state.config.search;
    if state.mode == Mode::OutPeriod && search_cfg.score_span.is_none() {
        // score only where labels exist
        search_cfg.score_span = labeled_span(state);
    }
    let report = random_search_with_progress(
        &bundle,
        &seeds,
        &search_cfg,
        &state.config.holidays,
        &state.campaign_id,
        observer,
    )?;
    let min_days = search_cfg.detector.min_duration;
    let mut queued: Vec<CandidateWindow> = Vec::new();
    let mut known = Vec::new();
    for w in &report.best.candidates {
        let Some(w) = clip(w, &state.target_span, min_days, &state.campaign_id) else {
            continue;
        };
        if state.is_known(&w.span()) || state.record(&w.id).is_some() {
            known.push(w);
        } else {
            queued.push(w);
        }
    }
    let best = &report.best;
    let event = CampaignEvent::IterationStarted {
        iteration: state.iterations_done() + 1,
        best_trial: TrialSummary {
            trial_index: best.trial_index,
            hyperparams: best.hyperparams,
            precision: best.precision,
            recall: best.recall,
            n_candidates: best.n_candidates,
        },
        queued,
        known,
        at,
    };
    Ok(IterationPlan { event, search: report })
}

/// The part of the corpus outside the target span, when it is one piece.
fn labeled_span(state: &CampaignState) -> Option<DateSpan> {
    let c = state.corpus_span;
    let t = state.target_span;
    if t.start > c.start && t.end >= c.end {
        DateSpan::new(c.start, crate::span::add_days(t.start, -1))
    } else if t.end < c.end && t.start <= c.start {
        DateSpan::new(crate::span::add_days(t.end, 1), c.end)
    } else {
        None
    }
}

/// True iff `n_new / n_finalized <= threshold`.
pub fn check_convergence(n_new: usize, n_finalized: usize, threshold: f64) -> Result<bool> {
    if n_finalized == 0 {
        return Err(Error::InsufficientData("convergence needs at least one finalized storm".into()));
    }
    Ok(n_new as f64 <= threshold * n_finalized as f64)
}

/// Merge validated records that share at least one day within a campaign.
///
/// A merged record spans the union, keeps the id, label and provenance of its
/// earliest member, and joins the members' notes. Output is sorted by start.
pub fn consolidate(storms: &[StormRecord]) -> Vec<StormRecord> {
    let mut sorted: Vec<&StormRecord> = storms.iter().collect();
    sorted.sort_by(|a, b| {
        a.campaign_id
            .cmp(&b.campaign_id)
            .then(a.start.cmp(&b.start))
            .then(a.iteration.cmp(&b.iteration))
            .then(a.end.cmp(&b.end))
            .then(a.id.cmp(&b.id))
    });
    let mut out: Vec<StormRecord> = Vec::with_capacity(sorted.len());
    for r in sorted {
        match out.last_mut() {
            Some(cur) if cur.campaign_id == r.campaign_id && r.start <= cur.end => {
                cur.end = cur.end.max(r.end);
                if let Some(n) = &r.expert_note {
                    cur.expert_note = Some(match cur.expert_note.take() {
                        Some(c) if !c.is_empty() => format!("{c}; {n}"),
                        _ => n.clone(),
                    });
                }
            }
            _ => out.push(r.clone()),
        }
    }
    out.sort_by(|a, b| a.start.cmp(&b.start).then(a.campaign_id.cmp(&b.campaign_id)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct YearlySummary {
    pub year: i32,
    pub n_storms: usize,
    pub mean_duration_days: f64,
    /// Sample standard deviation; 0 when fewer than two storms.
    pub std_duration_days: f64,
}

/// Per-year storm counts and inclusive durations, keyed by start year.
pub fn summarize(storms: &[StormRecord]) -> Vec<YearlySummary> {
    let years: Vec<i32> = storms.iter().map(|s| s.start.year()).collect();
    match (years.iter().min(), years.iter().max()) {
        (Some(&lo), Some(&hi)) => summarize_years(storms, lo, hi),
        _ => Vec::new(),
    }
}

/// Like [`summarize`] but over a fixed year range, reporting empty years.
pub fn summarize_years(storms: &[StormRecord], first: i32, last: i32) -> Vec<YearlySummary> {
    (first..=last)
        .map(|year| {
            let d: Vec<f64> = storms
                .iter()
                .filter(|s| s.start.year() == year)
                .map(|s| s.duration_days() as f64)
                .collect();
            YearlySummary {
                year,
                n_storms: d.len(),
                mean_duration_days: if d.is_empty() { 0.0 } else { stats::mean(&d) },
                std_duration_days: if d.len() < 2 { 0.0 } else { stats::sample_std(&d) },
            }
        })
        .collect()
}

/// Total storm count and mean storms per year.
pub fn period_totals(years: &[YearlySummary]) -> (usize, f64) {
    let total: usize = years.iter().map(|y| y.n_storms).sum();
    let mean = if years.is_empty() { 0.0 } else { total as f64 / years.len() as f64 };
    (total, mean)
}

/// Welch two-sample t-test between two periods' yearly values.
pub fn compare_periods(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    stats::welch_t_test(a, b)
}

/// Source of verdicts for a queue of candidates.
pub trait Expert {
    fn review(&mut self, state: &CampaignState, queue: &[CandidateWindow]) -> Vec<Decision>;
}

/// Test adapter that validates a candidate iff it overlaps a known storm,
/// labeling it after the first such storm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedExpert {
    pub truth: Vec<SeedStorm>,
}

impl Expert for SimulatedExpert {
    fn review(&mut self, _: &CampaignState, queue: &[CandidateWindow]) -> Vec<Decision> {
        queue
            .iter()
            .map(|c| match self.truth.iter().find(|t| t.span().intersects(&c.span())) {
                Some(t) => Decision {
                    candidate_id: c.id.clone(),
                    verdict: Verdict::Validated,
                    label: t.label.clone(),
                    note: None,
                    expert: Some("simulated".into()),
                },
                None => Decision {
                    candidate_id: c.id.clone(),
                    verdict: Verdict::Rejected,
                    label: String::new(),
                    note: None,
                    expert: Some("simulated".into()),
                },
            })
            .collect()
    }
}

/// A campaign together with the journal that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRun {
    pub state: CampaignState,
    pub journal: Vec<CampaignEvent>,
    /// Search records, one per round.
    pub searches: Vec<SearchReport>,
}

impl CampaignRun {
    fn start(state: CampaignState, created: CampaignEvent) -> Self {
        Self { state, journal: alloc::vec![created], searches: Vec::new() }
    }

    /// Plan, review and close one round.
    pub fn round(
        &mut self,
        bundle: &SignalBundle,
        expert: &mut dyn Expert,
        clock: &mut dyn FnMut() -> DateTime<Utc>,
    ) -> Result<()> {
        let plan = plan_iteration(&self.state, bundle, clock(), &|_: TrialProgress| {})?;
        self.state.apply(&plan.event)?;
        self.journal.push(plan.event.clone());
        self.searches.push(plan.search);
        let CampaignEvent::IterationStarted { queued, .. } = &plan.event else {
            unreachable!("plan_iteration returns a start event")
        };
        let decisions = expert.review(&self.state, queued);
        let (applied, failed) = self.state.ingest_decisions(&decisions, clock());
        self.journal.extend(applied);
        if let Some((id, e)) = failed.into_iter().next() {
            return Err(Error::MalformedInput(format!("expert decision on {id} failed: {e}")));
        }
        let closed = self.state.close_iteration(clock())?;
        self.journal.push(closed);
        Ok(())
    }
}

/// Iterate detection and review over one labeled span until convergence or
/// the iteration limit. Running out of iterations is not an error; check
/// [`CampaignState::exhausted`].
pub fn run_in_period(
    campaign_id: &str,
    bundle: &SignalBundle,
    seeds: Vec<SeedStorm>,
    config: CampaignConfig,
    expert: &mut dyn Expert,
    clock: &mut dyn FnMut() -> DateTime<Utc>,
) -> Result<CampaignRun> {
    let span = bundle.span();
    let (state, created) = CampaignState::create(campaign_id, Mode::InPeriod, span, span, seeds, config, clock())?;
    let mut run = CampaignRun::start(state, created);
    while !run.state.converged && !run.state.exhausted() {
        run.round(bundle, expert, clock)?;
    }
    Ok(run)
}

/// Tune on labeled storms and queue candidates inside a disjoint target span.
pub fn run_out_period(
    campaign_id: &str,
    labeled: (&SignalBundle, &[SeedStorm]),
    target: &SignalBundle,
    target_span: DateSpan,
    config: CampaignConfig,
    expert: &mut dyn Expert,
    clock: &mut dyn FnMut() -> DateTime<Utc>,
) -> Result<CampaignRun> {
    let (labeled_bundle, storms) = labeled;
    if labeled_bundle.span().intersects(&target_span) {
        return Err(Error::SpanConflict(format!(
            "labeled span {} overlaps target {target_span}",
            labeled_bundle.span()
        )));
    }
    if !target.span().contains_span(&target_span) {
        return Err(Error::SpanConflict(format!("target signals do not cover {target_span}")));
    }
    let target = target.slice(&target_span)?;
    let bundle = if labeled_bundle.span().end < target_span.start {
        labeled_bundle.concat(&target)?
    } else {
        target.concat(labeled_bundle)?
    };
    let (state, created) = CampaignState::create(
        campaign_id,
        Mode::OutPeriod,
        bundle.span(),
        target_span,
        storms.to_vec(),
        config,
        clock(),
    )?;
    let mut run = CampaignRun::start(state, created);
    run.round(&bundle, expert, clock)?;
    Ok(run)
}

/// Year-by-year transfer: each target year is searched with the storms of the
/// preceding `window_years` years as seeds, and the storms validated in one
/// round join the seeds of the next.
///
/// `bundle` must cover the first window and every target year. Campaign ids
/// are `{prefix}-{year}`.
pub fn run_rolling(
    prefix: &str,
    bundle: &SignalBundle,
    labeled: &[SeedStorm],
    target_years: core::ops::RangeInclusive<i32>,
    config: CampaignConfig,
    expert: &mut dyn Expert,
    clock: &mut dyn FnMut() -> DateTime<Utc>,
) -> Result<Vec<CampaignRun>> {
    config.validate()?;
    let full = bundle.span();
    // smooth once over the whole axis so every window sees the same values
    let smoothed = match config.smoothing_window {
        Some(w) if !bundle.iter().any(|s| s.is_smoothed()) => bundle.smoothed(w)?,
        _ => bundle.clone(),
    };
    let mut known: Vec<SeedStorm> = labeled.to_vec();
    let mut runs = Vec::new();
    for year in target_years {
        let target = DateSpan::year(year).ok_or_else(|| Error::InvalidConfig(format!("bad year {year}")))?;
        let first = DateSpan::year(year - config.window_years as i32)
            .ok_or_else(|| Error::InvalidConfig(format!("bad year {year}")))?;
        let window = DateSpan { start: first.start, end: crate::span::add_days(target.start, -1) };
        if !full.contains_span(&window) || !full.contains_span(&target) {
            return Err(Error::SpanConflict(format!(
                "signals {full} do not cover window {window} and target {target}"
            )));
        }
        let seeds: Vec<SeedStorm> = known.iter().filter(|s| window.contains_span(&s.span())).cloned().collect();
        let run = run_out_period(
            &format!("{prefix}-{year}"),
            (&smoothed.slice(&window)?, &seeds),
            &smoothed,
            target,
            config.clone(),
            expert,
            clock,
        )?;
        known.extend(run.state.finalized.iter().map(StormRecord::to_seed));
        runs.push(run);
    }
    Ok(runs)
}
