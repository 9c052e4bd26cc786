//! In-process campaign registry over a [`Store`].
//!
//! All mutations take one writer lock, apply the event to a copy of the
//! campaign, append it to the journal and only then publish the new state.
//! Readers clone an `Arc` of the current state and never wait on a search.
//! Searches run on a background thread per campaign; a second trigger while
//! one is running is refused.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;
use stormwatch_core::campaign::{
    plan_iteration, CampaignConfig, CampaignEvent, CampaignState, Decision, IterationPlan, IterationReport, Mode,
    Status, StormRecord,
};
use stormwatch_core::detect::{run_detection, CandidateWindow};
use stormwatch_core::forecast::{Forecast, HolidayCalendar};
use stormwatch_core::span::add_days;
use stormwatch_core::tune::{SearchObserver, SeedStorm, TrialProgress};
use stormwatch_core::{DateSpan, NaiveDate, SignalBundle, SignalKind};

use crate::formats::{ArticleMeta, SignalTable};
use crate::store::{JournalDamage, Store};
use crate::trials::TrialTimer;
use crate::{Error, Result};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub const DEFAULT_CONTEXT_DAYS: i64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub run_id: String,
    pub campaign_id: String,
    pub iteration: u32,
    pub state: RunState,
    pub n_trials: usize,
    pub trials_done: usize,
    /// Best (precision, recall) among finished trials, ranked recall first.
    pub best_precision: Option<f64>,
    pub best_recall: Option<f64>,
    pub queued: Option<usize>,
    pub error: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

/// Shared progress cell of a background search.
#[derive(Debug)]
pub struct RunHandle {
    status: Mutex<RunStatus>,
    timer: TrialTimer,
}

impl RunHandle {
    fn new(status: RunStatus) -> Self {
        let timer = TrialTimer::new(status.n_trials);
        Self { status: Mutex::new(status), timer }
    }

    pub fn status(&self) -> RunStatus {
        self.status.lock().expect("run status lock").clone()
    }

    /// Per-trial wall time in milliseconds, once every trial finished.
    pub fn wall_times(&self) -> Option<Vec<f64>> {
        self.timer.wall_times()
    }

    fn finish(&self, state: RunState, queued: Option<usize>, error: Option<String>, at: DateTime<Utc>) {
        let mut s = self.status.lock().expect("run status lock");
        s.state = state;
        s.queued = queued;
        s.error = error;
        s.finished_at = Some(at);
    }
}

impl SearchObserver for RunHandle {
    fn trial_started(&self, i: usize) {
        self.timer.start(i);
    }

    fn trial_finished(&self, p: TrialProgress) {
        self.timer.stop(p.trial_index);
        let mut s = self.status.lock().expect("run status lock");
        s.trials_done += 1;
        if p.ok {
            let better = match (s.best_recall, s.best_precision) {
                (Some(r), Some(pr)) => (p.recall, p.precision) > (r, pr),
                _ => true,
            };
            if better {
                s.best_recall = Some(p.recall);
                s.best_precision = Some(p.precision);
            }
        }
    }
}

/// What a trigger did: possibly closed the open round, possibly started a search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerOutcome {
    pub closed: Option<IterationReport>,
    pub run: Option<RunStatus>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub date: NaiveDate,
    /// Value the detector saw (smoothed when the campaign smooths).
    pub value: Option<f64>,
    pub raw: Option<f64>,
    pub yhat: f64,
    pub lower: f64,
    pub upper: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSeries {
    pub kind: SignalKind,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateDetail {
    pub campaign_id: String,
    pub record: StormRecord,
    pub window: CandidateWindow,
    pub vote_counts: BTreeMap<SignalKind, usize>,
    pub context: DateSpan,
    pub series: Vec<KindSeries>,
}

struct Writer {
    journal_len: HashMap<String, usize>,
}

pub struct Registry {
    store: Store,
    clock: Clock,
    writer: Mutex<Writer>,
    campaigns: RwLock<BTreeMap<String, Arc<CampaignState>>>,
    signals: RwLock<Option<Arc<SignalBundle>>>,
    articles: RwLock<Arc<Vec<ArticleMeta>>>,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
    active: Mutex<BTreeSet<String>>,
    detections: Mutex<HashMap<(String, u32), Arc<DetectionView>>>,
    run_counter: AtomicU64,
    warnings: Vec<String>,
}

/// Forecast bands and the bundle behind one round's best trial.
struct DetectionView {
    bundle: SignalBundle,
    forecasts: [Forecast; 4],
    flags: [Vec<bool>; 4],
}

fn damage_warning(id: &str, d: &JournalDamage) -> String {
    format!(
        "campaign {id}: journal unreadable from line {} (byte offset {}): {}; later records ignored",
        d.line, d.offset, d.reason
    )
}

impl Registry {
    pub fn open(store: Store) -> Result<Self> {
        Self::open_with_clock(store, Arc::new(Utc::now))
    }

    /// Restore every campaign. A damaged journal tail is moved aside to
    /// `journal.damaged` and cut off so new records append cleanly.
    pub fn open_with_clock(store: Store, clock: Clock) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut campaigns = BTreeMap::new();
        let mut journal_len = HashMap::new();
        for id in store.campaign_ids()? {
            let restored = store.restore(&id)?;
            if let Some(d) = &restored.damage {
                warnings.push(damage_warning(&id, d));
                let path = store.journal_path(&id)?;
                let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
                let aside = path.with_extension("damaged");
                std::fs::write(&aside, &bytes[d.offset as usize..]).map_err(Error::io(&aside))?;
                store.truncate_journal(&id, d.offset)?;
            }
            store.write_snapshot(&restored.state, restored.journal_len)?;
            journal_len.insert(id.clone(), restored.journal_len);
            campaigns.insert(id, Arc::new(restored.state));
        }
        let signals = store.load_signals()?.map(|t| t.to_bundle()).transpose()?.map(Arc::new);
        let articles = Arc::new(store.load_articles()?);
        Ok(Self {
            store,
            clock,
            writer: Mutex::new(Writer { journal_len }),
            campaigns: RwLock::new(campaigns),
            signals: RwLock::new(signals),
            articles: RwLock::new(articles),
            runs: Mutex::new(BTreeMap::new()),
            active: Mutex::new(BTreeSet::new()),
            detections: Mutex::new(HashMap::new()),
            run_counter: AtomicU64::new(0),
            warnings,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    /// Problems found while restoring.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn signals(&self) -> Result<Arc<SignalBundle>> {
        self.signals
            .read()
            .expect("signals lock")
            .clone()
            .ok_or_else(|| Error::NotFound { what: "signal store", id: self.store.signals_path().display().to_string() })
    }

    pub fn set_signals(&self, table: &SignalTable) -> Result<()> {
        let _w = self.writer.lock().expect("writer lock");
        let bundle = table.to_bundle()?;
        self.store.save_signals(table)?;
        *self.signals.write().expect("signals lock") = Some(Arc::new(bundle));
        Ok(())
    }

    pub fn set_articles(&self, articles: Vec<ArticleMeta>) -> Result<()> {
        let _w = self.writer.lock().expect("writer lock");
        self.store.save_articles(&articles)?;
        *self.articles.write().expect("articles lock") = Arc::new(articles);
        Ok(())
    }

    pub fn campaigns(&self) -> Vec<Arc<CampaignState>> {
        self.campaigns.read().expect("campaign lock").values().cloned().collect()
    }

    pub fn campaign(&self, id: &str) -> Result<Arc<CampaignState>> {
        self.campaigns
            .read()
            .expect("campaign lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound { what: "campaign", id: id.to_owned() })
    }

    /// Campaign owning a candidate id.
    pub fn candidate_owner(&self, candidate_id: &str) -> Result<Arc<CampaignState>> {
        self.campaigns
            .read()
            .expect("campaign lock")
            .values()
            .find(|c| c.record(candidate_id).is_some())
            .cloned()
            .ok_or_else(|| Error::NotFound { what: "candidate", id: candidate_id.to_owned() })
    }

    fn commit(&self, w: &mut Writer, state: CampaignState, events: &[CampaignEvent]) -> Result<Arc<CampaignState>> {
        let id = state.campaign_id.clone();
        self.store.append(&id, events)?;
        let len = w.journal_len.entry(id.clone()).or_insert(0);
        *len += events.len();
        let state = Arc::new(state);
        self.campaigns.write().expect("campaign lock").insert(id, state.clone());
        // the journal is already durable; a failed snapshot only slows the next restore
        let _ = self.store.write_snapshot(&state, *len);
        Ok(state)
    }

    pub fn create_campaign(
        &self,
        id: &str,
        mode: Mode,
        corpus_span: DateSpan,
        target_span: DateSpan,
        seeds: Vec<SeedStorm>,
        config: CampaignConfig,
    ) -> Result<Arc<CampaignState>> {
        let mut w = self.writer.lock().expect("writer lock");
        if self.campaigns.read().expect("campaign lock").contains_key(id) || self.store.exists(id)? {
            return Err(Error::Conflict(format!("campaign {id} already exists")));
        }
        if let Ok(signals) = self.signals() {
            if !signals.span().contains_span(&corpus_span) {
                return Err(Error::Core(stormwatch_core::Error::SpanConflict(format!(
                    "corpus {corpus_span} is not covered by the signal store ({})",
                    signals.span()
                ))));
            }
        }
        let (state, created) = CampaignState::create(id, mode, corpus_span, target_span, seeds, config, self.now())?;
        self.commit(&mut w, state, &[created])
    }

    /// Record one expert decision.
    pub fn decide(&self, decision: &Decision) -> Result<StormRecord> {
        let mut w = self.writer.lock().expect("writer lock");
        let owner = self.candidate_owner(&decision.candidate_id)?;
        let mut state = (*owner).clone();
        let (events, mut failed) = state.ingest_decisions(std::slice::from_ref(decision), self.now());
        if let Some((_, e)) = failed.pop() {
            return Err(e.into());
        }
        let state = self.commit(&mut w, state, &events)?;
        Ok(state.record(&decision.candidate_id).cloned().expect("decided record exists"))
    }

    /// Apply many decisions; each failure is reported and the rest applied.
    pub fn decide_many(&self, decisions: &[Decision]) -> Result<Vec<(String, Error)>> {
        let mut errors = Vec::new();
        for d in decisions {
            if let Err(e) = self.decide(d) {
                errors.push((d.candidate_id.clone(), e));
            }
        }
        Ok(errors)
    }

    pub fn close_iteration(&self, id: &str) -> Result<IterationReport> {
        let mut w = self.writer.lock().expect("writer lock");
        let mut state = (*self.campaign(id)?).clone();
        let event = state.close_iteration(self.now())?;
        let state = self.commit(&mut w, state, &[event])?;
        Ok(state.current_report().cloned().expect("closed round has a report"))
    }

    /// Search for the next round of `id` on the calling thread and queue its candidates.
    pub fn run_iteration(&self, id: &str, handle: Option<&RunHandle>) -> Result<IterationPlan> {
        let state = self.campaign(id)?;
        let bundle = self.corpus_bundle(&state)?;
        let observer: &dyn SearchObserver = match handle {
            Some(h) => h,
            None => &|_: TrialProgress| {},
        };
        let plan = plan_iteration(&state, &bundle, self.now(), observer)?;
        let mut w = self.writer.lock().expect("writer lock");
        let mut fresh = (*self.campaign(id)?).clone();
        fresh.apply(&plan.event)?;
        self.commit(&mut w, fresh, std::slice::from_ref(&plan.event))?;
        Ok(plan)
    }

    fn corpus_bundle(&self, state: &CampaignState) -> Result<SignalBundle> {
        let signals = self.signals()?;
        if !signals.span().contains_span(&state.corpus_span) {
            return Err(Error::Core(stormwatch_core::Error::SpanConflict(format!(
                "signal store {} does not cover campaign corpus {}",
                signals.span(),
                state.corpus_span
            ))));
        }
        Ok(signals.slice(&state.corpus_span)?)
    }

    fn claim(&self, id: &str) -> Result<()> {
        if !self.active.lock().expect("active lock").insert(id.to_owned()) {
            return Err(Error::Conflict(format!("a search is already running for campaign {id}")));
        }
        Ok(())
    }

    fn release(&self, id: &str) {
        self.active.lock().expect("active lock").remove(id);
    }

    /// Close the open round if fully decided, then start the next search in
    /// the background unless the campaign is finished.
    pub fn trigger(self: &Arc<Self>, id: &str) -> Result<TriggerOutcome> {
        self.claim(id)?;
        let outcome = self.trigger_claimed(id);
        if !matches!(outcome, Ok(TriggerOutcome { run: Some(_), .. })) {
            self.release(id);
        }
        outcome
    }

    fn trigger_claimed(self: &Arc<Self>, id: &str) -> Result<TriggerOutcome> {
        let state = self.campaign(id)?;
        let mut closed = None;
        if state.open_iteration().is_some() {
            closed = Some(self.close_iteration(id)?);
        }
        let state = self.campaign(id)?;
        if state.converged && closed.is_none() {
            return Err(stormwatch_core::Error::AlreadyConverged.into());
        }
        if state.converged || state.exhausted() {
            return Ok(TriggerOutcome { closed, run: None, converged: state.converged });
        }
        self.corpus_bundle(&state)?;
        let n = self.run_counter.fetch_add(1, Ordering::SeqCst) + 1;
        let handle = Arc::new(RunHandle::new(RunStatus {
            run_id: format!("{id}-run-{n}"),
            campaign_id: id.to_owned(),
            iteration: state.iterations_done() + 1,
            state: RunState::Running,
            n_trials: state.config.search.space.n_trials,
            trials_done: 0,
            best_precision: None,
            best_recall: None,
            queued: None,
            error: None,
            started_at: self.now(),
            finished_at: None,
        }));
        let status = handle.status();
        self.runs.lock().expect("runs lock").insert(status.run_id.clone(), handle.clone());
        let me = Arc::clone(self);
        let cid = id.to_owned();
        std::thread::spawn(move || {
            let result = me.run_iteration(&cid, Some(&handle));
            match result {
                Ok(plan) => {
                    let queued = match &plan.event {
                        CampaignEvent::IterationStarted { queued, .. } => Some(queued.len()),
                        _ => None,
                    };
                    handle.finish(RunState::Done, queued, None, me.now());
                }
                Err(e) => handle.finish(RunState::Failed, None, Some(e.to_string()), me.now()),
            }
            me.release(&cid);
        });
        Ok(TriggerOutcome { closed, run: Some(status), converged: false })
    }

    pub fn run(&self, run_id: &str) -> Result<Arc<RunHandle>> {
        self.runs
            .lock()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| Error::NotFound { what: "run", id: run_id.to_owned() })
    }

    /// Storms of every campaign overlapping `[from, to]`, by start date: the
    /// finalized list plus storms validated in a round that is still open.
    pub fn storms(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Vec<StormRecord> {
        let mut out: Vec<StormRecord> = self
            .campaigns()
            .iter()
            .flat_map(|c| {
                let open = c.open_iteration();
                let fresh = c
                    .records
                    .iter()
                    .filter(move |r| r.status == Status::Validated && Some(r.iteration) == open)
                    .cloned();
                c.finalized.iter().cloned().chain(fresh).collect::<Vec<_>>()
            })
            .filter(|r| from.is_none_or(|f| r.end >= f) && to.is_none_or(|t| r.start <= t))
            .collect();
        out.sort_by(|a, b| a.start.cmp(&b.start).then(a.campaign_id.cmp(&b.campaign_id)));
        out
    }

    pub fn articles(&self, span: DateSpan) -> Vec<ArticleMeta> {
        let all = self.articles.read().expect("articles lock").clone();
        let mut out: Vec<ArticleMeta> = all.iter().filter(|a| span.contains(a.date)).cloned().collect();
        out.sort_by(|a, b| a.date.cmp(&b.date).then(a.doc_id.cmp(&b.doc_id)));
        out
    }

    fn detection(&self, state: &CampaignState, iteration: u32) -> Result<Arc<DetectionView>> {
        let key = (state.campaign_id.clone(), iteration);
        if let Some(v) = self.detections.lock().expect("detection cache").get(&key) {
            return Ok(v.clone());
        }
        let report = state
            .reports
            .iter()
            .find(|r| r.iteration == iteration)
            .ok_or_else(|| Error::NotFound { what: "iteration", id: iteration.to_string() })?;
        let mut bundle = self.corpus_bundle(state)?;
        if let Some(w) = state.config.smoothing_window {
            bundle = bundle.smoothed(w)?;
        }
        let d = run_detection(&bundle, &report.best_trial.hyperparams, &state.config.holidays, &state.config.search.detector, "")?;
        let view = Arc::new(DetectionView { bundle, forecasts: d.forecasts, flags: d.flags.as_array().clone() });
        self.detections.lock().expect("detection cache").insert(key, view.clone());
        Ok(view)
    }

    /// Window, votes and every signal with its band over the window plus
    /// `context_days` on each side, clipped to the corpus.
    pub fn candidate_detail(&self, candidate_id: &str, context_days: i64) -> Result<CandidateDetail> {
        let state = self.candidate_owner(candidate_id)?;
        let record = state.record(candidate_id).cloned().expect("owner has the record");
        let window = state.window(candidate_id).cloned().expect("records and windows align");
        let view = self.detection(&state, record.iteration)?;
        let raw = self.corpus_bundle(&state)?;
        let wanted = DateSpan { start: add_days(window.start, -context_days), end: add_days(window.end, context_days) };
        let context = wanted.intersection(&state.corpus_span).expect("window lies in corpus");
        let series = SignalKind::ALL
            .into_iter()
            .map(|k| {
                let s = view.bundle.get(k);
                let f = &view.forecasts[k.index()];
                let points = context
                    .days()
                    .map(|date| {
                        let i = s.index_of(date).expect("context inside corpus");
                        let p = f.points[i];
                        SeriesPoint {
                            date,
                            value: s.values()[i],
                            raw: raw.get(k).values()[i],
                            yhat: p.yhat,
                            lower: p.lower,
                            upper: p.upper,
                            flagged: view.flags[k.index()][i],
                        }
                    })
                    .collect();
                KindSeries { kind: k, points }
            })
            .collect();
        let counts = window.vote_counts();
        Ok(CandidateDetail {
            campaign_id: state.campaign_id.clone(),
            record,
            vote_counts: SignalKind::ALL.into_iter().map(|k| (k, counts[k.index()])).collect(),
            window,
            context,
            series,
        })
    }

    /// Seeds for a new campaign: the imported storm list plus validated
    /// storms of other campaigns, deduplicated by range.
    pub fn known_storms(&self) -> Result<Vec<SeedStorm>> {
        let mut out: Vec<SeedStorm> = self.store.load_storms()?.iter().map(|s| s.to_seed()).collect();
        for c in self.campaigns() {
            for r in &c.finalized {
                if r.status == Status::Validated && !out.iter().any(|s| s.start == r.start && s.end == r.end) {
                    out.push(r.to_seed());
                }
            }
        }
        out.sort_by(|a, b| a.start.cmp(&b.start).then(a.end.cmp(&b.end)));
        Ok(out)
    }

    pub fn holidays(&self) -> Result<HolidayCalendar> {
        self.store.load_holidays()
    }
}
