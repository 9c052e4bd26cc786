#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use stormwatch::core::campaign::{CampaignConfig, CampaignEvent, CampaignState, Mode, TrialSummary};
use stormwatch::core::detect::{CandidateWindow, DayVotes};
use stormwatch::core::forecast::HyperParams;
use stormwatch::core::span::add_days;
use stormwatch::core::{NaiveDate, SignalKind};
use stormwatch::formats::SignalTable;
use stormwatch::registry::{Clock, Registry};
use stormwatch::store::Store;
use stormwatch::synth::{storm_world, StormWorld, WorldSpec};

pub fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Starts at 2024-01-01T00:00:00Z and ticks one second per call.
pub fn ticking_clock() -> Clock {
    let t = Arc::new(AtomicI64::new(0));
    Arc::new(move || {
        let s = t.fetch_add(1, Ordering::SeqCst);
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(s)
    })
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 12, 31, 0, 0, 0).unwrap()
}

pub fn small_world() -> StormWorld {
    storm_world(&WorldSpec { days: 900, n_storms: 5, n_decoys: 3, seed: 3, ..WorldSpec::default() })
}

/// Candidate voted by three kinds on each of `len` days from `start`.
pub fn window(id: &str, start: NaiveDate, len: usize) -> CandidateWindow {
    let kinds = [SignalKind::Topics, SignalKind::Entities, SignalKind::Plot].into_iter().collect();
    CandidateWindow {
        id: id.into(),
        start,
        end: add_days(start, len as i64 - 1),
        votes: (0..len).map(|i| DayVotes { date: add_days(start, i as i64), kinds }).collect(),
        peak_deficit: 0.0,
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub world: StormWorld,
    pub campaign: String,
    /// Pending candidates of round 1: 3, 4 and 5 days long, by start date.
    pub pending: Vec<CandidateWindow>,
}

impl Fixture {
    pub fn store(&self) -> Store {
        Store::open(self.dir.path()).unwrap()
    }

    pub fn registry(&self) -> Arc<Registry> {
        Arc::new(Registry::open_with_clock(self.store(), ticking_clock()).unwrap())
    }
}

/// A data directory holding a 900-day synthetic store and an in-period
/// campaign `review` whose open round queued three handmade candidates.
pub fn review_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world();
    let store = Store::open(dir.path()).unwrap();
    store.save_signals(&SignalTable::from_bundle(&world.bundle)).unwrap();
    let span = world.bundle.span();
    let seeds = world.storms.iter().take(2).map(|d| d.to_seed()).collect();
    let mut config = CampaignConfig::default();
    config.search.space.n_trials = 8;
    let (_, created) = CampaignState::create("review", Mode::InPeriod, span, span, seeds, config, t0()).unwrap();
    let pending = vec![
        window("review-19970301", date("1997-03-01"), 3),
        window("review-19970601", date("1997-06-01"), 4),
        window("review-19970901", date("1997-09-01"), 5),
    ];
    let started = CampaignEvent::IterationStarted {
        iteration: 1,
        best_trial: TrialSummary {
            trial_index: 0,
            hyperparams: HyperParams::default(),
            precision: 0.5,
            recall: 1.0,
            n_candidates: 5,
        },
        queued: pending.clone(),
        known: Vec::new(),
        at: t0(),
    };
    store.append("review", &[created, started]).unwrap();
    Fixture { dir, world, campaign: "review".into(), pending }
}

