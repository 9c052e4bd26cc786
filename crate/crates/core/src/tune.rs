//! Random search over the forecaster's interval width and changepoint
//! settings, scored by how well each trial's candidates recover a seed list.
//!
//! Precision is `D / A` and recall `D / S`, where `D` counts distinct seeds
//! overlapped by at least one candidate, `A` the number of candidates and `S`
//! the number of seeds. The best trial maximizes recall first, then
//! precision, then prefers fewer candidates, then the lower trial index.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{run_detection, CandidateWindow, DetectorConfig};
use crate::forecast::{HolidayCalendar, HyperParams};
use crate::signal::SignalBundle;
use crate::span::DateSpan;
use crate::{Error, Result};

/// A storm treated as ground truth while scoring a trial.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeedStorm {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl SeedStorm {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::MalformedInput(format!("storm ends {end} before it starts {start}")));
        }
        Ok(Self { label: label.into(), start, end })
    }

    pub fn span(&self) -> DateSpan {
        DateSpan { start: self.start, end: self.end }
    }
}

/// Whether the candidate and storm share at least `min_overlap_days` days.
pub fn matches(candidate: &CandidateWindow, storm: &SeedStorm, min_overlap_days: usize) -> bool {
    candidate.span().overlap_days(&storm.span()) >= min_overlap_days.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    /// Distinct seeds matched.
    pub matched: usize,
    pub n_candidates: usize,
    pub n_seeds: usize,
}

pub fn score(candidates: &[CandidateWindow], seeds: &[SeedStorm], min_overlap_days: usize) -> Result<Score> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let matched = seeds
        .iter()
        .filter(|s| candidates.iter().any(|c| matches(c, s, min_overlap_days)))
        .count();
    let a = candidates.len();
    Ok(Score {
        precision: if a == 0 { 0.0 } else { matched as f64 / a as f64 },
        recall: matched as f64 / seeds.len() as f64,
        matched,
        n_candidates: a,
        n_seeds: seeds.len(),
    })
}

/// Search ranges. Interval width and changepoint range are sampled
/// uniformly, the changepoint prior scale log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SearchSpace {
    pub interval_width: (f64, f64),
    pub changepoint_prior_scale: (f64, f64),
    pub changepoint_range: (f64, f64),
    pub n_trials: usize,
    pub rng_seed: u64,
    /// Source of every hyperparameter that is not searched.
    pub base: HyperParams,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            interval_width: (0.80, 0.999),
            changepoint_prior_scale: (0.001, 0.5),
            changepoint_range: (0.5, 0.98),
            n_trials: 50,
            rng_seed: 0,
            base: HyperParams::default(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), min: f64, max: f64, max_inclusive: bool| {
            let upper_ok = if max_inclusive { hi <= max } else { hi < max };
            if !(lo < hi && lo > min && upper_ok) {
                return Err(Error::InvalidConfig(format!("{name} range ({lo}, {hi}) is invalid")));
            }
            Ok(())
        };
        check("interval_width", self.interval_width, 0.0, 1.0, false)?;
        check("changepoint_prior_scale", self.changepoint_prior_scale, 0.0, f64::INFINITY, false)?;
        check("changepoint_range", self.changepoint_range, 0.0, 1.0, true)?;
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Hyperparameters of trial `trial_index`; a pure function of the seed and index.
pub fn sample_hyperparams(space: &SearchSpace, trial_index: usize) -> HyperParams {
    let mut rng = ChaCha8Rng::seed_from_u64(space.rng_seed);
    rng.set_stream(trial_index as u64);
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let interval_width = uniform(&mut rng, space.interval_width);
    let (lo, hi) = space.changepoint_prior_scale;
    let log_cps = uniform(&mut rng, (libm::log(lo), libm::log(hi)));
    let changepoint_range = uniform(&mut rng, space.changepoint_range);
    HyperParams {
        interval_width,
        changepoint_prior_scale: libm::exp(log_cps).clamp(lo, hi),
        changepoint_range,
        ..space.base
    }
}

/// One completed trial.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialResult {
    pub trial_index: usize,
    pub hyperparams: HyperParams,
    /// Every candidate the trial produced, including any outside the scoring span.
    pub candidates: Vec<CandidateWindow>,
    /// D: distinct seeds matched.
    pub matched_storms: usize,
    /// A: candidates inside the scoring span.
    pub n_candidates: usize,
    /// S: number of seeds.
    pub n_seeds: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Outcome of one trial as logged: its score, or why it failed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialRecord {
    pub trial_index: usize,
    pub hyperparams: HyperParams,
    pub outcome: core::result::Result<Score, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub detector: DetectorConfig,
    pub min_overlap_days: usize,
    /// Only candidates intersecting this span count toward A.
    pub score_span: Option<DateSpan>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            detector: DetectorConfig::default(),
            min_overlap_days: 1,
            score_span: None,
        }
    }
}

/// Run one trial end to end: fit, flag, form candidates, score.
pub fn run_trial(
    bundle: &SignalBundle,
    seeds: &[SeedStorm],
    hp: &HyperParams,
    holidays: &HolidayCalendar,
    cfg: &SearchConfig,
    trial_index: usize,
    id_prefix: &str,
) -> Result<TrialResult> {
    let detection = run_detection(bundle, hp, holidays, &cfg.detector, id_prefix)?;
    let candidates = detection.candidates;
    let scored: Vec<CandidateWindow> = match cfg.score_span {
        Some(span) => candidates.iter().filter(|c| c.span().intersects(&span)).cloned().collect(),
        None => candidates.clone(),
    };
    let s = score(&scored, seeds, cfg.min_overlap_days)?;
    Ok(TrialResult {
        trial_index,
        hyperparams: *hp,
        candidates,
        matched_storms: s.matched,
        n_candidates: s.n_candidates,
        n_seeds: s.n_seeds,
        precision: s.precision,
        recall: s.recall,
    })
}

/// Selection order: `Greater` means `a` is the better trial.
pub fn compare_trials(a: &TrialResult, b: &TrialResult) -> Ordering {
    a.recall
        .partial_cmp(&b.recall)
        .unwrap_or(Ordering::Equal)
        .then(a.precision.partial_cmp(&b.precision).unwrap_or(Ordering::Equal))
        .then(b.n_candidates.cmp(&a.n_candidates))
        .then(b.trial_index.cmp(&a.trial_index))
}

pub fn select_best(trials: &[TrialResult]) -> Option<&TrialResult> {
    trials.iter().max_by(|a, b| compare_trials(a, b))
}

/// Indices of trials not dominated in (recall, precision).
pub fn pareto_front(trials: &[TrialResult]) -> Vec<usize> {
    trials
        .iter()
        .filter(|t| {
            !trials.iter().any(|o| {
                o.recall >= t.recall
                    && o.precision >= t.precision
                    && (o.recall > t.recall || o.precision > t.precision)
            })
        })
        .map(|t| t.trial_index)
        .collect()
}

/// Progress notification after each finished trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialProgress {
    pub trial_index: usize,
    pub ok: bool,
    pub recall: f64,
    pub precision: f64,
}

/// Watches a running search. With the `parallel` feature the methods are
/// called from worker threads.
pub trait SearchObserver: Sync {
    fn trial_started(&self, _trial_index: usize) {}
    fn trial_finished(&self, _progress: TrialProgress) {}
}

impl<F: Fn(TrialProgress) + Sync> SearchObserver for F {
    fn trial_finished(&self, progress: TrialProgress) {
        self(progress)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub best: TrialResult,
    /// Every successful trial, ordered by trial index.
    pub trials: Vec<TrialResult>,
    /// Every trial including failures, ordered by trial index.
    pub log: Vec<TrialRecord>,
    pub pareto: Vec<usize>,
}

pub fn random_search(
    bundle: &SignalBundle,
    seeds: &[SeedStorm],
    cfg: &SearchConfig,
    holidays: &HolidayCalendar,
) -> Result<SearchReport> {
    random_search_with_progress(bundle, seeds, cfg, holidays, "", &|_: TrialProgress| {})
}

/// Random search; trials run concurrently with the `parallel` feature, and
/// results are ordered by trial index before selection either way.
pub fn random_search_with_progress(
    bundle: &SignalBundle,
    seeds: &[SeedStorm],
    cfg: &SearchConfig,
    holidays: &HolidayCalendar,
    id_prefix: &str,
    observer: &dyn SearchObserver,
) -> Result<SearchReport> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    cfg.space.validate()?;
    cfg.detector.validate()?;
    let span = bundle.span();
    if let Some(s) = seeds.iter().find(|s| !span.contains_span(&s.span())) {
        return Err(Error::SpanConflict(format!(
            "seed {} ({}) lies outside the signal span {span}",
            s.label,
            s.span()
        )));
    }

    let one = |i: usize| {
        observer.trial_started(i);
        let hp = sample_hyperparams(&cfg.space, i);
        let out = run_trial(bundle, seeds, &hp, holidays, cfg, i, id_prefix);
        observer.trial_finished(match &out {
            Ok(t) => TrialProgress { trial_index: i, ok: true, recall: t.recall, precision: t.precision },
            Err(_) => TrialProgress { trial_index: i, ok: false, recall: 0.0, precision: 0.0 },
        });
        (hp, out)
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<(HyperParams, Result<TrialResult>)> = {
        use rayon::prelude::*;
        (0..cfg.space.n_trials).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<(HyperParams, Result<TrialResult>)> = (0..cfg.space.n_trials).map(one).collect();

    let mut trials = Vec::new();
    let mut log = Vec::with_capacity(outcomes.len());
    for (i, (hp, out)) in outcomes.into_iter().enumerate() {
        match out {
            Ok(t) => {
                log.push(TrialRecord {
                    trial_index: i,
                    hyperparams: hp,
                    outcome: Ok(Score {
                        precision: t.precision,
                        recall: t.recall,
                        matched: t.matched_storms,
                        n_candidates: t.n_candidates,
                        n_seeds: t.n_seeds,
                    }),
                });
                trials.push(t);
            }
            Err(e) => log.push(TrialRecord { trial_index: i, hyperparams: hp, outcome: Err(e.to_string()) }),
        }
    }
    let best = select_best(&trials).cloned().ok_or(Error::AllTrialsFailed(cfg.space.n_trials))?;
    let pareto = pareto_front(&trials);
    Ok(SearchReport { best, trials, log, pareto })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::DayVotes;
    use crate::span::add_days;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn jan(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2005, 1, d).unwrap()
    }

    fn cand(start: NaiveDate, end: NaiveDate) -> CandidateWindow {
        CandidateWindow {
            id: crate::detect::candidate_id("t", start),
            start,
            end,
            votes: DateSpan::new(start, end)
                .unwrap()
                .days()
                .map(|date| DayVotes { date, kinds: Default::default() })
                .collect(),
            peak_deficit: 0.0,
        }
    }

    fn seed(start: NaiveDate, end: NaiveDate) -> SeedStorm {
        SeedStorm::new("s", start, end).unwrap()
    }

    fn trial(i: usize, recall: f64, precision: f64, a: usize) -> TrialResult {
        TrialResult {
            trial_index: i,
            hyperparams: HyperParams::default(),
            candidates: vec![],
            matched_storms: 0,
            n_candidates: a,
            n_seeds: 10,
            precision,
            recall,
        }
    }

    #[test]
    fn overlap_matching() {
        let storm = seed(jan(5), jan(10));
        assert!(matches(&cand(jan(9), jan(12)), &storm, 1));
        assert!(!matches(&cand(jan(9), jan(12)), &storm, 3));
        assert!(!matches(&cand(jan(11), jan(12)), &storm, 1));
        assert!(matches(&cand(jan(5), jan(10)), &storm, 1));
    }

    #[test]
    fn score_arithmetic() {
        let seeds: Vec<SeedStorm> = (0..5).map(|i| seed(jan(1 + 5 * i), jan(2 + 5 * i))).collect();
        let s = score(&[], &seeds, 1).unwrap();
        assert_eq!((s.precision, s.recall), (0.0, 0.0));
        let cands = vec![cand(jan(1), jan(1)), cand(jan(6), jan(7)), cand(jan(11), jan(12)), cand(jan(30), jan(31))];
        let s = score(&cands, &seeds, 1).unwrap();
        assert_eq!((s.matched, s.precision, s.recall), (3, 0.75, 0.6));
        assert_eq!(score(&cands, &[], 1).unwrap_err(), Error::EmptySeeds);
    }

    #[test]
    fn recall_outranks_precision() {
        let ts = vec![trial(0, 0.9, 0.5, 10), trial(1, 0.8, 0.9, 3)];
        assert_eq!(select_best(&ts).unwrap().trial_index, 0);
        let ts = vec![trial(0, 0.9, 0.5, 10), trial(1, 0.9, 0.7, 12)];
        assert_eq!(select_best(&ts).unwrap().trial_index, 1);
        let ts = vec![trial(0, 0.9, 0.7, 12), trial(1, 0.9, 0.7, 9), trial(2, 0.9, 0.7, 9)];
        assert_eq!(select_best(&ts).unwrap().trial_index, 1);
        assert_eq!(select_best(&ts[..1]).unwrap().trial_index, 0);
    }

    #[test]
    fn pareto_excludes_dominated() {
        let ts = vec![trial(0, 0.9, 0.5, 1), trial(1, 0.8, 0.9, 1), trial(2, 0.7, 0.4, 1)];
        assert_eq!(pareto_front(&ts), vec![0, 1]);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let space = SearchSpace { rng_seed: 42, ..Default::default() };
        assert_eq!(sample_hyperparams(&space, 7), sample_hyperparams(&space, 7));
        assert_ne!(sample_hyperparams(&space, 7), sample_hyperparams(&space, 8));
        for i in 0..10_000 {
            let hp = sample_hyperparams(&space, i);
            assert!((0.80..=0.999).contains(&hp.interval_width));
            assert!((0.001..=0.5).contains(&hp.changepoint_prior_scale));
            assert!((0.5..=0.98).contains(&hp.changepoint_range));
            assert_eq!(hp.n_changepoints, 25);
        }
    }

    #[test]
    fn prior_scale_is_log_uniform() {
        let space = SearchSpace { rng_seed: 3, ..Default::default() };
        let (lo, hi) = space.changepoint_prior_scale;
        let n = 10_000;
        let mut u: Vec<f64> = (0..n)
            .map(|i| {
                let v = sample_hyperparams(&space, i).changepoint_prior_scale;
                (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
            })
            .collect();
        u.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
            .fold(0.0, f64::max);
        // Kolmogorov critical value at alpha = 0.01
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn invalid_space_rejected() {
        let bad = SearchSpace { interval_width: (0.9, 0.8), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchSpace { n_trials: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    /// All-pairs overlap oracle for D.
    fn brute_d(cands: &[(i64, i64)], seeds: &[(i64, i64)]) -> usize {
        let mut hit = vec![false; seeds.len()];
        for &(cs, ce) in cands {
            for (si, &(ss, se)) in seeds.iter().enumerate() {
                if cs <= se && ss <= ce {
                    hit[si] = true;
                }
            }
        }
        hit.iter().filter(|h| **h).count()
    }

    type Layout = (Vec<(i64, i64)>, Vec<(i64, i64)>);

    fn layout() -> impl Strategy<Value = Layout> {
        let iv = (0i64..300, 0i64..15).prop_map(|(s, l)| (s, s + l));
        (proptest::collection::vec(iv.clone(), 0..25), proptest::collection::vec(iv, 1..25))
    }

    fn build(cands: &[(i64, i64)], seeds: &[(i64, i64)]) -> (Vec<CandidateWindow>, Vec<SeedStorm>) {
        let d = |o| add_days(jan(1), o);
        (
            cands.iter().map(|&(s, e)| cand(d(s), d(e))).collect(),
            seeds.iter().map(|&(s, e)| seed(d(s), d(e))).collect(),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn d_matches_all_pairs_oracle((c, s) in layout()) {
            let (cands, seeds) = build(&c, &s);
            let sc = score(&cands, &seeds, 1).unwrap();
            prop_assert_eq!(sc.matched, brute_d(&c, &s));
            prop_assert_eq!(sc.n_candidates, c.len());
        }
    }

    proptest! {
        #[test]
        fn score_is_order_free((c, s) in layout(), rot in 0usize..25) {
            let (mut cands, mut seeds) = build(&c, &s);
            let a = score(&cands, &seeds, 1).unwrap();
            if !cands.is_empty() {
                let k = rot % cands.len();
                cands.rotate_left(k);
            }
            seeds.reverse();
            prop_assert_eq!(a, score(&cands, &seeds, 1).unwrap());
        }

        #[test]
        fn adding_candidates((c, s) in layout(), extra in (0i64..300, 0i64..15)) {
            let (mut cands, seeds) = build(&c, &s);
            let before = score(&cands, &seeds, 1).unwrap();
            let (new_c, _) = build(&[(extra.0, extra.0 + extra.1)], &[]);
            let hits_any = seeds.iter().any(|sd| matches(&new_c[0], sd, 1));
            cands.push(new_c[0].clone());
            let after = score(&cands, &seeds, 1).unwrap();
            prop_assert!(after.matched >= before.matched);
            prop_assert_eq!(after.n_seeds, before.n_seeds);
            if !hits_any && before.n_candidates > 0 && before.matched > 0 {
                prop_assert!(after.precision < before.precision);
            }
        }
    }
}
