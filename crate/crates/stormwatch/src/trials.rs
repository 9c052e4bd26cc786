//! Line-delimited trial log: one JSON object per search trial.

use std::io::{BufRead, Write};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stormwatch_core::tune::{SearchObserver, SearchReport, TrialProgress, TrialRecord};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLogLine {
    pub trial_index: usize,
    pub interval_width: f64,
    pub changepoint_prior_scale: f64,
    pub changepoint_range: f64,
    /// Candidates produced.
    #[serde(rename = "A")]
    pub a: Option<usize>,
    /// Seeds matched by at least one candidate.
    #[serde(rename = "D")]
    pub d: Option<usize>,
    /// Seeds.
    #[serde(rename = "S")]
    pub s: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Present only when timing was requested, so untimed logs are reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl TrialLogLine {
    pub fn from_record(r: &TrialRecord, wall_time_ms: Option<f64>) -> Self {
        let hp = &r.hyperparams;
        let mut line = Self {
            trial_index: r.trial_index,
            interval_width: hp.interval_width,
            changepoint_prior_scale: hp.changepoint_prior_scale,
            changepoint_range: hp.changepoint_range,
            a: None,
            d: None,
            s: None,
            precision: None,
            recall: None,
            error: None,
            wall_time_ms,
        };
        match &r.outcome {
            Ok(s) => {
                line.a = Some(s.n_candidates);
                line.d = Some(s.matched);
                line.s = Some(s.n_seeds);
                line.precision = Some(s.precision);
                line.recall = Some(s.recall);
            }
            Err(e) => line.error = Some(e.clone()),
        }
        line
    }
}

/// Log lines for a finished search; `timings[i]` is trial `i`'s wall time.
pub fn log_lines(report: &SearchReport, timings: Option<&[f64]>) -> Vec<TrialLogLine> {
    report
        .log
        .iter()
        .map(|r| TrialLogLine::from_record(r, timings.and_then(|t| t.get(r.trial_index).copied())))
        .collect()
}

pub fn write_log<W: Write>(mut w: W, lines: &[TrialLogLine]) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(Error::io("<trial log>"))?;
    }
    w.flush().map_err(Error::io("<trial log>"))
}

pub fn read_log<R: BufRead>(r: R, origin: &str) -> Result<Vec<TrialLogLine>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(Error::io(origin))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(origin, i as u64 + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Records each trial's wall time; trials may run on several threads.
#[derive(Debug)]
pub struct TrialTimer {
    started: Mutex<Vec<Option<Instant>>>,
    elapsed_ms: Mutex<Vec<Option<f64>>>,
}

impl TrialTimer {
    pub fn new(n_trials: usize) -> Self {
        Self { started: Mutex::new(vec![None; n_trials]), elapsed_ms: Mutex::new(vec![None; n_trials]) }
    }

    pub fn start(&self, i: usize) {
        if let Some(slot) = self.started.lock().expect("timer lock").get_mut(i) {
            *slot = Some(Instant::now());
        }
    }

    pub fn stop(&self, i: usize) {
        let began = self.started.lock().expect("timer lock").get(i).copied().flatten();
        if let (Some(t0), Some(slot)) = (began, self.elapsed_ms.lock().expect("timer lock").get_mut(i)) {
            *slot = Some(t0.elapsed().as_secs_f64() * 1e3);
        }
    }

    /// Milliseconds per trial index, once every trial has stopped.
    pub fn wall_times(&self) -> Option<Vec<f64>> {
        self.elapsed_ms.lock().expect("timer lock").iter().copied().collect()
    }
}

impl SearchObserver for TrialTimer {
    fn trial_started(&self, i: usize) {
        self.start(i);
    }

    fn trial_finished(&self, p: TrialProgress) {
        self.stop(p.trial_index);
    }
}
