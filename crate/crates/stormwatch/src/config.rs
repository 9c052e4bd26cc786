//! Campaign configuration file (TOML).
//!
//! ```toml
//! campaign_id = "main"
//! mode = "in_period"              # or "out_period"
//! corpus_start = "1996-01-01"     # defaults to the signal store's span
//! corpus_end = "2006-12-31"
//! target_start = "2007-01-01"     # out_period only
//! target_end = "2007-12-31"
//! seeds = "seeds.csv"             # storm list; relative to this file
//! holidays = "holidays.csv"       # optional, `date,name`
//! smoothing_window = 7            # 0 disables smoothing
//! convergence_threshold = 0.01
//! max_iterations = 10
//! window_years = 9
//!
//! [search]
//! n_trials = 50
//! rng_seed = 0
//! interval_width = [0.80, 0.999]
//! changepoint_prior_scale = [0.001, 0.5]
//! changepoint_range = [0.5, 0.98]
//! min_overlap_days = 1
//!
//! [detector]
//! quorum = 3
//! min_duration = 2
//! direction = "low"               # low | high | both
//! rule = "day_majority"           # day_majority | runs_then_majority | window_majority
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use stormwatch_core::campaign::{CampaignConfig, Mode};
use stormwatch_core::detect::{CandidateRule, DetectorConfig};
use stormwatch_core::forecast::Direction;
use stormwatch_core::tune::{SearchConfig, SearchSpace};
use stormwatch_core::{DateSpan, NaiveDate};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub n_trials: Option<usize>,
    pub rng_seed: Option<u64>,
    pub interval_width: Option<(f64, f64)>,
    pub changepoint_prior_scale: Option<(f64, f64)>,
    pub changepoint_range: Option<(f64, f64)>,
    pub min_overlap_days: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub quorum: Option<usize>,
    pub min_duration: Option<usize>,
    pub direction: Option<Direction>,
    pub rule: Option<CandidateRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub campaign_id: Option<String>,
    pub mode: Option<Mode>,
    pub corpus_start: Option<NaiveDate>,
    pub corpus_end: Option<NaiveDate>,
    pub target_start: Option<NaiveDate>,
    pub target_end: Option<NaiveDate>,
    pub seeds: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub smoothing_window: Option<usize>,
    pub convergence_threshold: Option<f64>,
    pub max_iterations: Option<u32>,
    pub window_years: Option<u32>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub detector: DetectorSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Engine settings; holidays are loaded separately from their file.
    pub fn campaign_config(&self) -> Result<CampaignConfig> {
        let d = CampaignConfig::default();
        let space_d = SearchSpace::default();
        let det_d = DetectorConfig::default();
        let s = &self.search;
        let cfg = CampaignConfig {
            search: SearchConfig {
                space: SearchSpace {
                    interval_width: s.interval_width.unwrap_or(space_d.interval_width),
                    changepoint_prior_scale: s.changepoint_prior_scale.unwrap_or(space_d.changepoint_prior_scale),
                    changepoint_range: s.changepoint_range.unwrap_or(space_d.changepoint_range),
                    n_trials: s.n_trials.unwrap_or(space_d.n_trials),
                    rng_seed: s.rng_seed.unwrap_or(space_d.rng_seed),
                    base: space_d.base,
                },
                detector: DetectorConfig {
                    quorum: self.detector.quorum.unwrap_or(det_d.quorum),
                    min_duration: self.detector.min_duration.unwrap_or(det_d.min_duration),
                    direction: self.detector.direction.unwrap_or(det_d.direction),
                    rule: self.detector.rule.unwrap_or(det_d.rule),
                },
                min_overlap_days: s.min_overlap_days.unwrap_or(1),
                score_span: None,
            },
            smoothing_window: match self.smoothing_window {
                Some(0) => None,
                Some(w) => Some(w),
                None => d.smoothing_window,
            },
            convergence_threshold: self.convergence_threshold.unwrap_or(d.convergence_threshold),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            window_years: self.window_years.unwrap_or(d.window_years),
            holidays: d.holidays,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::InPeriod)
    }

    /// Corpus span, with either end falling back to `available`.
    pub fn corpus_span(&self, available: DateSpan) -> Result<DateSpan> {
        let start = self.corpus_start.unwrap_or(available.start);
        let end = self.corpus_end.unwrap_or(available.end);
        DateSpan::new(start, end).ok_or_else(|| Error::Config(format!("corpus_end {end} is before corpus_start {start}")))
    }

    pub fn target_span(&self) -> Result<Option<DateSpan>> {
        match (self.target_start, self.target_end) {
            (None, None) => Ok(None),
            (Some(s), Some(e)) => DateSpan::new(s, e)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("target_end {e} is before target_start {s}"))),
            _ => Err(Error::Config("target_start and target_end must be given together".into())),
        }
    }
}
