//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Datelike;
use clap::{Args, Parser, Subcommand};
use stormwatch_core::campaign::{
    compare_periods, period_totals, summarize_years, CampaignState, Decision, Mode, Status, StormRecord, Verdict,
};
use stormwatch_core::detect::run_detection;
use stormwatch_core::forecast::{fit, HolidayCalendar, HyperParams};
use stormwatch_core::signal::{anomaly_correlations, build_series};
use stormwatch_core::tune::{random_search_with_progress, SeedStorm};
use stormwatch_core::{DateSpan, NaiveDate, SignalBundle, SignalKind};

use crate::config::FileConfig;
use crate::formats::{self, CandidateRow, SignalTable, StormEntry, DEFAULT_SNIPPET_CHARS};
use crate::model::ModelDocument;
use crate::registry::Registry;
use crate::store::{write_atomic, Store, DATA_DIR_ENV};
use crate::synth::{storm_world, WorldSpec};
use crate::trials::{log_lines, write_log, TrialTimer};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const DEFAULT_CAMPAIGN: &str = "main";

#[derive(Debug, Parser)]
#[command(name = "stormwatch", version, about = "Detect media storms in daily news dispersion signals")]
pub struct Cli {
    /// Data directory holding the signal store and campaigns.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    /// Campaign configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load data files into the data directory.
    #[command(subcommand)]
    Ingest(Ingest),
    /// Print or export the stored dispersion signals.
    Signals(SignalsArgs),
    /// Random search over forecaster settings against a seed list.
    Tune(TuneArgs),
    /// Close a fully reviewed round and run the next in-period round.
    Iterate(IterateArgs),
    /// Record expert verdicts on candidates.
    Decide(DecideArgs),
    /// Run an out-period round for one or more target years.
    Transfer(TransferArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Yearly storm summaries, period comparison and signal correlations.
    Stats(StatsArgs),
    /// Write storm lists, candidates or fitted models.
    #[command(subcommand)]
    Export(Export),
    /// Generate a synthetic signal store with planted storms.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum Ingest {
    /// Precomputed signals CSV (`date,topics,llm,entities,plot`).
    Signals { file: PathBuf },
    /// Per-document embeddings of one kind; dispersion is computed per day.
    Embeddings {
        file: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: SignalKind,
        /// Days with fewer articles are left missing.
        #[arg(long, default_value_t = 2)]
        min_articles: usize,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Article metadata (`doc_id,date,outlet,headline,snippet|body`).
    Articles {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SNIPPET_CHARS)]
        snippet_chars: usize,
    },
    /// Storm list (`label,start,end[,status,iteration]`).
    Storms { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct SignalsArgs {
    /// Trailing rolling-mean window in days.
    #[arg(long)]
    pub smooth: Option<usize>,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Seed storm list; defaults to the config's seeds, then the imported list.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Trial log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Record per-trial wall time in the log.
    #[arg(long)]
    pub timings: bool,
    /// Best trial's candidates (CSV); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    #[arg(long)]
    pub campaign: Option<String>,
    /// Trial log of the round's search.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[arg(long, required_unless_present = "file", conflicts_with = "file")]
    pub candidate: Option<String>,
    #[arg(long, requires = "candidate")]
    pub verdict: Option<VerdictArg>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub note: Option<String>,
    /// Recorded with every decision of this call.
    #[arg(long, env = "STORMWATCH_EXPERT")]
    pub expert: Option<String>,
    /// CSV of `candidate_id,verdict,label,note[,expert]`.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum VerdictArg {
    Validated,
    Rejected,
}

impl From<VerdictArg> for Verdict {
    fn from(v: VerdictArg) -> Self {
        match v {
            VerdictArg::Validated => Verdict::Validated,
            VerdictArg::Rejected => Verdict::Rejected,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Campaign id prefix; campaigns are named `<prefix>-<year>`.
    #[arg(long)]
    pub prefix: Option<String>,
    /// First target year; defaults to the config's target span.
    #[arg(long)]
    pub target_year: Option<i32>,
    /// Last target year, inclusive.
    #[arg(long, requires = "target_year")]
    pub last_year: Option<i32>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Storm list to summarize; defaults to every validated campaign storm.
    #[arg(long, conflicts_with = "campaign")]
    pub storms: Option<PathBuf>,
    #[arg(long)]
    pub campaign: Option<String>,
    #[arg(long)]
    pub first_year: Option<i32>,
    #[arg(long)]
    pub last_year: Option<i32>,
    /// Second period `FIRST-LAST` (years) to compare yearly counts against.
    #[arg(long)]
    pub compare: Option<String>,
    /// Print signal and anomaly correlation matrices instead.
    #[arg(long)]
    pub correlations: bool,
    /// Smoothing window for correlations.
    #[arg(long)]
    pub smooth: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Export {
    /// Storm list: a campaign's validated storms, or the imported list plus all validated storms.
    Storms {
        #[arg(long)]
        campaign: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A campaign's candidates.
    Candidates {
        #[arg(long)]
        campaign: Option<String>,
        #[arg(long)]
        status: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One signal's model, fitted with a campaign's latest best settings or defaults.
    Model {
        #[arg(long, value_parser = parse_kind)]
        kind: SignalKind,
        #[arg(long)]
        campaign: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub days: usize,
    #[arg(long, default_value_t = 10)]
    pub storms: usize,
    #[arg(long, default_value_t = 5)]
    pub decoys: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "1996-01-01")]
    pub start: NaiveDate,
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

struct Ctx {
    store: Store,
    file: FileConfig,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let store = Store::open(Store::resolve_root(cli.data_dir.clone()))?;
        let file = match &cli.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self { store, file })
    }

    fn registry(&self) -> Result<Registry> {
        Registry::open(self.store.clone())
    }

    fn campaign_id(&self, explicit: &Option<String>) -> String {
        explicit.clone().or_else(|| self.file.campaign_id.clone()).unwrap_or_else(|| DEFAULT_CAMPAIGN.into())
    }

    fn holidays(&self) -> Result<HolidayCalendar> {
        match &self.file.holidays {
            Some(p) => {
                let p = self.file.resolve(p);
                formats::read_holidays(open(&p)?, &p.display().to_string())
            }
            None => self.store.load_holidays(),
        }
    }

    /// Seeds from `explicit`, else the config's seeds file, else `fallback`.
    fn seeds(&self, explicit: Option<&Path>, fallback: impl FnOnce() -> Result<Vec<SeedStorm>>) -> Result<Vec<SeedStorm>> {
        let path = explicit.map(Path::to_path_buf).or_else(|| self.file.seeds.as_ref().map(|p| self.file.resolve(p)));
        match path {
            Some(p) => Ok(read_storm_file(&p)?.iter().map(StormEntry::to_seed).collect()),
            None => fallback(),
        }
    }

    fn signals(&self) -> Result<SignalBundle> {
        self.store
            .load_signals()?
            .ok_or_else(|| Error::NotFound { what: "signal store", id: self.store.signals_path().display().to_string() })?
            .to_bundle()
    }
}

fn parse_kind(s: &str) -> std::result::Result<SignalKind, String> {
    SignalKind::parse(s).ok_or_else(|| format!("expected one of topics, entities, plot, llm; got `{s}`"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(Error::io(path))
}

fn read_storm_file(path: &Path) -> Result<Vec<StormEntry>> {
    formats::read_storms(open(path)?, &path.display().to_string())
}

/// Write to `path` atomically, or to `out` when no path is given.
fn emit(path: &Option<PathBuf>, out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => out.write_all(bytes).map_err(Error::io("<stdout>")),
    }
}

fn span_arg(from: Option<NaiveDate>, to: Option<NaiveDate>, available: DateSpan) -> Result<DateSpan> {
    let span = DateSpan::new(from.unwrap_or(available.start), to.unwrap_or(available.end))
        .ok_or_else(|| Error::Config("--to is before --from".into()))?;
    if !available.contains_span(&span) {
        return Err(Error::Config(format!("{span} is outside the stored signals ({available})")));
    }
    Ok(span)
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Ingest(cmd) => ingest(&ctx, cmd, err),
        Command::Signals(a) => signals(&ctx, a, out),
        Command::Tune(a) => tune(&ctx, a, out, err),
        Command::Iterate(a) => iterate(&ctx, a, out),
        Command::Decide(a) => decide(&ctx, a, out, err),
        Command::Transfer(a) => transfer(&ctx, a, out),
        Command::Serve(a) => serve(&ctx, a, err),
        Command::Stats(a) => stats(&ctx, a, out),
        Command::Export(cmd) => export(&ctx, cmd, out),
        Command::Synth(a) => synth(a, out),
    }
}

fn ingest(ctx: &Ctx, cmd: Ingest, err: &mut dyn Write) -> Result<()> {
    let stderr = |err: &mut dyn Write, msg: String| writeln!(err, "{msg}").map_err(Error::io("<stderr>"));
    match cmd {
        Ingest::Signals { file } => {
            let table = formats::read_signals(open(&file)?, &file.display().to_string())?;
            table.to_bundle()?;
            ctx.store.save_signals(&table)?;
            stderr(err, format!("stored {} days ({})", table.rows.len(), table.span()))
        }
        Ingest::Embeddings { file, kind, min_articles, from, to } => {
            let docs = formats::read_embeddings(open(&file)?, kind, &file.display().to_string())?;
            let (lo, hi) = match (docs.iter().map(|d| d.date).min(), docs.iter().map(|d| d.date).max()) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => return Err(Error::Config(format!("{}: no embeddings", file.display()))),
            };
            let span = DateSpan::new(from.unwrap_or(lo), to.unwrap_or(hi))
                .ok_or_else(|| Error::Config("--to is before --from".into()))?;
            let (series, _, report) = build_series(&docs, kind, span, min_articles)?;
            let mut table = match ctx.store.load_signals()? {
                Some(t) => t,
                None => SignalTable { start: span.start, rows: vec![[None; 4]; span.len_days()] },
            };
            table.merge(&series);
            ctx.store.save_signals(&table)?;
            stderr(
                err,
                format!(
                    "stored {kind} for {span}: {} days with a value, {} documents outside the span",
                    series.present_count(),
                    report.excluded
                ),
            )
        }
        Ingest::Articles { file, snippet_chars } => {
            let articles = formats::read_articles(open(&file)?, &file.display().to_string(), snippet_chars)?;
            ctx.store.save_articles(&articles)?;
            stderr(err, format!("stored {} articles", articles.len()))
        }
        Ingest::Storms { file } => {
            let storms = read_storm_file(&file)?;
            ctx.store.save_storms(&storms)?;
            stderr(err, format!("stored {} storms", storms.len()))
        }
    }
}

fn signals(ctx: &Ctx, a: SignalsArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = ctx.signals()?;
    let span = span_arg(a.from, a.to, bundle.span())?;
    let mut bundle = bundle.smoothed_opt(a.smooth)?;
    bundle = bundle.slice(&span)?;
    let mut buf = Vec::new();
    formats::write_signals(&mut buf, &SignalTable::from_bundle(&bundle))?;
    emit(&a.out, out, &buf)
}

trait SmoothOpt: Sized {
    fn smoothed_opt(self, window: Option<usize>) -> Result<Self>;
}

impl SmoothOpt for SignalBundle {
    fn smoothed_opt(self, window: Option<usize>) -> Result<Self> {
        match window {
            Some(w) if w > 1 => Ok(self.smoothed(w)?),
            _ => Ok(self),
        }
    }
}

fn tune(ctx: &Ctx, a: TuneArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = ctx.file.campaign_config()?;
    if let Some(n) = a.trials {
        cfg.search.space.n_trials = n;
    }
    if let Some(s) = a.rng_seed {
        cfg.search.space.rng_seed = s;
    }
    cfg.validate()?;
    let bundle = ctx.signals()?;
    let span = span_arg(a.from.or(ctx.file.corpus_start), a.to.or(ctx.file.corpus_end), bundle.span())?;
    // smooth before slicing so the first days of the span see a full window
    let bundle = bundle.smoothed_opt(cfg.smoothing_window)?.slice(&span)?;
    let seeds = ctx.seeds(a.seeds.as_deref(), || Ok(ctx.store.load_storms()?.iter().map(StormEntry::to_seed).collect()))?;
    let holidays = ctx.holidays()?;
    let timer = TrialTimer::new(cfg.search.space.n_trials);
    let report = random_search_with_progress(&bundle, &seeds, &cfg.search, &holidays, "tune", &timer)?;
    if let Some(path) = &a.log {
        let timings = if a.timings { timer.wall_times() } else { None };
        let mut buf = Vec::new();
        write_log(&mut buf, &log_lines(&report, timings.as_deref()))?;
        write_atomic(path, &buf)?;
    }
    let b = &report.best;
    writeln!(
        err,
        "best trial {}: precision {:.4} recall {:.4} ({} of {} seeds, {} candidates); interval_width {} changepoint_prior_scale {} changepoint_range {}",
        b.trial_index,
        b.precision,
        b.recall,
        b.matched_storms,
        b.n_seeds,
        b.n_candidates,
        b.hyperparams.interval_width,
        b.hyperparams.changepoint_prior_scale,
        b.hyperparams.changepoint_range
    )
    .map_err(Error::io("<stderr>"))?;
    let rows: Vec<CandidateRow> = b.candidates.iter().map(CandidateRow::from).collect();
    let mut buf = Vec::new();
    formats::write_candidates(&mut buf, &rows)?;
    emit(&a.out, out, &buf)
}

/// Create the configured campaign if it does not exist yet.
fn ensure_campaign(ctx: &Ctx, reg: &Registry, id: &str, mode: Mode, target: Option<DateSpan>) -> Result<Arc<CampaignState>> {
    if let Ok(c) = reg.campaign(id) {
        return Ok(c);
    }
    let available = reg.signals()?.span();
    let mut config = ctx.file.campaign_config()?;
    config.holidays = ctx.holidays()?;
    let seeds = ctx.seeds(None, || reg.known_storms())?;
    let (corpus, target) = match mode {
        Mode::InPeriod => {
            let c = ctx.file.corpus_span(available)?;
            (c, target.unwrap_or(c))
        }
        Mode::OutPeriod => {
            let t = target.ok_or_else(|| Error::Config("out-period campaigns need a target span".into()))?;
            let labeled_start = match ctx.file.corpus_start {
                Some(s) => s,
                None => NaiveDate::from_ymd_opt(t.start.year() - config.window_years as i32, t.start.month(), t.start.day())
                    .unwrap_or(t.start)
                    .max(available.start),
            };
            let c = DateSpan::new(labeled_start, t.end)
                .ok_or_else(|| Error::Config(format!("corpus start {labeled_start} is after the target {t}")))?;
            (c, t)
        }
    };
    reg.create_campaign(id, mode, corpus, target, seeds, config)
}

fn print_report(out: &mut dyn Write, state: &CampaignState) -> Result<()> {
    if let Some(r) = state.current_report() {
        writeln!(
            out,
            "campaign {} iteration {}: {} candidates, {} validated, {} rejected, {} pending, {} new, {} finalized{}",
            state.campaign_id,
            r.iteration,
            r.n_candidates,
            r.n_validated,
            r.n_rejected,
            r.n_pending,
            r.n_new,
            r.n_finalized,
            if state.converged { ", converged" } else { "" }
        )
        .map_err(Error::io("<stdout>"))?;
    }
    Ok(())
}

/// Close the open round if it is fully reviewed, then start the next one
/// unless the campaign is finished.
fn advance(reg: &Registry, id: &str, log: &Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let state = reg.campaign(id)?;
    if state.open_iteration().is_some() {
        let pending = state.pending().count();
        if pending > 0 {
            return Err(Error::Conflict(format!(
                "campaign {id} has {pending} pending candidates; decide them before the next round"
            )));
        }
        reg.close_iteration(id)?;
        let state = reg.campaign(id)?;
        print_report(out, &state)?;
    }
    let state = reg.campaign(id)?;
    if state.converged || state.exhausted() {
        writeln!(out, "campaign {id} is finished").map_err(Error::io("<stdout>"))?;
        return Ok(());
    }
    let plan = reg.run_iteration(id, None)?;
    if let Some(path) = log {
        let mut buf = Vec::new();
        write_log(&mut buf, &log_lines(&plan.search, None))?;
        write_atomic(path, &buf)?;
    }
    let state = reg.campaign(id)?;
    let queued = state.pending().count();
    writeln!(
        out,
        "campaign {id} iteration {}: {queued} candidates queued for review (best precision {:.4}, recall {:.4})",
        state.open_iteration().unwrap_or_default(),
        plan.search.best.precision,
        plan.search.best.recall
    )
    .map_err(Error::io("<stdout>"))
}

fn iterate(ctx: &Ctx, a: IterateArgs, out: &mut dyn Write) -> Result<()> {
    let reg = ctx.registry()?;
    let id = ctx.campaign_id(&a.campaign);
    let mode = ctx.file.mode();
    if mode != Mode::InPeriod {
        return Err(Error::Config("iterate runs in-period campaigns; use transfer for out-period".into()));
    }
    ensure_campaign(ctx, &reg, &id, mode, None)?;
    advance(&reg, &id, &a.log, out)
}

fn decide(ctx: &Ctx, a: DecideArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let reg = ctx.registry()?;
    let decisions = match (&a.file, &a.candidate) {
        (Some(path), _) => read_decisions(path, a.expert.as_deref())?,
        (None, Some(c)) => vec![Decision {
            candidate_id: c.clone(),
            verdict: a.verdict.ok_or_else(|| Error::Config("--verdict is required".into()))?.into(),
            label: a.label.clone().unwrap_or_default(),
            note: a.note.clone(),
            expert: a.expert.clone(),
        }],
        (None, None) => unreachable!("clap requires --candidate or --file"),
    };
    let failed = reg.decide_many(&decisions)?;
    for (id, e) in &failed {
        writeln!(err, "{id}: {e}").map_err(Error::io("<stderr>"))?;
    }
    writeln!(out, "{} decisions recorded", decisions.len() - failed.len()).map_err(Error::io("<stdout>"))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Conflict(format!("{} decisions were not recorded", failed.len())))
    }
}

fn read_decisions(path: &Path, expert: Option<&str>) -> Result<Vec<Decision>> {
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| Error::parse(&origin, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(vi)) = (col("candidate_id"), col("verdict")) else {
        return Err(Error::parse(&origin, 1, "expected columns candidate_id,verdict[,label,note,expert]"));
    };
    let (li, ni, ei) = (col("label"), col("note"), col("expert"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(&origin, line, e.to_string()))?;
        let opt = |idx: Option<usize>| idx.and_then(|j| rec.get(j)).filter(|s| !s.is_empty()).map(str::to_owned);
        let verdict = Verdict::parse(rec.get(vi).unwrap_or_default())
            .ok_or_else(|| Error::parse(&origin, line, "verdict must be validated or rejected"))?;
        out.push(Decision {
            candidate_id: rec.get(ci).unwrap_or_default().to_owned(),
            verdict,
            label: opt(li).unwrap_or_default(),
            note: opt(ni),
            expert: opt(ei).or_else(|| expert.map(str::to_owned)),
        });
    }
    Ok(out)
}

fn year_span(first: i32, last: i32) -> Result<DateSpan> {
    let start = NaiveDate::from_ymd_opt(first, 1, 1).ok_or_else(|| Error::Config(format!("bad year {first}")))?;
    let end = NaiveDate::from_ymd_opt(last, 12, 31).ok_or_else(|| Error::Config(format!("bad year {last}")))?;
    DateSpan::new(start, end).ok_or_else(|| Error::Config(format!("year {last} is before {first}")))
}

fn transfer(ctx: &Ctx, a: TransferArgs, out: &mut dyn Write) -> Result<()> {
    let reg = ctx.registry()?;
    let prefix = ctx.campaign_id(&a.prefix);
    let targets: Vec<(String, DateSpan)> = match a.target_year {
        Some(first) => {
            let last = a.last_year.unwrap_or(first);
            (first..=last).map(|y| Ok((format!("{prefix}-{y}"), year_span(y, y)?))).collect::<Result<_>>()?
        }
        None => {
            let t = ctx.file.target_span()?.ok_or_else(|| {
                Error::Config("give --target-year or target_start/target_end in the config".into())
            })?;
            vec![(prefix.clone(), t)]
        }
    };
    for (id, target) in targets {
        let state = ensure_campaign(ctx, &reg, &id, Mode::OutPeriod, Some(target))?;
        if state.mode != Mode::OutPeriod {
            return Err(Error::Conflict(format!("campaign {id} is not an out-period campaign")));
        }
        advance(&reg, &id, &None, out)?;
    }
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs, err: &mut dyn Write) -> Result<()> {
    let reg = Arc::new(ctx.registry()?);
    for w in reg.warnings() {
        writeln!(err, "warning: {w}").map_err(Error::io("<stderr>"))?;
    }
    writeln!(err, "listening on http://{}", a.listen).map_err(Error::io("<stderr>"))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::io("<runtime>"))?;
    rt.block_on(crate::api::serve(reg, a.listen))
}

fn entry_record(e: &StormEntry, i: usize) -> StormRecord {
    StormRecord {
        id: format!("import-{i:04}"),
        label: e.label.clone(),
        start: e.start,
        end: e.end,
        status: e.status.unwrap_or(Status::Validated),
        iteration: e.iteration.unwrap_or(0),
        campaign_id: String::new(),
        expert_note: None,
        decided_at: None,
    }
}

fn parse_years(s: &str) -> Result<(i32, i32)> {
    let bad = || Error::Config(format!("expected FIRST-LAST years, got `{s}`"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn stats(ctx: &Ctx, a: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(Error::io("<stdout>"));
    if a.correlations {
        return correlations(ctx, &a, out);
    }
    let storms: Vec<StormRecord> = match (&a.storms, &a.campaign) {
        (Some(p), _) => read_storm_file(p)?.iter().enumerate().map(|(i, e)| entry_record(e, i)).collect(),
        (None, Some(id)) => ctx.registry()?.campaign(id)?.finalized.clone(),
        (None, None) => ctx.registry()?.storms(None, None),
    };
    let storms: Vec<StormRecord> = storms.into_iter().filter(|s| s.status == Status::Validated).collect();
    let years: Vec<i32> = storms.iter().map(|s| s.start.year()).collect();
    let (Some(lo), Some(hi)) = (years.iter().min().copied(), years.iter().max().copied()) else {
        return Err(Error::Config("no validated storms to summarize".into()));
    };
    let first = a.first_year.unwrap_or(lo);
    let last = a.last_year.unwrap_or(hi);
    let table = summarize_years(&storms, first, last);
    w(out, "year,storms,mean_duration_days,std_duration_days".into())?;
    for y in &table {
        w(out, format!("{},{},{:.2},{:.2}", y.year, y.n_storms, y.mean_duration_days, y.std_duration_days))?;
    }
    let (total, mean) = period_totals(&table);
    w(out, format!("total {total} storms over {} years, mean {mean:.2} per year", table.len()))?;
    if let Some(range) = &a.compare {
        let (f2, l2) = parse_years(range)?;
        let other = summarize_years(&storms, f2, l2);
        let (t2, m2) = period_totals(&other);
        w(out, format!("compare {f2}-{l2}: total {t2} storms over {} years, mean {m2:.2} per year", other.len()))?;
        let xs: Vec<f64> = table.iter().map(|y| y.n_storms as f64).collect();
        let ys: Vec<f64> = other.iter().map(|y| y.n_storms as f64).collect();
        let t = compare_periods(&xs, &ys)?;
        w(out, format!("welch t = {:.3}, df = {:.2}, p = {:.4}", t.t, t.df, t.p))?;
    }
    Ok(())
}

fn write_matrix(out: &mut dyn Write, title: &str, pairs: &[(SignalKind, SignalKind, stormwatch_core::Result<f64>)]) -> Result<()> {
    let cell = |a: SignalKind, b: SignalKind| -> String {
        if a == b {
            return "1.000".into();
        }
        pairs
            .iter()
            .find(|(x, y, _)| (*x == a && *y == b) || (*x == b && *y == a))
            .and_then(|(_, _, r)| r.as_ref().ok())
            .map_or_else(|| "n/a".into(), |r| format!("{r:.3}"))
    };
    let mut s = format!("{title}\nkind");
    for k in SignalKind::ALL {
        s.push(',');
        s.push_str(k.as_str());
    }
    for a in SignalKind::ALL {
        s.push('\n');
        s.push_str(a.as_str());
        for b in SignalKind::ALL {
            s.push(',');
            s.push_str(&cell(a, b));
        }
    }
    writeln!(out, "{s}").map_err(Error::io("<stdout>"))
}

/// Best settings of a campaign's latest finished round, or the defaults.
fn campaign_hyperparams(ctx: &Ctx, campaign: &Option<String>) -> Result<(HyperParams, Option<usize>, HolidayCalendar)> {
    match campaign {
        Some(id) => {
            let state = ctx.registry()?.campaign(id)?;
            let hp = state
                .reports
                .last()
                .map(|r| r.best_trial.hyperparams)
                .ok_or_else(|| Error::NotFound { what: "finished round of campaign", id: id.clone() })?;
            Ok((hp, state.config.smoothing_window, state.config.holidays.clone()))
        }
        None => Ok((HyperParams::default(), ctx.file.campaign_config()?.smoothing_window, ctx.holidays()?)),
    }
}

fn correlations(ctx: &Ctx, a: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = ctx.signals()?;
    let span = match (a.first_year, a.last_year) {
        (None, None) => bundle.span(),
        (f, l) => {
            let s = bundle.span();
            let ys = year_span(f.unwrap_or(s.start.year()), l.unwrap_or(s.end.year()))?;
            ys.intersection(&s).ok_or_else(|| Error::Config(format!("{ys} is outside the stored signals ({s})")))?
        }
    };
    let (hp, window, holidays) = campaign_hyperparams(ctx, &a.campaign)?;
    let bundle = bundle.smoothed_opt(a.smooth.or(window))?.slice(&span)?;
    write_matrix(out, "signal correlation", &bundle.correlations())?;
    let cfg = ctx.file.campaign_config()?;
    let d = run_detection(&bundle, &hp, &holidays, &cfg.search.detector, "")?;
    write_matrix(out, "anomaly correlation", &anomaly_correlations(d.flags.as_array()))
}

fn export(ctx: &Ctx, cmd: Export, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Export::Storms { campaign, out: path } => {
            let reg = ctx.registry()?;
            let entries: Vec<StormEntry> = match campaign {
                Some(id) => reg.campaign(&id)?.finalized.iter().map(StormEntry::from).collect(),
                None => {
                    let mut v = ctx.store.load_storms()?;
                    for r in reg.storms(None, None) {
                        if !v.iter().any(|e| e.start == r.start && e.end == r.end) {
                            v.push(StormEntry::from(&r));
                        }
                    }
                    v
                }
            };
            let mut buf = Vec::new();
            formats::write_storms(&mut buf, &entries)?;
            emit(&path, out, &buf)
        }
        Export::Candidates { campaign, status, out: path } => {
            let reg = ctx.registry()?;
            let state = reg.campaign(&ctx.campaign_id(&campaign))?;
            let status = status
                .map(|s| Status::parse(&s).ok_or_else(|| Error::Config(format!("unknown status `{s}`"))))
                .transpose()?;
            let rows: Vec<CandidateRow> = state
                .records
                .iter()
                .filter(|r| r.iteration > 0 && status.is_none_or(|s| r.status == s))
                .filter_map(|r| state.window(&r.id))
                .map(CandidateRow::from)
                .collect();
            let mut buf = Vec::new();
            formats::write_candidates(&mut buf, &rows)?;
            emit(&path, out, &buf)
        }
        Export::Model { kind, campaign, out: path } => {
            let (hp, window, holidays) = campaign_hyperparams(ctx, &campaign)?;
            let mut bundle = ctx.signals()?;
            if let Some(id) = &campaign {
                let span = ctx.registry()?.campaign(id)?.corpus_span;
                bundle = bundle.slice(&span)?;
            }
            let bundle = bundle.smoothed_opt(window)?;
            let model = fit(bundle.get(kind), &hp, &holidays)?;
            let mut text = ModelDocument::new(Some(kind), model).to_json()?;
            text.push('\n');
            emit(&path, out, text.as_bytes())
        }
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = WorldSpec { start: a.start, days: a.days, n_storms: a.storms, n_decoys: a.decoys, seed: a.seed, ..WorldSpec::default() };
    let slots = spec.n_storms + spec.n_decoys;
    if spec.days < 60 + 28 * slots.max(1) {
        return Err(Error::Config(format!("{slots} dips need at least {} days", 60 + 28 * slots.max(1))));
    }
    let world = storm_world(&spec);
    let dir = &a.out_dir;
    let mut buf = Vec::new();
    formats::write_signals(&mut buf, &SignalTable::from_bundle(&world.bundle))?;
    write_atomic(&dir.join("signals.csv"), &buf)?;
    let write_list = |name: &str, seeds: Vec<SeedStorm>| -> Result<()> {
        let entries: Vec<StormEntry> = seeds.iter().map(StormEntry::from).collect();
        let mut buf = Vec::new();
        formats::write_storms(&mut buf, &entries)?;
        write_atomic(&dir.join(name), &buf)
    };
    write_list("truth.csv", world.storms.iter().map(|d| d.to_seed()).collect())?;
    write_list("seeds.csv", world.storms.iter().step_by(2).map(|d| d.to_seed()).collect())?;
    write_list("decoys.csv", world.decoys.iter().map(|d| d.to_seed()).collect())?;
    writeln!(
        out,
        "wrote {} days with {} storms and {} decoys to {} (seeds.csv holds every other storm)",
        spec.days,
        world.storms.len(),
        world.decoys.len(),
        dir.display()
    )
    .map_err(Error::io("<stdout>"))
}

