//! File-backed data directory.
//!
//! ```text
//! <root>/signals.csv                 dispersion store (signals format)
//! <root>/articles.csv                article metadata
//! <root>/storms.csv                  imported storm list
//! <root>/holidays.csv                optional holiday calendar
//! <root>/campaigns/<id>/journal.jsonl  one CampaignEvent per line, append only
//! <root>/campaigns/<id>/snapshot.json  state plus the journal length it covers
//! ```
//!
//! Events are synced to the journal before a write is acknowledged; the
//! snapshot is a cache refreshed afterwards, so losing it costs replay time
//! and nothing else.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stormwatch_core::campaign::{CampaignEvent, CampaignState};
use stormwatch_core::forecast::HolidayCalendar;

use crate::formats::{self, ArticleMeta, SignalTable, StormEntry};
use crate::{Error, Result};

pub const DATA_DIR_ENV: &str = "STORMWATCH_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "stormwatch-data";
pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    schema_version: u32,
    journal_len: usize,
    state: CampaignState,
}

/// Where a journal stopped being readable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JournalDamage {
    /// 1-based line of the first unusable record.
    pub line: u64,
    /// Byte offset at which the valid prefix ends.
    pub offset: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restored {
    pub state: CampaignState,
    /// Valid journal records, including the creation event.
    pub journal_len: usize,
    pub damage: Option<JournalDamage>,
}

/// Write `bytes` to `path` through a synced temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(Error::io(&tmp))?;
        f.write_all(bytes).map_err(Error::io(&tmp))?;
        f.sync_all().map_err(Error::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(Error::io(path))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("campaigns")).map_err(Error::io(&root))?;
        Ok(Self { root })
    }

    /// `explicit`, else `$STORMWATCH_DATA_DIR`, else `./stormwatch-data`.
    pub fn resolve_root(explicit: Option<PathBuf>) -> PathBuf {
        explicit
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn signals_path(&self) -> PathBuf {
        self.root.join("signals.csv")
    }

    pub fn articles_path(&self) -> PathBuf {
        self.root.join("articles.csv")
    }

    pub fn storms_path(&self) -> PathBuf {
        self.root.join("storms.csv")
    }

    pub fn holidays_path(&self) -> PathBuf {
        self.root.join("holidays.csv")
    }

    fn campaign_dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(Error::Config(format!(
                "campaign id `{id}` must be 1-64 characters of [A-Za-z0-9_-]"
            )));
        }
        Ok(self.root.join("campaigns").join(id))
    }

    pub fn journal_path(&self, id: &str) -> Result<PathBuf> {
        Ok(self.campaign_dir(id)?.join("journal.jsonl"))
    }

    pub fn snapshot_path(&self, id: &str) -> Result<PathBuf> {
        Ok(self.campaign_dir(id)?.join("snapshot.json"))
    }

    pub fn load_signals(&self) -> Result<Option<SignalTable>> {
        let path = self.signals_path();
        if !path.exists() {
            return Ok(None);
        }
        let f = File::open(&path).map_err(Error::io(&path))?;
        formats::read_signals(BufReader::new(f), &path.display().to_string()).map(Some)
    }

    pub fn save_signals(&self, table: &SignalTable) -> Result<()> {
        let mut buf = Vec::new();
        formats::write_signals(&mut buf, table)?;
        write_atomic(&self.signals_path(), &buf)
    }

    pub fn load_articles(&self) -> Result<Vec<ArticleMeta>> {
        let path = self.articles_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&path).map_err(Error::io(&path))?;
        formats::read_articles(BufReader::new(f), &path.display().to_string(), usize::MAX)
    }

    pub fn save_articles(&self, articles: &[ArticleMeta]) -> Result<()> {
        let mut buf = Vec::new();
        formats::write_articles(&mut buf, articles)?;
        write_atomic(&self.articles_path(), &buf)
    }

    pub fn load_storms(&self) -> Result<Vec<StormEntry>> {
        let path = self.storms_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&path).map_err(Error::io(&path))?;
        formats::read_storms(BufReader::new(f), &path.display().to_string())
    }

    pub fn save_storms(&self, storms: &[StormEntry]) -> Result<()> {
        let mut buf = Vec::new();
        formats::write_storms(&mut buf, storms)?;
        write_atomic(&self.storms_path(), &buf)
    }

    pub fn load_holidays(&self) -> Result<HolidayCalendar> {
        let path = self.holidays_path();
        if !path.exists() {
            return Ok(HolidayCalendar::default());
        }
        let f = File::open(&path).map_err(Error::io(&path))?;
        formats::read_holidays(BufReader::new(f), &path.display().to_string())
    }

    /// Ids of campaigns that have a journal, sorted.
    pub fn campaign_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("campaigns");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(Error::io(&dir))? {
            let entry = entry.map_err(Error::io(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().join("journal.jsonl").exists() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn exists(&self, id: &str) -> Result<bool> {
        Ok(self.journal_path(id)?.exists())
    }

    /// Append events and sync them to disk.
    pub fn append(&self, id: &str, events: &[CampaignEvent]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.journal_path(id)?;
        let dir = path.parent().expect("journal has a parent");
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(Error::io(&path))?;
        f.write_all(&buf).map_err(Error::io(&path))?;
        f.sync_data().map_err(Error::io(&path))
    }

    pub fn write_snapshot(&self, state: &CampaignState, journal_len: usize) -> Result<()> {
        let snap = Snapshot { schema_version: SNAPSHOT_SCHEMA_VERSION, journal_len, state: state.clone() };
        let bytes = serde_json::to_vec(&snap)?;
        write_atomic(&self.snapshot_path(&state.campaign_id)?, &bytes)
    }

    /// Cut a damaged journal back to its valid prefix.
    pub fn truncate_journal(&self, id: &str, offset: u64) -> Result<()> {
        let path = self.journal_path(id)?;
        let f = OpenOptions::new().write(true).open(&path).map_err(Error::io(&path))?;
        f.set_len(offset).map_err(Error::io(&path))?;
        f.sync_all().map_err(Error::io(&path))
    }

    /// Parse the journal's valid prefix.
    pub fn read_journal(&self, id: &str) -> Result<(Vec<CampaignEvent>, Option<JournalDamage>)> {
        let path = self.journal_path(id)?;
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        let mut events = Vec::new();
        let mut offset = 0usize;
        let mut line = 1u64;
        while offset < bytes.len() {
            let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') else {
                let damage = JournalDamage {
                    line,
                    offset: offset as u64,
                    reason: format!("incomplete record of {} bytes at end of journal", bytes.len() - offset),
                };
                return Ok((events, Some(damage)));
            };
            let raw = &bytes[offset..offset + nl];
            match serde_json::from_slice::<CampaignEvent>(raw) {
                Ok(e) => events.push(e),
                Err(err) => {
                    let damage = JournalDamage { line, offset: offset as u64, reason: err.to_string() };
                    return Ok((events, Some(damage)));
                }
            }
            offset += nl + 1;
            line += 1;
        }
        Ok((events, None))
    }

    fn line_offset(&self, id: &str, line: usize) -> Result<u64> {
        let path = self.journal_path(id)?;
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        let mut seen = 0;
        for (i, b) in bytes.iter().enumerate() {
            if *b == b'\n' {
                seen += 1;
                if seen == line {
                    return Ok(i as u64 + 1);
                }
            }
        }
        Ok(bytes.len() as u64)
    }

    /// Load the snapshot, if usable, and replay the journal records after it.
    /// Replay stops at the first unreadable or inapplicable record.
    pub fn restore(&self, id: &str) -> Result<Restored> {
        let (events, mut damage) = self.read_journal(id)?;
        let snapshot: Option<Snapshot> = self
            .snapshot_path(id)
            .ok()
            .and_then(|p| fs::read(p).ok())
            .and_then(|b| serde_json::from_slice(&b).ok())
            .filter(|s: &Snapshot| s.schema_version == SNAPSHOT_SCHEMA_VERSION && s.journal_len <= events.len());
        let (mut state, skip) = match snapshot {
            Some(s) => (s.state, s.journal_len),
            None => {
                let first = events.first().ok_or_else(|| {
                    Error::Config(format!(
                        "campaign {id}: journal has no readable records{}",
                        damage.as_ref().map(|d| format!(" ({})", d.reason)).unwrap_or_default()
                    ))
                })?;
                (CampaignState::replay([first])?, 1)
            }
        };
        let mut applied = skip;
        for e in &events[skip..] {
            if let Err(err) = state.apply(e) {
                damage = Some(JournalDamage {
                    line: applied as u64 + 1,
                    offset: self.line_offset(id, applied)?,
                    reason: format!("record does not apply: {err}"),
                });
                break;
            }
            applied += 1;
        }
        Ok(Restored { state, journal_len: applied, damage })
    }

    pub fn restore_all(&self) -> Result<Vec<Restored>> {
        self.campaign_ids()?.iter().map(|id| self.restore(id)).collect()
    }
}
