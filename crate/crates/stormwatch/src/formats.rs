//! Delimited text formats.
//!
//! | file | header |
//! |---|---|
//! | embeddings | `doc_id,date,outlet,v0,...,v{d-1}` |
//! | signals | `date,topics,llm,entities,plot` (empty cell = missing) |
//! | storm list | `label,start,end[,status,iteration]` |
//! | candidates | `candidate_id,start,end,duration_days,votes_topics,votes_entities,votes_plot,votes_llm` |
//! | holidays | `date,name` |
//! | articles | `doc_id,date,outlet,headline,snippet` (input may carry `body` instead of `snippet`) |
//!
//! Dates are `YYYY-MM-DD`. Floats are written in shortest round-trip form, so
//! reading a written file gives back the same values bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use stormwatch_core::campaign::{Status, StormRecord};
use stormwatch_core::detect::CandidateWindow;
use stormwatch_core::forecast::HolidayCalendar;
use stormwatch_core::signal::DocEmbedding;
use stormwatch_core::span::add_days;
use stormwatch_core::tune::SeedStorm;
use stormwatch_core::{DateSpan, DispersionSeries, NaiveDate, SignalBundle, SignalKind};

use crate::{Error, Result};

/// Signal column order in files.
pub const SIGNAL_COLUMNS: [SignalKind; 4] =
    [SignalKind::Topics, SignalKind::Llm, SignalKind::Entities, SignalKind::Plot];

pub const DEFAULT_SNIPPET_CHARS: usize = 400;

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(true).from_writer(w)
}

fn csv_err(origin: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(origin, line, e.to_string())
}

fn write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: "<output>".into(), source },
        other => Error::Config(format!("csv write failed: {other:?}")),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn require(headers: &csv::StringRecord, name: &str, origin: &str) -> Result<usize> {
    header_index(headers, name).ok_or_else(|| Error::parse(origin, 1, format!("missing column `{name}`")))
}

fn field<'r>(rec: &'r csv::StringRecord, i: usize, origin: &str, name: &str) -> Result<&'r str> {
    rec.get(i).ok_or_else(|| Error::parse(origin, line_of(rec), format!("missing `{name}` cell")))
}

fn date_field(rec: &csv::StringRecord, i: usize, origin: &str, name: &str) -> Result<NaiveDate> {
    let raw = field(rec, i, origin, name)?;
    parse_date(raw).ok_or_else(|| Error::parse(origin, line_of(rec), format!("bad {name} date `{raw}`")))
}

fn float_field(raw: &str, rec: &csv::StringRecord, origin: &str, name: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(origin, line_of(rec), format!("bad {name} value `{raw}`"))),
    }
}

/// Daily dispersion values on a contiguous axis, possibly with missing kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTable {
    pub start: NaiveDate,
    /// One row per day, indexed by [`SignalKind::index`].
    pub rows: Vec<[Option<f64>; 4]>,
}

impl SignalTable {
    pub fn span(&self) -> DateSpan {
        DateSpan::from_len(self.start, self.rows.len())
    }

    pub fn from_bundle(bundle: &SignalBundle) -> Self {
        let rows = (0..bundle.len())
            .map(|i| {
                let mut row = [None; 4];
                for s in bundle.iter() {
                    row[s.kind.index()] = s.values()[i];
                }
                row
            })
            .collect();
        Self { start: bundle.start(), rows }
    }

    pub fn to_bundle(&self) -> Result<SignalBundle> {
        let series = SignalKind::ALL
            .into_iter()
            .map(|k| DispersionSeries::new(k, self.start, self.rows.iter().map(|r| r[k.index()]).collect()))
            .collect::<stormwatch_core::Result<Vec<_>>>()?;
        Ok(SignalBundle::new(series)?)
    }

    /// Kinds with at least one present value.
    pub fn kinds_present(&self) -> Vec<SignalKind> {
        SignalKind::ALL.into_iter().filter(|k| self.rows.iter().any(|r| r[k.index()].is_some())).collect()
    }

    /// Overwrite one kind with `series`, widening the axis as needed.
    pub fn merge(&mut self, series: &DispersionSeries) {
        let span = self.span();
        let start = span.start.min(series.start());
        let end = span.end.max(series.end());
        let n = DateSpan { start, end }.len_days();
        let lead = (span.start - start).num_days() as usize;
        let mut rows = vec![[None; 4]; n];
        rows[lead..lead + self.rows.len()].copy_from_slice(&self.rows);
        let k = series.kind.index();
        let off = (series.start() - start).num_days() as usize;
        for (i, v) in series.values().iter().enumerate() {
            rows[off + i][k] = *v;
        }
        self.start = start;
        self.rows = rows;
    }
}

pub fn read_signals<R: Read>(r: R, origin: &str) -> Result<SignalTable> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let date_col = require(&headers, "date", origin)?;
    let cols: Vec<(SignalKind, usize)> = SIGNAL_COLUMNS
        .into_iter()
        .map(|k| require(&headers, k.as_str(), origin).map(|i| (k, i)))
        .collect::<Result<_>>()?;
    let mut by_date: BTreeMap<NaiveDate, [Option<f64>; 4]> = BTreeMap::new();
    let mut last: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let date = date_field(&rec, date_col, origin, "date")?;
        if last.is_some_and(|l| date <= l) {
            return Err(Error::parse(origin, line_of(&rec), format!("date {date} is not after the previous row")));
        }
        last = Some(date);
        let mut row = [None; 4];
        for &(k, i) in &cols {
            let raw = rec.get(i).unwrap_or("");
            if !raw.trim().is_empty() {
                row[k.index()] = Some(float_field(raw, &rec, origin, k.as_str())?);
            }
        }
        by_date.insert(date, row);
    }
    let (Some((&first, _)), Some((&end, _))) = (by_date.first_key_value(), by_date.last_key_value()) else {
        return Err(Error::parse(origin, 1, "no data rows"));
    };
    let n = DateSpan { start: first, end }.len_days();
    let rows = (0..n).map(|i| by_date.get(&add_days(first, i as i64)).copied().unwrap_or([None; 4])).collect();
    Ok(SignalTable { start: first, rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_signals<W: Write>(w: W, table: &SignalTable) -> Result<()> {
    let mut wtr = writer(w);
    let mut header = vec!["date"];
    header.extend(SIGNAL_COLUMNS.map(|k| k.as_str()));
    wtr.write_record(&header).map_err(write_err)?;
    for (i, row) in table.rows.iter().enumerate() {
        let mut rec = vec![add_days(table.start, i as i64).to_string()];
        rec.extend(SIGNAL_COLUMNS.map(|k| fmt_opt(row[k.index()])));
        wtr.write_record(&rec).map_err(write_err)?;
    }
    wtr.flush().map_err(Error::io("<output>"))
}

pub fn read_embeddings<R: Read>(r: R, kind: SignalKind, origin: &str) -> Result<Vec<DocEmbedding>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let expect = ["doc_id", "date", "outlet"];
    for (i, name) in expect.iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(Error::parse(origin, 1, format!("column {} must be `{name}`", i + 1)));
        }
    }
    let dim = headers.len() - 3;
    if dim == 0 {
        return Err(Error::parse(origin, 1, "no vector columns"));
    }
    for j in 0..dim {
        if headers[3 + j].trim() != format!("v{j}") {
            return Err(Error::parse(origin, 1, format!("column {} must be `v{j}`", 4 + j)));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        if rec.len() != headers.len() {
            return Err(Error::parse(
                origin,
                line_of(&rec),
                format!("expected {} cells, found {}", headers.len(), rec.len()),
            ));
        }
        let doc_id = rec[0].to_owned();
        if !seen.insert(doc_id.clone()) {
            return Err(Error::parse(origin, line_of(&rec), format!("duplicate doc_id {doc_id}")));
        }
        let date = date_field(&rec, 1, origin, "date")?;
        let vector = (0..dim).map(|j| float_field(&rec[3 + j], &rec, origin, "vector")).collect::<Result<_>>()?;
        out.push(DocEmbedding { doc_id, date, outlet: rec[2].to_owned(), kind, vector });
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(w: W, docs: &[DocEmbedding]) -> Result<()> {
    let mut wtr = writer(w);
    let dim = docs.first().map_or(0, |d| d.vector.len());
    let mut header: Vec<String> = ["doc_id", "date", "outlet"].map(String::from).to_vec();
    header.extend((0..dim).map(|j| format!("v{j}")));
    wtr.write_record(&header).map_err(write_err)?;
    for d in docs {
        let mut rec = vec![d.doc_id.clone(), d.date.to_string(), d.outlet.clone()];
        rec.extend(d.vector.iter().map(f64::to_string));
        wtr.write_record(&rec).map_err(write_err)?;
    }
    wtr.flush().map_err(Error::io("<output>"))
}

/// One row of a storm list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StormEntry {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub status: Option<Status>,
    pub iteration: Option<u32>,
}

impl StormEntry {
    pub fn span(&self) -> DateSpan {
        DateSpan { start: self.start, end: self.end }
    }

    pub fn to_seed(&self) -> SeedStorm {
        SeedStorm { label: self.label.clone(), start: self.start, end: self.end }
    }
}

impl From<&StormRecord> for StormEntry {
    fn from(r: &StormRecord) -> Self {
        Self { label: r.label.clone(), start: r.start, end: r.end, status: Some(r.status), iteration: Some(r.iteration) }
    }
}

impl From<&SeedStorm> for StormEntry {
    fn from(s: &SeedStorm) -> Self {
        Self { label: s.label.clone(), start: s.start, end: s.end, status: None, iteration: None }
    }
}

pub fn read_storms<R: Read>(r: R, origin: &str) -> Result<Vec<StormEntry>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let label = require(&headers, "label", origin)?;
    let start = require(&headers, "start", origin)?;
    let end = require(&headers, "end", origin)?;
    let status = header_index(&headers, "status");
    let iteration = header_index(&headers, "iteration");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let entry = StormEntry {
            label: field(&rec, label, origin, "label")?.to_owned(),
            start: date_field(&rec, start, origin, "start")?,
            end: date_field(&rec, end, origin, "end")?,
            status: match status.and_then(|i| rec.get(i)).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(
                    Status::parse(s)
                        .ok_or_else(|| Error::parse(origin, line_of(&rec), format!("bad status `{s}`")))?,
                ),
            },
            iteration: match iteration.and_then(|i| rec.get(i)).map(str::trim) {
                None | Some("") => None,
                Some(s) => Some(
                    s.parse()
                        .map_err(|_| Error::parse(origin, line_of(&rec), format!("bad iteration `{s}`")))?,
                ),
            },
        };
        if entry.end < entry.start {
            return Err(Error::parse(origin, line_of(&rec), "end is before start"));
        }
        out.push(entry);
    }
    Ok(out)
}

/// Writes the optional columns only when some entry uses them.
pub fn write_storms<W: Write>(w: W, storms: &[StormEntry]) -> Result<()> {
    let mut wtr = writer(w);
    let long = storms.iter().any(|s| s.status.is_some() || s.iteration.is_some());
    if long {
        wtr.write_record(["label", "start", "end", "status", "iteration"]).map_err(write_err)?;
    } else {
        wtr.write_record(["label", "start", "end"]).map_err(write_err)?;
    }
    for s in storms {
        let mut rec = vec![s.label.clone(), s.start.to_string(), s.end.to_string()];
        if long {
            rec.push(s.status.map(|st| st.as_str().to_owned()).unwrap_or_default());
            rec.push(s.iteration.map(|i| i.to_string()).unwrap_or_default());
        }
        wtr.write_record(&rec).map_err(write_err)?;
    }
    wtr.flush().map_err(Error::io("<output>"))
}

/// One row of a candidate export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateRow {
    pub candidate_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub duration_days: usize,
    /// Flagged days per kind, in [`SignalKind::ALL`] order.
    pub votes: [usize; 4],
}

impl From<&CandidateWindow> for CandidateRow {
    fn from(c: &CandidateWindow) -> Self {
        Self {
            candidate_id: c.id.clone(),
            start: c.start,
            end: c.end,
            duration_days: c.duration_days(),
            votes: c.vote_counts(),
        }
    }
}

const CANDIDATE_VOTE_COLUMNS: [SignalKind; 4] =
    [SignalKind::Topics, SignalKind::Entities, SignalKind::Plot, SignalKind::Llm];

pub fn write_candidates<W: Write>(w: W, rows: &[CandidateRow]) -> Result<()> {
    let mut wtr = writer(w);
    let mut header = vec!["candidate_id".to_owned(), "start".into(), "end".into(), "duration_days".into()];
    header.extend(CANDIDATE_VOTE_COLUMNS.map(|k| format!("votes_{}", k.as_str())));
    wtr.write_record(&header).map_err(write_err)?;
    for r in rows {
        let mut rec = vec![r.candidate_id.clone(), r.start.to_string(), r.end.to_string(), r.duration_days.to_string()];
        rec.extend(CANDIDATE_VOTE_COLUMNS.map(|k| r.votes[k.index()].to_string()));
        wtr.write_record(&rec).map_err(write_err)?;
    }
    wtr.flush().map_err(Error::io("<output>"))
}

pub fn read_candidates<R: Read>(r: R, origin: &str) -> Result<Vec<CandidateRow>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let id = require(&headers, "candidate_id", origin)?;
    let start = require(&headers, "start", origin)?;
    let end = require(&headers, "end", origin)?;
    let dur = require(&headers, "duration_days", origin)?;
    let vote_cols: Vec<(SignalKind, usize)> = CANDIDATE_VOTE_COLUMNS
        .into_iter()
        .map(|k| require(&headers, &format!("votes_{}", k.as_str()), origin).map(|i| (k, i)))
        .collect::<Result<_>>()?;
    let count = |rec: &csv::StringRecord, i: usize, name: &str| -> Result<usize> {
        let raw = field(rec, i, origin, name)?;
        raw.trim().parse().map_err(|_| Error::parse(origin, line_of(rec), format!("bad {name} `{raw}`")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let mut votes = [0; 4];
        for &(k, i) in &vote_cols {
            votes[k.index()] = count(&rec, i, "votes")?;
        }
        out.push(CandidateRow {
            candidate_id: field(&rec, id, origin, "candidate_id")?.to_owned(),
            start: date_field(&rec, start, origin, "start")?,
            end: date_field(&rec, end, origin, "end")?,
            duration_days: count(&rec, dur, "duration_days")?,
            votes,
        });
    }
    Ok(out)
}

pub fn read_holidays<R: Read>(r: R, origin: &str) -> Result<HolidayCalendar> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let date = require(&headers, "date", origin)?;
    let name = require(&headers, "name", origin)?;
    let mut cal = HolidayCalendar::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let d = date_field(&rec, date, origin, "date")?;
        let n = field(&rec, name, origin, "name")?.trim();
        if n.is_empty() {
            return Err(Error::parse(origin, line_of(&rec), "empty holiday name"));
        }
        cal.add(d, n).map_err(|e| Error::parse(origin, line_of(&rec), e.to_string()))?;
    }
    Ok(cal)
}

/// Article metadata shown to the reviewer. Bodies are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleMeta {
    pub doc_id: String,
    pub date: NaiveDate,
    pub outlet: String,
    pub headline: String,
    pub snippet: String,
}

/// Reads article metadata; a `body` column is cut to `snippet_chars`.
pub fn read_articles<R: Read>(r: R, origin: &str, snippet_chars: usize) -> Result<Vec<ArticleMeta>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    let id = require(&headers, "doc_id", origin)?;
    let date = require(&headers, "date", origin)?;
    let outlet = require(&headers, "outlet", origin)?;
    let headline = require(&headers, "headline", origin)?;
    let text = header_index(&headers, "snippet")
        .or_else(|| header_index(&headers, "body"))
        .ok_or_else(|| Error::parse(origin, 1, "missing column `snippet` or `body`"))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let doc_id = field(&rec, id, origin, "doc_id")?.to_owned();
        if !seen.insert(doc_id.clone()) {
            return Err(Error::parse(origin, line_of(&rec), format!("duplicate doc_id {doc_id}")));
        }
        out.push(ArticleMeta {
            doc_id,
            date: date_field(&rec, date, origin, "date")?,
            outlet: field(&rec, outlet, origin, "outlet")?.to_owned(),
            headline: field(&rec, headline, origin, "headline")?.to_owned(),
            snippet: field(&rec, text, origin, "snippet")?.chars().take(snippet_chars).collect(),
        });
    }
    Ok(out)
}

pub fn write_articles<W: Write>(w: W, articles: &[ArticleMeta]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(["doc_id", "date", "outlet", "headline", "snippet"]).map_err(write_err)?;
    for a in articles {
        wtr.write_record([&a.doc_id, &a.date.to_string(), &a.outlet, &a.headline, &a.snippet]).map_err(write_err)?;
    }
    wtr.flush().map_err(Error::io("<output>"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn signals_fill_gaps_and_missing_cells() {
        let text = "date,topics,llm,entities,plot\n2001-01-01,1.5,,2,3\n2001-01-03,1,1,1,1\n";
        let t = read_signals(text.as_bytes(), "t").unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0][SignalKind::Llm.index()], None);
        assert_eq!(t.rows[0][SignalKind::Topics.index()], Some(1.5));
        assert_eq!(t.rows[1], [None; 4]);
        let mut out = Vec::new();
        write_signals(&mut out, &t).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "date,topics,llm,entities,plot\n2001-01-01,1.5,,2,3\n2001-01-02,,,,\n2001-01-03,1,1,1,1\n"
        );
    }

    #[test]
    fn bad_date_reports_line() {
        let text = "date,topics,llm,entities,plot\n2001-01-01,1,1,1,1\n2001-13-01,1,1,1,1\n";
        match read_signals(text.as_bytes(), "s.csv").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn embeddings_header_checked() {
        let ok = "doc_id,date,outlet,v0,v1\na,2001-01-01,x,1,2\nb,2001-01-01,y,3,4\n";
        let docs = read_embeddings(ok.as_bytes(), SignalKind::Plot, "e").unwrap();
        assert_eq!(docs[1].vector, vec![3.0, 4.0]);
        let bad = "doc_id,date,outlet,v1\n";
        assert!(read_embeddings(bad.as_bytes(), SignalKind::Plot, "e").is_err());
        let dup = "doc_id,date,outlet,v0\na,2001-01-01,x,1\na,2001-01-02,x,1\n";
        assert!(matches!(read_embeddings(dup.as_bytes(), SignalKind::Plot, "e"), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn storm_list_short_and_long() {
        let short = "label,start,end\n\"Storm, with comma\",2005-08-29,2005-09-02\n";
        let s = read_storms(short.as_bytes(), "s").unwrap();
        assert_eq!(s[0].label, "Storm, with comma");
        let mut out = Vec::new();
        write_storms(&mut out, &s).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), short);

        let long = "label,start,end,status,iteration\nx,2005-08-29,2005-09-02,validated,2\n,2005-10-01,2005-10-02,pending,3\n";
        let s = read_storms(long.as_bytes(), "s").unwrap();
        assert_eq!(s[1].status, Some(Status::Pending));
        let mut out = Vec::new();
        write_storms(&mut out, &s).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), long);
    }

    #[test]
    fn merging_widens_axis() {
        let mut t = SignalTable { start: d(2001, 1, 3), rows: vec![[Some(1.0); 4]; 2] };
        let s = DispersionSeries::new(SignalKind::Llm, d(2001, 1, 1), vec![Some(5.0), None, Some(6.0)]).unwrap();
        t.merge(&s);
        assert_eq!(t.start, d(2001, 1, 1));
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0][SignalKind::Llm.index()], Some(5.0));
        assert_eq!(t.rows[2][SignalKind::Llm.index()], Some(6.0));
        assert_eq!(t.rows[2][SignalKind::Topics.index()], Some(1.0));
        assert_eq!(t.rows[3][SignalKind::Llm.index()], Some(1.0));
    }

    #[test]
    fn articles_truncate_body() {
        let text = "doc_id,date,outlet,headline,body\n1,2005-08-29,Times,Levees fail,\"ééééé\"\n";
        let a = read_articles(text.as_bytes(), "a", 3).unwrap();
        assert_eq!(a[0].snippet, "ééé");
    }
}
