//! JSON HTTP API for the review interface.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/campaigns` | campaign summaries |
//! | GET | `/campaigns/{id}` | one summary with its round reports |
//! | GET | `/campaigns/{id}/candidates?status=` | queue, optionally filtered by status |
//! | POST | `/campaigns/{id}/iterations` | close the decided round and start the next search |
//! | GET | `/candidates/{id}?context=` | window, votes and signal bands (default 14 days context) |
//! | GET | `/candidates/{id}/articles?date=` | articles on a date, or over the window |
//! | POST | `/candidates/{id}/decision` | `{verdict, label, note, expert}` |
//! | GET | `/runs/{id}` | search progress |
//! | GET | `/storms?from=&to=` | validated storms |
//! | GET | `/signals?kind=&from=&to=&smooth=` | dispersion series |
//!
//! Failures carry `{code, message, detail}` with status 404 for unknown ids,
//! 409 for state conflicts and 422 for invalid input.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use stormwatch_core::campaign::{CampaignState, Decision, IterationReport, Mode, Status, Verdict};
use stormwatch_core::signal::rolling_mean;
use stormwatch_core::{DateSpan, NaiveDate, SignalKind};

use crate::formats::parse_date;
use crate::registry::{Registry, DEFAULT_CONTEXT_DAYS};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), detail: None }
    }

    pub fn invalid_field(field: &str, message: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message);
        e.detail = Some(json!({ "field": field }));
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use stormwatch_core::Error as C;
        let message = e.to_string();
        let (status, code, detail) = match &e {
            Error::NotFound { what, id } => {
                (StatusCode::NOT_FOUND, "not_found", Some(json!({ "kind": what, "id": id })))
            }
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict", None),
            Error::Core(C::UnknownCandidate(id)) => {
                (StatusCode::NOT_FOUND, "not_found", Some(json!({ "kind": "candidate", "id": id })))
            }
            Error::Core(C::AlreadyDecided(id)) => {
                (StatusCode::CONFLICT, "already_decided", Some(json!({ "candidate_id": id })))
            }
            Error::Core(C::IterationOpen { iteration, pending }) => (
                StatusCode::CONFLICT,
                "iteration_open",
                Some(json!({ "iteration": iteration, "pending": pending })),
            ),
            Error::Core(C::AlreadyConverged) => (StatusCode::CONFLICT, "converged", None),
            Error::Core(C::NoOpenIteration) => (StatusCode::CONFLICT, "no_open_iteration", None),
            Error::Core(C::AllTrialsFailed(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "search_failed", None),
            Error::Core(_) | Error::Parse { .. } | Error::Config(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid", None)
            }
            Error::Io { .. } | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        Self { status, code, message, detail }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/campaigns", get(list_campaigns))
        .route("/campaigns/{id}", get(get_campaign))
        .route("/campaigns/{id}/candidates", get(list_candidates))
        .route("/campaigns/{id}/iterations", post(trigger_iteration))
        .route("/candidates/{id}", get(get_candidate))
        .route("/candidates/{id}/articles", get(get_articles))
        .route("/candidates/{id}/decision", post(post_decision))
        .route("/runs/{id}", get(get_run))
        .route("/storms", get(get_storms))
        .route("/signals", get(get_signals))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(registry)
}

pub async fn serve(registry: Arc<Registry>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(Error::io(addr.to_string()))?;
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(Error::io(addr.to_string()))
}

#[derive(Debug, Serialize)]
struct CampaignSummary {
    campaign_id: String,
    mode: Mode,
    corpus_span: DateSpan,
    target_span: DateSpan,
    converged: bool,
    exhausted: bool,
    iterations: u32,
    open_iteration: Option<u32>,
    pending: usize,
    finalized: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    reports: Option<Vec<IterationReport>>,
}

fn summary(c: &CampaignState, with_reports: bool) -> CampaignSummary {
    CampaignSummary {
        campaign_id: c.campaign_id.clone(),
        mode: c.mode,
        corpus_span: c.corpus_span,
        target_span: c.target_span,
        converged: c.converged,
        exhausted: c.exhausted(),
        iterations: c.iterations_done(),
        open_iteration: c.open_iteration(),
        pending: c.pending().count(),
        finalized: c.finalized.len(),
        reports: with_reports.then(|| c.reports.clone()),
    }
}

async fn list_campaigns(State(reg): State<Arc<Registry>>) -> Json<Vec<CampaignSummary>> {
    Json(reg.campaigns().iter().map(|c| summary(c, false)).collect())
}

async fn get_campaign(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Json<CampaignSummary>> {
    let c = reg.campaign(&id)?;
    Ok(Json(summary(&c, true)))
}

fn date_param(q: &HashMap<String, String>, name: &str) -> ApiResult<Option<NaiveDate>> {
    match q.get(name).map(String::as_str) {
        None | Some("") => Ok(None),
        Some(raw) => parse_date(raw)
            .map(Some)
            .ok_or_else(|| ApiError::invalid_field(name, format!("`{raw}` is not a YYYY-MM-DD date"))),
    }
}

#[derive(Debug, Serialize)]
struct QueueItem {
    id: String,
    start: NaiveDate,
    end: NaiveDate,
    duration_days: usize,
    status: Status,
    label: String,
    iteration: u32,
    vote_counts: HashMap<SignalKind, usize>,
    peak_deficit: f64,
}

async fn list_candidates(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<QueueItem>>> {
    let status = match q.get("status").map(String::as_str) {
        None | Some("") => None,
        Some(s) => Some(Status::parse(s).ok_or_else(|| {
            ApiError::invalid_field("status", format!("`{s}` is not one of pending, validated, rejected"))
        })?),
    };
    let c = reg.campaign(&id)?;
    let mut items: Vec<QueueItem> = c
        .records
        .iter()
        .zip(&c.windows)
        .filter(|(r, _)| status.is_none_or(|s| r.status == s))
        .map(|(r, w)| {
            let counts = w.vote_counts();
            QueueItem {
                id: r.id.clone(),
                start: r.start,
                end: r.end,
                duration_days: r.duration_days(),
                status: r.status,
                label: r.label.clone(),
                iteration: r.iteration,
                vote_counts: SignalKind::ALL.into_iter().map(|k| (k, counts[k.index()])).collect(),
                peak_deficit: w.peak_deficit,
            }
        })
        .collect();
    items.sort_by(|a, b| a.start.cmp(&b.start).then(a.id.cmp(&b.id)));
    Ok(Json(items))
}

async fn get_candidate(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let context = match q.get("context") {
        None => DEFAULT_CONTEXT_DAYS,
        Some(raw) => raw
            .parse::<i64>()
            .ok()
            .filter(|v| (0..=365).contains(v))
            .ok_or_else(|| ApiError::invalid_field("context", "context must be 0 to 365 days"))?,
    };
    reg.candidate_owner(&id)?;
    let detail = tokio::task::spawn_blocking(move || reg.candidate_detail(&id, context))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(detail).into_response())
}

async fn get_articles(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let c = reg.candidate_owner(&id)?;
    let record = c.record(&id).expect("owner has the record");
    let span = match date_param(&q, "date")? {
        Some(d) => DateSpan { start: d, end: d },
        None => record.span(),
    };
    Ok(Json(json!({ "candidate_id": id, "span": span, "articles": reg.articles(span) })))
}

fn parse_decision(candidate_id: &str, body: &Value) -> ApiResult<Decision> {
    let obj = body.as_object().ok_or_else(|| ApiError::invalid_field("body", "expected a JSON object"))?;
    let verdict = match obj.get("verdict").and_then(Value::as_str) {
        Some(v) => Verdict::parse(v)
            .ok_or_else(|| ApiError::invalid_field("verdict", format!("`{v}` is not validated or rejected")))?,
        None => return Err(ApiError::invalid_field("verdict", "verdict is required")),
    };
    let label = match obj.get("label") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ApiError::invalid_field("label", "label must be a string")),
    };
    if verdict == Verdict::Validated && label.trim().is_empty() {
        return Err(ApiError::invalid_field("label", "a validated storm needs a label"));
    }
    let note = match obj.get("note") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ApiError::invalid_field("note", "note must be a string")),
    };
    let expert = match obj.get("expert") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ApiError::invalid_field("expert", "expert must be a string")),
    };
    Ok(Decision { candidate_id: candidate_id.to_owned(), verdict, label, note, expert })
}

async fn post_decision(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body.map_err(|e| {
        let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", "request body is not valid JSON");
        err.detail = Some(json!({ "field": "body", "reason": e.body_text() }));
        err
    })?;
    let decision = parse_decision(&id, &body)?;
    // the journal append is synced inside decide, before we answer
    let record = tokio::task::spawn_blocking(move || reg.decide(&decision))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({ "record": record })))
}

async fn trigger_iteration(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let outcome = tokio::task::spawn_blocking(move || reg.trigger(&id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let status = if outcome.run.is_some() { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((status, Json(outcome)).into_response())
}

async fn get_run(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(reg.run(&id)?.status()).into_response())
}

async fn get_storms(
    State(reg): State<Arc<Registry>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let from = date_param(&q, "from")?;
    let to = date_param(&q, "to")?;
    Ok(Json(json!({ "storms": reg.storms(from, to) })))
}

async fn get_signals(
    State(reg): State<Arc<Registry>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let kinds: Vec<SignalKind> = match q.get("kind").map(String::as_str) {
        None | Some("") => SignalKind::ALL.to_vec(),
        Some(k) => vec![SignalKind::parse(k)
            .ok_or_else(|| ApiError::invalid_field("kind", format!("`{k}` is not topics, entities, plot or llm")))?],
    };
    let smooth = match q.get("smooth") {
        None => None,
        Some(raw) => Some(
            raw.parse::<usize>()
                .ok()
                .filter(|w| (1..=365).contains(w))
                .ok_or_else(|| ApiError::invalid_field("smooth", "smoothing window must be 1 to 365 days"))?,
        ),
    };
    let bundle = reg.signals()?;
    let full = bundle.span();
    let span = DateSpan {
        start: date_param(&q, "from")?.unwrap_or(full.start).max(full.start),
        end: date_param(&q, "to")?.unwrap_or(full.end).min(full.end),
    };
    if span.end < span.start {
        return Err(ApiError::invalid_field("to", "range does not overlap the signal store"));
    }
    let mut out = Vec::new();
    for k in kinds {
        let s = bundle.get(k);
        let sm = smooth.map(|w| rolling_mean(s, w)).transpose().map_err(Error::from)?;
        let points: Vec<Value> = span
            .days()
            .map(|d| {
                let i = s.index_of(d).expect("span clipped to the store");
                match &sm {
                    Some(sm) => json!({ "date": d, "value": s.values()[i], "smoothed": sm.values()[i] }),
                    None => json!({ "date": d, "value": s.values()[i] }),
                }
            })
            .collect();
        out.push(json!({ "kind": k, "points": points }));
    }
    Ok(Json(json!({ "span": span, "series": out })))
}
