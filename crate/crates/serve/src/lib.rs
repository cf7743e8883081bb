//! JSON API over a frozen validation session and its rating log.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use codetag::validation::{
    compute_ground_truth, now_millis, validation_metrics, Rating, RatingRecord, RatingStore, ValidationError,
    ValidationSession, Verdict,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

pub const TOP1_DENOMINATOR_NOTE: &str =
    "documents whose top-ranked tag was excluded by voting are dropped from the top-1 denominator";

pub struct AppState {
    session: ValidationSession,
    /// Every submission funnels through this lock, so the log has one writer.
    ratings: Mutex<RatingStore>,
}

impl AppState {
    pub fn new(session: ValidationSession, ratings: RatingStore) -> Self {
        Self {
            session,
            ratings: Mutex::new(ratings),
        }
    }

    pub fn open(session_path: &Path, ratings_path: &Path) -> Result<Self, ValidationError> {
        Ok(Self::new(
            ValidationSession::load(session_path)?,
            RatingStore::open(ratings_path)?,
        ))
    }

    pub fn session(&self) -> &ValidationSession {
        &self.session
    }
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, code: &str, message: impl ToString) -> Response {
    (
        status,
        Json(json!({"ok": false, "error": code, "message": message.to_string()})),
    )
        .into_response()
}

async fn session_meta(State(s): State<Shared>) -> Json<serde_json::Value> {
    let sess = &s.session;
    Json(json!({
        "k": sess.k,
        "reviewers": sess.reviewers,
        "created_at": sess.created_at,
        "model_kind": sess.model_kind,
        "documents": sess.documents.len(),
        "slots_per_reviewer": sess.slots(),
        "warnings": sess.warnings,
    }))
}

async fn documents(State(s): State<Shared>) -> Response {
    let store = match s.ratings.lock() {
        Ok(g) => g,
        Err(_) => {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "poisoned",
                "rating store unavailable",
            )
        }
    };
    let list: Vec<_> = s
        .session
        .documents
        .iter()
        .map(|d| {
            json!({
                "id": d.id,
                "path": d.path,
                "length": d.length,
                "rated_counts": store.log().rated_counts(&d.id),
            })
        })
        .collect();
    Json(list).into_response()
}

async fn document(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match s.session.document(&id) {
        Some(d) => Json(json!({"id": d.id, "text": d.text, "predictions": d.predictions})).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            "unknown_document",
            format!("unknown document {id}"),
        ),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRequest {
    pub doc_id: String,
    pub tag: String,
    pub reviewer_id: String,
    pub rating: Rating,
    /// Milliseconds since the Unix epoch; the server clock is used when absent.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

async fn rate(State(s): State<Shared>, Json(req): Json<RatingRequest>) -> Response {
    let record = RatingRecord {
        doc_id: req.doc_id,
        tag: req.tag,
        reviewer_id: req.reviewer_id,
        rating: req.rating,
        timestamp: req.timestamp.unwrap_or_else(now_millis),
    };
    let mut store = match s.ratings.lock() {
        Ok(g) => g,
        Err(_) => {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "poisoned",
                "rating store unavailable",
            )
        }
    };
    match store.record(&s.session, record) {
        Ok(()) => Json(json!({"ok": true})).into_response(),
        Err(ValidationError::Rating(e)) => {
            let status = match e {
                codetag::validation::RatingError::UnknownDocument(_) => StatusCode::NOT_FOUND,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            };
            error(status, e.code(), e)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "storage", e),
    }
}

async fn results(State(s): State<Shared>) -> Response {
    let truth = match s.ratings.lock() {
        Ok(g) => compute_ground_truth(&s.session, g.log()),
        Err(_) => {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "poisoned",
                "rating store unavailable",
            )
        }
    };
    let summary = json!({
        "positive": truth.count(Verdict::Positive),
        "negative": truth.count(Verdict::Negative),
        "excluded": truth.count(Verdict::Excluded),
    });
    match validation_metrics(&s.session, &truth) {
        Ok(m) => Json(json!({
            "ground_truth": summary,
            "roc": m.roc.as_ref().map(|r| &r.points),
            "auc": m.auc,
            "top1": m.top1,
            "top1_documents": m.top1_documents,
            "top1_dropped": m.top1_dropped,
            "pairs": m.pairs,
            "top1_denominator": TOP1_DENOMINATOR_NOTE,
        }))
        .into_response(),
        Err(ValidationError::AllExcluded) => Json(json!({
            "ground_truth": summary,
            "roc": null,
            "auc": null,
            "top1": null,
            "pairs": 0,
            "note": "every (document, tag) pair is excluded",
            "top1_denominator": TOP1_DENOMINATOR_NOTE,
        }))
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "metrics", e),
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/session", get(session_meta))
        .route("/api/documents", get(documents))
        .route("/api/documents/{id}", get(document))
        .route("/api/ratings", post(rate))
        .route("/api/results", get(results))
        .with_state(state)
}

/// Serves until the process ends.
pub async fn serve(listener: TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and returns the bound address with the server future.
pub async fn bind(
    addr: SocketAddr,
    state: Shared,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, serve(listener, state)))
}
