//! HTTP API consumed by the dashboard. All bodies are JSON; errors are
//! `{"error": "..."}` with a 4xx/5xx status.

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde_json::json;
use std::convert::Infallible;
use std::sync::Arc;

use crate::rules::AlertRule;
use crate::service::ServiceState;

type AppState = Arc<ServiceState>;

fn error(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": msg.to_string() }))).into_response()
}

fn not_found(what: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("{what} not found"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/channels", get(channels))
        .route("/api/metrics/{ch}", get(latest_metrics))
        .route("/api/metrics/{ch}/history", get(metric_history))
        .route("/api/rules", get(list_rules).put(replace_rules))
        .route(
            "/api/rules/{id}",
            get(get_rule).put(upsert_rule).delete(delete_rule),
        )
        .route("/api/events", get(events))
        .route("/api/events/{id}/ack", post(ack_event))
        .route("/api/stream", get(stream))
        .route("/api/recordings", get(recordings))
        .route("/api/recordings/{id}/replay", get(replay))
        .route("/api/status", get(status))
        .fallback(|| async { not_found("route") })
        .with_state(state)
}

async fn channels(State(s): State<AppState>) -> Response {
    Json(s.channels()).into_response()
}

async fn latest_metrics(State(s): State<AppState>, Path(ch): Path<String>) -> Response {
    match ch.parse().ok().and_then(|c| s.latest(c)) {
        Some(m) => Json(m).into_response(),
        None => not_found("metrics for channel"),
    }
}

async fn metric_history(State(s): State<AppState>, Path(ch): Path<String>) -> Response {
    match ch.parse().ok().and_then(|c| s.history(c)) {
        Some(h) => Json(h).into_response(),
        None => not_found("channel"),
    }
}

async fn list_rules(State(s): State<AppState>) -> Response {
    Json(&*s.rules()).into_response()
}

async fn replace_rules(State(s): State<AppState>, body: Bytes) -> Response {
    let rules: Vec<AlertRule> = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid rules: {e}")),
    };
    match s.set_rules(rules) {
        Ok(()) => Json(&*s.rules()).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

async fn get_rule(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match s.rule(&id) {
        Some(r) => Json(r).into_response(),
        None => not_found("rule"),
    }
}

async fn upsert_rule(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let rule: AlertRule = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid rule: {e}")),
    };
    if rule.id != id {
        return error(
            StatusCode::BAD_REQUEST,
            format!("rule id '{}' does not match path '{id}'", rule.id),
        );
    }
    match s.upsert_rule(rule.clone()) {
        Ok(true) => (StatusCode::CREATED, Json(rule)).into_response(),
        Ok(false) => Json(rule).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

async fn delete_rule(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    if s.delete_rule(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        not_found("rule")
    }
}

async fn events(State(s): State<AppState>) -> Response {
    Json(s.events()).into_response()
}

async fn ack_event(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match id.parse().ok().and_then(|id| s.acknowledge(id)) {
        Some(e) => Json(e).into_response(),
        None => not_found("event"),
    }
}

async fn stream(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let sub = s.hub().subscribe();
    let events = stream::unfold(sub, |sub| async move {
        let msg = sub.next().await?;
        let ev = Event::default()
            .event(msg.kind())
            .json_data(&msg)
            .expect("push message serialises");
        Some((Ok(ev), sub))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn recordings(State(s): State<AppState>) -> Response {
    Json(s.recordings()).into_response()
}

async fn replay(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    let st = s.clone();
    match tokio::task::spawn_blocking(move || st.replay_recording(&id)).await {
        Ok(Ok(Some(out))) => Json(out).into_response(),
        Ok(Ok(None)) => not_found("recording"),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn status(State(s): State<AppState>) -> Response {
    Json(s.status()).into_response()
}
