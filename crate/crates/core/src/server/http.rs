//! HTTP transport under `/api/v1`, with the event channel as server-sent
//! events.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine as _;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value as Json};

use super::service::{PipelineSource, Service, ServiceError, SubmitRequest};
use crate::canonical;
use crate::engine::{CancelOutcome, Outputs};
use crate::graph::{from_json, DataType, PortRef};
use crate::value::Value;

/// Header carrying the caller's client tag. Not authenticated.
pub const CLIENT_ID_HEADER: &str = "x-client-id";

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use crate::graph::FormatError;
        let e = self.0;
        let status = match &e {
            ServiceError::ValidationFailed(_) | ServiceError::Format(FormatError::InvalidGraph(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::InvalidInput(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Format(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::QueueFull { .. } => StatusCode::TOO_MANY_REQUESTS,
            ServiceError::UnknownJob(_)
            | ServiceError::UnknownPipeline(_)
            | ServiceError::UnknownNode(_)
            | ServiceError::UnknownPort(_) => StatusCode::NOT_FOUND,
            ServiceError::NotReady(_) | ServiceError::NodeFailed(_) | ServiceError::AlreadyTerminal => {
                StatusCode::CONFLICT
            }
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": e.code(), "message": e.to_string() });
        match &e {
            ServiceError::ValidationFailed(report) | ServiceError::Format(FormatError::InvalidGraph(report)) => {
                body["report"] = serde_json::to_value(report).expect("serializable");
            }
            ServiceError::Format(FormatError::Parse { line, column, .. }) => {
                body["line"] = json!(line);
                body["column"] = json!(column);
            }
            _ => {}
        }
        json_response(status, &body)
    }
}

fn json_response(status: StatusCode, body: &Json) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        canonical::to_pretty(body),
    )
        .into_response()
}

type ApiResult = Result<Response, ApiError>;

fn body(bytes: Result<Bytes, BytesRejection>, limit: usize) -> Result<Bytes, ApiError> {
    match bytes {
        Ok(b) if b.len() > limit => Err(ServiceError::PayloadTooLarge { limit }.into()),
        Ok(b) => Ok(b),
        Err(r) if r.status() == StatusCode::PAYLOAD_TOO_LARGE => Err(ServiceError::PayloadTooLarge { limit }.into()),
        Err(r) => Err(ServiceError::BadRequest(r.body_text()).into()),
    }
}

fn client_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get(CLIENT_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

pub fn router(service: Arc<Service>) -> Router {
    let limit = service.config().max_body_bytes;
    Router::new()
        .route("/api/v1/modules", get(list_modules))
        .route("/api/v1/pipelines", post(store_pipeline))
        .route("/api/v1/pipelines/validate", post(validate))
        .route("/api/v1/pipelines/{id}", get(load_pipeline))
        .route("/api/v1/jobs", post(submit).get(list_jobs))
        .route("/api/v1/jobs/{id}", get(status))
        .route("/api/v1/jobs/{id}/cancel", post(cancel))
        .route("/api/v1/jobs/{id}/artifacts/{node}/{port}", get(artifact))
        .route("/api/v1/jobs/{id}/events", get(events))
        .layer(DefaultBodyLimit::max(limit.saturating_add(1)))
        .with_state(service)
}

async fn list_modules(State(s): State<Arc<Service>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], s.modules_json().to_string()).into_response()
}

async fn store_pipeline(State(s): State<Arc<Service>>, headers: HeaderMap, bytes: Result<Bytes, BytesRejection>) -> ApiResult {
    let bytes = body(bytes, s.config().max_body_bytes)?;
    let stored = s.store_pipeline(&bytes, client_id(&headers))?;
    Ok(json_response(StatusCode::OK, &json!({ "pipeline_id": stored.pipeline_id })))
}

async fn load_pipeline(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let text = s.load_pipeline(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn validate(State(s): State<Arc<Service>>, bytes: Result<Bytes, BytesRejection>) -> ApiResult {
    let bytes = body(bytes, s.config().max_body_bytes)?;
    let report = s.validate(&bytes)?;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(report).expect("serializable")))
}

/// `{"dtype": "image", "base64": "..."}` or `{"dtype": "text", "text": "..."}`.
pub fn decode_input(doc: &Json) -> Result<Value, String> {
    let dtype = doc["dtype"].as_str().ok_or("missing dtype")?;
    let dtype = DataType::from_str(dtype).map_err(|e| e.to_string())?;
    let bytes = if let Some(b64) = doc["base64"].as_str() {
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| format!("bad base64: {e}"))?
    } else if let Some(text) = doc["text"].as_str() {
        text.as_bytes().to_vec()
    } else {
        return Err("input needs `base64` or `text`".into());
    };
    Value::from_bytes(&dtype, &bytes).map_err(|e| e.to_string())
}

/// Inverse of [`decode_input`]; text-like values use `text`.
pub fn encode_input(value: &Value) -> Json {
    let dtype = value.dtype().to_string();
    match value {
        Value::Image(_) | Value::Mask(_) | Value::List(..) => json!({
            "dtype": dtype,
            "base64": base64::engine::general_purpose::STANDARD.encode(value.to_bytes()),
        }),
        _ => json!({ "dtype": dtype, "text": String::from_utf8(value.to_bytes()).expect("utf-8") }),
    }
}

async fn submit(State(s): State<Arc<Service>>, headers: HeaderMap, bytes: Result<Bytes, BytesRejection>) -> ApiResult {
    let bytes = body(bytes, s.config().max_body_bytes)?;
    let doc: Json = serde_json::from_slice(&bytes).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let pipeline = match (&doc["pipeline"], doc["pipeline_id"].as_str()) {
        (Json::Null, Some(id)) => PipelineSource::Id(id.to_string()),
        (Json::String(text), None) => PipelineSource::Graph(crate::graph::deserialize_pipeline(text.as_bytes()).map_err(ServiceError::from)?),
        (obj @ Json::Object(_), None) => PipelineSource::Graph(from_json(obj).map_err(ServiceError::from)?),
        _ => return Err(ServiceError::BadRequest("give exactly one of `pipeline` or `pipeline_id`".into()).into()),
    };
    let mut inputs = Outputs::new();
    if let Some(map) = doc["inputs"].as_object() {
        for (key, value) in map {
            let port = PortRef::parse(key).ok_or_else(|| ServiceError::InvalidInput(format!("bad port `{key}`")))?;
            let value = decode_input(value).map_err(|e| ServiceError::InvalidInput(format!("{key}: {e}")))?;
            inputs.insert(port, value);
        }
    } else if !doc["inputs"].is_null() {
        return Err(ServiceError::BadRequest("`inputs` must be an object".into()).into());
    }
    let seed = match &doc["seed"] {
        Json::Null => 0,
        v => v.as_u64().ok_or_else(|| ServiceError::BadRequest("`seed` must be an unsigned integer".into()))?,
    };
    let client_id = client_id(&headers).or_else(|| doc["client_id"].as_str().map(str::to_string));
    let (job_id, submitted) = s.submit(SubmitRequest {
        pipeline,
        inputs,
        seed,
        client_id,
    })?;
    Ok(json_response(
        StatusCode::ACCEPTED,
        &json!({ "job_id": job_id, "position": submitted.position }),
    ))
}

async fn list_jobs(State(s): State<Arc<Service>>) -> ApiResult {
    let statuses = s
        .job_ids()
        .iter()
        .map(|id| s.status(id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(statuses).expect("serializable")))
}

async fn status(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    let status = s.status(&id)?;
    Ok(json_response(StatusCode::OK, &serde_json::to_value(status).expect("serializable")))
}

async fn cancel(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult {
    match s.cancel(&id)? {
        CancelOutcome::Acknowledged { marker } => Ok(json_response(
            StatusCode::OK,
            &json!({ "outcome": "acknowledged", "marker": marker }),
        )),
        CancelOutcome::AlreadyTerminal => Err(ServiceError::AlreadyTerminal.into()),
    }
}

async fn artifact(State(s): State<Arc<Service>>, Path((id, node, port)): Path<(String, String, String)>) -> ApiResult {
    let (bytes, content_type) = s.artifact(&id, &node, &port)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

#[derive(Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

/// Replays the log from `since` (or one past `Last-Event-ID`), then follows
/// live events; the stream ends after the terminal event. Each frame's
/// `data` is `{seq, kind, payload}` and its `id` is the seq.
async fn events(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let entry = s.entry(&id)?;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map(|seq| seq + 1);
    let since = q.since.or(resume).unwrap_or(0);
    let frames = stream::unfold((s, entry, since, false), |(s, entry, cursor, done)| async move {
        if done {
            return None;
        }
        loop {
            if s.is_closing() {
                return None;
            }
            let waiter = Arc::clone(&entry);
            let notified = waiter.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let (batch, ended) = {
                let events = entry.events.lock().unwrap();
                let batch: Vec<_> = events.iter().skip(cursor as usize).cloned().collect();
                (batch, events.last().is_some_and(|e| e.kind.is_terminal()))
            };
            if !batch.is_empty() {
                let next = cursor + batch.len() as u64;
                let frames: Vec<Result<Event, Infallible>> = batch
                    .iter()
                    .map(|e| {
                        Ok(Event::default()
                            .id(e.seq.to_string())
                            .event(e.kind.name())
                            .data(canonical::to_compact(&e.to_json())))
                    })
                    .collect();
                return Some((stream::iter(frames), (s, entry, next, ended)));
            }
            if ended {
                return None;
            }
            let _ = tokio::time::timeout(Duration::from_secs(1), notified).await;
        }
    })
    .flatten();
    Ok(Sse::new(frames).keep_alive(KeepAlive::default()))
}

/// A server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    service: Arc<Service>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Stops accepting requests, then waits for running jobs.
    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.service.begin_shutdown();
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.service.shutdown();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

/// Serves `service` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<Service>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}

/// Starts serving on an already-bound listener from a background thread.
pub fn spawn(listener: std::net::TcpListener, service: Arc<Service>) -> std::io::Result<ServerHandle> {
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let svc = Arc::clone(&service);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let thread = std::thread::Builder::new().name("segflow-http".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            if let Err(e) = serve(listener, svc, async {
                let _ = rx.await;
            })
            .await
            {
                tracing::error!("server stopped: {e}");
            }
        });
    })?;
    Ok(ServerHandle {
        addr,
        service,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
