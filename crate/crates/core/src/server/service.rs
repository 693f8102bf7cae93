//! Transport-independent server core: pipeline storage, the FIFO job queue,
//! worker threads and per-job event logs.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::store::Store;
use crate::canonical;
use crate::engine::{CancelOutcome, CancelToken, Engine, EventKind, EventSink, ExecuteOptions, Outputs, ResultCache, RunEvent};
use crate::graph::{
    deserialize_pipeline, serialize_pipeline, validate_graph, DataType, FormatError, ModuleRegistry, PipelineGraph,
    PortRef, ValidationReport,
};
use crate::module::PortValues;
use crate::value::Value;

pub const DEFAULT_QUEUE_CAP: usize = 1000;
pub const DEFAULT_MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
/// Error recorded on jobs that were running when the server stopped.
pub const INTERRUPTED: &str = "interrupted";

const JOBS: &str = "jobs";
const EVENTS: &str = "events";
const BLOBS: &str = "blobs";
const PIPELINES: &str = "pipelines";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub workers: usize,
    pub cache_bytes: usize,
    pub queue_cap: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            cache_bytes: crate::engine::DEFAULT_CACHE_BYTES,
            queue_cap: DEFAULT_QUEUE_CAP,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ServiceError {
    #[error("pipeline failed validation")]
    ValidationFailed(ValidationReport),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("payload exceeds {limit} bytes")]
    PayloadTooLarge { limit: usize },
    #[error("queue is full ({cap} jobs)")]
    QueueFull { cap: usize },
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("unknown pipeline {0}")]
    UnknownPipeline(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown port {0}")]
    UnknownPort(String),
    #[error("{0} has not finished")]
    NotReady(String),
    #[error("{0} did not produce outputs")]
    NodeFailed(String),
    #[error("job already ended")]
    AlreadyTerminal,
    #[error("storage: {0}")]
    Storage(String),
}

impl ServiceError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::ValidationFailed(_) => "ValidationFailed",
            ServiceError::Format(FormatError::Parse { .. }) => "ParseError",
            ServiceError::Format(FormatError::UnsupportedVersion(_)) => "UnsupportedVersion",
            ServiceError::Format(FormatError::Schema { .. }) => "SchemaError",
            ServiceError::Format(FormatError::InvalidGraph(_)) => "ValidationFailed",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::InvalidInput(_) => "InvalidInput",
            ServiceError::PayloadTooLarge { .. } => "PayloadTooLarge",
            ServiceError::QueueFull { .. } => "QueueFull",
            ServiceError::UnknownJob(_) => "UnknownJob",
            ServiceError::UnknownPipeline(_) => "UnknownPipeline",
            ServiceError::UnknownNode(_) => "UnknownNode",
            ServiceError::UnknownPort(_) => "UnknownPort",
            ServiceError::NotReady(_) => "NotReady",
            ServiceError::NodeFailed(_) => "NodeFailed",
            ServiceError::AlreadyTerminal => "AlreadyTerminal",
            ServiceError::Storage(_) => "StorageError",
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Queued,
    Running,
    Finished,
    Failed,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Failed | JobState::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub digest: String,
    pub dtype: DataType,
}

/// The persisted form of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub client_id: Option<String>,
    pub pipeline_id: String,
    pub seed: u64,
    /// Arrival number; FIFO order.
    pub arrival: u64,
    /// `node.port` → stored input.
    pub inputs: BTreeMap<String, ArtifactRef>,
    pub state: JobState,
    pub submitted_at: String,
    pub started_at: Option<String>,
    pub ended_at: Option<String>,
    pub error: Option<String>,
    pub failed_node: Option<String>,
    pub total_nodes: usize,
    pub finished_nodes: usize,
    /// `node.port` → produced output.
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub finished: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub position: Option<u64>,
    pub progress: Progress,
    pub error: Option<String>,
    pub failed_node: Option<String>,
    pub client_id: Option<String>,
    pub pipeline_id: String,
    pub seed: u64,
    pub submitted_at: String,
    pub started_at: Option<String>,
    pub ended_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPipeline {
    pub pipeline_id: String,
    pub owner: Option<String>,
    pub name: String,
    pub created_at: String,
    pub canonical: String,
}

#[derive(Debug, Clone)]
pub enum PipelineSource {
    Graph(PipelineGraph),
    Id(String),
}

#[derive(Debug, Clone)]
pub struct SubmitRequest {
    pub pipeline: PipelineSource,
    pub inputs: Outputs,
    pub seed: u64,
    pub client_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Submitted {
    pub position: u64,
}

pub(crate) struct JobEntry {
    job_id: String,
    pub(crate) record: Mutex<JobRecord>,
    pub(crate) events: Mutex<Vec<RunEvent>>,
    pub(crate) notify: tokio::sync::Notify,
    cancel: CancelToken,
    graph: PipelineGraph,
}

#[derive(Default)]
struct Queue {
    waiting: VecDeque<String>,
    running: usize,
    next_arrival: u64,
    shutdown: bool,
}

pub struct Service {
    store: Arc<dyn Store>,
    engine: Engine,
    config: ServiceConfig,
    jobs: RwLock<HashMap<String, Arc<JobEntry>>>,
    queue: Mutex<Queue>,
    queue_changed: Condvar,
    modules_json: String,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)
}

/// Sink that persists a job's events and artifacts as they happen.
struct JobSink<'a> {
    store: &'a dyn Store,
    entry: &'a JobEntry,
}

impl JobSink<'_> {
    fn persist(&self, record: &JobRecord) {
        if let Err(e) = self.store.put(JOBS, &record.job_id, canonical::pretty_of(record).as_bytes()) {
            tracing::error!(job = %record.job_id, "persisting job record failed: {e}");
        }
    }
}

impl EventSink for JobSink<'_> {
    fn emit(&self, kind: EventKind) -> u64 {
        if kind.is_terminal() {
            let mut record = self.entry.record.lock().unwrap();
            match &kind {
                EventKind::JobFinished => record.state = JobState::Finished,
                EventKind::JobCancelled => record.state = JobState::Cancelled,
                EventKind::JobFailed { node_id, error } => {
                    record.state = JobState::Failed;
                    record.failed_node = node_id.clone();
                    record.error = Some(error.clone());
                }
                _ => unreachable!(),
            }
            record.ended_at = Some(now());
            self.persist(&record);
        }
        let mut events = self.entry.events.lock().unwrap();
        let event = RunEvent {
            seq: events.len() as u64,
            kind,
        };
        let line = canonical::to_compact(&event.to_json());
        if let Err(e) = self.store.append(EVENTS, &self.entry.job_id, line.as_bytes()) {
            tracing::error!("appending event failed: {e}");
        }
        let seq = event.seq;
        events.push(event);
        drop(events);
        self.entry.notify.notify_waiters();
        seq
    }

    fn record_outputs(&self, node_id: &str, outputs: &PortValues) {
        let mut refs = Vec::new();
        for (port, value) in outputs {
            let bytes = value.to_bytes();
            let digest = canonical::sha256_hex(&bytes);
            if let Err(e) = put_blob(self.store, &digest, &bytes) {
                tracing::error!("storing artifact failed: {e}");
            }
            refs.push((format!("{node_id}.{port}"), ArtifactRef { digest, dtype: value.dtype() }));
        }
        let mut record = self.entry.record.lock().unwrap();
        record.artifacts.extend(refs);
        record.finished_nodes += 1;
        self.persist(&record);
    }
}

fn put_blob(store: &dyn Store, digest: &str, bytes: &[u8]) -> std::io::Result<()> {
    if store.get(BLOBS, digest)?.is_none() {
        store.put(BLOBS, digest, bytes)?;
    }
    Ok(())
}

impl Service {
    /// Loads persisted state and starts the workers. Jobs found `Running`
    /// become `Failed("interrupted")` with an audit event; `Queued` jobs are
    /// requeued in arrival order.
    pub fn open(store: Arc<dyn Store>, registry: Arc<ModuleRegistry>, config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let specs: Vec<_> = registry.specs().into_iter().cloned().collect();
        let modules_json = canonical::pretty_of(&specs);
        let engine = Engine::with_cache(registry, Arc::new(ResultCache::new(config.cache_bytes)));
        let service = Arc::new(Self {
            store,
            engine,
            config,
            jobs: RwLock::new(HashMap::new()),
            queue: Mutex::new(Queue::default()),
            queue_changed: Condvar::new(),
            modules_json,
            workers: Mutex::new(Vec::new()),
        });
        service.recover()?;
        for i in 0..service.config.workers.max(1) {
            let s = Arc::clone(&service);
            let handle = std::thread::Builder::new()
                .name(format!("segflow-worker-{i}"))
                .spawn(move || s.worker_loop())
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
            service.workers.lock().unwrap().push(handle);
        }
        Ok(service)
    }

    fn recover(&self) -> Result<(), ServiceError> {
        let mut queued = Vec::new();
        let mut next_arrival = 0;
        for key in self.store.keys(JOBS)? {
            let Some(bytes) = self.store.get(JOBS, &key)? else { continue };
            let record: JobRecord = match serde_json::from_slice(&bytes) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!("skipping unreadable job record {key}: {e}");
                    continue;
                }
            };
            let graph = self.load_graph(&record.pipeline_id)?;
            let events: Vec<RunEvent> = self
                .store
                .read_log(EVENTS, &record.job_id)?
                .iter()
                .filter_map(|line| serde_json::from_slice(line).ok())
                .filter_map(|doc| RunEvent::from_json(&doc).ok())
                .collect();
            next_arrival = next_arrival.max(record.arrival + 1);
            let state = record.state;
            let entry = Arc::new(JobEntry {
                job_id: key.clone(),
                cancel: CancelToken::new(),
                record: Mutex::new(record),
                events: Mutex::new(events),
                notify: tokio::sync::Notify::new(),
                graph,
            });
            let job_id = key.clone();
            match state {
                JobState::Running => {
                    let sink = JobSink {
                        store: &*self.store,
                        entry: &entry,
                    };
                    sink.emit(EventKind::JobFailed {
                        node_id: None,
                        error: INTERRUPTED.into(),
                    });
                    entry.cancel.mark_terminal();
                }
                JobState::Queued => queued.push((entry.record.lock().unwrap().arrival, job_id.clone())),
                _ => entry.cancel.mark_terminal(),
            }
            self.jobs.write().unwrap().insert(job_id, entry);
        }
        queued.sort();
        let mut queue = self.queue.lock().unwrap();
        queue.waiting = queued.into_iter().map(|(_, id)| id).collect();
        queue.next_arrival = next_arrival;
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn registry(&self) -> &ModuleRegistry {
        self.engine.registry()
    }

    /// Canonical JSON array of every module spec, sorted by id. Computed once.
    pub fn modules_json(&self) -> &str {
        &self.modules_json
    }

    pub fn validate(&self, bytes: &[u8]) -> Result<ValidationReport, ServiceError> {
        let graph = deserialize_pipeline(bytes)?;
        Ok(validate_graph(&graph, self.registry()))
    }

    fn canonicalize(&self, graph: &PipelineGraph) -> Result<String, ServiceError> {
        serialize_pipeline(graph, self.registry()).map_err(|e| match e {
            FormatError::InvalidGraph(report) => ServiceError::ValidationFailed(report),
            other => ServiceError::Format(other),
        })
    }

    fn save_pipeline(&self, graph: &PipelineGraph, owner: Option<String>) -> Result<StoredPipeline, ServiceError> {
        let canonical = self.canonicalize(graph)?;
        let pipeline_id = canonical::sha256_hex(canonical.as_bytes());
        if let Some(bytes) = self.store.get(PIPELINES, &pipeline_id)? {
            if let Ok(existing) = serde_json::from_slice::<StoredPipeline>(&bytes) {
                return Ok(existing);
            }
        }
        let stored = StoredPipeline {
            pipeline_id: pipeline_id.clone(),
            owner,
            name: graph.name.clone(),
            created_at: now(),
            canonical,
        };
        self.store.put(PIPELINES, &pipeline_id, canonical::pretty_of(&stored).as_bytes())?;
        Ok(stored)
    }

    /// Validates, canonicalizes and stores. Idempotent per content.
    pub fn store_pipeline(&self, bytes: &[u8], owner: Option<String>) -> Result<StoredPipeline, ServiceError> {
        self.save_pipeline(&deserialize_pipeline(bytes)?, owner)
    }

    pub fn pipeline(&self, pipeline_id: &str) -> Result<StoredPipeline, ServiceError> {
        let bytes = self
            .store
            .get(PIPELINES, pipeline_id)
            .ok()
            .flatten()
            .ok_or_else(|| ServiceError::UnknownPipeline(pipeline_id.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Storage(e.to_string()))
    }

    /// Canonical bytes of a stored pipeline.
    pub fn load_pipeline(&self, pipeline_id: &str) -> Result<String, ServiceError> {
        Ok(self.pipeline(pipeline_id)?.canonical)
    }

    fn load_graph(&self, pipeline_id: &str) -> Result<PipelineGraph, ServiceError> {
        Ok(deserialize_pipeline(self.load_pipeline(pipeline_id)?.as_bytes())?)
    }

    fn check_inputs(&self, graph: &PipelineGraph, inputs: &Outputs) -> Result<(), ServiceError> {
        let declared: Vec<PortRef> = graph.external_inputs().into_iter().flatten().collect();
        if let Some(extra) = inputs.keys().find(|p| !declared.contains(p)) {
            return Err(ServiceError::InvalidInput(format!("{extra} is not a declared external input")));
        }
        for port in declared {
            let spec = graph.node(&port.node).and_then(|n| self.registry().spec(&n.module_id));
            let Some(input) = spec.and_then(|s| s.input(&port.port)) else { continue };
            match inputs.get(&port) {
                None if input.required => return Err(ServiceError::InvalidInput(format!("missing input {port}"))),
                Some(v) if v.dtype() != input.dtype => {
                    return Err(ServiceError::InvalidInput(format!(
                        "{port} expects {}, got {}",
                        input.dtype,
                        v.dtype()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn submit(&self, req: SubmitRequest) -> Result<(String, Submitted), ServiceError> {
        let graph = match req.pipeline {
            PipelineSource::Graph(g) => {
                let report = validate_graph(&g, self.registry());
                if !report.ok {
                    return Err(ServiceError::ValidationFailed(report));
                }
                g
            }
            PipelineSource::Id(id) => self.load_graph(&id)?,
        };
        self.check_inputs(&graph, &req.inputs)?;
        if self.queue.lock().unwrap().waiting.len() >= self.config.queue_cap {
            return Err(ServiceError::QueueFull {
                cap: self.config.queue_cap,
            });
        }
        let stored = self.save_pipeline(&graph, req.client_id.clone())?;
        let graph = deserialize_pipeline(stored.canonical.as_bytes())?;
        let mut inputs = BTreeMap::new();
        for (port, value) in &req.inputs {
            let bytes = value.to_bytes();
            let digest = canonical::sha256_hex(&bytes);
            put_blob(&*self.store, &digest, &bytes)?;
            inputs.insert(port.to_string(), ArtifactRef { digest, dtype: value.dtype() });
        }
        let job_id = uuid::Uuid::new_v4().simple().to_string();

        let mut queue = self.queue.lock().unwrap();
        if queue.waiting.len() >= self.config.queue_cap {
            return Err(ServiceError::QueueFull {
                cap: self.config.queue_cap,
            });
        }
        let position = (queue.waiting.len() + queue.running) as u64;
        let record = JobRecord {
            job_id: job_id.clone(),
            client_id: req.client_id,
            pipeline_id: stored.pipeline_id,
            seed: req.seed,
            arrival: queue.next_arrival,
            inputs,
            state: JobState::Queued,
            submitted_at: now(),
            started_at: None,
            ended_at: None,
            error: None,
            failed_node: None,
            total_nodes: graph.nodes.len(),
            finished_nodes: 0,
            artifacts: BTreeMap::new(),
        };
        self.store.put(JOBS, &job_id, canonical::pretty_of(&record).as_bytes())?;
        queue.next_arrival += 1;
        let entry = Arc::new(JobEntry {
            job_id: job_id.clone(),
            record: Mutex::new(record),
            events: Mutex::new(Vec::new()),
            notify: tokio::sync::Notify::new(),
            cancel: CancelToken::new(),
            graph,
        });
        JobSink {
            store: &*self.store,
            entry: &entry,
        }
        .emit(EventKind::JobQueued { position });
        self.jobs.write().unwrap().insert(job_id.clone(), entry);
        queue.waiting.push_back(job_id.clone());
        self.queue_changed.notify_all();
        Ok((job_id, Submitted { position }))
    }

    pub(crate) fn entry(&self, job_id: &str) -> Result<Arc<JobEntry>, ServiceError> {
        self.jobs
            .read()
            .unwrap()
            .get(job_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownJob(job_id.to_string()))
    }

    pub fn status(&self, job_id: &str) -> Result<JobStatus, ServiceError> {
        let entry = self.entry(job_id)?;
        let position = {
            let queue = self.queue.lock().unwrap();
            queue
                .waiting
                .iter()
                .position(|id| id == job_id)
                .map(|i| (i + queue.running) as u64)
        };
        let r = entry.record.lock().unwrap().clone();
        Ok(JobStatus {
            job_id: r.job_id,
            state: r.state,
            position: if r.state == JobState::Queued { position } else { None },
            progress: Progress {
                finished: r.finished_nodes,
                total: r.total_nodes,
            },
            error: r.error,
            failed_node: r.failed_node,
            client_id: r.client_id,
            pipeline_id: r.pipeline_id,
            seed: r.seed,
            submitted_at: r.submitted_at,
            started_at: r.started_at,
            ended_at: r.ended_at,
        })
    }

    /// Job ids in arrival order.
    pub fn job_ids(&self) -> Vec<String> {
        let jobs = self.jobs.read().unwrap();
        let mut ids: Vec<(u64, String)> = jobs
            .iter()
            .map(|(id, e)| (e.record.lock().unwrap().arrival, id.clone()))
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    pub fn record(&self, job_id: &str) -> Result<JobRecord, ServiceError> {
        Ok(self.entry(job_id)?.record.lock().unwrap().clone())
    }

    pub fn cancel(&self, job_id: &str) -> Result<CancelOutcome, ServiceError> {
        let entry = self.entry(job_id)?;
        let mut queue = self.queue.lock().unwrap();
        if let Some(i) = queue.waiting.iter().position(|id| id == job_id) {
            queue.waiting.remove(i);
            drop(queue);
            let outcome = entry.cancel.cancel();
            entry.cancel.finish(
                &JobSink {
                    store: &*self.store,
                    entry: &entry,
                },
                None,
            );
            return Ok(outcome);
        }
        drop(queue);
        match entry.cancel.cancel() {
            CancelOutcome::AlreadyTerminal => Err(ServiceError::AlreadyTerminal),
            ack => Ok(ack),
        }
    }

    /// Stored bytes and content type of one node output.
    pub fn artifact(&self, job_id: &str, node: &str, port: &str) -> Result<(Vec<u8>, &'static str), ServiceError> {
        let entry = self.entry(job_id)?;
        let module_id = &entry
            .graph
            .node(node)
            .ok_or_else(|| ServiceError::UnknownNode(node.to_string()))?
            .module_id;
        let spec = self.registry().spec(module_id).ok_or_else(|| ServiceError::UnknownNode(node.to_string()))?;
        let dtype = &spec
            .output(port)
            .ok_or_else(|| ServiceError::UnknownPort(format!("{node}.{port}")))?
            .dtype;
        let record = entry.record.lock().unwrap().clone();
        let Some(artifact) = record.artifacts.get(&format!("{node}.{port}")) else {
            return Err(if record.state.is_terminal() {
                ServiceError::NodeFailed(node.to_string())
            } else {
                ServiceError::NotReady(node.to_string())
            });
        };
        let bytes = self
            .store
            .get(BLOBS, &artifact.digest)?
            .ok_or_else(|| ServiceError::Storage(format!("missing blob {}", artifact.digest)))?;
        Ok((bytes, content_type(dtype)))
    }

    /// Events with `seq >= since`.
    pub fn events_since(&self, job_id: &str, since: u64) -> Result<Vec<RunEvent>, ServiceError> {
        let entry = self.entry(job_id)?;
        let events = entry.events.lock().unwrap();
        Ok(events.iter().skip(since as usize).cloned().collect())
    }

    /// Polls until the job is terminal or `timeout` passes.
    pub fn wait_terminal(&self, job_id: &str, timeout: Duration) -> Result<JobStatus, ServiceError> {
        let deadline = Instant::now() + timeout;
        loop {
            let status = self.status(job_id)?;
            if status.state.is_terminal() || Instant::now() >= deadline {
                return Ok(status);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// Stops handing out queued jobs and ends open event streams.
    pub fn begin_shutdown(&self) {
        self.queue.lock().unwrap().shutdown = true;
        self.queue_changed.notify_all();
        for entry in self.jobs.read().unwrap().values() {
            entry.notify.notify_waiters();
        }
    }

    pub fn is_closing(&self) -> bool {
        self.queue.lock().unwrap().shutdown
    }

    /// [`Service::begin_shutdown`], then waits for running jobs to finish.
    pub fn shutdown(&self) {
        self.begin_shutdown();
        let handles: Vec<_> = self.workers.lock().unwrap().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }

    fn worker_loop(&self) {
        loop {
            let entry = {
                let mut queue = self.queue.lock().unwrap();
                loop {
                    if queue.shutdown {
                        return;
                    }
                    if let Some(id) = queue.waiting.pop_front() {
                        let entry = self.entry(&id).expect("queued jobs are registered");
                        {
                            let mut record = entry.record.lock().unwrap();
                            record.state = JobState::Running;
                            record.started_at = Some(now());
                            if let Err(e) = self.store.put(JOBS, &id, canonical::pretty_of(&*record).as_bytes()) {
                                tracing::error!(job = %id, "persisting job record failed: {e}");
                            }
                        }
                        queue.running += 1;
                        break entry;
                    }
                    queue = self.queue_changed.wait(queue).unwrap();
                }
            };
            self.run_job(&entry);
            self.queue.lock().unwrap().running -= 1;
            self.queue_changed.notify_all();
        }
    }

    fn run_job(&self, entry: &JobEntry) {
        let sink = JobSink {
            store: &*self.store,
            entry,
        };
        let (seed, stored_inputs) = {
            let r = entry.record.lock().unwrap();
            (r.seed, r.inputs.clone())
        };
        let mut inputs = Outputs::new();
        for (port, artifact) in stored_inputs {
            let value = self
                .store
                .get(BLOBS, &artifact.digest)
                .ok()
                .flatten()
                .and_then(|bytes| Value::from_bytes(&artifact.dtype, &bytes).ok());
            match (PortRef::parse(&port), value) {
                (Some(p), Some(v)) => {
                    inputs.insert(p, v);
                }
                _ => {
                    entry.cancel.finish(
                        &sink,
                        Some(EventKind::JobFailed {
                            node_id: None,
                            error: format!("stored input {port} is unreadable"),
                        }),
                    );
                    return;
                }
            }
        }
        let opts = ExecuteOptions::seeded(seed);
        self.engine.execute(&entry.graph, &inputs, &opts, &sink, &entry.cancel);
    }
}

pub fn content_type(dtype: &DataType) -> &'static str {
    match dtype {
        DataType::Image | DataType::Mask => "image/png",
        DataType::List(_) => "application/json",
        _ => "text/plain; charset=utf-8",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{builtin_registry, scenario_pipeline, ScenarioConfig};
    use crate::engine::check_event_grammar;
    use crate::graph::{NodeInstance, ParamValue};
    use crate::server::store::MemoryStore;

    fn delay(ms: i64) -> PipelineGraph {
        let mut g = PipelineGraph::new("delay");
        g.add_node(NodeInstance::new("d", "util.delay", 1).with_param("ms", ParamValue::Int(ms)));
        g.declare_external_input("d", "text");
        g
    }

    fn text_inputs() -> Outputs {
        Outputs::from([(PortRef::new("d", "text"), Value::text("hello"))])
    }

    fn open(store: Arc<dyn Store>, workers: usize) -> Arc<Service> {
        let config = ServiceConfig {
            workers,
            queue_cap: 4,
            ..ServiceConfig::default()
        };
        Service::open(store, Arc::new(builtin_registry()), config).unwrap()
    }

    fn submit(s: &Service, g: &PipelineGraph, inputs: Outputs) -> Result<(String, Submitted), ServiceError> {
        s.submit(SubmitRequest {
            pipeline: PipelineSource::Graph(g.clone()),
            inputs,
            seed: 1,
            client_id: Some("test".into()),
        })
    }

    #[test]
    fn job_runs_to_completion() {
        let s = open(Arc::new(MemoryStore::new()), 1);
        let g = scenario_pipeline(&ScenarioConfig::default());
        let (id, sub) = submit(&s, &g, Outputs::new()).unwrap();
        assert_eq!(sub.position, 0);
        let status = s.wait_terminal(&id, Duration::from_secs(30)).unwrap();
        assert_eq!(status.state, JobState::Finished);
        assert_eq!(status.progress.finished, status.progress.total);
        let events = s.events_since(&id, 0).unwrap();
        check_event_grammar(&events, &g).unwrap();
        assert_eq!(events[0].kind, EventKind::JobQueued { position: 0 });
        let (png, ct) = s.artifact(&id, "post", "mask").unwrap();
        assert_eq!(ct, "image/png");
        let digest = events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::NodeFinished { node_id, outputs, .. } if node_id == "post" => Some(outputs["mask"].clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(canonical::sha256_hex(&png), digest);
        assert!(matches!(s.artifact(&id, "post", "nope"), Err(ServiceError::UnknownPort(_))));
        assert!(matches!(s.artifact(&id, "ghost", "mask"), Err(ServiceError::UnknownNode(_))));
        assert!(matches!(s.cancel(&id), Err(ServiceError::AlreadyTerminal)));
        s.shutdown();
    }

    #[test]
    fn invalid_pipeline_persists_nothing() {
        let store = Arc::new(MemoryStore::new());
        let s = open(store.clone(), 1);
        let mut g = delay(0);
        g.add_node(NodeInstance::new("e", "util.delay", 1));
        g.connect(("d", "text"), ("e", "text")).connect(("e", "text"), ("d", "text"));
        match submit(&s, &g, text_inputs()) {
            Err(ServiceError::ValidationFailed(report)) => assert!(report.has_rule("cycle")),
            other => panic!("{other:?}"),
        }
        assert!(store.keys(JOBS).unwrap().is_empty());
        assert!(store.keys(PIPELINES).unwrap().is_empty());
        s.shutdown();
    }

    #[test]
    fn inputs_are_type_checked() {
        let s = open(Arc::new(MemoryStore::new()), 1);
        let wrong = Outputs::from([(PortRef::new("d", "text"), Value::Number(1.0))]);
        assert!(matches!(submit(&s, &delay(0), wrong), Err(ServiceError::InvalidInput(_))));
        assert!(matches!(submit(&s, &delay(0), Outputs::new()), Err(ServiceError::InvalidInput(_))));
        s.shutdown();
    }

    #[test]
    fn queue_positions_cap_and_cancel() {
        let s = open(Arc::new(MemoryStore::new()), 1);
        let (first, p0) = submit(&s, &delay(300), text_inputs()).unwrap();
        assert_eq!(p0.position, 0);
        while s.status(&first).unwrap().state == JobState::Queued {
            std::thread::sleep(Duration::from_millis(2));
        }
        let mut queued = Vec::new();
        for _ in 0..4 {
            queued.push(submit(&s, &delay(0), text_inputs()).unwrap());
        }
        assert_eq!(queued.iter().map(|(_, p)| p.position).collect::<Vec<_>>(), [1, 2, 3, 4]);
        assert!(matches!(submit(&s, &delay(0), text_inputs()), Err(ServiceError::QueueFull { cap: 4 })));
        let (victim, _) = &queued[1];
        assert!(matches!(s.cancel(victim).unwrap(), CancelOutcome::Acknowledged { .. }));
        assert_eq!(s.status(victim).unwrap().state, JobState::Cancelled);
        assert_eq!(s.status(&queued[2].0).unwrap().position, Some(2));
        let events = s.events_since(victim, 0).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].kind, EventKind::JobCancelled);
        for (id, _) in &queued {
            s.wait_terminal(id, Duration::from_secs(10)).unwrap();
        }
        assert!(matches!(s.cancel("nope"), Err(ServiceError::UnknownJob(_))));
        s.shutdown();
    }

    #[test]
    fn stored_pipelines_are_content_addressed() {
        let s = open(Arc::new(MemoryStore::new()), 1);
        let g = scenario_pipeline(&ScenarioConfig::default());
        let mut reversed = g.clone();
        reversed.nodes.reverse();
        let text = crate::graph::to_canonical_text(&reversed);
        let a = s.store_pipeline(text.as_bytes(), None).unwrap();
        let b = s
            .store_pipeline(crate::graph::to_canonical_text(&g).as_bytes(), Some("x".into()))
            .unwrap();
        assert_eq!(a.pipeline_id, b.pipeline_id);
        assert_eq!(
            s.load_pipeline(&a.pipeline_id).unwrap(),
            serialize_pipeline(&g, s.registry()).unwrap()
        );
        assert!(matches!(s.load_pipeline("missing"), Err(ServiceError::UnknownPipeline(_))));
        s.shutdown();
    }

    #[test]
    fn restart_marks_running_jobs_interrupted() {
        let store: Arc<dyn Store> = Arc::new(MemoryStore::new());
        let s = open(store.clone(), 1);
        let (done, _) = submit(&s, &delay(0), text_inputs()).unwrap();
        s.wait_terminal(&done, Duration::from_secs(5)).unwrap();
        s.shutdown();
        // Forge the state a crash leaves behind: one running, one queued.
        let s = open(store.clone(), 0);
        s.shutdown();
        let running = JobRecord {
            job_id: "running1".into(),
            state: JobState::Running,
            arrival: 10,
            started_at: Some(now()),
            ..s.record(&done).unwrap()
        };
        let queued = JobRecord {
            job_id: "queued1".into(),
            state: JobState::Queued,
            arrival: 11,
            started_at: None,
            ended_at: None,
            artifacts: BTreeMap::new(),
            finished_nodes: 0,
            ..s.record(&done).unwrap()
        };
        for r in [&running, &queued] {
            store.put(JOBS, &r.job_id, canonical::pretty_of(r).as_bytes()).unwrap();
        }
        let restarted = open(store, 1);
        let r = restarted.status("running1").unwrap();
        assert_eq!((r.state, r.error.as_deref()), (JobState::Failed, Some(INTERRUPTED)));
        let audit = restarted.events_since("running1", 0).unwrap();
        assert!(matches!(&audit.last().unwrap().kind, EventKind::JobFailed { error, .. } if error == INTERRUPTED));
        assert_eq!(restarted.status(&done).unwrap().state, JobState::Finished);
        assert!(restarted.artifact(&done, "d", "text").is_ok());
        let q = restarted.wait_terminal("queued1", Duration::from_secs(5)).unwrap();
        assert_eq!(q.state, JobState::Finished);
        restarted.shutdown();
    }
}
