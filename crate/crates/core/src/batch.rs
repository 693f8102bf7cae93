//! Batch dataset generation: run a single-sample pipeline until `count`
//! samples pass every filter, then write them as a dataset directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtins::pipelines::{DATASET_IMAGE_KEY, DATASET_MASK_KEY};
use crate::builtins::{BuiltinError, DatasetManifest, DatasetWriter};
use crate::canonical;
use crate::engine::{CancelToken, Engine, EngineError, ExecuteOptions, NullSink, Outputs, RunStatus};
use crate::graph::{materialize, pipeline_digest, DataType, PipelineGraph, PortRef};
use crate::seed::sample_seed;
use crate::value::Value;

pub const SUMMARY_FILE: &str = "summary.json";
/// Attempts allowed per requested sample.
pub const RETRY_FACTOR: u64 = 5;
const EVAL_MODULE: &str = "eval.miou";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("pipeline has no {0} output to write")]
    NoDatasetPort(&'static str),
    #[error("retry budget exhausted: {accepted} of {requested} accepted after {attempts} attempts (acceptance rate {rate:.3})")]
    RetryBudgetExhausted {
        requested: u64,
        accepted: u64,
        attempts: u64,
        rate: f64,
    },
    #[error("attempt {attempt}: {source}")]
    Engine {
        attempt: u64,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Output(#[from] BuiltinError),
}

#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub seed: u64,
    pub count: u64,
    /// Attempts in flight at once. Results are consumed in attempt order, so
    /// this never changes the output.
    pub parallelism: usize,
    /// Defaults to `RETRY_FACTOR * count`.
    pub retry_budget: Option<u64>,
    pub overwrite: bool,
}

impl BatchConfig {
    pub fn new(seed: u64, count: u64) -> Self {
        Self {
            seed,
            count,
            parallelism: 1,
            retry_budget: None,
            overwrite: false,
        }
    }

    pub fn parallelism(mut self, p: usize) -> Self {
        self.parallelism = p.max(1);
        self
    }

    pub fn overwrite(mut self, yes: bool) -> Self {
        self.overwrite = yes;
        self
    }

    pub fn budget(&self) -> u64 {
        self.retry_budget.unwrap_or(RETRY_FACTOR.saturating_mul(self.count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u64,
    pub seed: u64,
    pub accepted: bool,
    /// Dataset index of an accepted sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub pipeline_sha256: String,
    pub seed: u64,
    pub requested: u64,
    pub accepted: u64,
    pub attempts: u64,
    pub acceptance_rate: f64,
    /// Mean over accepted samples; absent without an `eval.miou` node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_miou: Option<f64>,
    pub log: Vec<AttemptRecord>,
}

impl BatchSummary {
    pub fn load(dir: &Path) -> Result<Self, BuiltinError> {
        let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
        serde_json::from_str(&text).map_err(|e| BuiltinError::InvalidSpec(format!("summary: {e}")))
    }

    pub fn rejected(&self) -> u64 {
        self.attempts - self.accepted
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub manifest: DatasetManifest,
    pub summary: BatchSummary,
}

/// Output ports holding the dataset pair. Uses the `dataset.image` and
/// `dataset.mask` metadata keys, else the last `Image` and `Mask` outputs in
/// node id order.
pub fn dataset_ports(graph: &PipelineGraph, engine: &Engine) -> Result<(PortRef, PortRef), BatchError> {
    let find = |key: &str, dtype: DataType, what: &'static str| {
        if let Some(p) = graph.metadata.get(key).and_then(|s| PortRef::parse(s)) {
            return Ok(p);
        }
        let mut nodes: Vec<_> = graph.nodes.iter().collect();
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        nodes
            .iter()
            .rev()
            .find_map(|n| {
                let spec = engine.registry().spec(&n.module_id)?;
                let port = spec.outputs.iter().find(|p| p.dtype == dtype)?;
                Some(PortRef::new(&n.node_id, &port.name))
            })
            .ok_or(BatchError::NoDatasetPort(what))
    };
    Ok((
        find(DATASET_IMAGE_KEY, DataType::Image, "Image")?,
        find(DATASET_MASK_KEY, DataType::Mask, "Mask")?,
    ))
}

enum Attempt {
    Accepted { image: Value, mask: Value, miou: Option<f64> },
    Rejected { node_id: Option<String>, reason: String },
}

struct AttemptPlan<'a> {
    engine: &'a Engine,
    graph: &'a PipelineGraph,
    inputs: &'a Outputs,
    image: &'a PortRef,
    mask: &'a PortRef,
    eval: &'a [String],
}

fn run_attempt(p: &AttemptPlan<'_>, seed: u64) -> Result<Attempt, EngineError> {
    let AttemptPlan { engine, graph, inputs, eval, .. } = *p;
    let opts = ExecuteOptions {
        job_seed: seed,
        parallelism: 1,
        use_cache: false,
    };
    let mut report = engine.execute(graph, inputs, &opts, &NullSink::default(), &CancelToken::new());
    match report.status {
        RunStatus::Finished => {}
        RunStatus::Failed { node_id, error } if error.is_filter_reject() => {
            let reason = match &error {
                EngineError::NodeExecution { source, .. } => source.to_string(),
                other => other.to_string(),
            };
            return Ok(Attempt::Rejected { node_id, reason });
        }
        RunStatus::Failed { error, .. } => return Err(error),
        RunStatus::Cancelled => return Err(EngineError::Cancelled),
    }
    let miou = eval
        .iter()
        .filter_map(|node| match report.output(node, "miou") {
            Some(Value::Number(x)) => Some(*x),
            _ => None,
        })
        .next();
    let image = report.outputs.remove(p.image);
    let mask = report.outputs.remove(p.mask);
    match (image, mask) {
        (Some(image), Some(mask)) => Ok(Attempt::Accepted { image, mask, miou }),
        _ => Err(EngineError::Internal("dataset ports produced no value".into())),
    }
}

/// Runs attempts `0, 1, 2, ...` with seed `sample_seed(cfg.seed, i)` until
/// `cfg.count` are accepted, writing the dataset and `summary.json` under
/// `out_dir`. The output depends only on the pipeline, inputs, seed and count.
pub fn run_batch(
    engine: &Engine,
    graph: &PipelineGraph,
    inputs: &Outputs,
    out_dir: &Path,
    cfg: &BatchConfig,
) -> Result<BatchOutcome, BatchError> {
    if cfg.count == 0 {
        return Err(BatchError::ZeroCount);
    }
    // Fail on a bad graph or bindings before touching the output directory.
    engine
        .preflight(graph, inputs)
        .map_err(|source| BatchError::Engine { attempt: 0, source })?;
    let graph = materialize(graph, engine.registry());
    let (image_port, mask_port) = dataset_ports(&graph, engine)?;
    let pipeline_sha256 = pipeline_digest(&graph);
    let eval: Vec<String> = graph
        .nodes
        .iter()
        .filter(|n| n.module_id == EVAL_MODULE)
        .map(|n| n.node_id.clone())
        .collect();

    let mut writer = DatasetWriter::create(out_dir, cfg.overwrite)?;
    let mut classes = BTreeMap::new();
    let mut log = Vec::new();
    let mut mious = Vec::new();
    let budget = cfg.budget();
    let width = cfg.parallelism.max(1) as u64;
    let mut next = 0u64;
    let plan = AttemptPlan {
        engine,
        graph: &graph,
        inputs,
        image: &image_port,
        mask: &mask_port,
        eval: &eval,
    };

    'outer: while (writer.len() as u64) < cfg.count && next < budget {
        // Never schedule more than could still be accepted.
        let wanted = cfg.count - writer.len() as u64;
        let chunk: Vec<u64> = (next..budget.min(next + width.min(wanted))).collect();
        next += chunk.len() as u64;
        let results: Vec<Result<Attempt, EngineError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let plan = &plan;
                    s.spawn(move || run_attempt(plan, sample_seed(cfg.seed, i)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(EngineError::Internal("attempt panicked".into()))))
                .collect()
        });
        for (&attempt, result) in chunk.iter().zip(results) {
            let seed = sample_seed(cfg.seed, attempt);
            let mut record = AttemptRecord {
                attempt,
                seed,
                accepted: false,
                index: None,
                reason: None,
                node_id: None,
                miou: None,
            };
            match result.map_err(|source| BatchError::Engine { attempt, source })? {
                Attempt::Rejected { node_id, reason } => {
                    tracing::info!(attempt, ?node_id, %reason, "sample rejected");
                    record.node_id = node_id;
                    record.reason = Some(reason);
                }
                Attempt::Accepted { image, mask, miou } => {
                    let (Value::Image(image), Value::Mask(mask)) = (image, mask) else {
                        return Err(BatchError::Engine {
                            attempt,
                            source: EngineError::Internal(format!("{image_port} / {mask_port} are not Image / Mask")),
                        });
                    };
                    classes.extend(mask.class_table().iter().map(|(k, v)| (*k, v.clone())));
                    record.index = Some(writer.write_sample(&image, &mask, Some(seed))?);
                    record.accepted = true;
                    record.miou = miou;
                    mious.extend(miou);
                }
            }
            log.push(record);
            if writer.len() as u64 == cfg.count {
                break 'outer;
            }
        }
    }

    let accepted = writer.len() as u64;
    let attempts = log.len() as u64;
    let summary = BatchSummary {
        pipeline_sha256: pipeline_sha256.clone(),
        seed: cfg.seed,
        requested: cfg.count,
        accepted,
        attempts,
        acceptance_rate: if attempts == 0 { 0.0 } else { accepted as f64 / attempts as f64 },
        mean_miou: (!mious.is_empty()).then(|| mious.iter().sum::<f64>() / mious.len() as f64),
        log,
    };
    let manifest = writer.finish(&classes, Some(pipeline_sha256))?;
    fs::write(out_dir.join(SUMMARY_FILE), canonical::pretty_of(&summary)).map_err(BuiltinError::from)?;
    if accepted < cfg.count {
        return Err(BatchError::RetryBudgetExhausted {
            requested: cfg.count,
            accepted,
            attempts,
            rate: summary.acceptance_rate,
        });
    }
    Ok(BatchOutcome { manifest, summary })
}
