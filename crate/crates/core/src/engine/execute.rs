use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use crate::graph::{materialize, predecessors, ModuleRegistry, NodeInstance, PipelineGraph, PortRef};
use crate::module::{ModuleContext, PortValues};
use crate::seed;
use crate::value::Value;

use super::cache::{cache_key, ResultCache};
use super::cancel::CancelToken;
use super::events::{EventKind, EventSink, NullSink};
use super::plan::plan;
use super::EngineError;

/// Values keyed by `(node, port)`.
pub type Outputs = BTreeMap<PortRef, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecuteOptions {
    pub job_seed: u64,
    /// Worker count, at least 1.
    pub parallelism: usize,
    pub use_cache: bool,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        Self {
            job_seed: 0,
            parallelism: 1,
            use_cache: true,
        }
    }
}

impl ExecuteOptions {
    pub fn seeded(job_seed: u64) -> Self {
        Self {
            job_seed,
            ..Self::default()
        }
    }

    pub fn parallelism(mut self, workers: usize) -> Self {
        self.parallelism = workers;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Finished,
    Failed { node_id: Option<String>, error: EngineError },
    Cancelled,
}

/// Result of one execution. `outputs` holds every node that finished, also
/// when the run failed or was cancelled.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: RunStatus,
    pub outputs: Outputs,
    pub digests: BTreeMap<PortRef, String>,
    /// Module invocations, i.e. nodes not served from the cache.
    pub invocations: usize,
    pub cache_hits: usize,
}

impl RunReport {
    pub fn output(&self, node: &str, port: &str) -> Option<&Value> {
        self.outputs.get(&PortRef::new(node, port))
    }

    pub fn into_result(self) -> Result<Outputs, EngineError> {
        match self.status {
            RunStatus::Finished => Ok(self.outputs),
            RunStatus::Failed { error, .. } => Err(error),
            RunStatus::Cancelled => Err(EngineError::Cancelled),
        }
    }
}

/// Executes pipelines against a registry, sharing one result cache across
/// all runs.
#[derive(Clone)]
pub struct Engine {
    registry: Arc<ModuleRegistry>,
    cache: Arc<ResultCache>,
}

struct Sched {
    ready: BTreeSet<String>,
    pending: BTreeMap<String, usize>,
    running: usize,
    stop: bool,
    failure: Option<(Option<String>, EngineError)>,
    values: BTreeMap<PortRef, (Value, String)>,
    invocations: usize,
    cache_hits: usize,
}

struct NodeResult {
    outputs: Vec<(String, Value, String)>,
    elapsed_ms: u64,
    cache_hit: bool,
}

impl Engine {
    pub fn new(registry: Arc<ModuleRegistry>) -> Self {
        Self::with_cache(registry, Arc::new(ResultCache::default()))
    }

    pub fn with_cache(registry: Arc<ModuleRegistry>, cache: Arc<ResultCache>) -> Self {
        Self { registry, cache }
    }

    pub fn registry(&self) -> &Arc<ModuleRegistry> {
        &self.registry
    }

    pub fn cache(&self) -> &Arc<ResultCache> {
        &self.cache
    }

    /// Runs without events or cancellation.
    pub fn run(&self, graph: &PipelineGraph, inputs: &Outputs, opts: &ExecuteOptions) -> Result<Outputs, EngineError> {
        self.execute(graph, inputs, opts, &NullSink::default(), &CancelToken::new())
            .into_result()
    }

    /// Validates, checks `inputs` against the declared external inputs, then
    /// runs every node on a pool of `opts.parallelism` workers. Always ends
    /// with exactly one terminal event on `sink`.
    pub fn execute(
        &self,
        graph: &PipelineGraph,
        inputs: &Outputs,
        opts: &ExecuteOptions,
        sink: &dyn EventSink,
        cancel: &CancelToken,
    ) -> RunReport {
        let mut report = RunReport {
            status: RunStatus::Finished,
            outputs: Outputs::new(),
            digests: BTreeMap::new(),
            invocations: 0,
            cache_hits: 0,
        };
        let fail = |report: &mut RunReport, node_id: Option<String>, error: EngineError| {
            cancel.finish(
                sink,
                Some(EventKind::JobFailed {
                    node_id: node_id.clone(),
                    error: error.to_string(),
                }),
            );
            report.status = RunStatus::Failed { node_id, error };
        };
        if cancel.is_cancelled() {
            cancel.finish(sink, None);
            report.status = RunStatus::Cancelled;
            return report;
        }
        if let Err(e) = plan(graph, &self.registry) {
            fail(&mut report, None, e);
            return report;
        }
        let graph = materialize(graph, &self.registry);
        let external = match self.check_inputs(&graph, inputs) {
            Ok(external) => external,
            Err((node, e)) => {
                fail(&mut report, node, e);
                return report;
            }
        };

        let preds = predecessors(&graph);
        let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (node, ps) in &preds {
            for p in ps {
                succs.entry(p).or_default().push(node);
            }
        }
        let nodes: BTreeMap<&str, &NodeInstance> = graph.nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
        let feeds: BTreeMap<&PortRef, &PortRef> = graph.edges.iter().map(|e| (&e.to, &e.from)).collect();
        let state = Mutex::new(Sched {
            ready: preds.iter().filter(|(_, p)| p.is_empty()).map(|(n, _)| n.to_string()).collect(),
            pending: preds.iter().map(|(n, p)| (n.to_string(), p.len())).collect(),
            running: 0,
            stop: false,
            failure: None,
            values: BTreeMap::new(),
            invocations: 0,
            cache_hits: 0,
        });
        let wake = Condvar::new();

        let worker = || {
            let mut guard = state.lock().unwrap();
            loop {
                if guard.stop || (guard.ready.is_empty() && guard.running == 0) {
                    break;
                }
                let Some(id) = guard.ready.pop_first() else {
                    guard = wake.wait(guard).unwrap();
                    continue;
                };
                if !cancel.start_if_live(sink, &id) {
                    guard.stop = true;
                    break;
                }
                guard.running += 1;
                let node = nodes[id.as_str()];
                let mut node_inputs = BTreeMap::new();
                let spec = self.registry.spec(&node.module_id).expect("validated");
                for port in &spec.inputs {
                    let sink_ref = PortRef::new(&id, &port.name);
                    let fed = match feeds.get(&sink_ref) {
                        Some(src) => guard.values.get(*src),
                        None => external.get(&sink_ref),
                    };
                    if let Some(fed) = fed {
                        node_inputs.insert(port.name.clone(), fed.clone());
                    }
                }
                drop(guard);
                let result = self.run_node(node, node_inputs, opts);
                guard = state.lock().unwrap();
                guard.running -= 1;
                match result {
                    Ok(done) => {
                        if done.cache_hit {
                            guard.cache_hits += 1;
                        } else {
                            guard.invocations += 1;
                        }
                        let values: PortValues = done.outputs.iter().map(|(p, v, _)| (p.clone(), v.clone())).collect();
                        sink.record_outputs(&id, &values);
                        let digests = done.outputs.iter().map(|(p, _, d)| (p.clone(), d.clone())).collect();
                        for (port, value, digest) in done.outputs {
                            guard.values.insert(PortRef::new(&id, &port), (value, digest));
                        }
                        cancel.emit(
                            sink,
                            EventKind::NodeFinished {
                                node_id: id.clone(),
                                outputs: digests,
                                elapsed_ms: done.elapsed_ms,
                                cache_hit: done.cache_hit,
                            },
                        );
                        for next in succs.get(id.as_str()).into_iter().flatten() {
                            let left = guard.pending.get_mut(*next).expect("known node");
                            *left -= 1;
                            if *left == 0 {
                                guard.ready.insert(next.to_string());
                            }
                        }
                    }
                    Err(e) => {
                        if guard.failure.is_none() {
                            guard.failure = Some((Some(id.clone()), e));
                        }
                        guard.stop = true;
                    }
                }
                wake.notify_all();
            }
            wake.notify_all();
        };
        let workers = opts.parallelism.clamp(1, graph.nodes.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });

        let sched = state.into_inner().unwrap();
        report.invocations = sched.invocations;
        report.cache_hits = sched.cache_hits;
        for (port, (value, digest)) in sched.values {
            report.digests.insert(port.clone(), digest);
            report.outputs.insert(port, value);
        }
        let unfinished = sched.pending.values().any(|&n| n > 0) || !sched.ready.is_empty();
        match sched.failure {
            Some((node_id, error)) => fail(&mut report, node_id, error),
            None => {
                if cancel.finish(sink, None) == EventKind::JobCancelled {
                    report.status = RunStatus::Cancelled;
                } else if unfinished && !sched.stop {
                    report.status = RunStatus::Failed {
                        node_id: None,
                        error: EngineError::Internal("scheduler stalled".into()),
                    };
                }
            }
        }
        report
    }

    /// Checks the graph and the external inputs without running anything.
    pub fn preflight(&self, graph: &PipelineGraph, inputs: &Outputs) -> Result<(), EngineError> {
        plan(graph, &self.registry)?;
        let graph = materialize(graph, &self.registry);
        self.check_inputs(&graph, inputs).map(|_| ()).map_err(|(_, e)| e)
    }

    /// Supplied external inputs, keyed by sink port, after checking that
    /// every declared one is present with the declared type and nothing
    /// else was given.
    fn check_inputs(
        &self,
        graph: &PipelineGraph,
        inputs: &Outputs,
    ) -> Result<BTreeMap<PortRef, (Value, String)>, (Option<String>, EngineError)> {
        let declared: BTreeSet<PortRef> = graph.external_inputs().into_iter().flatten().collect();
        if let Some(extra) = inputs.keys().find(|p| !declared.contains(*p)) {
            return Err((Some(extra.node.clone()), EngineError::UnexpectedExternalInput(extra.clone())));
        }
        let mut out = BTreeMap::new();
        for port in declared {
            let node = graph.node(&port.node).expect("validated");
            let spec = self.registry.spec(&node.module_id).expect("validated");
            let expected = &spec.input(&port.port).expect("validated").dtype;
            match inputs.get(&port) {
                None if spec.input(&port.port).is_some_and(|p| !p.required) => {}
                None => return Err((Some(port.node.clone()), EngineError::MissingExternalInput(port))),
                Some(v) if v.dtype() != *expected => {
                    return Err((
                        Some(port.node.clone()),
                        EngineError::TypeMismatchAtRuntime {
                            port: port.clone(),
                            expected: expected.clone(),
                            actual: v.dtype(),
                        },
                    ))
                }
                Some(v) => {
                    out.insert(port, (v.clone(), v.digest()));
                }
            }
        }
        Ok(out)
    }

    fn run_node(
        &self,
        node: &NodeInstance,
        fed: BTreeMap<String, (Value, String)>,
        opts: &ExecuteOptions,
    ) -> Result<NodeResult, EngineError> {
        let started = Instant::now();
        let module = self.registry.get(&node.module_id).expect("validated");
        let input_digests: BTreeMap<String, String> = fed.iter().map(|(k, (_, d))| (k.clone(), d.clone())).collect();
        let inputs: PortValues = fed.into_iter().map(|(k, (v, _))| (k, v)).collect();
        let key = cache_key(node, &input_digests, opts.job_seed);
        let cached = if opts.use_cache { self.cache.get(&key) } else { None };
        let cache_hit = cached.is_some();
        let outputs = match cached {
            Some(outputs) => outputs,
            None => {
                let ctx = ModuleContext {
                    inputs,
                    params: node.params.clone(),
                    seed: seed::node_seed(opts.job_seed, &node.node_id),
                };
                let outputs = module.run(&ctx).map_err(|source| EngineError::NodeExecution {
                    node_id: node.node_id.clone(),
                    source,
                })?;
                check_outputs(node, module.spec(), &outputs)?;
                if opts.use_cache {
                    self.cache.put(key, outputs.clone());
                }
                outputs
            }
        };
        let outputs = outputs
            .into_iter()
            .map(|(port, value)| {
                let digest = value.digest();
                (port, value, digest)
            })
            .collect();
        Ok(NodeResult {
            outputs,
            elapsed_ms: started.elapsed().as_millis() as u64,
            cache_hit,
        })
    }
}

fn check_outputs(node: &NodeInstance, spec: &crate::graph::ModuleSpec, outputs: &PortValues) -> Result<(), EngineError> {
    for port in &spec.outputs {
        let at = PortRef::new(&node.node_id, &port.name);
        match outputs.get(&port.name) {
            None => return Err(EngineError::MissingOutput(at)),
            Some(v) if v.dtype() != port.dtype => {
                return Err(EngineError::TypeMismatchAtRuntime {
                    port: at,
                    expected: port.dtype.clone(),
                    actual: v.dtype(),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = outputs.keys().find(|k| spec.output(k).is_none()) {
        return Err(EngineError::UnexpectedOutput(PortRef::new(&node.node_id, extra)));
    }
    Ok(())
}
