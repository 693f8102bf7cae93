//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segflow::canonical::sha256_hex;
use segflow::graph::{DataType, ModuleRegistry, NodeInstance, ParamKind, ParamValue, PipelineGraph};
use serde_json::Value as Json;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_segflow")
}

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn pipeline_file(name: &str) -> PathBuf {
    crate_dir().join("pipelines").join(name)
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("tests/fixtures").join(rel)
}

/// Runs the CLI and returns `(exit code, stdout, stderr)`.
pub fn segflow(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn segflow");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Relative path → sha256 of every file under `root`.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn random_param(rng: &mut ChaCha8Rng, kind: ParamKind, min: Option<f64>, max: Option<f64>, choices: &Option<Vec<String>>) -> ParamValue {
    match kind {
        ParamKind::Int => {
            let lo = min.unwrap_or(-1000.0) as i64;
            let hi = max.unwrap_or(1000.0).min(lo as f64 + 5000.0) as i64;
            ParamValue::Int(rng.random_range(lo..=hi))
        }
        ParamKind::Float => {
            let lo = min.unwrap_or(-10.0);
            let hi = max.unwrap_or(10.0);
            ParamValue::Float(lo + (hi - lo) * rng.random::<f64>())
        }
        ParamKind::Bool => ParamValue::Bool(rng.random()),
        ParamKind::Enum => {
            let c = choices.as_ref().expect("enum has choices");
            ParamValue::Str(c[rng.random_range(0..c.len())].clone())
        }
        ParamKind::String => {
            let len = rng.random_range(0..12);
            ParamValue::Str((0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
        }
    }
}

/// A random graph that passes validation against `registry`: each required
/// input is fed by an earlier node with a matching output type when one
/// exists, else declared as an external input. Optional inputs are fed at
/// random. Parameters are a random subset, within range.
pub fn random_valid_graph(registry: &ModuleRegistry, seed: u64, max_nodes: usize) -> PipelineGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = registry.specs();
    let n = rng.random_range(1..=max_nodes.max(1));
    let mut graph = PipelineGraph::new(&format!("random-{seed}"));
    let mut outputs: Vec<(String, String, DataType)> = Vec::new();
    let mut external = Vec::new();
    for i in 0..n {
        let spec = specs[rng.random_range(0..specs.len())];
        let id = format!("n{i}_{}", spec.id.replace('.', "_"));
        let mut node = NodeInstance::new(&id, &spec.id, spec.version);
        for hp in &spec.hyperparams {
            if rng.random_bool(0.5) {
                let v = random_param(&mut rng, hp.kind, hp.min, hp.max, &hp.choices);
                node.params.insert(hp.name.clone(), v);
            }
        }
        graph.add_node(node);
        for input in &spec.inputs {
            let sources: Vec<_> = outputs.iter().filter(|(_, _, t)| t.connects_to(&input.dtype)).collect();
            let feed = !sources.is_empty() && (input.required || rng.random_bool(0.5));
            if feed {
                let (from, port, _) = sources[rng.random_range(0..sources.len())].clone();
                graph.connect((&from, &port), (&id, &input.name));
            } else if input.required {
                external.push(format!("{id}.{}", input.name));
            }
        }
        for out in &spec.outputs {
            outputs.push((id.clone(), out.name.clone(), out.dtype.clone()));
        }
    }
    if !external.is_empty() {
        graph.metadata.insert("external_inputs".into(), external.join(","));
    }
    if rng.random_bool(0.3) {
        graph.metadata.insert("note".into(), format!("seed {seed}"));
    }
    graph
}

/// The same graph as JSON but in a non-canonical shape: shuffled node and
/// edge order, compact whitespace.
pub fn scrambled_json(graph: &PipelineGraph, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut g = graph.clone();
    g.nodes.shuffle(&mut rng);
    g.edges.shuffle(&mut rng);
    serde_json::to_string(&g).unwrap()
}

/// A `segflow serve` child process on an ephemeral port.
pub struct ServerProcess {
    pub child: Child,
    pub base: String,
}

impl ServerProcess {
    pub fn start(data_dir: &Path, workers: usize) -> Self {
        Self::start_with(&[
            "serve",
            "--port",
            "0",
            "--workers",
            &workers.to_string(),
            "--data-dir",
            data_dir.to_str().unwrap(),
        ])
    }

    pub fn start_with(args: &[&str]) -> Self {
        Self::start_env(args, &[])
    }

    pub fn start_env(args: &[&str], env: &[(&str, &str)]) -> Self {
        let mut child = Command::new(bin())
            .args(args)
            .envs(env.iter().copied())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Self {
            child,
            base: format!("{base}/api/v1"),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    /// SIGTERM and wait; returns the exit code.
    pub fn terminate(mut self) -> Option<i32> {
        let _ = Command::new("kill").arg("-TERM").arg(self.child.id().to_string()).status();
        self.child.wait().unwrap().code()
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(120)).build().unwrap()
}

pub fn get_json(http: &reqwest::blocking::Client, url: &str) -> Json {
    serde_json::from_str(&http.get(url).send().unwrap().text().unwrap()).unwrap()
}

pub fn submit(http: &reqwest::blocking::Client, base: &str, pipeline: &str, seed: u64, client_id: &str) -> (String, u64) {
    let reply = http
        .post(format!("{base}/jobs"))
        .header("x-client-id", client_id)
        .body(serde_json::json!({ "pipeline": pipeline, "seed": seed }).to_string())
        .send()
        .unwrap();
    assert_eq!(reply.status().as_u16(), 202);
    let doc: Json = serde_json::from_str(&reply.text().unwrap()).unwrap();
    (doc["job_id"].as_str().unwrap().to_string(), doc["position"].as_u64().unwrap())
}

pub fn wait_state(http: &reqwest::blocking::Client, base: &str, job: &str, done: impl Fn(&str) -> bool, limit: Duration) -> Json {
    let start = Instant::now();
    loop {
        let status = get_json(http, &format!("{base}/jobs/{job}"));
        if done(status["state"].as_str().unwrap_or_default()) {
            return status;
        }
        assert!(start.elapsed() < limit, "job {job} stuck in {status}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn is_terminal(state: &str) -> bool {
    matches!(state, "Finished" | "Failed" | "Cancelled")
}

/// One server-sent event frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SseFrame {
    pub id: Option<String>,
    pub event: Option<String>,
    pub data: Json,
}

/// Reads frames until the stream ends or `limit` frames were read.
pub fn read_sse(body: impl Read, limit: usize) -> Vec<SseFrame> {
    let mut frames = Vec::new();
    let (mut id, mut event, mut data) = (None, None, String::new());
    for line in BufReader::new(body).lines() {
        let Ok(line) = line else { break };
        if line.is_empty() {
            if !data.is_empty() {
                frames.push(SseFrame {
                    id: id.take(),
                    event: event.take(),
                    data: serde_json::from_str(&data).unwrap(),
                });
                data.clear();
                if frames.len() == limit {
                    break;
                }
            }
            continue;
        }
        if let Some(v) = line.strip_prefix("id:") {
            id = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("event:") {
            event = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("data:") {
            data.push_str(v.trim_start());
        }
    }
    frames
}
