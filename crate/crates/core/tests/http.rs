//! The HTTP API against an in-process server.

mod common;

use std::net::SocketAddr;
use std::time::Duration;

use common::{client, get_json, is_terminal, read_sse, submit, wait_state};
use reqwest::blocking::Client;
use segflow::builtins::{builtin_registry, scenario_pipeline, synth_only_pipeline, ScenarioConfig};
use segflow::canonical::sha256_hex;
use segflow::engine::{check_event_grammar, EventKind, RunEvent};
use segflow::graph::{serialize_pipeline, NodeInstance, ParamValue, PipelineGraph};
use segflow::server::{self, ServerConfig, ServerHandle, ServiceConfig};
use serde_json::{json, Value as Json};

const LIMIT: Duration = Duration::from_secs(60);

fn start(service: ServiceConfig) -> (ServerHandle, String) {
    let handle = server::start(&ServerConfig {
        addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        data_dir: None,
        service,
    })
    .unwrap();
    let base = format!("{}/api/v1", handle.base_url());
    (handle, base)
}

fn canonical(g: &PipelineGraph) -> String {
    serialize_pipeline(g, &builtin_registry()).unwrap()
}

fn small_scenario() -> String {
    canonical(&scenario_pipeline(&ScenarioConfig {
        classes: "car:1,truck:1".into(),
        width: 48,
        height: 48,
        ..ScenarioConfig::default()
    }))
}

/// prompt -> d0 -> d1 -> ... : `steps` delays of `ms` each. Cancellation
/// lands between nodes, so short steps keep it prompt.
fn slow_pipeline(steps: usize, ms: i64) -> String {
    let mut g = PipelineGraph::new("slow");
    g.add_node(NodeInstance::new("p", "prompt.build", 1));
    let mut prev = ("p".to_string(), "prompt");
    for i in 0..steps {
        let id = format!("d{i}");
        g.add_node(NodeInstance::new(&id, "util.delay", 1).with_param("ms", ParamValue::Int(ms)));
        g.connect((&prev.0, prev.1), (&id, "text"));
        prev = (id, "text");
    }
    canonical(&g)
}

fn cyclic_pipeline() -> String {
    json!({
        "format_version": 1, "name": "loop", "metadata": {},
        "nodes": [
            {"node_id": "a", "module_id": "util.delay", "module_version": 1},
            {"node_id": "b", "module_id": "util.delay", "module_version": 1}
        ],
        "edges": [
            {"from": {"node": "a", "port": "text"}, "to": {"node": "b", "port": "text"}},
            {"from": {"node": "b", "port": "text"}, "to": {"node": "a", "port": "text"}}
        ]
    })
    .to_string()
}

fn post(http: &Client, url: String, body: String) -> (u16, Json) {
    let reply = http.post(url).body(body).send().unwrap();
    let status = reply.status().as_u16();
    let text = reply.text().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Json::String(text)))
}

fn events(http: &Client, base: &str, job: &str) -> Vec<RunEvent> {
    let body = http.get(format!("{base}/jobs/{job}/events")).send().unwrap();
    read_sse(body, usize::MAX).iter().map(|f| RunEvent::from_json(&f.data).unwrap()).collect()
}

#[test]
fn modules_are_sorted_and_labelled() {
    let (_h, base) = start(ServiceConfig::default());
    let modules = get_json(&client(), &format!("{base}/modules"));
    let ids: Vec<&str> = modules.as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let seg: Vec<&str> = modules
        .as_array()
        .unwrap()
        .iter()
        .filter(|m| m["labels"].as_array().unwrap().iter().any(|l| l == "segmentation"))
        .map(|m| m["id"].as_str().unwrap())
        .collect();
    assert_eq!(seg, ["mask.postprocess", "seg.coarse", "seg.refine"]);
}

#[test]
fn validate_endpoint_reports_rules_and_parse_positions() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let (code, report) = post(&http, format!("{base}/pipelines/validate"), small_scenario());
    assert_eq!((code, report["ok"].clone()), (200, json!(true)));
    let (code, report) = post(&http, format!("{base}/pipelines/validate"), cyclic_pipeline());
    assert_eq!(code, 200);
    assert_eq!(report["ok"], false);
    assert_eq!(report["diagnostics"][0]["rule"], "cycle");
    let (code, err) = post(&http, format!("{base}/pipelines/validate"), "{\n  \"nodes\": [".into());
    assert_eq!(code, 400);
    assert_eq!(err["line"], 2, "{err}");
    assert!(err["column"].is_u64(), "{err}");
}

#[test]
fn stored_pipelines_are_content_addressed() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let canonical_text = small_scenario();
    let (code, first) = post(&http, format!("{base}/pipelines"), canonical_text.clone());
    assert_eq!(code, 200);
    let id = first["pipeline_id"].as_str().unwrap();
    assert_eq!(id, sha256_hex(canonical_text.as_bytes()));

    // Same graph, different node order and whitespace.
    let mut doc: Json = serde_json::from_str(&canonical_text).unwrap();
    doc["nodes"].as_array_mut().unwrap().reverse();
    let (_, second) = post(&http, format!("{base}/pipelines"), doc.to_string());
    assert_eq!(second["pipeline_id"], first["pipeline_id"]);

    let text = http.get(format!("{base}/pipelines/{id}")).send().unwrap().text().unwrap();
    assert_eq!(text, canonical_text);
    assert_eq!(http.get(format!("{base}/pipelines/feed")).send().unwrap().status().as_u16(), 404);
}

#[test]
fn invalid_submission_is_rejected_and_not_persisted() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let (code, err) = post(&http, format!("{base}/jobs"), json!({ "pipeline": cyclic_pipeline() }).to_string());
    assert_eq!(code, 422);
    assert_eq!(err["error"], "ValidationFailed");
    assert!(err["report"]["diagnostics"].as_array().unwrap().iter().any(|d| d["rule"] == "cycle"));
    assert_eq!(get_json(&http, &format!("{base}/jobs")), json!([]));

    let (code, _) = post(&http, format!("{base}/jobs"), "not json".into());
    assert_eq!(code, 400);
    let (code, _) = post(&http, format!("{base}/jobs"), json!({ "pipeline_id": "0000" }).to_string());
    assert_eq!(code, 404);
}

#[test]
fn finished_job_streams_events_and_serves_artifacts() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let (job, position) = submit(&http, &base, &small_scenario(), 9, "alice");
    assert_eq!(position, 0);
    let log = events(&http, &base, &job);
    let graph = segflow::graph::deserialize_pipeline(small_scenario().as_bytes()).unwrap();
    check_event_grammar(&log, &graph).unwrap();
    assert_eq!(log.first().unwrap().kind, EventKind::JobQueued { position: 0 });
    assert_eq!(log.last().unwrap().kind, EventKind::JobFinished);

    let status = get_json(&http, &format!("{base}/jobs/{job}"));
    assert_eq!(status["state"], "Finished");
    assert_eq!(status["client_id"], "alice");
    assert_eq!(status["progress"]["finished"], status["progress"]["total"]);

    // Every announced digest matches the served bytes.
    for event in &log {
        if let EventKind::NodeFinished { node_id, outputs, .. } = &event.kind {
            for (port, digest) in outputs {
                let reply = http.get(format!("{base}/jobs/{job}/artifacts/{node_id}/{port}")).send().unwrap();
                assert_eq!(reply.status().as_u16(), 200);
                let bytes = reply.bytes().unwrap();
                assert_eq!(&sha256_hex(&bytes), digest, "{node_id}.{port}");
            }
        }
    }
    let image = http.get(format!("{base}/jobs/{job}/artifacts/gate/image")).send().unwrap();
    assert_eq!(image.headers()["content-type"], "image/png");
    assert_eq!(http.get(format!("{base}/jobs/{job}/artifacts/ghost/image")).send().unwrap().status().as_u16(), 404);
    assert_eq!(http.get(format!("{base}/jobs/{job}/artifacts/gate/nope")).send().unwrap().status().as_u16(), 404);
    assert_eq!(http.get(format!("{base}/jobs/nope")).send().unwrap().status().as_u16(), 404);
}

#[test]
fn reconnect_resumes_without_gaps_or_duplicates() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let (job, _) = submit(&http, &base, &small_scenario(), 3, "bob");
    let first = read_sse(http.get(format!("{base}/jobs/{job}/events")).send().unwrap(), 3);
    assert_eq!(first.len(), 3);
    let last_id = first.last().unwrap().id.clone().unwrap();
    let rest = read_sse(
        http.get(format!("{base}/jobs/{job}/events"))
            .header("Last-Event-ID", last_id)
            .send()
            .unwrap(),
        usize::MAX,
    );
    let seqs: Vec<u64> = first.iter().chain(&rest).map(|f| f.data["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    assert!(rest.last().unwrap().event.as_deref() == Some("JobFinished"));

    // `since` replays the tail of a finished job.
    let tail = read_sse(http.get(format!("{base}/jobs/{job}/events?since=4")).send().unwrap(), usize::MAX);
    assert_eq!(tail.first().unwrap().data["seq"], 4);
    assert_eq!(tail.len(), seqs.len() - 4);
}

#[test]
fn cancel_queued_and_running_jobs() {
    let (_h, base) = start(ServiceConfig {
        workers: 1,
        ..ServiceConfig::default()
    });
    let http = client();
    let (running, _) = submit(&http, &base, &slow_pipeline(300, 200), 1, "c");
    wait_state(&http, &base, &running, |s| s == "Running", LIMIT);
    let (queued, position) = submit(&http, &base, &slow_pipeline(1, 10), 2, "c");
    assert_eq!(position, 1);

    let (code, reply) = post(&http, format!("{base}/jobs/{queued}/cancel"), String::new());
    assert_eq!((code, reply["outcome"].as_str()), (200, Some("acknowledged")));
    assert_eq!(get_json(&http, &format!("{base}/jobs/{queued}"))["state"], "Cancelled");
    let (code, _) = post(&http, format!("{base}/jobs/{queued}/cancel"), String::new());
    assert_eq!(code, 409);

    let (code, _) = post(&http, format!("{base}/jobs/{running}/cancel"), String::new());
    assert_eq!(code, 200);
    let status = wait_state(&http, &base, &running, is_terminal, LIMIT);
    assert_eq!(status["state"], "Cancelled");
    let log = events(&http, &base, &running);
    assert_eq!(log.last().unwrap().kind, EventKind::JobCancelled);
    assert_eq!(http.get(format!("{base}/jobs/{running}/artifacts/d299/text")).send().unwrap().status().as_u16(), 409);
}

#[test]
fn queue_cap_and_body_limit() {
    let (_h, base) = start(ServiceConfig {
        workers: 1,
        queue_cap: 1,
        max_body_bytes: 512 * 1024,
        ..ServiceConfig::default()
    });
    let http = client();
    let (busy, _) = submit(&http, &base, &slow_pipeline(300, 200), 1, "c");
    wait_state(&http, &base, &busy, |s| s == "Running", LIMIT);
    submit(&http, &base, &slow_pipeline(1, 10), 2, "c");
    let (code, err) = post(&http, format!("{base}/jobs"), json!({ "pipeline": slow_pipeline(1, 10) }).to_string());
    assert_eq!(code, 429, "{err}");
    assert_eq!(err["error"], "QueueFull");

    let huge = json!({ "pipeline": slow_pipeline(1, 10), "pad": "x".repeat(600 * 1024) }).to_string();
    let (code, _) = post(&http, format!("{base}/jobs"), huge);
    assert_eq!(code, 413);
    post(&http, format!("{base}/jobs/{busy}/cancel"), String::new());
}

#[test]
fn external_inputs_over_http() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let pipeline = canonical(&synth_only_pipeline());
    let prompt = r#"{"canvas":{"height":32,"width":32},"classes":[{"count":1,"name":"car"}],"style":"plain"}"#;
    let body = json!({
        "pipeline": pipeline,
        "seed": 4,
        "inputs": { "scene.prompt": { "dtype": "text", "text": prompt } },
    });
    let (code, reply) = post(&http, format!("{base}/jobs"), body.to_string());
    assert_eq!(code, 202, "{reply}");
    let job = reply["job_id"].as_str().unwrap();
    assert_eq!(wait_state(&http, &base, job, is_terminal, LIMIT)["state"], "Finished");

    let (code, err) = post(&http, format!("{base}/jobs"), json!({ "pipeline": pipeline }).to_string());
    assert_eq!(code, 422, "{err}");
    let wrong = json!({ "pipeline": pipeline, "inputs": { "scene.prompt": { "dtype": "number", "text": "1" } } });
    let (code, _) = post(&http, format!("{base}/jobs"), wrong.to_string());
    assert_eq!(code, 422);
}

#[test]
fn failing_node_is_reported() {
    let (_h, base) = start(ServiceConfig::default());
    let http = client();
    let pipeline = canonical(&synth_only_pipeline());
    let body = json!({ "pipeline": pipeline, "inputs": { "scene.prompt": { "dtype": "text", "text": "nonsense" } } });
    let (_, reply) = post(&http, format!("{base}/jobs"), body.to_string());
    let job = reply["job_id"].as_str().unwrap();
    let status = wait_state(&http, &base, job, is_terminal, LIMIT);
    assert_eq!(status["state"], "Failed");
    assert_eq!(status["failed_node"], "scene");
    let log = events(&http, &base, job);
    assert!(matches!(&log.last().unwrap().kind, EventKind::JobFailed { node_id: Some(n), .. } if n == "scene"));
    assert_eq!(http.get(format!("{base}/jobs/{job}/artifacts/scene/image")).send().unwrap().status().as_u16(), 409);
}
