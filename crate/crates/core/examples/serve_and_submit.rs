//! Start the job server on an ephemeral port, submit the scenario pipeline
//! from two clients over HTTP, stream one job's events and fetch its mask.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;

use segflow::builtins::{builtin_registry, scenario_pipeline, ScenarioConfig};
use segflow::graph::serialize_pipeline;
use segflow::server::{self, ServerConfig, ServiceConfig, CLIENT_ID_HEADER};
use serde_json::{json, Value as Json};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let handle = server::start(&ServerConfig {
        addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        data_dir: None,
        service: ServiceConfig::default(),
    })?;
    let base = format!("{}/api/v1", handle.base_url());
    println!("server at {base}");

    let http = reqwest::blocking::Client::new();
    let modules: Json = serde_json::from_str(&http.get(format!("{base}/modules")).send()?.text()?)?;
    println!("{} modules registered", modules.as_array().map_or(0, Vec::len));

    let pipeline = serialize_pipeline(&scenario_pipeline(&ScenarioConfig::default()), &builtin_registry())?;
    let mut jobs = Vec::new();
    for (client, seed) in [("alice", 1u64), ("bob", 2), ("alice", 3)] {
        let reply = http
            .post(format!("{base}/jobs"))
            .header(CLIENT_ID_HEADER, client)
            .body(json!({ "pipeline": pipeline, "seed": seed }).to_string())
            .send()?;
        let reply: Json = serde_json::from_str(&reply.text()?)?;
        println!("{client} submitted {} at position {}", reply["job_id"], reply["position"]);
        jobs.push(reply["job_id"].as_str().unwrap_or_default().to_string());
    }

    // Server-sent events: `id:`, `event:` and `data:` lines per frame.
    let stream = http.get(format!("{base}/jobs/{}/events", jobs[2])).send()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if let Some(name) = line.strip_prefix("event:") {
            print!("{}", name.trim());
        } else if let Some(data) = line.strip_prefix("data:") {
            let event: Json = serde_json::from_str(data.trim())?;
            println!(" seq={} {}", event["seq"], event["payload"].get("node_id").unwrap_or(&Json::Null));
        }
    }

    let status: Json = serde_json::from_str(&http.get(format!("{base}/jobs/{}", jobs[2])).send()?.text()?)?;
    println!("final state {}", status["state"]);
    let mask = http.get(format!("{base}/jobs/{}/artifacts/post/mask", jobs[2])).send()?;
    let content_type = mask.headers().get("content-type").cloned();
    println!("post.mask: {:?}, {} bytes", content_type, mask.bytes()?.len());

    handle.stop();
    Ok(())
}
