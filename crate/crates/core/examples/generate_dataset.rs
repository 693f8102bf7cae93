//! Generate a small filtered dataset with the batch driver. One in five
//! scenes drops a class; the verifier and gate reject those samples.
//!
//! `cargo run --example generate_dataset -- [out_dir] [count]`

use std::sync::Arc;

use segflow::batch::{run_batch, BatchConfig};
use segflow::builtins::{builtin_registry, scenario_pipeline, ScenarioConfig};
use segflow::engine::{Engine, Outputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("segflow-dataset").display().to_string());
    let count: u64 = args.next().map_or(Ok(20), |s| s.parse())?;

    let graph = scenario_pipeline(&ScenarioConfig {
        failure_rate: 0.2,
        ..ScenarioConfig::default()
    });
    let engine = Engine::new(Arc::new(builtin_registry()));
    let cfg = BatchConfig::new(11, count).parallelism(4).overwrite(true);
    let outcome = run_batch(&engine, &graph, &Outputs::new(), out.as_ref(), &cfg)?;

    let s = &outcome.summary;
    println!("{} samples in {out}", outcome.manifest.count);
    println!("attempts {} accepted {} rejected {}", s.attempts, s.accepted, s.rejected());
    println!("acceptance rate {:.3}", s.acceptance_rate);
    if let Some(m) = s.mean_miou {
        println!("mean mIoU {m:.4}");
    }
    for r in s.log.iter().filter(|r| !r.accepted).take(3) {
        println!("  attempt {} rejected at {:?}: {}", r.attempt, r.node_id, r.reason.as_deref().unwrap_or(""));
    }
    Ok(())
}
