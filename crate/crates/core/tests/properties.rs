//! Property tests over the public surface: format round-trips, ordering,
//! execution determinism, caching, cancellation and the metric.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use segflow::builtins::{builtin_registry, compute_miou, scenario_pipeline, ScenarioConfig};
use segflow::engine::{
    check_event_grammar, CancelOutcome, CancelToken, Engine, EventKind, EventSink, ExecuteOptions, Outputs, ResultCache, RunStatus,
    VecSink,
};
use segflow::graph::{
    deserialize_pipeline, predecessors, serialize_pipeline, topo_order, validate_graph, waves, ModuleRegistry,
};
use segflow::module::PortValues;
use segflow::raster::Mask;
use segflow::seed::{node_seed, sample_seed};

fn registry() -> &'static ModuleRegistry {
    static REG: std::sync::OnceLock<ModuleRegistry> = std::sync::OnceLock::new();
    REG.get_or_init(builtin_registry)
}

fn small_scenario(classes: &str, size: i64, failure_rate: f64) -> segflow::graph::PipelineGraph {
    scenario_pipeline(&ScenarioConfig {
        classes: classes.into(),
        width: size,
        height: size,
        failure_rate,
        ..ScenarioConfig::default()
    })
}

// Seeds are printed on failure; no regression files are written.
fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn arb_classes() -> impl Strategy<Value = String> {
    proptest::sample::subsequence(vec!["car", "bicycle", "motorbike", "truck"], 1..=4).prop_flat_map(|names| {
        proptest::collection::vec(1u32..=2, names.len())
            .prop_map(move |counts| names.iter().zip(counts).map(|(n, c)| format!("{n}:{c}")).collect::<Vec<_>>().join(","))
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn random_graphs_validate_and_round_trip(seed in any::<u64>()) {
        let g = common::random_valid_graph(registry(), seed, 12);
        let report = validate_graph(&g, registry());
        prop_assert!(report.ok, "{}", report);
        let bytes = serialize_pipeline(&g, registry()).unwrap();
        let back = deserialize_pipeline(bytes.as_bytes()).unwrap();
        prop_assert_eq!(&serialize_pipeline(&back, registry()).unwrap(), &bytes);
        let scrambled = deserialize_pipeline(common::scrambled_json(&g, seed).as_bytes()).unwrap();
        prop_assert_eq!(serialize_pipeline(&scrambled, registry()).unwrap(), bytes);
    }

    #[test]
    fn topo_order_respects_every_edge(seed in any::<u64>()) {
        let g = common::random_valid_graph(registry(), seed, 16);
        let order = topo_order(&g).unwrap();
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        prop_assert_eq!(pos.len(), g.nodes.len());
        for e in &g.edges {
            prop_assert!(pos[e.from.node.as_str()] < pos[e.to.node.as_str()]);
        }
        let w = waves(&g).unwrap();
        prop_assert_eq!(w.concat(), order);
        // Every wave only depends on earlier waves.
        let preds = predecessors(&g);
        let mut done = BTreeSet::new();
        for wave in &w {
            for n in wave {
                prop_assert!(preds[n.as_str()].iter().all(|p| done.contains(p)));
            }
            done.extend(wave.iter().map(String::as_str));
        }
    }

    #[test]
    fn sample_seeds_do_not_collide(seed in any::<u64>(), a in 0u64..100_000, b in 0u64..100_000) {
        prop_assume!(a != b);
        prop_assert_ne!(sample_seed(seed, a), sample_seed(seed, b));
        prop_assert_ne!(node_seed(seed, "scene"), node_seed(seed, "scene2"));
    }

    #[test]
    fn png_round_trip_of_masks(w in 1u32..24, h in 1u32..24, labels in proptest::collection::vec(0u8..4, 576)) {
        let table = BTreeMap::from([(1, "car".to_string()), (2, "bicycle".to_string()), (3, "truck".to_string())]);
        let raw = labels[..(w * h) as usize].to_vec();
        let mask = Mask::from_raw(w, h, raw, table).unwrap();
        prop_assert_eq!(Mask::from_png(&mask.to_png()).unwrap(), mask);
    }

    #[test]
    fn miou_matches_pixel_count_oracle(
        w in 1u32..12,
        h in 1u32..12,
        a in proptest::collection::vec(0u8..4, 144),
        b in proptest::collection::vec(0u8..4, 144),
    ) {
        let n = (w * h) as usize;
        let table: BTreeMap<u8, String> = (1..4).map(|i| (i, format!("c{i}"))).collect();
        let pred = Mask::from_raw(w, h, a[..n].to_vec(), table.clone()).unwrap().pruned();
        let truth = Mask::from_raw(w, h, b[..n].to_vec(), table).unwrap().pruned();
        let report = compute_miou(&pred, &truth).unwrap();
        // Oracle: per-class counts by direct comparison, classes from the pruned tables.
        let classes: BTreeSet<u8> = pred.class_table().keys().chain(truth.class_table().keys()).copied().collect();
        let mut ious = Vec::new();
        for c in classes {
            let inter = (0..n).filter(|&i| a[i] == c && b[i] == c).count();
            let union = (0..n).filter(|&i| a[i] == c || b[i] == c).count();
            if union > 0 {
                ious.push(inter as f64 / union as f64);
            }
        }
        let expect = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        prop_assert_eq!(report.mean, expect);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn parallelism_never_changes_outputs(classes in arb_classes(), size in 24i64..64, seed in any::<u64>(), p in 2usize..8) {
        let g = small_scenario(&classes, size, 0.3);
        let engine = Engine::new(Arc::new(builtin_registry()));
        let run = |workers| {
            let opts = ExecuteOptions { job_seed: seed, parallelism: workers, use_cache: false };
            engine.execute(&g, &Outputs::new(), &opts, &VecSink::default(), &CancelToken::new())
        };
        let (one, many) = (run(1), run(p));
        prop_assert_eq!(one.status, many.status);
        prop_assert_eq!(one.digests, many.digests);
    }

    #[test]
    fn warm_cache_serves_every_node(classes in arb_classes(), seed in any::<u64>()) {
        let g = small_scenario(&classes, 32, 0.0);
        let engine = Engine::with_cache(Arc::new(builtin_registry()), Arc::new(ResultCache::new(64 << 20)));
        let opts = ExecuteOptions::seeded(seed);
        let cold = engine.execute(&g, &Outputs::new(), &opts, &VecSink::default(), &CancelToken::new());
        let warm = engine.execute(&g, &Outputs::new(), &opts, &VecSink::default(), &CancelToken::new());
        prop_assert_eq!(cold.cache_hits, 0);
        prop_assert_eq!(warm.cache_hits, g.nodes.len());
        prop_assert_eq!(warm.invocations, 0);
        prop_assert_eq!(cold.digests, warm.digests);
    }

    #[test]
    fn cancellation_at_any_point_is_well_formed(after in 0u64..20, workers in 1usize..4, seed in any::<u64>()) {
        let g = small_scenario("car:1,truck:1", 32, 0.0);
        let engine = Engine::new(Arc::new(builtin_registry()));
        let cancel = CancelToken::new();
        let sink = CancelAfter { inner: VecSink::default(), after, cancel: cancel.clone(), pending: Mutex::new(None) };
        let opts = ExecuteOptions { job_seed: seed, parallelism: workers, use_cache: false };
        let report = engine.execute(&g, &Outputs::new(), &opts, &sink, &cancel);
        let marker = sink.marker();
        let events = sink.inner.events();
        prop_assert!(check_event_grammar(&events, &g).is_ok(), "{:?}", check_event_grammar(&events, &g));
        let last = &events.last().unwrap().kind;
        match report.status {
            RunStatus::Cancelled => prop_assert_eq!(last, &EventKind::JobCancelled),
            RunStatus::Finished => prop_assert_eq!(last, &EventKind::JobFinished),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
        if let Some(marker) = marker {
            let late = events.iter().any(|e| e.seq > marker && matches!(e.kind, EventKind::NodeStarted { .. }));
            prop_assert!(!late, "node started after cancel marker {}", marker);
        }
    }
}

/// Requests cancellation from another thread once `after` events were
/// emitted. Emission holds the token's lock, so the request cannot be made
/// inline.
struct CancelAfter {
    inner: VecSink,
    after: u64,
    cancel: CancelToken,
    pending: Mutex<Option<std::thread::JoinHandle<CancelOutcome>>>,
}

impl CancelAfter {
    fn marker(&self) -> Option<u64> {
        let handle = self.pending.lock().unwrap().take()?;
        match handle.join().unwrap() {
            CancelOutcome::Acknowledged { marker } => marker,
            CancelOutcome::AlreadyTerminal => None,
        }
    }
}

impl EventSink for CancelAfter {
    fn emit(&self, kind: EventKind) -> u64 {
        let seq = self.inner.emit(kind);
        if seq + 1 == self.after {
            let cancel = self.cancel.clone();
            *self.pending.lock().unwrap() = Some(std::thread::spawn(move || cancel.cancel()));
        }
        seq
    }

    fn record_outputs(&self, node_id: &str, outputs: &PortValues) {
        self.inner.record_outputs(node_id, outputs);
    }
}
