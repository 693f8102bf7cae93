//! Content-addressed node result cache with LRU eviction by total bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Mutex;

use serde_json::json;

use crate::canonical;
use crate::graph::NodeInstance;
use crate::module::PortValues;
use crate::seed;

pub const DEFAULT_CACHE_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub String);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 over the canonical form of module identity, params, input
/// digests and the node's derived seed. `node.params` should already carry
/// materialized defaults.
pub fn cache_key(node: &NodeInstance, input_digests: &BTreeMap<String, String>, job_seed: u64) -> CacheKey {
    let doc = json!({
        "module_id": node.module_id,
        "module_version": node.module_version,
        "params": node.params,
        "inputs": input_digests,
        "seed": seed::node_seed(job_seed, &node.node_id),
    });
    CacheKey(canonical::sha256_hex(canonical::to_compact(&doc).as_bytes()))
}

struct Entry {
    outputs: PortValues,
    bytes: usize,
    tick: u64,
}

#[derive(Default)]
struct Inner {
    entries: HashMap<CacheKey, Entry>,
    /// tick → key, oldest first.
    order: BTreeMap<u64, CacheKey>,
    total: usize,
    tick: u64,
}

/// Thread-safe; shared by every job of an engine.
pub struct ResultCache {
    capacity: usize,
    inner: Mutex<Inner>,
}

impl ResultCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> usize {
        self.inner.lock().unwrap().total
    }

    pub fn get(&self, key: &CacheKey) -> Option<PortValues> {
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        let entry = inner.entries.get_mut(key)?;
        let old = std::mem::replace(&mut entry.tick, tick);
        let outputs = entry.outputs.clone();
        inner.order.remove(&old);
        inner.order.insert(tick, key.clone());
        Some(outputs)
    }

    /// Entries larger than the whole capacity are not stored.
    pub fn put(&self, key: CacheKey, outputs: PortValues) {
        let bytes: usize = outputs.values().map(|v| v.approx_bytes()).sum();
        if bytes > self.capacity {
            return;
        }
        let mut inner = self.inner.lock().unwrap();
        inner.tick += 1;
        let tick = inner.tick;
        if let Some(old) = inner.entries.remove(&key) {
            inner.order.remove(&old.tick);
            inner.total -= old.bytes;
        }
        while inner.total + bytes > self.capacity {
            let Some((_, victim)) = inner.order.pop_first() else { break };
            if let Some(e) = inner.entries.remove(&victim) {
                inner.total -= e.bytes;
            }
        }
        inner.order.insert(tick, key.clone());
        inner.entries.insert(key, Entry { outputs, bytes, tick });
        inner.total += bytes;
    }

    pub fn clear(&self) {
        *self.inner.lock().unwrap() = Inner::default();
    }
}

impl Default for ResultCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_BYTES)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ParamValue;
    use crate::value::Value;
    use std::collections::HashSet;

    fn node() -> NodeInstance {
        NodeInstance::new("refine", "seg.refine", 1)
            .with_param("n_points", ParamValue::Int(10))
            .with_param("color_threshold", ParamValue::Float(40.0))
    }

    fn digests() -> BTreeMap<String, String> {
        BTreeMap::from([("image".into(), "aa".into()), ("coarse".into(), "bb".into())])
    }

    #[test]
    fn key_is_pure() {
        assert_eq!(cache_key(&node(), &digests(), 1), cache_key(&node(), &digests(), 1));
    }

    #[test]
    fn key_sensitivity() {
        let base = cache_key(&node(), &digests(), 1);
        let n_points = node().with_param("n_points", ParamValue::Int(11));
        assert_ne!(cache_key(&n_points, &digests(), 1), base);
        let mut version = node();
        version.module_version = 2;
        assert_ne!(cache_key(&version, &digests(), 1), base);
        let mut renamed = node();
        renamed.node_id = "refine2".into();
        assert_ne!(cache_key(&renamed, &digests(), 1), base);
        assert_ne!(cache_key(&node(), &digests(), 2), base);
        let mut inputs = digests();
        inputs.insert("image".into(), "ab".into());
        assert_ne!(cache_key(&node(), &inputs, 1), base);
    }

    #[test]
    fn no_collisions_under_random_perturbation() {
        use rand::Rng;
        let mut rng = seed::rng(42);
        let mut seen = HashSet::new();
        let mut distinct_inputs = HashSet::new();
        for _ in 0..10_000 {
            let n = node()
                .with_param("n_points", ParamValue::Int(rng.random_range(1..1_000_000)))
                .with_param("color_threshold", ParamValue::Float(rng.random_range(0.0..442.0)));
            let d = BTreeMap::from([("image".to_string(), format!("{:016x}", rng.random::<u64>()))]);
            let job_seed = rng.random::<u64>();
            let canonical_input = format!("{:?}{:?}{job_seed}", n.params, d);
            let fresh_input = distinct_inputs.insert(canonical_input);
            assert_eq!(seen.insert(cache_key(&n, &d, job_seed)), fresh_input);
        }
    }

    #[test]
    fn lru_eviction_by_bytes() {
        let value = |s: &str| PortValues::from([("text".to_string(), Value::text(s))]);
        let unit = value("x").values().map(|v| v.approx_bytes()).sum::<usize>();
        let cache = ResultCache::new(unit * 2);
        cache.put(CacheKey("a".into()), value("a"));
        cache.put(CacheKey("b".into()), value("b"));
        assert!(cache.get(&CacheKey("a".into())).is_some());
        cache.put(CacheKey("c".into()), value("c"));
        assert!(cache.get(&CacheKey("b".into())).is_none());
        assert!(cache.get(&CacheKey("a".into())).is_some());
        assert!(cache.get(&CacheKey("c".into())).is_some());
        assert!(cache.total_bytes() <= cache.capacity());
    }
}
