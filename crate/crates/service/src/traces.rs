use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use confill::iterate::IterationTrace;

/// Iteration traces keyed by job id. Entries expire after `ttl`; past
/// `capacity` the oldest entry goes first.
pub struct TraceCache {
    ttl: Duration,
    capacity: usize,
    entries: Mutex<HashMap<String, (Instant, Arc<IterationTrace>)>>,
}

impl TraceCache {
    pub fn new(ttl: Duration, capacity: usize) -> Self {
        Self { ttl, capacity: capacity.max(1), entries: Mutex::new(HashMap::new()) }
    }

    fn evict(&self, map: &mut HashMap<String, (Instant, Arc<IterationTrace>)>, now: Instant) {
        map.retain(|_, (at, _)| now.duration_since(*at) < self.ttl);
        while map.len() > self.capacity {
            let oldest = map.iter().min_by_key(|(_, (at, _))| *at).map(|(k, _)| k.clone());
            match oldest {
                Some(k) => map.remove(&k),
                None => break,
            };
        }
    }

    pub fn insert(&self, job: String, trace: IterationTrace) {
        let now = Instant::now();
        let mut map = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        map.insert(job, (now, Arc::new(trace)));
        self.evict(&mut map, now);
    }

    pub fn get(&self, job: &str) -> Option<Arc<IterationTrace>> {
        let mut map = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        self.evict(&mut map, Instant::now());
        map.get(job).map(|(_, t)| t.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
