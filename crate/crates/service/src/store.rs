//! Capacity-bounded id store with least-recently-used eviction.
//!
//! Lookups take the read lock and bump a per-entry recency stamp; only
//! inserts take the write lock. Ids are never reused, so a missing id below
//! the next id to be issued was evicted.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Lookup {
    #[error("no such id")]
    Unknown,
    #[error("evicted")]
    Evicted,
}

struct Entry<V> {
    value: Arc<V>,
    last_used: AtomicU64,
}

pub struct Store<V> {
    capacity: usize,
    entries: RwLock<HashMap<u64, Entry<V>>>,
    next_id: AtomicU64,
    clock: AtomicU64,
}

impl<V> Store<V> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "store capacity must be positive");
        Store {
            capacity,
            entries: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            clock: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed)
    }

    /// Inserts under a fresh id, evicting the least recently used entry when full.
    pub fn insert(&self, value: V) -> (u64, Arc<V>) {
        self.insert_with(|_| value)
    }

    /// As [`Store::insert`], building the value from its id.
    pub fn insert_with(&self, make: impl FnOnce(u64) -> V) -> (u64, Arc<V>) {
        let mut map = self.entries.write().expect("store lock");
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let value = Arc::new(make(id));
        while map.len() >= self.capacity {
            let oldest = map
                .iter()
                .min_by_key(|(_, e)| e.last_used.load(Ordering::Relaxed))
                .map(|(&k, _)| k)
                .expect("non-empty at capacity");
            map.remove(&oldest);
        }
        map.insert(
            id,
            Entry {
                value: value.clone(),
                last_used: AtomicU64::new(self.tick()),
            },
        );
        (id, value)
    }

    pub fn get(&self, id: u64) -> Result<Arc<V>, Lookup> {
        let map = self.entries.read().expect("store lock");
        match map.get(&id) {
            Some(e) => {
                e.last_used.store(self.tick(), Ordering::Relaxed);
                Ok(e.value.clone())
            }
            None if id >= 1 && id < self.next_id.load(Ordering::Relaxed) => Err(Lookup::Evicted),
            None => Err(Lookup::Unknown),
        }
    }
}
