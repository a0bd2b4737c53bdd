use std::hash::Hash;
use std::num::NonZeroUsize;

use lru::LruCache;
use parking_lot::Mutex;

/// Thread-safe LRU map. A capacity of zero disables caching.
pub struct QueryCache<K: Hash + Eq, V> {
    inner: Option<Mutex<LruCache<K, V>>>,
}

impl<K: Hash + Eq, V: Clone> QueryCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
        }
    }

    pub fn capacity(&self) -> usize {
        self.inner.as_ref().map_or(0, |m| m.lock().cap().get())
    }

    pub fn len(&self) -> usize {
        self.inner.as_ref().map_or(0, |m| m.lock().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks up `key` and marks it most recently used.
    pub fn get(&self, key: &K) -> Option<V> {
        self.inner.as_ref()?.lock().get(key).cloned()
    }

    /// Inserts or replaces `key`. Returns the key evicted to make room, if any.
    pub fn put(&self, key: K, value: V) -> Option<K> {
        let mut cache = self.inner.as_ref()?.lock();
        let existed = cache.contains(&key);
        let evicted = cache.push(key, value);
        if existed {
            None
        } else {
            evicted.map(|(k, _)| k)
        }
    }

    pub fn clear(&self) {
        if let Some(m) = &self.inner {
            m.lock().clear();
        }
    }
}
