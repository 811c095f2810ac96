use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::{EmbeddingProvider, ProviderError, ProviderVector};

/// Read-through embedding cache keyed by (provider id, text).
///
/// Reads proceed concurrently; inserts take the write lock. Misses from one
/// `embed` call are forwarded to the inner provider as a single batch.
pub struct CachedEmbedder {
    inner: Arc<dyn EmbeddingProvider>,
    cache: RwLock<HashMap<String, HashMap<String, ProviderVector>>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        cache.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, text: &str) -> Option<ProviderVector> {
        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        cache.get(self.inner.id()).and_then(|m| m.get(text)).cloned()
    }
}

impl EmbeddingProvider for CachedEmbedder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
        let mut out: Vec<Option<ProviderVector>> = texts.iter().map(|t| self.lookup(t)).collect();
        let mut missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, hit)| hit.is_none())
            .map(|(t, _)| *t)
            .collect();
        if missing.is_empty() {
            return Ok(out.into_iter().flatten().collect());
        }
        missing.sort_unstable();
        missing.dedup();
        let fresh = self.inner.embed(&missing)?;
        if fresh.len() != missing.len() {
            return Err(ProviderError::Protocol(format!(
                "asked for {} vectors, got {}",
                missing.len(),
                fresh.len()
            )));
        }
        let fresh: HashMap<&str, ProviderVector> = missing.into_iter().zip(fresh).collect();
        {
            let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
            let slot = cache.entry(self.inner.id().to_owned()).or_default();
            for (text, v) in &fresh {
                slot.entry((*text).to_owned()).or_insert_with(|| v.clone());
            }
        }
        for (slot, text) in out.iter_mut().zip(texts) {
            if slot.is_none() {
                *slot = fresh.get(text).cloned();
            }
        }
        Ok(out.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::StubEmbedder;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: StubEmbedder,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
            self.calls.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    #[test]
    fn read_through_hits_inner_once_per_text() {
        let inner = Arc::new(Counting {
            inner: StubEmbedder::default(),
            calls: AtomicUsize::new(0),
        });
        let cached = CachedEmbedder::new(inner.clone());
        let a = cached.embed(&["x y", "z", "x y"]).unwrap();
        let b = cached.embed(&["z", "x y"]).unwrap();
        assert_eq!(inner.calls.load(Ordering::SeqCst), 2);
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
        assert_eq!(a.len(), 3);
        assert_eq!(cached.len(), 2);
    }
}
