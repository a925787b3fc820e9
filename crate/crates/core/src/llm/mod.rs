//! Chat-completion and text-embedding access behind a content-addressed
//! cache and a bound on in-flight requests.

pub mod cache;
pub mod http;
pub mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use crate::error::{Error, Result};

pub use cache::{content_key, CacheEntry, CacheValue, ResponseCache};
pub use http::{HttpProvider, HttpResponse, ProviderConfig, ReqwestTransport, Transport};
pub use mock::{MockProvider, MockRules};

#[derive(Clone, Debug, PartialEq)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub tag: String,
}

impl PromptRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            max_tokens: 1024,
            temperature: 0.0,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.system_text.trim().is_empty() || self.user_text.trim().is_empty() {
            return Err(Error::Config(format!("prompt {:?} has empty text", self.tag)));
        }
        if self.max_tokens == 0 || self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!("prompt {:?}: bad decoding parameters", self.tag)));
        }
        Ok(())
    }
}

/// A backend that answers prompts and embeds text.
pub trait Provider: Send + Sync {
    /// Model identity folded into cache keys.
    fn model(&self) -> &str;
    fn embedding_dim(&self) -> usize;
    fn complete(&self, request: &PromptRequest) -> Result<String>;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

pub struct LlmGateway {
    provider: Box<dyn Provider>,
    cache: ResponseCache,
    limiter: Limiter,
    max_parallel: usize,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl LlmGateway {
    pub fn new(provider: Box<dyn Provider>, cache: ResponseCache, max_parallel: usize) -> Self {
        let max_parallel = max_parallel.max(1);
        Self {
            provider,
            cache,
            limiter: Limiter::new(max_parallel),
            max_parallel,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn mock(rules: MockRules) -> Self {
        Self::new(Box::new(MockProvider::new(rules)), ResponseCache::in_memory(), 4)
    }

    pub fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    pub fn embedding_dim(&self) -> usize {
        self.provider.embedding_dim()
    }

    pub fn model(&self) -> &str {
        self.provider.model()
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            provider_calls: self.calls.load(Ordering::SeqCst),
            cache_hits: self.hits.load(Ordering::SeqCst),
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<String> {
        request.validate()?;
        let temperature = format!("{:?}", request.temperature);
        let key = content_key(&[
            "complete",
            self.provider.model(),
            &request.system_text,
            &request.user_text,
            &temperature,
        ]);
        if let Some(CacheValue::Text(text)) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(text);
        }
        let text = {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.provider.complete(request)?
        };
        self.cache.insert(key, CacheValue::Text(text.clone()))?;
        Ok(text)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(Error::Config("cannot embed empty text".into()));
        }
        let key = content_key(&["embed", self.provider.model(), text]);
        if let Some(CacheValue::Embedding(v)) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(v);
        }
        let v = {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.provider.embed(text)?
        };
        if v.len() != self.provider.embedding_dim() {
            return Err(Error::Config(format!(
                "provider returned {} dims, configured {}",
                v.len(),
                self.provider.embedding_dim()
            )));
        }
        self.cache.insert(key, CacheValue::Embedding(v.clone()))?;
        Ok(v)
    }

    /// Applies `f` to every input on up to `max_parallel` worker threads;
    /// results come back in input order.
    pub fn map_parallel<T, R, F>(&self, inputs: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync,
    {
        let workers = self.max_parallel.min(inputs.len());
        if workers <= 1 {
            return inputs.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    if k >= inputs.len() {
                        break;
                    }
                    let r = f(&inputs[k]);
                    *slots[k].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::time::Duration;

    struct SlowProvider {
        in_flight: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl Provider for SlowProvider {
        fn model(&self) -> &str {
            "slow"
        }
        fn embedding_dim(&self) -> usize {
            2
        }
        fn complete(&self, request: &PromptRequest) -> Result<String> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(format!("echo {}", request.user_text))
        }
        fn embed(&self, _text: &str) -> Result<Vec<f64>> {
            Ok(vec![1.0, 0.0])
        }
    }

    #[test]
    fn bounded_concurrency_and_cache() {
        let peak = Arc::new(AtomicUsize::new(0));
        let provider = SlowProvider {
            in_flight: Arc::new(AtomicUsize::new(0)),
            peak: peak.clone(),
        };
        let gw = LlmGateway::new(Box::new(provider), ResponseCache::in_memory(), 3);
        let prompts: Vec<PromptRequest> = (0..40).map(|k| PromptRequest::new("sys", format!("q{k}"), "t")).collect();
        // More threads than permits: the limiter, not the worker count, bounds in-flight calls.
        let results: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = prompts
                .chunks(5)
                .map(|chunk| s.spawn(|| chunk.iter().map(|p| gw.complete(p).unwrap()).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(results.len(), 40);
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(gw.stats().provider_calls, 40);
        let again = gw.complete(&prompts[7]).unwrap();
        assert_eq!(again, "echo q7");
        assert_eq!(gw.stats(), GatewayStats { provider_calls: 40, cache_hits: 1 });
    }

    #[test]
    fn map_parallel_preserves_order() {
        let gw = LlmGateway::mock(MockRules::default());
        let inputs: Vec<usize> = (0..100).collect();
        let out = gw.map_parallel(&inputs, |x| x * 2);
        assert_eq!(out, inputs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_empty_prompt() {
        let gw = LlmGateway::mock(MockRules::default());
        assert!(gw.complete(&PromptRequest::new("", "x", "t")).is_err());
        assert!(gw.embed_text("  ").is_err());
    }
}
