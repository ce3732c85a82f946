//! The black-box performance oracle: (definition, example set) → mean
//! Rouge-L over the examples, with caching and deterministic test backends.

mod backend;
mod cache;
mod remote;
pub mod stub;

pub use backend::{
    Backend, BackendRequest, BackendResponse, ConstantBackend, KeywordLabelBackend, PlantedPhraseBackend,
};
pub use cache::{cache_roundtrip, ScoreCache};
pub use remote::RemoteBackend;

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::corpus::{assemble_prompt, CorpusError, ExampleSet, PromptTemplate, Task};
use crate::digest;
use crate::metrics::rouge_l;
use crate::par::{self, Execution};

pub const API_KEY_ENV: &str = "DEFKIT_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("backend error{}: {message}", .instance.as_ref().map(|i| format!(" (instance {i})")).unwrap_or_default())]
    Backend { instance: Option<String>, message: String },
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("example set is empty")]
    EmptyExampleSet,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("score store: {0}")]
    Io(#[from] std::io::Error),
    #[error("score store corrupted: {0}")]
    StoreCorruption(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Constant,
    PlantedPhrase,
    KeywordLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub backend: BackendKind,
    pub endpoint_url: Option<String>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub request_timeout: Duration,
    pub max_in_flight: usize,
    pub constant_value: f64,
    pub planted_phrase: Option<String>,
    /// Waits between attempts; `len() + 1` attempts in total.
    pub retry_delays: Vec<Duration>,
    pub template: PromptTemplate,
    /// Append-only JSONL score store.
    pub cache_path: Option<PathBuf>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            backend: BackendKind::Constant,
            endpoint_url: None,
            max_new_tokens: 128,
            temperature: 0.0,
            seed: None,
            request_timeout: Duration::from_secs(60),
            max_in_flight: 4,
            constant_value: 0.0,
            planted_phrase: None,
            retry_delays: vec![Duration::from_millis(500), Duration::from_secs(2)],
            template: PromptTemplate::default(),
            cache_path: None,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.max_in_flight == 0 {
            return Err(ScorerError::Config("max_in_flight must be ≥ 1".into()));
        }
        match self.backend {
            BackendKind::Remote if self.endpoint_url.is_none() => {
                Err(ScorerError::Config("remote backend needs endpoint_url".into()))
            }
            BackendKind::PlantedPhrase if self.planted_phrase.as_deref().is_none_or(|p| p.trim().is_empty()) => {
                Err(ScorerError::Config("planted-phrase backend needs a phrase".into()))
            }
            BackendKind::Constant if !(0.0..=1.0).contains(&self.constant_value) => {
                Err(ScorerError::Config("constant value must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ScorerError> {
        self.validate()?;
        Ok(match self.backend {
            BackendKind::Constant => Arc::new(ConstantBackend::new(self.constant_value)),
            BackendKind::PlantedPhrase => {
                Arc::new(PlantedPhraseBackend::new(self.planted_phrase.as_deref().unwrap_or_default()))
            }
            BackendKind::KeywordLabel => Arc::new(KeywordLabelBackend),
            BackendKind::Remote => Arc::new(RemoteBackend::new(
                self.endpoint_url.clone().unwrap_or_default(),
                self.request_timeout,
                self.max_in_flight,
                self.retry_delays.clone(),
                std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub cache_key: String,
    pub definition: String,
    pub example_fingerprint: String,
    pub mean_score: f64,
    pub per_instance: Vec<f64>,
    pub backend_id: String,
}

/// Scores definitions against a backend. Cheap to share across threads;
/// the cache is the only mutable state.
pub struct Scorer {
    backend: Arc<dyn Backend>,
    template: PromptTemplate,
    max_new_tokens: usize,
    temperature: f64,
    seed: Option<u64>,
    cache: Arc<ScoreCache>,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    exec: Execution,
}

impl Scorer {
    pub fn from_config(cfg: &ScorerConfig) -> Result<Scorer, ScorerError> {
        let backend = cfg.build_backend()?;
        let cache = match &cfg.cache_path {
            Some(p) => ScoreCache::open(p)?,
            None => ScoreCache::in_memory(),
        };
        Ok(Scorer::with_backend(backend, cfg).with_cache(Arc::new(cache)))
    }

    /// Uses a caller-supplied backend with the generation parameters of `cfg`.
    pub fn with_backend(backend: Arc<dyn Backend>, cfg: &ScorerConfig) -> Scorer {
        Scorer {
            backend,
            template: cfg.template.clone(),
            max_new_tokens: cfg.max_new_tokens,
            temperature: cfg.temperature,
            seed: cfg.seed,
            cache: Arc::new(ScoreCache::in_memory()),
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            exec: Execution::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ScoreCache>) -> Scorer {
        self.cache = cache;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Scorer {
        self.exec = exec;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Backend invocations so far (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    fn cache_key(&self, backend_id: &str, definition: &str, fingerprint: &str) -> String {
        let tokens = self.max_new_tokens.to_string();
        let temp = format!("{:?}", self.temperature);
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        digest::sha256_fields([
            backend_id,
            definition,
            fingerprint,
            &tokens,
            &temp,
            &seed,
            self.template.as_str(),
        ])
    }

    pub fn score(&self, definition: &str, task: &Task, examples: &ExampleSet) -> Result<ScoreRecord, ScorerError> {
        let instances = examples.resolve(task)?;
        if instances.is_empty() {
            return Err(ScorerError::EmptyExampleSet);
        }
        let backend_id = self.backend.id();
        let fingerprint = examples.fingerprint(task);
        let key = self.cache_key(&backend_id, definition, &fingerprint);
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }

        let prompts = instances
            .iter()
            .map(|inst| assemble_prompt(task, definition, inst, &self.template))
            .collect::<Result<Vec<_>, _>>()?;
        let request = BackendRequest {
            definition,
            task,
            instances: &instances,
            prompts: &prompts,
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            seed: self.seed,
        };
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let per_instance = match self.backend.respond(&request)? {
            BackendResponse::Scores(s) => {
                if s.len() != instances.len() {
                    return Err(ScorerError::Backend {
                        instance: None,
                        message: format!("expected {} scores, got {}", instances.len(), s.len()),
                    });
                }
                s
            }
            BackendResponse::Generations(g) => {
                if g.len() != instances.len() {
                    return Err(ScorerError::Backend {
                        instance: None,
                        message: format!("expected {} generations, got {}", instances.len(), g.len()),
                    });
                }
                let pairs: Vec<(&String, &crate::corpus::Instance)> = g.iter().zip(instances.iter().copied()).collect();
                par::map(self.exec, &pairs, |(gen, inst)| {
                    rouge_l(gen, &inst.references).map_err(|e| ScorerError::Backend {
                        instance: Some(inst.id.clone()),
                        message: e.to_string(),
                    })
                })
                .into_iter()
                .collect::<Result<Vec<f64>, _>>()?
            }
        };
        let mean_score = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
        let record = ScoreRecord {
            cache_key: key,
            definition: definition.to_string(),
            example_fingerprint: fingerprint,
            mean_score,
            per_instance,
            backend_id,
        };
        self.cache.put(&record)?;
        Ok(record)
    }
}
