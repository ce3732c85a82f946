use crate::corpus::{Instance, Task};
use crate::metrics::{lcs_length, TokenSeq};

use super::ScorerError;

/// Everything a backend may look at for one scoring call.
pub struct BackendRequest<'a> {
    pub definition: &'a str,
    pub task: &'a Task,
    pub instances: &'a [&'a Instance],
    /// One assembled prompt per instance, in the same order.
    pub prompts: &'a [String],
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendResponse {
    /// One generation per prompt; the scorer applies Rouge-L.
    Generations(Vec<String>),
    /// One score per instance, already in [0, 1].
    Scores(Vec<f64>),
}

pub trait Backend: Send + Sync {
    /// Identifies the backend and its parameters; part of the cache key.
    fn id(&self) -> String;

    fn respond(&self, request: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError>;
}

/// Returns the same score for every instance.
#[derive(Debug, Clone)]
pub struct ConstantBackend {
    value: f64,
}

impl ConstantBackend {
    pub fn new(value: f64) -> Self {
        ConstantBackend { value }
    }
}

impl Backend for ConstantBackend {
    fn id(&self) -> String {
        format!("constant:{:?}", self.value)
    }

    fn respond(&self, request: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError> {
        Ok(BackendResponse::Scores(vec![self.value; request.instances.len()]))
    }
}

/// Scores 1 when the definition still contains the phrase's tokens in
/// order (not necessarily adjacent), else 0.
#[derive(Debug, Clone)]
pub struct PlantedPhraseBackend {
    phrase: String,
    tokens: TokenSeq,
}

impl PlantedPhraseBackend {
    pub fn new(phrase: &str) -> Self {
        PlantedPhraseBackend {
            phrase: phrase.to_string(),
            tokens: TokenSeq::normalize(phrase),
        }
    }

    pub fn contains_phrase(&self, definition: &str) -> bool {
        let def = TokenSeq::normalize(definition);
        lcs_length(self.tokens.tokens(), def.tokens()) == self.tokens.len()
    }
}

impl Backend for PlantedPhraseBackend {
    fn id(&self) -> String {
        format!("planted:{}", self.phrase)
    }

    fn respond(&self, request: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError> {
        let hit = if self.contains_phrase(request.definition) { 1.0 } else { 0.0 };
        Ok(BackendResponse::Scores(vec![hit; request.instances.len()]))
    }
}

/// Emits the gold answer when every token of its verbalizer survives in
/// the definition, and "unknown" otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordLabelBackend;

pub const KEYWORD_MISS: &str = "unknown";

impl Backend for KeywordLabelBackend {
    fn id(&self) -> String {
        "keyword_label".to_string()
    }

    fn respond(&self, request: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError> {
        let def = TokenSeq::normalize(request.definition);
        let gens = request
            .instances
            .iter()
            .map(|inst| {
                let gold = inst.references.first().map(String::as_str).unwrap_or_default();
                let verbalizer = TokenSeq::normalize(gold);
                let present = !verbalizer.is_empty()
                    && verbalizer.tokens().iter().all(|t| def.tokens().contains(t));
                if present { gold.to_string() } else { KEYWORD_MISS.to_string() }
            })
            .collect();
        Ok(BackendResponse::Generations(gens))
    }
}
