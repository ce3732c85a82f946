use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::backend::{Backend, BackendRequest, BackendResponse};
use super::ScorerError;

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    prompts: &'a [String],
    max_new_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    generations: Vec<String>,
}

enum Failure {
    Retryable(ScorerError),
    Fatal(ScorerError),
}

/// HTTP generation endpoint. Prompts are split into at most
/// `max_in_flight` contiguous batches sent concurrently; generations are
/// re-assembled in prompt order.
pub struct RemoteBackend {
    url: String,
    client: reqwest::blocking::Client,
    timeout: Duration,
    max_in_flight: usize,
    retry_delays: Vec<Duration>,
    api_key: Option<String>,
    http_requests: AtomicUsize,
}

impl RemoteBackend {
    pub fn new(
        url: String,
        timeout: Duration,
        max_in_flight: usize,
        retry_delays: Vec<Duration>,
        api_key: Option<String>,
    ) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScorerError::Config(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            url,
            client,
            timeout,
            max_in_flight: max_in_flight.max(1),
            retry_delays,
            api_key,
            http_requests: AtomicUsize::new(0),
        })
    }

    /// POSTs issued so far, retries included.
    pub fn http_requests(&self) -> usize {
        self.http_requests.load(Ordering::SeqCst)
    }

    fn post_once(&self, body: &WireRequest<'_>, first_instance: &str) -> Result<Vec<String>, Failure> {
        self.http_requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let backend_err = |message: String| ScorerError::Backend {
            instance: Some(first_instance.to_string()),
            message,
        };
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Retryable(ScorerError::Timeout(self.timeout))
            } else {
                Failure::Retryable(backend_err(format!("transport: {e}")))
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let err = backend_err(format!("HTTP {status}"));
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Failure::Retryable(err)
            } else {
                Failure::Fatal(err)
            });
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| Failure::Fatal(backend_err(format!("malformed response: {e}"))))?;
        if parsed.generations.len() != body.prompts.len() {
            return Err(Failure::Fatal(backend_err(format!(
                "response has {} generations for {} prompts",
                parsed.generations.len(),
                body.prompts.len()
            ))));
        }
        Ok(parsed.generations)
    }

    fn post_with_retries(&self, body: &WireRequest<'_>, first_instance: &str) -> Result<Vec<String>, ScorerError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body, first_instance) {
                Ok(g) => return Ok(g),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => match self.retry_delays.get(attempt) {
                    Some(delay) => {
                        log::warn!("{e}; retrying in {delay:?}");
                        std::thread::sleep(*delay);
                        attempt += 1;
                    }
                    None => return Err(e),
                },
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn respond(&self, request: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError> {
        let n = request.prompts.len();
        let chunk = n.div_ceil(self.max_in_flight).max(1);
        let batches: Vec<(usize, &[String])> = request
            .prompts
            .chunks(chunk)
            .enumerate()
            .map(|(i, c)| (i * chunk, c))
            .collect();
        let results: Vec<Result<Vec<String>, ScorerError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches
                .iter()
                .map(|&(offset, prompts)| {
                    let first = request.instances[offset].id.as_str();
                    scope.spawn(move || {
                        let body = WireRequest {
                            prompts,
                            max_new_tokens: request.max_new_tokens,
                            temperature: request.temperature,
                            seed: request.seed,
                        };
                        self.post_with_retries(&body, first)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("request thread panicked"))
                .collect()
        });
        let mut generations = Vec::with_capacity(n);
        for r in results {
            generations.extend(r?);
        }
        Ok(BackendResponse::Generations(generations))
    }
}
