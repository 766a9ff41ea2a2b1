//! Uniform access to language models in the frontier and proxy roles.
//!
//! Three backends sit behind one [`ProviderHandle`]: an OpenAI-compatible
//! HTTP endpoint, an offline replay file, and a seeded in-process mock. Any
//! handle may additionally be given a replay file, in which case requests are
//! served from it when possible and new responses are appended to it.

mod mock;
mod remote;
mod replay;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use mock::{MalformedRule, MockBackend, MockConfig, MockNll, Tokenization};
pub use remote::{normalize_token_text, RemoteBackend};
pub use replay::{cache_key, ReplayRecord, ReplayStore};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Remote,
    Replay,
    Mock,
}

/// Which capability a handle must offer; decides the construction probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Frontier,
    Proxy,
}

fn default_inflight() -> usize {
    4
}

fn default_timeout() -> f64 {
    120.0
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_probe() -> bool {
    true
}

/// Serializable description of a provider, as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Source file for `replay`; a record-through cache for other kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Completion budget for frontier trace generation.
    #[serde(default = "default_max_tokens")]
    pub max_completion_tokens: u32,
    #[serde(default = "default_probe")]
    pub probe: bool,
    #[serde(default)]
    pub mock: MockConfig,
}

impl ProviderConfig {
    pub fn mock(model_id: impl Into<String>, mock: MockConfig) -> Self {
        Self {
            kind: ProviderKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            replay_path: None,
            auth_env: None,
            max_inflight: default_inflight(),
            timeout_secs: default_timeout(),
            max_completion_tokens: default_max_tokens(),
            probe: default_probe(),
            mock,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(Error::Config("model_id must not be empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            ProviderKind::Remote if self.endpoint.is_none() => {
                Err(Error::Config("remote provider needs an endpoint".into()))
            }
            ProviderKind::Replay => match &self.replay_path {
                Some(p) if p.exists() => Ok(()),
                Some(p) => Err(Error::Config(format!("replay file {} does not exist", p.display()))),
                None => Err(Error::Config("replay provider needs replay_path".into())),
            },
            _ => Ok(()),
        }
    }
}

/// One generated token with its natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobRow {
    pub token_text: String,
    pub logprob: f64,
    pub byte_offset: usize,
}

/// Teacher-forced NLL of one proxy token, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyTokenNLL {
    pub token_text: String,
    pub nll: f64,
}

/// A system/user chat prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub max_tokens: u32,
    /// Attempt number; part of the cache key only, never sent on the wire.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub rows: Vec<TokenLogprobRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScore {
    pub tokens: Vec<ProxyTokenNLL>,
    /// Independently reported total NLL of the continuation, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub context: String,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

/// Inference operations a backend must provide.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion>;
    fn score(&self, req: &ScoreRequest) -> Result<ContinuationScore>;
    fn generate(&self, req: &GenerateRequest) -> Result<String>;
}

struct ReplayOnly;

impl Backend for ReplayOnly {
    fn complete(&self, _: &ChatRequest) -> Result<Completion> {
        Err(Error::Provider("replay miss for chat completion".into()))
    }
    fn score(&self, _: &ScoreRequest) -> Result<ContinuationScore> {
        Err(Error::Provider("replay miss for continuation scoring".into()))
    }
    fn generate(&self, _: &GenerateRequest) -> Result<String> {
        Err(Error::Provider("replay miss for generation".into()))
    }
}

/// A shareable handle to a model. Cloning shares the backend, cache and
/// call counter.
#[derive(Clone)]
pub struct ProviderHandle {
    config: ProviderConfig,
    backend: Arc<dyn Backend>,
    replay: Option<Arc<ReplayStore>>,
    backend_calls: Arc<AtomicUsize>,
}

impl std::fmt::Debug for ProviderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderHandle")
            .field("kind", &self.config.kind)
            .field("model_id", &self.config.model_id)
            .finish_non_exhaustive()
    }
}

impl ProviderHandle {
    /// Builds a handle from its config. Remote handles run a capability probe
    /// for `role` unless `probe` is disabled.
    pub fn open(config: ProviderConfig, role: Role) -> Result<Self> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.kind {
            ProviderKind::Mock => Arc::new(MockBackend::new(&config.model_id, config.mock.clone())),
            ProviderKind::Replay => Arc::new(ReplayOnly),
            ProviderKind::Remote => {
                let remote = RemoteBackend::new(
                    config.endpoint.clone().unwrap_or_default(),
                    config.model_id.clone(),
                    resolve_secret(config.auth_env.as_deref())?,
                    Duration::from_secs_f64(config.timeout_secs),
                )?;
                if config.probe {
                    remote.probe(role)?;
                }
                Arc::new(remote)
            }
        };
        let replay = match (&config.kind, &config.replay_path) {
            (ProviderKind::Replay, Some(p)) => Some(Arc::new(ReplayStore::open_read_only(p)?)),
            (_, Some(p)) => Some(Arc::new(ReplayStore::open(p)?)),
            (_, None) => None,
        };
        Ok(Self {
            config,
            backend,
            replay,
            backend_calls: Arc::new(AtomicUsize::new(0)),
        })
    }

    /// Deterministic in-process model.
    pub fn mock(model_id: impl Into<String>, mock: MockConfig) -> Self {
        Self::open(ProviderConfig::mock(model_id, mock), Role::Proxy).expect("mock provider config is always valid")
    }

    /// Wraps an arbitrary backend, e.g. a scripted test double.
    pub fn with_backend(config: ProviderConfig, backend: Arc<dyn Backend>) -> Result<Self> {
        config.validate()?;
        let replay = match &config.replay_path {
            Some(p) => Some(Arc::new(ReplayStore::open(p)?)),
            None => None,
        };
        Ok(Self {
            config,
            backend,
            replay,
            backend_calls: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn kind(&self) -> ProviderKind {
        self.config.kind
    }

    pub fn max_inflight(&self) -> usize {
        self.config.max_inflight
    }

    /// Number of requests that reached the backend (replay hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    fn cached<Req, Resp>(&self, kind: &str, req: &Req, call: impl FnOnce() -> Result<Resp>) -> Result<Resp>
    where
        Req: Serialize,
        Resp: Serialize + DeserializeOwned,
    {
        let body = serde_json::to_value(req).map_err(|e| Error::Provider(e.to_string()))?;
        let key = cache_key(&self.config.model_id, kind, &body);
        if let Some(store) = &self.replay {
            if let Some(hit) = store.get(&key) {
                return serde_json::from_value(hit)
                    .map_err(|e| Error::Provider(format!("corrupt replay entry {key}: {e}")));
            }
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let resp = call()?;
        if let Some(store) = &self.replay {
            let resp_value = serde_json::to_value(&resp).map_err(|e| Error::Provider(e.to_string()))?;
            store.record(key, body, resp_value)?;
        }
        Ok(resp)
    }

    /// Greedy chat completion with one logprob row per generated token.
    pub fn frontier_complete(&self, prompt: &ChatPrompt, attempt: u32) -> Result<Completion> {
        let req = ChatRequest {
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            max_tokens: self.config.max_completion_tokens,
            attempt,
        };
        let completion = self.cached("complete", &req, || self.backend.complete(&req))?;
        check_rows(&completion)?;
        Ok(completion)
    }

    /// Teacher-forced per-token NLLs of `continuation` given `context`.
    pub fn proxy_token_nlls(&self, context: &str, continuation: &str) -> Result<Vec<ProxyTokenNLL>> {
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let req = ScoreRequest {
            context: context.to_owned(),
            continuation: continuation.to_owned(),
        };
        let scored = self.cached("score", &req, || self.backend.score(&req))?;
        check_scored(&scored, continuation)?;
        Ok(scored.tokens)
    }

    /// Greedy generation, truncated before the first stop sequence.
    pub fn proxy_generate(&self, context: &str, max_tokens: u32, stop: &[String]) -> Result<String> {
        if max_tokens == 0 {
            return Ok(String::new());
        }
        let req = GenerateRequest {
            context: context.to_owned(),
            max_tokens,
            stop: stop.to_vec(),
        };
        let text = self.cached("generate", &req, || self.backend.generate(&req))?;
        Ok(truncate_at_stop(&text, stop).to_owned())
    }
}

fn resolve_secret(env: Option<&str>) -> Result<Option<String>> {
    match env {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| Error::Config(format!("environment variable {name} is not set"))),
    }
}

fn check_rows(c: &Completion) -> Result<()> {
    if !c.text.is_empty() && c.rows.is_empty() {
        return Err(Error::Capability("completion carries no token logprobs".into()));
    }
    let mut last = 0;
    for row in &c.rows {
        if row.byte_offset < last {
            return Err(Error::Provider("logprob rows out of order".into()));
        }
        if row.logprob.is_nan() || row.logprob > 1e-9 {
            return Err(Error::Provider(format!("invalid logprob {}", row.logprob)));
        }
        last = row.byte_offset;
    }
    Ok(())
}

fn check_scored(s: &ContinuationScore, continuation: &str) -> Result<()> {
    let mut offset = 0;
    for t in &s.tokens {
        if !(t.nll.is_finite() && t.nll >= 0.0) {
            return Err(Error::Provider(format!("invalid token NLL {}", t.nll)));
        }
        let end = offset + t.token_text.len();
        if continuation.as_bytes().get(offset..end) != Some(t.token_text.as_bytes()) {
            return Err(Error::Alignment {
                offset,
                message: "proxy tokens do not reproduce the continuation".into(),
            });
        }
        offset = end;
    }
    if offset != continuation.len() {
        return Err(Error::Alignment {
            offset,
            message: "proxy tokens stop short of the continuation".into(),
        });
    }
    if let Some(total) = s.total_nll {
        let sum: f64 = s.tokens.iter().map(|t| t.nll).sum();
        if (sum - total).abs() > 1e-6 {
            return Err(Error::Provider(format!(
                "per-token NLLs sum to {sum} but provider reports {total}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn truncate_at_stop<'a>(text: &'a str, stop: &[String]) -> &'a str {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// `-logprob`, with the tiny positive logprobs some servers emit mapped to 0.
pub(crate) fn nll_from_logprob(logprob: f64) -> f64 {
    (-logprob).max(0.0)
}

/// Natural-log probability to probability, clamped to `[1e-12, 1]`.
pub fn prob_from_logprob(logprob: f64) -> f64 {
    logprob.exp().clamp(1e-12, 1.0)
}
