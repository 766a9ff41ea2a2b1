//! OpenAI-compatible HTTP client.
//!
//! Frontier traces use `POST {endpoint}/chat/completions` with
//! `logprobs: true`; proxy scoring uses `POST {endpoint}/completions` with
//! `echo: true` so the server returns logprobs for the prompt tokens.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    nll_from_logprob, Backend, ChatRequest, Completion, ContinuationScore, GenerateRequest, ProxyTokenNLL, Role,
    ScoreRequest, TokenLogprobRow,
};
use crate::{Error, Result};

const RETRIES: u32 = 3;

pub struct RemoteBackend {
    base: String,
    model_id: String,
    secret: Option<String>,
    client: Client,
    backoff: Duration,
}

impl RemoteBackend {
    pub fn new(endpoint: String, model_id: String, secret: Option<String>, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Provider(format!("http client: {e}")))?;
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_owned(),
            model_id,
            secret,
            client,
            backoff: Duration::from_millis(250),
        })
    }

    /// Base delay of the exponential retry backoff.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    /// Fails with a capability error if the endpoint cannot serve `role`.
    pub fn probe(&self, role: Role) -> Result<()> {
        match role {
            Role::Frontier => {
                let c = self.complete(&ChatRequest {
                    system: "You are a helpful assistant.".into(),
                    user: "Reply with OK.".into(),
                    max_tokens: 2,
                    attempt: 0,
                })?;
                if !c.text.is_empty() && c.rows.is_empty() {
                    return Err(Error::Capability("chat endpoint returned no logprobs".into()));
                }
            }
            Role::Proxy => {
                let s = self.score(&ScoreRequest {
                    context: "Hello".into(),
                    continuation: " world".into(),
                })?;
                if s.tokens.is_empty() {
                    return Err(Error::Capability(
                        "completions endpoint did not echo prompt logprobs".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.base, path);
        let mut last_err = String::new();
        for attempt in 0..=RETRIES {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(secret) = &self.secret {
                req = req.bearer_auth(secret);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_err = e.to_string();
                    log::warn!("request to {url} failed (attempt {}): {e}", attempt + 1);
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            if status.is_success() {
                return serde_json::from_str(&text)
                    .map_err(|e| Error::Provider(format!("malformed response from {url}: {e}")));
            }
            match status {
                StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                    return Err(Error::Provider(format!("authentication failed ({status}) at {url}")));
                }
                StatusCode::TOO_MANY_REQUESTS => {}
                s if s.is_server_error() => {}
                StatusCode::BAD_REQUEST | StatusCode::NOT_FOUND | StatusCode::UNPROCESSABLE_ENTITY => {
                    return Err(Error::Capability(format!("{url} rejected request ({status}): {text}")));
                }
                _ => return Err(Error::Provider(format!("{url} returned {status}: {text}"))),
            }
            last_err = format!("{status}: {text}");
            log::warn!("{url} returned {status} (attempt {})", attempt + 1);
        }
        Err(Error::Provider(format!(
            "{url} failed after {} attempts: {last_err}",
            RETRIES + 1
        )))
    }
}

fn first_choice(v: &Value) -> Result<&Value> {
    v.get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Provider("response has no choices".into()))
}

/// Undoes common vocabulary display conventions (byte-level BPE and
/// SentencePiece space markers).
pub fn normalize_token_text(token: &str) -> String {
    token
        .chars()
        .map(|c| match c {
            'Ġ' | '▁' => ' ',
            'Ċ' => '\n',
            'ĉ' => '\t',
            other => other,
        })
        .collect()
}

/// Splits `full` into per-row texts, giving each character to the row that
/// holds its first byte. Rows that end up empty are dropped.
fn assign_chars(full: &str, row_ends: &[usize], logprobs: &[f64]) -> Vec<TokenLogprobRow> {
    let mut out: Vec<TokenLogprobRow> = Vec::with_capacity(row_ends.len());
    let mut row = 0;
    let mut row_start = 0;
    let mut current = String::new();
    let mut current_start = 0;
    for (i, c) in full.char_indices() {
        while row < row_ends.len() && i >= row_ends[row] {
            if !current.is_empty() {
                out.push(TokenLogprobRow {
                    token_text: std::mem::take(&mut current),
                    logprob: logprobs[row],
                    byte_offset: current_start,
                });
            }
            row_start = row_ends[row];
            row += 1;
        }
        if current.is_empty() {
            current_start = i.max(row_start);
        }
        current.push(c);
    }
    if !current.is_empty() && row < logprobs.len() {
        out.push(TokenLogprobRow {
            token_text: current,
            logprob: logprobs[row],
            byte_offset: current_start,
        });
    }
    out
}

fn char_to_byte(text: &str, char_offset: usize) -> Option<usize> {
    if char_offset == 0 {
        return Some(0);
    }
    text.char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .nth(char_offset)
}

impl Backend for RemoteBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let body = json!({
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": 0,
            "max_tokens": req.max_tokens,
            "logprobs": true,
        });
        let v = self.post("chat/completions", &body)?;
        let choice = first_choice(&v)?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Provider("chat response has no message content".into()))?
            .to_owned();
        let Some(entries) = choice.pointer("/logprobs/content").and_then(Value::as_array) else {
            return Err(Error::Capability("chat endpoint returned no logprobs".into()));
        };
        let mut bytes = Vec::new();
        let mut ends = Vec::with_capacity(entries.len());
        let mut logprobs = Vec::with_capacity(entries.len());
        for e in entries {
            let lp = e
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Capability("logprob entry without a logprob".into()))?;
            match e.get("bytes").and_then(Value::as_array) {
                Some(raw) => bytes.extend(raw.iter().filter_map(Value::as_u64).map(|b| b as u8)),
                None => bytes.extend(e.get("token").and_then(Value::as_str).unwrap_or_default().as_bytes()),
            }
            ends.push(bytes.len());
            logprobs.push(lp);
        }
        let joined = String::from_utf8(bytes)
            .map_err(|_| Error::Capability("logprob tokens are not valid UTF-8 overall".into()))?;
        if joined != text {
            return Err(Error::Capability(
                "logprob tokens do not reproduce the completion text".into(),
            ));
        }
        let rows = assign_chars(&text, &ends, &logprobs);
        Ok(Completion { text, rows })
    }

    fn score(&self, req: &ScoreRequest) -> Result<ContinuationScore> {
        let prompt = format!("{}{}", req.context, req.continuation);
        let body = json!({
            "model": self.model_id,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "echo": true,
            "logprobs": 1,
        });
        let v = self.post("completions", &body)?;
        let lp = first_choice(&v)?
            .get("logprobs")
            .filter(|l| !l.is_null())
            .ok_or_else(|| Error::Capability("completions endpoint returned no logprobs".into()))?;
        let tokens: Vec<&str> = lp
            .get("tokens")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Capability("logprobs without tokens".into()))?
            .iter()
            .map(|t| t.as_str().unwrap_or_default())
            .collect();
        let token_lps: Vec<Option<f64>> = lp
            .get("token_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Capability("logprobs without token_logprobs".into()))?
            .iter()
            .map(Value::as_f64)
            .collect();
        if token_lps.len() != tokens.len() {
            return Err(Error::Provider("tokens and token_logprobs differ in length".into()));
        }

        // Byte spans of each token within the prompt.
        let spans: Vec<(usize, usize)> = match lp.get("text_offset").and_then(Value::as_array) {
            Some(offsets) if offsets.len() == tokens.len() => {
                let starts: Vec<usize> = offsets
                    .iter()
                    .map(|o| o.as_u64().unwrap_or(0) as usize)
                    .map(|c| char_to_byte(&prompt, c).unwrap_or(prompt.len()))
                    .collect();
                (0..starts.len())
                    .map(|i| {
                        let end = starts
                            .get(i + 1)
                            .copied()
                            .unwrap_or(starts[i] + tokens[i].len())
                            .min(prompt.len());
                        (starts[i], end.max(starts[i]))
                    })
                    .collect()
            }
            _ => {
                let mut pos = 0;
                tokens
                    .iter()
                    .map(|t| {
                        let start = pos;
                        pos += normalize_token_text(t).len();
                        (start.min(prompt.len()), pos.min(prompt.len()))
                    })
                    .collect()
            }
        };

        let ctx_len = req.context.len();
        let mut out: Vec<ProxyTokenNLL> = Vec::new();
        let mut pending = 0.0;
        for (i, &(start, end)) in spans.iter().enumerate() {
            if start >= prompt.len() {
                break;
            }
            if end <= ctx_len && !(start == end && start == ctx_len) {
                continue;
            }
            if start < ctx_len {
                return Err(Error::Boundary {
                    context_len: ctx_len,
                    token_start: start,
                    token_end: end,
                });
            }
            let lp = token_lps[i]
                .ok_or_else(|| Error::Capability("continuation token without logprob (empty context?)".into()))?;
            let nll = nll_from_logprob(lp);
            if start == end {
                pending += nll;
                continue;
            }
            out.push(ProxyTokenNLL {
                token_text: prompt[start..end].to_owned(),
                nll: nll + pending,
            });
            pending = 0.0;
        }
        if pending > 0.0 {
            if let Some(last) = out.last_mut() {
                last.nll += pending;
            }
        }
        Ok(ContinuationScore {
            tokens: out,
            total_nll: None,
        })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<String> {
        let mut body = json!({
            "model": self.model_id,
            "prompt": req.context,
            "max_tokens": req.max_tokens,
            "temperature": 0,
        });
        if !req.stop.is_empty() {
            body["stop"] = json!(req.stop);
        }
        let v = self.post("completions", &body)?;
        first_choice(&v)?
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Provider("completion has no text".into()))
    }
}
