use serde::{Deserialize, Serialize};

use super::{
    nll_from_logprob, Backend, ChatRequest, Completion, ContinuationScore, GenerateRequest, ProxyTokenNLL,
    ScoreRequest, TokenLogprobRow,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Words with their leading whitespace attached (`"a b"` -> `["a", " b"]`).
    #[default]
    Whitespace,
    /// One token per Unicode scalar value.
    Chars,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockNll {
    /// NLL in `[0.05, 8.0)` from a seeded hash of the context and token prefix.
    #[default]
    Hashed,
    /// Every token costs `ln(vocab)`.
    Uniform { vocab: u64 },
}

/// Makes the first `attempts` completions for matching prompts unparseable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalformedRule {
    pub contains: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub seed: u64,
    pub tokenization: Tokenization,
    pub nll: MockNll,
    /// When false, completions come back without logprob rows.
    pub logprobs: bool,
    pub fixed_output: Option<String>,
    pub malformed: Vec<MalformedRule>,
    /// Prompts containing any of these fail with a transport error.
    pub transport_failures: Vec<String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tokenization: Tokenization::Whitespace,
            nll: MockNll::Hashed,
            logprobs: true,
            fixed_output: None,
            malformed: Vec::new(),
            transport_failures: Vec::new(),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

// splitmix64 finalizer
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (finalize(h) >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn tokenize(text: &str, mode: Tokenization) -> Vec<&str> {
    match mode {
        Tokenization::Chars => text.char_indices().map(|(i, c)| &text[i..i + c.len_utf8()]).collect(),
        Tokenization::Whitespace => {
            let mut out = Vec::new();
            let mut start = 0;
            let mut seen_word = false;
            for (i, c) in text.char_indices() {
                if c.is_whitespace() {
                    if seen_word {
                        out.push(&text[start..i]);
                        start = i;
                        seen_word = false;
                    }
                } else {
                    seen_word = true;
                }
            }
            if start < text.len() {
                out.push(&text[start..]);
            }
            out
        }
    }
}

const WORDS: &[&str] = &[
    "First,",
    "we",
    "add",
    "the",
    "two",
    "numbers",
    "to",
    "get",
    "sum.",
    "Then",
    "divide",
    "by",
    "3",
    "so",
    "x",
    "=",
    "12",
    "and",
    "check",
    "modulo",
    "9.",
    "Step",
    "1:",
    "2:",
    "Therefore",
    "answer",
    "is",
    "\"exact\"",
    "café",
    "\n",
];

/// Deterministic in-process model.
pub struct MockBackend {
    base: u64,
    config: MockConfig,
}

impl MockBackend {
    pub fn new(model_id: &str, config: MockConfig) -> Self {
        let base = fnv(fnv(FNV_OFFSET, &config.seed.to_le_bytes()), model_id.as_bytes());
        Self { base, config }
    }

    fn check_transport(&self, text: &str) -> Result<()> {
        match self
            .config
            .transport_failures
            .iter()
            .find(|m| text.contains(m.as_str()))
        {
            Some(m) => Err(Error::Provider(format!("mock transport failure ({m})"))),
            None => Ok(()),
        }
    }

    fn words(&self, h: u64, n: usize) -> String {
        let mut out = String::new();
        let mut state = h;
        for i in 0..n {
            state = finalize(state.wrapping_add(i as u64));
            let w = WORDS[(state % WORDS.len() as u64) as usize];
            if i > 0 && w != "\n" && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(w);
        }
        out
    }

    fn trace_response(&self, h: u64) -> String {
        let n_words = 12 + (finalize(h ^ 0x5eed) % 19) as usize;
        let reasoning = self.words(h, n_words);
        let answer = (finalize(h ^ 0xa115) % 100).to_string();
        let object = format!(
            "{{\"reasoning\": {}, \"final_answer\": {}}}",
            serde_json::Value::String(reasoning),
            serde_json::Value::String(answer)
        );
        match finalize(h ^ 0xf00d) % 3 {
            0 => object,
            1 => format!("```json\n{object}\n```"),
            _ => format!("Here is my solution.\n{object}"),
        }
    }

    fn rows_for(&self, text: &str, h: u64) -> Vec<TokenLogprobRow> {
        let mut offset = 0;
        tokenize(text, self.config.tokenization)
            .into_iter()
            .enumerate()
            .map(|(i, tok)| {
                let p = 0.05 + 0.95 * unit(fnv(h ^ i as u64, tok.as_bytes()));
                let row = TokenLogprobRow {
                    token_text: tok.to_owned(),
                    logprob: p.ln(),
                    byte_offset: offset,
                };
                offset += tok.len();
                row
            })
            .collect()
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        self.check_transport(&req.user)?;
        let h = fnv(fnv(self.base, req.system.as_bytes()), req.user.as_bytes());
        let malformed = self
            .config
            .malformed
            .iter()
            .any(|r| req.user.contains(r.contains.as_str()) && req.attempt < r.attempts);
        let text = if malformed {
            "Sorry, I can only answer in prose: the result is probably 4.".to_owned()
        } else if let Some(fixed) = &self.config.fixed_output {
            fixed.clone()
        } else {
            self.trace_response(h)
        };
        let rows = if self.config.logprobs {
            self.rows_for(&text, h)
        } else {
            Vec::new()
        };
        Ok(Completion { text, rows })
    }

    fn score(&self, req: &ScoreRequest) -> Result<ContinuationScore> {
        self.check_transport(&req.context)?;
        let mut state = fnv(self.base, req.context.as_bytes());
        let tokens: Vec<ProxyTokenNLL> = tokenize(&req.continuation, self.config.tokenization)
            .into_iter()
            .map(|tok| {
                state = fnv(finalize(state), tok.as_bytes());
                let nll = match self.config.nll {
                    MockNll::Hashed => 0.05 + 7.95 * unit(state),
                    MockNll::Uniform { vocab } => (vocab.max(1) as f64).ln(),
                };
                ProxyTokenNLL {
                    token_text: tok.to_owned(),
                    nll: nll_from_logprob(-nll),
                }
            })
            .collect();
        let total_nll = Some(tokens.iter().rev().map(|t| t.nll).sum());
        Ok(ContinuationScore { tokens, total_nll })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<String> {
        self.check_transport(&req.context)?;
        let full = match &self.config.fixed_output {
            Some(f) => f.clone(),
            None => {
                let h = fnv(self.base ^ 0x6e6e, req.context.as_bytes());
                format!("{} The answer is {}.", self.words(h, 6), finalize(h) % 100)
            }
        };
        let toks = tokenize(&full, self.config.tokenization);
        let keep: usize = toks.iter().take(req.max_tokens as usize).map(|t| t.len()).sum();
        Ok(full[..keep].to_owned())
    }
}
