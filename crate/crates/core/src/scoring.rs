//! The weighted-NLL proxy score and baseline proxy metrics.
//!
//! All NLLs are in nats.

use serde::{Deserialize, Serialize};

use crate::alignment::{align_spans, expand_to_letters, token_weights, WeightVector};
use crate::providers::ProxyTokenNLL;
use crate::trace::{BenchmarkItem, TracedExample};
use crate::{Error, Result};

/// +1 when larger values are better, -1 when smaller values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::HigherBetter => 1.0,
            Orientation::LowerBetter => -1.0,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Orientation::HigherBetter),
            -1 => Some(Orientation::LowerBetter),
            _ => None,
        }
    }

    /// Resolves the orientation from a metric name.
    ///
    /// NLL-family and distance metrics are lower-better; accuracy and
    /// probability metrics are higher-better.
    pub fn for_metric(metric: &str) -> Option<Self> {
        let base = metric.split('@').next().unwrap_or(metric);
        match base {
            "rbridge" | "nll" | "nll_rphi" | "nll_scb" | "ted" => Some(Orientation::LowerBetter),
            "mpca" | "accuracy" | "correct_prob" | "norm_correct_prob" | "total_prob" | "margin" | "cf_accuracy" => {
                Some(Orientation::HigherBetter)
            }
            _ if base.starts_with("nll") => Some(Orientation::LowerBetter),
            _ => None,
        }
    }
}

impl Serialize for Orientation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign() as i8)
    }
}

impl<'de> Deserialize<'de> for Orientation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Orientation::from_sign(v)
            .ok_or_else(|| serde::de::Error::custom(format!("orientation must be 1 or -1, got {v}")))
    }
}

/// One point of a proxy or target series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub benchmark: String,
    pub dataset: String,
    pub checkpoint_tokens: u64,
    pub metric: String,
    pub value: f64,
    pub orientation: Orientation,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::Data(format!(
                "non-finite value for {}/{}/{}",
                self.benchmark, self.dataset, self.metric
            )));
        }
        if let Some(o) = Orientation::for_metric(&self.metric) {
            if o != self.orientation {
                return Err(Error::Data(format!(
                    "metric {} has fixed orientation {}",
                    self.metric,
                    o.sign()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenContribution {
    pub nll: f64,
    pub raw_weight: f64,
    pub normalized_weight: f64,
    pub weighted_nll: f64,
}

/// Per-token breakdown and mean weighted NLL for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedScore {
    pub item_id: String,
    pub per_token: Vec<TokenContribution>,
    pub value: f64,
}

fn check_nlls(nlls: &[ProxyTokenNLL]) -> Result<()> {
    match nlls.iter().find(|t| !(t.nll.is_finite() && t.nll >= 0.0)) {
        Some(t) => Err(Error::invalid(format!(
            "invalid NLL {} for token {:?}",
            t.nll, t.token_text
        ))),
        None => Ok(()),
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Mean over tokens of `nll_i * normalized_weight_i`.
pub fn rbridge_score(item_id: &str, nlls: &[ProxyTokenNLL], weights: &WeightVector) -> Result<WeightedScore> {
    if nlls.len() != weights.raw.len() || nlls.len() != weights.normalized.len() {
        return Err(Error::invalid(format!(
            "{} NLLs but {} weights",
            nlls.len(),
            weights.raw.len()
        )));
    }
    if nlls.is_empty() {
        return Err(Error::invalid("no tokens to score"));
    }
    check_nlls(nlls)?;
    let per_token: Vec<TokenContribution> = nlls
        .iter()
        .zip(weights.raw.iter().zip(&weights.normalized))
        .map(|(t, (&raw, &norm))| TokenContribution {
            nll: t.nll,
            raw_weight: raw,
            normalized_weight: norm,
            weighted_nll: t.nll * norm,
        })
        .collect();
    let value = mean(per_token.iter().map(|c| c.weighted_nll));
    Ok(WeightedScore {
        item_id: item_id.to_owned(),
        per_token,
        value,
    })
}

/// Full per-example path: letter expansion, proxy-token weights, MinMax,
/// weighted mean.
pub fn score_trace(trace: &TracedExample, nlls: &[ProxyTokenNLL]) -> Result<WeightedScore> {
    let letters = expand_to_letters(&trace.frontier_tokens, &trace.reasoning)?;
    let texts: Vec<&str> = nlls.iter().map(|t| t.token_text.as_str()).collect();
    let spans = align_spans(&trace.reasoning, &texts)?;
    let weights = WeightVector::from_raw(token_weights(&letters, &spans)?)?;
    rbridge_score(&trace.item_id, nlls, &weights)
}

/// Plain mean NLL.
pub fn plain_nll(nlls: &[ProxyTokenNLL]) -> Result<f64> {
    if nlls.is_empty() {
        return Err(Error::invalid("no tokens to average"));
    }
    check_nlls(nlls)?;
    Ok(mean(nlls.iter().map(|t| t.nll)))
}

/// Which string is scored as the gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    /// The benchmark's own answer.
    DatasetAnswer,
    /// The frontier reasoning alone, answer discarded.
    Reasoning,
    /// Reasoning followed by an answer suffix.
    ReasoningWithAnswer,
}

pub const DEFAULT_ANSWER_SUFFIX: &str = "\nFinal Answer: {answer}";

pub fn build_label(
    variant: LabelVariant,
    item: &BenchmarkItem,
    trace: Option<&TracedExample>,
    answer_suffix: &str,
) -> Result<String> {
    match variant {
        LabelVariant::DatasetAnswer => Ok(item.gold_answer.clone()),
        LabelVariant::Reasoning | LabelVariant::ReasoningWithAnswer => {
            let trace = trace.ok_or_else(|| Error::invalid(format!("item {} has no reasoning trace", item.id)))?;
            if variant == LabelVariant::Reasoning {
                Ok(trace.reasoning.clone())
            } else {
                Ok(format!(
                    "{}{}",
                    trace.reasoning,
                    answer_suffix.replace("{answer}", &trace.final_answer)
                ))
            }
        }
    }
}

/// Total sequence probability of the gold answer, `exp(-sum nll)`.
pub fn mpca(answer_nlls: &[f64]) -> Result<f64> {
    if answer_nlls.is_empty() {
        return Err(Error::invalid("no answer tokens"));
    }
    if answer_nlls.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
        return Err(Error::invalid("invalid answer NLL"));
    }
    Ok((-answer_nlls.iter().sum::<f64>()).exp())
}

/// Levenshtein distance over token sequences with unit costs.
pub fn ted<T: PartialEq>(generated: &[T], gold: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=gold.len()).collect();
    let mut cur = vec![0; gold.len() + 1];
    for (i, g) in generated.iter().enumerate() {
        cur[0] = i + 1;
        for (j, t) in gold.iter().enumerate() {
            let sub = prev[j] + usize::from(g != t);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[gold.len()]
}

/// Multiple-choice proxy metrics for one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMetrics {
    pub correct_prob: f64,
    pub norm_correct_prob: f64,
    pub total_prob: f64,
    pub margin: f64,
    pub cf_accuracy: f64,
}

impl McMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "correct_prob" => Some(self.correct_prob),
            "norm_correct_prob" => Some(self.norm_correct_prob),
            "total_prob" => Some(self.total_prob),
            "margin" => Some(self.margin),
            "cf_accuracy" => Some(self.cf_accuracy),
            _ => None,
        }
    }
}

pub const MC_METRICS: [&str; 5] = [
    "correct_prob",
    "norm_correct_prob",
    "total_prob",
    "margin",
    "cf_accuracy",
];

pub fn mc_metrics(option_nll_sums: &[f64], correct_index: usize, option_lengths: &[usize]) -> Result<McMetrics> {
    if option_nll_sums.is_empty() || option_nll_sums.len() != option_lengths.len() {
        return Err(Error::invalid(format!(
            "{} option NLLs but {} option lengths",
            option_nll_sums.len(),
            option_lengths.len()
        )));
    }
    if correct_index >= option_nll_sums.len() {
        return Err(Error::invalid(format!(
            "correct index {correct_index} out of bounds for {} options",
            option_nll_sums.len()
        )));
    }
    if option_lengths.contains(&0) {
        return Err(Error::invalid("option of zero length"));
    }
    if option_nll_sums.iter().any(|n| !n.is_finite()) {
        return Err(Error::invalid("non-finite option NLL"));
    }
    let probs: Vec<f64> = option_nll_sums.iter().map(|n| (-n).exp()).collect();
    let correct = probs[correct_index];
    let total: f64 = probs.iter().sum();
    let best_other = probs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != correct_index)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = if best_other.is_finite() {
        correct - best_other
    } else {
        correct
    };
    // argmin of length-normalized NLL, lowest index on ties
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (k, (n, len)) in option_nll_sums.iter().zip(option_lengths).enumerate() {
        let v = n / *len as f64;
        if v < best_val {
            best_val = v;
            best = k;
        }
    }
    Ok(McMetrics {
        correct_prob: correct,
        norm_correct_prob: if total > 0.0 { correct / total } else { 0.0 },
        total_prob: total,
        margin,
        cf_accuracy: if best == correct_index { 1.0 } else { 0.0 },
    })
}

fn normalize_answer(s: &str) -> String {
    let mut t = s.trim().to_lowercase().replace(',', "");
    while t.ends_with('.') {
        t.pop();
    }
    t.trim().to_owned()
}

/// 1 when the normalized strings (or parsed numbers) match, else 0.
pub fn accuracy(extracted: &str, gold: &str) -> u8 {
    let (a, b) = (normalize_answer(extracted), normalize_answer(gold));
    if a.is_empty() {
        return 0;
    }
    if a == b {
        return 1;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            let scale = x.abs().max(y.abs());
            u8::from(x == y || (x - y).abs() <= 1e-6 * scale)
        }
        _ => 0,
    }
}

/// Mean accuracy over `(extracted, gold)` pairs.
pub fn mean_accuracy<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no items"));
    }
    let hits: u32 = pairs
        .iter()
        .map(|(a, b)| u32::from(accuracy(a.as_ref(), b.as_ref())))
        .sum();
    Ok(f64::from(hits) / pairs.len() as f64)
}

/// Pulls a final answer out of free-form generated text: the text after the
/// last answer marker, else the last non-empty line.
pub fn extract_generated_answer(text: &str) -> String {
    const MARKERS: [&str; 3] = ["final answer:", "the answer is", "answer:"];
    let lower = text.to_lowercase();
    for marker in MARKERS {
        if let Some(pos) = lower.rfind(marker) {
            let rest = &text[pos + marker.len()..];
            return rest.lines().next().unwrap_or("").trim().to_owned();
        }
    }
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Min,
    Max,
}

pub fn benchmark_aggregate(per_example: &[f64], stat: Aggregate) -> Result<f64> {
    if per_example.is_empty() {
        return Err(Error::invalid("no per-example values"));
    }
    Ok(match stat {
        Aggregate::Mean => mean(per_example.iter().copied()),
        Aggregate::Min => per_example.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregate::Max => per_example.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
