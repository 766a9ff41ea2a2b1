//! Reasoning-trace acquisition from a frontier model.

mod extract;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use extract::{extract_trace, extract_with_spans, DecodedString, Extracted};

use crate::parallel::ordered_map;
use crate::providers::{prob_from_logprob, ChatPrompt, Completion, ProviderHandle};
use crate::{Error, Result};

/// Generation attempts per item before it is dropped.
pub const MAX_ATTEMPTS: u32 = 2;

/// One benchmark question. Serialized with the benchmark-file field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: String,
    #[serde(rename = "task")]
    pub task_label: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, rename = "correct_index", skip_serializing_if = "Option::is_none")]
    pub correct_option_index: Option<usize>,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<()> {
        match (&self.options, self.correct_option_index) {
            (None, None) => Ok(()),
            (Some(opts), Some(i)) if i < opts.len() => Ok(()),
            (Some(opts), Some(i)) => Err(Error::invalid(format!(
                "item {}: correct_index {i} out of bounds for {} options",
                self.id,
                opts.len()
            ))),
            _ => Err(Error::invalid(format!(
                "item {}: options and correct_index must appear together",
                self.id
            ))),
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.options.is_some()
    }
}

/// Checks per-item invariants and id uniqueness across a benchmark.
pub fn validate_benchmark(items: &[BenchmarkItem]) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        item.validate()?;
        if !seen.insert(item.id.as_str()) {
            return Err(Error::invalid(format!("duplicate item id {}", item.id)));
        }
    }
    Ok(())
}

/// A frontier reasoning trace with per-token probabilities restricted to the
/// reasoning text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracedExample {
    pub item_id: String,
    pub reasoning: String,
    pub final_answer: String,
    #[serde(rename = "frontier_model")]
    pub frontier_model_id: String,
    #[serde(rename = "tokens")]
    pub frontier_tokens: Vec<(String, f64)>,
}

impl TracedExample {
    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for (text, p) in &self.frontier_tokens {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::invalid(format!(
                    "trace {}: token probability {p} outside (0, 1]",
                    self.item_id
                )));
            }
            let end = offset + text.len();
            if self.reasoning.as_bytes().get(offset..end) != Some(text.as_bytes()) {
                return Err(Error::Alignment {
                    offset,
                    message: format!("trace {}: tokens do not rebuild the reasoning", self.item_id),
                });
            }
            offset = end;
        }
        if offset != self.reasoning.len() {
            return Err(Error::Alignment {
                offset,
                message: format!("trace {}: tokens stop short of the reasoning", self.item_id),
            });
        }
        Ok(())
    }
}

/// The frontier prompt: task-specific system line and a JSON-format instruction.
pub fn build_prompt(task_label: &str, question: &str) -> Result<ChatPrompt> {
    let task = task_label.trim();
    if task.is_empty() {
        return Err(Error::invalid("task label is empty"));
    }
    if question.trim().is_empty() {
        return Err(Error::invalid("question is empty"));
    }
    Ok(ChatPrompt {
        system: format!("You are a helpful assistant that solves {task_label} problems."),
        user: format!(
            "{question}\n\nRespond ONLY with a JSON object in this exact format:\n\
             {{ \"reasoning\": \"your step by step reasoning\", \"final_answer\": \"your final answer\" }}"
        ),
    })
}

impl ChatPrompt {
    /// Flat rendering with `System:`/`User:` segments.
    pub fn render(&self) -> String {
        format!("System: {}\n\nUser: {}", self.system, self.user)
    }
}

/// Maps the completion's logprob rows onto the decoded reasoning text.
///
/// Every decoded character goes to the row containing the first raw byte of
/// its encoding. Rows straddling the reasoning boundary keep their
/// probability with the text clipped to the reasoning.
pub fn reasoning_tokens(completion: &Completion, reasoning: &DecodedString) -> Result<Vec<(String, f64)>> {
    let mut expected = 0;
    for row in &completion.rows {
        if row.byte_offset != expected {
            return Err(Error::Alignment {
                offset: expected,
                message: "logprob rows do not tile the completion".into(),
            });
        }
        expected += row.token_text.len();
    }
    if expected != completion.text.len() {
        return Err(Error::Alignment {
            offset: expected,
            message: "logprob rows do not cover the completion".into(),
        });
    }

    let mut out: Vec<(String, f64)> = Vec::new();
    let mut row_idx = 0;
    let mut last_row = usize::MAX;
    for (c, src) in reasoning.value.chars().zip(&reasoning.sources) {
        while row_idx < completion.rows.len() {
            let r = &completion.rows[row_idx];
            if src.start < r.byte_offset + r.token_text.len() {
                break;
            }
            row_idx += 1;
        }
        let row = completion.rows.get(row_idx).ok_or_else(|| Error::Alignment {
            offset: src.start,
            message: "reasoning byte outside every logprob row".into(),
        })?;
        if row_idx == last_row {
            out.last_mut().expect("row already started").0.push(c);
        } else {
            out.push((c.to_string(), prob_from_logprob(row.logprob)));
            last_row = row_idx;
        }
    }
    Ok(out)
}

/// Result of running the frontier over a benchmark.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Acquisition {
    pub traces: Vec<TracedExample>,
    pub dropped: Vec<String>,
}

enum ItemOutcome {
    Traced(TracedExample),
    Dropped(String),
}

fn acquire_one(item: &BenchmarkItem, frontier: &ProviderHandle) -> Result<ItemOutcome> {
    let prompt = build_prompt(&item.task_label, &item.question)?;
    for attempt in 0..MAX_ATTEMPTS {
        let completion = frontier.frontier_complete(&prompt, attempt)?;
        let parsed = extract_with_spans(&completion.text).and_then(|e| {
            if e.reasoning.value.trim().is_empty() {
                return Err(Error::Parse("empty reasoning".into()));
            }
            let tokens = reasoning_tokens(&completion, &e.reasoning)?;
            Ok(TracedExample {
                item_id: item.id.clone(),
                reasoning: e.reasoning.value,
                final_answer: e.final_answer,
                frontier_model_id: frontier.model_id().to_owned(),
                frontier_tokens: tokens,
            })
        });
        match parsed {
            Ok(trace) => return Ok(ItemOutcome::Traced(trace)),
            Err(e) => log::debug!("item {} attempt {}: {e}", item.id, attempt + 1),
        }
    }
    log::info!("dropping item {} after {MAX_ATTEMPTS} failed extractions", item.id);
    Ok(ItemOutcome::Dropped(item.id.clone()))
}

/// Runs the frontier over every item with at most two attempts each.
///
/// Items whose responses never parse are listed in `dropped`. A provider
/// failure aborts with [`Error::PartialResults`] carrying whatever finished.
pub fn acquire_traces(items: &[BenchmarkItem], frontier: &ProviderHandle) -> Result<Acquisition> {
    validate_benchmark(items)?;
    let outcomes = ordered_map(items, frontier.max_inflight(), |item| acquire_one(item, frontier));
    let mut acq = Acquisition::default();
    let mut first_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(ItemOutcome::Traced(t)) => acq.traces.push(t),
            Ok(ItemOutcome::Dropped(id)) => acq.dropped.push(id),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        None => Ok(acq),
        Some(e) => Err(Error::PartialResults {
            completed: acq.traces,
            dropped: acq.dropped,
            source: Box::new(e),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MalformedRule, MockConfig, TokenLogprobRow};

    fn item(id: &str, q: &str) -> BenchmarkItem {
        BenchmarkItem {
            id: id.into(),
            task_label: "math".into(),
            question: q.into(),
            gold_answer: "4".into(),
            options: None,
            correct_option_index: None,
        }
    }

    #[test]
    fn prompt_contents() {
        let p = build_prompt("math", "What is 2+2?").unwrap();
        let text = p.render();
        assert!(text.contains("You are a helpful assistant that solves math problems."));
        assert!(text.contains("Respond ONLY with a JSON object in this exact format:"));
        assert!(text.contains(r#"{ "reasoning": "your step by step reasoning", "final_answer": "your final answer" }"#));
        assert!(text.contains("What is 2+2?"));
        assert_eq!(text, build_prompt("math", "What is 2+2?").unwrap().render());
    }

    #[test]
    fn prompt_rejects_empty_slots() {
        assert!(matches!(build_prompt("", "q"), Err(Error::InvalidInput(_))));
        assert!(matches!(build_prompt("math", "  "), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn item_validation() {
        let mut it = item("a", "q");
        it.options = Some(vec!["x".into(), "y".into()]);
        assert!(it.validate().is_err());
        it.correct_option_index = Some(2);
        assert!(it.validate().is_err());
        it.correct_option_index = Some(1);
        assert!(it.validate().is_ok());
        assert!(validate_benchmark(&[item("a", "q"), item("a", "r")]).is_err());
    }

    #[test]
    fn straddling_rows_are_clipped() {
        let text = r#"{"reasoning": "a\nb c", "final_answer": "4"}"#;
        let pieces = [
            r#"{"reasoning": "a"#,
            r#"\"#,
            r#"nb"#,
            r#" c","#,
            r#" "final_answer": "4"}"#,
        ];
        let mut offset = 0;
        let rows: Vec<TokenLogprobRow> = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let r = TokenLogprobRow {
                    token_text: p.to_string(),
                    logprob: -(i as f64 + 1.0) / 10.0,
                    byte_offset: offset,
                };
                offset += p.len();
                r
            })
            .collect();
        let completion = Completion {
            text: text.into(),
            rows,
        };
        let e = extract_with_spans(text).unwrap();
        let toks = reasoning_tokens(&completion, &e.reasoning).unwrap();
        let texts: Vec<&str> = toks.iter().map(|(t, _)| t.as_str()).collect();
        // The "\n" escape starts in row 1, so the newline belongs to it.
        assert_eq!(texts, vec!["a", "\n", "b", " c"]);
        assert_eq!(toks[0].1, (-0.1f64).exp());
        assert_eq!(toks[3].1, (-0.4f64).exp());
        assert_eq!(texts.concat(), e.reasoning.value);
    }

    #[test]
    fn all_first_attempts_valid() {
        let frontier = ProviderHandle::mock("frontier", MockConfig::default());
        let items = vec![
            item("a", "What is 2+2?"),
            item("b", "What is 3+5?"),
            item("c", "Solve x+1=2"),
        ];
        let acq = acquire_traces(&items, &frontier).unwrap();
        assert_eq!(acq.traces.len(), 3);
        assert!(acq.dropped.is_empty());
        assert_eq!(frontier.backend_calls(), 3);
        for t in &acq.traces {
            t.validate().unwrap();
        }
        let ids: Vec<_> = acq.traces.iter().map(|t| t.item_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn retry_then_success() {
        let frontier = ProviderHandle::mock(
            "frontier",
            MockConfig {
                malformed: vec![MalformedRule {
                    contains: "flaky".into(),
                    attempts: 1,
                }],
                ..MockConfig::default()
            },
        );
        let acq = acquire_traces(&[item("a", "a flaky question")], &frontier).unwrap();
        assert_eq!(acq.traces.len(), 1);
        assert_eq!(frontier.backend_calls(), 2);
    }

    #[test]
    fn double_failure_drops() {
        let frontier = ProviderHandle::mock(
            "frontier",
            MockConfig {
                malformed: vec![MalformedRule {
                    contains: "broken".into(),
                    attempts: 2,
                }],
                ..MockConfig::default()
            },
        );
        let acq = acquire_traces(&[item("x", "a broken question")], &frontier).unwrap();
        assert!(acq.traces.is_empty());
        assert_eq!(acq.dropped, vec!["x".to_string()]);
        assert_eq!(frontier.backend_calls(), 2);
    }

    #[test]
    fn transport_failure_returns_partial_results() {
        let frontier = ProviderHandle::mock(
            "frontier",
            MockConfig {
                transport_failures: vec!["explode".into()],
                ..MockConfig::default()
            },
        );
        let items = vec![item("a", "fine"), item("b", "explode now"), item("c", "also fine")];
        match acquire_traces(&items, &frontier) {
            Err(Error::PartialResults { completed, source, .. }) => {
                assert_eq!(completed.len(), 2);
                assert!(matches!(*source, Error::Provider(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn call_budget_is_two_per_item() {
        let frontier = ProviderHandle::mock(
            "frontier",
            MockConfig {
                malformed: vec![MalformedRule {
                    contains: "q".into(),
                    attempts: 5,
                }],
                ..MockConfig::default()
            },
        );
        let items: Vec<_> = (0..10).map(|i| item(&format!("i{i}"), &format!("q{i}"))).collect();
        let acq = acquire_traces(&items, &frontier).unwrap();
        assert_eq!(acq.dropped.len(), 10);
        assert!(frontier.backend_calls() <= 2 * items.len());
    }
}
