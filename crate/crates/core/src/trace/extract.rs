//! Locating the `{"reasoning": ..., "final_answer": ...}` object in a raw
//! frontier response, keeping track of where each decoded character of the
//! reasoning came from so token probabilities can be carried over.

use std::ops::Range;

use crate::{Error, Result};

/// A decoded JSON string value with the raw byte range of every character.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedString {
    pub value: String,
    /// For each char of `value` (in order): the raw bytes that encode it.
    pub sources: Vec<Range<usize>>,
    /// Raw byte range of the literal's contents (between the quotes).
    pub raw_span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub reasoning: DecodedString,
    pub final_answer: String,
}

/// Returns `(reasoning, final_answer)` from the first well-formed JSON object
/// in `raw`. Surrounding prose and code fences are ignored.
pub fn extract_trace(raw: &str) -> Result<(String, String)> {
    let e = extract_with_spans(raw)?;
    Ok((e.reasoning.value, e.final_answer))
}

pub fn extract_with_spans(raw: &str) -> Result<Extracted> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(rel) = raw[start..].find('{') {
        let open = start + rel;
        if let Some(close) = balanced_end(bytes, open) {
            if serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&raw[open..close]).is_ok() {
                return read_object(raw, open);
            }
        }
        start = open + 1;
    }
    Err(Error::Parse("no JSON object found in response".into()))
}

/// Index one past the `}` matching the `{` at `open`, string-aware.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!("expected '{}' at byte {}", b as char, self.pos)))
        }
    }

    fn hex4(&mut self) -> Result<u32> {
        let s = self
            .src
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::Parse("truncated \\u escape".into()))?;
        self.pos += 4;
        u32::from_str_radix(s, 16).map_err(|_| Error::Parse("bad \\u escape".into()))
    }

    /// Decodes a string literal starting at the opening quote.
    fn string(&mut self) -> Result<DecodedString> {
        self.expect(b'"')?;
        let content_start = self.pos;
        let mut value = String::new();
        let mut sources = Vec::new();
        loop {
            let start = self.pos;
            let c = self.src[self.pos..]
                .chars()
                .next()
                .ok_or_else(|| Error::Parse("unterminated string".into()))?;
            self.pos += c.len_utf8();
            let decoded = match c {
                '"' => {
                    return Ok(DecodedString {
                        value,
                        sources,
                        raw_span: content_start..start,
                    })
                }
                '\\' => {
                    let esc = self.peek().ok_or_else(|| Error::Parse("dangling escape".into()))?;
                    self.pos += 1;
                    match esc {
                        b'"' => '"',
                        b'\\' => '\\',
                        b'/' => '/',
                        b'b' => '\u{8}',
                        b'f' => '\u{c}',
                        b'n' => '\n',
                        b'r' => '\r',
                        b't' => '\t',
                        b'u' => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                if self.src.get(self.pos..self.pos + 2) != Some("\\u") {
                                    return Err(Error::Parse("lone surrogate".into()));
                                }
                                self.pos += 2;
                                let lo = self.hex4()?;
                                0x10000 + ((hi - 0xD800) << 10) + (lo.wrapping_sub(0xDC00) & 0x3FF)
                            } else {
                                hi
                            };
                            char::from_u32(code).ok_or_else(|| Error::Parse("invalid code point".into()))?
                        }
                        _ => return Err(Error::Parse("unknown escape".into())),
                    }
                }
                other => other,
            };
            value.push(decoded);
            sources.push(start..self.pos);
        }
    }

    /// Skips any JSON value.
    fn skip_value(&mut self) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(b'"') => self.string().map(|_| ()),
            Some(b'{') => {
                let end = balanced_end(self.src.as_bytes(), self.pos)
                    .ok_or_else(|| Error::Parse("unbalanced object".into()))?;
                self.pos = end;
                Ok(())
            }
            Some(b'[') => {
                let mut depth = 0usize;
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b'"') => {
                            self.string()?;
                            continue;
                        }
                        Some(b'[') => depth += 1,
                        Some(b']') => {
                            depth -= 1;
                            if depth == 0 {
                                self.pos += 1;
                                return Ok(());
                            }
                        }
                        Some(b'{') => {
                            self.skip_value()?;
                            continue;
                        }
                        None => return Err(Error::Parse("unbalanced array".into())),
                        _ => {}
                    }
                    self.pos += 1;
                }
            }
            Some(_) => {
                while !matches!(self.peek(), None | Some(b',' | b'}' | b']')) {
                    self.pos += 1;
                }
                Ok(())
            }
            None => Err(Error::Parse("unexpected end of input".into())),
        }
    }
}

/// Walks the (already validated) object at `open`. Later duplicate keys win,
/// matching serde_json's map semantics.
fn read_object(raw: &str, open: usize) -> Result<Extracted> {
    let mut cur = Cursor { src: raw, pos: open };
    cur.expect(b'{')?;
    let mut reasoning = None;
    let mut answer = None;
    cur.skip_ws();
    if cur.peek() == Some(b'}') {
        return Err(Error::Parse("empty object".into()));
    }
    loop {
        cur.skip_ws();
        let key = cur.string()?.value;
        cur.expect(b':')?;
        cur.skip_ws();
        match key.as_str() {
            "reasoning" | "final_answer" => {
                if cur.peek() != Some(b'"') {
                    return Err(Error::Parse(format!("value of \"{key}\" is not a string")));
                }
                let s = cur.string()?;
                if key == "reasoning" {
                    reasoning = Some(s);
                } else {
                    answer = Some(s.value);
                }
            }
            _ => cur.skip_value()?,
        }
        cur.skip_ws();
        match cur.peek() {
            Some(b',') => cur.pos += 1,
            Some(b'}') => break,
            _ => return Err(Error::Parse(format!("malformed object near byte {}", cur.pos))),
        }
    }
    match (reasoning, answer) {
        (Some(reasoning), Some(final_answer)) => Ok(Extracted {
            reasoning,
            final_answer,
        }),
        (None, _) => Err(Error::Parse("missing key \"reasoning\"".into())),
        (_, None) => Err(Error::Parse("missing key \"final_answer\"".into())),
    }
}
