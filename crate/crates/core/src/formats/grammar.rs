//! The `<ref>…</ref>` / `<box>[[x1, y1, x2, y2]]</box>` special-token grammar.

use std::fmt;

use thiserror::Error;

use crate::geometry::NormalizedBox;

pub const REF_OPEN: &str = "<ref>";
pub const REF_CLOSE: &str = "</ref>";
pub const BOX_OPEN: &str = "<box>";
pub const BOX_CLOSE: &str = "</box>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecialToken {
    Ref(String),
    Box(NormalizedBox),
}

/// A token together with the byte offset of its opening tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub offset: usize,
    pub token: SpecialToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed special token at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Unclosed(&'static str),
    UnexpectedClose(&'static str),
    Nested(&'static str),
    BadBoxPayload(String),
    NotAnInteger(String),
    OutOfRange([i64; 4]),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Unclosed(tag) => write!(f, "unclosed {tag}"),
            ParseErrorKind::UnexpectedClose(tag) => write!(f, "{tag} without matching open tag"),
            ParseErrorKind::Nested(tag) => write!(f, "{tag} nested inside another special token"),
            ParseErrorKind::BadBoxPayload(p) => {
                write!(f, "box payload {p:?} is not of the form [[x1, y1, x2, y2]]")
            }
            ParseErrorKind::NotAnInteger(v) => write!(f, "coordinate {v:?} is not an integer"),
            ParseErrorKind::OutOfRange(c) => write!(
                f,
                "box {c:?} violates 0 <= x1 <= x2 <= 1000, 0 <= y1 <= y2 <= 1000"
            ),
        }
    }
}

pub fn ref_token(expr: &str) -> String {
    format!("{REF_OPEN}{expr}{REF_CLOSE}")
}

pub fn box_token(b: &NormalizedBox) -> String {
    format!("{BOX_OPEN}{b}{BOX_CLOSE}")
}

pub fn render_tokens(tokens: &[SpecialToken]) -> String {
    tokens
        .iter()
        .map(|t| match t {
            SpecialToken::Ref(s) => ref_token(s),
            SpecialToken::Box(b) => box_token(b),
        })
        .collect()
}

fn err(offset: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { offset, kind }
}

/// Extracts every `<ref>` and `<box>` span in document order.
///
/// Other angle-bracket markup (`<img>`, c-tags, …) is ignored. Box payloads
/// accept any whitespace around the four comma-separated integers.
pub fn parse_special_tokens(text: &str) -> Result<Vec<TokenSpan>, ParseError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find('<') {
        let at = pos + rel;
        let rest = &text[at..];
        if rest.starts_with(REF_OPEN) {
            let body_start = at + REF_OPEN.len();
            let end = text[body_start..]
                .find(REF_CLOSE)
                .map(|e| body_start + e)
                .ok_or_else(|| err(at, ParseErrorKind::Unclosed(REF_OPEN)))?;
            let body = &text[body_start..end];
            for nested in [REF_OPEN, BOX_OPEN, BOX_CLOSE] {
                if let Some(n) = body.find(nested) {
                    return Err(err(body_start + n, ParseErrorKind::Nested(nested)));
                }
            }
            out.push(TokenSpan {
                offset: at,
                token: SpecialToken::Ref(body.to_string()),
            });
            pos = end + REF_CLOSE.len();
        } else if rest.starts_with(BOX_OPEN) {
            let body_start = at + BOX_OPEN.len();
            let end = text[body_start..]
                .find(BOX_CLOSE)
                .map(|e| body_start + e)
                .ok_or_else(|| err(at, ParseErrorKind::Unclosed(BOX_OPEN)))?;
            let b = parse_box_payload(&text[body_start..end], body_start)?;
            out.push(TokenSpan {
                offset: at,
                token: SpecialToken::Box(b),
            });
            pos = end + BOX_CLOSE.len();
        } else if rest.starts_with(REF_CLOSE) {
            return Err(err(at, ParseErrorKind::UnexpectedClose(REF_CLOSE)));
        } else if rest.starts_with(BOX_CLOSE) {
            return Err(err(at, ParseErrorKind::UnexpectedClose(BOX_CLOSE)));
        } else {
            pos = at + 1;
        }
    }
    Ok(out)
}

/// Parses `[[a, b, c, d]]`; `base` is the byte offset of `payload` in the source.
fn parse_box_payload(payload: &str, base: usize) -> Result<NormalizedBox, ParseError> {
    let bad = || err(base, ParseErrorKind::BadBoxPayload(payload.to_string()));
    // Offsets of subslices are recovered from their position inside `payload`.
    let offset_of = |sub: &str| base + (sub.as_ptr() as usize - payload.as_ptr() as usize);
    let inner = payload
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.trim_start().strip_prefix('['))
        .and_then(|s| s.strip_suffix(']'))
        .and_then(|s| s.trim_end().strip_suffix(']'))
        .ok_or_else(bad)?;

    let fields: Vec<&str> = inner.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(bad());
    }
    let mut coords = [0i64; 4];
    for (slot, value) in coords.iter_mut().zip(&fields) {
        let digits = value.strip_prefix('-').unwrap_or(value);
        let parsed = if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            value.parse().ok()
        } else {
            None
        };
        *slot = parsed.ok_or_else(|| {
            err(
                offset_of(value),
                ParseErrorKind::NotAnInteger(value.to_string()),
            )
        })?;
    }
    NormalizedBox::try_from(coords).map_err(|_| err(base, ParseErrorKind::OutOfRange(coords)))
}
