//! Parsers for model answers: bracketed top choices, bracketed rankings and
//! the SAT matrix JSON embedded in free text.
//!
//! All three are total: any input yields a value or a [`ParseError`].

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Ranking, RankingError, OPTIONS_PER_SCENARIO};
use crate::model::{validate_matrix, MatrixJson, MatrixJsonError, MatrixReport, SatMatrix};

static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(\d{1,9})\s*\]").expect("valid regex"));
static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:[*_#>\s]*)(?:justification|reasoning|rationale|explanation)\s*[*_]*\s*[:\-]\s*[*_]*")
        .expect("valid regex")
});

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no bracketed choice found")]
    NoChoiceFound,
    #[error("choice {choice} outside 1..={max}")]
    OutOfRangeChoice { choice: u32, max: usize },
    #[error("expected {expected} bracketed choices, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("ranking {0:?} is not a permutation")]
    NotAPermutation(Vec<u32>),
    #[error("no JSON object found: {0}")]
    NoJsonFound(String),
    #[error("JSON does not match the matrix schema: {0}")]
    SchemaMismatch(String),
    #[error("JSON contains a comment at byte {offset}")]
    CommentContaminated { offset: usize },
    #[error("matrix has the wrong shape: {0}")]
    ShapeViolation(MatrixReport),
    #[error("matrix values out of range: {0}")]
    ValueOutOfRange(MatrixReport),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopChoiceResponse {
    pub choice: u8,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingResponse {
    pub ranking: Ranking,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Strips separators and a leading "Justification:" style label.
fn clean_justification(rest: &str) -> String {
    let trimmed = rest.trim_start_matches(|c: char| c.is_whitespace() || "*_:-.)>,".contains(c));
    let unlabelled = match LABEL.find(trimmed) {
        Some(m) => &trimmed[m.end()..],
        None => trimmed,
    };
    unlabelled.trim().to_string()
}

/// Top choice over four options.
pub fn parse_top_choice(text: &str) -> Result<TopChoiceResponse, ParseError> {
    parse_top_choice_n(text, OPTIONS_PER_SCENARIO)
}

/// First bracketed integer is the choice; the text after it is the
/// justification. Further bracketed integers only raise a warning.
pub fn parse_top_choice_n(text: &str, n_options: usize) -> Result<TopChoiceResponse, ParseError> {
    let mut matches = BRACKETED.captures_iter(text);
    let first = matches.next().ok_or(ParseError::NoChoiceFound)?;
    let choice: u32 = first[1].parse().map_err(|_| ParseError::NoChoiceFound)?;
    if choice == 0 || choice as usize > n_options {
        return Err(ParseError::OutOfRangeChoice { choice, max: n_options });
    }
    let extra = matches.count();
    let mut warnings = Vec::new();
    if extra > 0 {
        warnings.push(format!("{} further bracketed numbers ignored", extra));
    }
    let end = first.get(0).expect("whole match").end();
    Ok(TopChoiceResponse { choice: choice as u8, justification: clean_justification(&text[end..]), warnings })
}

/// Ranking over four options.
pub fn parse_ranking(text: &str) -> Result<RankingResponse, ParseError> {
    parse_ranking_n(text, OPTIONS_PER_SCENARIO)
}

/// The first `n` bracketed integers in reading order, any separators.
pub fn parse_ranking_n(text: &str, n: usize) -> Result<RankingResponse, ParseError> {
    let all: Vec<regex::Captures> = BRACKETED.captures_iter(text).collect();
    if all.len() < n {
        return Err(ParseError::WrongArity { expected: n, found: all.len() });
    }
    let mut order = Vec::with_capacity(n);
    for c in &all[..n] {
        // Nine digits always fit.
        order.push(c[1].parse::<u32>().expect("at most nine digits"));
    }
    let ranking = Ranking::new(order).map_err(|e| match e {
        RankingError::NotAPermutation(v) => ParseError::NotAPermutation(v),
        RankingError::WrongArity { expected, found } => ParseError::WrongArity { expected, found },
    })?;
    let mut warnings = Vec::new();
    if all.len() > n {
        warnings.push(format!("{} further bracketed numbers ignored", all.len() - n));
    }
    let end = all[n - 1].get(0).expect("whole match").end();
    Ok(RankingResponse { ranking, justification: clean_justification(&text[end..]), warnings })
}

/// A balanced `{...}` span found by [`scan_object`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
    /// Byte offset of the first comment outside strings, if any.
    comment_at: Option<usize>,
}

/// Scans from the `{` at `start` to its matching `}`. Strings and their
/// escapes are skipped; `//` and `/* */` comments are skipped and noted.
fn scan_object(bytes: &[u8], start: usize) -> Option<Span> {
    debug_assert_eq!(bytes[start], b'{');
    let mut depth = 0usize;
    let mut i = start;
    let mut comment_at = None;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                comment_at.get_or_insert(i);
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                comment_at.get_or_insert(i);
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(Span { start, end: i + 1, comment_at });
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn has_matrix_keys(s: &str) -> bool {
    ["\"actions\"", "\"needs\"", "\"matrix\""].iter().all(|k| s.contains(k))
}

/// Finds the first balanced object mentioning all three matrix keys and
/// returns the validated matrix. Code fences and trailing prose are ignored.
pub fn extract_matrix_json(text: &str) -> Result<SatMatrix, ParseError> {
    let bytes = text.as_bytes();
    let mut unterminated = false;
    let mut saw_object = false;
    let mut found = None;
    for (i, _) in text.match_indices('{') {
        match scan_object(bytes, i) {
            Some(span) => {
                saw_object = true;
                if has_matrix_keys(&text[span.start..span.end]) {
                    found = Some(span);
                    break;
                }
            }
            None => {
                if has_matrix_keys(&text[i..]) {
                    unterminated = true;
                    break;
                }
            }
        }
    }
    let Some(span) = found else {
        let why = if unterminated {
            "object with matrix keys is never closed"
        } else if saw_object {
            "no object has the keys \"actions\", \"needs\" and \"matrix\""
        } else {
            "no balanced object in the response"
        };
        return Err(ParseError::NoJsonFound(why.to_string()));
    };
    if let Some(offset) = span.comment_at {
        return Err(ParseError::CommentContaminated { offset });
    }
    let raw: MatrixJson =
        serde_json::from_str(&text[span.start..span.end]).map_err(|e| ParseError::SchemaMismatch(e.to_string()))?;
    raw.check_names().map_err(|e| ParseError::SchemaMismatch(e.to_string()))?;
    let report = validate_matrix(&raw.matrix);
    if report.has_shape_violation() {
        return Err(ParseError::ShapeViolation(report));
    }
    raw.into_matrix().map_err(|e| match e {
        MatrixJsonError::Invalid(r) => ParseError::ValueOutOfRange(r),
        other => ParseError::SchemaMismatch(other.to_string()),
    })
}
