//! Pulling structured values out of free-form model output.

use crate::error::{Error, Result};
use crate::taxonomy::LabelTaxonomy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub text: String,
    /// Set when no fence was found and the whole response was returned.
    pub fallback: bool,
}

fn is_language_tag(line: &str) -> bool {
    let t = line.trim();
    t.chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.'))
}

/// Contents of the last fenced code block. Fences pair up left to right;
/// an unmatched trailing fence runs to the end of the response.
pub fn extract_code_block(response: &str) -> CodeBlock {
    let fences: Vec<usize> = response.match_indices("```").map(|(i, _)| i).collect();
    if fences.is_empty() {
        return CodeBlock {
            text: response.trim().to_owned(),
            fallback: true,
        };
    }
    let mut last = None;
    let mut i = 0;
    while i < fences.len() {
        let open = fences[i] + 3;
        let close = fences.get(i + 1).copied().unwrap_or(response.len());
        last = Some(&response[open..close]);
        i += 2;
    }
    let inner = last.unwrap_or_default();
    let body = match inner.split_once('\n') {
        Some((first, rest)) if is_language_tag(first) => rest,
        _ => inner,
    };
    CodeBlock {
        text: body.trim().to_owned(),
        fallback: false,
    }
}

fn strip_decoration(token: &str) -> &str {
    token
        .trim()
        .trim_matches(|c: char| c == '*' || c == '_' || c == '"' || c == '\'')
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim()
}

fn boundary_ok(text: &[u8], start: usize, end: usize) -> bool {
    let before = start == 0 || !text[start - 1].is_ascii_alphanumeric();
    let after = end == text.len() || !text[end].is_ascii_alphanumeric();
    before && after
}

/// Label id chosen by the model.
///
/// Backtick-enclosed tokens are tried first, last one first. Otherwise the
/// latest whole-word mention of any id, display name or alias wins, with the
/// longer surface form preferred at equal positions.
pub fn extract_choice(response: &str, taxonomy: &LabelTaxonomy) -> Result<String> {
    let ticks: Vec<usize> = response.match_indices('`').map(|(i, _)| i).collect();
    let mut candidates = Vec::new();
    for pair in ticks.windows(2) {
        let inner = &response[pair[0] + 1..pair[1]];
        if !inner.is_empty() && !inner.contains('\n') {
            candidates.push(inner);
        }
    }
    for token in candidates.iter().rev() {
        if let Some(label) = taxonomy.lookup(strip_decoration(token)) {
            return Ok(label.id.clone());
        }
    }

    // ASCII lowercasing keeps byte offsets aligned with the original.
    let haystack = response.to_ascii_lowercase();
    let bytes = haystack.as_bytes();
    let mut best: Option<(usize, usize, &str)> = None;
    for label in &taxonomy.labels {
        let forms = std::iter::once(&label.id)
            .chain(std::iter::once(&label.display_name))
            .chain(label.aliases.iter());
        for form in forms {
            let needle = form.to_ascii_lowercase();
            if needle.is_empty() {
                continue;
            }
            for (start, _) in haystack.match_indices(&needle) {
                let end = start + needle.len();
                if !boundary_ok(bytes, start, end) {
                    continue;
                }
                let key = (start, needle.len());
                if best.is_none_or(|(s, l, _)| key > (s, l)) {
                    best = Some((start, needle.len(), &label.id));
                }
            }
        }
    }
    best.map(|(_, _, id)| id.to_owned()).ok_or(Error::NoChoiceFound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoneDetection {
    /// The response is only the NONE marker.
    None,
    /// NONE on the first line followed by text that is discarded.
    NoneWithRemainder,
    Content,
}

fn is_none_marker(line: &str) -> bool {
    let t = line
        .trim()
        .trim_matches(|c: char| c == '`' || c == '*' || c == '_')
        .trim_end_matches(['.', '!', ';', ':', ','])
        .trim();
    t == "NONE"
}

pub fn classify_none(response: &str) -> NoneDetection {
    let trimmed = response.trim();
    if is_none_marker(trimmed) {
        return NoneDetection::None;
    }
    match trimmed.split_once('\n') {
        Some((first, _)) if is_none_marker(first) => NoneDetection::NoneWithRemainder,
        _ => NoneDetection::Content,
    }
}

/// True when the summarizer reported that a result holds nothing relevant.
pub fn detect_none(response: &str) -> bool {
    classify_none(response) != NoneDetection::Content
}
