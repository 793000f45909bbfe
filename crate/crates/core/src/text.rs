//! Small text helpers shared by the corpus, injection and analysis code.

/// Placeholder marking the masked span in probe text. Runtimes map it to
/// their own sentinel.
pub const MASK: &str = "<MASK>";

/// Collapse every run of whitespace into a single space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of mask placeholders in `text`.
pub fn mask_count(text: &str) -> usize {
    text.matches(MASK).count()
}

/// Split `text` around its single mask placeholder.
///
/// Returns `None` unless the placeholder occurs exactly once.
pub fn split_at_mask(text: &str) -> Option<(&str, &str)> {
    if mask_count(text) != 1 {
        return None;
    }
    let at = text.find(MASK)?;
    Some((&text[..at], &text[at + MASK.len()..]))
}

/// Substitute `fill` for the mask placeholder.
pub fn fill_mask(text: &str, fill: &str) -> String {
    text.replacen(MASK, fill, 1)
}

/// Verbatim containment used for the "gold in definition" predicate:
/// case-sensitive substring match after whitespace normalization.
pub fn contains_verbatim(haystack: &str, needle: &str) -> bool {
    let needle = normalize_whitespace(needle);
    !needle.is_empty() && normalize_whitespace(haystack).contains(&needle)
}

/// Whitespace-delimited words with their half-open character intervals.
pub fn words_with_char_spans(text: &str) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut count = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), (start, i)));
            }
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
        count = i + 1;
    }
    if !current.is_empty() {
        out.push((current, (start, count)));
    }
    out
}

/// Byte offset of character index `char_idx` in `text` (or `text.len()`).
pub fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices().nth(char_idx).map(|(b, _)| b).unwrap_or(text.len())
}

/// Lowercased word tokens with surrounding punctuation stripped. Used by the
/// lexical similarity measures.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()))
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_collapses() {
        assert_eq!(normalize_whitespace("  a \t b\n\nc "), "a b c");
    }

    #[test]
    fn verbatim_is_case_sensitive() {
        assert!(contains_verbatim("burning in   Arizona in", "Arizona"));
        assert!(!contains_verbatim("burning in arizona", "Arizona"));
        assert!(!contains_verbatim("anything", "  "));
    }

    #[test]
    fn split_requires_single_mask() {
        assert_eq!(split_at_mask("a <MASK> b"), Some(("a ", " b")));
        assert_eq!(split_at_mask("a <MASK> <MASK>"), None);
        assert_eq!(split_at_mask("no mask"), None);
    }

    #[test]
    fn word_spans_are_char_based() {
        let w = words_with_char_spans("é b  cd");
        assert_eq!(w[0], ("é".to_string(), (0, 1)));
        assert_eq!(w[1], ("b".to_string(), (2, 3)));
        assert_eq!(w[2], ("cd".to_string(), (5, 7)));
    }

    #[test]
    fn lexical_tokens_strip_punctuation() {
        assert_eq!(lexical_tokens("Dracula, (the) SHOW."), vec!["dracula", "the", "show"]);
    }
}
