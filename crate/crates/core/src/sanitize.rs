//! Post-processing applied to every generated completion before scoring.
//!
//! Three passes run in order:
//!
//! 1. delete every character outside printable ASCII (`0x20..=0x7E`), keeping `\n` and `\t`;
//! 2. delete every whitespace-delimited token longer than [`MAX_TOKEN_LEN`] characters;
//! 3. collapse a trailing block of 1 to [`MAX_BLOCK_TOKENS`] tokens that repeats at least
//!    [`MIN_REPEATS`] times in a row down to one occurrence, until no such block remains.
//!
//! Whitespace between surviving tokens is preserved, so already-clean text passes
//! through unchanged.

use serde::{Deserialize, Serialize};

pub const MAX_TOKEN_LEN: usize = 20;
pub const MAX_BLOCK_TOKENS: usize = 5;
pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeReport {
    pub input_text: String,
    pub output_text: String,
    /// Bytes deleted by the character filter.
    pub removed_non_ascii: usize,
    pub trimmed_repetition: bool,
    pub removed_long_tokens: usize,
}

fn allowed(c: char) -> bool {
    matches!(c, ' '..='~' | '\n' | '\t')
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\n' | b'\t')
}

/// Byte spans of whitespace-delimited tokens. `text` must be ASCII.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if is_space(bytes[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !is_space(bytes[i]) {
            i += 1;
        }
        spans.push((start, i));
    }
    spans
}

fn strip_disallowed(text: &str) -> (String, usize) {
    let mut removed = 0;
    let out = text
        .chars()
        .filter(|&c| {
            let keep = allowed(c);
            if !keep {
                removed += c.len_utf8();
            }
            keep
        })
        .collect();
    (out, removed)
}

fn drop_long_tokens(text: &str) -> (String, usize) {
    let spans = token_spans(text);
    let mut out = String::with_capacity(text.len());
    let mut removed = 0;
    // `cursor` marks the first byte not yet copied or skipped.
    let mut cursor = 0;
    let mut kept_any = false;
    for (idx, &(start, end)) in spans.iter().enumerate() {
        if end - start > MAX_TOKEN_LEN {
            removed += 1;
            if kept_any {
                // drop the whitespace run in front of the token
                cursor = end;
            } else {
                // nothing kept yet: keep leading whitespace, drop the run after the token
                out.push_str(&text[cursor..start]);
                cursor = spans.get(idx + 1).map_or(text.len(), |next| next.0);
            }
        } else {
            out.push_str(&text[cursor..end]);
            cursor = end;
            kept_any = true;
        }
    }
    out.push_str(&text[cursor.min(text.len())..]);
    (out, removed)
}

/// Largest `k` such that the last `block * k` tokens are `k` copies of the final block.
fn trailing_repeats(tokens: &[&str], block: usize) -> usize {
    let n = tokens.len();
    if block == 0 || block > n {
        return 0;
    }
    let last = &tokens[n - block..];
    let mut k = 1;
    while (k + 1) * block <= n {
        let start = n - (k + 1) * block;
        if &tokens[start..start + block] != last {
            break;
        }
        k += 1;
    }
    k
}

/// Whether `block` is not itself a repetition of a shorter block.
fn is_primitive(block: &[&str]) -> bool {
    let b = block.len();
    (1..b)
        .filter(|d| b % d == 0)
        .all(|d| block.chunks(d).any(|c| c != &block[..d]))
}

/// Token index just past the first occurrence of the trailing repeated block, if one qualifies.
pub(crate) fn repetition_cut(tokens: &[&str]) -> Option<usize> {
    let n = tokens.len();
    (1..=MAX_BLOCK_TOKENS.min(n)).rev().find_map(|block| {
        let k = trailing_repeats(tokens, block);
        (k >= MIN_REPEATS && is_primitive(&tokens[n - block..])).then(|| n - block * (k - 1))
    })
}

fn collapse_trailing_repetition(text: &str) -> (String, bool) {
    let mut current = text.to_string();
    let mut trimmed = false;
    loop {
        let spans = token_spans(&current);
        let tokens: Vec<&str> = spans.iter().map(|&(s, e)| &current[s..e]).collect();
        match repetition_cut(&tokens) {
            Some(keep) => {
                let end = spans[keep - 1].1;
                current.truncate(end);
                trimmed = true;
            }
            None => return (current, trimmed),
        }
    }
}

pub fn sanitize(text: &str) -> SanitizeReport {
    let (ascii, removed_non_ascii) = strip_disallowed(text);
    let (short, removed_long_tokens) = drop_long_tokens(&ascii);
    let (output_text, trimmed_repetition) = collapse_trailing_repetition(&short);
    SanitizeReport {
        input_text: text.to_string(),
        output_text,
        removed_non_ascii,
        trimmed_repetition,
        removed_long_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_non_ascii_bytes() {
        let r = sanitize("café au lait");
        assert_eq!(r.output_text, "caf au lait");
        assert_eq!(r.removed_non_ascii, 2);
    }

    #[test]
    fn collapses_trailing_sentence_loop() {
        let r = sanitize("I like dogs. I like dogs. I like dogs. I like dogs.");
        assert_eq!(r.output_text, "I like dogs.");
        assert!(r.trimmed_repetition);
    }

    #[test]
    fn drops_overlong_tokens() {
        let r = sanitize("see aaaaaaaaaaaaaaaaaaaaaaaaa done");
        assert_eq!(r.output_text, "see done");
        assert_eq!(r.removed_long_tokens, 1);
    }

    #[test]
    fn overlong_first_token() {
        assert_eq!(sanitize("aaaaaaaaaaaaaaaaaaaaaaaaa done").output_text, "done");
        assert_eq!(sanitize("  aaaaaaaaaaaaaaaaaaaaaaaaa\ndone").output_text, "  done");
        assert_eq!(sanitize("aaaaaaaaaaaaaaaaaaaaaaaaa").output_text, "");
    }

    #[test]
    fn twenty_chars_is_kept() {
        let t = "x".repeat(20);
        assert_eq!(sanitize(&t).output_text, t);
    }

    #[test]
    fn two_repeats_are_not_trimmed() {
        let t = "go home. go home.";
        let r = sanitize(t);
        assert_eq!(r.output_text, t);
        assert!(!r.trimmed_repetition);
    }

    #[test]
    fn uses_primitive_block() {
        assert_eq!(sanitize("so a a a a a a").output_text, "so a");
    }

    #[test]
    fn repeated_trimming_reaches_fixpoint() {
        // trimming "y y y y" exposes "x y" x3
        let r = sanitize("x y x y x y y y y");
        assert_eq!(r.output_text, "x y");
        assert_eq!(sanitize(&r.output_text).output_text, r.output_text);
    }

    #[test]
    fn clean_text_is_identity() {
        let t = "  Hello there,\n\tfriend.  ";
        assert_eq!(sanitize(t).output_text, t);
        assert_eq!(sanitize("").output_text, "");
    }

    #[test]
    fn control_characters_are_removed() {
        let r = sanitize("a\r\nb\u{7f}");
        assert_eq!(r.output_text, "a\nb");
        assert_eq!(r.removed_non_ascii, 2);
    }

    proptest! {
        #[test]
        fn output_invariants(s in "\\PC{0,80}") {
            let r = sanitize(&s);
            prop_assert!(r.output_text.chars().all(allowed));
            prop_assert!(r.output_text.split_ascii_whitespace().all(|t| t.len() <= MAX_TOKEN_LEN));
            prop_assert_eq!(sanitize(&r.output_text).output_text, r.output_text.clone());
        }
    }
}
