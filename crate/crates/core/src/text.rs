//! Text canonicalization shared by every stage.
//!
//! All comparisons between answers, candidates, entity labels and lexicon
//! patterns go through [`normalize_text`], so the rules here decide what
//! counts as "the same string" everywhere in the pipeline.

use unicode_normalization::UnicodeNormalization;

/// Zero-width non-joiner, the canonical joiner codepoint kept in output.
pub const ZWNJ: char = '\u{200C}';

/// Codepoints treated as spellings of the zero-width non-joiner.
fn is_zwnj_variant(c: char) -> bool {
    matches!(c, '\u{200C}' | '\u{200B}' | '\u{FEFF}' | '\u{00AD}')
}

fn fold_digit(c: char) -> char {
    match c {
        '\u{0660}'..='\u{0669}' => char::from(b'0' + (c as u32 - 0x0660) as u8),
        '\u{06F0}'..='\u{06F9}' => char::from(b'0' + (c as u32 - 0x06F0) as u8),
        _ => c,
    }
}

/// Canonicalize a string: NFKC, Eastern-Arabic and Persian digits to ASCII,
/// zero-width joiner variants to a single ZWNJ (dropped at word edges),
/// whitespace runs collapsed and trimmed.
///
/// Idempotent: `normalize_text(&normalize_text(s)) == normalize_text(s)`.
pub fn normalize_text(s: &str) -> String {
    let folded: String = s.nfkc().map(fold_digit).collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        let mut token = String::with_capacity(word.len());
        let mut pending_zwnj = false;
        for c in word.chars() {
            if is_zwnj_variant(c) {
                pending_zwnj = !token.is_empty();
                continue;
            }
            if pending_zwnj {
                token.push(ZWNJ);
                pending_zwnj = false;
            }
            token.push(c);
        }
        if token.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&token);
    }
    // Removing joiners can leave sequences that NFKC would recompose.
    if out.nfkc().eq(out.chars()) {
        out
    } else {
        normalize_text(&out.nfkc().collect::<String>())
    }
}

/// Normalized and lowercased, for case-insensitive lexicon matching.
pub fn fold_case(s: &str) -> String {
    normalize_text(s).to_lowercase()
}

/// Split into word tokens with surrounding punctuation stripped.
pub fn word_tokens(s: &str) -> Vec<String> {
    fold_case(s)
        .split(' ')
        .map(|w| w.trim_matches(|c: char| is_punct(c)).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

pub(crate) fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '؟' | '،' | '؛' | '«' | '»' | '…' | '“' | '”' | '‘' | '’')
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by char offsets `[start, end)`; `None` when out of bounds.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start {
        begin
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[begin..finish])
}

/// Char offset of the first occurrence of `needle` in `haystack`.
pub fn char_find(haystack: &str, needle: &str) -> Option<usize> {
    haystack.find(needle).map(|byte| haystack[..byte].chars().count())
}

/// Replace chars `[start, end)` with `with`.
pub fn char_splice(s: &str, start: usize, end: usize, with: &str) -> String {
    let mut out = String::with_capacity(s.len() + with.len());
    for (i, c) in s.chars().enumerate() {
        if i == start {
            out.push_str(with);
        }
        if i < start || i >= end {
            out.push(c);
        }
    }
    if start >= char_len(s) {
        out.push_str(with);
    }
    out
}

/// 64-bit FNV-1a. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Cosine similarity; zero-norm inputs give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_persian_digits_and_trims() {
        assert_eq!(normalize_text("  ۱۲۳  "), "123");
        assert_eq!(normalize_text("٤٥"), "45");
    }

    #[test]
    fn passthrough_cases() {
        assert_eq!(normalize_text("abc"), "abc");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text(" \t\n "), "");
    }

    #[test]
    fn collapses_whitespace_and_compat_forms() {
        assert_eq!(normalize_text("a \u{00A0}\t b"), "a b");
        assert_eq!(normalize_text("ﬁne"), "fine");
    }

    #[test]
    fn canonicalizes_zwnj() {
        assert_eq!(normalize_text("می\u{200C}\u{200C}روم"), "می\u{200C}روم");
        assert_eq!(normalize_text("می\u{200B}روم"), "می\u{200C}روم");
        assert_eq!(normalize_text("\u{200C}کتاب\u{200C} ها"), "کتاب ها");
    }

    #[test]
    fn char_helpers() {
        let s = "سلام world";
        assert_eq!(char_slice(s, 0, 4), Some("سلام"));
        assert_eq!(char_slice(s, 5, 10), Some("world"));
        assert_eq!(char_slice(s, 5, 11), None);
        assert_eq!(char_find(s, "world"), Some(5));
        assert_eq!(char_splice(s, 0, 4, "<m>"), "<m> world");
        assert_eq!(char_splice("ab", 2, 2, "c"), "abc");
    }

    #[test]
    fn tokens_strip_punctuation() {
        assert_eq!(word_tokens("Who wrote Hamlet?"), vec!["who", "wrote", "hamlet"]);
        assert_eq!(word_tokens("کجاست؟"), vec!["کجاست"]);
    }
}
