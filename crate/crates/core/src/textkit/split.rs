use std::collections::HashSet;

/// Lowercase abbreviations (without the trailing period) that never end a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "inc", "ltd", "co",
    "mt", "approx", "dept", "est", "a.m", "p.m", "u.s",
];

/// Rule-based sentence splitter.
///
/// A boundary sits after a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) when it is followed by whitespace and then an uppercase letter or
/// a digit, optionally behind an opening quote or bracket. A period closing a
/// known abbreviation is never a boundary.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().trim().trim_end_matches('.').to_lowercase())
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }

    /// One abbreviation per line, trailing period optional.
    pub fn parse_abbreviations(text: &str) -> Self {
        Self::with_abbreviations(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (_, c) = chars[i];
            if !is_terminal(c) {
                i += 1;
                continue;
            }
            let term_idx = i;
            let mut end = i + 1;
            while end < chars.len() && (is_terminal(chars[end].1) || is_closer(chars[end].1)) {
                end += 1;
            }
            // Need at least one whitespace char after the punctuation run.
            let mut next = end;
            while next < chars.len() && chars[next].1.is_whitespace() {
                next += 1;
            }
            if next == end || next >= chars.len() {
                i = end;
                continue;
            }
            if !starts_sentence(&chars[next..]) {
                i = end;
                continue;
            }
            if chars[term_idx].1 == '.' && self.is_abbreviation(&chars[..term_idx]) {
                i = end;
                continue;
            }
            let byte_end = chars.get(end).map_or(text.len(), |&(b, _)| b);
            push_trimmed(&mut out, &text[start..byte_end]);
            start = chars[next].0;
            i = next;
        }
        push_trimmed(&mut out, &text[start..]);
        out
    }

    fn is_abbreviation(&self, before: &[(usize, char)]) -> bool {
        let word: String = before
            .iter()
            .rev()
            .take_while(|(_, c)| !c.is_whitespace() && !is_opener(*c))
            .map(|(_, c)| *c)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        !word.is_empty() && self.abbreviations.contains(&word.to_lowercase())
    }
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, piece: &'a str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece);
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

fn starts_sentence(rest: &[(usize, char)]) -> bool {
    let mut it = rest.iter().map(|(_, c)| *c);
    match it.next() {
        Some(c) if c.is_uppercase() || c.is_ascii_digit() => true,
        Some(c) if is_opener(c) => it
            .next()
            .is_some_and(|d| d.is_uppercase() || d.is_ascii_digit()),
        _ => false,
    }
}

pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default()
        .split(text)
        .into_iter()
        .map(str::to_string)
        .collect()
}
