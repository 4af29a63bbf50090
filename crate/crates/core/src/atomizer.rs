//! Splitting answers into atomic facts: sentences for long-form answers,
//! entities for list answers.

use std::collections::HashSet;

use crate::model::{AnswerMode, AtomicFact, GenerationSample};

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "ft.", "approx.", "ca.", "e.g.", "i.e.", "etc.",
    "vs.", "cf.", "al.", "u.s.", "u.k.", "u.n.", "no.", "vol.", "inc.", "ltd.", "co.", "corp.", "jan.", "feb.", "mar.",
    "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.", "gen.", "gov.", "sen.", "rep.", "rev.",
    "est.",
];

const OPENING_QUOTES: &[char] = &['"', '\'', '\u{201C}', '\u{2018}', '(', '['];
const CLOSING_QUOTES: &[char] = &['"', '\'', '\u{201D}', '\u{2019}', ')', ']'];

/// Rule-based sentence splitter.
///
/// A boundary falls after a run of `.`, `?` or `!` (plus any closing quotes)
/// when it is followed by whitespace and then an uppercase letter, an opening
/// quote or a digit. Periods ending a known abbreviation or a single-letter
/// initial do not end a sentence. Newlines always break.
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
    pub fn with_abbreviations<S: AsRef<str>>(abbreviations: impl IntoIterator<Item = S>) -> Self {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().trim().to_lowercase())
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }

    /// Reads one abbreviation per line; blank lines and `#` comments skipped.
    pub fn from_list(text: &str) -> Self {
        Self::with_abbreviations(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        for line in text.split('\n') {
            self.split_line(line, &mut out);
        }
        out
    }

    fn split_line<'a>(&self, line: &'a str, out: &mut Vec<&'a str>) {
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            let (offset, c) = chars[i];
            if !matches!(c, '.' | '?' | '!') {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1].1, '.' | '?' | '!') {
                j += 1;
            }
            while j + 1 < chars.len() && CLOSING_QUOTES.contains(&chars[j + 1].1) {
                j += 1;
            }
            let end = chars.get(j + 1).map_or(line.len(), |&(o, _)| o);
            let mut k = j + 1;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let starts_next = k > j + 1
                && chars
                    .get(k)
                    .is_some_and(|&(_, n)| n.is_uppercase() || n.is_ascii_digit() || OPENING_QUOTES.contains(&n));
            if starts_next && !(c == '.' && i == j && self.is_abbreviation(&line[start..=offset])) {
                push_trimmed(&line[start..end], out);
                start = chars[k].0;
                i = k;
            } else {
                i = j + 1;
            }
        }
        push_trimmed(&line[start..], out);
    }

    fn is_abbreviation(&self, upto_period: &str) -> bool {
        let word = upto_period
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("")
            .trim_start_matches(OPENING_QUOTES);
        let lower = word.to_lowercase();
        if self.abbreviations.contains(&lower) {
            return true;
        }
        // single-letter initials such as "J." in "J. R. R. Tolkien"
        let stem = &word[..word.len() - 1];
        stem.chars().count() == 1 && stem.chars().all(char::is_alphabetic)
    }

    pub fn split_sample(&self, sample: &GenerationSample) -> Vec<AtomicFact> {
        self.split(&sample.text)
            .into_iter()
            .enumerate()
            .map(|(position, text)| AtomicFact::new(text, sample.sample_index, position))
            .collect()
    }
}

fn push_trimmed<'a>(piece: &'a str, out: &mut Vec<&'a str>) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece);
    }
}

/// Sentences of a long-form sample, using the default abbreviation list.
pub fn split_sentences(sample: &GenerationSample) -> Vec<AtomicFact> {
    SentenceSplitter::default().split_sample(sample)
}

/// Items of a list answer: split on commas and newlines, trimmed of
/// whitespace and a leading enumeration marker, empties dropped. Duplicates
/// are kept.
pub fn split_list_items(sample: &GenerationSample) -> Vec<AtomicFact> {
    list_items(&sample.text)
        .into_iter()
        .enumerate()
        .map(|(position, text)| AtomicFact::new(text, sample.sample_index, position))
        .collect()
}

pub fn list_items(text: &str) -> Vec<&str> {
    text.split([',', '\n'])
        .map(strip_marker)
        .filter(|s| !s.is_empty())
        .collect()
}

fn strip_marker(item: &str) -> &str {
    let item = item.trim();
    for bullet in ["-", "*", "\u{2022}"] {
        if let Some(rest) = item.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    let digits = item.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    item
}

/// Facts of a sample for the given mode.
pub fn atomize(sample: &GenerationSample, mode: AnswerMode, splitter: &SentenceSplitter) -> Vec<AtomicFact> {
    match mode {
        AnswerMode::Long => splitter.split_sample(sample),
        AnswerMode::List => split_list_items(sample),
    }
}
