//! Word-level tokenizer over the closed reasoning grammar.
//!
//! Words come from the phrase templates, cause titles and descriptions, and
//! display labels. Free-form numbers are spelled out as a `<num>` marker
//! followed by one token per character, which keeps the vocabulary small and
//! the encoding exactly reversible. Line breaks are a token of their own.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::domain::CauseId;
use crate::error::{RcaError, Result};
use crate::phrases;

pub const NEWLINE: &str = "<nl>";
pub const NUMBER: &str = "<num>";
pub const UNKNOWN: &str = "<unk>";
const NUMBER_CHARS: &str = "0123456789.-";

/// Labels the vocabulary covers; catalogs never use more than eight.
pub const MAX_LABELS: usize = 8;

pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn build() -> Self {
        let mut set = BTreeSet::new();
        let mut add_words = |text: &str| {
            for w in text.split_whitespace() {
                if w != "{}" && !is_number(w) {
                    set.insert(w.to_string());
                }
            }
        };
        for t in phrases::ALL_TEMPLATES {
            add_words(t);
        }
        for c in phrases::COMPARATORS {
            add_words(c);
        }
        for cause in CauseId::ALL {
            add_words(cause.title());
            add_words(cause.description());
        }
        for k in 1..=MAX_LABELS {
            add_words(&format!("C{k}"));
            add_words(&answer_token(&format!("C{k}")));
        }
        let mut words: Vec<String> = [NEWLINE, NUMBER, UNKNOWN].iter().map(|s| s.to_string()).collect();
        words.extend(NUMBER_CHARS.chars().map(char_token));
        words.extend(set);
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Hex SHA-256 over the ordered word list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn vocabulary() -> &'static Vocabulary {
    static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
    VOCAB.get_or_init(Vocabulary::build)
}

pub fn vocab_hash() -> String {
    vocabulary().hash()
}

/// The one-token boxed answer for a display label.
pub fn answer_token(label: &str) -> String {
    format!("\\boxed{{{label}}}")
}

fn char_token(c: char) -> String {
    format!("#{c}")
}

fn is_number(w: &str) -> bool {
    let digits = w.strip_prefix('-').unwrap_or(w);
    let mut parts = digits.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn encode(text: &str, lossy: bool) -> Result<Vec<u32>> {
    let vocab = vocabulary();
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for (k, line) in text.split('\n').enumerate() {
        if k > 0 {
            out.push(vocab.id(NEWLINE).expect("special token"));
        }
        for w in line.split_whitespace() {
            if let Some(id) = vocab.id(w) {
                out.push(id);
            } else if is_number(w) {
                out.push(vocab.id(NUMBER).expect("special token"));
                out.extend(w.chars().map(|c| vocab.id(&char_token(c)).expect("number char")));
            } else if lossy {
                out.push(vocab.id(UNKNOWN).expect("special token"));
            } else {
                missing.push(w.to_string());
            }
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(RcaError::Tokenization(missing))
    }
}

pub fn tokenize(text: &str) -> Result<Vec<u32>> {
    encode(text, false)
}

/// Tokenizes free text, mapping unknown words to `<unk>`; used to measure
/// remote model output.
pub fn tokenize_lossy(text: &str) -> Vec<u32> {
    encode(text, true).expect("lossy encoding cannot fail")
}

pub fn detokenize(tokens: &[u32]) -> Result<String> {
    let vocab = vocabulary();
    let mut lines: Vec<Vec<String>> = vec![Vec::new()];
    let mut in_number = false;
    for &id in tokens {
        let w = vocab
            .word(id)
            .ok_or_else(|| RcaError::Tokenization(vec![format!("<id {id}>")]))?;
        if let Some(c) = w.strip_prefix('#').filter(|rest| rest.len() == 1) {
            if !in_number {
                return Err(RcaError::Tokenization(vec![w.to_string()]));
            }
            lines.last_mut().expect("non-empty").last_mut().expect("number started").push_str(c);
            continue;
        }
        in_number = false;
        match w {
            NEWLINE => lines.push(Vec::new()),
            NUMBER => {
                in_number = true;
                lines.last_mut().expect("non-empty").push(String::new());
            }
            _ => lines.last_mut().expect("non-empty").push(w.to_string()),
        }
    }
    Ok(lines.iter().map(|l| l.join(" ")).collect::<Vec<_>>().join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_round_trip() {
        assert!(tokenize("").unwrap().is_empty());
        assert_eq!(detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn numbers_round_trip() {
        let text = "- mean serving cell distance ( m ) : 1203.46\nThe data shows -97.5 for the 0000258 .";
        let tokens = tokenize(text).unwrap();
        assert_eq!(detokenize(&tokens).unwrap(), text);
    }

    #[test]
    fn oov_lists_offenders() {
        match tokenize("The data shows banana and kiwi") {
            Err(RcaError::Tokenization(words)) => assert_eq!(words, vec!["banana", "kiwi"]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(tokenize_lossy("banana").len(), 1);
    }

    #[test]
    fn answer_tokens_are_single_words() {
        for k in 1..=8 {
            assert_eq!(tokenize(&answer_token(&format!("C{k}"))).unwrap().len(), 1);
        }
    }

    #[test]
    fn number_detection() {
        for w in ["0", "38", "-80.48", "1056.42", "0000258"] {
            assert!(is_number(w), "{w}");
        }
        for w in ["-", ".", "1.", ".5", "1e5", "C3", "--1"] {
            assert!(!is_number(w), "{w}");
        }
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(vocab_hash(), vocab_hash());
        assert_eq!(vocab_hash().len(), 64);
    }
}
