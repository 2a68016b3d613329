//! Token counting and token-aligned truncation.
//!
//! Every budget in the pipeline (context packing, prompt ceilings, middle
//! length constraints, dataset statistics) is expressed in tokens of a
//! [`Tokenizer`]. The default [`ApproxTokenizer`] is model independent: a
//! token is either a maximal run of word characters (alphanumerics and `_`)
//! or a single punctuation character. Whitespace separates tokens and is
//! never a token itself.

use std::ops::Range;
use std::sync::Arc;

/// A deterministic tokenizer that can report token byte spans.
pub trait Tokenizer: Send + Sync {
    /// Name recorded next to every reported token count.
    fn name(&self) -> &str;

    /// Byte spans of all tokens in `text`, in order, non-overlapping.
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }

    /// Longest prefix of `text` that ends at the end of its `max_tokens`-th token.
    fn keep_head<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let spans = self.spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        &text[..spans[max_tokens - 1].end]
    }

    /// Shortest suffix of `text` holding its last `max_tokens` tokens.
    fn keep_tail<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        if max_tokens == 0 {
            return "";
        }
        let spans = self.spans(text);
        if spans.len() <= max_tokens {
            return text;
        }
        &text[spans[spans.len() - max_tokens].start..]
    }
}

/// Whitespace/punctuation boundary tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl ApproxTokenizer {
    pub const NAME: &'static str = "approx-word-punct";
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Tokenizer for ApproxTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if is_word_char(c) {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
            if !c.is_whitespace() {
                out.push(i..i + c.len_utf8());
            }
        }
        if let Some(s) = word_start {
            out.push(s..text.len());
        }
        out
    }

    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if is_word_char(c) {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Shared tokenizer handle.
pub type SharedTokenizer = Arc<dyn Tokenizer>;

/// Resolve a tokenizer by its configured name.
pub fn tokenizer_by_name(name: &str) -> Option<SharedTokenizer> {
    match name {
        "approx" | ApproxTokenizer::NAME => Some(Arc::new(ApproxTokenizer)),
        _ => None,
    }
}

pub fn default_tokenizer() -> SharedTokenizer {
    Arc::new(ApproxTokenizer)
}
