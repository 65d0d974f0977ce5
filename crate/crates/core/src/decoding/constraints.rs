use crate::corpus::tokenize;
use crate::lm::{TokenId, Vocab};

/// Whether every phrase or at least one phrase must appear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    All,
    Any,
}

/// Lexical constraints: tokenized tag phrases that must occur contiguously.
/// A phrase with a token outside the model vocabulary can never be met.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    requirement: Requirement,
    phrases: Vec<Option<Vec<TokenId>>>,
}

fn occurs(tokens: &[TokenId], phrase: &[TokenId]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Longest suffix of `tokens` that is a proper prefix of `phrase`.
fn partial(tokens: &[TokenId], phrase: &[TokenId]) -> usize {
    let max = phrase.len().saturating_sub(1).min(tokens.len());
    (1..=max)
        .rev()
        .find(|&k| tokens[tokens.len() - k..] == phrase[..k])
        .unwrap_or(0)
}

impl Constraints {
    pub fn new<S: AsRef<str>>(tags: &[S], vocab: &Vocab, requirement: Requirement) -> Self {
        let mut phrases: Vec<Option<Vec<TokenId>>> = Vec::new();
        for tag in tags {
            let seq = tokenize(tag.as_ref());
            if seq.is_empty() {
                continue;
            }
            let p = vocab.encode(&seq);
            if !phrases.contains(&p) {
                phrases.push(p);
            }
        }
        Constraints {
            requirement,
            phrases,
        }
    }

    pub fn requirement(&self) -> Requirement {
        self.requirement
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// An empty constraint set is trivially satisfied under both requirements.
    pub fn satisfied(&self, tokens: &[TokenId]) -> bool {
        if self.phrases.is_empty() {
            return true;
        }
        let mut met = self
            .phrases
            .iter()
            .map(|p| p.as_deref().is_some_and(|p| occurs(tokens, p)));
        match self.requirement {
            Requirement::All => met.all(|m| m),
            Requirement::Any => met.any(|m| m),
        }
    }

    /// Bank index used for beam allocation. Under `All` it counts constraint
    /// tokens already placed, including a trailing partial phrase; under
    /// `Any` a met phrase outranks every partial one.
    pub fn progress(&self, tokens: &[TokenId]) -> usize {
        let per_phrase = self.phrases.iter().map(|p| match p {
            None => (false, 0),
            Some(p) if occurs(tokens, p) => (true, p.len()),
            Some(p) => (false, partial(tokens, p)),
        });
        match self.requirement {
            Requirement::All => per_phrase.map(|(_, n)| n).sum(),
            Requirement::Any => {
                let longest = self.phrases.iter().flatten().map(Vec::len).max().unwrap_or(0);
                per_phrase
                    .map(|(met, n)| if met { longest + 1 } else { n })
                    .max()
                    .unwrap_or(0)
            }
        }
    }
}
