use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSeq};

/// Splits text into sentences at `.`, `!` or `?` followed by whitespace or
/// the end of the text. Empty sentences are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !tokenize(s).is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tokenize(tail).is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Scores aligned sentence pairs position by position. Returns `None` when
/// the two texts have different sentence counts.
pub fn sentence_order_analysis<F>(gold: &str, generated: &str, metric: F) -> Option<Vec<f64>>
where
    F: Fn(&TokenSeq, &TokenSeq) -> f64,
{
    let g = split_sentences(gold);
    let h = split_sentences(generated);
    if g.len() != h.len() || g.is_empty() {
        return None;
    }
    Some(
        g.iter()
            .zip(&h)
            .map(|(a, b)| metric(&tokenize(a), &tokenize(b)))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub position: usize,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceOrderReport {
    pub positions: Vec<PositionScore>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Averages per-position scores over every pair with matching sentence counts.
pub fn positional_scores<F>(pairs: &[(&str, &str)], metric: F) -> SentenceOrderReport
where
    F: Fn(&TokenSeq, &TokenSeq) -> f64,
{
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut used = 0;
    for (gold, gen) in pairs {
        let Some(scores) = sentence_order_analysis(gold, gen, &metric) else {
            continue;
        };
        used += 1;
        if sums.len() < scores.len() {
            sums.resize(scores.len(), (0.0, 0));
        }
        for (slot, s) in sums.iter_mut().zip(scores) {
            slot.0 += s;
            slot.1 += 1;
        }
    }
    SentenceOrderReport {
        positions: sums
            .into_iter()
            .enumerate()
            .map(|(i, (sum, n))| PositionScore {
                position: i,
                mean: sum / n as f64,
                count: n,
            })
            .collect(),
        pairs_used: used,
        pairs_skipped: pairs.len() - used,
    }
}
