use std::collections::HashMap;

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram totals for one pair.
fn pair_stats(reference: &[String], hypothesis: &[String], n: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, n);
    let hyps = ngram_counts(hypothesis, n);
    let matches = hyps
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hypothesis.len().saturating_sub(n - 1))
}

/// Corpus BLEU on a 0-100 scale with brevity penalty. Orders two and up
/// with zero matches use add-one smoothing, `(0 + 1) / (total + 1)`; a zero
/// unigram precision gives 0.
pub fn bleu(references: &[TokenSeq], hypotheses: &[TokenSeq], max_n: usize) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} references vs {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidConfig("max_n must be at least 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let (m, t) = pair_stats(r.as_slice(), h.as_slice(), n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if matches[0] == 0 || hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if n == 0 || matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            1.0 / (totals[n] as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

pub fn sentence_bleu(reference: &TokenSeq, hypothesis: &TokenSeq, max_n: usize) -> f64 {
    bleu(
        std::slice::from_ref(reference),
        std::slice::from_ref(hypothesis),
        max_n,
    )
    .unwrap_or(0.0)
}
