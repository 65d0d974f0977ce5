use std::collections::HashSet;

use log::warn;

use crate::corpus::tag_key;
use crate::embeddings::{cosine, embed_tag, EmbeddingTable, TagEmbedding};
use crate::error::{Error, Result};
use crate::lm::{TokenId, Vocab};
use crate::stats::{ks_statistic, max_similarity, StatsStore};

use super::{FallbackPolicy, Hypothesis};

/// One usable input tag: its centroid, target strength and, when the tag was
/// seen in training, its sorted training MCS sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTag {
    pub embedding: TagEmbedding,
    pub target: f64,
    pub samples: Option<Vec<f64>>,
}

/// The tag set of one input, resolved against embeddings and statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PenaltyContext {
    tags: Vec<ContextTag>,
}

impl PenaltyContext {
    pub fn from_tags(tags: Vec<ContextTag>) -> Self {
        PenaltyContext { tags }
    }

    /// Resolves `tags`. Tags without in-vocabulary tokens are dropped; tags
    /// missing from `store` get the median of medians or are dropped,
    /// depending on `policy`.
    pub fn new(
        tags: &[String],
        store: &StatsStore,
        table: &EmbeddingTable,
        policy: FallbackPolicy,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for tag in tags {
            let key = tag_key(tag);
            if key.is_empty() || !seen.insert(key.clone()) {
                continue;
            }
            let embedding = match embed_tag(&key, table) {
                Ok(e) => e,
                Err(_) => {
                    warn!("tag `{tag}` has no in-vocabulary token; excluded from the penalty");
                    continue;
                }
            };
            let (target, samples) = match store.get(&key) {
                Some(s) => (s.mmcs, Some(s.samples.clone())),
                None => match policy {
                    FallbackPolicy::MedianOfMedians => {
                        (store.default_mmcs().ok_or(Error::NoStatistics)?, None)
                    }
                    FallbackPolicy::SkipTag => {
                        warn!("tag `{tag}` has no training statistics; skipped");
                        continue;
                    }
                },
            };
            out.push(ContextTag {
                embedding,
                target,
                samples,
            });
        }
        Ok(PenaltyContext { tags: out })
    }

    pub fn tags(&self) -> &[ContextTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Cosine of every tag against every vocabulary token, `None` where the
    /// token has no vector (including the reserved markers).
    pub fn similarity_table(&self, vocab: &Vocab, table: &EmbeddingTable) -> Vec<Vec<Option<f64>>> {
        self.tags
            .iter()
            .map(|t| {
                vocab
                    .tokens()
                    .iter()
                    .enumerate()
                    .map(|(id, tok)| {
                        if id < 2 {
                            return None;
                        }
                        table.get(tok).map(|v| cosine(&t.embedding.vector, v))
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-tag MCS of a word sequence computed from scratch.
    pub fn running_mcs<S: AsRef<str>>(&self, words: &[S], table: &EmbeddingTable) -> Vec<Option<f64>> {
        let owned: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        self.tags
            .iter()
            .map(|t| max_similarity(&t.embedding.vector, &owned, table))
            .collect()
    }

    /// Mean squared gap between each tag's MCS (0 until a covered token
    /// appears) and its target. Zero for an empty tag set.
    pub fn penalty(&self, running: &[Option<f64>]) -> f64 {
        if self.tags.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .tags
            .iter()
            .zip(running)
            .map(|(t, m)| {
                let d = m.unwrap_or(0.0) - t.target;
                d * d
            })
            .sum();
        sum / self.tags.len() as f64
    }

    /// Mean KS statistic between each tag's training sample and the MCS
    /// values across `pool`. Tags without training samples are left out;
    /// when none remain the divergence is 1.
    pub fn divergence<'a, I>(&self, pool: I) -> f64
    where
        I: IntoIterator<Item = &'a [Option<f64>]>,
    {
        let pool: Vec<&[Option<f64>]> = pool.into_iter().collect();
        let mut total = 0.0;
        let mut used = 0usize;
        for (i, t) in self.tags.iter().enumerate() {
            let Some(train) = &t.samples else { continue };
            let mut generated: Vec<f64> = pool.iter().map(|r| r[i].unwrap_or(0.0)).collect();
            generated.sort_by(f64::total_cmp);
            total += ks_statistic(train, &generated);
            used += 1;
        }
        if used == 0 || pool.is_empty() {
            1.0
        } else {
            total / used as f64
        }
    }

    pub(crate) fn extend(&self, sims: &[Vec<Option<f64>>], running: &[Option<f64>], tok: TokenId) -> Vec<Option<f64>> {
        running
            .iter()
            .zip(sims)
            .map(|(cur, row)| match (cur, row[tok as usize]) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (None, s) => s,
                (a, None) => *a,
            })
            .collect()
    }
}

pub fn dmmcs_penalty(ctx: &PenaltyContext, hyp: &Hypothesis) -> f64 {
    ctx.penalty(&hyp.tag_mcs)
}

/// Histogram divergence of a candidate pool.
pub fn histogram_divergence(ctx: &PenaltyContext, pool: &[Hypothesis]) -> f64 {
    ctx.divergence(pool.iter().map(|h| h.tag_mcs.as_slice()))
}
