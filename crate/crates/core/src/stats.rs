//! Training-side tag statistics: per-tag maximum concept similarity samples
//! over the captions a tag annotates, and their medians.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tag_key, Corpus, TokenSeq};
use crate::embeddings::{cosine, embed_tag, EmbeddingTable, TagEmbedding};
use crate::error::{Error, Result};

/// Maximum cosine similarity between a tag vector and any in-vocabulary token.
/// Returns `None` when no token is covered by the table.
pub fn max_similarity<'a, I>(tag_vector: &[f64], tokens: I, table: &EmbeddingTable) -> Option<f64>
where
    I: IntoIterator<Item = &'a String>,
{
    tokens
        .into_iter()
        .filter_map(|tok| table.get(tok))
        .map(|v| cosine(tag_vector, v))
        .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
}

pub fn mcs(tag: &TagEmbedding, caption: &TokenSeq, table: &EmbeddingTable) -> Result<f64> {
    max_similarity(&tag.vector, caption, table).ok_or(Error::UndefinedMcs)
}

/// Median of an ascending slice; even lengths average the two middle values.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

fn sort_f64(v: &mut [f64]) {
    v.sort_by(f64::total_cmp);
}

/// Fraction of `samples` (ascending) that are `<= x`.
pub fn ecdf_eval(samples: &[f64], x: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.partition_point(|&s| s <= x) as f64 / samples.len() as f64
}

/// Two-sample Kolmogorov-Smirnov statistic of two ascending samples: the
/// largest absolute gap between their ECDFs over the union of sample points.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 0.0 } else { 1.0 };
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagStats {
    pub tag: String,
    pub mmcs: f64,
    pub support: usize,
    pub samples: Vec<f64>,
}

impl TagStats {
    pub fn from_samples(tag: impl Into<String>, mut samples: Vec<f64>) -> Option<Self> {
        sort_f64(&mut samples);
        let mmcs = median(&samples)?;
        Some(TagStats {
            tag: tag.into(),
            mmcs,
            support: samples.len(),
            samples,
        })
    }

    pub fn quartiles(&self) -> (f64, f64, f64) {
        (
            quantile(&self.samples, 0.25).unwrap_or(self.mmcs),
            self.mmcs,
            quantile(&self.samples, 0.75).unwrap_or(self.mmcs),
        )
    }
}

/// Per-tag statistics keyed by canonical tag form.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsStore {
    embedding_dim: usize,
    per_tag: BTreeMap<String, TagStats>,
    default_mmcs: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    embedding_dim: usize,
    default_mmcs: Option<f64>,
    tags: Vec<TagStats>,
}

impl StatsStore {
    pub fn new(embedding_dim: usize) -> Self {
        StatsStore {
            embedding_dim,
            per_tag: BTreeMap::new(),
            default_mmcs: None,
        }
    }

    pub fn insert(&mut self, mut stats: TagStats) {
        stats.tag = tag_key(&stats.tag);
        self.per_tag.insert(stats.tag.clone(), stats);
        self.refresh_default();
    }

    fn refresh_default(&mut self) {
        let mut medians: Vec<f64> = self.per_tag.values().map(|s| s.mmcs).collect();
        sort_f64(&mut medians);
        self.default_mmcs = median(&medians);
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn default_mmcs(&self) -> Option<f64> {
        self.default_mmcs
    }

    pub fn get(&self, tag: &str) -> Option<&TagStats> {
        self.per_tag.get(&tag_key(tag))
    }

    pub fn tags(&self) -> impl Iterator<Item = &TagStats> {
        self.per_tag.values()
    }

    pub fn len(&self) -> usize {
        self.per_tag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_tag.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = StatsFile {
            embedding_dim: self.embedding_dim,
            default_mmcs: self.default_mmcs,
            tags: self.per_tag.values().cloned().collect(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a stats file, re-sorting samples and checking that every
    /// stored median matches its samples.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: StatsFile = serde_json::from_str(text)?;
        let mut store = StatsStore::new(file.embedding_dim);
        for mut t in file.tags {
            if t.samples.is_empty() || t.support != t.samples.len() {
                return Err(Error::InvalidStats(format!(
                    "tag `{}`: support {} does not match {} samples",
                    t.tag,
                    t.support,
                    t.samples.len()
                )));
            }
            if t.samples.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidStats(format!("tag `{}`: non-finite sample", t.tag)));
            }
            sort_f64(&mut t.samples);
            let m = median(&t.samples).expect("non-empty");
            if (m - t.mmcs).abs() > 1e-12 {
                return Err(Error::InvalidStats(format!(
                    "tag `{}`: mmcs {} is not the sample median {m}",
                    t.tag, t.mmcs
                )));
            }
            t.mmcs = m;
            store.per_tag.insert(tag_key(&t.tag), t);
        }
        store.refresh_default();
        match (store.default_mmcs, file.default_mmcs) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
            (None, None) => {}
            (computed, stored) => {
                return Err(Error::InvalidStats(format!(
                    "default_mmcs {stored:?} does not match median of medians {computed:?}"
                )))
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Target expression strength for a tag, falling back to the median of all
/// stored medians for unseen tags.
pub fn lookup_mmcs(store: &StatsStore, tag: &str) -> Result<f64> {
    match store.get(tag) {
        Some(s) => Ok(s.mmcs),
        None => store.default_mmcs().ok_or(Error::NoStatistics),
    }
}

/// Coverage counts reported alongside a statistics build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub train_examples: usize,
    pub tags_seen: usize,
    pub tags_kept: usize,
    pub uncoverable_tags: Vec<String>,
    pub tags_without_usable_captions: Vec<String>,
    pub captions_without_coverage: usize,
}

pub fn build_stats(corpus: &Corpus, table: &EmbeddingTable) -> Result<StatsStore> {
    build_stats_with_summary(corpus, table).map(|(s, _)| s)
}

/// Computes MCS samples and their median for every tag in the training split.
pub fn build_stats_with_summary(
    corpus: &Corpus,
    table: &EmbeddingTable,
) -> Result<(StatsStore, BuildSummary)> {
    let train: Vec<_> = corpus.train().collect();
    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let captions: Vec<TokenSeq> = train.iter().map(|e| e.tokens()).collect();
    let covered: Vec<bool> = captions
        .iter()
        .map(|c| c.iter().any(|t| table.contains(t)))
        .collect();

    let mut by_tag: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in train.iter().enumerate() {
        for tag in &ex.tags {
            let key = tag_key(tag);
            if key.is_empty() {
                continue;
            }
            let idxs = by_tag.entry(key).or_default();
            // "CT" and "ct" share a key; count the caption once
            if idxs.last() != Some(&i) {
                idxs.push(i);
            }
        }
    }

    enum Outcome {
        Kept(TagStats),
        Uncoverable(String),
        NoCaptions(String),
    }

    let outcomes: Vec<Outcome> = by_tag
        .par_iter()
        .map(|(key, idxs)| {
            let emb = match embed_tag(key, table) {
                Ok(e) => e,
                Err(_) => return Outcome::Uncoverable(key.clone()),
            };
            let samples: Vec<f64> = idxs
                .iter()
                .filter_map(|&i| max_similarity(&emb.vector, &captions[i], table))
                .collect();
            match TagStats::from_samples(key.clone(), samples) {
                Some(s) => Outcome::Kept(s),
                None => Outcome::NoCaptions(key.clone()),
            }
        })
        .collect();

    let mut store = StatsStore::new(table.dim());
    let mut summary = BuildSummary {
        train_examples: train.len(),
        tags_seen: by_tag.len(),
        captions_without_coverage: covered.iter().filter(|c| !**c).count(),
        ..Default::default()
    };
    for o in outcomes {
        match o {
            Outcome::Kept(s) => {
                store.per_tag.insert(s.tag.clone(), s);
            }
            Outcome::Uncoverable(t) => {
                warn!("tag `{t}` has no in-vocabulary token; skipped");
                summary.uncoverable_tags.push(t);
            }
            Outcome::NoCaptions(t) => {
                warn!("tag `{t}` has no caption with in-vocabulary tokens; skipped");
                summary.tags_without_usable_captions.push(t);
            }
        }
    }
    if summary.captions_without_coverage > 0 {
        warn!(
            "{} training captions have no in-vocabulary token",
            summary.captions_without_coverage
        );
    }
    store.refresh_default();
    summary.tags_kept = store.len();
    Ok((store, summary))
}
