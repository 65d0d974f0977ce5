//! Caption metrics and the report that aggregates them.

mod bleu;
mod clinical;
mod order;
mod tune;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::decoding::{FallbackPolicy, PenaltyContext};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::lm::{d_score, SequenceModel, TokenId, EOS};
use crate::stats::StatsStore;

pub use bleu::{bleu, sentence_bleu};
pub use clinical::{clinical_accuracy, labelize, row_agreement, Label, LabelMatrix, RawLabel, Rule, RuleSet};
pub use order::{positional_scores, sentence_order_analysis, split_sentences, PositionScore, SentenceOrderReport};
pub use tune::{default_grid, tune_alpha, TuneResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Ca,
    Gap,
    Perplexity,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Ca => "ca",
            Metric::Gap => "gap",
            Metric::Perplexity => "perplexity",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Bleu | Metric::Ca)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::Bleu, Metric::Ca, Metric::Gap, Metric::Perplexity]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

/// One generated caption paired with its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub group: Option<String>,
    /// Tags whose expression the gap metric measures.
    pub tags: Vec<String>,
    pub reference: TokenSeq,
    pub hypothesis: TokenSeq,
    /// Raw reference text, kept for sentence-level analysis.
    pub reference_text: String,
    pub hypothesis_text: String,
}

/// Inputs some metrics need. Missing resources make those metrics error.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub max_n: usize,
    pub rules: Option<&'a RuleSet>,
    pub label_seed: u64,
    pub store: Option<&'a StatsStore>,
    pub table: Option<&'a EmbeddingTable>,
    pub policy: FallbackPolicy,
    pub model: Option<&'a dyn SequenceModel>,
}

impl Default for Resources<'_> {
    fn default() -> Self {
        Resources {
            max_n: 4,
            rules: None,
            label_seed: 0,
            store: None,
            table: None,
            policy: FallbackPolicy::MedianOfMedians,
            model: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Number of disjoint random test subsets; 0 disables.
    pub subsets: usize,
    pub seed: u64,
    pub groups: bool,
    pub sentence_order: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: 0.0,
                std: 0.0,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Summary {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub count: usize,
    pub aggregate: BTreeMap<Metric, Summary>,
    pub corpus: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_example: BTreeMap<String, BTreeMap<Metric, f64>>,
    /// Mean and deviation of the per-example values.
    pub aggregate: BTreeMap<Metric, Summary>,
    /// Corpus-level values (pooled n-gram counts for BLEU, pooled NLL for perplexity).
    pub corpus: BTreeMap<Metric, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsets: Option<BTreeMap<Metric, SubsetSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, GroupReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_order: Option<SentenceOrderReport>,
}

pub const UNGROUPED: &str = "ungrouped";

/// Mean tag-expression penalty of final captions against each item's tags.
pub fn tag_expression_gap<S: AsRef<str>>(
    items: &[(Vec<S>, Vec<String>)],
    store: &StatsStore,
    table: &EmbeddingTable,
    policy: FallbackPolicy,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("no captions to score".into()));
    }
    let mut total = 0.0;
    for (words, tags) in items {
        total += caption_gap(words, tags, store, table, policy)?;
    }
    Ok(total / items.len() as f64)
}

pub fn caption_gap<S: AsRef<str>>(
    words: &[S],
    tags: &[String],
    store: &StatsStore,
    table: &EmbeddingTable,
    policy: FallbackPolicy,
) -> Result<f64> {
    let ctx = PenaltyContext::new(tags, store, table, policy)?;
    Ok(ctx.penalty(&ctx.running_mcs(words, table)))
}

/// Per-item intermediate values from which both per-example and pooled
/// metrics are computed.
struct ItemStats {
    values: BTreeMap<Metric, f64>,
    nll: f64,
    tokens: usize,
}

fn need<'a, T: ?Sized>(x: Option<&'a T>, metric: Metric, what: &str) -> Result<&'a T> {
    x.ok_or_else(|| Error::InvalidConfig(format!("metric {metric} needs {what}")))
}

fn item_stats(items: &[EvalItem], metrics: &[Metric], res: &Resources) -> Result<Vec<ItemStats>> {
    let mut out: Vec<ItemStats> = items
        .iter()
        .map(|_| ItemStats {
            values: BTreeMap::new(),
            nll: 0.0,
            tokens: 0,
        })
        .collect();
    for &metric in metrics {
        match metric {
            Metric::Bleu => {
                for (s, it) in out.iter_mut().zip(items) {
                    s.values
                        .insert(metric, sentence_bleu(&it.reference, &it.hypothesis, res.max_n));
                }
            }
            Metric::Ca => {
                let rules = need(res.rules, metric, "a rule file")?;
                for (i, (s, it)) in out.iter_mut().zip(items).enumerate() {
                    let r = labelize(&it.reference, rules, clinical::row_seed(res.label_seed, 2 * i));
                    let h = labelize(&it.hypothesis, rules, clinical::row_seed(res.label_seed, 2 * i + 1));
                    s.values.insert(metric, row_agreement(&r, &h));
                }
            }
            Metric::Gap => {
                let store = need(res.store, metric, "tag statistics")?;
                let table = need(res.table, metric, "embeddings")?;
                for (s, it) in out.iter_mut().zip(items) {
                    let g = caption_gap(it.hypothesis.as_slice(), &it.tags, store, table, res.policy)?;
                    s.values.insert(metric, g);
                }
            }
            Metric::Perplexity => {
                let model = need(res.model, metric, "a language model")?;
                let vocab = model.vocab();
                for (s, it) in out.iter_mut().zip(items) {
                    let mut ids: Vec<TokenId> = Vec::with_capacity(it.hypothesis.len() + 1);
                    for t in &it.hypothesis {
                        ids.push(vocab.id(t).ok_or_else(|| {
                            Error::InvalidConfig(format!("token `{t}` is not in the model vocabulary"))
                        })?);
                    }
                    ids.push(EOS);
                    s.nll = d_score(model, &ids)?;
                    s.tokens = ids.len();
                    s.values.insert(metric, (s.nll / s.tokens as f64).exp());
                }
            }
        }
    }
    Ok(out)
}

fn corpus_values(
    items: &[&EvalItem],
    stats: &[&ItemStats],
    metrics: &[Metric],
    res: &Resources,
) -> Result<BTreeMap<Metric, f64>> {
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::Bleu => {
                let refs: Vec<TokenSeq> = items.iter().map(|i| i.reference.clone()).collect();
                let hyps: Vec<TokenSeq> = items.iter().map(|i| i.hypothesis.clone()).collect();
                bleu(&refs, &hyps, res.max_n)?
            }
            Metric::Ca | Metric::Gap => {
                stats.iter().map(|s| s.values[&m]).sum::<f64>() / stats.len().max(1) as f64
            }
            Metric::Perplexity => {
                let nll: f64 = stats.iter().map(|s| s.nll).sum();
                let n: usize = stats.iter().map(|s| s.tokens).sum();
                (nll / n.max(1) as f64).exp()
            }
        };
        out.insert(m, v);
    }
    Ok(out)
}

fn aggregate(stats: &[&ItemStats], metrics: &[Metric]) -> BTreeMap<Metric, Summary> {
    metrics
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = stats.iter().map(|s| s.values[&m]).collect();
            (m, Summary::of(&vals))
        })
        .collect()
}

/// Per-group aggregates; items without a group fall under `ungrouped`.
pub fn group_eval(items: &[EvalItem], metrics: &[Metric], res: &Resources) -> Result<BTreeMap<String, GroupReport>> {
    let stats = item_stats(items, metrics, res)?;
    grouped(items, &stats, metrics, res)
}

fn grouped(
    items: &[EvalItem],
    stats: &[ItemStats],
    metrics: &[Metric],
    res: &Resources,
) -> Result<BTreeMap<String, GroupReport>> {
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let key = it
            .group
            .as_deref()
            .filter(|g| !g.is_empty())
            .unwrap_or(UNGROUPED)
            .to_string();
        by_group.entry(key).or_default().push(i);
    }
    by_group
        .into_iter()
        .map(|(g, idx)| {
            let its: Vec<&EvalItem> = idx.iter().map(|&i| &items[i]).collect();
            let sts: Vec<&ItemStats> = idx.iter().map(|&i| &stats[i]).collect();
            let report = GroupReport {
                count: idx.len(),
                aggregate: aggregate(&sts, metrics),
                corpus: corpus_values(&its, &sts, metrics, res)?,
            };
            Ok((g, report))
        })
        .collect()
}

/// Evaluates `items` under every requested metric.
pub fn evaluate(items: &[EvalItem], metrics: &[Metric], res: &Resources, opts: &EvalOptions) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let stats = item_stats(items, metrics, res)?;
    let all_items: Vec<&EvalItem> = items.iter().collect();
    let all_stats: Vec<&ItemStats> = stats.iter().collect();

    let per_example = items
        .iter()
        .zip(&stats)
        .map(|(it, s)| (it.id.clone(), s.values.clone()))
        .collect();

    let subsets = if opts.subsets > 0 {
        if opts.subsets > items.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot form {} subsets from {} items",
                opts.subsets,
                items.len()
            )));
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); opts.subsets];
        for (rank, i) in order.into_iter().enumerate() {
            parts[rank % opts.subsets].push(i);
        }
        let mut per_metric: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
        for part in &parts {
            let its: Vec<&EvalItem> = part.iter().map(|&i| &items[i]).collect();
            let sts: Vec<&ItemStats> = part.iter().map(|&i| &stats[i]).collect();
            for (m, v) in corpus_values(&its, &sts, metrics, res)? {
                per_metric.entry(m).or_default().push(v);
            }
        }
        Some(
            per_metric
                .into_iter()
                .map(|(m, values)| {
                    let s = Summary::of(&values);
                    (
                        m,
                        SubsetSummary {
                            values,
                            mean: s.mean,
                            std: s.std,
                        },
                    )
                })
                .collect(),
        )
    } else {
        None
    };

    let groups = if opts.groups {
        Some(grouped(items, &stats, metrics, res)?)
    } else {
        None
    };

    let sentence_order = opts.sentence_order.then(|| {
        let pairs: Vec<(&str, &str)> = items
            .iter()
            .map(|it| (it.reference_text.as_str(), it.hypothesis_text.as_str()))
            .collect();
        positional_scores(&pairs, |r, h| sentence_bleu(r, h, res.max_n))
    });

    Ok(EvalReport {
        per_example,
        aggregate: aggregate(&all_stats, metrics),
        corpus: corpus_values(&all_items, &all_stats, metrics, res)?,
        subsets,
        groups,
        sentence_order,
    })
}
