//! Sequence-model contract, an add-k smoothed n-gram model, and the
//! likelihood-based scores built on top of them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, TokenSeq};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Dense token ids. Ids 0 and 1 are reserved for BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from corpus tokens, sorted for stable ids.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != BOS_TOKEN && t != EOS_TOKEN)
            .collect();
        let mut v = Vocab {
            tokens: vec![BOS_TOKEN.to_string(), EOS_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.tokens.extend(words);
        v.index = v
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        v
    }

    /// Total size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when there are no non-reserved tokens.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Number of tokens a model can emit: every word plus EOS.
    pub fn outcomes(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word tokens, excluding reserved markers.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn encode(&self, seq: &TokenSeq) -> Option<Vec<TokenId>> {
        seq.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS)
            .map(|&i| self.token(i).to_string())
            .collect()
    }
}

/// Supplies next-token log-probabilities over the whole vocabulary.
///
/// `prefix` holds generated ids only (no BOS). Every returned vector must
/// exponentiate and sum to one, and equal prefixes must give equal vectors.
pub trait SequenceModel: Sync {
    fn vocab(&self) -> &Vocab;

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;

    /// One call per decoding step; implementations backed by a foreign
    /// process should override this to cross the boundary once.
    fn next_logprobs_batch(&self, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<f64>>> {
        prefixes.iter().map(|p| self.next_logprobs(p)).collect()
    }
}

impl<M: SequenceModel + ?Sized> SequenceModel for &M {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_logprobs(prefix)
    }

    fn next_logprobs_batch(&self, prefixes: &[&[TokenId]]) -> Result<Vec<Vec<f64>>> {
        (**self).next_logprobs_batch(prefixes)
    }
}

/// Checks length, finiteness and normalization of a log-probability vector.
pub fn validate_logprobs(logprobs: &[f64], vocab_len: usize, tolerance: f64) -> Result<()> {
    if logprobs.len() != vocab_len {
        return Err(Error::ModelContract(format!(
            "expected {vocab_len} log-probabilities, got {}",
            logprobs.len()
        )));
    }
    if logprobs.iter().any(|x| x.is_nan() || *x == f64::INFINITY || *x > 1e-12) {
        return Err(Error::ModelContract("log-probability above zero or NaN".into()));
    }
    let total: f64 = logprobs.iter().map(|x| x.exp()).sum();
    if (total - 1.0).abs() > tolerance {
        return Err(Error::ModelContract(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

type Counts = BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>;

/// Add-k smoothed n-gram model over BOS-padded, EOS-terminated captions.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Vocab,
    counts: Counts,
    totals: BTreeMap<Vec<TokenId>, u64>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    fn context(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let want = self.order - 1;
        let mut ctx = Vec::with_capacity(want);
        let have = prefix.len().min(want);
        ctx.extend(std::iter::repeat_n(BOS, want - have));
        ctx.extend_from_slice(&prefix[prefix.len() - have..]);
        ctx
    }

    pub fn to_json(&self) -> Result<String> {
        let contexts = self
            .counts
            .iter()
            .map(|(ctx, next)| ContextCounts {
                context: ctx.iter().map(|&i| self.vocab.token(i).to_string()).collect(),
                next: next
                    .iter()
                    .map(|(&i, &c)| (self.vocab.token(i).to_string(), c))
                    .collect(),
            })
            .collect();
        let file = NGramFile {
            order: self.order,
            smoothing: self.k,
            vocab: self.vocab.words().to_vec(),
            contexts,
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NGramFile = serde_json::from_str(text)?;
        if file.order == 0 || file.smoothing.is_nan() || file.smoothing <= 0.0 {
            return Err(Error::InvalidConfig("order must be >= 1 and smoothing > 0".into()));
        }
        let vocab = Vocab::new(file.vocab);
        let lookup = |t: &str| {
            vocab
                .id(t)
                .ok_or_else(|| Error::InvalidConfig(format!("token `{t}` not in model vocabulary")))
        };
        let mut counts = Counts::new();
        let mut totals = BTreeMap::new();
        for c in file.contexts {
            if c.context.len() != file.order - 1 {
                return Err(Error::InvalidConfig("context length does not match order".into()));
            }
            let ctx = c.context.iter().map(|t| lookup(t)).collect::<Result<Vec<_>>>()?;
            let mut next = BTreeMap::new();
            for (t, n) in c.next {
                next.insert(lookup(&t)?, n);
            }
            totals.insert(ctx.clone(), next.values().sum());
            counts.insert(ctx, next);
        }
        Ok(NGramModel {
            order: file.order,
            k: file.smoothing,
            vocab,
            counts,
            totals,
        })
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

#[derive(Serialize, Deserialize)]
struct ContextCounts {
    context: Vec<String>,
    next: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct NGramFile {
    order: usize,
    smoothing: f64,
    vocab: Vec<String>,
    contexts: Vec<ContextCounts>,
}

impl SequenceModel for NGramModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let ctx = self.context(prefix);
        let total = self.totals.get(&ctx).copied().unwrap_or(0) as f64;
        let denom = total + self.k * self.vocab.outcomes() as f64;
        let mut out = vec![(self.k / denom).ln(); self.vocab.len()];
        out[BOS as usize] = f64::NEG_INFINITY;
        if let Some(next) = self.counts.get(&ctx) {
            for (&tok, &c) in next {
                out[tok as usize] = ((c as f64 + self.k) / denom).ln();
            }
        }
        Ok(out)
    }
}

/// Trains an order-`n` model on the training split with add-`k` smoothing.
pub fn train_ngram(corpus: &Corpus, n: usize, k: f64) -> Result<NGramModel> {
    train_ngram_on(corpus.train(), n, k)
}

pub fn train_ngram_on<'a, I>(examples: I, n: usize, k: f64) -> Result<NGramModel>
where
    I: IntoIterator<Item = &'a Example>,
{
    if n == 0 {
        return Err(Error::InvalidConfig("n-gram order must be at least 1".into()));
    }
    if !k.is_finite() || k <= 0.0 {
        return Err(Error::InvalidConfig("smoothing constant must be positive".into()));
    }
    let captions: Vec<TokenSeq> = examples.into_iter().map(|e| e.tokens()).collect();
    if captions.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let vocab = Vocab::new(captions.iter().flat_map(|c| c.iter().cloned()));
    let mut counts = Counts::new();
    let mut totals: BTreeMap<Vec<TokenId>, u64> = BTreeMap::new();
    for cap in &captions {
        let mut seq = vec![BOS; n - 1];
        seq.extend(cap.iter().map(|t| vocab.id(t).expect("vocab built from corpus")));
        seq.push(EOS);
        for w in seq.windows(n) {
            let (ctx, next) = w.split_at(n - 1);
            *counts
                .entry(ctx.to_vec())
                .or_default()
                .entry(next[0])
                .or_default() += 1;
            *totals.entry(ctx.to_vec()).or_default() += 1;
        }
    }
    Ok(NGramModel {
        order: n,
        k,
        vocab,
        counts,
        totals,
    })
}

/// Callback-backed model: the closure returns a probability vector over the
/// engine vocabulary and every vector is validated before use.
pub struct CallbackModel<F> {
    vocab: Vocab,
    callback: F,
    tolerance: f64,
}

impl<F> CallbackModel<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Sync,
{
    pub fn new(vocab: Vocab, callback: F) -> Self {
        CallbackModel {
            vocab,
            callback,
            tolerance: 1e-9,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

impl<F> SequenceModel for CallbackModel<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Sync,
{
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let probs = (self.callback)(prefix);
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::ModelContract("probabilities must be finite and non-negative".into()));
        }
        let logprobs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        validate_logprobs(&logprobs, self.vocab.len(), self.tolerance)?;
        Ok(logprobs)
    }
}

/// Negative log-likelihood of `seq`, summed left to right over every
/// position including a trailing EOS.
pub fn d_score<M: SequenceModel + ?Sized>(model: &M, seq: &[TokenId]) -> Result<f64> {
    let mut nll = 0.0;
    for t in 0..seq.len() {
        let lp = model.next_logprobs(&seq[..t])?;
        nll += -lp[seq[t] as usize];
    }
    Ok(nll)
}

/// exp(total NLL / total tokens) over EOS-terminated sequences.
pub fn perplexity<M: SequenceModel + ?Sized>(model: &M, sequences: &[Vec<TokenId>]) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        let mut full = seq.clone();
        if full.last() != Some(&EOS) {
            full.push(EOS);
        }
        nll += d_score(model, &full)?;
        count += full.len();
    }
    if count == 0 {
        return Err(Error::InvalidConfig("perplexity of an empty corpus".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Perplexity of a corpus's captions. Tokens outside the model vocabulary are
/// dropped with a warning.
pub fn corpus_perplexity<'a, M, I>(model: &M, examples: I) -> Result<f64>
where
    M: SequenceModel + ?Sized,
    I: IntoIterator<Item = &'a Example>,
{
    let vocab = model.vocab();
    let mut dropped = 0usize;
    let seqs: Vec<Vec<TokenId>> = examples
        .into_iter()
        .map(|e| {
            e.tokens()
                .iter()
                .filter_map(|t| {
                    let id = vocab.id(t);
                    dropped += id.is_none() as usize;
                    id
                })
                .collect()
        })
        .collect();
    if dropped > 0 {
        warn!("{dropped} tokens outside the model vocabulary were skipped");
    }
    perplexity(model, &seqs)
}
