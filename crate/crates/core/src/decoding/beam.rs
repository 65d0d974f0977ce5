use std::cmp::Ordering;
use std::collections::BTreeMap;

use log::warn;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::lm::{SequenceModel, TokenId, BOS, EOS};
use crate::stats::StatsStore;

use super::constraints::Constraints;
use super::penalty::PenaltyContext;
use super::{combine_scores, combine_scores_hd, normalize_pool, DecodingConfig, Hypothesis, Method};

/// Beam contents after a decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    pub step: usize,
    pub beams: Vec<Hypothesis>,
    /// Size of the candidate pool before pruning.
    pub pool_size: usize,
    /// Histogram divergence of the pre-pruning pool (dmmcs-hd only).
    pub divergence: Option<f64>,
}

impl BeamState {
    pub fn is_done(&self) -> bool {
        self.beams.iter().all(|h| h.finished)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub token_ids: Vec<TokenId>,
    /// Words without reserved markers.
    pub tokens: Vec<String>,
    pub raw_nll: f64,
    pub combined_score: f64,
    pub finished: bool,
    /// Always true for unconstrained methods.
    pub constraints_satisfied: bool,
    pub tag_mcs: Vec<Option<f64>>,
    pub steps: usize,
}

fn tie_break(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    a.raw_nll
        .total_cmp(&b.raw_nll)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn by_combined(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    a.combined_score
        .total_cmp(&b.combined_score)
        .then_with(|| tie_break(a, b))
}

/// Beam search over one input. Build with [`Decoder::new`], then either call
/// [`Decoder::run`] or drive [`Decoder::step`] manually.
pub struct Decoder<'a, M: SequenceModel + ?Sized> {
    model: &'a M,
    cfg: DecodingConfig,
    ctx: PenaltyContext,
    sims: Vec<Vec<Option<f64>>>,
    constraints: Option<Constraints>,
}

impl<'a, M: SequenceModel + ?Sized> Decoder<'a, M> {
    /// `store` and `table` are required for the guided methods and ignored
    /// otherwise.
    pub fn new(
        model: &'a M,
        cfg: DecodingConfig,
        tags: &[String],
        store: Option<&StatsStore>,
        table: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        cfg.validate()?;
        let vocab = model.vocab();
        if vocab.is_empty() {
            return Err(Error::EmptyVocab);
        }
        let mut ctx = PenaltyContext::default();
        let mut sims = Vec::new();
        if cfg.method.is_guided() {
            let (Some(store), Some(table)) = (store, table) else {
                return Err(Error::InvalidConfig(format!(
                    "method {} needs tag statistics and embeddings",
                    cfg.method
                )));
            };
            ctx = PenaltyContext::new(tags, store, table, cfg.fallback_mmcs_policy)?;
            if ctx.is_empty() && !tags.is_empty() {
                warn!("no usable tags; {} reduces to standard beam search", cfg.method);
            }
            sims = ctx.similarity_table(vocab, table);
        }
        let constraints = cfg
            .method
            .requirement()
            .map(|req| Constraints::new(tags, vocab, req));
        Ok(Decoder {
            model,
            cfg,
            ctx,
            sims,
            constraints,
        })
    }

    pub fn config(&self) -> &DecodingConfig {
        &self.cfg
    }

    pub fn context(&self) -> &PenaltyContext {
        &self.ctx
    }

    pub fn constraints(&self) -> Option<&Constraints> {
        self.constraints.as_ref()
    }

    pub fn initial_state(&self) -> BeamState {
        BeamState {
            step: 0,
            beams: vec![Hypothesis {
                tokens: Vec::new(),
                raw_nll: 0.0,
                finished: false,
                combined_score: 0.0,
                tag_mcs: vec![None; self.ctx.len()],
            }],
            pool_size: 1,
            divergence: None,
        }
    }

    fn may_finish(&self, tokens: &[TokenId]) -> bool {
        self.constraints.as_ref().is_none_or(|c| c.satisfied(tokens))
    }

    /// Expands every unfinished hypothesis over the vocabulary, carries
    /// finished ones forward, scores the pool and prunes it.
    pub fn expand(&self, state: &BeamState) -> Result<Vec<Hypothesis>> {
        let vocab_len = self.model.vocab().len();
        let open: Vec<&Hypothesis> = state.beams.iter().filter(|h| !h.finished).collect();
        let prefixes: Vec<&[TokenId]> = open.iter().map(|h| h.tokens.as_slice()).collect();
        let all_logprobs = self.model.next_logprobs_batch(&prefixes)?;
        if all_logprobs.len() != open.len() {
            return Err(Error::ModelContract("batch size mismatch".into()));
        }

        let mut pool: Vec<Hypothesis> = state.beams.iter().filter(|h| h.finished).cloned().collect();
        for (parent, logprobs) in open.iter().zip(&all_logprobs) {
            if logprobs.len() != vocab_len {
                return Err(Error::ModelContract(format!(
                    "expected {vocab_len} log-probabilities, got {}",
                    logprobs.len()
                )));
            }
            for (tok, &lp) in logprobs.iter().enumerate() {
                let tok = tok as TokenId;
                if tok == BOS || !lp.is_finite() {
                    continue;
                }
                if tok == EOS && !self.may_finish(&parent.tokens) {
                    continue;
                }
                let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
                tokens.extend_from_slice(&parent.tokens);
                tokens.push(tok);
                let tag_mcs = if tok == EOS || self.ctx.is_empty() {
                    parent.tag_mcs.clone()
                } else {
                    self.ctx.extend(&self.sims, &parent.tag_mcs, tok)
                };
                let finished = tok == EOS || tokens.len() >= self.cfg.max_len;
                pool.push(Hypothesis {
                    raw_nll: parent.raw_nll + -lp,
                    tokens,
                    finished,
                    combined_score: 0.0,
                    tag_mcs,
                });
            }
        }
        if pool.is_empty() {
            return Err(Error::ModelContract("no token with finite probability".into()));
        }
        Ok(pool)
    }

    /// Assigns method scores to a candidate pool; returns the pool's
    /// divergence for dmmcs-hd.
    pub fn score(&self, pool: &mut [Hypothesis]) -> Option<f64> {
        match self.cfg.method {
            Method::Standard | Method::ConstrainedAll | Method::ConstrainedAny => {
                for h in pool.iter_mut() {
                    h.combined_score = h.raw_nll;
                }
                None
            }
            Method::Dmmcs | Method::DmmcsHd => {
                let nlls: Vec<f64> = pool.iter().map(|h| h.raw_nll).collect();
                let goodness = normalize_pool(&nlls);
                let alpha = self.cfg.alpha;
                let hd = (self.cfg.method == Method::DmmcsHd)
                    .then(|| self.ctx.divergence(pool.iter().map(|h| h.tag_mcs.as_slice())));
                for (h, g) in pool.iter_mut().zip(goodness) {
                    let p = self.ctx.penalty(&h.tag_mcs);
                    h.combined_score = match hd {
                        Some(hd) => combine_scores_hd(alpha, hd, p, g),
                        None => combine_scores(alpha, p, g),
                    };
                }
                hd
            }
        }
    }

    fn prune(&self, mut pool: Vec<Hypothesis>) -> Vec<Hypothesis> {
        let width = self.cfg.beam_width;
        let Some(constraints) = &self.constraints else {
            pool.sort_by(by_combined);
            pool.truncate(width);
            return pool;
        };

        // Group by constraint progress; every populated bank keeps its best
        // candidate (highest progress first), remaining slots go by score.
        let mut banks: BTreeMap<std::cmp::Reverse<usize>, Vec<Hypothesis>> = BTreeMap::new();
        for h in pool {
            banks
                .entry(std::cmp::Reverse(constraints.progress(&h.tokens)))
                .or_default()
                .push(h);
        }
        let mut chosen = Vec::with_capacity(width.min(banks.len() * 2));
        let mut rest = Vec::new();
        for (_, mut bank) in banks {
            bank.sort_by(tie_break);
            let mut it = bank.into_iter();
            if chosen.len() < width {
                chosen.extend(it.next());
            }
            rest.extend(it);
        }
        rest.sort_by(tie_break);
        let room = width - chosen.len();
        chosen.extend(rest.into_iter().take(room));
        chosen.sort_by(tie_break);
        chosen
    }

    pub fn step(&self, state: &BeamState) -> Result<BeamState> {
        if state.is_done() {
            return Ok(state.clone());
        }
        let mut pool = self.expand(state)?;
        let divergence = self.score(&mut pool);
        let pool_size = pool.len();
        Ok(BeamState {
            step: state.step + 1,
            beams: self.prune(pool),
            pool_size,
            divergence,
        })
    }

    /// Best hypothesis of a finished beam under the method's final ranking.
    pub fn best(&self, state: &BeamState) -> DecodeOutput {
        let candidates = state.beams.iter().filter(|h| h.finished);
        let best = match self.cfg.method {
            Method::Dmmcs | Method::DmmcsHd => candidates.min_by(|a, b| by_combined(a, b)),
            Method::Standard => candidates.min_by(|a, b| tie_break(a, b)),
            Method::ConstrainedAll | Method::ConstrainedAny => candidates.min_by(|a, b| {
                let sa = self.may_finish(&a.tokens);
                let sb = self.may_finish(&b.tokens);
                sb.cmp(&sa).then_with(|| tie_break(a, b))
            }),
        }
        .or_else(|| state.beams.iter().min_by(|a, b| tie_break(a, b)))
        .expect("beam is never empty");
        let vocab = self.model.vocab();
        DecodeOutput {
            token_ids: best.tokens.clone(),
            tokens: vocab.decode(&best.tokens),
            raw_nll: best.raw_nll,
            combined_score: best.combined_score,
            finished: best.finished,
            constraints_satisfied: self.may_finish(&best.tokens),
            tag_mcs: best.tag_mcs.clone(),
            steps: state.step,
        }
    }

    pub fn run(&self) -> Result<DecodeOutput> {
        let mut state = self.initial_state();
        while !state.is_done() {
            state = self.step(&state)?;
        }
        Ok(self.best(&state))
    }

    /// Runs to completion and returns every intermediate state.
    pub fn trace(&self) -> Result<Vec<BeamState>> {
        let mut states = vec![self.initial_state()];
        while !states.last().expect("non-empty").is_done() {
            let next = self.step(states.last().expect("non-empty"))?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Decodes one input.
pub fn decode<M: SequenceModel + ?Sized>(
    model: &M,
    cfg: &DecodingConfig,
    tags: &[String],
    store: Option<&StatsStore>,
    table: Option<&EmbeddingTable>,
) -> Result<DecodeOutput> {
    Decoder::new(model, cfg.clone(), tags, store, table)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::FallbackPolicy;
    use crate::lm::{CallbackModel, Vocab};
    use crate::stats::TagStats;

    /// Prefers "b" strongly, then EOS after two tokens.
    fn b_model() -> CallbackModel<impl Fn(&[TokenId]) -> Vec<f64> + Sync> {
        // ids: 0 BOS, 1 EOS, 2 a, 3 b, 4 c
        CallbackModel::new(Vocab::new(["a", "b", "c"]), |p: &[TokenId]| {
            if p.len() >= 2 {
                vec![0.0, 0.7, 0.1, 0.1, 0.1]
            } else {
                vec![0.0, 0.05, 0.1, 0.75, 0.1]
            }
        })
    }

    fn cfg(method: Method, beam: usize, max_len: usize) -> DecodingConfig {
        DecodingConfig {
            method,
            beam_width: beam,
            max_len,
            alpha: 0.5,
            fallback_mmcs_policy: FallbackPolicy::MedianOfMedians,
        }
    }

    fn tags(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn greedy_with_beam_one() {
        let m = b_model();
        let out = decode(&m, &cfg(Method::Standard, 1, 5), &[], None, None).unwrap();
        assert_eq!(out.tokens, vec!["b", "b"]);
        assert!(out.finished);
        let expected = -(0.75f64.ln()) + -(0.75f64.ln()) + -(0.7f64.ln());
        assert!((out.raw_nll - expected).abs() < 1e-12);
    }

    #[test]
    fn constrained_all_forces_tag() {
        let m = b_model();
        let out = decode(&m, &cfg(Method::ConstrainedAll, 2, 5), &tags(&["a"]), None, None).unwrap();
        assert!(out.constraints_satisfied);
        assert!(out.tokens.iter().any(|t| t == "a"), "{:?}", out.tokens);
    }

    #[test]
    fn constrained_any_meets_one() {
        let m = b_model();
        let out = decode(&m, &cfg(Method::ConstrainedAny, 2, 5), &tags(&["a", "c"]), None, None).unwrap();
        assert!(out.constraints_satisfied);
        assert!(out.tokens.iter().any(|t| t == "a" || t == "c"));
    }

    #[test]
    fn infeasible_constraint_is_flagged() {
        let m = b_model();
        let out = decode(&m, &cfg(Method::ConstrainedAll, 3, 1), &tags(&["a c"]), None, None).unwrap();
        assert!(!out.constraints_satisfied);
        assert_eq!(out.tokens.len(), 1);

        let out = decode(&m, &cfg(Method::ConstrainedAny, 3, 3), &tags(&["zebra"]), None, None).unwrap();
        assert!(!out.constraints_satisfied);
    }

    #[test]
    fn guided_requires_stats() {
        let m = b_model();
        let err = Decoder::new(&m, cfg(Method::Dmmcs, 2, 3), &tags(&["a"]), None, None);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    fn guided_fixture() -> (EmbeddingTable, StatsStore) {
        let mut table = EmbeddingTable::new(2).unwrap();
        table.insert("a", &[1.0, 0.0]).unwrap();
        table.insert("b", &[0.0, 1.0]).unwrap();
        table.insert("c", &[0.6, 0.8]).unwrap();
        let mut store = StatsStore::new(2);
        store.insert(TagStats::from_samples("a", vec![1.0]).unwrap());
        (table, store)
    }

    #[test]
    fn guided_pulls_toward_target() {
        let m = b_model();
        let (table, store) = guided_fixture();
        let mut c = cfg(Method::Dmmcs, 3, 3);
        c.alpha = 0.9;
        let out = decode(&m, &c, &tags(&["a"]), Some(&store), Some(&table)).unwrap();
        assert!(out.tokens.iter().any(|t| t == "a"), "{:?}", out.tokens);
        assert_eq!(out.tag_mcs, vec![Some(1.0)]);

        c.alpha = 0.0;
        let guided = decode(&m, &c, &tags(&["a"]), Some(&store), Some(&table)).unwrap();
        let plain = decode(&m, &cfg(Method::Standard, 3, 3), &[], None, None).unwrap();
        assert_eq!(guided.token_ids, plain.token_ids);
    }

    #[test]
    fn hd_records_divergence() {
        let m = b_model();
        let (table, store) = guided_fixture();
        let d = Decoder::new(&m, cfg(Method::DmmcsHd, 2, 3), &tags(&["a"]), Some(&store), Some(&table)).unwrap();
        let states = d.trace().unwrap();
        for s in &states[1..] {
            let hd = s.divergence.unwrap();
            assert!((0.0..=1.0).contains(&hd));
        }
    }

    #[test]
    fn unusable_tags_reduce_to_standard() {
        let m = b_model();
        let (table, store) = guided_fixture();
        let mut c = cfg(Method::Dmmcs, 2, 4);
        c.alpha = 1.0;
        let out = decode(&m, &c, &tags(&["zebra"]), Some(&store), Some(&table)).unwrap();
        let plain = decode(&m, &cfg(Method::Standard, 2, 4), &[], None, None).unwrap();
        assert_eq!(out.token_ids, plain.token_ids);
    }

    #[test]
    fn rejects_bad_batch_shape() {
        let m = CallbackModel::new(Vocab::new(["a"]), |_| vec![0.5, 0.5]);
        assert!(decode(&m, &cfg(Method::Standard, 1, 2), &[], None, None).is_err());
    }
}
