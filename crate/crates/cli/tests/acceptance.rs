//! Acceptance suite. Every criterion runs in sequence and prints one
//! PASS/FAIL line; the process fails if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use dmmcs_core::corpus::tag_key;
use dmmcs_core::decoding::{histogram_divergence, ContextTag, Hypothesis, PenaltyContext};
use dmmcs_core::embeddings::TagEmbedding;
use dmmcs_core::eval::{bleu, clinical_accuracy, tag_expression_gap, Label, LabelMatrix};
use dmmcs_core::lm::{CallbackModel, BOS, EOS};
use dmmcs_core::stats::TagStats;
use dmmcs_core::synth::{self, Explicitness, SynthConfig};
use dmmcs_core::{
    build_stats, cosine, decode, decode_requests, embed_tag, tokenize, train_ngram, Corpus, DecodeOutput,
    DecodingConfig, EmbeddingTable, Example, FallbackPolicy, Method, NGramModel, SequenceModel, Split,
    StatsStore, TokenId, Vocab,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, Option<u64>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cfg(method: Method, beam: usize, max_len: usize, alpha: f64) -> DecodingConfig {
    DecodingConfig {
        method,
        beam_width: beam,
        max_len,
        alpha,
        fallback_mmcs_policy: FallbackPolicy::MedianOfMedians,
    }
}

struct Fixture {
    corpus: Corpus,
    table: EmbeddingTable,
    store: StatsStore,
    model: NGramModel,
    tags: Vec<String>,
}

fn fixture(seed: u64, train: usize, test: usize) -> Fixture {
    let s = synth::generate(&SynthConfig {
        tags: 8,
        train,
        val: 0,
        test,
        seed,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let store = build_stats(&s.corpus, &s.table).expect("stats");
    let model = train_ngram(&s.corpus, 2, 0.1).expect("model");
    Fixture {
        tags: s.planted.iter().map(|p| p.tag.clone()).collect(),
        corpus: s.corpus,
        table: s.table,
        store,
        model,
    }
}

// ---------------------------------------------------------------------------
// A1

fn a1() -> Check {
    let fixtures: Vec<Fixture> = (0..4).map(|s| fixture(s, 150, 10)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut compared = 0;
    for i in 0..100 {
        let fx = &fixtures[i % fixtures.len()];
        let beam = 1 + i % 8;
        let k = rng.gen_range(1..=3);
        let mut tags: Vec<String> = fx.tags.choose_multiple(&mut rng, k).cloned().collect();
        if rng.gen_bool(0.2) {
            tags.push("unseen finding".into());
        }
        let standard = decode(&fx.model, &cfg(Method::Standard, beam, 14, 0.0), &tags, None, None)
            .map_err(|e| e.to_string())?;
        for method in [Method::Dmmcs, Method::DmmcsHd] {
            let out = decode(
                &fx.model,
                &cfg(method, beam, 14, 0.0),
                &tags,
                Some(&fx.store),
                Some(&fx.table),
            )
            .map_err(|e| e.to_string())?;
            ensure(out.token_ids == standard.token_ids, || {
                format!(
                    "input {i} (beam {beam}, {method}): {:?} vs standard {:?}",
                    out.tokens, standard.tokens
                )
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared}/{compared} alpha=0 decodes token-identical to standard, beams 1-8"))
}

// ---------------------------------------------------------------------------
// A2

fn prefix_seed(seed: u64, prefix: &[TokenId]) -> u64 {
    prefix.iter().fold(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15), |h, &t| {
        h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1)
    })
}

fn random_model(seed: u64, words: &[String]) -> impl SequenceModel {
    let vocab = Vocab::new(words.iter().cloned());
    let n = vocab.len();
    CallbackModel::new(vocab, move |prefix: &[TokenId]| {
        let mut r = ChaCha8Rng::seed_from_u64(prefix_seed(seed, prefix));
        let weights: Vec<f64> = (0..n)
            .map(|i| if i as TokenId == BOS { 0.0 } else { r.gen_range(0.05..1.0) })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    })
}

struct Terminated {
    tokens: Vec<TokenId>,
    nll: f64,
}

fn enumerate_terminated<M: SequenceModel>(model: &M, max_len: usize) -> Vec<Terminated> {
    let n = model.vocab().len() as TokenId;
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64)];
    while let Some((prefix, nll)) = stack.pop() {
        let lp = model.next_logprobs(&prefix).expect("valid model");
        for tok in 0..n {
            if tok == BOS {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(tok);
            let nll = nll + -lp[tok as usize];
            if tok == EOS || seq.len() >= max_len {
                out.push(Terminated { tokens: seq, nll });
            } else {
                stack.push((seq, nll));
            }
        }
    }
    out
}

fn a2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut sizes = Vec::new();
    for inst in 0..50u64 {
        let n_words = rng.gen_range(1..=3);
        let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
        let model = random_model(inst, &words);
        let vocab = model.vocab().clone();
        ensure(vocab.len() <= 5, || "vocab too large".into())?;
        let max_len = rng.gen_range(1..=4);

        let dim = 3;
        let mut table = EmbeddingTable::new(dim).unwrap();
        let tag_words: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        for w in words.iter().chain(&tag_words) {
            if words.contains(w) && rng.gen_bool(0.2) {
                continue;
            }
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.insert(w, &v).unwrap();
        }
        let mut store = StatsStore::new(dim);
        for t in &tag_words {
            if rng.gen_bool(0.7) {
                let samples: Vec<f64> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0.0..1.0)).collect();
                store.insert(TagStats::from_samples(t.clone(), samples).unwrap());
            }
        }
        if store.is_empty() {
            store.insert(TagStats::from_samples(tag_words[0].clone(), vec![0.5]).unwrap());
        }
        let k = rng.gen_range(1..=2);
        let tags: Vec<String> = tag_words.choose_multiple(&mut rng, k).cloned().collect();
        let alpha = *[0.0, 0.25, 0.5, 0.75, 1.0, rng.gen_range(0.0..1.0)].choose(&mut rng).unwrap();

        let out = decode(
            &model,
            &cfg(Method::Dmmcs, usize::MAX, max_len, alpha),
            &tags,
            Some(&store),
            Some(&table),
        )
        .map_err(|e| e.to_string())?;

        // Brute force over every terminated sequence.
        let targets: Vec<(Vec<f64>, f64)> = tags
            .iter()
            .map(|t| {
                let target = store
                    .get(t)
                    .map(|s| s.mmcs)
                    .unwrap_or_else(|| store.default_mmcs().unwrap());
                (embed_tag(t, &table).unwrap().vector, target)
            })
            .collect();
        let seqs = enumerate_terminated(&model, max_len);
        let lo = seqs.iter().map(|s| s.nll).fold(f64::INFINITY, f64::min);
        let hi = seqs.iter().map(|s| s.nll).fold(f64::NEG_INFINITY, f64::max);
        let mut best = f64::INFINITY;
        for s in &seqs {
            let mut sum = 0.0;
            for (centroid, target) in &targets {
                let mut m: Option<f64> = None;
                for &tok in &s.tokens {
                    if tok == EOS {
                        continue;
                    }
                    if let Some(v) = table.get(vocab.token(tok)) {
                        let c = cosine(centroid, v);
                        m = Some(match m {
                            Some(b) if b >= c => b,
                            _ => c,
                        });
                    }
                }
                let d = m.unwrap_or(0.0) - target;
                sum += d * d;
            }
            let penalty = sum / targets.len() as f64;
            let goodness = if hi > lo { (hi - s.nll) / (hi - lo) } else { 1.0 };
            let combined = alpha * penalty + (1.0 - alpha) * (1.0 - goodness);
            best = best.min(combined);
        }
        ensure(out.combined_score.to_bits() == best.to_bits(), || {
            format!(
                "instance {inst}: decoder {} vs brute force {best} over {} sequences",
                out.combined_score,
                seqs.len()
            )
        })?;
        sizes.push(seqs.len());
    }
    Ok(format!(
        "50 instances exact, {} to {} terminated sequences each",
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    ))
}

// ---------------------------------------------------------------------------
// A3

fn random_stats_corpus(rng: &mut ChaCha8Rng) -> (Corpus, EmbeddingTable) {
    let words = [
        "effusion", "left", "right", "small", "large", "lobe", "base", "mild", "opacity", "qzx",
    ];
    let tags = [
        "effusion",
        "Left Effusion",
        "opacity",
        "small opacity",
        "base",
        "qqq",
        "Opacity",
    ];
    let dim = 4;
    let mut table = EmbeddingTable::new(dim).unwrap();
    for w in words.iter().filter(|w| **w != "qzx") {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        table.insert(w, &v).unwrap();
    }
    let n = rng.gen_range(5..=50);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.gen_range(1..=8);
        let mut caption: Vec<String> = (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        if rng.gen_bool(0.3) {
            caption[0] = caption[0].to_uppercase();
            caption.last_mut().unwrap().push('.');
        }
        let k = rng.gen_range(0..=3);
        examples.push(Example {
            id: format!("e{i}"),
            tags: tags.choose_multiple(rng, k).map(|s| s.to_string()).collect(),
            caption: caption.join(" "),
            group: None,
            split: if i == 0 || rng.gen_bool(0.7) { Split::Train } else { Split::Test },
        });
    }
    (Corpus::new(examples).unwrap(), table)
}

fn a3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut tags_checked = 0;
    for case in 0..40 {
        let (corpus, table) = random_stats_corpus(&mut rng);
        let store = build_stats(&corpus, &table).map_err(|e| e.to_string())?;

        let train: Vec<&Example> = corpus.examples().iter().filter(|e| e.split == Split::Train).collect();
        let keys: BTreeSet<String> = train.iter().flat_map(|e| e.tags.iter().map(|t| tag_key(t))).collect();
        let mut medians = Vec::new();
        let mut expected_tags = 0;
        for key in &keys {
            let Ok(centroid) = embed_tag(key, &table) else {
                ensure(store.get(key).is_none(), || format!("case {case}: uncoverable `{key}` kept"))?;
                continue;
            };
            let mut samples = Vec::new();
            for ex in &train {
                if !ex.tags.iter().any(|t| tag_key(t) == *key) {
                    continue;
                }
                let mut best: Option<f64> = None;
                for tok in tokenize(&ex.caption).iter() {
                    if let Some(v) = table.get(tok) {
                        let c = cosine(&centroid.vector, v);
                        best = Some(match best {
                            Some(b) if b >= c => b,
                            _ => c,
                        });
                    }
                }
                samples.extend(best);
            }
            if samples.is_empty() {
                ensure(store.get(key).is_none(), || format!("case {case}: `{key}` kept without samples"))?;
                continue;
            }
            samples.sort_by(f64::total_cmp);
            let n = samples.len();
            let median = if n % 2 == 1 {
                samples[n / 2]
            } else {
                (samples[n / 2 - 1] + samples[n / 2]) / 2.0
            };
            let got = store.get(key).ok_or_else(|| format!("case {case}: `{key}` missing"))?;
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure(bits(&got.samples) == bits(&samples), || {
                format!("case {case}: `{key}` samples {:?} vs {:?}", got.samples, samples)
            })?;
            ensure(got.mmcs.to_bits() == median.to_bits(), || {
                format!("case {case}: `{key}` median {} vs {median}", got.mmcs)
            })?;
            medians.push(median);
            expected_tags += 1;
            tags_checked += 1;
        }
        ensure(store.len() == expected_tags, || {
            format!("case {case}: {} tags stored, {expected_tags} expected", store.len())
        })?;
        medians.sort_by(f64::total_cmp);
        let m = medians.len();
        let default = match m {
            0 => None,
            _ if m % 2 == 1 => Some(medians[m / 2]),
            _ => Some((medians[m / 2 - 1] + medians[m / 2]) / 2.0),
        };
        ensure(store.default_mmcs().map(f64::to_bits) == default.map(f64::to_bits), || {
            format!("case {case}: median of medians {:?} vs {default:?}", store.default_mmcs())
        })?;
    }
    Ok(format!("40 corpora, {tags_checked} tag statistics bitwise equal"))
}

// ---------------------------------------------------------------------------
// A4

fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
        .fold(0.0, f64::max)
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize, discrete: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if discrete {
                rng.gen_range(0..8) as f64 / 8.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect()
}

fn a4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for pair in 0..200 {
        let tags = if pair % 2 == 0 { 1 } else { 2 };
        let discrete = pair % 3 == 0;
        let pool_size = rng.gen_range(1..30);
        let mut ctx_tags = Vec::new();
        let mut expected = 0.0;
        let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
        for t in 0..tags {
            let n = rng.gen_range(1..30);
            let mut train = draw_sample(&mut rng, n, discrete);
            train.sort_by(f64::total_cmp);
            let column: Vec<Option<f64>> = (0..pool_size)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        None
                    } else {
                        Some(draw_sample(&mut rng, 1, discrete)[0])
                    }
                })
                .collect();
            let generated: Vec<f64> = column.iter().map(|v| v.unwrap_or(0.0)).collect();
            expected += brute_ks(&train, &generated);
            columns.push(column);
            ctx_tags.push(ContextTag {
                embedding: TagEmbedding {
                    tag: format!("t{t}"),
                    vector: vec![1.0],
                    covered_tokens: 1,
                },
                target: 0.5,
                samples: Some(train),
            });
        }
        expected /= tags as f64;
        let ctx = PenaltyContext::from_tags(ctx_tags);
        let pool: Vec<Hypothesis> = (0..pool_size)
            .map(|i| Hypothesis {
                tokens: vec![],
                raw_nll: 0.0,
                finished: false,
                combined_score: 0.0,
                tag_mcs: columns.iter().map(|c| c[i]).collect(),
            })
            .collect();
        let got = histogram_divergence(&ctx, &pool);
        let diff = (got - expected).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("pair {pair}: {got} vs brute force {expected}"))?;
    }
    Ok(format!("200 sample pairs, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// A5

struct SeedResult {
    gaps: [f64; 4],
    gold: f64,
    noisy: f64,
    spread: f64,
}

fn gap_of(fx: &Fixture, records: &[dmmcs_core::DecodeRecord]) -> f64 {
    let items: Vec<(Vec<String>, Vec<String>)> = records
        .iter()
        .map(|r| (r.tokens.clone(), fx.corpus.get(&r.id).unwrap().tags.clone()))
        .collect();
    tag_expression_gap(&items, &fx.store, &fx.table, FallbackPolicy::MedianOfMedians).unwrap()
}

fn a5() -> Check {
    let alphas = [0.0, 0.4, 0.6, 0.8];
    let mut results = Vec::new();
    for seed in 0..10u64 {
        let s = synth::generate(&SynthConfig {
            tags: 8,
            train: 500,
            val: 0,
            test: 100,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let paraphrase: Vec<f64> = s
            .planted
            .iter()
            .filter_map(|p| match p.explicitness {
                Explicitness::Paraphrase(c) => Some(c),
                _ => None,
            })
            .collect();
        let lo = paraphrase.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = paraphrase.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ensure(lo <= 0.3 && hi >= 0.95, || format!("planted levels span only [{lo}, {hi}]"))?;

        let fx = Fixture {
            store: build_stats(&s.corpus, &s.table).map_err(|e| e.to_string())?,
            model: train_ngram(&s.corpus, 2, 0.1).map_err(|e| e.to_string())?,
            tags: s.planted.iter().map(|p| p.tag.clone()).collect(),
            corpus: s.corpus,
            table: s.table,
        };
        let mmcs: Vec<f64> = fx.store.tags().map(|t| t.mmcs).collect();
        let spread = mmcs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - mmcs.iter().cloned().fold(f64::INFINITY, f64::min);

        let gold = synth::requests(&fx.corpus, Split::Test, None, &fx.tags, seed);
        let noisy = synth::requests(&fx.corpus, Split::Test, Some((0.2, 0.2)), &fx.tags, seed);
        let run = |alpha: f64, reqs| -> Result<f64, String> {
            let c = cfg(Method::Dmmcs, 4, 16, alpha);
            let recs = decode_requests(&fx.model, &c, reqs, Some(&fx.store), Some(&fx.table))
                .map_err(|e| e.to_string())?;
            Ok(gap_of(&fx, &recs))
        };
        let mut gaps = [0.0; 4];
        for (g, &a) in gaps.iter_mut().zip(&alphas) {
            *g = run(a, &gold)?;
        }
        results.push(SeedResult {
            gaps,
            gold: gaps[2],
            noisy: run(0.6, &noisy)?,
            spread,
        });
    }
    let interior = results
        .iter()
        .filter(|r| r.gaps[1..].iter().all(|&g| g < r.gaps[0]))
        .count();
    let robust = results.iter().filter(|r| r.gold <= r.noisy).count();
    let min_spread = results.iter().map(|r| r.spread).fold(f64::INFINITY, f64::min);
    let mean = |i: usize| results.iter().map(|r| r.gaps[i]).sum::<f64>() / results.len() as f64;
    let detail = format!(
        "gap lower at alpha 0.4/0.6/0.8 on {interior}/10 seeds (mean gap {:.3} -> {:.3}/{:.3}/{:.3}); \
         gold <= noisy on {robust}/10; min mmcs spread {min_spread:.2}",
        mean(0),
        mean(1),
        mean(2),
        mean(3)
    );
    ensure(interior >= 8 && robust >= 8 && min_spread >= 0.3, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// A6

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn a6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let pool = ["a", "b", "c", "d", "e", "f"];
    let (mut satisfied, mut flagged_infeasible, mut unsatisfied) = (0, 0, 0);
    for inst in 0..100 {
        let examples: Vec<Example> = (0..rng.gen_range(3..10))
            .map(|i| Example {
                id: format!("x{i}"),
                tags: vec![],
                caption: (0..rng.gen_range(2..7))
                    .map(|_| pool[rng.gen_range(0..pool.len())])
                    .collect::<Vec<_>>()
                    .join(" "),
                group: None,
                split: Split::Train,
            })
            .collect();
        let corpus = Corpus::new(examples).unwrap();
        let model = train_ngram(&corpus, 2, 0.5).map_err(|e| e.to_string())?;
        let vocab = model.vocab();

        let n_tags = rng.gen_range(1..=3);
        let tags: Vec<String> = (0..n_tags)
            .map(|_| {
                if rng.gen_bool(0.15) {
                    "zzz".to_string()
                } else {
                    (0..rng.gen_range(1..=2))
                        .map(|_| pool[rng.gen_range(0..pool.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                }
            })
            .collect();
        let phrases: Vec<Vec<String>> = tags.iter().map(|t| tokenize(t).0).collect();
        let in_vocab = |p: &Vec<String>| p.iter().all(|w| vocab.id(w).is_some());

        let method = if inst % 2 == 0 { Method::ConstrainedAll } else { Method::ConstrainedAny };
        let c = cfg(method, rng.gen_range(1..=6), rng.gen_range(4..=8), 0.5);
        let out: DecodeOutput = decode(&model, &c, &tags, None, None)
            .map_err(|e| format!("instance {inst}: decode failed: {e}"))?;
        let toks = &out.tokens;
        let truth = match method {
            Method::ConstrainedAll => phrases.iter().all(|p| contains_phrase(toks, p)),
            _ => phrases.iter().any(|p| contains_phrase(toks, p)),
        };
        ensure(out.constraints_satisfied == truth, || {
            format!(
                "instance {inst} ({method}, tags {tags:?}): flagged {} but output {toks:?}",
                out.constraints_satisfied
            )
        })?;
        let infeasible = match method {
            Method::ConstrainedAll => !phrases.iter().all(in_vocab),
            _ => !phrases.iter().any(in_vocab),
        };
        if infeasible {
            ensure(!out.constraints_satisfied, || format!("instance {inst}: infeasible but flagged satisfied"))?;
            flagged_infeasible += 1;
        } else if out.constraints_satisfied {
            satisfied += 1;
        } else {
            unsatisfied += 1;
        }
    }
    ensure(flagged_infeasible > 0, || "no infeasible instance was generated".into())?;
    Ok(format!(
        "100 instances: {satisfied} satisfied, {unsatisfied} feasible but unmet (flagged), \
         {flagged_infeasible} infeasible (flagged); every flag verified"
    ))
}

// ---------------------------------------------------------------------------
// A7

fn a7() -> Check {
    use Label::{Negative as N, Present as P};
    let m = |rows: Vec<Vec<Label>>| LabelMatrix::new(vec!["c0".into(), "c1".into()], rows).unwrap();
    let reference = m(vec![vec![P, N], vec![N, P]]);
    let cases = [
        (m(vec![vec![P, N], vec![N, P]]), 1.0),
        (m(vec![vec![N, P], vec![P, N]]), 0.0),
        (m(vec![vec![P, N], vec![N, N]]), 0.75),
    ];
    for (pred, want) in &cases {
        let got = clinical_accuracy(&reference, pred).map_err(|e| e.to_string())?;
        ensure(got == *want, || format!("clinical accuracy {got}, expected {want}"))?;
    }
    let x = vec![tokenize("small left effusion"), tokenize("no acute findings in the chest")];
    let self_bleu = bleu(&x, &x, 4).map_err(|e| e.to_string())?;
    ensure(self_bleu == 100.0, || format!("bleu(x, x) = {self_bleu}"))?;

    // hypothesis "a b c d e" against reference "a b c d": clipped precisions
    // 4/5, 3/4, 2/3, 1/2 and no brevity penalty
    let expected = 100.0 * (4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0f64).powf(0.25);
    let got = bleu(&[tokenize("a b c d")], &[tokenize("a b c d e")], 4).map_err(|e| e.to_string())?;
    ensure((got - expected).abs() <= 1e-9, || format!("hand BLEU {got} vs {expected}"))?;
    Ok(format!("CA {{1.0, 0.0, 0.75}}, bleu(x,x) = 100, hand BLEU {got:.9}"))
}

// ---------------------------------------------------------------------------
// A8 and A9

fn dmmcs(dir: &Path, args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dmmcs"))
        .args(args)
        .current_dir(dir)
        .env_remove("DMMCS_LOG")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`dmmcs {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

const GUIDED: [&str; 4] = ["--stats", "stats.json", "--embeddings", "syn/embeddings.txt"];

fn a8_commands() -> Vec<Vec<&'static str>> {
    let mut cmds: Vec<Vec<&str>> = vec![
        vec!["gen-synth", "--tags", "8", "--examples", "200", "--seed", "11", "--out", "syn"],
        vec!["gen-synth", "--tags", "5", "--examples", "120", "--seed", "12", "--out", "syn2"],
        vec!["split", "--corpus", "syn/corpus.jsonl", "--seed", "3", "--out", "split.jsonl"],
        vec!["train-lm", "--corpus", "syn/corpus.jsonl", "--out", "lm.json"],
        vec!["build-stats", "--corpus", "syn/corpus.jsonl", "--embeddings", "syn/embeddings.txt", "--out", "stats.json"],
        vec!["decode", "--model", "lm.json", "--requests", "syn/requests-test.jsonl", "--method", "standard", "--out", "std.jsonl"],
    ];
    let guided: [&[&str]; 3] = [
        &["--method", "dmmcs", "--alpha", "0.6", "--out", "dm.jsonl"],
        &["--method", "dmmcs-hd", "--alpha", "0.6", "--beam", "3", "--out", "hd.jsonl"],
        &["--method", "constrained-any", "--out", "cany.jsonl"],
    ];
    for extra in guided {
        let mut c = vec!["decode", "--model", "lm.json", "--requests", "syn/requests-test-noisy.jsonl"];
        c.extend(GUIDED);
        c.extend(extra);
        cmds.push(c);
    }
    let mut ev = vec![
        "evaluate", "--corpus", "syn/corpus.jsonl", "--hyps", "dm.jsonl", "--metric", "bleu,ca,gap,perplexity",
        "--model", "lm.json", "--groups", "--subsets", "3", "--seed", "7", "--order", "--out", "eval.json",
    ];
    ev.extend(GUIDED);
    cmds.push(ev);
    let mut tune = vec![
        "tune-alpha", "--model", "lm.json", "--corpus", "syn/corpus.jsonl", "--grid", "0.2,0.5,0.8", "--metric",
        "gap", "--out", "tune.json",
    ];
    tune.extend(GUIDED);
    cmds.push(tune);
    cmds.push(vec!["report", "--stats", "stats.json", "--out", "report.json"]);
    cmds
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn a8() -> Check {
    let cmds = a8_commands();
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for run in &runs {
        for c in &cmds {
            dmmcs(run.path(), c)?;
        }
    }
    let (a, b) = (tree(runs[0].path()), tree(runs[1].path()));
    ensure(a.len() == b.len(), || format!("{} vs {} files", a.len(), b.len()))?;
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        ensure(pa == pb && da == db, || format!("{} differs between reruns", pa.display()))?;
    }
    Ok(format!(
        "{} command/seed combinations rerun, {} output files byte-identical",
        cmds.len(),
        a.len()
    ))
}

fn a9() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dmmcs(d, &["gen-synth", "--tags", "8", "--examples", "500", "--seed", "0", "--out", "syn"])?;
    dmmcs(d, &["train-lm", "--corpus", "syn/corpus.jsonl", "--out", "lm.json"])?;
    dmmcs(d, &["build-stats", "--corpus", "syn/corpus.jsonl", "--embeddings", "syn/embeddings.txt", "--out", "stats.json"])?;
    let mut c = vec!["decode", "--model", "lm.json", "--requests", "syn/requests-test.jsonl", "--method", "dmmcs"];
    c.extend(GUIDED);
    c.extend(["--out", "dm.jsonl", "--timing"]);
    let out = dmmcs(d, &c)?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.contains("overhead ratio"))
        .ok_or_else(|| format!("no overhead line in stderr: {stderr}"))?
        .to_string();
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("dm.jsonl.manifest.json")).unwrap()).map_err(|e| e.to_string())?;
    let t = &manifest["timings_ms"];
    for key in ["load", "decode", "decode_standard", "overhead_ratio"] {
        ensure(t[key].is_number(), || format!("manifest timings lack `{key}`"))?;
    }
    Ok(format!("{} (ratio {:.3} in manifest)", line.trim(), t["overhead_ratio"].as_f64().unwrap()))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 9] = [
        ("A1", "alpha=0 equivalence", Some(30), a1),
        ("A2", "exhaustive oracle", Some(60), a2),
        ("A3", "statistics oracle", Some(10), a3),
        ("A4", "KS oracle", Some(10), a4),
        ("A5", "directional mechanism", Some(300), a5),
        ("A6", "constraint guarantees", Some(60), a6),
        ("A7", "metric formulas", None, a7),
        ("A8", "determinism", None, a8),
        ("A9", "overhead report", None, a9),
    ];
    println!("running {} acceptance criteria", criteria.len());
    let mut failed = 0;
    for (id, title, limit, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > Duration::from_secs(l) => {
                Err(format!("took {:.1} s, limit {l} s", elapsed.as_secs_f64()))
            }
            (r, _) => r,
        };
        let limit = limit.map(|l| format!(", limit {l} s")).unwrap_or_default();
        match result {
            Ok(detail) => println!(
                "{id} PASS {title}: {detail} ({:.2} s{limit})",
                elapsed.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "{id} FAIL {title}: {detail} ({:.2} s{limit})",
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria passed", criteria.len());
}
