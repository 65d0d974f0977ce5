//! Benchmark fixtures.

use dmmcs_core::synth::{self, SynthConfig, SynthCorpus};
use dmmcs_core::{build_stats, train_ngram, DecodeRequest, NGramModel, Split, StatsStore};

pub struct Fixture {
    pub synth: SynthCorpus,
    pub model: NGramModel,
    pub store: StatsStore,
    pub requests: Vec<DecodeRequest>,
}

/// Synthetic corpus of `examples` captions over `tags` tags, with a bigram
/// model and statistics learned from its training split.
pub fn fixture(tags: usize, examples: usize, seed: u64) -> Fixture {
    let cfg = SynthConfig {
        tags,
        seed,
        ..SynthConfig::with_total(examples)
    };
    let synth = synth::generate(&cfg).expect("synthetic corpus");
    let model = train_ngram(&synth.corpus, 2, 0.1).expect("language model");
    let store = build_stats(&synth.corpus, &synth.table).expect("statistics");
    let vocabulary: Vec<String> = synth.planted.iter().map(|p| p.tag.clone()).collect();
    let requests = synth::requests(&synth.corpus, Split::Test, None, &vocabulary, seed);
    Fixture {
        synth,
        model,
        store,
        requests,
    }
}
