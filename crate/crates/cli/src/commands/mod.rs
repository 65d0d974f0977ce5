mod data;
mod decode;
mod evaluate;
mod stats;

use std::path::Path;

use anyhow::{Context, Result};
use dmmcs_core::embeddings::EmbeddingTable;
use dmmcs_core::{Corpus, CorpusFormat, NGramModel, StatsStore};
use serde::Serialize;

pub use data::{gen_synth, split, train_lm, GenSynthArgs, SplitArgs, TrainLmArgs};
pub use decode::{decode, tune_alpha, DecodeArgs, TuneAlphaArgs};
pub use evaluate::{evaluate, EvaluateArgs};
pub use stats::{build_stats, report, BuildStatsArgs, ReportArgs};

fn read_corpus(path: &Path) -> Result<Corpus> {
    dmmcs_core::load_corpus(path, CorpusFormat::JsonLines)
        .with_context(|| format!("loading corpus {}", path.display()))
}

fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    dmmcs_core::load_embeddings(path).with_context(|| format!("loading embeddings {}", path.display()))
}

fn read_stats(path: &Path) -> Result<StatsStore> {
    StatsStore::load(path).with_context(|| format!("loading statistics {}", path.display()))
}

fn read_model(path: &Path) -> Result<NGramModel> {
    NGramModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().with_context(|| format!("bad list value `{s}`")))
        .collect()
}
