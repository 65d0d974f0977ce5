use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use dmmcs_core::pipeline::write_jsonl;
use dmmcs_core::synth::{self, SynthConfig};
use dmmcs_core::{train_ngram, SequenceModel, Split};
use serde::Serialize;

use super::{pretty_json, read_corpus};
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// Number of tags to plant
    #[arg(long, default_value_t = 8)]
    pub tags: usize,
    /// Total examples, split 75/10/15 into train/val/test
    #[arg(long, default_value_t = 500)]
    pub examples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chance that a caption leaves one of its tags unexpressed
    #[arg(long, default_value_t = 0.15)]
    pub omit_rate: f64,
    /// Per-tag drop probability for the noisy request files
    #[arg(long, default_value_t = 0.2)]
    pub drop_rate: f64,
    /// Per-tag probability of adding a spurious tag in the noisy request files
    #[arg(long, default_value_t = 0.2)]
    pub add_rate: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_synth(args: &GenSynthArgs) -> Result<()> {
    if args.examples < 4 {
        bail!("--examples must be at least 4");
    }
    for (name, rate) in [("--drop-rate", args.drop_rate), ("--add-rate", args.add_rate)] {
        if !(0.0..=1.0).contains(&rate) {
            bail!("{name} must lie in [0, 1]");
        }
    }
    let cfg = SynthConfig {
        tags: args.tags,
        seed: args.seed,
        omit_rate: args.omit_rate,
        ..SynthConfig::with_total(args.examples)
    };
    let s = synth::generate(&cfg)?;
    std::fs::create_dir_all(&args.out)?;

    let mut manifest = RunManifest::new("gen-synth", args, Some(args.seed))?;
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = args.out.join(name);
        write_atomic(&path, &bytes)?;
        manifest.output(&path);
        Ok(())
    };

    let mut corpus = Vec::new();
    s.corpus.write_jsonl(&mut corpus)?;
    emit("corpus.jsonl", corpus)?;
    let mut table = Vec::new();
    s.table.write_text(&mut table)?;
    emit("embeddings.txt", table)?;
    emit("rules.json", pretty_json(&s.rules)?)?;
    emit("planted.json", pretty_json(&s.planted)?)?;

    let vocabulary: Vec<String> = s.planted.iter().map(|p| p.tag.clone()).collect();
    for (i, split) in [Split::Val, Split::Test].into_iter().enumerate() {
        for (noisy, suffix) in [(false, ""), (true, "-noisy")] {
            let noise = noisy.then_some((args.drop_rate, args.add_rate));
            let seed = args.seed.wrapping_add(1 + i as u64);
            let reqs = synth::requests(&s.corpus, split, noise, &vocabulary, seed);
            let mut bytes = Vec::new();
            write_jsonl(&mut bytes, &reqs)?;
            emit(&format!("requests-{split}{suffix}.jsonl"), bytes)?;
        }
    }
    manifest.write(&args.out)?;

    println!(
        "wrote {} examples ({} train, {} val, {} test) to {}",
        s.corpus.len(),
        cfg.train,
        cfg.val,
        cfg.test,
        args.out.display()
    );
    for p in &s.planted {
        println!("  {:<20} {:?}", p.tag, p.explicitness);
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.75)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.10)]
    pub val_frac: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<()> {
    if args.train_frac < 0.0 || args.val_frac < 0.0 || args.train_frac + args.val_frac > 1.0 {
        bail!("split fractions must be non-negative and sum to at most 1");
    }
    let corpus = read_corpus(&args.corpus)?;
    let resplit = corpus.resplit(args.seed, args.train_frac, args.val_frac);
    let mut bytes = Vec::new();
    resplit.write_jsonl(&mut bytes)?;
    write_atomic(&args.out, &bytes)?;

    let mut manifest = RunManifest::new("split", args, Some(args.seed))?;
    manifest.input("corpus", &args.corpus)?;
    manifest.output(&args.out);
    manifest.write(&args.out)?;
    println!(
        "train {} val {} test {}",
        resplit.train().count(),
        resplit.val().count(),
        resplit.test().count()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// N-gram order
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Add-k smoothing constant
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train_lm(args: &TrainLmArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let model = train_ngram(&corpus, args.order, args.smoothing)?;
    write_atomic(&args.out, model.to_json()?.as_bytes())?;

    let mut manifest = RunManifest::new("train-lm", args, None)?;
    manifest.input("corpus", &args.corpus)?;
    manifest.output(&args.out);
    manifest.write(&args.out)?;
    println!(
        "trained order-{} model over {} tokens",
        model.order(),
        model.vocab().len()
    );
    Ok(())
}
