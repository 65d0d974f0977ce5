use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dmmcs_core::stats::build_stats_with_summary;
use dmmcs_core::StatsStore;
use serde::Serialize;

use super::{pretty_json, read_corpus, read_embeddings, read_stats};
use crate::manifest::{write_atomic, RunManifest, Timings};

#[derive(Debug, Args, Serialize)]
pub struct BuildStatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Record per-phase wall-clock times in the manifest
    #[arg(long)]
    pub timing: bool,
}

pub fn build_stats(args: &BuildStatsArgs) -> Result<()> {
    let mut timings = Timings::new(args.timing);
    let (corpus, table) = timings.time("load", || -> Result<_> {
        Ok((read_corpus(&args.corpus)?, read_embeddings(&args.embeddings)?))
    })?;
    let (store, summary) = timings
        .time("build", || build_stats_with_summary(&corpus, &table))
        .context("building statistics")?;

    let text = store.to_json()?;
    StatsStore::from_json(&text).context("statistics failed validation")?;
    write_atomic(&args.out, text.as_bytes())?;

    let mut manifest = RunManifest::new("build-stats", args, None)?;
    manifest.input("corpus", &args.corpus)?;
    manifest.input("embeddings", &args.embeddings)?;
    manifest.output(&args.out);
    manifest.timings_ms = timings.into_map();
    manifest.write(&args.out)?;

    println!(
        "{} training captions, {} of {} tags kept",
        summary.train_examples, summary.tags_kept, summary.tags_seen
    );
    if !summary.uncoverable_tags.is_empty() {
        println!("skipped (no tag word in embeddings): {}", summary.uncoverable_tags.join(", "));
    }
    if !summary.tags_without_usable_captions.is_empty() {
        println!(
            "skipped (no caption with embedded tokens): {}",
            summary.tags_without_usable_captions.join(", ")
        );
    }
    if let Some(d) = store.default_mmcs() {
        println!("median of medians {d:.4}");
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub stats: PathBuf,
    /// Also write the table as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Row<'a> {
    tag: &'a str,
    support: usize,
    q1: f64,
    mmcs: f64,
    q3: f64,
}

/// Per-tag quartiles of the MCS distributions.
pub fn report(args: &ReportArgs) -> Result<()> {
    let store = read_stats(&args.stats)?;
    let rows: Vec<Row> = store
        .tags()
        .map(|t| {
            let (q1, _, q3) = t.quartiles();
            Row {
                tag: &t.tag,
                support: t.support,
                q1,
                mmcs: t.mmcs,
                q3,
            }
        })
        .collect();
    println!("{:<28} {:>7} {:>7} {:>7} {:>7}", "tag", "support", "q1", "mmcs", "q3");
    for r in &rows {
        println!(
            "{:<28} {:>7} {:>7.4} {:>7.4} {:>7.4}",
            r.tag, r.support, r.q1, r.mmcs, r.q3
        );
    }
    if let Some(out) = &args.out {
        write_atomic(out, &pretty_json(&rows)?)?;
        let mut manifest = RunManifest::new("report", args, None)?;
        manifest.input("stats", &args.stats)?;
        manifest.output(out);
        manifest.write(out)?;
    }
    Ok(())
}
