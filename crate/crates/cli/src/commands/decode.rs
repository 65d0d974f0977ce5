use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dmmcs_core::embeddings::EmbeddingTable;
use dmmcs_core::eval::{default_grid, evaluate as run_eval, tune_alpha as run_tune, EvalOptions, Metric, Resources, RuleSet};
use dmmcs_core::pipeline::{decode_requests, eval_items, read_jsonl, write_jsonl};
use dmmcs_core::{DecodeRequest, DecodingConfig, FallbackPolicy, Method, NGramModel, Split, StatsStore};
use log::{info, warn};
use serde::Serialize;

use super::{parse_list, pretty_json, read_corpus, read_embeddings, read_model, read_stats};
use crate::manifest::{write_atomic, RunManifest, Timings};

struct Engine {
    model: NGramModel,
    store: Option<StatsStore>,
    table: Option<EmbeddingTable>,
}

fn load_engine(
    manifest: &mut RunManifest,
    model: &Path,
    stats: Option<&PathBuf>,
    embeddings: Option<&PathBuf>,
    method: Method,
) -> Result<Engine> {
    if method.is_guided() && (stats.is_none() || embeddings.is_none()) {
        bail!("--method {method} requires --stats and --embeddings");
    }
    manifest.input("model", model)?;
    let model = read_model(model)?;
    let store = match stats {
        Some(p) => {
            manifest.input("stats", p)?;
            Some(read_stats(p)?)
        }
        None => None,
    };
    let table = match embeddings {
        Some(p) => {
            manifest.input("embeddings", p)?;
            Some(read_embeddings(p)?)
        }
        None => None,
    };
    if let (Some(s), Some(t)) = (&store, &table) {
        if s.embedding_dim() != t.dim() {
            bail!(
                "statistics were built with {}-dimensional embeddings but the table has {}",
                s.embedding_dim(),
                t.dim()
            );
        }
    }
    Ok(Engine { model, store, table })
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// JSON-lines file of `{"id", "tags"}` requests
    #[arg(long)]
    pub requests: Option<PathBuf>,
    /// Decode the gold tags of a corpus split instead of a request file
    #[arg(long, conflicts_with = "requests")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Comma-separated tags for a single request
    #[arg(long, conflicts_with_all = ["requests", "corpus"])]
    pub tags: Option<String>,
    #[arg(long, default_value = "standard")]
    pub method: Method,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Target for tags without statistics: median-of-medians or skip-tag
    #[arg(long, default_value = "median-of-medians")]
    pub fallback: FallbackPolicy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON-lines file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record per-phase times and compare against standard beam search
    #[arg(long)]
    pub timing: bool,
}

impl DecodeArgs {
    fn config(&self) -> DecodingConfig {
        DecodingConfig {
            method: self.method,
            beam_width: self.beam,
            max_len: self.max_len,
            alpha: self.alpha,
            fallback_mmcs_policy: self.fallback,
        }
    }
}

pub fn decode(args: &DecodeArgs) -> Result<()> {
    let cfg = args.config();
    cfg.validate()?;
    let mut manifest = RunManifest::new("decode", args, Some(args.seed))?;
    let mut timings = Timings::new(args.timing);

    let engine = timings.time("load", || {
        load_engine(
            &mut manifest,
            &args.model,
            args.stats.as_ref(),
            args.embeddings.as_ref(),
            args.method,
        )
    })?;
    let requests: Vec<DecodeRequest> = if let Some(p) = &args.requests {
        manifest.input("requests", p)?;
        read_jsonl(p).with_context(|| format!("loading requests {}", p.display()))?
    } else if let Some(p) = &args.corpus {
        manifest.input("corpus", p)?;
        read_corpus(p)?
            .split(args.split)
            .map(|e| DecodeRequest {
                id: e.id.clone(),
                tags: e.tags.clone(),
                gold_caption: Some(e.caption.clone()),
            })
            .collect()
    } else if let Some(tags) = &args.tags {
        vec![DecodeRequest {
            id: "0".into(),
            tags: parse_list(tags)?,
            gold_caption: None,
        }]
    } else {
        bail!("one of --requests, --corpus or --tags is required");
    };
    if requests.is_empty() {
        bail!("no requests to decode");
    }

    let store = engine.store.as_ref();
    let table = engine.table.as_ref();
    let records = timings
        .time("decode", || decode_requests(&engine.model, &cfg, &requests, store, table))
        .context("decoding")?;

    if args.timing && args.method != Method::Standard {
        let baseline = DecodingConfig {
            method: Method::Standard,
            ..cfg.clone()
        };
        timings.time("decode_standard", || decode_requests(&engine.model, &baseline, &requests, None, None))?;
        let (ours, base) = (timings.get("decode").unwrap(), timings.get("decode_standard").unwrap());
        let ratio = ours / base.max(1e-9);
        timings.set("overhead_ratio", ratio);
        info!("{} overhead vs standard: ratio {ratio:.3}", args.method);
        eprintln!(
            "timing: {} {ours:.1} ms, standard {base:.1} ms, overhead ratio {ratio:.3} ({:+.1}%)",
            args.method,
            (ratio - 1.0) * 100.0
        );
    }

    let unsatisfied = records.iter().filter(|r| !r.constraints_satisfied).count();
    if unsatisfied > 0 {
        warn!("{unsatisfied} of {} outputs do not satisfy their constraints", records.len());
    }

    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &records)?;
    match &args.out {
        Some(out) => {
            write_atomic(out, &bytes)?;
            manifest.output(out);
            manifest.timings_ms = timings.into_map();
            manifest.write(out)?;
            println!("decoded {} requests with {}", records.len(), args.method);
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct TuneAlphaArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Corpus holding the reference captions
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// Request file overriding the tags of the split (ids must exist in the corpus)
    #[arg(long)]
    pub requests: Option<PathBuf>,
    #[arg(long, default_value = "dmmcs")]
    pub method: Method,
    #[arg(long, default_value = "bleu")]
    pub metric: Metric,
    /// Comma-separated alpha values; 0.05 to 0.95 in steps of 0.05 by default
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value = "median-of-medians")]
    pub fallback: FallbackPolicy,
    /// Clinical labeler rules for the ca metric
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TuneOutput {
    metric: Metric,
    method: Method,
    best_alpha: f64,
    best_score: f64,
    higher_is_better: bool,
    curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct CurvePoint {
    alpha: f64,
    score: f64,
}

pub fn tune_alpha(args: &TuneAlphaArgs) -> Result<()> {
    if !args.method.is_guided() {
        bail!("--method must be dmmcs or dmmcs-hd to tune alpha");
    }
    let grid = match &args.grid {
        Some(g) => parse_list::<f64>(g)?,
        None => default_grid(),
    };
    let mut manifest = RunManifest::new("tune-alpha", args, Some(args.seed))?;
    let engine = load_engine(
        &mut manifest,
        &args.model,
        Some(&args.stats),
        Some(&args.embeddings),
        args.method,
    )?;
    manifest.input("corpus", &args.corpus)?;
    let corpus = read_corpus(&args.corpus)?;
    let requests: Vec<DecodeRequest> = match &args.requests {
        Some(p) => {
            manifest.input("requests", p)?;
            read_jsonl(p).with_context(|| format!("loading requests {}", p.display()))?
        }
        None => corpus
            .split(args.split)
            .map(|e| DecodeRequest {
                id: e.id.clone(),
                tags: e.tags.clone(),
                gold_caption: None,
            })
            .collect(),
    };
    if requests.is_empty() {
        bail!("no {} examples to tune on", args.split);
    }
    let rules = match &args.rules {
        Some(p) => {
            manifest.input("rules", p)?;
            RuleSet::load(p)?
        }
        None => RuleSet::demo(),
    };
    let res = Resources {
        rules: Some(&rules),
        label_seed: args.seed,
        store: engine.store.as_ref(),
        table: engine.table.as_ref(),
        policy: args.fallback,
        model: Some(&engine.model),
        ..Default::default()
    };

    let result = run_tune(&grid, args.metric.higher_is_better(), |alpha| {
        let cfg = DecodingConfig {
            method: args.method,
            beam_width: args.beam,
            max_len: args.max_len,
            alpha,
            fallback_mmcs_policy: args.fallback,
        };
        let records = decode_requests(&engine.model, &cfg, &requests, res.store, res.table)?;
        let items = eval_items(&corpus, &records)?;
        let report = run_eval(&items, &[args.metric], &res, &EvalOptions::default())?;
        let score = report.corpus[&args.metric];
        info!("alpha {alpha:.2}: {} {score:.6}", args.metric);
        Ok(score)
    })?;

    println!("{:>6} {:>12}", "alpha", args.metric.as_str());
    for (a, s) in &result.curve {
        println!("{a:>6.2} {s:>12.6}");
    }
    println!("best alpha {:.2} ({} {:.6})", result.best_alpha, args.metric, result.best_score);

    if let Some(out) = &args.out {
        let output = TuneOutput {
            metric: args.metric,
            method: args.method,
            best_alpha: result.best_alpha,
            best_score: result.best_score,
            higher_is_better: result.higher_is_better,
            curve: result
                .curve
                .iter()
                .map(|&(alpha, score)| CurvePoint { alpha, score })
                .collect(),
        };
        write_atomic(out, &pretty_json(&output)?)?;
        manifest.output(out);
        manifest.write(out)?;
    }
    Ok(())
}
