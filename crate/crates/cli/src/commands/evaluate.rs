use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use dmmcs_core::eval::{evaluate as run_eval, EvalOptions, Metric, Resources, RuleSet};
use dmmcs_core::pipeline::{eval_items, read_jsonl};
use dmmcs_core::{DecodeRecord, FallbackPolicy, SequenceModel};
use log::warn;
use serde::Serialize;

use super::{pretty_json, read_corpus, read_embeddings, read_model, read_stats};
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Corpus holding the reference captions and gold tags
    #[arg(long)]
    pub corpus: PathBuf,
    /// Decode output (JSON lines) to score
    #[arg(long)]
    pub hyps: PathBuf,
    /// Comma-separated metrics: bleu, ca, gap, perplexity
    #[arg(long, value_delimiter = ',', default_value = "bleu")]
    pub metric: Vec<Metric>,
    /// Also report per-group results
    #[arg(long)]
    pub groups: bool,
    /// Number of disjoint random test subsets for mean and deviation
    #[arg(long, default_value_t = 0)]
    pub subsets: usize,
    /// Seeds subset sampling and unsure clinical labels
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clinical labeler rules; the bundled demo rules when omitted
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "median-of-medians")]
    pub fallback: FallbackPolicy,
    /// Score sentences position by position for captions of equal sentence count
    #[arg(long)]
    pub order: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.metric.is_empty() {
        bail!("at least one --metric is required");
    }
    let mut manifest = RunManifest::new("evaluate", args, Some(args.seed))?;
    manifest.input("corpus", &args.corpus)?;
    manifest.input("hyps", &args.hyps)?;
    let corpus = read_corpus(&args.corpus)?;
    let records: Vec<DecodeRecord> =
        read_jsonl(&args.hyps).with_context(|| format!("loading hypotheses {}", args.hyps.display()))?;
    let items = eval_items(&corpus, &records)?;

    let rules = if args.metric.contains(&Metric::Ca) {
        Some(match &args.rules {
            Some(p) => {
                manifest.input("rules", p)?;
                RuleSet::load(p)?
            }
            None => {
                warn!("no --rules given; using the bundled demo rules");
                RuleSet::demo()
            }
        })
    } else {
        None
    };
    let store = match &args.stats {
        Some(p) => {
            manifest.input("stats", p)?;
            Some(read_stats(p)?)
        }
        None => None,
    };
    let table = match &args.embeddings {
        Some(p) => {
            manifest.input("embeddings", p)?;
            Some(read_embeddings(p)?)
        }
        None => None,
    };
    let model = match &args.model {
        Some(p) => {
            manifest.input("model", p)?;
            Some(read_model(p)?)
        }
        None => None,
    };

    let res = Resources {
        rules: rules.as_ref(),
        label_seed: args.seed,
        store: store.as_ref(),
        table: table.as_ref(),
        policy: args.fallback,
        model: model.as_ref().map(|m| m as &dyn SequenceModel),
        ..Default::default()
    };
    let opts = EvalOptions {
        subsets: args.subsets,
        seed: args.seed,
        groups: args.groups,
        sentence_order: args.order,
    };
    let report = run_eval(&items, &args.metric, &res, &opts)?;

    println!("{} captions", items.len());
    for m in &args.metric {
        let agg = report.aggregate[m];
        print!(
            "{:<11} corpus {:.4}  mean {:.4}  std {:.4}",
            m.as_str(),
            report.corpus[m],
            agg.mean,
            agg.std
        );
        if let Some(sub) = report.subsets.as_ref().and_then(|s| s.get(m)) {
            print!("  subsets {:.4} +/- {:.4}", sub.mean, sub.std);
        }
        println!();
    }
    if let Some(groups) = &report.groups {
        for (g, r) in groups {
            let vals: Vec<String> = args
                .metric
                .iter()
                .map(|m| format!("{m} {:.4}", r.corpus[m]))
                .collect();
            println!("  {g:<12} n={:<5} {}", r.count, vals.join("  "));
        }
    }
    if let Some(order) = &report.sentence_order {
        println!(
            "sentence order: {} pairs used, {} skipped",
            order.pairs_used, order.pairs_skipped
        );
    }

    if let Some(out) = &args.out {
        write_atomic(out, &pretty_json(&report)?)?;
        manifest.output(out);
        manifest.write(out)?;
    }
    Ok(())
}
