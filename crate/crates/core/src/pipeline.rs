//! Batch helpers shared by the command-line tool and language bindings.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::{tokenize, Corpus};
use crate::decoding::{decode, DecodeRecord, DecodeRequest, DecodingConfig};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::EvalItem;
use crate::lm::SequenceModel;
use crate::stats::StatsStore;

/// Decodes every request, in parallel, preserving input order.
pub fn decode_requests<M: SequenceModel + ?Sized>(
    model: &M,
    cfg: &DecodingConfig,
    requests: &[DecodeRequest],
    store: Option<&StatsStore>,
    table: Option<&EmbeddingTable>,
) -> Result<Vec<DecodeRecord>> {
    requests
        .par_iter()
        .map(|r| {
            let out = decode(model, cfg, &r.tags, store, table)?;
            Ok(DecodeRecord::new(r.id.clone(), &out))
        })
        .collect()
}

/// Pairs decode records with corpus references by id. Each item carries the
/// gold tags of its reference example.
pub fn eval_items(corpus: &Corpus, records: &[DecodeRecord]) -> Result<Vec<EvalItem>> {
    records
        .iter()
        .map(|r| {
            let ex = corpus.get(&r.id).ok_or_else(|| {
                Error::InvalidConfig(format!("decoded id `{}` is not in the reference corpus", r.id))
            })?;
            Ok(EvalItem {
                id: r.id.clone(),
                group: ex.group.clone(),
                tags: ex.tags.clone(),
                reference: ex.tokens(),
                hypothesis: tokenize(&r.text),
                reference_text: ex.caption.clone(),
                hypothesis_text: r.text.clone(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn save_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, rows)?;
    w.flush().map_err(|e| Error::io(path, e))
}
