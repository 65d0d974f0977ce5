//! Tagged caption corpora: loading, tokenization and split views.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

/// One image's gold tags and caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tags: Vec<String>,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Train
}

impl Example {
    pub fn tokens(&self) -> TokenSeq {
        tokenize(&self.caption)
    }

    fn dedup_tags(&mut self) {
        let mut seen = HashSet::new();
        self.tags.retain(|t| seen.insert(t.clone()));
    }
}

/// A tokenized caption. Never contains engine control markers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(tokens: Vec<String>) -> Self {
        TokenSeq(tokens)
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

fn is_edge_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…')
}

/// Lowercase, split on whitespace and strip punctuation from both ends of
/// every token. Internal punctuation such as hyphens is kept.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split_whitespace()
            .map(|raw| raw.trim_matches(is_edge_punct).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

/// Canonical lookup key for a tag: its tokens joined by single spaces.
pub fn tag_key(tag: &str) -> String {
    tokenize(tag).join()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    JsonLines,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json-lines" | "jsonlines" => Ok(CorpusFormat::JsonLines),
            other => Err(Error::InvalidConfig(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    examples: Vec<Example>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and deduplicating tags.
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(examples.len());
        for (i, mut ex) in examples.into_iter().enumerate() {
            if !seen.insert(ex.id.clone()) {
                return Err(Error::DuplicateId { id: ex.id, line: i + 1 });
            }
            ex.dedup_tags();
            out.push(ex);
        }
        Ok(Corpus { examples: out })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> + '_ {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn train(&self) -> impl Iterator<Item = &Example> + '_ {
        self.split(Split::Train)
    }

    pub fn val(&self) -> impl Iterator<Item = &Example> + '_ {
        self.split(Split::Val)
    }

    pub fn test(&self) -> impl Iterator<Item = &Example> + '_ {
        self.split(Split::Test)
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// Reassigns splits by shuffling with `seed` and cutting at the given
    /// train and val fractions; the remainder becomes test.
    pub fn resplit(&self, seed: u64, train_frac: f64, val_frac: f64) -> Corpus {
        let n = self.examples.len();
        let n_train = (n as f64 * train_frac).floor() as usize;
        let n_val = ((n as f64 * val_frac).floor() as usize).min(n - n_train);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut examples = self.examples.clone();
        for (rank, &idx) in order.iter().enumerate() {
            examples[idx].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Corpus { examples }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    tags: Vec<String>,
    caption: String,
    #[serde(default)]
    group: Option<String>,
    #[serde(default)]
    split: Option<Split>,
}

/// Parses a JSON-lines corpus. Blank lines are ignored.
pub fn parse_corpus<R: BufRead>(reader: R, origin: &Path) -> Result<Corpus> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId { id: raw.id, line: lineno });
        }
        let mut ex = Example {
            id: raw.id,
            tags: raw.tags,
            caption: raw.caption,
            group: raw.group,
            split: raw.split.unwrap_or(Split::Train),
        };
        ex.dedup_tags();
        examples.push(ex);
    }
    Ok(Corpus { examples })
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::JsonLines => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            parse_corpus(BufReader::new(file), path)
        }
    }
}
