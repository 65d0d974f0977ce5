//! Synthetic tagged caption corpora with planted tag explicitness.
//!
//! Every tag owns one embedding axis. A tag is expressed in its captions
//! either verbatim (the tag word itself), through paraphrase tokens whose
//! cosine to the tag is a planted level, or not at all. Filler tokens live on
//! separate axes, so the median MCS of each tag recovers its level.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, Split};
use crate::decoding::DecodeRequest;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::RuleSet;

const TAG_WORDS: [&str; 13] = [
    "effusion",
    "cardiomegaly",
    "consolidation",
    "edema",
    "fracture",
    "nodule",
    "opacity",
    "atelectasis",
    "pneumonia",
    "pneumothorax",
    "fibrosis",
    "catheter",
    "cardiomediastinum",
];

const GROUPS: [(&str, &[&str]); 4] = [
    ("ct", &["axial", "ct", "image"]),
    ("mri", &["mri", "sequence"]),
    ("x-ray", &["frontal", "chest", "radiograph"]),
    ("ultrasound", &["ultrasound", "view"]),
];

const SIDES: [&str; 3] = ["left", "right", "bilateral"];
const PLACES: [&str; 5] = ["lobe", "base", "apex", "region", "hilum"];

/// How strongly captions express a tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "level")]
pub enum Explicitness {
    Verbatim,
    Paraphrase(f64),
    Never,
}

impl Explicitness {
    pub fn level(self) -> f64 {
        match self {
            Explicitness::Verbatim => 1.0,
            Explicitness::Paraphrase(c) => c,
            Explicitness::Never => 0.0,
        }
    }
}

/// Default planted levels, cycled across tags.
pub const DEFAULT_LEVELS: [Explicitness; 8] = [
    Explicitness::Verbatim,
    Explicitness::Paraphrase(0.95),
    Explicitness::Paraphrase(0.8),
    Explicitness::Paraphrase(0.65),
    Explicitness::Paraphrase(0.5),
    Explicitness::Paraphrase(0.4),
    Explicitness::Paraphrase(0.3),
    Explicitness::Never,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tags: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    /// Probability that a caption leaves one of its tags unexpressed.
    pub omit_rate: f64,
    /// Maximum number of tags per example.
    pub max_tags: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tags: 8,
            train: 500,
            val: 50,
            test: 100,
            seed: 0,
            omit_rate: 0.15,
            max_tags: 3,
        }
    }
}

impl SynthConfig {
    /// Splits `examples` 75/10/15.
    pub fn with_total(examples: usize) -> Self {
        let train = examples * 75 / 100;
        let val = examples * 10 / 100;
        SynthConfig {
            train,
            val,
            test: examples - train - val,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTag {
    pub tag: String,
    pub explicitness: Explicitness,
    pub paraphrases: Vec<String>,
}

pub struct SynthCorpus {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    pub planted: Vec<PlantedTag>,
    pub rules: RuleSet,
}

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if rng.gen_bool(0.5) {
            w.push_str(["l", "n", "r", "s"][rng.gen_range(0..4)]);
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn unit_noise(rng: &mut ChaCha8Rng, v: &mut [f64], range: std::ops::Range<usize>, scale: f64) {
    for x in &mut v[range] {
        *x += rng.gen_range(-1.0..1.0) * scale;
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.tags == 0 || cfg.train == 0 {
        return Err(Error::InvalidConfig("need at least one tag and one training example".into()));
    }
    if !(0.0..1.0).contains(&cfg.omit_rate) {
        return Err(Error::InvalidConfig("omit rate must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.tags;
    let filler_dims = 12;
    let dim = 2 * n + filler_dims;
    let mut table = EmbeddingTable::new(dim)?;

    let mut taken: HashSet<String> = HashSet::new();
    let mut names: Vec<String> = TAG_WORDS.iter().take(n).map(|s| s.to_string()).collect();
    for i in names.len()..n {
        names.push(format!("finding{i}"));
    }
    taken.extend(names.iter().cloned());

    let mut levels: Vec<Explicitness> = (0..n).map(|i| DEFAULT_LEVELS[i % DEFAULT_LEVELS.len()]).collect();
    levels.shuffle(&mut rng);

    let mut planted = Vec::with_capacity(n);
    for (i, (name, &level)) in names.iter().zip(&levels).enumerate() {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        table.insert(name, &v)?;
        let mut paraphrases = Vec::new();
        if let Explicitness::Paraphrase(c) = level {
            for delta in [-0.03, 0.0, 0.03] {
                let c = (c + delta).clamp(0.05, 0.99);
                let mut v = vec![0.0; dim];
                v[i] = c;
                v[n + i] = (1.0 - c * c).sqrt();
                let word = pseudo_word(&mut rng, &mut taken);
                table.insert(&word, &v)?;
                paraphrases.push(word);
            }
        }
        planted.push(PlantedTag {
            tag: name.clone(),
            explicitness: level,
            paraphrases,
        });
    }

    let mut fillers: Vec<&str> = vec!["showing", "and", "in", "the", "with", "findings"];
    for (_, words) in GROUPS {
        fillers.extend(words.iter().copied());
    }
    fillers.extend(SIDES);
    fillers.extend(PLACES);
    for w in fillers {
        if table.contains(w) {
            continue;
        }
        let mut v = vec![0.0; dim];
        for x in &mut v[2 * n..] {
            *x = rng.gen_range(-1.0..1.0);
        }
        unit_noise(&mut rng, &mut v, n..2 * n, 0.02);
        table.insert(w, &v)?;
    }

    let total = cfg.train + cfg.val + cfg.test;
    let mut examples = Vec::with_capacity(total);
    for idx in 0..total {
        let split = if idx < cfg.train {
            Split::Train
        } else if idx < cfg.train + cfg.val {
            Split::Val
        } else {
            Split::Test
        };
        let (group, opener) = GROUPS[rng.gen_range(0..GROUPS.len())];
        let k = rng.gen_range(1..=cfg.max_tags.min(n).max(1));
        let mut chosen: Vec<usize> = (0..n).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(k);

        let mut expressions = Vec::new();
        for &t in &chosen {
            if rng.gen_bool(cfg.omit_rate) {
                continue;
            }
            match planted[t].explicitness {
                Explicitness::Verbatim => expressions.push(planted[t].tag.clone()),
                Explicitness::Paraphrase(_) => {
                    let p = &planted[t].paraphrases;
                    expressions.push(p[rng.gen_range(0..p.len())].clone());
                }
                Explicitness::Never => {}
            }
        }
        let mut words: Vec<String> = opener.iter().map(|s| s.to_string()).collect();
        if expressions.is_empty() {
            words.extend(["with", "findings"].map(String::from));
        } else {
            words.push("showing".into());
            for (j, e) in expressions.into_iter().enumerate() {
                if j > 0 {
                    words.push("and".into());
                }
                words.push(e);
            }
        }
        words.push("in".into());
        words.push("the".into());
        words.push(SIDES[rng.gen_range(0..SIDES.len())].into());
        words.push(PLACES[rng.gen_range(0..PLACES.len())].into());
        let caption = format!("{}.", words.join(" "));

        examples.push(Example {
            id: format!("synth-{idx:05}"),
            tags: chosen.iter().map(|&t| planted[t].tag.clone()).collect(),
            caption,
            group: Some(group.to_string()),
            split,
        });
    }

    Ok(SynthCorpus {
        corpus: Corpus::new(examples)?,
        table,
        planted,
        rules: RuleSet::demo(),
    })
}

/// Simulates a noisy tagger. Each gold tag is dropped with probability
/// `drop`, and for each gold tag a spurious tag drawn from `vocabulary` is
/// added with probability `add`.
pub fn corrupt_tags(
    gold: &[String],
    vocabulary: &[String],
    drop: f64,
    add: f64,
    rng: &mut impl Rng,
) -> Vec<String> {
    let mut out: Vec<String> = gold.iter().filter(|_| !rng.gen_bool(drop)).cloned().collect();
    for _ in gold {
        if !rng.gen_bool(add) {
            continue;
        }
        let absent: Vec<&String> = vocabulary
            .iter()
            .filter(|t| !gold.contains(t) && !out.contains(t))
            .collect();
        if let Some(t) = absent.choose(rng) {
            out.push((*t).clone());
        }
    }
    out
}

/// Decode requests for one split, optionally with corrupted tags.
pub fn requests(
    corpus: &Corpus,
    split: Split,
    noise: Option<(f64, f64)>,
    vocabulary: &[String],
    seed: u64,
) -> Vec<DecodeRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .split(split)
        .map(|e| DecodeRequest {
            id: e.id.clone(),
            tags: match noise {
                Some((drop, add)) => corrupt_tags(&e.tags, vocabulary, drop, add, &mut rng),
                None => e.tags.clone(),
            },
            gold_caption: Some(e.caption.clone()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::build_stats;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig {
            train: 60,
            val: 10,
            test: 20,
            seed: 9,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.table, b.table);
        assert_eq!(a.corpus.train().count(), 60);
        assert_eq!(a.corpus.val().count(), 10);
        assert_eq!(a.corpus.test().count(), 20);
        for e in a.corpus.examples() {
            for tok in &e.tokens() {
                assert!(a.table.contains(tok), "{tok}");
            }
        }
    }

    #[test]
    fn medians_track_planted_levels() {
        let s = generate(&SynthConfig::default()).unwrap();
        let store = build_stats(&s.corpus, &s.table).unwrap();
        for p in &s.planted {
            let m = store.get(&p.tag).unwrap().mmcs;
            match p.explicitness {
                Explicitness::Never => assert!(m.abs() < 0.1, "{} {m}", p.tag),
                e => assert!((m - e.level()).abs() < 0.05, "{} {m} vs {}", p.tag, e.level()),
            }
        }
    }

    #[test]
    fn corruption_rates() {
        let vocab: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        let gold = vec!["t0".to_string(), "t1".to_string()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(corrupt_tags(&gold, &vocab, 0.0, 0.0, &mut rng), gold);
        let all = corrupt_tags(&gold, &vocab, 1.0, 1.0, &mut rng);
        assert_eq!(all.len(), 2);
        assert!(!all.contains(&"t0".to_string()) && !all.contains(&"t1".to_string()));
    }

    #[test]
    fn total_split_is_75_10_15() {
        let c = SynthConfig::with_total(500);
        assert_eq!((c.train, c.val, c.test), (375, 50, 75));
    }
}
