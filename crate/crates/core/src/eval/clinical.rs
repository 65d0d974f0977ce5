//! Rule-based finding labels and clinical accuracy.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSeq};
use crate::error::{Error, Result};

/// Labels as produced by a rule before post-processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawLabel {
    Present,
    Negative,
    Unsure,
    Blank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Present,
    Negative,
}

/// Keyword rule for one finding class. Negation and unsure cues apply when
/// they occur within a few tokens before a positive keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub class: String,
    pub positive_keywords: Vec<String>,
    #[serde(default)]
    pub negation_cues: Vec<String>,
    #[serde(default)]
    pub unsure_keywords: Vec<String>,
}

const CUE_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

fn phrase_hits(tokens: &[String], phrase: &[String]) -> Vec<usize> {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return Vec::new();
    }
    tokens
        .windows(phrase.len())
        .enumerate()
        .filter(|(_, w)| *w == phrase)
        .map(|(i, _)| i)
        .collect()
}

fn cue_before(tokens: &[String], start: usize, cues: &[TokenSeq]) -> bool {
    let lo = start.saturating_sub(CUE_WINDOW);
    let window = &tokens[lo..start];
    cues.iter().any(|c| !phrase_hits(window, c.as_slice()).is_empty())
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let rs: RuleSet = serde_json::from_str(text)?;
        if rs.rules.is_empty() {
            return Err(Error::InvalidConfig("rule file has no classes".into()));
        }
        Ok(rs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn classes(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.class.clone()).collect()
    }

    /// Fourteen thoracic finding classes with keyword lists suited to the
    /// synthetic corpora this crate generates.
    pub fn demo() -> Self {
        let negation = ["no", "without", "negative for", "free of", "absent"];
        let unsure = ["possible", "probable", "may", "cannot exclude", "suspicious for"];
        let classes: [(&str, &[&str]); 14] = [
            ("Atelectasis", &["atelectasis", "collapse"]),
            ("Cardiomegaly", &["cardiomegaly", "enlarged heart"]),
            ("Consolidation", &["consolidation"]),
            ("Edema", &["edema", "oedema"]),
            ("Enlarged Cardiomediastinum", &["cardiomediastinum", "widened mediastinum"]),
            ("Fracture", &["fracture"]),
            ("Lung Lesion", &["lesion", "nodule", "mass"]),
            ("Lung Opacity", &["opacity", "opacities"]),
            ("No Finding", &["normal", "unremarkable"]),
            ("Pleural Effusion", &["effusion"]),
            ("Pleural Other", &["pleural thickening", "fibrosis"]),
            ("Pneumonia", &["pneumonia", "infection"]),
            ("Pneumothorax", &["pneumothorax"]),
            ("Support Devices", &["catheter", "tube", "pacemaker", "device"]),
        ];
        RuleSet {
            rules: classes
                .iter()
                .map(|(class, kws)| Rule {
                    class: class.to_string(),
                    positive_keywords: kws.iter().map(|s| s.to_string()).collect(),
                    negation_cues: negation.iter().map(|s| s.to_string()).collect(),
                    unsure_keywords: unsure.iter().map(|s| s.to_string()).collect(),
                })
                .collect(),
        }
    }

    /// Applies every rule to a caption.
    pub fn raw_labels(&self, caption: &TokenSeq) -> Vec<RawLabel> {
        let tokens = caption.as_slice();
        self.rules
            .iter()
            .map(|rule| {
                let negs: Vec<TokenSeq> = rule.negation_cues.iter().map(|c| tokenize(c)).collect();
                let hedges: Vec<TokenSeq> = rule.unsure_keywords.iter().map(|c| tokenize(c)).collect();
                let (mut present, mut unsure, mut negative) = (false, false, false);
                for kw in &rule.positive_keywords {
                    for start in phrase_hits(tokens, tokenize(kw).as_slice()) {
                        if cue_before(tokens, start, &negs) {
                            negative = true;
                        } else if cue_before(tokens, start, &hedges) {
                            unsure = true;
                        } else {
                            present = true;
                        }
                    }
                }
                if present {
                    RawLabel::Present
                } else if unsure {
                    RawLabel::Unsure
                } else if negative {
                    RawLabel::Negative
                } else {
                    RawLabel::Blank
                }
            })
            .collect()
    }
}

/// Labels one caption: blank becomes negative and unsure becomes present or
/// negative with equal probability, drawn from an RNG seeded with `seed`.
pub fn labelize(caption: &TokenSeq, rules: &RuleSet, seed: u64) -> Vec<Label> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rules
        .raw_labels(caption)
        .into_iter()
        .map(|raw| match raw {
            RawLabel::Present => Label::Present,
            RawLabel::Negative | RawLabel::Blank => Label::Negative,
            RawLabel::Unsure => {
                if rng.gen_bool(0.5) {
                    Label::Present
                } else {
                    Label::Negative
                }
            }
        })
        .collect()
}

/// Rows are caption instances, columns are finding classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub classes: Vec<String>,
    pub rows: Vec<Vec<Label>>,
}

impl LabelMatrix {
    pub fn new(classes: Vec<String>, rows: Vec<Vec<Label>>) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != classes.len()) {
            return Err(Error::ShapeMismatch(format!(
                "row {bad} has {} labels for {} classes",
                rows[bad].len(),
                classes.len()
            )));
        }
        Ok(LabelMatrix { classes, rows })
    }

    /// Labels each caption, mixing the row index into the seed so rows draw
    /// independently.
    pub fn from_captions<'a, I>(captions: I, rules: &RuleSet, seed: u64) -> Self
    where
        I: IntoIterator<Item = &'a TokenSeq>,
    {
        let rows = captions
            .into_iter()
            .enumerate()
            .map(|(i, c)| labelize(c, rules, row_seed(seed, i)))
            .collect();
        LabelMatrix {
            classes: rules.classes(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub(crate) fn row_seed(seed: u64, row: usize) -> u64 {
    seed ^ (row as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fraction of classes on which two label rows agree.
pub fn row_agreement(a: &[Label], b: &[Label]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Mean over instances of the per-instance mean agreement over classes.
pub fn clinical_accuracy(y_ref: &LabelMatrix, y_pred: &LabelMatrix) -> Result<f64> {
    if y_ref.rows.len() != y_pred.rows.len() || y_ref.classes.len() != y_pred.classes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} reference vs {}x{} prediction",
            y_ref.rows.len(),
            y_ref.classes.len(),
            y_pred.rows.len(),
            y_pred.classes.len()
        )));
    }
    if y_ref.rows.is_empty() {
        return Err(Error::ShapeMismatch("empty label matrices".into()));
    }
    let total: f64 = y_ref
        .rows
        .iter()
        .zip(&y_pred.rows)
        .map(|(r, p)| row_agreement(r, p))
        .sum();
    Ok(total / y_ref.rows.len() as f64)
}
