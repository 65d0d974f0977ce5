//! Beam search with standard, tag-guided and lexically constrained scoring.

mod beam;
mod constraints;
mod penalty;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::TokenId;

pub use beam::{decode, BeamState, DecodeOutput, Decoder};
pub use constraints::{Constraints, Requirement};
pub use penalty::{dmmcs_penalty, histogram_divergence, ContextTag, PenaltyContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "dmmcs")]
    Dmmcs,
    #[serde(rename = "dmmcs-hd")]
    DmmcsHd,
    #[serde(rename = "constrained-all")]
    ConstrainedAll,
    #[serde(rename = "constrained-any")]
    ConstrainedAny,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Standard,
        Method::Dmmcs,
        Method::DmmcsHd,
        Method::ConstrainedAll,
        Method::ConstrainedAny,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Dmmcs => "dmmcs",
            Method::DmmcsHd => "dmmcs-hd",
            Method::ConstrainedAll => "constrained-all",
            Method::ConstrainedAny => "constrained-any",
        }
    }

    pub fn is_guided(self) -> bool {
        matches!(self, Method::Dmmcs | Method::DmmcsHd)
    }

    pub fn requirement(self) -> Option<Requirement> {
        match self {
            Method::ConstrainedAll => Some(Requirement::All),
            Method::ConstrainedAny => Some(Requirement::Any),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown decoding method `{s}`")))
    }
}

/// What to do with an input tag that has no training statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    #[default]
    MedianOfMedians,
    SkipTag,
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "median_of_medians" => Ok(FallbackPolicy::MedianOfMedians),
            "skip_tag" => Ok(FallbackPolicy::SkipTag),
            _ => Err(Error::InvalidConfig(format!("unknown fallback policy `{s}`"))),
        }
    }
}

/// Ties are always broken by lower raw NLL, then by the lexicographically
/// smaller token-id sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub method: Method,
    pub beam_width: usize,
    pub max_len: usize,
    pub alpha: f64,
    #[serde(default)]
    pub fallback_mmcs_policy: FallbackPolicy,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            method: Method::Standard,
            beam_width: 4,
            max_len: 20,
            alpha: 0.5,
            fallback_mmcs_policy: FallbackPolicy::MedianOfMedians,
        }
    }
}

impl DecodingConfig {
    pub fn new(method: Method) -> Self {
        DecodingConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam width must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} is outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// A candidate sequence inside the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Negative log-likelihood summed over `tokens`.
    pub raw_nll: f64,
    pub finished: bool,
    /// Method score at the step this hypothesis was last ranked; lower is better.
    pub combined_score: f64,
    /// Running per-tag MCS, `None` until a covered token appears.
    pub tag_mcs: Vec<Option<f64>>,
}

/// Min-max scales pool NLLs into goodness values: the most probable
/// hypothesis maps to 1, the least probable to 0. A flat pool maps to 1.
pub fn normalize_pool(raw_nlls: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw_nlls
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![1.0; raw_nlls.len()];
    }
    raw_nlls.iter().map(|&x| (hi - x) / span).collect()
}

/// `alpha * penalty + (1 - alpha) * (1 - goodness)`; lower is better.
pub fn combine_scores(alpha: f64, penalty: f64, norm_goodness: f64) -> f64 {
    alpha * penalty + (1.0 - alpha) * (1.0 - norm_goodness)
}

/// Divergence-weighted variant: a large divergence shifts weight from the
/// penalty to the decoder term.
pub fn combine_scores_hd(alpha: f64, hd: f64, penalty: f64, norm_goodness: f64) -> f64 {
    alpha * (1.0 - hd) * penalty + (1.0 - alpha) * hd * (1.0 - norm_goodness)
}

/// One line of decode output. The decoding method and its parameters are
/// recorded once per run rather than per line, so runs that produce the same
/// captions produce the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub text: String,
    pub raw_nll: f64,
    pub constraints_satisfied: bool,
}

impl DecodeRecord {
    pub fn new(id: impl Into<String>, out: &DecodeOutput) -> Self {
        DecodeRecord {
            id: id.into(),
            text: out.tokens.join(" "),
            tokens: out.tokens.clone(),
            raw_nll: out.raw_nll,
            constraints_satisfied: out.constraints_satisfied,
        }
    }
}

/// One line of a decode request file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub id: String,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_caption: Option<String>,
}
