//! Tag-guided beam search decoding.
//!
//! Phase one learns, per tag, how strongly training captions express it
//! (the median over captions of the maximum cosine similarity between the
//! tag and any caption token). Phase two steers beam search so that each
//! input tag is expressed at that learned strength.

pub mod corpus;
pub mod decoding;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use corpus::{load_corpus, tokenize, Corpus, CorpusFormat, Example, Split, TokenSeq};
pub use embeddings::{cosine, embed_tag, load_embeddings, EmbeddingTable, TagEmbedding};
pub use error::{Error, Result};
pub use lm::{d_score, perplexity, train_ngram, NGramModel, SequenceModel, TokenId, Vocab};
pub use stats::{build_stats, ecdf_eval, lookup_mmcs, mcs, StatsStore, TagStats};
pub use decoding::{
    decode, DecodeOutput, DecodeRecord, DecodeRequest, Decoder, DecodingConfig, FallbackPolicy, Method,
};
pub use pipeline::decode_requests;
