//! Feature inputs: hashed name tokens, frozen description vectors, ID and
//! context embedding tables, and ID dropout.

mod describe;
mod features;
mod tables;
mod tokenize;

pub use describe::{l2_normalize, words, DescriptionEmbedder, EmbedderConfig, HashedEmbedder, RemoteEmbedder, DESC_DIM};
pub use features::{build_features, DatasetFeat, FeatureBank, FeatureVector, ItemRef, ModelFeat};
pub use tables::{
    dropout_id, embed_name, init_tables, lookup_id_with_dropout, EmbedDims, KeyVocab, Segments, TableIds, Vocab,
    EMBED_INIT_STD, UNK,
};
pub use tokenize::{fnv1a64, name_tokens, tokenize_name, tokenize_name_with, NAME_BUCKETS};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("remote embedding unavailable: {0}")]
    RemoteEmbedUnavailable(String),
    #[error("index {index} out of range for table {table}")]
    UnknownEntity { table: String, index: usize },
    #[error("embedding config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;
