//! Synthetic corpus generation: primitive surfaces, labeled scenes,
//! seen/unseen class splits, and per-class semantic embeddings.

mod corpus;
mod primitive;
mod semantic;
mod store;

pub use corpus::{
    compose_corpus, default_class_defs, split_classes, ClassDef, ClassPart, ClassSplit,
    SceneSample,
};
pub use primitive::{make_primitive, Primitive, PrimitiveKind, DEFAULT_JITTER};
pub use semantic::{
    class_descriptor, load_word_vectors, synth_semantic_embeddings, SemanticSource, SemanticTable,
};
pub use store::{load_corpus, write_corpus, CorpusOnDisk};

use std::fmt;

/// Errors from scene synthesis, embeddings, and corpus files.
#[derive(Debug)]
pub enum DataError {
    /// Geometrically invalid primitive parameters.
    Geometry(String),
    /// Configuration outside its allowed range.
    Config(String),
    /// A class name has no entry in a word-vector file.
    Lookup { class: String, detail: String },
    /// Malformed file contents.
    Format { path: String, detail: String },
    Io(std::io::Error),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Geometry(msg) => write!(f, "invalid geometry: {msg}"),
            DataError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            DataError::Lookup { class, detail } => {
                write!(f, "no embedding for class `{class}`: {detail}")
            }
            DataError::Format { path, detail } => write!(f, "malformed file {path}: {detail}"),
            DataError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}
