use thiserror::Error;

use crate::index::NodePos;

/// Crate-wide error type. Variants carry enough context to be actionable
/// from a CLI message (offsets for parse errors, ids for index errors).
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("k-means: {0}")]
    KMeans(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("duplicate object id {0}")]
    DuplicateId(u64),

    #[error("unknown object id {0}")]
    UnknownId(u64),

    #[error("no node at position {0}")]
    NoSuchNode(NodePos),

    #[error("node at {0} is not a leaf")]
    NotALeaf(NodePos),

    #[error("node at {0} is not an inner node")]
    NotAnInner(NodePos),

    #[error("cannot remove output {class} of a model with {n_classes} outputs")]
    CannotRemoveOutput { class: usize, n_classes: usize },

    #[error("shorten would leave parent {0} without children")]
    WouldEmptyParent(NodePos),

    #[error("index inconsistent: {0}")]
    Inconsistent(#[from] crate::index::ConsistencyViolation),

    #[error("target recall {target} unreachable: max achievable recall is {achieved}")]
    RecallUnreachable { target: f64, achieved: f64 },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("snapshot format: {0}")]
    Persist(String),

    #[error("bench: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
