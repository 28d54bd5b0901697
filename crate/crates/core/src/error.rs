//! Error types shared across the crate.

use crate::trace::ExecutionTrace;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("operator catalog is empty")]
    Empty,
    #[error("operator ids must be dense 0..{expected}, found id {found} at position {position}")]
    NonDenseIds {
        expected: usize,
        found: u32,
        position: usize,
    },
    #[error("catalog must contain exactly one EarlyStop operator, found {count}")]
    EarlyStopCount { count: usize },
    #[error("operator {id} has consumes_previous_layer=false; all operators consume the previous layer")]
    IntraLayerDependency { id: u32 },
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("query feature dimension mismatch: params expect {expected}, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("layer index {index} out of range (max {max})")]
    LayerOutOfRange { index: usize, max: usize },
    #[error("graph references operator {id} absent from catalog of size {catalog}")]
    UnknownOperator { id: u32, catalog: usize },
    #[error("catalog size mismatch: params built for {expected} operators, catalog has {found}")]
    CatalogSizeMismatch { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("operator timed out after {seconds:.1}s")]
    Timeout { seconds: f64 },
    #[error("backend has no binding for '{binding}'")]
    UnknownBinding { binding: String },
    #[error("unknown query '{query_id}'")]
    UnknownQuery { query_id: String },
    #[error("EarlyStop must not reach a backend")]
    EarlyStopInvoked,
    #[error("http error: {0}")]
    Http(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
#[error("operator {operator_id} in layer {layer} failed: {source}")]
pub struct ExecutionError {
    pub layer: usize,
    pub operator_id: u32,
    #[source]
    pub source: BackendError,
    /// Trace of the layers that completed before the fault.
    pub partial: Box<ExecutionTrace>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint/catalog size mismatch: checkpoint has {checkpoint} operators, catalog has {catalog}")]
    CatalogMismatch { checkpoint: usize, catalog: usize },
    #[error("tensor '{tensor}' has {found} entries, expected {expected}")]
    TensorShape {
        tensor: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("field '{field}': {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unknown scenario '{0}' (expected trivial-uniform, parallel-advantage or difficulty-mixture)")]
    UnknownScenario(String),
}
