//! Query feature vectors.

use crate::seeds::hash_bytes;
use serde::{Deserialize, Serialize};

/// Input to the controller. Synthetic environments supply the vector
/// directly; text queries are embedded with [`hash_text_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub query_id: String,
    pub feature_vector: Vec<f64>,
    pub raw_text: Option<String>,
}

impl QueryFeatures {
    pub fn new(query_id: impl Into<String>, feature_vector: Vec<f64>) -> Self {
        QueryFeatures {
            query_id: query_id.into(),
            feature_vector,
            raw_text: None,
        }
    }

    pub fn from_text(query_id: impl Into<String>, text: &str, dim: usize) -> Self {
        QueryFeatures {
            query_id: query_id.into(),
            feature_vector: hash_text_features(text, dim),
            raw_text: Some(text.to_string()),
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_vector.len()
    }
}

/// Byte-trigram feature hashing into `dim` buckets, l2-normalized.
/// Deterministic and self-contained; no external embedding service.
pub fn hash_text_features(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim >= 1);
    let bytes = text.as_bytes();
    let mut v = vec![0.0f64; dim];
    if bytes.len() < 3 {
        v[hash_bytes(bytes) as usize % dim] += 1.0;
    } else {
        for w in bytes.windows(3) {
            v[hash_bytes(w) as usize % dim] += 1.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}
