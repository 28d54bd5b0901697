//! Operator catalog: the candidate set the controller selects from.

use crate::error::CatalogError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Index of an operator in its catalog.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct OperatorId(pub u32);

impl OperatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The operator vocabulary. Known kinds carry fixed semantics; `Custom`
/// admits environment-defined operators without touching this enum.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    /// Single direct generation call.
    Generate,
    /// Single chain-of-thought generation call.
    GenerateCot,
    /// Three independent chain-of-thought generations, run in parallel
    /// inside the operator; always yields exactly three candidates.
    MultiGenerateCot,
    /// Self-consistency selection over candidate answers.
    ScEnsemble,
    /// Critiques and rewrites an existing solution.
    SelfRefine,
    /// Terminator: selecting it ends topology generation and execution.
    /// Performs no model call and records zero tokens, time and cost.
    EarlyStop,
    /// Code generation without execution.
    CustomCodeGenerate,
    /// Test-driven refinement; internal retries are folded into the one
    /// record (they never create extra layers).
    Test,
    /// Program-synthesis-and-run operator.
    Programmer,
    /// Environment-defined kind.
    Custom(String),
}

impl OperatorKind {
    pub const STANDARD: [OperatorKind; 9] = [
        OperatorKind::Generate,
        OperatorKind::GenerateCot,
        OperatorKind::MultiGenerateCot,
        OperatorKind::ScEnsemble,
        OperatorKind::SelfRefine,
        OperatorKind::EarlyStop,
        OperatorKind::CustomCodeGenerate,
        OperatorKind::Test,
        OperatorKind::Programmer,
    ];

    pub fn name(&self) -> &str {
        match self {
            OperatorKind::Generate => "Generate",
            OperatorKind::GenerateCot => "GenerateCoT",
            OperatorKind::MultiGenerateCot => "MultiGenerateCoT",
            OperatorKind::ScEnsemble => "ScEnsemble",
            OperatorKind::SelfRefine => "SelfRefine",
            OperatorKind::EarlyStop => "EarlyStop",
            OperatorKind::CustomCodeGenerate => "CustomCodeGenerate",
            OperatorKind::Test => "Test",
            OperatorKind::Programmer => "Programmer",
            OperatorKind::Custom(name) => name,
        }
    }

    /// Number of candidate outputs one invocation must yield.
    pub fn expected_outputs(&self) -> usize {
        match self {
            OperatorKind::MultiGenerateCot => 3,
            OperatorKind::EarlyStop => 0,
            _ => 1,
        }
    }

    pub fn is_early_stop(&self) -> bool {
        matches!(self, OperatorKind::EarlyStop)
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(OperatorKind::STANDARD
            .iter()
            .find(|k| k.name() == s)
            .cloned()
            .unwrap_or_else(|| OperatorKind::Custom(s.to_string())))
    }
}

impl Serialize for OperatorKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for OperatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().expect("infallible"))
    }
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub id: OperatorId,
    pub kind: OperatorKind,
    /// Always true: every operator, including refinement kinds, reads the
    /// outputs of the previous layer and never of its own layer.
    #[serde(default = "default_true")]
    pub consumes_previous_layer: bool,
    /// Identifier the backend resolves to concrete behavior.
    pub backend_binding: String,
}

fn default_true() -> bool {
    true
}

impl OperatorSpec {
    pub fn new(id: u32, kind: OperatorKind) -> Self {
        let backend_binding = kind.name().to_ascii_lowercase();
        OperatorSpec {
            id: OperatorId(id),
            kind,
            consumes_previous_layer: true,
            backend_binding,
        }
    }
}

/// Ordered, validated operator set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OperatorSpec>", into = "Vec<OperatorSpec>")]
pub struct OperatorCatalog {
    operators: Vec<OperatorSpec>,
    early_stop: OperatorId,
}

impl OperatorCatalog {
    pub fn new(operators: Vec<OperatorSpec>) -> Result<Self, CatalogError> {
        if operators.is_empty() {
            return Err(CatalogError::Empty);
        }
        for (position, op) in operators.iter().enumerate() {
            if op.id.index() != position {
                return Err(CatalogError::NonDenseIds {
                    expected: operators.len(),
                    found: op.id.0,
                    position,
                });
            }
            if !op.consumes_previous_layer {
                return Err(CatalogError::IntraLayerDependency { id: op.id.0 });
            }
        }
        let stops: Vec<_> = operators
            .iter()
            .filter(|o| o.kind.is_early_stop())
            .collect();
        if stops.len() != 1 {
            return Err(CatalogError::EarlyStopCount { count: stops.len() });
        }
        let early_stop = stops[0].id;
        Ok(OperatorCatalog {
            operators,
            early_stop,
        })
    }

    /// The full nine-operator set used by default.
    pub fn standard() -> Self {
        let ops = OperatorKind::STANDARD
            .iter()
            .enumerate()
            .map(|(i, k)| OperatorSpec::new(i as u32, k.clone()))
            .collect();
        OperatorCatalog::new(ops).expect("standard catalog is valid")
    }

    /// Catalog built from kinds in order, ids assigned densely.
    pub fn from_kinds(kinds: &[OperatorKind]) -> Result<Self, CatalogError> {
        OperatorCatalog::new(
            kinds
                .iter()
                .enumerate()
                .map(|(i, k)| OperatorSpec::new(i as u32, k.clone()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn get(&self, id: OperatorId) -> Option<&OperatorSpec> {
        self.operators.get(id.index())
    }

    pub fn contains(&self, id: OperatorId) -> bool {
        id.index() < self.operators.len()
    }

    pub fn early_stop_id(&self) -> OperatorId {
        self.early_stop
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperatorSpec> {
        self.operators.iter()
    }
}

impl TryFrom<Vec<OperatorSpec>> for OperatorCatalog {
    type Error = CatalogError;

    fn try_from(ops: Vec<OperatorSpec>) -> Result<Self, Self::Error> {
        OperatorCatalog::new(ops)
    }
}

impl From<OperatorCatalog> for Vec<OperatorSpec> {
    fn from(c: OperatorCatalog) -> Self {
        c.operators
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_catalog_shape() {
        let c = OperatorCatalog::standard();
        assert_eq!(c.len(), 9);
        assert_eq!(c.early_stop_id(), OperatorId(5));
        assert!(c.get(OperatorId(5)).unwrap().kind.is_early_stop());
    }

    #[test]
    fn rejects_duplicate_early_stop() {
        let err = OperatorCatalog::from_kinds(&[
            OperatorKind::EarlyStop,
            OperatorKind::EarlyStop,
        ])
        .unwrap_err();
        assert!(matches!(err, CatalogError::EarlyStopCount { count: 2 }));
    }

    #[test]
    fn rejects_missing_early_stop() {
        let err = OperatorCatalog::from_kinds(&[OperatorKind::Generate]).unwrap_err();
        assert!(matches!(err, CatalogError::EarlyStopCount { count: 0 }));
    }

    #[test]
    fn rejects_non_dense_ids() {
        let mut ops = vec![
            OperatorSpec::new(0, OperatorKind::Generate),
            OperatorSpec::new(2, OperatorKind::EarlyStop),
        ];
        ops[1].id = OperatorId(2);
        let err = OperatorCatalog::new(ops).unwrap_err();
        assert!(matches!(err, CatalogError::NonDenseIds { found: 2, .. }));
    }

    #[test]
    fn multi_cot_yields_three_candidates() {
        assert_eq!(OperatorKind::MultiGenerateCot.expected_outputs(), 3);
        assert_eq!(OperatorKind::EarlyStop.expected_outputs(), 0);
        assert_eq!(OperatorKind::Generate.expected_outputs(), 1);
    }

    #[test]
    fn kind_round_trips_through_name() {
        for k in OperatorKind::STANDARD {
            let parsed: OperatorKind = k.name().parse().unwrap();
            assert_eq!(parsed, k);
        }
        let custom: OperatorKind = "Summarize".parse().unwrap();
        assert_eq!(custom, OperatorKind::Custom("Summarize".into()));
    }
}
