//! Layered execution graphs sampled by the controller.

use crate::catalog::{OperatorCatalog, OperatorId};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance for the "activation probabilities sum to one" check.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// Operators chosen for one layer, together with the distribution the
/// selection was drawn from (over the full catalog). In sample mode the
/// stored distribution is the perturbed one actually used for ordering;
/// the unperturbed policy log-probabilities live on [`TopologyGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub layer_index: usize,
    /// Selected ids in descending activation probability, ties by ascending id.
    pub selected: Vec<OperatorId>,
    pub activation_probs: Vec<f64>,
}

impl LayerSelection {
    pub fn width(&self) -> usize {
        self.selected.len()
    }
}

/// A sampled topology: one [`LayerSelection`] per layer, at most `l_max`
/// layers, optionally terminated by EarlyStop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub query_id: String,
    pub layers: Vec<LayerSelection>,
    pub terminated_early: bool,
    /// `log_probs[l][j]` is the policy log-probability of `layers[l].selected[j]`
    /// under the unperturbed softmax, recorded at build time.
    pub log_probs: Vec<Vec<f64>>,
}

impl TopologyGraph {
    /// Layers that invoke a backend (everything except a terminal EarlyStop layer).
    pub fn executed_depth(&self) -> usize {
        if self.terminated_early {
            self.layers.len() - 1
        } else {
            self.layers.len()
        }
    }

    pub fn total_selected(&self) -> usize {
        self.layers.iter().map(|l| l.selected.len()).sum()
    }
}

/// A broken topology invariant. Violations are data, not faults: callers
/// decide whether to reject, log or repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TopologyViolation {
    TooManyLayers { layers: usize, max: usize },
    NonConsecutiveLayerIndex { position: usize, found: usize },
    EmptySelection { layer: usize },
    DuplicateSelection { layer: usize, id: OperatorId },
    UnknownOperator { layer: usize, id: OperatorId },
    SelectionNotOrdered { layer: usize },
    ProbsWrongLength { layer: usize, found: usize, expected: usize },
    ProbsNotNormalized { layer: usize, sum: f64 },
    ProbOutOfRange { layer: usize, id: OperatorId, value: f64 },
    LayersAfterTermination { layer: usize },
    EarlyStopNotAlone { layer: usize },
    TerminationNotMarked { layer: usize },
    LogProbsMisaligned { layer: usize },
}

impl fmt::Display for TopologyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TopologyViolation::*;
        match self {
            TooManyLayers { layers, max } => {
                write!(f, "graph has {layers} layers, max is {max}")
            }
            NonConsecutiveLayerIndex { position, found } => {
                write!(f, "layer at position {position} carries index {found}")
            }
            EmptySelection { layer } => write!(f, "layer {layer}: empty selection"),
            DuplicateSelection { layer, id } => {
                write!(f, "layer {layer}: duplicate selection of operator {id}")
            }
            UnknownOperator { layer, id } => {
                write!(f, "layer {layer}: operator {id} not in catalog")
            }
            SelectionNotOrdered { layer } => write!(
                f,
                "layer {layer}: selection not in descending-probability order (ties by id)"
            ),
            ProbsWrongLength {
                layer,
                found,
                expected,
            } => write!(
                f,
                "layer {layer}: {found} activation probs for a catalog of {expected}"
            ),
            ProbsNotNormalized { layer, sum } => {
                write!(f, "layer {layer}: activation probs sum to {sum}")
            }
            ProbOutOfRange { layer, id, value } => {
                write!(f, "layer {layer}: probability {value} for operator {id}")
            }
            LayersAfterTermination { layer } => {
                write!(f, "layers after termination at layer {layer}")
            }
            EarlyStopNotAlone { layer } => {
                write!(f, "layer {layer}: EarlyStop co-selected with other operators")
            }
            TerminationNotMarked { layer } => write!(
                f,
                "layer {layer} selects EarlyStop but the graph is not marked terminated"
            ),
            LogProbsMisaligned { layer } => {
                write!(f, "layer {layer}: log_probs do not align with the selection")
            }
        }
    }
}

/// Checks every structural invariant of `graph` against `catalog` and the
/// layer budget. Returns the empty vector iff the graph is valid.
pub fn validate_topology(
    graph: &TopologyGraph,
    catalog: &OperatorCatalog,
    max_layers: usize,
) -> Vec<TopologyViolation> {
    let mut out = Vec::new();
    if graph.layers.len() > max_layers {
        out.push(TopologyViolation::TooManyLayers {
            layers: graph.layers.len(),
            max: max_layers,
        });
    }
    let early_stop = catalog.early_stop_id();
    let last = graph.layers.len().saturating_sub(1);

    for (position, layer) in graph.layers.iter().enumerate() {
        let l = layer.layer_index;
        if l != position {
            out.push(TopologyViolation::NonConsecutiveLayerIndex { position, found: l });
        }
        if layer.selected.is_empty() {
            out.push(TopologyViolation::EmptySelection { layer: l });
        }
        if layer.activation_probs.len() != catalog.len() {
            out.push(TopologyViolation::ProbsWrongLength {
                layer: l,
                found: layer.activation_probs.len(),
                expected: catalog.len(),
            });
        } else {
            let sum: f64 = layer.activation_probs.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                out.push(TopologyViolation::ProbsNotNormalized { layer: l, sum });
            }
            for (i, &p) in layer.activation_probs.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    out.push(TopologyViolation::ProbOutOfRange {
                        layer: l,
                        id: OperatorId(i as u32),
                        value: p,
                    });
                }
            }
        }

        let mut seen = std::collections::HashSet::new();
        for &id in &layer.selected {
            if !catalog.contains(id) {
                out.push(TopologyViolation::UnknownOperator { layer: l, id });
            }
            if !seen.insert(id) {
                out.push(TopologyViolation::DuplicateSelection { layer: l, id });
            }
        }

        // Ordering check only makes sense when the probs vector is usable.
        if layer.activation_probs.len() == catalog.len() {
            let ordered = layer.selected.windows(2).all(|w| {
                let (a, b) = (w[0], w[1]);
                match (
                    layer.activation_probs.get(a.index()),
                    layer.activation_probs.get(b.index()),
                ) {
                    (Some(pa), Some(pb)) => pa > pb || (pa == pb && a < b),
                    _ => true,
                }
            });
            if !ordered {
                out.push(TopologyViolation::SelectionNotOrdered { layer: l });
            }
        }

        let has_stop = layer.selected.contains(&early_stop);
        if has_stop {
            if layer.selected.len() > 1 {
                out.push(TopologyViolation::EarlyStopNotAlone { layer: l });
            }
            if position != last {
                out.push(TopologyViolation::LayersAfterTermination { layer: l });
            } else if !graph.terminated_early {
                out.push(TopologyViolation::TerminationNotMarked { layer: l });
            }
        }
        if graph.terminated_early && position == last && !has_stop {
            out.push(TopologyViolation::TerminationNotMarked { layer: l });
        }

        match graph.log_probs.get(position) {
            Some(lp) if lp.len() == layer.selected.len() => {}
            _ => out.push(TopologyViolation::LogProbsMisaligned { layer: l }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::OperatorCatalog;

    fn uniform_probs(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn layer(index: usize, ids: &[u32], probs: Vec<f64>) -> LayerSelection {
        LayerSelection {
            layer_index: index,
            selected: ids.iter().map(|&i| OperatorId(i)).collect(),
            activation_probs: probs,
        }
    }

    fn graph(layers: Vec<LayerSelection>, terminated: bool) -> TopologyGraph {
        let log_probs = layers
            .iter()
            .map(|l| vec![-1.0; l.selected.len()])
            .collect();
        TopologyGraph {
            query_id: "q".into(),
            layers,
            terminated_early: terminated,
            log_probs,
        }
    }

    #[test]
    fn valid_two_layer_graph_passes() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let g = graph(
            vec![
                layer(0, &[0, 1], uniform_probs(n)),
                layer(1, &[2], uniform_probs(n)),
            ],
            false,
        );
        assert!(validate_topology(&g, &catalog, 4).is_empty());
    }

    #[test]
    fn layer_after_termination_is_flagged() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let g = graph(
            vec![
                layer(0, &[0], uniform_probs(n)),
                layer(1, &[5], uniform_probs(n)),
                layer(2, &[1], uniform_probs(n)),
            ],
            true,
        );
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::LayersAfterTermination { layer: 1 })));
    }

    #[test]
    fn duplicate_selection_is_flagged() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let g = graph(vec![layer(0, &[0, 0], uniform_probs(n))], false);
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::DuplicateSelection { layer: 0, .. })));
    }

    #[test]
    fn unknown_operator_is_flagged() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let g = graph(vec![layer(0, &[42], uniform_probs(n))], false);
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::UnknownOperator { .. })));
    }

    #[test]
    fn too_many_layers_is_flagged() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let layers = (0..5).map(|i| layer(i, &[0], uniform_probs(n))).collect();
        let g = graph(layers, false);
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::TooManyLayers { layers: 5, max: 4 })));
    }

    #[test]
    fn unnormalized_probs_are_flagged() {
        let catalog = OperatorCatalog::standard();
        let mut probs = uniform_probs(catalog.len());
        probs[0] += 0.5;
        let g = graph(vec![layer(0, &[0], probs)], false);
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::ProbsNotNormalized { .. })));
    }

    #[test]
    fn early_stop_must_be_alone_and_marked() {
        let catalog = OperatorCatalog::standard();
        let n = catalog.len();
        let g = graph(vec![layer(0, &[5, 0], uniform_probs(n))], true);
        let violations = validate_topology(&g, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::EarlyStopNotAlone { layer: 0 })));
        // Ordering violation: id 5 before id 0 with equal probabilities.
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::SelectionNotOrdered { layer: 0 })));

        let g2 = graph(vec![layer(0, &[5], uniform_probs(n))], false);
        let violations = validate_topology(&g2, &catalog, 4);
        assert!(violations
            .iter()
            .any(|v| matches!(v, TopologyViolation::TerminationNotMarked { layer: 0 })));
    }
}
