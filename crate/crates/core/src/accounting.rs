//! Latency proxies, critical paths and cost totals.
//!
//! Under layer-parallel execution the end-to-end latency of a trace is the
//! sum over layers of the slowest operator's proxy, while cost accumulates
//! over every operator. The two diverge exactly when layers are wide.

use crate::catalog::OperatorId;
use crate::trace::{ExecutionTrace, OperatorRecord};
use serde::{Deserialize, Serialize};

/// Scaling knobs for the latency proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Virtual tokens per tool-second.
    pub gamma: f64,
    /// Divisor applied to the critical-path length inside the reward.
    pub latency_norm: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            gamma: 50.0,
            latency_norm: 50.0,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        if !(self.gamma > 0.0) {
            return Err(crate::error::ConfigError::Invalid {
                field: "proxy.gamma",
                message: format!("must be > 0, got {}", self.gamma),
            });
        }
        if !(self.latency_norm > 0.0) {
            return Err(crate::error::ConfigError::Invalid {
                field: "proxy.latency_norm",
                message: format!("must be > 0, got {}", self.latency_norm),
            });
        }
        Ok(())
    }
}

/// Virtual-token latency of one invocation: `n_out + gamma * tool_seconds`.
pub fn latency_proxy(n_out: u64, tool_seconds: f64, gamma: f64) -> f64 {
    n_out as f64 + gamma * tool_seconds
}

/// Critical path of raw layer records: per-layer max proxy (ties by
/// ascending operator id) and the sum of those maxima.
pub fn critical_path_of_layers(layers: &[Vec<OperatorRecord>]) -> (f64, Vec<OperatorId>) {
    let mut cp_len = 0.0;
    let mut criticals = Vec::with_capacity(layers.len());
    for layer in layers {
        let critical = layer
            .iter()
            .max_by(|a, b| {
                a.latency_proxy
                    .partial_cmp(&b.latency_proxy)
                    .expect("finite latency proxies")
                    // On ties, prefer the lower id: max_by keeps the later
                    // element on Equal, so order by descending id.
                    .then(b.operator_id.cmp(&a.operator_id))
            })
            .expect("layers must be non-empty");
        cp_len += critical.latency_proxy;
        criticals.push(critical.operator_id);
    }
    (cp_len, criticals)
}

/// Critical path of a finished trace.
pub fn critical_path(trace: &ExecutionTrace) -> (f64, Vec<OperatorId>) {
    critical_path_of_layers(&trace.layers)
}

pub fn total_cost_of_layers(layers: &[Vec<OperatorRecord>]) -> f64 {
    layers.iter().flatten().map(|r| r.cost).sum()
}

/// Total cost of a finished trace; the empty trace costs zero.
pub fn total_cost(trace: &ExecutionTrace) -> f64 {
    total_cost_of_layers(&trace.layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: u32, layer: usize, proxy: f64) -> OperatorRecord {
        OperatorRecord {
            operator_id: OperatorId(id),
            layer_index: layer,
            n_out: 0,
            tool_seconds: 0.0,
            cost: 0.0,
            latency_proxy: proxy,
        }
    }

    fn record_cost(id: u32, layer: usize, cost: f64) -> OperatorRecord {
        OperatorRecord {
            operator_id: OperatorId(id),
            layer_index: layer,
            n_out: 0,
            tool_seconds: 0.0,
            cost,
            latency_proxy: 0.0,
        }
    }

    #[test]
    fn latency_proxy_examples() {
        assert_eq!(latency_proxy(100, 2.0, 50.0), 200.0);
        assert_eq!(latency_proxy(0, 0.0, 50.0), 0.0);
        assert_eq!(latency_proxy(37, 0.5, 10.0), 42.0);
    }

    #[test]
    fn critical_path_examples() {
        let layers = vec![
            vec![record(0, 0, 5.0), record(1, 0, 3.0)],
            vec![record(2, 1, 2.0)],
        ];
        let (cp, ids) = critical_path_of_layers(&layers);
        assert_eq!(cp, 7.0);
        assert_eq!(ids, vec![OperatorId(0), OperatorId(2)]);
    }

    #[test]
    fn critical_path_tie_takes_lower_id() {
        let layers = vec![vec![record(2, 0, 4.0), record(7, 0, 4.0)]];
        let (cp, ids) = critical_path_of_layers(&layers);
        assert_eq!(cp, 4.0);
        assert_eq!(ids, vec![OperatorId(2)]);
    }

    #[test]
    fn total_cost_examples() {
        let layers = vec![
            vec![record_cost(0, 0, 0.1), record_cost(1, 0, 0.2)],
            vec![record_cost(2, 1, 0.3)],
        ];
        assert!((total_cost_of_layers(&layers) - 0.6).abs() < 1e-12);
        assert_eq!(total_cost_of_layers(&[]), 0.0);
    }

    /// Exhaustive oracle: enumerate every one-operator-per-layer path and
    /// take the maximum path sum. Independent of the `max`-based route.
    pub(crate) fn brute_force_cp(layers: &[Vec<OperatorRecord>]) -> f64 {
        fn walk(layers: &[Vec<OperatorRecord>], depth: usize, acc: f64, best: &mut f64) {
            if depth == layers.len() {
                if acc > *best {
                    *best = acc;
                }
                return;
            }
            for r in &layers[depth] {
                walk(layers, depth + 1, acc + r.latency_proxy, best);
            }
        }
        let mut best = f64::NEG_INFINITY;
        walk(layers, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_random_layers() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let depth = rng.random_range(1..=4);
            let layers: Vec<Vec<OperatorRecord>> = (0..depth)
                .map(|l| {
                    let width = rng.random_range(1..=6);
                    (0..width)
                        .map(|i| record(i as u32, l, rng.random_range(0.0..500.0)))
                        .collect()
                })
                .collect();
            let (cp, _) = critical_path_of_layers(&layers);
            assert_eq!(cp, brute_force_cp(&layers));
        }
    }

    proptest! {
        /// cp_len never exceeds the total proxy mass, and never falls below
        /// any single operator's proxy.
        #[test]
        fn cp_len_bounds(layout in proptest::collection::vec(
            proptest::collection::vec(0.0f64..1000.0, 1..6), 1..5)
        ) {
            let layers: Vec<Vec<OperatorRecord>> = layout.iter().enumerate()
                .map(|(l, ws)| ws.iter().enumerate()
                    .map(|(i, &w)| record(i as u32, l, w)).collect())
                .collect();
            let (cp, ids) = critical_path_of_layers(&layers);
            let all: f64 = layers.iter().flatten().map(|r| r.latency_proxy).sum();
            let max_single = layers.iter().flatten()
                .map(|r| r.latency_proxy).fold(0.0f64, f64::max);
            prop_assert!(cp <= all + 1e-9);
            prop_assert!(cp >= max_single - 1e-9);
            prop_assert_eq!(ids.len(), layers.len());
        }

        /// Increasing a single proxy never decreases cp_len.
        #[test]
        fn cp_len_is_monotone(
            layout in proptest::collection::vec(
                proptest::collection::vec(0.0f64..1000.0, 1..6), 1..5),
            bump in 0.0f64..500.0,
            pick in 0usize..64,
        ) {
            let mut layers: Vec<Vec<OperatorRecord>> = layout.iter().enumerate()
                .map(|(l, ws)| ws.iter().enumerate()
                    .map(|(i, &w)| record(i as u32, l, w)).collect())
                .collect();
            let (before, _) = critical_path_of_layers(&layers);
            let total: usize = layers.iter().map(Vec::len).sum();
            let target = pick % total;
            let mut seen = 0;
            'outer: for layer in &mut layers {
                for r in layer.iter_mut() {
                    if seen == target {
                        r.latency_proxy += bump;
                        break 'outer;
                    }
                    seen += 1;
                }
            }
            let (after, _) = critical_path_of_layers(&layers);
            prop_assert!(after >= before - 1e-9);
        }
    }
}
