//! Global reward and critical-path-aware credit assignment.
//!
//! The global reward is `R = S - lambda_c * C - lambda_t * (T / latency_norm)`.
//! Charging the latency term to every operator misattributes blame under
//! parallel execution, so the default credit mode applies it only to each
//! layer's bottleneck operator; the other modes exist as ablations.

use crate::accounting::ProxyConfig;
use crate::error::ConfigError;
use crate::trace::{ExecutionSummary, ExecutionTrace};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CreditMode {
    /// Latency penalty lands on the per-layer critical operator only.
    CriticalPath,
    /// Every operator carries the full global reward, latency term included.
    Uniform,
    /// Latency is ignored entirely; the reward path never reads cp_len.
    NoLatency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_c: f64,
    pub lambda_t: f64,
    pub credit_mode: CreditMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_c: 3.0,
            lambda_t: 0.005,
            credit_mode: CreditMode::CriticalPath,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambda_c < 0.0 || !self.lambda_c.is_finite() {
            return Err(ConfigError::Invalid {
                field: "reward.lambda_c",
                message: format!("must be >= 0, got {}", self.lambda_c),
            });
        }
        if self.lambda_t < 0.0 || !self.lambda_t.is_finite() {
            return Err(ConfigError::Invalid {
                field: "reward.lambda_t",
                message: format!("must be >= 0, got {}", self.lambda_t),
            });
        }
        Ok(())
    }
}

/// Reward decomposition for one executed trace. `per_operator[l][j]` aligns
/// with `trace.layers[l][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub global_reward: f64,
    pub score: u8,
    pub cost_term: f64,
    pub latency_term: f64,
    pub per_operator: Vec<Vec<f64>>,
}

impl RewardBreakdown {
    pub fn operator_rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_operator.iter().flatten().copied()
    }
}

/// `R = S - lambda_c * C - lambda_t * (cp_len / latency_norm)`.
pub fn global_reward(summary: &ExecutionSummary, cfg: &RewardConfig, proxy: &ProxyConfig) -> f64 {
    summary.score as f64
        - cfg.lambda_c * summary.total_cost
        - cfg.lambda_t * (summary.cp_len / proxy.latency_norm)
}

/// Distributes the reward over the executed operators according to the
/// configured credit mode. In `NoLatency` mode the computation never reads
/// `summary.cp_len` (verified in tests by poisoning it).
pub fn credit_assign(
    trace: &ExecutionTrace,
    summary: &ExecutionSummary,
    cfg: &RewardConfig,
    proxy: &ProxyConfig,
) -> RewardBreakdown {
    let score = summary.score as f64;
    let cost_term = cfg.lambda_c * summary.total_cost;
    let base = score - cost_term;

    let (latency_term, global) = match cfg.credit_mode {
        CreditMode::NoLatency => (0.0, base),
        _ => {
            let lt = cfg.lambda_t * (summary.cp_len / proxy.latency_norm);
            (lt, base - lt)
        }
    };

    let per_operator = trace
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|record| match cfg.credit_mode {
                    CreditMode::CriticalPath => {
                        if trace.is_critical(record) {
                            base - latency_term
                        } else {
                            base
                        }
                    }
                    CreditMode::Uniform => base - latency_term,
                    CreditMode::NoLatency => base,
                })
                .collect()
        })
        .collect();

    RewardBreakdown {
        global_reward: global,
        score: summary.score,
        cost_term,
        latency_term,
        per_operator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::OperatorId;
    use crate::trace::OperatorRecord;

    fn two_op_trace() -> ExecutionTrace {
        let layers = vec![vec![
            OperatorRecord {
                operator_id: OperatorId(0),
                layer_index: 0,
                n_out: 120,
                tool_seconds: 0.0,
                cost: 0.0,
                latency_proxy: 120.0,
            },
            OperatorRecord {
                operator_id: OperatorId(1),
                layer_index: 0,
                n_out: 80,
                tool_seconds: 0.0,
                cost: 0.0,
                latency_proxy: 80.0,
            },
        ]];
        ExecutionTrace::from_layers("q".into(), layers).scored(1)
    }

    #[test]
    fn global_reward_example() {
        let summary = ExecutionSummary {
            total_cost: 0.5,
            cp_len: 200.0,
            score: 1,
        };
        let r = global_reward(&summary, &RewardConfig::default(), &ProxyConfig::default());
        assert!((r - (-0.52)).abs() < 1e-12, "got {r}");
    }

    #[test]
    fn global_reward_zero_case() {
        let summary = ExecutionSummary {
            total_cost: 0.0,
            cp_len: 0.0,
            score: 0,
        };
        let r = global_reward(&summary, &RewardConfig::default(), &ProxyConfig::default());
        assert_eq!(r, 0.0);
    }

    #[test]
    fn lambda_t_zero_ignores_latency() {
        let cfg = RewardConfig {
            lambda_t: 0.0,
            ..RewardConfig::default()
        };
        let a = global_reward(
            &ExecutionSummary { total_cost: 0.2, cp_len: 10.0, score: 1 },
            &cfg,
            &ProxyConfig::default(),
        );
        let b = global_reward(
            &ExecutionSummary { total_cost: 0.2, cp_len: 9999.0, score: 1 },
            &cfg,
            &ProxyConfig::default(),
        );
        assert_eq!(a, b);
        assert!((a - 0.4).abs() < 1e-12);
    }

    #[test]
    fn credit_assign_penalizes_only_the_bottleneck() {
        let trace = two_op_trace();
        let breakdown = credit_assign(
            &trace,
            &trace.summary,
            &RewardConfig::default(),
            &ProxyConfig::default(),
        );
        assert!((breakdown.per_operator[0][0] - 0.988).abs() < 1e-12);
        assert_eq!(breakdown.per_operator[0][1], 1.0);
        assert!((breakdown.latency_term - 0.012).abs() < 1e-12);
    }

    #[test]
    fn uniform_mode_penalizes_everyone() {
        let trace = two_op_trace();
        let cfg = RewardConfig {
            credit_mode: CreditMode::Uniform,
            ..RewardConfig::default()
        };
        let breakdown = credit_assign(&trace, &trace.summary, &cfg, &ProxyConfig::default());
        assert!((breakdown.per_operator[0][0] - 0.988).abs() < 1e-12);
        assert!((breakdown.per_operator[0][1] - 0.988).abs() < 1e-12);
    }

    #[test]
    fn single_operator_layers_collapse_the_modes() {
        let layers = vec![vec![OperatorRecord {
            operator_id: OperatorId(2),
            layer_index: 0,
            n_out: 300,
            tool_seconds: 0.0,
            cost: 0.1,
            latency_proxy: 300.0,
        }]];
        let trace = ExecutionTrace::from_layers("q".into(), layers).scored(1);
        let cp = credit_assign(
            &trace,
            &trace.summary,
            &RewardConfig::default(),
            &ProxyConfig::default(),
        );
        let uni = credit_assign(
            &trace,
            &trace.summary,
            &RewardConfig {
                credit_mode: CreditMode::Uniform,
                ..RewardConfig::default()
            },
            &ProxyConfig::default(),
        );
        assert_eq!(cp.per_operator, uni.per_operator);
    }

    #[test]
    fn no_latency_mode_never_reads_cp_len() {
        let trace = two_op_trace();
        // Poisoned cp_len: any read would propagate the NaN.
        let summary = ExecutionSummary {
            cp_len: f64::NAN,
            ..trace.summary.clone()
        };
        let cfg = RewardConfig {
            credit_mode: CreditMode::NoLatency,
            ..RewardConfig::default()
        };
        let breakdown = credit_assign(&trace, &summary, &cfg, &ProxyConfig::default());
        assert!(breakdown.global_reward.is_finite());
        assert_eq!(breakdown.latency_term, 0.0);
        for r in breakdown.operator_rewards() {
            assert!(r.is_finite());
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn lambda_t_zero_matches_no_latency_mode() {
        let trace = two_op_trace();
        let zero = RewardConfig {
            lambda_t: 0.0,
            ..RewardConfig::default()
        };
        let none = RewardConfig {
            credit_mode: CreditMode::NoLatency,
            ..RewardConfig::default()
        };
        let a = credit_assign(&trace, &trace.summary, &zero, &ProxyConfig::default());
        let b = credit_assign(&trace, &trace.summary, &none, &ProxyConfig::default());
        assert_eq!(a.per_operator, b.per_operator);
        assert_eq!(a.global_reward, b.global_reward);
    }

    #[test]
    fn critical_reward_never_exceeds_noncritical_in_layer() {
        let trace = two_op_trace();
        let breakdown = credit_assign(
            &trace,
            &trace.summary,
            &RewardConfig::default(),
            &ProxyConfig::default(),
        );
        assert!(breakdown.per_operator[0][0] <= breakdown.per_operator[0][1]);
    }
}
