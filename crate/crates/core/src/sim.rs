//! Simulated operator behavior.
//!
//! Stands in for real model/tool calls so training dynamics can be studied
//! at desk scale. Responses are a pure function of (model, operator kind,
//! derived seed, task), so traces replay exactly under any concurrency.
//!
//! Success model: an operator answering at layer `l` is correct with
//! probability
//!
//! ```text
//! p = min(1, quality(kind) * 2^(-difficulty_exponent * d) * prod_{l' < l} B(l'))
//! B(l') = min(layer_boost_cap, prod_{o in layer l'} boost(kind(o)))
//! ```
//!
//! i.e. base success decays with task difficulty, every previously executed
//! operator multiplies it up (refinement kinds carry a larger boost), wide
//! layers compound within the layer up to an optional cap, and the whole
//! thing saturates at certainty.

use crate::catalog::OperatorKind;
use crate::error::BackendError;
use crate::executor::{Backend, BackendRequest, BackendResponse};
use crate::seeds;
use async_trait::async_trait;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Sampling distribution for a nonnegative quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimDist {
    Fixed(f64),
    LogNormal { mu: f64, sigma: f64 },
}

impl SimDist {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            SimDist::Fixed(v) => v.max(0.0),
            SimDist::LogNormal { mu, sigma } => {
                let dist = rand_distr::LogNormal::new(mu, sigma).expect("valid lognormal");
                rng.sample(dist)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SimDist::Fixed(v) => v.max(0.0),
            SimDist::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, SimDist::Fixed(_))
    }
}

/// Per-kind behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOperatorProfile {
    pub n_out: SimDist,
    pub tool_seconds: SimDist,
    pub cost: f64,
    /// Multiplicative contribution to the success of later layers.
    pub boost: f64,
    /// Multiplier in [0, 1] on this kind's own success when it answers.
    pub answer_quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessParams {
    /// Base success is `2^(-difficulty_exponent * difficulty)`.
    pub difficulty_exponent: f64,
    /// Optional cap on the within-layer boost product.
    pub layer_boost_cap: Option<f64>,
}

/// The full simulated world model: per-kind profiles plus the success shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOperatorModel {
    /// Keyed by kind name; BTreeMap keeps serialization deterministic.
    pub profiles: BTreeMap<String, SimOperatorProfile>,
    pub success: SuccessParams,
}

impl SimOperatorModel {
    pub fn profile(&self, kind: &OperatorKind) -> Option<&SimOperatorProfile> {
        self.profiles.get(kind.name())
    }

    pub fn boost_of(&self, kind: &OperatorKind) -> f64 {
        self.profile(kind).map(|p| p.boost).unwrap_or(1.0)
    }

    /// Probability that `kind`'s output is correct given the operator sets
    /// executed in every previous layer and the task difficulty.
    pub fn success_probability(
        &self,
        kind: &OperatorKind,
        prior_kinds: &[Vec<OperatorKind>],
        difficulty: f64,
    ) -> f64 {
        let quality = self
            .profile(kind)
            .map(|p| p.answer_quality)
            .unwrap_or(0.0);
        let base = (2.0f64).powf(-self.success.difficulty_exponent * difficulty);
        let mut accumulated = 1.0;
        for layer in prior_kinds {
            let mut layer_boost = 1.0;
            for k in layer {
                layer_boost *= self.boost_of(k);
            }
            if let Some(cap) = self.success.layer_boost_cap {
                layer_boost = layer_boost.min(cap);
            }
            accumulated *= layer_boost;
        }
        (quality * base * accumulated).clamp(0.0, 1.0)
    }
}

/// Task-side information the simulator needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub difficulty: f64,
    pub answer: String,
}

/// Backend that synthesizes operator responses from a [`SimOperatorModel`].
pub struct SimBackend {
    model: SimOperatorModel,
    tasks: HashMap<String, SimTask>,
}

impl SimBackend {
    pub fn new(model: SimOperatorModel, tasks: HashMap<String, SimTask>) -> Self {
        SimBackend { model, tasks }
    }

    pub fn model(&self) -> &SimOperatorModel {
        &self.model
    }
}

#[async_trait]
impl Backend for SimBackend {
    async fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        if request.kind.is_early_stop() {
            return Err(BackendError::EarlyStopInvoked);
        }
        let task = self
            .tasks
            .get(&request.query_id)
            .ok_or_else(|| BackendError::UnknownQuery {
                query_id: request.query_id.clone(),
            })?;
        let profile = self
            .model
            .profile(&request.kind)
            .ok_or_else(|| BackendError::UnknownBinding {
                binding: request.kind.name().to_string(),
            })?;

        let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
        let n_out = profile.n_out.sample(&mut rng).round().max(0.0) as u64;
        let tool_seconds = profile.tool_seconds.sample(&mut rng).max(0.0);
        let p = self
            .model
            .success_probability(&request.kind, &request.prior_kinds, task.difficulty);

        let count = request.kind.expected_outputs();
        let mut outputs = Vec::with_capacity(count);
        for candidate in 0..count {
            let draw: f64 = rng.random();
            if draw < p {
                outputs.push(task.answer.clone());
            } else {
                // Distinct per (operator, candidate, seed) so wrong answers
                // never accidentally form a majority.
                let tag = seeds::combine(&[request.seed, candidate as u64]);
                outputs.push(format!("wrong-{tag:016x}"));
            }
        }

        Ok(BackendResponse {
            outputs,
            n_out,
            tool_seconds,
            cost: profile.cost,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::OperatorId;
    use crate::features::QueryFeatures;

    fn model() -> SimOperatorModel {
        let mut profiles = BTreeMap::new();
        profiles.insert(
            "Generate".to_string(),
            SimOperatorProfile {
                n_out: SimDist::Fixed(100.0),
                tool_seconds: SimDist::Fixed(0.0),
                cost: 0.01,
                boost: 2.0,
                answer_quality: 1.0,
            },
        );
        SimOperatorModel {
            profiles,
            success: SuccessParams {
                difficulty_exponent: 4.0,
                layer_boost_cap: None,
            },
        }
    }

    #[test]
    fn success_probability_composes_multiplicatively() {
        let m = model();
        let g = OperatorKind::Generate;
        // difficulty 0.5 -> base 0.25.
        assert!((m.success_probability(&g, &[], 0.5) - 0.25).abs() < 1e-12);
        let one_layer = vec![vec![OperatorKind::Generate]];
        assert!((m.success_probability(&g, &one_layer, 0.5) - 0.5).abs() < 1e-12);
        let two_layers = vec![vec![OperatorKind::Generate], vec![OperatorKind::Generate]];
        assert!((m.success_probability(&g, &two_layers, 0.5) - 1.0).abs() < 1e-12);
        // Saturation: more history cannot exceed certainty.
        let three = vec![
            vec![OperatorKind::Generate],
            vec![OperatorKind::Generate],
            vec![OperatorKind::Generate],
        ];
        assert_eq!(m.success_probability(&g, &three, 0.5), 1.0);
    }

    #[test]
    fn layer_cap_limits_wide_layers() {
        let mut m = model();
        m.success.layer_boost_cap = Some(2.0);
        let wide = vec![vec![OperatorKind::Generate, OperatorKind::Generate]];
        let g = OperatorKind::Generate;
        // Without the cap this would be 0.25 * 4 = 1.0.
        assert!((m.success_probability(&g, &wide, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn responses_replay_exactly() {
        let tasks: HashMap<String, SimTask> = [(
            "q0".to_string(),
            SimTask {
                difficulty: 0.5,
                answer: "42".into(),
            },
        )]
        .into();
        let backend = SimBackend::new(model(), tasks);
        let q = QueryFeatures::new("q0", vec![]);
        let request = BackendRequest::new(
            OperatorKind::Generate,
            "generate".into(),
            &q,
            0,
            vec![],
            vec![],
            7,
            OperatorId(0),
        );
        let rt = tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap();
        let a = rt.block_on(backend.invoke(&request)).unwrap();
        let b = rt.block_on(backend.invoke(&request)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_out, 100);
        assert_eq!(a.cost, 0.01);
    }

    #[test]
    fn early_stop_is_rejected() {
        let backend = SimBackend::new(model(), Default::default());
        let q = QueryFeatures::new("q0", vec![]);
        let request = BackendRequest::new(
            OperatorKind::EarlyStop,
            "earlystop".into(),
            &q,
            0,
            vec![],
            vec![],
            7,
            OperatorId(5),
        );
        let rt = tokio::runtime::Builder::new_current_thread()
            .build()
            .unwrap();
        let err = rt.block_on(backend.invoke(&request)).unwrap_err();
        assert!(matches!(err, BackendError::EarlyStopInvoked));
    }

    #[test]
    fn lognormal_sampling_is_seeded() {
        let dist = SimDist::LogNormal { mu: 4.0, sigma: 0.5 };
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(dist.sample(&mut a), dist.sample(&mut b));
        assert!(dist.sample(&mut a) > 0.0);
    }
}
