//! Task environments: queries, grading, and the built-in simulated
//! scenarios used for desk-scale experiments.
//!
//! Each scenario isolates one behavior:
//! - `trivial-uniform`: every operator always answers correctly; sanity runs.
//! - `parallel-advantage`: correct answers need accumulated evidence, and the
//!   evidence can be bought either with depth (cheap, long critical path) or
//!   with parallel width (slightly costlier, short critical path). Cost-only
//!   training prefers the deep route, latency-aware training the wide one.
//! - `difficulty-mixture`: easy queries are answerable immediately while hard
//!   ones need several layers, rewarding query-conditioned depth and early
//!   exits.

use crate::catalog::{OperatorCatalog, OperatorKind};
use crate::dataset::DatasetRecord;
use crate::error::ConfigError;
use crate::executor::{normalize_answer, Backend};
use crate::features::QueryFeatures;
use crate::seeds;
use crate::sim::{SimBackend, SimDist, SimOperatorModel, SimOperatorProfile, SimTask, SuccessParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

/// One generated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub query_id: String,
    pub feature_vector: Vec<f64>,
    pub difficulty: f64,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioFamily {
    TrivialUniform,
    ParallelAdvantage,
    DifficultyMixture,
}

impl ScenarioFamily {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioFamily::TrivialUniform => "trivial-uniform",
            ScenarioFamily::ParallelAdvantage => "parallel-advantage",
            ScenarioFamily::DifficultyMixture => "difficulty-mixture",
        }
    }

    fn short(self) -> &'static str {
        match self {
            ScenarioFamily::TrivialUniform => "tu",
            ScenarioFamily::ParallelAdvantage => "pa",
            ScenarioFamily::DifficultyMixture => "dm",
        }
    }
}

impl FromStr for ScenarioFamily {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trivial-uniform" => Ok(ScenarioFamily::TrivialUniform),
            "parallel-advantage" => Ok(ScenarioFamily::ParallelAdvantage),
            "difficulty-mixture" => Ok(ScenarioFamily::DifficultyMixture),
            other => Err(ConfigError::UnknownScenario(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: ScenarioFamily,
    pub n_tasks: usize,
    pub feature_dim: usize,
}

fn profile(n_out: f64, tool: f64, cost: f64, boost: f64, quality: f64) -> SimOperatorProfile {
    SimOperatorProfile {
        n_out: SimDist::Fixed(n_out),
        tool_seconds: SimDist::Fixed(tool),
        cost,
        boost,
        answer_quality: quality,
    }
}

fn standard_profiles(entries: &[(&OperatorKind, SimOperatorProfile)]) -> BTreeMap<String, SimOperatorProfile> {
    entries
        .iter()
        .map(|(k, p)| (k.name().to_string(), p.clone()))
        .collect()
}

/// All operators identical and always correct.
pub fn trivial_uniform_model() -> SimOperatorModel {
    use OperatorKind as K;
    let p = profile(100.0, 0.0, 0.01, 1.0, 1.0);
    let profiles = standard_profiles(&[
        (&K::Generate, p.clone()),
        (&K::GenerateCot, p.clone()),
        (&K::MultiGenerateCot, p.clone()),
        (&K::ScEnsemble, p.clone()),
        (&K::SelfRefine, p.clone()),
        (&K::EarlyStop, profile(0.0, 0.0, 0.0, 1.0, 0.0)),
        (&K::CustomCodeGenerate, p.clone()),
        (&K::Test, p.clone()),
        (&K::Programmer, p),
    ]);
    SimOperatorModel {
        profiles,
        success: SuccessParams {
            difficulty_exponent: 0.0,
            layer_boost_cap: None,
        },
    }
}

/// Evidence can be accumulated serially (cheap, deep) or in parallel
/// (costlier, shallow). At difficulty 0.5 the base success is 0.25, each
/// plain operator doubles later layers' success, refinement kinds triple it,
/// and the parallel multi-candidate generator is worth three plain operators.
pub fn parallel_advantage_model() -> SimOperatorModel {
    use OperatorKind as K;
    let profiles = standard_profiles(&[
        (&K::Generate, profile(1000.0, 0.0, 0.010, 2.0, 1.0)),
        (&K::GenerateCot, profile(1000.0, 0.0, 0.030, 2.0, 1.0)),
        (&K::MultiGenerateCot, profile(1000.0, 0.0, 0.036, 8.0, 1.0)),
        (&K::ScEnsemble, profile(800.0, 0.0, 0.030, 3.0, 1.0)),
        (&K::SelfRefine, profile(800.0, 0.0, 0.030, 3.0, 1.0)),
        (&K::EarlyStop, profile(0.0, 0.0, 0.0, 1.0, 0.0)),
        (&K::CustomCodeGenerate, profile(1000.0, 0.0, 0.030, 2.0, 1.0)),
        (&K::Test, profile(500.0, 10.0, 0.030, 2.0, 1.0)),
        (&K::Programmer, profile(500.0, 10.0, 0.030, 2.0, 1.0)),
    ]);
    SimOperatorModel {
        profiles,
        success: SuccessParams {
            difficulty_exponent: 4.0,
            layer_boost_cap: None,
        },
    }
}

/// Easy queries (difficulty 0) are answerable at layer 0; hard ones
/// (difficulty 1) need three prior layers because the within-layer boost is
/// capped, so width cannot substitute for depth here.
pub fn difficulty_mixture_model() -> SimOperatorModel {
    let mut model = parallel_advantage_model();
    model.success = SuccessParams {
        difficulty_exponent: 3.0,
        layer_boost_cap: Some(2.0),
    };
    model
}

pub fn scenario_model(family: ScenarioFamily) -> SimOperatorModel {
    match family {
        ScenarioFamily::TrivialUniform => trivial_uniform_model(),
        ScenarioFamily::ParallelAdvantage => parallel_advantage_model(),
        ScenarioFamily::DifficultyMixture => difficulty_mixture_model(),
    }
}

fn task_difficulty(family: ScenarioFamily, index: usize) -> f64 {
    match family {
        ScenarioFamily::TrivialUniform => 0.0,
        ScenarioFamily::ParallelAdvantage => 0.5,
        ScenarioFamily::DifficultyMixture => {
            if index % 2 == 0 {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Deterministic task suite plus the operator model for the scenario.
pub fn gen_synthetic_suite(
    spec: &ScenarioSpec,
    seed: u64,
) -> (Vec<SyntheticTask>, SimOperatorModel) {
    let model = scenario_model(spec.family);
    let tasks = (0..spec.n_tasks)
        .map(|i| {
            let difficulty = task_difficulty(spec.family, i);
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::combine(&[seed, spec.family.short().len() as u64, i as u64]));
            let mut feature_vector = Vec::with_capacity(spec.feature_dim);
            for d in 0..spec.feature_dim {
                feature_vector.push(match d {
                    0 => 1.0,
                    1 => difficulty,
                    _ => rng.random_range(-1.0..1.0),
                });
            }
            SyntheticTask {
                query_id: format!("{}-{i:04}", spec.family.short()),
                feature_vector,
                difficulty,
                answer: format!("ans-{i}"),
            }
        })
        .collect();
    (tasks, model)
}

/// Binary exact-match grading after normalization. Code tasks without a
/// sandboxed checker grade by answer-token match as well.
pub fn score_answer(answer: &str, reference: &str) -> u8 {
    u8::from(normalize_answer(answer) == normalize_answer(reference))
}

/// One gradable query with its controller features.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub features: QueryFeatures,
    pub answer: String,
    pub difficulty: f64,
    pub tests: Vec<String>,
}

/// Queries plus the backend that answers them.
#[derive(Clone)]
pub struct Environment {
    pub catalog: OperatorCatalog,
    pub tasks: Vec<Task>,
    pub backend: Arc<dyn Backend>,
    /// Present for simulated environments; None over live backends.
    pub model: Option<SimOperatorModel>,
}

impl Environment {
    /// Simulated environment over the standard catalog.
    pub fn scenario(family: ScenarioFamily, n_tasks: usize, feature_dim: usize, seed: u64) -> Self {
        let spec = ScenarioSpec {
            family,
            n_tasks,
            feature_dim,
        };
        let (synthetic, model) = gen_synthetic_suite(&spec, seed);
        Environment::from_synthetic(OperatorCatalog::standard(), synthetic, model)
    }

    pub fn from_synthetic(
        catalog: OperatorCatalog,
        synthetic: Vec<SyntheticTask>,
        model: SimOperatorModel,
    ) -> Self {
        let sim_tasks = synthetic
            .iter()
            .map(|t| {
                (
                    t.query_id.clone(),
                    SimTask {
                        difficulty: t.difficulty,
                        answer: t.answer.clone(),
                    },
                )
            })
            .collect();
        let tasks = synthetic
            .into_iter()
            .map(|t| Task {
                features: QueryFeatures::new(t.query_id, t.feature_vector),
                answer: t.answer,
                difficulty: t.difficulty,
                tests: Vec::new(),
            })
            .collect();
        let backend = Arc::new(SimBackend::new(model.clone(), sim_tasks));
        Environment {
            catalog,
            tasks,
            backend,
            model: Some(model),
        }
    }

    /// Dataset-backed environment: features come from text hashing, answers
    /// from the reference field. The backend decides whether answers are
    /// simulated or produced by a live model.
    pub fn from_dataset(
        catalog: OperatorCatalog,
        records: Vec<DatasetRecord>,
        feature_dim: usize,
        backend: Arc<dyn Backend>,
        model: Option<SimOperatorModel>,
    ) -> Self {
        let tasks = records
            .into_iter()
            .map(|r| Task {
                features: QueryFeatures::from_text(r.id, &r.question, feature_dim),
                answer: r.answer,
                difficulty: 0.5,
                tests: r.tests,
            })
            .collect();
        Environment {
            catalog,
            tasks,
            backend,
            model,
        }
    }

    pub fn score(&self, answer: &str, task: &Task) -> u8 {
        score_answer(answer, &task.answer)
    }
}
