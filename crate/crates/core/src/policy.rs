//! The query-conditioned controller.
//!
//! For each layer the controller scores every catalog operator with a small
//! query-aware network, normalizes the scores to a distribution, and selects
//! operators in descending order until the cumulative probability exceeds the
//! activation threshold. Selecting EarlyStop terminates generation. Gradients
//! of the selection log-probabilities are computed analytically; no autodiff.
//!
//! Score path for layer `l`:
//!   z = W_q x + b_q + hist + L[l]      hist = W_h mean(E[selected so far]) + b_h
//!   h = tanh(z)                        (hist is the zero vector when empty)
//!   s_o = <E[o], h>
//!   p = softmax(s / temperature)

use crate::catalog::{OperatorCatalog, OperatorId};
use crate::error::{CheckpointError, ConfigError, PolicyError};
use crate::features::QueryFeatures;
use crate::topology::{LayerSelection, TopologyGraph};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Gumbel-perturbed threshold selection, for training-time exploration.
    Sample,
    /// Deterministic threshold selection.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Activation threshold the cumulative selection mass must exceed.
    pub thres: f64,
    /// Maximum number of layers.
    pub l_max: usize,
    /// Hidden width.
    pub d_h: usize,
    /// Query feature dimension.
    pub d_in: usize,
    /// Softmax temperature.
    pub temperature: f64,
    pub mode: SelectionMode,
    /// Optional cap on operators per layer; the threshold is the only stop
    /// rule when unset.
    pub max_width: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            thres: 0.3,
            l_max: 4,
            d_h: 64,
            d_in: 16,
            temperature: 1.0,
            mode: SelectionMode::Greedy,
            max_width: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.thres > 0.0 && self.thres < 1.0) {
            return Err(ConfigError::Invalid {
                field: "controller.thres",
                message: format!("must be in (0, 1), got {}", self.thres),
            });
        }
        if self.l_max < 1 {
            return Err(ConfigError::Invalid {
                field: "controller.l_max",
                message: "must be >= 1".into(),
            });
        }
        if self.d_h < 1 {
            return Err(ConfigError::Invalid {
                field: "controller.d_h",
                message: "must be >= 1".into(),
            });
        }
        if self.d_in < 1 {
            return Err(ConfigError::Invalid {
                field: "controller.d_in",
                message: "must be >= 1".into(),
            });
        }
        if !(self.temperature > 0.0) {
            return Err(ConfigError::Invalid {
                field: "controller.temperature",
                message: format!("must be > 0, got {}", self.temperature),
            });
        }
        if self.max_width == Some(0) {
            return Err(ConfigError::Invalid {
                field: "controller.max_width",
                message: "must be >= 1 when set".into(),
            });
        }
        Ok(())
    }
}

/// Controller weights. Immutable during inference; training constructs
/// updates through [`PolicyGrad`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub query_w: Array2<f64>,     // d_h x d_in
    pub query_b: Array1<f64>,     // d_h
    pub op_embed: Array2<f64>,    // n_ops x d_h
    pub hist_w: Array2<f64>,      // d_h x d_h
    pub hist_b: Array1<f64>,      // d_h
    pub layer_embed: Array2<f64>, // l_max x d_h
}

impl PolicyParams {
    /// Seeded uniform init in `[-1/sqrt(d_h), 1/sqrt(d_h)]`.
    pub fn init(n_ops: usize, cfg: &ControllerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (cfg.d_h as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        let query_w = draw(cfg.d_h, cfg.d_in);
        let op_embed = draw(n_ops, cfg.d_h);
        let hist_w = draw(cfg.d_h, cfg.d_h);
        let layer_embed = draw(cfg.l_max, cfg.d_h);
        PolicyParams {
            query_w,
            query_b: Array1::zeros(cfg.d_h),
            op_embed,
            hist_w,
            hist_b: Array1::zeros(cfg.d_h),
            layer_embed,
        }
    }

    pub fn zeros(n_ops: usize, cfg: &ControllerConfig) -> Self {
        PolicyParams {
            query_w: Array2::zeros((cfg.d_h, cfg.d_in)),
            query_b: Array1::zeros(cfg.d_h),
            op_embed: Array2::zeros((n_ops, cfg.d_h)),
            hist_w: Array2::zeros((cfg.d_h, cfg.d_h)),
            hist_b: Array1::zeros(cfg.d_h),
            layer_embed: Array2::zeros((cfg.l_max, cfg.d_h)),
        }
    }

    pub fn n_ops(&self) -> usize {
        self.op_embed.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.op_embed.ncols()
    }

    pub fn d_in(&self) -> usize {
        self.query_w.ncols()
    }

    pub fn l_max(&self) -> usize {
        self.layer_embed.nrows()
    }

    /// Gradient-ascent step: `theta += step * grad`.
    pub fn ascend(&mut self, grad: &PolicyGrad, step: f64) {
        self.query_w.scaled_add(step, &grad.query_w);
        self.query_b.scaled_add(step, &grad.query_b);
        self.op_embed.scaled_add(step, &grad.op_embed);
        self.hist_w.scaled_add(step, &grad.hist_w);
        self.hist_b.scaled_add(step, &grad.hist_b);
        self.layer_embed.scaled_add(step, &grad.layer_embed);
    }

    /// Total number of scalar parameters.
    pub fn flat_len(&self) -> usize {
        self.query_w.len()
            + self.query_b.len()
            + self.op_embed.len()
            + self.hist_w.len()
            + self.hist_b.len()
            + self.layer_embed.len()
    }

    fn flat_slot(&mut self, index: usize) -> &mut f64 {
        let tensors: [&mut dyn FlatTensor; 6] = [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.op_embed,
            &mut self.hist_w,
            &mut self.hist_b,
            &mut self.layer_embed,
        ];
        let mut offset = index;
        for t in tensors {
            if offset < t.flat_len() {
                return t.flat_mut(offset);
            }
            offset -= t.flat_len();
        }
        panic!("flat index {index} out of range");
    }

    /// Adds `delta` to the scalar parameter at `index` (flat, row-major,
    /// tensor order: query_w, query_b, op_embed, hist_w, hist_b, layer_embed).
    /// Used by finite-difference checks.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        *self.flat_slot(index) += delta;
    }
}

trait FlatTensor {
    fn flat_len(&self) -> usize;
    fn flat_mut(&mut self, i: usize) -> &mut f64;
}

impl FlatTensor for Array1<f64> {
    fn flat_len(&self) -> usize {
        self.len()
    }
    fn flat_mut(&mut self, i: usize) -> &mut f64 {
        self.get_mut(i).expect("in range")
    }
}

impl FlatTensor for Array2<f64> {
    fn flat_len(&self) -> usize {
        self.len()
    }
    fn flat_mut(&mut self, i: usize) -> &mut f64 {
        self.as_slice_mut().expect("standard layout").get_mut(i).expect("in range")
    }
}

/// Gradient accumulator mirroring [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub query_w: Array2<f64>,
    pub query_b: Array1<f64>,
    pub op_embed: Array2<f64>,
    pub hist_w: Array2<f64>,
    pub hist_b: Array1<f64>,
    pub layer_embed: Array2<f64>,
}

impl PolicyGrad {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        PolicyGrad {
            query_w: Array2::zeros(params.query_w.raw_dim()),
            query_b: Array1::zeros(params.query_b.raw_dim()),
            op_embed: Array2::zeros(params.op_embed.raw_dim()),
            hist_w: Array2::zeros(params.hist_w.raw_dim()),
            hist_b: Array1::zeros(params.hist_b.raw_dim()),
            layer_embed: Array2::zeros(params.layer_embed.raw_dim()),
        }
    }

    pub fn add(&mut self, other: &PolicyGrad) {
        self.query_w += &other.query_w;
        self.query_b += &other.query_b;
        self.op_embed += &other.op_embed;
        self.hist_w += &other.hist_w;
        self.hist_b += &other.hist_b;
        self.layer_embed += &other.layer_embed;
    }

    pub fn scale(&mut self, factor: f64) {
        self.query_w *= factor;
        self.query_b *= factor;
        self.op_embed *= factor;
        self.hist_w *= factor;
        self.hist_b *= factor;
        self.layer_embed *= factor;
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&x| x == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Flat view in the same order as [`PolicyParams::nudge`].
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.query_w.len()
                + self.query_b.len()
                + self.op_embed.len()
                + self.hist_w.len()
                + self.hist_b.len()
                + self.layer_embed.len(),
        );
        v.extend(self.query_w.iter());
        v.extend(self.query_b.iter());
        v.extend(self.op_embed.iter());
        v.extend(self.hist_w.iter());
        v.extend(self.hist_b.iter());
        v.extend(self.layer_embed.iter());
        v
    }
}

struct Forward {
    h: Array1<f64>,
    probs: Vec<f64>,
    hist_mean: Option<Array1<f64>>,
}

fn softmax(scores: ArrayView1<f64>, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn forward(
    params: &PolicyParams,
    query: &QueryFeatures,
    history: &[OperatorId],
    layer_index: usize,
    temperature: f64,
) -> Result<Forward, PolicyError> {
    if query.dim() != params.d_in() {
        return Err(PolicyError::DimensionMismatch {
            expected: params.d_in(),
            found: query.dim(),
        });
    }
    if layer_index >= params.l_max() {
        return Err(PolicyError::LayerOutOfRange {
            index: layer_index,
            max: params.l_max(),
        });
    }
    for &id in history {
        if id.index() >= params.n_ops() {
            return Err(PolicyError::UnknownOperator {
                id: id.0,
                catalog: params.n_ops(),
            });
        }
    }

    let x = Array1::from_vec(query.feature_vector.clone());
    let mut z = params.query_w.dot(&x) + &params.query_b;
    z += &params.layer_embed.row(layer_index);

    let hist_mean = if history.is_empty() {
        None
    } else {
        let mut m = Array1::<f64>::zeros(params.d_h());
        for &id in history {
            m += &params.op_embed.row(id.index());
        }
        m /= history.len() as f64;
        z += &(params.hist_w.dot(&m) + &params.hist_b);
        Some(m)
    };

    let h = z.mapv(f64::tanh);
    let scores = params.op_embed.dot(&h);
    let probs = softmax(scores.view(), temperature);
    Ok(Forward { h, probs, hist_mean })
}

fn flatten_history(history: &[LayerSelection]) -> Vec<OperatorId> {
    history.iter().flat_map(|l| l.selected.iter().copied()).collect()
}

/// Activation distribution over the catalog for one layer, conditioned on
/// the query and the operators selected so far. Deterministic in its inputs.
pub fn score_layer(
    params: &PolicyParams,
    query: &QueryFeatures,
    history: &[LayerSelection],
    layer_index: usize,
    temperature: f64,
) -> Result<Vec<f64>, PolicyError> {
    debug_assert_eq!(history.len(), layer_index);
    let ids = flatten_history(history);
    Ok(forward(params, query, &ids, layer_index, temperature)?.probs)
}

/// Orders operators by descending probability (ties by ascending id).
fn ranked_indices(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    idx
}

/// Threshold selection: walk operators in descending-probability order until
/// the cumulative mass strictly exceeds `thres`. Sample mode applies Gumbel
/// noise to the log-probabilities and runs the identical procedure on the
/// perturbed distribution, which is also the distribution stored on the
/// returned selection. Never returns an empty selection.
pub fn select_layer(
    probs: &[f64],
    layer_index: usize,
    thres: f64,
    mode: SelectionMode,
    max_width: Option<usize>,
    rng: &mut impl Rng,
) -> LayerSelection {
    debug_assert!(thres > 0.0 && thres < 1.0);
    let effective: Vec<f64> = match mode {
        SelectionMode::Greedy => probs.to_vec(),
        SelectionMode::Sample => {
            let noisy: Vec<f64> = probs
                .iter()
                .map(|&p| {
                    let u: f64 = rng.sample(rand_distr::Open01);
                    p.ln() - (-u.ln()).ln()
                })
                .collect();
            let arr = Array1::from_vec(noisy);
            softmax(arr.view(), 1.0)
        }
    };

    let cap = max_width.unwrap_or(usize::MAX).max(1);
    let mut selected = Vec::new();
    let mut cumulative = 0.0;
    for i in ranked_indices(&effective) {
        selected.push(OperatorId(i as u32));
        cumulative += effective[i];
        if cumulative > thres || selected.len() >= cap {
            break;
        }
    }

    LayerSelection {
        layer_index,
        selected,
        activation_probs: effective,
    }
}

/// Builds a topology layer by layer. Selecting EarlyStop truncates that
/// layer's selection to EarlyStop alone and terminates generation. The
/// recorded log-probabilities are always taken from the unperturbed policy
/// distribution.
pub fn build_topology(
    params: &PolicyParams,
    query: &QueryFeatures,
    catalog: &OperatorCatalog,
    cfg: &ControllerConfig,
    rng: &mut impl Rng,
) -> Result<TopologyGraph, PolicyError> {
    if catalog.len() != params.n_ops() {
        return Err(PolicyError::CatalogSizeMismatch {
            expected: params.n_ops(),
            found: catalog.len(),
        });
    }
    let early_stop = catalog.early_stop_id();
    let mut history: Vec<OperatorId> = Vec::new();
    let mut layers = Vec::new();
    let mut log_probs = Vec::new();
    let mut terminated_early = false;

    for layer_index in 0..cfg.l_max {
        let probs = forward(params, query, &history, layer_index, cfg.temperature)?.probs;
        let mut selection = select_layer(
            &probs,
            layer_index,
            cfg.thres,
            cfg.mode,
            cfg.max_width,
            rng,
        );
        if selection.selected.contains(&early_stop) {
            selection.selected = vec![early_stop];
            terminated_early = true;
        }
        log_probs.push(
            selection
                .selected
                .iter()
                .map(|id| probs[id.index()].ln())
                .collect(),
        );
        history.extend(selection.selected.iter().copied());
        layers.push(selection);
        if terminated_early {
            break;
        }
    }

    Ok(TopologyGraph {
        query_id: query.query_id.clone(),
        layers,
        terminated_early,
        log_probs,
    })
}

/// Recomputes `sum_o R(o) * ln pi(o | x, history)` over the graph's executed
/// trajectory under the current parameters. Forward-only companion of
/// [`log_prob_and_grad`]; finite-difference oracles drive this.
pub fn weighted_log_prob(
    params: &PolicyParams,
    query: &QueryFeatures,
    graph: &TopologyGraph,
    rewards: &[Vec<f64>],
    temperature: f64,
) -> Result<f64, PolicyError> {
    assert_eq!(rewards.len(), graph.layers.len(), "rewards misaligned");
    let mut history: Vec<OperatorId> = Vec::new();
    let mut total = 0.0;
    for (layer, layer_rewards) in graph.layers.iter().zip(rewards) {
        assert_eq!(layer_rewards.len(), layer.selected.len(), "rewards misaligned");
        let fwd = forward(params, query, &history, layer.layer_index, temperature)?;
        for (&id, &r) in layer.selected.iter().zip(layer_rewards) {
            if id.index() >= params.n_ops() {
                return Err(PolicyError::UnknownOperator {
                    id: id.0,
                    catalog: params.n_ops(),
                });
            }
            total += r * fwd.probs[id.index()].ln();
        }
        history.extend(layer.selected.iter().copied());
    }
    Ok(total)
}

/// Reward-weighted trajectory log-probability and its exact analytical
/// gradient with respect to every parameter tensor.
pub fn log_prob_and_grad(
    params: &PolicyParams,
    query: &QueryFeatures,
    graph: &TopologyGraph,
    rewards: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, PolicyGrad), PolicyError> {
    assert_eq!(rewards.len(), graph.layers.len(), "rewards misaligned");
    let n_ops = params.n_ops();
    let mut grad = PolicyGrad::zeros_like(params);
    let mut history: Vec<OperatorId> = Vec::new();
    let mut total = 0.0;
    let x = Array1::from_vec(query.feature_vector.clone());

    for (layer, layer_rewards) in graph.layers.iter().zip(rewards) {
        assert_eq!(layer_rewards.len(), layer.selected.len(), "rewards misaligned");
        for &id in &layer.selected {
            if id.index() >= n_ops {
                return Err(PolicyError::UnknownOperator {
                    id: id.0,
                    catalog: n_ops,
                });
            }
        }
        let fwd = forward(params, query, &history, layer.layer_index, temperature)?;

        let reward_total: f64 = layer_rewards.iter().sum();
        // d/ds_o of sum_j R_j ln p_{sel_j} = (R(o)*[o selected] - p_o * sum R) / T
        let mut g_s = Array1::<f64>::zeros(n_ops);
        for (o, g) in g_s.iter_mut().enumerate() {
            *g = -fwd.probs[o] * reward_total / temperature;
        }
        for (&id, &r) in layer.selected.iter().zip(layer_rewards) {
            total += r * fwd.probs[id.index()].ln();
            g_s[id.index()] += r / temperature;
        }

        // Score head: s_o = <E_o, h>.
        let g_h = params.op_embed.t().dot(&g_s);
        grad.op_embed += &outer(&g_s, &fwd.h);

        // Through the tanh.
        let g_z = &g_h * &fwd.h.mapv(|v| 1.0 - v * v);
        grad.query_w += &outer(&g_z, &x);
        grad.query_b += &g_z;
        grad.layer_embed
            .row_mut(layer.layer_index)
            .scaled_add(1.0, &g_z);

        // History projection feeds z when the history is non-empty, and the
        // mean embedding routes gradient back into every historical operator.
        if let Some(m) = &fwd.hist_mean {
            grad.hist_w += &outer(&g_z, m);
            grad.hist_b += &g_z;
            let g_m = params.hist_w.t().dot(&g_z);
            let share = 1.0 / history.len() as f64;
            for &id in &history {
                grad.op_embed.row_mut(id.index()).scaled_add(share, &g_m);
            }
        }

        history.extend(layer.selected.iter().copied());
    }

    Ok((total, grad))
}

// --- Checkpoints -------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter snapshot: a versioned JSON document with the shape
/// echo and every tensor in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n_ops: usize,
    pub d_in: usize,
    pub d_h: usize,
    pub l_max: usize,
    pub query_w: Vec<f64>,
    pub query_b: Vec<f64>,
    pub op_embed: Vec<f64>,
    pub hist_w: Vec<f64>,
    pub hist_b: Vec<f64>,
    pub layer_embed: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &PolicyParams) -> Self {
        fn flat2(a: &Array2<f64>) -> Vec<f64> {
            a.iter().copied().collect()
        }
        Checkpoint {
            version: CHECKPOINT_VERSION,
            n_ops: params.n_ops(),
            d_in: params.d_in(),
            d_h: params.d_h(),
            l_max: params.l_max(),
            query_w: flat2(&params.query_w),
            query_b: params.query_b.to_vec(),
            op_embed: flat2(&params.op_embed),
            hist_w: flat2(&params.hist_w),
            hist_b: params.hist_b.to_vec(),
            layer_embed: flat2(&params.layer_embed),
        }
    }

    /// Rebuilds parameters, validating version, tensor shapes and the
    /// catalog size.
    pub fn into_params(self, catalog: &OperatorCatalog) -> Result<PolicyParams, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: self.version,
                supported: CHECKPOINT_VERSION,
            });
        }
        if self.n_ops != catalog.len() {
            return Err(CheckpointError::CatalogMismatch {
                checkpoint: self.n_ops,
                catalog: catalog.len(),
            });
        }
        fn shape2(
            name: &'static str,
            data: Vec<f64>,
            rows: usize,
            cols: usize,
        ) -> Result<Array2<f64>, CheckpointError> {
            if data.len() != rows * cols {
                return Err(CheckpointError::TensorShape {
                    tensor: name,
                    expected: rows * cols,
                    found: data.len(),
                });
            }
            Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
        }
        fn shape1(
            name: &'static str,
            data: Vec<f64>,
            len: usize,
        ) -> Result<Array1<f64>, CheckpointError> {
            if data.len() != len {
                return Err(CheckpointError::TensorShape {
                    tensor: name,
                    expected: len,
                    found: data.len(),
                });
            }
            Ok(Array1::from_vec(data))
        }
        Ok(PolicyParams {
            query_w: shape2("query_w", self.query_w, self.d_h, self.d_in)?,
            query_b: shape1("query_b", self.query_b, self.d_h)?,
            op_embed: shape2("op_embed", self.op_embed, self.n_ops, self.d_h)?,
            hist_w: shape2("hist_w", self.hist_w, self.d_h, self.d_h)?,
            hist_b: shape1("hist_b", self.hist_b, self.d_h)?,
            layer_embed: shape2("layer_embed", self.layer_embed, self.l_max, self.d_h)?,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        let data = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&data)?)
    }
}
