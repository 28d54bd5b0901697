//! Layer-parallel topology execution against a pluggable backend.
//!
//! All operators of a layer are issued concurrently and the executor waits
//! for the whole layer before starting the next (a layer barrier). Inputs to
//! layer `l` are exactly the outputs of layer `l - 1` — never of layer `l` —
//! which is what makes intra-layer parallelism sound. Results are merged in
//! catalog-id order and per-operator seeds are derived from stable
//! coordinates, so the trace does not depend on completion order or on the
//! concurrency level.

use crate::catalog::{OperatorCatalog, OperatorId, OperatorKind};
use crate::error::{BackendError, ExecutionError};
use crate::features::QueryFeatures;
use crate::seeds;
use crate::topology::TopologyGraph;
use crate::trace::{ExecutionTrace, OperatorRecord};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Duration;

/// One output payload, tagged with its origin so input provenance is
/// checkable (and checked) at request-construction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorOutput {
    pub layer_index: usize,
    pub operator_id: OperatorId,
    pub candidate_index: usize,
    pub text: String,
}

/// A single operator invocation.
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub kind: OperatorKind,
    pub binding: String,
    pub query_id: String,
    pub query_text: Option<String>,
    pub layer_index: usize,
    /// Outputs of layer `layer_index - 1`, in (operator id, candidate) order.
    /// Empty at layer 0.
    pub inputs: Vec<OperatorOutput>,
    /// Kinds executed in every layer before this one, grouped per layer.
    /// Metadata about the trajectory, not a data dependency.
    pub prior_kinds: Vec<Vec<OperatorKind>>,
    pub seed: u64,
}

impl BackendRequest {
    /// Builds a request for `operator` at `layer_index`. Panics if any input
    /// does not originate from the immediately preceding layer: the layered
    /// dependency structure is a construction invariant, not a runtime mode.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: OperatorKind,
        binding: String,
        query: &QueryFeatures,
        layer_index: usize,
        inputs: Vec<OperatorOutput>,
        prior_kinds: Vec<Vec<OperatorKind>>,
        run_seed: u64,
        operator_id: OperatorId,
    ) -> Self {
        for input in &inputs {
            assert_eq!(
                input.layer_index + 1,
                layer_index,
                "input for layer {layer_index} originates from layer {}",
                input.layer_index
            );
        }
        assert_eq!(prior_kinds.len(), layer_index);
        let seed = seeds::operator_seed(run_seed, &query.query_id, layer_index, operator_id.0);
        BackendRequest {
            kind,
            binding,
            query_id: query.query_id.clone(),
            query_text: query.raw_text.clone(),
            layer_index,
            inputs,
            prior_kinds,
            seed,
        }
    }
}

/// What one invocation produced: candidate outputs plus the measurements
/// that feed accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub outputs: Vec<String>,
    pub n_out: u64,
    pub tool_seconds: f64,
    pub cost: f64,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecOptions {
    /// Concurrency limit within a layer. 1 is a fully serial fallback.
    pub workers: usize,
    /// Per-operator timeout in seconds; 0 disables.
    pub op_timeout_secs: f64,
    pub seed: u64,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            workers: 8,
            op_timeout_secs: 120.0,
            seed: 0,
        }
    }
}

/// A finished execution: the measurement trace plus the payloads needed to
/// produce a final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub trace: ExecutionTrace,
    pub outputs_by_layer: Vec<Vec<OperatorOutput>>,
}

/// Runs `graph` layer by layer. Each layer's operators execute concurrently
/// (bounded by `workers`); the layer barrier completes before layer `l + 1`
/// issues. A backend fault or timeout aborts the layer and surfaces with the
/// partial trace of completed layers. EarlyStop executes as a zero-valued
/// record without touching the backend and ends the run.
pub async fn execute(
    graph: &TopologyGraph,
    query: &QueryFeatures,
    catalog: &OperatorCatalog,
    backend: Arc<dyn Backend>,
    proxy: &crate::accounting::ProxyConfig,
    opts: &ExecOptions,
) -> Result<Execution, ExecutionError> {
    let semaphore = Arc::new(tokio::sync::Semaphore::new(opts.workers.max(1)));
    let mut layers: Vec<Vec<OperatorRecord>> = Vec::with_capacity(graph.layers.len());
    let mut outputs_by_layer: Vec<Vec<OperatorOutput>> = Vec::with_capacity(graph.layers.len());
    let mut prior_kinds: Vec<Vec<OperatorKind>> = Vec::new();

    for selection in &graph.layers {
        let layer_index = selection.layer_index;

        // Terminal EarlyStop layer: zero record, no requests, run ends.
        if selection.selected.len() == 1 && selection.selected[0] == catalog.early_stop_id() {
            layers.push(vec![OperatorRecord::early_stop(
                catalog.early_stop_id(),
                layer_index,
            )]);
            outputs_by_layer.push(Vec::new());
            break;
        }

        // Execution and record order is catalog-id order regardless of the
        // selection's probability ranking.
        let mut ids: Vec<OperatorId> = selection.selected.clone();
        ids.sort_unstable();

        let previous: Vec<OperatorOutput> = if layer_index == 0 {
            Vec::new()
        } else {
            outputs_by_layer[layer_index - 1].clone()
        };

        let mut handles = Vec::with_capacity(ids.len());
        for &id in &ids {
            let spec = catalog.get(id).expect("validated graph");
            let request = BackendRequest::new(
                spec.kind.clone(),
                spec.backend_binding.clone(),
                query,
                layer_index,
                previous.clone(),
                prior_kinds.clone(),
                opts.seed,
                id,
            );
            let backend = Arc::clone(&backend);
            let semaphore = Arc::clone(&semaphore);
            let timeout = opts.op_timeout_secs;
            handles.push(tokio::spawn(async move {
                let _permit = semaphore.acquire().await.expect("semaphore open");
                let fut = backend.invoke(&request);
                if timeout > 0.0 {
                    match tokio::time::timeout(Duration::from_secs_f64(timeout), fut).await {
                        Ok(result) => result,
                        Err(_) => Err(BackendError::Timeout { seconds: timeout }),
                    }
                } else {
                    fut.await
                }
            }));
        }

        // Layer barrier: collect every response before going on, merging in
        // the id order the requests were issued in.
        let mut records = Vec::with_capacity(ids.len());
        let mut outputs = Vec::new();
        let mut fault: Option<(OperatorId, BackendError)> = None;
        for (&id, handle) in ids.iter().zip(handles) {
            let joined = handle.await.unwrap_or_else(|e| {
                Err(BackendError::Protocol(format!("task join failure: {e}")))
            });
            match joined {
                Ok(response) => {
                    let spec = catalog.get(id).expect("validated graph");
                    debug_assert_eq!(
                        response.outputs.len(),
                        spec.kind.expected_outputs(),
                        "{} must yield {} outputs",
                        spec.kind,
                        spec.kind.expected_outputs()
                    );
                    records.push(OperatorRecord::new(
                        id,
                        layer_index,
                        response.n_out,
                        response.tool_seconds,
                        response.cost,
                        proxy.gamma,
                    ));
                    for (candidate_index, text) in response.outputs.into_iter().enumerate() {
                        outputs.push(OperatorOutput {
                            layer_index,
                            operator_id: id,
                            candidate_index,
                            text,
                        });
                    }
                }
                Err(err) => {
                    if fault.is_none() {
                        fault = Some((id, err));
                    }
                }
            }
        }

        if let Some((operator_id, source)) = fault {
            let partial = ExecutionTrace::from_layers(query.query_id.clone(), layers);
            return Err(ExecutionError {
                layer: layer_index,
                operator_id: operator_id.0,
                source,
                partial: Box::new(partial),
            });
        }

        prior_kinds.push(
            ids.iter()
                .map(|&id| catalog.get(id).expect("validated graph").kind.clone())
                .collect(),
        );
        layers.push(records);
        outputs_by_layer.push(outputs);
    }

    Ok(Execution {
        trace: ExecutionTrace::from_layers(query.query_id.clone(), layers),
        outputs_by_layer,
    })
}

/// How multi-candidate final layers are reduced to one answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Majority vote over normalized answers; ties go to the candidate of
    /// the lowest operator id (then lowest candidate index).
    MajorityVote,
}

/// Canonical form used for answer comparison: trimmed, and numeric strings
/// reduced to their shortest round-trip representation.
pub fn normalize_answer(s: &str) -> String {
    let t = s.trim();
    if let Ok(x) = t.parse::<f64>() {
        if x.is_finite() {
            return format!("{x}");
        }
    }
    t.to_string()
}

/// Answer of the last executed non-EarlyStop layer. A topology that stopped
/// immediately has no producing layer and yields the empty answer.
pub fn final_answer(execution: &Execution, aggregation: Aggregation) -> String {
    let last = execution
        .outputs_by_layer
        .iter()
        .rev()
        .find(|outputs| !outputs.is_empty());
    let Some(outputs) = last else {
        return String::new();
    };
    match aggregation {
        Aggregation::MajorityVote => {
            let mut counts: Vec<(String, usize, usize)> = Vec::new(); // (normalized, count, first position)
            for (position, output) in outputs.iter().enumerate() {
                let key = normalize_answer(&output.text);
                match counts.iter_mut().find(|(k, _, _)| *k == key) {
                    Some((_, count, _)) => *count += 1,
                    None => counts.push((key, 1, position)),
                }
            }
            let (_, _, winner_position) = counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
                .expect("non-empty outputs");
            outputs[winner_position].text.clone()
        }
    }
}
