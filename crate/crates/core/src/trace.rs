//! Execution records and their JSONL export format.

use crate::accounting::{self, ProxyConfig};
use crate::catalog::{OperatorCatalog, OperatorId, OperatorKind};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Measurements for one operator invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub operator_id: OperatorId,
    pub layer_index: usize,
    /// Output tokens produced by the model.
    pub n_out: u64,
    /// Wall-clock seconds spent in external tools.
    pub tool_seconds: f64,
    /// Abstract nonnegative cost units.
    pub cost: f64,
    /// Virtual-token latency proxy: `n_out + gamma * tool_seconds`.
    pub latency_proxy: f64,
}

impl OperatorRecord {
    pub fn new(
        operator_id: OperatorId,
        layer_index: usize,
        n_out: u64,
        tool_seconds: f64,
        cost: f64,
        gamma: f64,
    ) -> Self {
        OperatorRecord {
            operator_id,
            layer_index,
            n_out,
            tool_seconds,
            cost,
            latency_proxy: accounting::latency_proxy(n_out, tool_seconds, gamma),
        }
    }

    /// EarlyStop performs no work: zero tokens, zero time, zero cost.
    pub fn early_stop(operator_id: OperatorId, layer_index: usize) -> Self {
        OperatorRecord {
            operator_id,
            layer_index,
            n_out: 0,
            tool_seconds: 0.0,
            cost: 0.0,
            latency_proxy: 0.0,
        }
    }
}

/// Per-trace aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    /// Sum of every operator's cost.
    pub total_cost: f64,
    /// Critical-path length: per-layer maximum latency proxy, summed.
    pub cp_len: f64,
    /// Binary task score; environments with graded quality threshold first.
    pub score: u8,
}

/// Records of one executed topology, grouped by layer, with each layer's
/// critical (slowest) operator identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub query_id: String,
    pub layers: Vec<Vec<OperatorRecord>>,
    /// `critical_ids[l]` is the argmax of the latency proxy in layer `l`,
    /// ties broken by ascending operator id.
    pub critical_ids: Vec<OperatorId>,
    pub summary: ExecutionSummary,
}

impl ExecutionTrace {
    /// Builds a trace from raw layer records, deriving criticals and the
    /// summary. The score is unknown until the answer is graded; see
    /// [`ExecutionTrace::scored`].
    pub fn from_layers(query_id: String, layers: Vec<Vec<OperatorRecord>>) -> Self {
        let (cp_len, critical_ids) = accounting::critical_path_of_layers(&layers);
        let total_cost = accounting::total_cost_of_layers(&layers);
        ExecutionTrace {
            query_id,
            layers,
            critical_ids,
            summary: ExecutionSummary {
                total_cost,
                cp_len,
                score: 0,
            },
        }
    }

    /// Returns the trace with the graded score attached.
    pub fn scored(mut self, score: u8) -> Self {
        debug_assert!(score <= 1);
        self.summary.score = score;
        self
    }

    pub fn records(&self) -> impl Iterator<Item = &OperatorRecord> {
        self.layers.iter().flatten()
    }

    pub fn is_critical(&self, record: &OperatorRecord) -> bool {
        self.critical_ids
            .get(record.layer_index)
            .is_some_and(|&id| id == record.operator_id)
    }
}

// --- JSONL export -----------------------------------------------------------
//
// One JSON object per query per line:
// {"query_id":…,"layers":[[{"operator_id":…,"kind":…,"n_out":…,"tool_seconds":…,
//   "cost":…,"latency_proxy":…,"is_critical":…},…],…],"cp_len":…,"total_cost":…,
//   "score":…}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    operator_id: u32,
    kind: OperatorKind,
    n_out: u64,
    tool_seconds: f64,
    cost: f64,
    latency_proxy: f64,
    is_critical: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceLine {
    query_id: String,
    layers: Vec<Vec<RecordLine>>,
    cp_len: f64,
    total_cost: f64,
    score: u8,
}

impl TraceLine {
    fn from_trace(trace: &ExecutionTrace, catalog: &OperatorCatalog) -> Self {
        TraceLine {
            query_id: trace.query_id.clone(),
            layers: trace
                .layers
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|r| RecordLine {
                            operator_id: r.operator_id.0,
                            kind: catalog
                                .get(r.operator_id)
                                .map(|s| s.kind.clone())
                                .unwrap_or_else(|| OperatorKind::Custom("unknown".into())),
                            n_out: r.n_out,
                            tool_seconds: r.tool_seconds,
                            cost: r.cost,
                            latency_proxy: r.latency_proxy,
                            is_critical: trace.is_critical(r),
                        })
                        .collect()
                })
                .collect(),
            cp_len: trace.summary.cp_len,
            total_cost: trace.summary.total_cost,
            score: trace.summary.score,
        }
    }

    fn into_trace(self) -> ExecutionTrace {
        let critical_ids = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .find(|r| r.is_critical)
                    .or_else(|| layer.first())
                    .map(|r| OperatorId(r.operator_id))
                    .unwrap_or(OperatorId(0))
            })
            .collect();
        let layers: Vec<Vec<OperatorRecord>> = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(layer_index, layer)| {
                layer
                    .into_iter()
                    .map(|r| OperatorRecord {
                        operator_id: OperatorId(r.operator_id),
                        layer_index,
                        n_out: r.n_out,
                        tool_seconds: r.tool_seconds,
                        cost: r.cost,
                        latency_proxy: r.latency_proxy,
                    })
                    .collect()
            })
            .collect();
        ExecutionTrace {
            query_id: self.query_id,
            layers,
            critical_ids,
            summary: ExecutionSummary {
                total_cost: self.total_cost,
                cp_len: self.cp_len,
                score: self.score,
            },
        }
    }
}

/// Writes one trace as a single JSONL line.
pub fn write_trace_line<W: Write>(
    w: &mut W,
    trace: &ExecutionTrace,
    catalog: &OperatorCatalog,
) -> std::io::Result<()> {
    let line = TraceLine::from_trace(trace, catalog);
    serde_json::to_writer(&mut *w, &line)?;
    w.write_all(b"\n")
}

/// Reads traces back from JSONL, reporting the 1-based line number on error.
pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<ExecutionTrace>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(parsed.into_trace());
    }
    Ok(out)
}
