//! Temporal aggregation: trainable cos/sin time encodings and per-edge
//! sigmoid attention over the interaction graph seen so far.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{distinct_degrees, HybridSystem, TemporalEdge};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, DenseMatrix, EdgeMessages, Tape, Var};

pub const DEFAULT_TIME_DIM: usize = 16;

/// Frequencies `ω` of the encoding `Φ(t) = √(1/m)·[cos ω₁t, sin ω₁t, …]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoder {
    pub frequencies: Vec<f64>,
}

impl TimeEncoder {
    /// Log-spaced frequencies from 1 down to 10⁻⁴.
    pub fn new(dim: usize) -> Self {
        let frequencies = (0..dim)
            .map(|i| {
                if dim == 1 {
                    1.0
                } else {
                    10f64.powf(-(i as f64) * 4.0 / (dim - 1) as f64)
                }
            })
            .collect();
        Self { frequencies }
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dim()
    }
}

/// `Φ(t)`, interleaved cos/sin.
pub fn encode_time(t: f64, enc: &TimeEncoder) -> Vec<f64> {
    let c = (1.0 / enc.dim() as f64).sqrt();
    enc.frequencies
        .iter()
        .flat_map(|&w| {
            let (s, co) = (w * t).sin_cos();
            [c * co, c * s]
        })
        .collect()
}

/// Parameters of one aggregation layer. `alpha` is laid out as
/// `[query part (d); time part (2·d_T); key part (d)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayerParams {
    pub alpha: Vec<f64>,
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
}

impl AttentionLayerParams {
    /// `α = 0`, projections uniform in `±√(6/(2d))`.
    pub fn new(d: usize, time_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (2 * d) as f64).sqrt();
        let mut draw = || {
            DenseMatrix::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-bound..bound)).collect())
                .expect("d*d values")
        };
        let w_q = draw();
        let w_k = draw();
        Self {
            alpha: vec![0.0; 2 * d + 2 * time_dim],
            w_q,
            w_k,
        }
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn alpha_query(&self) -> &[f64] {
        &self.alpha[..self.d()]
    }

    pub fn alpha_time(&self) -> &[f64] {
        &self.alpha[self.d()..self.alpha.len() - self.d()]
    }

    pub fn alpha_key(&self) -> &[f64] {
        &self.alpha[self.alpha.len() - self.d()..]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), v)).collect()
}

/// `σ(αᵀ·[W_Q·h_i ; Φ(t) ; W_K·h_j])` for the message `j → i`.
pub fn attention_weight(
    h_i: &[f64],
    h_j: &[f64],
    t: f64,
    params: &AttentionLayerParams,
    enc: &TimeEncoder,
) -> Result<f64> {
    let d = params.d();
    if h_i.len() != d || h_j.len() != d || params.alpha.len() != 2 * d + enc.output_dim() {
        return Err(Error::shape(
            "attention_weight",
            format!(
                "h_i {}, h_j {}, alpha {} for d = {d}, d_T = {}",
                h_i.len(),
                h_j.len(),
                params.alpha.len(),
                enc.dim()
            ),
        ));
    }
    let pre = dot(params.alpha_query(), &matvec(&params.w_q, h_i))
        + dot(params.alpha_time(), &encode_time(t, enc))
        + dot(params.alpha_key(), &matvec(&params.w_k, h_j));
    Ok(sigmoid(pre))
}

/// Message structure for one aggregation layer.
///
/// Every temporal edge `(u, i, t)` sends one message in each direction,
/// both sharing the edge's time slot. Message coefficients are
/// `1/√(|N_u|·|N_i|)` with distinct-neighbour counts; repeated interactions
/// therefore contribute one message each without inflating degrees.
#[derive(Debug, Clone)]
pub struct AttentionGraph {
    pub messages: Arc<EdgeMessages>,
    /// Normalized time of each edge slot.
    pub times: Arc<Vec<f64>>,
    /// Distinct times, possibly shared with other graphs so that one
    /// encoding serves several layers.
    pub time_table: Arc<Vec<f64>>,
    /// Position of each slot's time in `time_table`.
    pub time_index: Arc<Vec<usize>>,
    pub edges: Vec<TemporalEdge>,
}

impl AttentionGraph {
    pub fn new(edges: &[TemporalEdge], n: usize, times: Vec<f64>) -> Result<Self> {
        if times.len() != edges.len() {
            return Err(Error::shape(
                "attention_graph",
                format!("{} times for {} edges", times.len(), edges.len()),
            ));
        }
        let deg = distinct_degrees(edges, n)?;
        let mut msgs = EdgeMessages {
            n,
            slots: edges.len(),
            dst: Vec::with_capacity(2 * edges.len()),
            src: Vec::with_capacity(2 * edges.len()),
            coef: Vec::with_capacity(2 * edges.len()),
            slot: Vec::with_capacity(2 * edges.len()),
            passthrough: deg.iter().map(|&d| d == 0).collect(),
        };
        for (slot, e) in edges.iter().enumerate() {
            let c = 1.0 / ((deg[e.user] * deg[e.item]) as f64).sqrt();
            for (dst, src) in [(e.user, e.item), (e.item, e.user)] {
                msgs.dst.push(dst);
                msgs.src.push(src);
                msgs.coef.push(c);
                msgs.slot.push(slot);
            }
        }
        let table = Arc::new(time_table(&times));
        let time_index = Arc::new(index_times(&times, &table)?);
        Ok(Self {
            messages: Arc::new(msgs),
            times: Arc::new(times),
            time_table: table,
            time_index,
            edges: edges.to_vec(),
        })
    }

    /// Re-indexes the slot times against `table`, which must contain them all.
    pub fn with_time_table(mut self, table: Arc<Vec<f64>>) -> Result<Self> {
        self.time_index = Arc::new(index_times(&self.times, &table)?);
        self.time_table = table;
        Ok(self)
    }

    /// Graph over `edges` with times normalized by `system`.
    pub fn from_system(system: &HybridSystem, edges: &[TemporalEdge]) -> Result<Self> {
        let times = edges.iter().map(|e| system.normalized_time(e.timestamp)).collect();
        Self::new(edges, system.num_nodes(), times)
    }
}

/// Sorted distinct values of `times`.
pub fn time_table(times: &[f64]) -> Vec<f64> {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| a.to_bits() == b.to_bits());
    t
}

fn index_times(times: &[f64], table: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|t| {
            table
                .binary_search_by(|x| x.total_cmp(t))
                .map_err(|_| Error::Invalid(format!("time {t} missing from the time table")))
        })
        .collect()
}

/// Tape handles of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub alpha: Var,
    pub w_q: Var,
    pub w_k: Var,
}

/// Records the aggregation `h_i = Σ_j c_ij·π(i,j)·h⁺_j` on `tape`. Returns the
/// aggregated states and the per-message attention weights.
pub fn aggregate_tape(
    tape: &mut Tape,
    h_plus: Var,
    graph: &AttentionGraph,
    layer: LayerVars,
    frequencies: Var,
) -> Result<(Var, Var)> {
    let encoding = tape.time_encode(frequencies, Arc::clone(&graph.time_table))?;
    aggregate_tape_encoded(tape, h_plus, graph, layer, encoding)
}

/// [`aggregate_tape`] given the encoding of `graph.time_table`, which may be
/// shared across layers.
pub fn aggregate_tape_encoded(
    tape: &mut Tape,
    h_plus: Var,
    graph: &AttentionGraph,
    layer: LayerVars,
    encoding: Var,
) -> Result<(Var, Var)> {
    let d = tape.value(layer.w_q).rows();
    let time_out = tape.value(encoding).cols();
    if tape.value(encoding).rows() != graph.time_table.len() {
        return Err(Error::shape(
            "aggregate",
            format!(
                "encoding has {} rows for {} distinct times",
                tape.value(encoding).rows(),
                graph.time_table.len()
            ),
        ));
    }
    let alpha_len = tape.value(layer.alpha).rows();
    if alpha_len != 2 * d + time_out {
        return Err(Error::shape(
            "aggregate",
            format!("alpha has {alpha_len} entries, expected {}", 2 * d + time_out),
        ));
    }
    // αᵀ·W·h = (Wᵀ·α)ᵀ·h, so project the parameters first.
    let a_q = tape.row_slice(layer.alpha, 0, d)?;
    let a_t = tape.row_slice(layer.alpha, d, time_out)?;
    let a_k = tape.row_slice(layer.alpha, d + time_out, d)?;
    let wq_t = tape.transpose(layer.w_q)?;
    let wk_t = tape.transpose(layer.w_k)?;
    let q_dir = tape.matmul(wq_t, a_q)?;
    let k_dir = tape.matmul(wk_t, a_k)?;
    let q_score = tape.matmul(h_plus, q_dir)?;
    let k_score = tape.matmul(h_plus, k_dir)?;
    let table_score = tape.matmul(encoding, a_t)?;
    let t_score = tape.gather(table_score, Arc::clone(&graph.time_index))?;
    let logits = tape.edge_logits(q_score, k_score, t_score, &graph.messages)?;
    let weights = tape.sigmoid(logits)?;
    let out = tape.edge_scatter(h_plus, weights, &graph.messages)?;
    Ok((out, weights))
}

fn constant_layer(tape: &mut Tape, params: &AttentionLayerParams, enc: &TimeEncoder) -> (LayerVars, Var) {
    let layer = LayerVars {
        alpha: tape.constant(DenseMatrix::column(params.alpha.clone())),
        w_q: tape.constant(params.w_q.clone()),
        w_k: tape.constant(params.w_k.clone()),
    };
    let freq = tape.constant(DenseMatrix::column(enc.frequencies.clone()));
    (layer, freq)
}

/// Aggregated node states; isolated nodes keep their input row.
pub fn aggregate(
    h_plus: &DenseMatrix,
    graph: &AttentionGraph,
    params: &AttentionLayerParams,
    enc: &TimeEncoder,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let h = tape.constant(h_plus.clone());
    let (layer, freq) = constant_layer(&mut tape, params, enc);
    let (out, _) = aggregate_tape(&mut tape, h, graph, layer, freq)?;
    Ok(tape.value(out).clone())
}

/// Attention weight of every message in `graph.messages`, in message order.
pub fn message_weights(
    h_plus: &DenseMatrix,
    graph: &AttentionGraph,
    params: &AttentionLayerParams,
    enc: &TimeEncoder,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h = tape.constant(h_plus.clone());
    let (layer, freq) = constant_layer(&mut tape, params, enc);
    let (_, w) = aggregate_tape(&mut tape, h, graph, layer, freq)?;
    Ok(tape.value(w).as_slice().to_vec())
}
