use std::sync::Arc;

use super::{ModelParams, SignalPolicy, Variant};
use crate::attention::{aggregate_tape_encoded, time_table, AttentionGraph, LayerVars};
use crate::data::{build_adjacency, distinct_degrees, HybridSystem};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseAdjacency, Tape, Var};
use crate::ode::{evolve_tape, SolveStats};

/// Graph structures consumed by one layer.
#[derive(Debug, Clone)]
pub struct LayerGraphs {
    /// Adjacency driving the ODE, absent for [`Variant::Att`].
    pub ode: Option<Arc<SparseAdjacency>>,
    /// Attention messages, present for [`Variant::Full`].
    pub attention: Option<AttentionGraph>,
    /// Normalized adjacency and passthrough mask, present for [`Variant::Gcn`].
    pub gcn: Option<(Arc<SparseAdjacency>, Arc<Vec<f64>>)>,
}

/// Everything about a forward pass that does not depend on parameter values.
#[derive(Debug, Clone)]
pub struct ForwardPlan {
    pub variant: Variant,
    pub policy: SignalPolicy,
    pub step: f64,
    pub num_nodes: usize,
    pub layers: Vec<LayerGraphs>,
    /// Distinct normalized times of every training edge, shared by all
    /// attention graphs so a forward pass encodes each time once.
    pub time_table: Arc<Vec<f64>>,
}

impl ForwardPlan {
    pub fn new(system: &HybridSystem, policy: SignalPolicy, variant: Variant, step: f64) -> Result<Self> {
        if system.k == 0 {
            return Err(Error::Invalid("hybrid system has no intervals".into()));
        }
        let n = system.num_nodes();
        let all_times: Vec<f64> = system
            .train_edges()
            .iter()
            .map(|e| system.normalized_time(e.timestamp))
            .collect();
        let table = Arc::new(time_table(&all_times));
        let layers = (0..system.k)
            .map(|k| -> Result<LayerGraphs> {
                let ode = if variant.uses_ode() {
                    Some(Arc::new(build_adjacency(system.edges(policy.ode_view, k), n)?))
                } else {
                    None
                };
                let attn_edges = system.edges(policy.attn_view, k);
                let attention = match variant {
                    Variant::Full | Variant::Att => {
                        Some(AttentionGraph::from_system(system, attn_edges)?.with_time_table(Arc::clone(&table))?)
                    }
                    _ => None,
                };
                let gcn = match variant {
                    Variant::Gcn => {
                        let adj = Arc::new(build_adjacency(attn_edges, n)?);
                        let isolated = distinct_degrees(attn_edges, n)?
                            .into_iter()
                            .map(|d| if d == 0 { 1.0 } else { 0.0 })
                            .collect();
                        Some((adj, Arc::new(isolated)))
                    }
                    _ => None,
                };
                Ok(LayerGraphs { ode, attention, gcn })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            policy,
            step,
            num_nodes: n,
            layers,
            time_table: table,
        })
    }

    pub fn k(&self) -> usize {
        self.layers.len()
    }
}

/// Tape handles of every parameter tensor, in [`ModelParams::slices`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub embeddings: Var,
    pub frequencies: Var,
    pub layers: Vec<LayerVars>,
}

impl ParamVars {
    /// Registers `params` on `tape`, as leaves when `trainable`.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let mut put = |m: DenseMatrix| if trainable { tape.leaf(m) } else { tape.constant(m) };
        let embeddings = put(params.embeddings.clone());
        let frequencies = put(DenseMatrix::column(params.time_encoder.frequencies.clone()));
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                alpha: put(DenseMatrix::column(l.alpha.clone())),
                w_q: put(l.w_q.clone()),
                w_k: put(l.w_k.clone()),
            })
            .collect();
        Self {
            embeddings,
            frequencies,
            layers,
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.embeddings, self.frequencies];
        for l in &self.layers {
            out.extend([l.alpha, l.w_q, l.w_k]);
        }
        out
    }
}

/// Result of [`ForwardPlan::record`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `H_{t_0} … H_{t_K}`.
    pub snapshots: Vec<Var>,
    /// Per-message attention weights of each layer, when attention ran.
    pub attention_weights: Vec<Option<Var>>,
    /// Solver counters summed over layers.
    pub stats: SolveStats,
    /// Derivative evaluations of a single interval solve.
    pub nfe_per_interval: usize,
}

impl ForwardPlan {
    /// Records the layer recursion on `tape`:
    /// `H⁺_k = ODE(H_k)` over one unit interval, then `H_{k+1} = F_k(H⁺_k)`.
    pub fn record(&self, tape: &mut Tape, vars: &ParamVars) -> Result<ForwardOutput> {
        if vars.layers.len() != self.k() {
            return Err(Error::Invalid(format!(
                "{} attention layers for {} intervals",
                vars.layers.len(),
                self.k()
            )));
        }
        if tape.value(vars.embeddings).rows() != self.num_nodes {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} embedding rows for {} nodes",
                    tape.value(vars.embeddings).rows(),
                    self.num_nodes
                ),
            ));
        }
        let mut snapshots = vec![vars.embeddings];
        let mut attention_weights = Vec::with_capacity(self.k());
        let mut stats = SolveStats::default();
        let mut nfe_per_interval = 0;
        let mut h = vars.embeddings;
        let encoding = match self.variant {
            Variant::Full | Variant::Att => Some(tape.time_encode(vars.frequencies, Arc::clone(&self.time_table))?),
            _ => None,
        };
        for (graphs, layer) in self.layers.iter().zip(&vars.layers) {
            let h_plus = match &graphs.ode {
                Some(adj) => {
                    let (out, s) = evolve_tape(tape, adj, h, 1.0, self.step)?;
                    nfe_per_interval = s.nfe;
                    stats += s;
                    out
                }
                None => h,
            };
            let mut weights = None;
            h = match self.variant {
                Variant::Full | Variant::Att => {
                    let graph = graphs.attention.as_ref().expect("attention graph planned");
                    let enc = encoding.expect("encoding planned with attention");
                    let (out, w) = aggregate_tape_encoded(tape, h_plus, graph, *layer, enc)?;
                    weights = Some(w);
                    out
                }
                Variant::Ode => h_plus,
                Variant::Gcn => {
                    let (adj, isolated) = graphs.gcn.as_ref().expect("gcn graph planned");
                    let conv = tape.spmm(adj, h_plus)?;
                    let keep = tape.row_scale(h_plus, Arc::clone(isolated))?;
                    tape.add(conv, keep)?
                }
            };
            attention_weights.push(weights);
            snapshots.push(h);
        }
        Ok(ForwardOutput {
            snapshots,
            attention_weights,
            stats,
            nfe_per_interval,
        })
    }

    /// Mean of the snapshots, recorded on `tape`.
    pub fn record_final(&self, tape: &mut Tape, out: &ForwardOutput) -> Result<Var> {
        let w = 1.0 / out.snapshots.len() as f64;
        let terms: Vec<(Var, f64)> = out.snapshots.iter().map(|&v| (v, w)).collect();
        tape.lin_comb(&terms)
    }

    /// Snapshot values without gradient tracking.
    pub fn snapshots(&self, params: &ModelParams) -> Result<(Vec<DenseMatrix>, SolveStats)> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params, false);
        let out = self.record(&mut tape, &vars)?;
        Ok((
            out.snapshots.iter().map(|&v| tape.value(v).clone()).collect(),
            out.stats,
        ))
    }

    /// Final representation without gradient tracking.
    pub fn represent(&self, params: &ModelParams) -> Result<DenseMatrix> {
        let (snaps, _) = self.snapshots(params)?;
        final_representation(&snaps)
    }
}

/// Snapshots `[H_{t_0} … H_{t_K}]` for `system`.
pub fn forward(
    system: &HybridSystem,
    params: &ModelParams,
    policy: SignalPolicy,
    variant: Variant,
    step: f64,
) -> Result<Vec<DenseMatrix>> {
    let plan = ForwardPlan::new(system, policy, variant, step)?;
    Ok(plan.snapshots(params)?.0)
}

/// Arithmetic mean over all `K + 1` snapshots.
pub fn final_representation(snapshots: &[DenseMatrix]) -> Result<DenseMatrix> {
    let (first, rest) = snapshots
        .split_first()
        .ok_or_else(|| Error::Empty("no snapshots to average".into()))?;
    let mut acc = first.clone();
    for s in rest {
        acc.axpy(1.0, s)?;
    }
    Ok(acc.scale(1.0 / snapshots.len() as f64))
}
