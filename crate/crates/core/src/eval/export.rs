use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{final_representation, ForwardPlan, ModelParams, ParamVars};
use crate::numerics::Tape;

fn io(e: std::io::Error) -> Error {
    Error::io("<export output>", e)
}

/// Writes `node_id,kind,layer,dim_0..dim_{d-1}` for every snapshot
/// `0..=K` and for the averaged representation (layer `final`).
pub fn export_embeddings(
    plan: &ForwardPlan,
    params: &ModelParams,
    num_users: usize,
    out: &mut impl Write,
) -> Result<()> {
    let (snapshots, _) = plan.snapshots(params)?;
    let final_h = final_representation(&snapshots)?;
    let d = params.dim();
    let dims: Vec<String> = (0..d).map(|j| format!("dim_{j}")).collect();
    writeln!(out, "node_id,kind,layer,{}", dims.join(",")).map_err(io)?;
    let labelled = snapshots
        .iter()
        .enumerate()
        .map(|(k, h)| (k.to_string(), h))
        .chain(std::iter::once(("final".to_string(), &final_h)));
    for (layer, h) in labelled {
        for node in 0..h.rows() {
            let kind = if node < num_users { "user" } else { "item" };
            let values: Vec<String> = h.row(node).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{node},{kind},{layer},{}", values.join(",")).map_err(io)?;
        }
    }
    Ok(())
}

/// Writes `layer,user,item,edge_time,weight`, one row per attended edge and
/// layer. The weight is that of the message flowing from the item into the
/// user; `edge_time` is normalized.
pub fn export_attention(plan: &ForwardPlan, params: &ModelParams, out: &mut impl Write) -> Result<()> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, false);
    let fwd = plan.record(&mut tape, &vars)?;
    writeln!(out, "layer,user,item,edge_time,weight").map_err(io)?;
    for (k, (graphs, weights)) in plan.layers.iter().zip(&fwd.attention_weights).enumerate() {
        let (Some(graph), Some(w)) = (&graphs.attention, weights) else {
            continue;
        };
        let w = tape.value(*w).as_slice();
        let msgs = &graph.messages;
        for m in 0..msgs.len() {
            let slot = msgs.slot[m];
            let e = &graph.edges[slot];
            if msgs.dst[m] != e.user {
                continue;
            }
            writeln!(out, "{k},{},{},{},{}", e.user, e.item, graph.times[slot], w[m]).map_err(io)?;
        }
    }
    Ok(())
}
