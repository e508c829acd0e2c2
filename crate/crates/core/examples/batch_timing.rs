//! Times the stages of one training batch on a MovieLens file.
//!
//! `cargo run --release --example batch_timing -- data/ml-100k/u.data`

use std::time::Instant;

use gderec::data::{load, DatasetFormat};
use gderec::eval::PreparedData;
use gderec::model::{bpr_loss_tape, ForwardPlan, ModelParams, ParamVars, SignalPolicy, Triple, Variant};
use gderec::numerics::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gderec::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/ml-100k/u.data".into());
    let data = PreparedData::from_log(&load(&path, DatasetFormat::MovieLens)?, 3)?;
    let sys = &data.system;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(sys.num_nodes(), 3, 64, 16, 0.1, &mut rng)?;
    let batch: Vec<Triple> = sys
        .train_edges()
        .iter()
        .take(2048)
        .map(|e| Triple { user: e.user, pos: e.item, neg: sys.num_users })
        .collect();
    let plan = ForwardPlan::new(sys, SignalPolicy::ORIGIN, Variant::Full, 0.2)?;
    for (k, l) in plan.layers.iter().enumerate() {
        println!(
            "layer {k}: ode nnz {}, attention messages {}",
            l.ode.as_ref().map_or(0, |a| a.nnz()),
            l.attention.as_ref().map_or(0, |g| g.messages.len())
        );
    }
    println!("distinct times {}", plan.time_table.len());
    let adj = plan.layers[2].ode.clone().expect("ode layer");
    let x = params.embeddings.clone();
    let mut out = x.clone();
    let t = Instant::now();
    for _ in 0..100 {
        adj.shifted_apply(&x, &x, 0.5, &mut out)?;
    }
    println!("shifted_apply {:.2} ms", t.elapsed().as_secs_f64() * 10.0);
    for variant in [Variant::Full, Variant::Att, Variant::Ode] {
        let plan = ForwardPlan::new(sys, SignalPolicy::ORIGIN, variant, 0.2)?;
        for _ in 0..3 {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params, true);
            let out = plan.record(&mut tape, &vars)?;
            let t1 = Instant::now();
            let h = plan.record_final(&mut tape, &out)?;
            let loss = bpr_loss_tape(&mut tape, h, &batch)?;
            let t2 = Instant::now();
            let _g = tape.backward(loss)?;
            let t3 = Instant::now();
            println!(
                "{variant}: forward {:.3}s  loss {:.3}s  backward {:.3}s  tape {} nodes",
                (t1 - t0).as_secs_f64(),
                (t2 - t1).as_secs_f64(),
                (t3 - t2).as_secs_f64(),
                tape.len()
            );
        }
    }
    Ok(())
}
