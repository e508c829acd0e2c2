use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;

use crate::data::TemporalEdge;
use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, DenseMatrix, Tape, Var};

/// `(user, positive item, negative item)`, all joint node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// `ŷ_ui = h_uᵀ·h_i`.
pub fn score(user: usize, item: usize, h: &DenseMatrix) -> Result<f64> {
    if user >= h.rows() || item >= h.rows() {
        return Err(Error::Invalid(format!(
            "node id out of range: ({user}, {item}) with {} rows",
            h.rows()
        )));
    }
    Ok(h.row(user).iter().zip(h.row(item)).map(|(a, b)| a * b).sum())
}

/// `Σ −ln σ(ŷ_ui − ŷ_uj)` over the batch. The L2 term lives in the
/// optimizer's decoupled decay.
pub fn bpr_loss(batch: &[Triple], h: &DenseMatrix) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR batch".into()));
    }
    batch.iter().try_fold(0.0, |acc, t| {
        Ok(acc - log_sigmoid(score(t.user, t.pos, h)? - score(t.user, t.neg, h)?))
    })
}

/// [`bpr_loss`] recorded on `tape` against the representation `h`.
pub fn bpr_loss_tape(tape: &mut Tape, h: Var, batch: &[Triple]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR batch".into()));
    }
    let users = tape.gather(h, Arc::new(batch.iter().map(|t| t.user).collect()))?;
    let pos = tape.gather(h, Arc::new(batch.iter().map(|t| t.pos).collect()))?;
    let neg = tape.gather(h, Arc::new(batch.iter().map(|t| t.neg).collect()))?;
    let s_pos = tape.row_dot(users, pos)?;
    let s_neg = tape.row_dot(users, neg)?;
    let margin = tape.sub(s_pos, s_neg)?;
    let ls = tape.log_sigmoid(margin)?;
    let total = tape.sum(ls)?;
    tape.scale(total, -1.0)
}

/// Per-user set of items seen in training.
#[derive(Debug, Clone)]
pub struct TrainIndex {
    pub num_users: usize,
    pub num_items: usize,
    seen: Vec<BTreeSet<usize>>,
}

impl TrainIndex {
    pub fn new(num_users: usize, num_items: usize, edges: &[TemporalEdge]) -> Self {
        let mut seen = vec![BTreeSet::new(); num_users];
        for e in edges {
            seen[e.user].insert(e.item);
        }
        Self {
            num_users,
            num_items,
            seen,
        }
    }

    pub fn seen(&self, user: usize) -> &BTreeSet<usize> {
        &self.seen[user]
    }
}

/// Uniform draw among the items `user` has not interacted with, by rejection.
pub fn sample_negative(user: usize, rng: &mut impl Rng, index: &TrainIndex) -> Result<usize> {
    if user >= index.num_users {
        return Err(Error::Invalid(format!("user {user} out of range")));
    }
    let seen = index.seen(user);
    if seen.len() >= index.num_items {
        return Err(Error::Invalid(format!("user {user} has interacted with every item")));
    }
    loop {
        let item = index.num_users + rng.random_range(0..index.num_items);
        if !seen.contains(&item) {
            return Ok(item);
        }
    }
}
