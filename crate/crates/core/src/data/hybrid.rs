use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, TemporalEdge};
use crate::error::{Error, Result};

/// Which interval edges a module may observe at layer `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeView {
    /// Interval `k` only.
    Current,
    /// Intervals `0..=k`.
    Previous,
    /// Every training edge.
    All,
}

impl std::str::FromStr for EdgeView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "current" | "cur" => Ok(Self::Current),
            "previous" | "prev" => Ok(Self::Previous),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown edge view '{other}'"))),
        }
    }
}

impl std::fmt::Display for EdgeView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Current => "cur",
            Self::Previous => "prev",
            Self::All => "all",
        })
    }
}

/// Training interactions cut into `k` equal-length time intervals.
///
/// Normalized time maps `[t_min, t_max]` onto `[0, k]`, so every interval
/// has unit length and the pivots are `0, 1, …, k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSystem {
    pub k: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub t_min: i64,
    pub t_max: i64,
    /// Normalized pivots `τ_0 … τ_k`.
    pub pivots: Vec<f64>,
    /// Pivots in raw timestamp units.
    pub raw_pivots: Vec<f64>,
    pub interval_edges: Vec<Vec<TemporalEdge>>,
    /// All edges of intervals `0..=k`.
    pub cumulative_edges: Vec<Vec<TemporalEdge>>,
}

impl HybridSystem {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    fn span(&self) -> i64 {
        self.t_max - self.t_min
    }

    /// `k·(t − t_min)/(t_max − t_min)`.
    pub fn normalized_time(&self, t: i64) -> f64 {
        self.k as f64 * (t - self.t_min) as f64 / self.span() as f64
    }

    /// Interval index of raw time `t`, clamped into `0..k`.
    pub fn interval_of(&self, t: i64) -> usize {
        interval_index(t, self.t_min, self.span(), self.k)
    }

    pub fn edges(&self, view: EdgeView, layer: usize) -> &[TemporalEdge] {
        match view {
            EdgeView::Current => &self.interval_edges[layer],
            EdgeView::Previous => &self.cumulative_edges[layer],
            EdgeView::All => &self.cumulative_edges[self.k - 1],
        }
    }

    pub fn train_edges(&self) -> &[TemporalEdge] {
        self.edges(EdgeView::All, 0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            system: self.clone(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: Snapshot = serde_json::from_str(&text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        Ok(snap.system)
    }
}

const SNAPSHOT_FORMAT: &str = "gderec-hybrid-system";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    system: HybridSystem,
}

fn interval_index(t: i64, t_min: i64, span: i64, k: usize) -> usize {
    let slot = (k as i128 * (t - t_min) as i128) / span as i128;
    (slot.max(0) as usize).min(k - 1)
}

/// Partitions the training edges into `k` equal time slots between the
/// earliest and latest training timestamp.
pub fn build_hybrid_system(train: &InteractionLog, k: usize) -> Result<HybridSystem> {
    if k == 0 {
        return Err(Error::Invalid("interval count must be at least 1".into()));
    }
    let first = train
        .edges
        .first()
        .ok_or_else(|| Error::Empty("training log has no edges".into()))?;
    let (t_min, t_max) = train
        .edges
        .iter()
        .fold((first.timestamp, first.timestamp), |(lo, hi), e| {
            (lo.min(e.timestamp), hi.max(e.timestamp))
        });
    let span = t_max - t_min;
    if span == 0 {
        return Err(Error::Invalid("training edges span zero time".into()));
    }

    let mut interval_edges = vec![Vec::new(); k];
    for e in &train.edges {
        interval_edges[interval_index(e.timestamp, t_min, span, k)].push(*e);
    }
    let mut cumulative_edges = Vec::with_capacity(k);
    let mut acc: Vec<TemporalEdge> = Vec::with_capacity(train.len());
    for slot in &interval_edges {
        acc.extend_from_slice(slot);
        cumulative_edges.push(acc.clone());
    }

    Ok(HybridSystem {
        k,
        num_users: train.num_users,
        num_items: train.num_items,
        t_min,
        t_max,
        pivots: (0..=k).map(|i| i as f64).collect(),
        raw_pivots: (0..=k)
            .map(|i| t_min as f64 + i as f64 * span as f64 / k as f64)
            .collect(),
        interval_edges,
        cumulative_edges,
    })
}
