use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::{summarize, Averaging, RankedInteraction};
use crate::data::{HybridSystem, TemporalEdge};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Which held-out split is being ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valid" | "validation" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Valid => "valid",
            Self::Test => "test",
        })
    }
}

/// Items removed from a user's candidate list before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MaskSeen {
    /// Train positives only.
    Train,
    /// Train positives, plus validation positives when ranking the test split.
    #[default]
    TrainValid,
    None,
}

impl std::str::FromStr for MaskSeen {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "train+valid" => Ok(Self::TrainValid),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown mask mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for MaskSeen {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::TrainValid => "train+valid",
            Self::None => "none",
        })
    }
}

/// Headline numbers of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mrr: f64,
    pub evaluated: usize,
    /// User or item never seen in training.
    pub skipped_cold: usize,
    /// Target item was itself masked.
    pub skipped_masked: usize,
}

/// Per-interaction ranks and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<RankedInteraction>,
    /// `None` when every interaction was skipped.
    pub summary: Option<MetricSummary>,
    pub skipped_cold: usize,
    pub skipped_masked: usize,
}

/// Seen-item sets needed to mask and to detect cold nodes.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub num_users: usize,
    pub num_items: usize,
    train_seen: Vec<BTreeSet<usize>>,
    valid_seen: Vec<BTreeSet<usize>>,
    item_in_train: Vec<bool>,
}

impl Evaluator {
    /// `train` and `valid` hold joint node ids.
    pub fn new(num_users: usize, num_items: usize, train: &[TemporalEdge], valid: &[TemporalEdge]) -> Result<Self> {
        let mut train_seen = vec![BTreeSet::new(); num_users];
        let mut valid_seen = vec![BTreeSet::new(); num_users];
        let mut item_in_train = vec![false; num_items];
        for (edges, seen) in [(train, &mut train_seen), (valid, &mut valid_seen)] {
            for e in edges {
                check_edge(e, num_users, num_items)?;
                seen[e.user].insert(e.item - num_users);
            }
        }
        for e in train {
            item_in_train[e.item - num_users] = true;
        }
        Ok(Self {
            num_users,
            num_items,
            train_seen,
            valid_seen,
            item_in_train,
        })
    }

    /// Fills `out` with the mask of `user` and returns how many items it hides.
    fn fill_mask(&self, user: usize, split: Split, mask: MaskSeen, out: &mut [bool]) -> usize {
        out.fill(false);
        let mut sets = Vec::new();
        if mask != MaskSeen::None {
            sets.push(&self.train_seen[user]);
        }
        if mask == MaskSeen::TrainValid && split == Split::Test {
            sets.push(&self.valid_seen[user]);
        }
        let mut count = 0;
        for &j in sets.into_iter().flatten() {
            if !out[j] {
                out[j] = true;
                count += 1;
            }
        }
        count
    }

    /// Ranks each target against the user's full unmasked catalogue.
    ///
    /// Rank is one plus the number of candidates scoring strictly higher, plus
    /// tied candidates with a smaller item id.
    pub fn rank(
        &self,
        h: &DenseMatrix,
        targets: &[TemporalEdge],
        split: Split,
        mask: MaskSeen,
        averaging: Averaging,
    ) -> Result<EvalReport> {
        let n = self.num_users + self.num_items;
        if h.rows() != n {
            return Err(Error::shape("evaluate", format!("{} rows for {n} nodes", h.rows())));
        }
        for e in targets {
            check_edge(e, self.num_users, self.num_items)?;
        }
        // Group by user so each user's catalogue is scored once.
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.sort_by_key(|&i| (targets[i].user, i));

        let mut results = Vec::with_capacity(targets.len());
        let (mut skipped_cold, mut skipped_masked) = (0, 0);
        let mut scores = vec![0.0; self.num_items];
        let mut masked = vec![false; self.num_items];
        let mut hidden = 0;
        let mut current = None;
        for i in order {
            let e = targets[i];
            let item = e.item - self.num_users;
            if self.train_seen[e.user].is_empty() || !self.item_in_train[item] {
                skipped_cold += 1;
                continue;
            }
            if current != Some(e.user) {
                let hu = h.row(e.user);
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(hu, h.row(self.num_users + j));
                }
                hidden = self.fill_mask(e.user, split, mask, &mut masked);
                current = Some(e.user);
            }
            if masked[item] {
                skipped_masked += 1;
                continue;
            }
            let target = scores[item];
            if !target.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("score of user {} item {}", e.user, e.item),
                });
            }
            let mut rank = 1;
            for (j, &s) in scores.iter().enumerate() {
                if j != item && !masked[j] && (s > target || (s == target && j < item)) {
                    rank += 1;
                }
            }
            results.push(RankedInteraction {
                user: e.user,
                item: e.item,
                rank,
                candidates: self.num_items - hidden,
            });
        }
        let summary = if results.is_empty() {
            None
        } else {
            let (r5, r10, m) = summarize(&results, averaging)?;
            Some(MetricSummary {
                recall_at_5: r5,
                recall_at_10: r10,
                mrr: m,
                evaluated: results.len(),
                skipped_cold,
                skipped_masked,
            })
        };
        Ok(EvalReport {
            results,
            summary,
            skipped_cold,
            skipped_masked,
        })
    }
}

fn check_edge(e: &TemporalEdge, num_users: usize, num_items: usize) -> Result<()> {
    if e.user >= num_users || e.item < num_users || e.item >= num_users + num_items {
        return Err(Error::Invalid(format!(
            "edge ({}, {}) outside {num_users} users and {num_items} items",
            e.user, e.item
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ranks `targets` against representations `h` of the model built on
/// `system`; `valid` only feeds the mask.
pub fn evaluate(
    h: &DenseMatrix,
    system: &HybridSystem,
    valid: &[TemporalEdge],
    targets: &[TemporalEdge],
    split: Split,
    mask: MaskSeen,
    averaging: Averaging,
) -> Result<EvalReport> {
    Evaluator::new(system.num_users, system.num_items, system.train_edges(), valid)?
        .rank(h, targets, split, mask, averaging)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn edge(user: usize, item: usize) -> TemporalEdge {
        TemporalEdge { user, item, timestamp: 0 }
    }

    #[test]
    fn higher_target_ranks_first() {
        // User 0 scores 2 for item 2 and 1 for item 3; user 1 makes both warm.
        let h = DenseMatrix::from_rows(&[vec![1.0], vec![0.0], vec![2.0], vec![1.0]]).unwrap();
        let ev = Evaluator::new(2, 2, &[edge(0, 3), edge(1, 2)], &[]).unwrap();
        let report = ev
            .rank(&h, &[edge(0, 2)], Split::Test, MaskSeen::None, Averaging::Interaction)
            .unwrap();
        assert_eq!(report.results[0].rank, 1);
        assert_eq!(report.results[0].candidates, 2);
        assert_eq!(report.summary.unwrap().recall_at_5, 1.0);
    }

    #[test]
    fn ties_break_by_item_id() {
        let h = DenseMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let ev = Evaluator::new(1, 3, &[edge(0, 1), edge(0, 2), edge(0, 3)], &[]).unwrap();
        let ranks: Vec<usize> = [1, 2, 3]
            .iter()
            .map(|&i| {
                ev.rank(&h, &[edge(0, i)], Split::Test, MaskSeen::None, Averaging::Interaction)
                    .unwrap()
                    .results[0]
                    .rank
            })
            .collect();
        assert_eq!(ranks, [1, 2, 3]);
    }

    #[test]
    fn matches_full_sort_oracle() {
        let (users, items, d) = (4, 50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..users + items)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let h = DenseMatrix::from_rows(&rows).unwrap();
        // The last user has seen every item, so no target is cold.
        let mut train: Vec<_> = (0..users - 1)
            .flat_map(|u| (0..6).map(move |j| edge(u, users + (7 * u + 3 * j) % items)))
            .collect();
        train.extend((0..items).map(|j| edge(users - 1, users + j)));
        let valid = vec![edge(0, users + 40), edge(1, users + 41)];
        let ev = Evaluator::new(users, items, &train, &valid).unwrap();
        let targets: Vec<_> = (0..users - 1).map(|u| edge(u, users + 30 + u)).collect();
        let report = ev
            .rank(&h, &targets, Split::Test, MaskSeen::TrainValid, Averaging::Interaction)
            .unwrap();
        assert_eq!(report.results.len(), users - 1);
        for r in &report.results {
            let hidden: BTreeSet<usize> = train
                .iter()
                .chain(&valid)
                .filter(|e| e.user == r.user)
                .map(|e| e.item)
                .collect();
            let mut list: Vec<(f64, usize)> = (users..users + items)
                .filter(|i| !hidden.contains(i))
                .map(|i| (dot(h.row(r.user), h.row(i)), i))
                .collect();
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let pos = list.iter().position(|&(_, i)| i == r.item).unwrap();
            assert_eq!(r.rank, pos + 1);
            assert_eq!(r.candidates, list.len());
        }
    }

    #[test]
    fn masked_targets_and_cold_nodes_are_counted() {
        let h = DenseMatrix::zeros(3 + 4, 2);
        // Item 6 never appears in train; user 1 has no train edge.
        let train = [edge(0, 3), edge(0, 4), edge(2, 5)];
        let valid = [edge(0, 5)];
        let ev = Evaluator::new(3, 4, &train, &valid).unwrap();
        let targets = [edge(0, 3), edge(0, 6), edge(1, 3), edge(0, 5)];
        let r = ev
            .rank(&h, &targets, Split::Test, MaskSeen::TrainValid, Averaging::Interaction)
            .unwrap();
        assert_eq!((r.skipped_cold, r.skipped_masked), (2, 2));
        assert!(r.summary.is_none());

        let r = ev.rank(&h, &targets, Split::Valid, MaskSeen::TrainValid, Averaging::Interaction).unwrap();
        assert_eq!((r.skipped_cold, r.skipped_masked, r.results.len()), (2, 1, 1));
        // Only the train items are hidden on the valid split.
        assert_eq!(r.results[0].candidates, 2);
    }

    #[test]
    fn masking_soundness() {
        // Masked items outscore everything; the target must still reach rank 1.
        let (users, items) = (3, 12);
        let mut rows = vec![vec![1.0]; users];
        rows.extend((0..items).map(|j| vec![if j < 4 { 10.0 + j as f64 } else { j as f64 * 0.1 }]));
        let h = DenseMatrix::from_rows(&rows).unwrap();
        let train: Vec<_> = (0..users).flat_map(|u| (0..3).map(move |j| edge(u, users + j))).collect();
        let valid: Vec<_> = (0..users).map(|u| edge(u, users + 3)).collect();
        let ev = Evaluator::new(users, items, &train, &valid).unwrap();
        let targets: Vec<_> = (0..users).map(|u| edge(u, users + items - 1)).collect();
        let r = ev.rank(&h, &targets, Split::Test, MaskSeen::TrainValid, Averaging::Interaction).unwrap();
        assert!(r.results.iter().all(|x| x.rank == 1 && x.candidates == items - 4));
        let r = ev.rank(&h, &targets, Split::Test, MaskSeen::Train, Averaging::Interaction).unwrap();
        assert!(r.results.iter().all(|x| x.rank == 2));
        let r = ev.rank(&h, &targets, Split::Test, MaskSeen::None, Averaging::Interaction).unwrap();
        assert!(r.results.iter().all(|x| x.rank == 5));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [MaskSeen::Train, MaskSeen::TrainValid, MaskSeen::None] {
            assert_eq!(m.to_string().parse::<MaskSeen>().unwrap(), m);
        }
        assert_eq!(MaskSeen::default(), MaskSeen::TrainValid);
        assert!("valid-only".parse::<MaskSeen>().is_err());
        assert_eq!("validation".parse::<Split>().unwrap(), Split::Valid);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let ev = Evaluator::new(1, 2, &[edge(0, 1)], &[]).unwrap();
        let h = DenseMatrix::zeros(2, 1);
        assert!(ev.rank(&h, &[], Split::Test, MaskSeen::None, Averaging::Interaction).is_err());
        assert!(Evaluator::new(1, 2, &[edge(0, 3)], &[]).is_err());
    }
}
