use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank of one held-out interaction among its candidate items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedInteraction {
    pub user: usize,
    pub item: usize,
    /// 1-based.
    pub rank: usize,
    pub candidates: usize,
}

/// How metrics average over held-out interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Averaging {
    /// Every interaction weighs the same.
    #[default]
    Interaction,
    /// Per-user means first, then the mean over users.
    User,
}

fn nonempty(results: &[RankedInteraction]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Empty("no ranked interactions".into()));
    }
    Ok(())
}

/// Fraction of interactions ranked within the top `k`.
pub fn recall_at_k(results: &[RankedInteraction], k: usize) -> Result<f64> {
    nonempty(results)?;
    Ok(results.iter().filter(|r| r.rank <= k).count() as f64 / results.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(results: &[RankedInteraction]) -> Result<f64> {
    nonempty(results)?;
    Ok(results.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / results.len() as f64)
}

fn per_user(results: &[RankedInteraction], f: impl Fn(&RankedInteraction) -> f64) -> Result<f64> {
    nonempty(results)?;
    let mut by_user: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in results {
        let slot = by_user.entry(r.user).or_default();
        slot.0 += f(r);
        slot.1 += 1;
    }
    Ok(by_user.values().map(|(s, n)| s / *n as f64).sum::<f64>() / by_user.len() as f64)
}

/// Recall@k and MRR under the chosen averaging.
pub fn summarize(results: &[RankedInteraction], averaging: Averaging) -> Result<(f64, f64, f64)> {
    match averaging {
        Averaging::Interaction => Ok((recall_at_k(results, 5)?, recall_at_k(results, 10)?, mrr(results)?)),
        Averaging::User => Ok((
            per_user(results, |r| f64::from(r.rank <= 5))?,
            per_user(results, |r| f64::from(r.rank <= 10))?,
            per_user(results, |r| 1.0 / r.rank as f64)?,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranks(rs: &[usize]) -> Vec<RankedInteraction> {
        rs.iter()
            .enumerate()
            .map(|(i, &rank)| RankedInteraction {
                user: i,
                item: 0,
                rank,
                candidates: 100,
            })
            .collect()
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&ranks(&[1, 2, 3]), 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranks(&[6]), 5).unwrap(), 0.0);
        assert!((recall_at_k(&ranks(&[1, 6, 11]), 10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(recall_at_k(&[], 5).is_err());
    }

    #[test]
    fn mrr_cases() {
        assert_eq!(mrr(&ranks(&[1])).unwrap(), 1.0);
        assert_eq!(mrr(&ranks(&[4])).unwrap(), 0.25);
        assert!((mrr(&ranks(&[1, 2, 4])).unwrap() - 0.5833333).abs() < 1e-7);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn per_user_averaging() {
        let mut rs = ranks(&[1, 2, 4]);
        rs[1].user = 0;
        // user 0: ranks {1, 2} -> 0.75; user 2: rank 4 -> 0.25
        let (_, _, m) = summarize(&rs, Averaging::User).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        let (_, _, m) = summarize(&rs, Averaging::Interaction).unwrap();
        assert!((m - 1.75 / 3.0).abs() < 1e-15);
    }
}
