use super::log::InteractionLog;
use crate::error::{Error, Result};

/// Fractions for the train/valid/test split; test receives the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// The three chronological partitions of one log.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: InteractionLog,
    pub valid: InteractionLog,
    pub test: InteractionLog,
}

/// Chronological split: the first `⌊train·n⌋` edges go to train, the next
/// `⌊valid·n⌋` to valid and the rest to test.
pub fn chronological_split(log: &InteractionLog, ratios: SplitRatios) -> Result<Splits> {
    let n = log.len();
    if n < 10 {
        return Err(Error::Invalid(format!("{n} interactions is too few to split")));
    }
    if !log.is_chronological() {
        return Err(Error::Invalid("interaction log is not sorted by timestamp".into()));
    }
    let total = ratios.train + ratios.valid + ratios.test;
    if ratios.train <= 0.0 || ratios.valid < 0.0 || ratios.test < 0.0 || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    // The epsilon absorbs representation error such as 0.8 * 100000.
    let n_train = (ratios.train * n as f64 + 1e-9).floor() as usize;
    let n_valid = (ratios.valid * n as f64 + 1e-9).floor() as usize;
    let (train, rest) = log.edges.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid.min(rest.len()));
    Ok(Splits {
        train: log.with_edges(train.to_vec()),
        valid: log.with_edges(valid.to_vec()),
        test: log.with_edges(test.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TemporalEdge;

    fn log_with_times(times: &[i64]) -> InteractionLog {
        InteractionLog {
            num_users: 1,
            num_items: times.len(),
            user_ids: vec!["u".into()],
            item_ids: (0..times.len()).map(|i| i.to_string()).collect(),
            edges: times
                .iter()
                .enumerate()
                .map(|(i, &t)| TemporalEdge {
                    user: 0,
                    item: 1 + i,
                    timestamp: t,
                })
                .collect(),
        }
    }

    #[test]
    fn sizes_for_one_hundred_thousand() {
        let log = log_with_times(&(0..100_000).collect::<Vec<_>>());
        let s = chronological_split(&log, SplitRatios::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80_000, 10_000, 10_000));
    }

    #[test]
    fn ten_edges() {
        let log = log_with_times(&(1..=10).collect::<Vec<_>>());
        let s = chronological_split(&log, SplitRatios::default()).unwrap();
        let times = |l: &InteractionLog| l.edges.iter().map(|e| e.timestamp).collect::<Vec<_>>();
        assert_eq!(times(&s.train), (1..=8).collect::<Vec<_>>());
        assert_eq!(times(&s.valid), vec![9]);
        assert_eq!(times(&s.test), vec![10]);
    }

    #[test]
    fn unsorted_and_tiny_inputs_are_rejected() {
        let mut times: Vec<i64> = (1..=10).collect();
        times.swap(2, 7);
        assert!(chronological_split(&log_with_times(&times), SplitRatios::default()).is_err());
        assert!(chronological_split(&log_with_times(&[1, 2, 3]), SplitRatios::default()).is_err());
    }
}
