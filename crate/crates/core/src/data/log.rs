use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped user-item interaction in the joint node space: users take
/// ids `0..num_users`, items take `num_users..num_users + num_items`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Remapped interactions plus the raw identifier tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub num_users: usize,
    pub num_items: usize,
    /// Raw identifier of user `u`.
    pub user_ids: Vec<String>,
    /// Raw identifier of item `num_users + j`, at position `j`.
    pub item_ids: Vec<String>,
    pub edges: Vec<TemporalEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    /// `user \t item \t rating \t timestamp`, integer ids.
    MovieLens,
    /// `user,item,rating,timestamp`, arbitrary string ids.
    Amazon,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "movielens" | "ml" => Ok(Self::MovieLens),
            "amazon" => Ok(Self::Amazon),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

impl std::fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MovieLens => "movielens",
            Self::Amazon => "amazon",
        })
    }
}

impl InteractionLog {
    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_item(&self, node: usize) -> bool {
        node >= self.num_users && node < self.num_nodes()
    }

    /// Same identifier tables, different edge list.
    pub fn with_edges(&self, edges: Vec<TemporalEdge>) -> Self {
        Self {
            num_users: self.num_users,
            num_items: self.num_items,
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            edges,
        }
    }

    pub fn is_chronological(&self) -> bool {
        self.edges.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }
}

struct RawRow {
    user: String,
    item: String,
    timestamp: i64,
}

pub fn load(path: impl AsRef<Path>, format: DatasetFormat) -> Result<InteractionLog> {
    match format {
        DatasetFormat::MovieLens => parse_movielens(path),
        DatasetFormat::Amazon => parse_amazon(path),
    }
}

pub fn parse_movielens(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_movielens_str(&text)
}

pub fn parse_amazon(path: impl AsRef<Path>) -> Result<InteractionLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_amazon_str(&text)
}

/// Parses MovieLens `u.data` text. Every rating counts as a positive.
pub fn parse_movielens_str(text: &str) -> Result<InteractionLog> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        for (name, value) in [("user", fields[0]), ("item", fields[1])] {
            if value.parse::<u64>().is_err() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("{name} id '{value}' is not a non-negative integer"),
                });
            }
        }
        rows.push(parse_rest(line_no, fields[0], fields[1], fields[2], fields[3])?);
    }
    build(rows, |a, b| {
        a.parse::<u64>()
            .expect("validated")
            .cmp(&b.parse::<u64>().expect("validated"))
    })
}

/// Parses an Amazon ratings-only CSV. A leading header row is skipped.
pub fn parse_amazon_str(text: &str) -> Result<InteractionLog> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 comma-separated fields, found {}", fields.len()),
            });
        }
        if rows.is_empty() && fields[3].parse::<i64>().is_err() && fields[3].eq_ignore_ascii_case("timestamp") {
            continue;
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        rows.push(parse_rest(line_no, fields[0], fields[1], fields[2], fields[3])?);
    }
    build(rows, |a, b| a.cmp(b))
}

fn parse_rest(line: usize, user: &str, item: &str, rating: &str, ts: &str) -> Result<RawRow> {
    rating.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("rating '{rating}' is not numeric"),
    })?;
    let timestamp = ts.parse::<i64>().map_err(|_| Error::Parse {
        line,
        message: format!("timestamp '{ts}' is not an integer"),
    })?;
    if timestamp < 0 {
        return Err(Error::Parse {
            line,
            message: format!("negative timestamp {timestamp}"),
        });
    }
    Ok(RawRow {
        user: user.to_string(),
        item: item.to_string(),
        timestamp,
    })
}

/// Dense remapping in raw-id order, then sort by `(timestamp, user, item)`.
fn build(rows: Vec<RawRow>, order: impl Fn(&str, &str) -> std::cmp::Ordering) -> Result<InteractionLog> {
    if rows.is_empty() {
        return Err(Error::Empty("no interactions found".into()));
    }
    let mut users: Vec<&str> = rows.iter().map(|r| r.user.as_str()).collect();
    let mut items: Vec<&str> = rows.iter().map(|r| r.item.as_str()).collect();
    for ids in [&mut users, &mut items] {
        ids.sort_by(|a, b| order(a, b));
        ids.dedup();
    }
    let user_index: BTreeMap<&str, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_index: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, &it)| (it, i)).collect();
    let num_users = users.len();

    let mut edges: Vec<TemporalEdge> = rows
        .iter()
        .map(|r| TemporalEdge {
            user: user_index[r.user.as_str()],
            item: num_users + item_index[r.item.as_str()],
            timestamp: r.timestamp,
        })
        .collect();
    edges.sort_by_key(|e| (e.timestamp, e.user, e.item));

    Ok(InteractionLog {
        num_users,
        num_items: items.len(),
        user_ids: users.iter().map(|s| s.to_string()).collect(),
        item_ids: items.iter().map(|s| s.to_string()).collect(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let log = parse_movielens_str("1\t10\t5\t100\n").unwrap();
        assert_eq!((log.num_users, log.num_items), (1, 1));
        assert_eq!(
            log.edges,
            vec![TemporalEdge {
                user: 0,
                item: 1,
                timestamp: 100
            }]
        );
    }

    #[test]
    fn equal_timestamps_break_ties_by_user_then_item() {
        let log = parse_movielens_str("2\t7\t3\t50\n1\t9\t4\t50\n1\t7\t1\t50\n").unwrap();
        let pairs: Vec<(usize, usize)> = log.edges.iter().map(|e| (e.user, e.item)).collect();
        // users {1,2} -> {0,1}; items {7,9} -> {2,3}
        assert_eq!(pairs, vec![(0, 2), (0, 3), (1, 2)]);
    }

    #[test]
    fn ids_are_remapped_in_numeric_order() {
        let log = parse_movielens_str("10\t100\t1\t3\n9\t2\t1\t1\n").unwrap();
        assert_eq!(log.user_ids, vec!["9", "10"]);
        assert_eq!(log.item_ids, vec!["2", "100"]);
        assert_eq!(log.edges[0], TemporalEdge { user: 0, item: 2, timestamp: 1 });
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_movielens_str("1\t2\t3\t4\n1\t2\t3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_movielens_str("1\t2\t3\t4\nx\t2\t3\t4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_movielens_str("1\t2\t3\tlate\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_movielens_str(""), Err(Error::Empty(_))));
        assert!(matches!(parse_amazon_str("\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn amazon_string_ids_and_header() {
        let text = "user,item,rating,timestamp\nA2X,B00Z,5.0,1300\nA1Q,B00Z,4.0,1200\nA1Q,B01A,3.0,1300\n";
        let log = parse_amazon_str(text).unwrap();
        assert_eq!(log.user_ids, vec!["A1Q", "A2X"]);
        assert_eq!(log.item_ids, vec!["B00Z", "B01A"]);
        assert_eq!(log.edges.len(), 3);
        assert_eq!(log.edges[0], TemporalEdge { user: 0, item: 2, timestamp: 1200 });
        assert!(log.is_chronological());
    }
}
