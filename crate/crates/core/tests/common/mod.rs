#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Planted block log in MovieLens layout: `blocks` groups of `size` users and
/// `size` items. Every user clicks `size − 1` items of its own block during
/// four early rounds, then the remaining one in a final round, so the
/// chronological 80/10/10 split holds out exactly that last click.
/// Only valid for `size >= 5`, where the final round is the last fifth.
pub fn block_log(blocks: usize, size: usize) -> String {
    let users = blocks * size;
    let mut rows = Vec::new();
    for u in 0..users {
        let (b, r) = (u / size, u % size);
        let held = b * size + r;
        let mut round = 0;
        for j in 0..size {
            let item = b * size + j;
            if item != held {
                rows.push((round * 1000 + u as i64 * 7 + j as i64, u, item));
                round += 1;
            }
        }
        // Final round interleaves blocks so both held-out splits see all of them.
        rows.push((100_000 + ((r * blocks + b) * 13) as i64, u, held));
    }
    rows.sort();
    let mut out = String::new();
    for (t, u, i) in rows {
        writeln!(out, "{}\t{}\t5\t{}", u + 1, i + 1, t).unwrap();
    }
    out
}

pub fn write_block_log(dir: &Path, blocks: usize, size: usize) -> PathBuf {
    let path = dir.join("u.data");
    std::fs::write(&path, block_log(blocks, size)).unwrap();
    path
}

/// A small config over `data`; `key = value` lines in `extra` replace or
/// extend the defaults.
pub fn config_text(data: &Path, out: &Path, extra: &str) -> String {
    let mut pairs: Vec<(String, String)> = [
        ("dataset", data.display().to_string()),
        ("format", "movielens".into()),
        ("k", "2".into()),
        ("d", "8".into()),
        ("d_t", "4".into()),
        ("eps", "0.5".into()),
        ("lr", "0.01".into()),
        ("epochs", "4".into()),
        ("patience", "4".into()),
        ("batch_size", "32".into()),
        ("out", out.display().to_string()),
        ("wall_clock", "false".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for line in extra.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').expect("key = value");
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        match pairs.iter_mut().find(|(key, _)| *key == k) {
            Some(slot) => slot.1 = v,
            None => pairs.push((k, v)),
        }
    }
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
