use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::Averaging;
use super::ranking::MaskSeen;
use crate::data::DatasetFormat;
use crate::error::{Error, Result};
use crate::model::{SignalPolicy, TrainConfig, Variant};

/// Where the interactions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Raw(DatasetFormat),
    /// A directory written by `prepare`.
    Prepared,
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("prepared") {
            return Ok(Self::Prepared);
        }
        s.parse().map(Self::Raw)
    }
}

impl std::fmt::Display for DataSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Raw(fmt) => write!(f, "{fmt}"),
            Self::Prepared => f.write_str("prepared"),
        }
    }
}

/// One fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub dataset: PathBuf,
    pub format: DataSource,
    /// Number of intervals.
    pub k: usize,
    pub train: TrainConfig,
    pub mask_seen: MaskSeen,
    pub out_dir: PathBuf,
    /// When false, timing columns are written as zero so that reruns produce
    /// byte-identical output.
    pub wall_clock: bool,
    /// The text this config was parsed from.
    pub source: String,
}

/// Keys accepted in a config file, for error messages.
pub const KEYS: &[&str] = &[
    "run_id",
    "dataset",
    "format",
    "k",
    "eps",
    "d",
    "d_t",
    "lr",
    "lambda",
    "epochs",
    "patience",
    "batch_size",
    "init_std",
    "seed",
    "variant",
    "policy",
    "mask_seen",
    "per_user",
    "out",
    "wall_clock",
];

/// `key = value` lines; `#` starts a comment. Duplicate or unknown keys are
/// errors.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected 'key = value', found '{line}'"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("unknown key '{key}'; expected one of {}", KEYS.join(", ")),
            });
        }
        if out.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(key: &str, line: usize, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| Error::Parse {
        line,
        message: format!("bad value '{raw}' for {key}: {e}"),
    })
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

impl ExperimentConfig {
    /// Builds a config from single-valued pairs. Only `dataset` is required.
    fn from_pairs(pairs: &BTreeMap<String, (usize, String)>, source: String) -> Result<Self> {
        let (_, dataset) = pairs
            .get("dataset")
            .ok_or_else(|| Error::Config("missing required key 'dataset'".into()))?;
        let mut cfg = Self {
            run_id: "run".into(),
            dataset: PathBuf::from(dataset),
            format: DataSource::Raw(DatasetFormat::MovieLens),
            k: 3,
            train: TrainConfig::default(),
            mask_seen: MaskSeen::default(),
            out_dir: PathBuf::from("runs"),
            wall_clock: true,
            source,
        };
        for (key, (line, raw)) in pairs {
            let (line, raw) = (*line, raw.as_str());
            let t = &mut cfg.train;
            match key.as_str() {
                "dataset" => {}
                "run_id" => cfg.run_id = raw.to_string(),
                "format" => cfg.format = value(key, line, raw)?,
                "k" => cfg.k = value(key, line, raw)?,
                "eps" => t.step = value(key, line, raw)?,
                "d" => t.dim = value(key, line, raw)?,
                "d_t" => t.time_dim = value(key, line, raw)?,
                "lr" => t.lr = value(key, line, raw)?,
                "lambda" => t.weight_decay = value(key, line, raw)?,
                "epochs" => t.epochs = value(key, line, raw)?,
                "patience" => t.patience = value(key, line, raw)?,
                "batch_size" => t.batch_size = value(key, line, raw)?,
                "init_std" => t.init_std = value(key, line, raw)?,
                "seed" => t.seed = value(key, line, raw)?,
                "variant" => t.variant = value::<Variant>(key, line, raw)?,
                "policy" => t.policy = value::<SignalPolicy>(key, line, raw)?,
                "mask_seen" => cfg.mask_seen = value(key, line, raw)?,
                "per_user" => {
                    let per_user = parse_bool(raw).map_err(|m| Error::Parse { line, message: m })?;
                    t.averaging = if per_user { Averaging::User } else { Averaging::Interaction };
                }
                "out" => cfg.out_dir = PathBuf::from(raw),
                "wall_clock" => cfg.wall_clock = parse_bool(raw).map_err(|m| Error::Parse { line, message: m })?,
                other => unreachable!("key '{other}' passed the allow-list"),
            }
        }
        if cfg.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?, text.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative dataset and output paths relative to `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Canonical `key = value` text of this config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let rows = [
            ("run_id", self.run_id.clone()),
            ("dataset", self.dataset.display().to_string()),
            ("format", self.format.to_string()),
            ("k", self.k.to_string()),
            ("eps", t.step.to_string()),
            ("d", t.dim.to_string()),
            ("d_t", t.time_dim.to_string()),
            ("lr", t.lr.to_string()),
            ("lambda", t.weight_decay.to_string()),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("init_std", t.init_std.to_string()),
            ("seed", t.seed.to_string()),
            ("variant", t.variant.to_string()),
            ("policy", t.policy.to_string()),
            ("mask_seen", self.mask_seen.to_string()),
            ("per_user", (t.averaging == Averaging::User).to_string()),
            ("out", self.out_dir.display().to_string()),
            ("wall_clock", self.wall_clock.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// A grid file: the config syntax, where any value may be a comma-separated
/// list. Expands to the cartesian product, varying the last key fastest in
/// the order keys appear in the file. Run ids get a `-NNN` suffix.
pub fn parse_grid(text: &str) -> Result<Vec<ExperimentConfig>> {
    let pairs = parse_pairs(text)?;
    let mut order: Vec<(&String, &(usize, String))> = pairs.iter().collect();
    order.sort_by_key(|(_, (line, _))| *line);
    let axes: Vec<(String, usize, Vec<String>)> = order
        .into_iter()
        .map(|(k, (line, v))| (k.clone(), *line, v.split(',').map(|s| s.trim().to_string()).collect()))
        .collect();
    if let Some((k, line, _)) = axes.iter().find(|(_, _, vs)| vs.iter().any(|v| v.is_empty())) {
        return Err(Error::Parse {
            line: *line,
            message: format!("empty value in list for {k}"),
        });
    }
    let total: usize = axes.iter().map(|(_, _, vs)| vs.len()).product();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut cell = BTreeMap::new();
        for (k, line, vs) in axes.iter().rev() {
            cell.insert(k.clone(), (*line, vs[rem % vs.len()].clone()));
            rem /= vs.len();
        }
        let base = cell.get("run_id").map_or("run".to_string(), |(_, v)| v.clone());
        cell.insert("run_id".into(), (0, format!("{base}-{idx:03}")));
        let text: String = cell.iter().map(|(k, (_, v))| format!("{k} = {v}\n")).collect();
        out.push(ExperimentConfig::from_pairs(&cell, text)?);
    }
    Ok(out)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Vec<ExperimentConfig>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grid = parse_grid(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for cfg in &mut grid {
        cfg.resolve_relative_to(base);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EdgeView;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse("dataset = data/u.data\n").unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.train.dim, 64);
        assert_eq!(cfg.train.time_dim, 16);
        assert_eq!(cfg.train.step, 0.2);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.weight_decay, 1e-3);
        assert_eq!(cfg.train.policy, SignalPolicy::ORIGIN);
        assert_eq!(cfg.mask_seen, MaskSeen::TrainValid);
    }

    #[test]
    fn full_config() {
        let text = "# ablation cell\ndataset = ratings.csv\nformat = amazon\nk = 4\neps = 0.5 # coarse\n\
                    variant = att\npolicy = m3\nseed = 9\nmask_seen = none\nper_user = true\nwall_clock = false\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.format, DataSource::Raw(DatasetFormat::Amazon));
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.train.step, 0.5);
        assert_eq!(cfg.train.variant, Variant::Att);
        assert_eq!(cfg.train.policy, SignalPolicy::new(EdgeView::Previous, EdgeView::Current));
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.averaging, Averaging::User);
        assert!(!cfg.wall_clock);
        assert_eq!(cfg.source, text);
    }

    #[test]
    fn canonical_text_reparses() {
        let cfg = ExperimentConfig::parse("dataset = x\nk = 2\npolicy = all/prev\n").unwrap();
        let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(again.train, cfg.train);
        assert_eq!(again.k, 2);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "dataset = x\nlearning_rate = 0.1\n",
            "dataset = x\nk = 2\nk = 3\n",
            "k = 2\n",
            "dataset = x\nk = two\n",
            "dataset = x\nk = 0\n",
            "dataset = x\neps = -1\n",
            "dataset = x\nnot a pair\n",
            "dataset = x\nvariant = big\n",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn grid_expands_cartesian_product() {
        let grid = parse_grid("dataset = x\nvariant = full, att, ode, gcn\nseed = 0,1\n").unwrap();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0].train.variant, Variant::Full);
        assert_eq!(grid[1].train.seed, 1);
        assert_eq!(grid[2].train.variant, Variant::Att);
        assert_eq!(grid[7].run_id, "run-007");
        let single = parse_grid("dataset = x\n").unwrap();
        assert_eq!(single.len(), 1);
        assert!(parse_grid("dataset = x\nseed = 1,,2\n").is_err());
    }
}
