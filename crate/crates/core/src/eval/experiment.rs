use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::ranking::{EvalReport, Evaluator, Split};
use crate::data::{build_hybrid_system, chronological_split, load, HybridSystem, SplitRatios, TemporalEdge};
use crate::error::{Error, Result};
use crate::model::{fit_with_progress, Checkpoint, EpochLog, FitResult, ForwardPlan, ModelParams};

const HELDOUT_FORMAT: &str = "gderec-heldout";

/// A split dataset with its training graph built.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub system: HybridSystem,
    pub valid: Vec<TemporalEdge>,
    pub test: Vec<TemporalEdge>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Heldout {
    format: String,
    version: u32,
    valid: Vec<TemporalEdge>,
    test: Vec<TemporalEdge>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl PreparedData {
    /// Chronological 80/10/10 split, then `k` intervals over the train part.
    pub fn from_log(log: &crate::data::InteractionLog, k: usize) -> Result<Self> {
        let splits = chronological_split(log, SplitRatios::default())?;
        Ok(Self {
            system: build_hybrid_system(&splits.train, k)?,
            valid: splits.valid.edges,
            test: splits.test.edges,
            user_ids: log.user_ids.clone(),
            item_ids: log.item_ids.clone(),
        })
    }

    pub fn heldout(&self, split: Split) -> &[TemporalEdge] {
        match split {
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn evaluator(&self) -> Result<Evaluator> {
        Evaluator::new(
            self.system.num_users,
            self.system.num_items,
            self.system.train_edges(),
            &self.valid,
        )
    }

    /// Writes `system.json` and `heldout.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.system.save(dir.join("system.json"))?;
        let heldout = Heldout {
            format: HELDOUT_FORMAT.into(),
            version: 1,
            valid: self.valid.clone(),
            test: self.test.clone(),
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
        };
        let path = dir.join("heldout.json");
        fs::write(&path, serde_json::to_vec(&heldout)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let system = HybridSystem::load(dir.join("system.json"))?;
        let path = dir.join("heldout.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let h: Heldout = serde_json::from_slice(&bytes)?;
        if h.format != HELDOUT_FORMAT || h.version != 1 {
            return Err(Error::Invalid(format!("{}: not a held-out snapshot", path.display())));
        }
        if h.user_ids.len() != system.num_users || h.item_ids.len() != system.num_items {
            return Err(Error::Invalid(format!("{}: id tables disagree with system", path.display())));
        }
        Ok(Self {
            system,
            valid: h.valid,
            test: h.test,
            user_ids: h.user_ids,
            item_ids: h.item_ids,
        })
    }
}

impl ExperimentConfig {
    pub fn load_data(&self) -> Result<PreparedData> {
        match self.format {
            DataSource::Raw(fmt) => PreparedData::from_log(&load(&self.dataset, fmt)?, self.k),
            DataSource::Prepared => {
                let data = PreparedData::load(&self.dataset)?;
                if data.system.k != self.k {
                    return Err(Error::Config(format!(
                        "prepared data has k = {}, config asks for {}",
                        data.system.k, self.k
                    )));
                }
                Ok(data)
            }
        }
    }

    /// Short dataset label for result tables.
    pub fn dataset_label(&self) -> String {
        self.dataset
            .file_name()
            .map_or_else(|| self.dataset.display().to_string(), |n| n.to_string_lossy().into_owned())
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitResult,
    pub valid: EvalReport,
    pub test: EvalReport,
    pub seconds: f64,
}

/// Trains `cfg` on `data` and ranks both held-out splits with the best
/// parameters.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    progress: impl FnMut(&EpochLog),
) -> Result<RunOutcome> {
    let started = Instant::now();
    let fit = fit_with_progress(&data.system, &data.valid, &cfg.train, progress)?;
    let (valid, test) = rank_splits(&fit.params, cfg, data)?;
    Ok(RunOutcome {
        fit,
        valid,
        test,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn rank_splits(params: &ModelParams, cfg: &ExperimentConfig, data: &PreparedData) -> Result<(EvalReport, EvalReport)> {
    let train = &cfg.train;
    let plan = ForwardPlan::new(&data.system, train.policy, train.variant, train.step)?;
    let h = plan.represent(params)?;
    let ev = data.evaluator()?;
    Ok((
        ev.rank(&h, &data.valid, Split::Valid, cfg.mask_seen, train.averaging)?,
        ev.rank(&h, &data.test, Split::Test, cfg.mask_seen, train.averaging)?,
    ))
}

pub const METRICS_HEADER: &str =
    "run_id,dataset,variant,policy,K,eps,seed,epoch,split,recall@5,recall@10,mrr,loss,nfe,wall_seconds";

/// One line of the metrics table. Metric fields are `None` for failed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub dataset: String,
    pub variant: String,
    pub policy: String,
    pub k: usize,
    pub eps: f64,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub recall_at_5: Option<f64>,
    pub recall_at_10: Option<f64>,
    pub mrr: Option<f64>,
    pub loss: Option<f64>,
    pub nfe: usize,
    pub wall_seconds: f64,
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricsRow {
    fn base(cfg: &ExperimentConfig, epoch: usize, split: &str) -> Self {
        Self {
            run_id: cfg.run_id.clone(),
            dataset: cfg.dataset_label(),
            variant: cfg.train.variant.to_string(),
            policy: cfg.train.policy.to_string(),
            k: cfg.k,
            eps: cfg.train.step,
            seed: cfg.train.seed,
            epoch,
            split: split.into(),
            recall_at_5: None,
            recall_at_10: None,
            mrr: None,
            loss: None,
            nfe: 0,
            wall_seconds: 0.0,
        }
    }

    /// Per-epoch validation row.
    pub fn epoch(cfg: &ExperimentConfig, entry: &EpochLog, nfe: usize) -> Self {
        let mut row = Self::base(cfg, entry.epoch, "valid");
        if let Some(s) = entry.valid {
            row.recall_at_5 = Some(s.recall_at_5);
            row.recall_at_10 = Some(s.recall_at_10);
            row.mrr = Some(s.mrr);
        }
        row.loss = Some(entry.loss);
        row.nfe = nfe;
        row.wall_seconds = if cfg.wall_clock { entry.seconds } else { 0.0 };
        row
    }

    /// Held-out row for the selected epoch of a finished run.
    pub fn outcome(cfg: &ExperimentConfig, out: &RunOutcome, split: Split) -> Self {
        let report = match split {
            Split::Valid => &out.valid,
            Split::Test => &out.test,
        };
        let mut row = Self::base(cfg, out.fit.best_epoch, &split.to_string());
        if let Some(s) = report.summary {
            row.recall_at_5 = Some(s.recall_at_5);
            row.recall_at_10 = Some(s.recall_at_10);
            row.mrr = Some(s.mrr);
        }
        row.loss = Some(out.fit.best().loss);
        row.nfe = out.fit.nfe_per_interval;
        row.wall_seconds = if cfg.wall_clock { out.seconds } else { 0.0 };
        row
    }

    pub fn failed(cfg: &ExperimentConfig) -> Self {
        Self::base(cfg, 0, "failed")
    }

    pub fn to_csv(&self) -> String {
        [
            field(&self.run_id),
            field(&self.dataset),
            field(&self.variant),
            field(&self.policy),
            self.k.to_string(),
            self.eps.to_string(),
            self.seed.to_string(),
            self.epoch.to_string(),
            field(&self.split),
            opt(self.recall_at_5),
            opt(self.recall_at_10),
            opt(self.mrr),
            opt(self.loss),
            self.nfe.to_string(),
            self.wall_seconds.to_string(),
        ]
        .join(",")
    }
}

/// Result of one ablation cell.
#[derive(Debug)]
pub struct CellResult {
    pub config: ExperimentConfig,
    pub outcome: Result<RunOutcome>,
}

/// Trains and evaluates every config, writing one test row per cell to `out`
/// (header first). A failing cell gets a `failed` row and the grid goes on.
pub fn run_ablation(grid: &[ExperimentConfig], out: &mut impl Write) -> Result<Vec<CellResult>> {
    run_ablation_with(grid, out, |_, _| {})
}

/// [`run_ablation`] with a per-epoch progress hook receiving the cell index.
pub fn run_ablation_with(
    grid: &[ExperimentConfig],
    out: &mut impl Write,
    mut progress: impl FnMut(usize, &EpochLog),
) -> Result<Vec<CellResult>> {
    let io = |e| Error::io("<ablation output>", e);
    writeln!(out, "{METRICS_HEADER}").map_err(io)?;
    let mut cache: BTreeMap<(PathBuf, String, usize), PreparedData> = BTreeMap::new();
    let mut cells = Vec::with_capacity(grid.len());
    for (i, cfg) in grid.iter().enumerate() {
        let key = (cfg.dataset.clone(), cfg.format.to_string(), cfg.k);
        let data = match cache.get(&key) {
            Some(d) => Ok(d),
            None => cfg.load_data().map(|d| &*cache.entry(key).or_insert(d)),
        };
        let outcome = data.and_then(|d| run_experiment(cfg, d, |e| progress(i, e)));
        let row = match &outcome {
            Ok(o) => MetricsRow::outcome(cfg, o, Split::Test),
            Err(e) => {
                eprintln!("cell {} ({}) failed: {e}", i, cfg.run_id);
                MetricsRow::failed(cfg)
            }
        };
        writeln!(out, "{}", row.to_csv()).map_err(io)?;
        out.flush().map_err(io)?;
        cells.push(CellResult {
            config: cfg.clone(),
            outcome,
        });
    }
    Ok(cells)
}

/// Files written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub outcome: RunOutcome,
}

/// Runs `cfg` and writes `checkpoint.json` and `metrics.csv` (one valid row
/// per epoch, then the selected epoch's valid and test rows) under
/// `out_dir/run_id`.
pub fn train_to_dir(cfg: &ExperimentConfig, progress: impl FnMut(&EpochLog)) -> Result<TrainArtifacts> {
    let data = cfg.load_data()?;
    let outcome = run_experiment(cfg, &data, progress)?;
    let dir = cfg.out_dir.join(&cfg.run_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let checkpoint = dir.join("checkpoint.json");
    Checkpoint::new(
        outcome.fit.params.clone(),
        cfg.train.clone(),
        cfg.to_text(),
        outcome.fit.best_epoch,
    )?
    .save(&checkpoint)?;

    let mut text = format!("{METRICS_HEADER}\n");
    for entry in &outcome.fit.log {
        text += &MetricsRow::epoch(cfg, entry, outcome.fit.nfe_per_interval).to_csv();
        text.push('\n');
    }
    for split in [Split::Valid, Split::Test] {
        text += &MetricsRow::outcome(cfg, &outcome, split).to_csv();
        text.push('\n');
    }
    let metrics = dir.join("metrics.csv");
    fs::write(&metrics, text).map_err(|e| Error::io(&metrics, e))?;
    Ok(TrainArtifacts {
        checkpoint,
        metrics,
        outcome,
    })
}

/// Rebuilds the data a checkpoint was trained on.
pub fn checkpoint_context(ck: &Checkpoint) -> Result<(ExperimentConfig, PreparedData)> {
    let cfg = ExperimentConfig::parse(&ck.config_text)?;
    let data = cfg.load_data()?;
    if data.system.num_nodes() != ck.params.num_nodes() || data.system.k != ck.params.layers.len() {
        return Err(Error::Invalid(format!(
            "checkpoint has {} nodes and {} layers, data has {} and {}",
            ck.params.num_nodes(),
            ck.params.layers.len(),
            data.system.num_nodes(),
            data.system.k
        )));
    }
    Ok((cfg, data))
}

/// Ranks `split` with the parameters stored in `ck`.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    split: Split,
    mask: Option<super::MaskSeen>,
    averaging: Option<super::Averaging>,
) -> Result<EvalReport> {
    let (cfg, data) = checkpoint_context(ck)?;
    let plan = ForwardPlan::new(&data.system, ck.config.policy, ck.config.variant, ck.config.step)?;
    let h = plan.represent(&ck.params)?;
    data.evaluator()?.rank(
        &h,
        data.heldout(split),
        split,
        mask.unwrap_or(cfg.mask_seen),
        averaging.unwrap_or(ck.config.averaging),
    )
}
