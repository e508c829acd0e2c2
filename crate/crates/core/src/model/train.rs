use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{ForwardPlan, ParamVars};
use super::objective::{bpr_loss_tape, sample_negative, TrainIndex, Triple};
use super::{ModelParams, SignalPolicy, Variant, DEFAULT_EMBEDDING_DIM};
use crate::attention::DEFAULT_TIME_DIM;
use crate::data::{HybridSystem, TemporalEdge};
use crate::error::{Error, Result};
use crate::eval::{Averaging, Evaluator, MaskSeen, MetricSummary, Split};
use crate::numerics::{OptimizerState, Tape};
use crate::ode::DEFAULT_STEP;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub policy: SignalPolicy,
    pub dim: usize,
    pub time_dim: usize,
    /// RK4 step size `ε`.
    pub step: f64,
    pub lr: f64,
    /// Decoupled L2 strength `λ`.
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs without a valid-MRR improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub init_std: f64,
    pub seed: u64,
    pub averaging: Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            policy: SignalPolicy::ORIGIN,
            dim: DEFAULT_EMBEDDING_DIM,
            time_dim: DEFAULT_TIME_DIM,
            step: DEFAULT_STEP,
            lr: 1e-3,
            weight_decay: 1e-3,
            epochs: 200,
            patience: 20,
            batch_size: 2048,
            init_std: 0.1,
            seed: 0,
            averaging: Averaging::Interaction,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.dim == 0 || self.time_dim == 0 {
            return bad("embedding and time dimensions must be positive");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr must be positive and weight decay non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}

/// What happened in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean BPR loss per triple.
    pub loss: f64,
    pub valid: Option<MetricSummary>,
    /// Derivative evaluations over every forward pass of the epoch.
    pub nfe: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters of the best-valid-MRR epoch, or of the last epoch when
    /// there is nothing to validate on.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Derivative evaluations of a single interval solve.
    pub nfe_per_interval: usize,
}

impl FitResult {
    pub fn best(&self) -> &EpochLog {
        &self.log[self.best_epoch - 1]
    }
}

/// Trains on the edges of `system` and selects the epoch by MRR on `valid`.
pub fn fit(system: &HybridSystem, valid: &[TemporalEdge], config: &TrainConfig) -> Result<FitResult> {
    fit_with_progress(system, valid, config, |_| {})
}

/// [`fit`] calling `progress` after every epoch.
pub fn fit_with_progress(
    system: &HybridSystem,
    valid: &[TemporalEdge],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    config.validate()?;
    let train = system.train_edges();
    if train.is_empty() {
        return Err(Error::Empty("no training edges".into()));
    }
    let plan = ForwardPlan::new(system, config.policy, config.variant, config.step)?;
    let index = TrainIndex::new(system.num_users, system.num_items, train);
    let evaluator = Evaluator::new(system.num_users, system.num_items, train, valid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        system.num_nodes(),
        system.k,
        config.dim,
        config.time_dim,
        config.init_std,
        &mut rng,
    )?;
    let mut optimizer = OptimizerState::new(&params.slices(), config.lr, config.weight_decay);

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut nfe_per_interval = 0;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let diverged = |e: Error| match e {
            e @ (Error::NonFinite { .. } | Error::SolverDiverged { .. }) => Error::Diverged {
                epoch,
                detail: e.to_string(),
            },
            other => other,
        };
        let mut triples = train
            .iter()
            .map(|e| {
                Ok(Triple {
                    user: e.user,
                    pos: e.item,
                    neg: sample_negative(e.user, &mut rng, &index)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        triples.shuffle(&mut rng);

        let mut total = 0.0;
        let mut nfe = 0;
        for batch in triples.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params, true);
            let out = plan.record(&mut tape, &vars).map_err(diverged)?;
            nfe += out.stats.nfe;
            nfe_per_interval = out.nfe_per_interval;
            let h = plan.record_final(&mut tape, &out).map_err(diverged)?;
            let loss = bpr_loss_tape(&mut tape, h, batch).map_err(diverged)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss is {value}"),
                });
            }
            total += value;
            let grads = tape.backward(loss).map_err(diverged)?;
            let shapes: Vec<_> = vars.all().iter().map(|&v| tape.value(v).shape()).collect();
            let grad_values: Vec<_> = vars
                .all()
                .iter()
                .zip(shapes)
                .map(|(&v, s)| grads.get_or_zeros(v, s))
                .collect();
            let grad_slices: Vec<&[f64]> = grad_values.iter().map(|g| g.as_slice()).collect();
            optimizer.step(&mut params.slices_mut(), &grad_slices).map_err(diverged)?;
        }

        let valid_summary = if valid.is_empty() {
            None
        } else {
            let h = plan.represent(&params).map_err(diverged)?;
            evaluator
                .rank(&h, valid, Split::Valid, MaskSeen::Train, config.averaging)?
                .summary
        };
        let entry = EpochLog {
            epoch,
            loss: total / triples.len() as f64,
            valid: valid_summary,
            nfe,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&entry);
        log.push(entry);

        let mrr = valid_summary.map_or(f64::NEG_INFINITY, |s| s.mrr);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => mrr > *b || (valid_summary.is_none()),
        };
        if improved {
            best = Some((mrr, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(FitResult {
        params,
        best_epoch,
        log,
        nfe_per_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_hybrid_system, InteractionLog};
    use crate::model::score;

    fn system(users: usize, items: usize, edges: &[(usize, usize, i64)], k: usize) -> HybridSystem {
        let log = InteractionLog {
            num_users: users,
            num_items: items,
            user_ids: (0..users).map(|u| u.to_string()).collect(),
            item_ids: (0..items).map(|i| i.to_string()).collect(),
            edges: edges
                .iter()
                .map(|&(user, i, timestamp)| TemporalEdge {
                    user,
                    item: users + i,
                    timestamp,
                })
                .collect(),
        };
        build_hybrid_system(&log, k).unwrap()
    }

    fn small(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            dim: 4,
            time_dim: 2,
            step: 0.5,
            lr: 0.05,
            epochs: 30,
            patience: 30,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn positive_outscores_negative() {
        let sys = system(1, 2, &[(0, 0, 0), (0, 0, 10)], 1);
        for variant in Variant::ALL {
            let fit = fit(&sys, &[], &small(variant)).unwrap();
            let plan = ForwardPlan::new(&sys, SignalPolicy::ORIGIN, variant, 0.5).unwrap();
            let h = plan.represent(&fit.params).unwrap();
            assert!(score(0, 1, &h).unwrap() > score(0, 2, &h).unwrap(), "{variant}");
            // Without a validation split the last epoch is kept.
            assert_eq!(fit.best_epoch, 30);
            assert!(fit.log.last().unwrap().loss < fit.log[0].loss);
        }
    }

    fn toy() -> (HybridSystem, Vec<TemporalEdge>) {
        let edges: Vec<(usize, usize, i64)> = (0..6)
            .flat_map(|u| (0..4).map(move |j| (u, (u + 2 * j) % 8, (10 * j + u) as i64)))
            .collect();
        let sys = system(6, 8, &edges, 2);
        let valid = (0..6)
            .map(|u| TemporalEdge {
                user: u,
                item: 6 + (u + 1) % 8,
                timestamp: 100,
            })
            .collect();
        (sys, valid)
    }

    #[test]
    fn same_seed_same_log() {
        let (sys, valid) = toy();
        let cfg = TrainConfig { epochs: 6, ..small(Variant::Full) };
        let a = fit(&sys, &valid, &cfg).unwrap();
        let b = fit(&sys, &valid, &cfg).unwrap();
        let strip = |log: &[EpochLog]| log.iter().map(|e| (e.loss, e.valid, e.nfe)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(a.params, b.params);
        let c = fit(&sys, &valid, &TrainConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(strip(&a.log), strip(&c.log));
    }

    #[test]
    fn selects_first_best_valid_epoch() {
        let (sys, valid) = toy();
        let cfg = TrainConfig {
            epochs: 12,
            patience: 3,
            ..small(Variant::Att)
        };
        let fit = fit(&sys, &valid, &cfg).unwrap();
        let mrrs: Vec<f64> = fit.log.iter().map(|e| e.valid.unwrap().mrr).collect();
        let best = mrrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(fit.best_epoch, 1 + mrrs.iter().position(|&m| m == best).unwrap());
        assert_eq!(fit.best().epoch, fit.best_epoch);
        // Stops once `patience` epochs pass without improvement.
        let stale = fit.log.len() - fit.best_epoch;
        assert!(stale == cfg.patience || fit.log.len() == cfg.epochs);
        assert!(fit.log.iter().all(|e| e.nfe == 0));
    }

    #[test]
    fn nfe_is_counted_per_epoch() {
        let (sys, valid) = toy();
        let cfg = TrainConfig { epochs: 1, ..small(Variant::Ode) };
        let fit = fit(&sys, &valid, &cfg).unwrap();
        // 24 triples in batches of 4, K = 2 solves of 2 steps each.
        assert_eq!(fit.nfe_per_interval, 8);
        assert_eq!(fit.log[0].nfe, 6 * 2 * 8);
    }

    #[test]
    fn blow_up_reports_epoch() {
        let (sys, valid) = toy();
        let cfg = TrainConfig {
            lr: 1e300,
            init_std: 1e100,
            ..small(Variant::Full)
        };
        match fit(&sys, &valid, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (sys, valid) = toy();
        for cfg in [
            TrainConfig { dim: 0, ..TrainConfig::default() },
            TrainConfig { step: 0.0, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(fit(&sys, &valid, &cfg), Err(Error::Config(_))));
        }
    }
}
