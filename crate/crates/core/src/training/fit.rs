//! Two-phase optimization: Adam, then L-BFGS, keeping the best validation
//! checkpoint.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{LnodeModel, StateNormalization, PHYSICAL_STATES};
use crate::optim::{self, Adam, AdamConfig, LbfgsConfig};
use crate::refmodel::{Dataset, Split, TrainingSample};
use crate::rng::{self, streams};
use crate::training::loss::{loss_prepared, model_params, prepare_batch, set_model_params, LossConfig, PreparedSample};
use crate::training::metrics::{evaluate, FitReport, HistoryEntry, Phase};

/// Searchable hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub layers: usize,
    pub neurons: usize,
    pub num_states: usize,
    /// Loss quadrature step [s].
    pub dt_ref: f64,
    /// L² weight regularization.
    pub iota: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            neurons: 13,
            num_states: 8,
            dt_ref: 0.0285,
            iota: 0.023,
        }
    }
}

/// Box of admissible hyperparameters. Integer bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub layers: (usize, usize),
    pub neurons: (usize, usize),
    pub num_states: (usize, usize),
    pub dt_ref: (f64, f64),
    pub iota: (f64, f64),
}

impl Default for HyperRanges {
    fn default() -> Self {
        Self {
            layers: (1, 7),
            neurons: (5, 50),
            num_states: (8, 12),
            dt_ref: (1e-3, 0.1),
            iota: (1e-4, 1.0),
        }
    }
}

impl HyperRanges {
    pub fn validate(&self) -> Result<()> {
        let full = HyperRanges::default();
        let int_ok = |r: (usize, usize), f: (usize, usize)| r.0 <= r.1 && r.0 >= f.0 && r.1 <= f.1;
        let real_ok = |r: (f64, f64), f: (f64, f64)| r.0 <= r.1 && r.0 >= f.0 && r.1 <= f.1;
        if !(int_ok(self.layers, full.layers)
            && int_ok(self.neurons, full.neurons)
            && int_ok(self.num_states, full.num_states)
            && real_ok(self.dt_ref, full.dt_ref)
            && real_ok(self.iota, full.iota))
        {
            return Err(Error::Config(format!(
                "hyperparameter ranges {self:?} leave the admissible box"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, h: &HyperConfig) -> bool {
        let within = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        (self.layers.0..=self.layers.1).contains(&h.layers)
            && (self.neurons.0..=self.neurons.1).contains(&h.neurons)
            && (self.num_states.0..=self.num_states.1).contains(&h.num_states)
            && within(h.dt_ref, self.dt_ref)
            && within(h.iota, self.iota)
    }

    /// Integers uniform, `dt_ref` and `iota` log-uniform.
    pub fn sample(&self, r: &mut rng::Rng) -> HyperConfig {
        use rand::Rng as _;
        let log_uniform = |r: &mut rng::Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
            }
        };
        HyperConfig {
            layers: r.random_range(self.layers.0..=self.layers.1),
            neurons: r.random_range(self.neurons.0..=self.neurons.1),
            num_states: r.random_range(self.num_states.0..=self.num_states.1),
            dt_ref: log_uniform(r, self.dt_ref),
            iota: log_uniform(r, self.iota),
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if !HyperRanges::default().contains(self) {
            return Err(Error::Config(format!(
                "hyperparameters {self:?} outside the tuning ranges"
            )));
        }
        Ok(())
    }
}

/// Iteration counts and fixed settings of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub adam_iters: usize,
    pub bfgs_iters: usize,
    pub learning_rate: f64,
    /// Integration step [s].
    pub dt: f64,
    /// Fraction of the training samples held out for checkpoint selection.
    pub validation_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Adam restarts (each with a tenfold smaller learning rate) after divergence.
    pub max_restarts: usize,
    /// Evaluate the validation loss every this many iterations.
    pub validate_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            adam_iters: 1000,
            bfgs_iters: 10_000,
            learning_rate: 1e-2,
            dt: 1e-3,
            validation_fraction: 0.1,
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            eta: 0.1,
            max_restarts: 2,
            validate_every: 1,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Config("learning rate and dt must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Same schedule with both iteration budgets scaled by `fraction`.
    pub fn scaled(&self, fraction: f64) -> Self {
        Self {
            adam_iters: (self.adam_iters as f64 * fraction).round() as usize,
            bfgs_iters: (self.bfgs_iters as f64 * fraction).round() as usize,
            ..self.clone()
        }
    }
}

/// Outcome of [`train_split`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LnodeModel,
    pub loss_config: LossConfig,
    /// Validation loss of the returned checkpoint (training loss when no
    /// validation samples were given).
    pub best_loss: f64,
    pub history: Vec<HistoryEntry>,
    pub adam_restarts: usize,
}

/// Training split of `dataset` (all samples when none are tagged), with a
/// seeded holdout of `validation_fraction` for checkpoint selection. The
/// report holds the metrics on the holdout (or on the training samples when
/// the holdout is empty) and the loss history.
pub fn train(
    dataset: &Dataset,
    hyper: &HyperConfig,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(LnodeModel, FitReport)> {
    train_observed(dataset, hyper, schedule, seed, &mut |_| {})
}

pub fn train_observed(
    dataset: &Dataset,
    hyper: &HyperConfig,
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn FnMut(&HistoryEntry),
) -> Result<(LnodeModel, FitReport)> {
    schedule.validate()?;
    let mut pool = dataset.split(Split::Train).samples;
    if pool.is_empty() {
        pool = dataset.samples.clone();
    }
    if pool.is_empty() {
        return Err(Error::Dataset("no samples to train on".into()));
    }
    let n_valid = if pool.len() >= 2 {
        ((pool.len() as f64 * schedule.validation_fraction).round() as usize).min(pool.len() - 1)
    } else {
        0
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng::stream(seed, streams::KFOLD));
    let mut valid_idx = order[..n_valid].to_vec();
    let mut train_idx = order[n_valid..].to_vec();
    valid_idx.sort_unstable();
    train_idx.sort_unstable();
    let train_set: Vec<TrainingSample> = train_idx.iter().map(|&i| pool[i].clone()).collect();
    let valid_set: Vec<TrainingSample> = valid_idx.iter().map(|&i| pool[i].clone()).collect();

    let out = train_split(&dataset.space, &train_set, &valid_set, hyper, schedule, seed, observer)?;
    let (eval_set, name) = if valid_set.is_empty() {
        (&train_set, "train")
    } else {
        (&valid_set, "validation")
    };
    let mut report = evaluate(&out.model, eval_set, schedule.dt)?;
    report.split = name.into();
    report.history = out.history;
    Ok((out.model, report))
}

/// Fresh model for the given training samples: normalization from their
/// trajectories, reference initial state = their mean initial state.
pub fn init_model(
    space: &crate::refmodel::ParameterSpace,
    train: &[TrainingSample],
    hyper: &HyperConfig,
    seed: u64,
) -> Result<LnodeModel> {
    let norm = StateNormalization::from_trajectories(train.iter().map(|s| &s.trajectory), hyper.num_states)?;
    let mut reference_ic = vec![0.0; PHYSICAL_STATES];
    for s in train {
        for (r, v) in reference_ic.iter_mut().zip(&s.initial_state) {
            *r += v / train.len() as f64;
        }
    }
    LnodeModel::new(
        space.clone(),
        hyper.num_states,
        hyper.layers,
        hyper.neurons,
        norm,
        reference_ic,
        seed,
    )
}

/// Loss settings for a run; normalization constants come from `train` only.
pub fn loss_config(train: &[TrainingSample], hyper: &HyperConfig, schedule: &TrainSchedule) -> Result<LossConfig> {
    let mut cfg = LossConfig::from_samples(train, hyper.dt_ref.max(schedule.dt), schedule.dt, hyper.iota)?;
    cfg.alpha = schedule.alpha;
    cfg.beta = schedule.beta;
    cfg.gamma = schedule.gamma;
    cfg.eta = schedule.eta;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains on `train`, selecting the checkpoint with the lowest loss on
/// `valid` (data terms only, without the weight regularizer).
#[allow(clippy::too_many_arguments)]
pub fn train_split(
    space: &crate::refmodel::ParameterSpace,
    train: &[TrainingSample],
    valid: &[TrainingSample],
    hyper: &HyperConfig,
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn FnMut(&HistoryEntry),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let mut model = init_model(space, train, hyper, seed)?;
    let cfg = loss_config(train, hyper, schedule)?;
    let valid_cfg = LossConfig {
        iota: 0.0,
        ..cfg.clone()
    };
    let prep_train = prepare_batch(&model, train, &cfg)?;
    let prep_valid = prepare_batch(&model, valid, &valid_cfg)?;

    let mut tracker = Tracker {
        best_x: model_params(&model),
        best_loss: f64::INFINITY,
        history: Vec::new(),
    };

    // Adam with restarts
    let x_init = model_params(&model);
    let mut restarts = 0;
    let mut lr = schedule.learning_rate;
    let mut x = x_init.clone();
    'adam: loop {
        let mut opt = Adam::new(
            x.len(),
            AdamConfig {
                learning_rate: lr,
                ..Default::default()
            },
        );
        let mut attempt = Vec::new();
        let mut attempt_best = (f64::INFINITY, x.clone());
        for it in 0..schedule.adam_iters {
            set_model_params(&mut model, &x)?;
            let step = loss_prepared(&model, &prep_train, &cfg, true).and_then(|(v, g)| {
                let g = g.expect("gradient requested");
                if v.is_finite() && g.iter().all(|x| x.is_finite()) {
                    Ok((v, g))
                } else {
                    Err(Error::LossDivergence { sample: usize::MAX })
                }
            });
            let (v, g) = match step {
                Ok(vg) => vg,
                Err(e @ Error::LossDivergence { .. }) => {
                    if restarts == schedule.max_restarts {
                        return Err(e);
                    }
                    restarts += 1;
                    lr /= 10.0;
                    x = x_init.clone();
                    continue 'adam;
                }
                Err(e) => return Err(e),
            };
            let vl = if it % schedule.validate_every == 0 {
                validation_loss(&model, &prep_valid, &valid_cfg)?
            } else {
                None
            };
            let score = vl.unwrap_or(v);
            if (vl.is_some() || prep_valid.is_empty()) && score < attempt_best.0 {
                attempt_best = (score, x.clone());
            }
            attempt.push(HistoryEntry {
                iter: it,
                phase: Phase::Adam,
                train_loss: v,
                valid_loss: vl,
            });
            opt.step(&mut x, &g);
        }
        for h in attempt {
            observer(&h);
            tracker.history.push(h);
        }
        if attempt_best.0 < tracker.best_loss {
            tracker.best_loss = attempt_best.0;
            tracker.best_x = attempt_best.1;
        }
        break;
    }

    // the end point of the Adam phase has not been scored yet
    set_model_params(&mut model, &x)?;
    let start_score = match validation_loss(&model, &prep_valid, &valid_cfg)? {
        Some(v) => v,
        None => loss_prepared(&model, &prep_train, &cfg, false).map_or(f64::INFINITY, |r| r.0),
    };
    if start_score < tracker.best_loss {
        tracker.best_loss = start_score;
        tracker.best_x = x.clone();
    }

    if schedule.bfgs_iters > 0 {
        let bfgs = LbfgsConfig {
            max_iters: schedule.bfgs_iters,
            ..Default::default()
        };
        let offset = schedule.adam_iters;
        let template = model.clone();
        let mut objective = |xs: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut m = template.clone();
            set_model_params(&mut m, xs)?;
            match loss_prepared(&m, &prep_train, &cfg, true) {
                Ok((v, g)) => Ok((v, g.expect("gradient requested"))),
                Err(Error::LossDivergence { .. }) => Ok((f64::INFINITY, Vec::new())),
                Err(e) => Err(e),
            }
        };
        let mut failure = None;
        optim::minimize(&mut objective, &x, &bfgs, |it, xs, f| {
            let vl = if it % schedule.validate_every == 0 || it == schedule.bfgs_iters {
                let mut m = template.clone();
                let scored = set_model_params(&mut m, xs).and_then(|_| validation_loss(&m, &prep_valid, &valid_cfg));
                match scored {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        return false;
                    }
                }
            } else {
                None
            };
            let score = vl.unwrap_or(f);
            if (vl.is_some() || prep_valid.is_empty()) && score < tracker.best_loss {
                tracker.best_loss = score;
                tracker.best_x = xs.to_vec();
            }
            let h = HistoryEntry {
                iter: offset + it,
                phase: Phase::Bfgs,
                train_loss: f,
                valid_loss: vl,
            };
            observer(&h);
            tracker.history.push(h);
            true
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    }

    if !tracker.best_loss.is_finite() {
        return Err(Error::LossDivergence { sample: usize::MAX });
    }
    set_model_params(&mut model, &tracker.best_x)?;
    Ok(TrainOutcome {
        model,
        loss_config: cfg,
        best_loss: tracker.best_loss,
        history: tracker.history,
        adam_restarts: restarts,
    })
}

struct Tracker {
    best_x: Vec<f64>,
    best_loss: f64,
    history: Vec<HistoryEntry>,
}

fn validation_loss(model: &LnodeModel, valid: &[PreparedSample], cfg: &LossConfig) -> Result<Option<f64>> {
    if valid.is_empty() {
        return Ok(None);
    }
    match loss_prepared(model, valid, cfg, false) {
        Ok((v, _)) => Ok(Some(v)),
        Err(Error::LossDivergence { .. }) => Ok(Some(f64::INFINITY)),
        Err(e) => Err(e),
    }
}
