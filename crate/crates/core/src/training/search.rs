//! K-fold cross validation and hyperparameter search by random sampling with
//! synchronous successive halving.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::{Dataset, TrainingSample};
use crate::rng::{self, streams};
use crate::training::fit::{train_split, HyperConfig, HyperRanges, TrainSchedule};
use crate::training::loss::{loss_prepared, prepare_batch};

/// `(train, valid)` index pairs. Validation folds partition `0..n`, their
/// sizes differ by at most one, and both lists come back sorted.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::KFOLD));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut valid = order[start..start + len].to_vec();
        valid.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push((train, valid));
        start += len;
    }
    Ok(folds)
}

pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    kfold_indices(dataset.len(), k, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

/// Validation loss of one fold, measured with the data terms only on the
/// integration grid (`Δt_ref = dt`, `ι = 0`), so scores of different
/// hyperparameters are comparable.
fn fold_score(
    dataset: &Dataset,
    train: &[TrainingSample],
    valid: &[TrainingSample],
    hyper: &HyperConfig,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<f64> {
    let out = train_split(&dataset.space, train, &[], hyper, schedule, seed, &mut |_| {})?;
    let mut cfg = out.loss_config.clone();
    cfg.iota = 0.0;
    cfg.dt_ref = cfg.dt;
    let prep = prepare_batch(&out.model, valid, &cfg)?;
    match loss_prepared(&out.model, &prep, &cfg, false) {
        Ok((v, _)) => Ok(v),
        Err(Error::LossDivergence { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Mean K-fold validation loss of `hyper` over all samples of `dataset`.
/// Every fold trains on its complement without a further holdout.
pub fn cross_validate(
    dataset: &Dataset,
    hyper: &HyperConfig,
    schedule: &TrainSchedule,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let folds = kfold_split(dataset, k, seed)?;
    let fold_losses = folds
        .iter()
        .enumerate()
        .map(|(f, (tr, va))| {
            let train = dataset.select(tr).samples;
            let valid = dataset.select(va).samples;
            fold_score(dataset, &train, &valid, hyper, schedule, seed.wrapping_add(f as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = fold_losses.iter().sum::<f64>() / fold_losses.len() as f64;
    Ok(CvResult { fold_losses, mean_loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: HyperConfig,
    /// Fraction of the full iteration budget.
    pub rung: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: HyperConfig,
    pub best_score: f64,
    pub trials: Vec<Trial>,
}

pub const RUNGS: [f64; 3] = [0.25, 0.5, 1.0];

/// Samples `budget` configurations from `ranges` and runs them through the
/// rungs of [`RUNGS`]: each rung trains the survivors with that fraction of
/// `schedule`'s iterations, scores them by mean K-fold validation loss and
/// keeps the best third (at least one). A lone survivor skips straight to the
/// full budget. The winner is the lowest full-budget score.
pub fn hyper_search(
    ranges: &HyperRanges,
    budget: usize,
    dataset: &Dataset,
    schedule: &TrainSchedule,
    k: usize,
    seed: u64,
) -> Result<SearchResult> {
    if budget == 0 {
        return Err(Error::Config("search budget must be >= 1".into()));
    }
    ranges.validate()?;
    let mut r = rng::stream(seed, streams::HYPER);
    let configs: Vec<HyperConfig> = (0..budget).map(|_| ranges.sample(&mut r)).collect();
    let mut alive: Vec<usize> = (0..budget).collect();
    let mut trials = Vec::new();
    for (ri, &rung) in RUNGS.iter().enumerate() {
        let last = ri + 1 == RUNGS.len();
        if !last && alive.len() == 1 {
            continue;
        }
        let sched = schedule.scaled(rung);
        let mut scored = Vec::with_capacity(alive.len());
        for &id in &alive {
            let cv = cross_validate(dataset, &configs[id], &sched, k, seed)?;
            trials.push(Trial {
                id,
                config: configs[id].clone(),
                rung,
                score: cv.mean_loss,
            });
            scored.push((cv.mean_loss, id));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let keep = if last { 1 } else { scored.len().div_ceil(3).max(1) };
        alive = scored[..keep].iter().map(|s| s.1).collect();
    }
    let winner = alive[0];
    let best_score = trials
        .iter()
        .rev()
        .find(|t| t.id == winner && t.rung == 1.0)
        .map(|t| t.score)
        .expect("winner scored at full budget");
    Ok(SearchResult {
        best: configs[winner].clone(),
        best_score,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_hundred_into_ten() {
        let folds = kfold_indices(400, 10, 0).unwrap();
        assert!(folds.iter().all(|(t, v)| v.len() == 40 && t.len() == 360));
    }

    #[test]
    fn leave_one_out() {
        let folds = kfold_indices(10, 10, 3).unwrap();
        assert!(folds.iter().all(|(_, v)| v.len() == 1));
    }

    #[test]
    fn too_many_folds() {
        assert!(matches!(kfold_indices(3, 4, 0), Err(Error::Config(_))));
        assert!(matches!(kfold_indices(3, 0, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn folds_partition(n in 1usize..200, k in 1usize..20, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let folds = kfold_indices(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for (t, v) in &folds {
                prop_assert_eq!(t.len() + v.len(), n);
                prop_assert!(t.iter().all(|i| v.binary_search(i).is_err()));
            }
            prop_assert_eq!(folds, kfold_indices(n, k, seed).unwrap());
        }
    }
}
