//! Test-set error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{LnodeModel, Trajectory, PHYSICAL_LABELS, PHYSICAL_STATES};
use crate::refmodel::TrainingSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Bfgs,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Bfgs => "bfgs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Which samples the metrics refer to.
    pub split: String,
    pub labels: Vec<String>,
    pub nrmse: Vec<f64>,
    /// Coefficient of determination in percent.
    pub r2: Vec<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl FitReport {
    pub fn max_nrmse(&self) -> f64 {
        self.nrmse.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_r2(&self) -> f64 {
        self.r2.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `iter,phase,train_loss,valid_loss` rows; an empty field marks a
    /// missing validation value.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iter,phase,train_loss,valid_loss\n");
        for h in &self.history {
            let v = h.valid_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", h.iter, h.phase.as_str(), h.train_loss, v));
        }
        s
    }
}

/// Surrogate prediction for a sample, sampled on the sample's own time grid.
pub fn predict(model: &LnodeModel, sample: &TrainingSample, dt: f64) -> Result<Trajectory> {
    let ctx = sample.context(dt)?;
    let z0 = model.initial_state(sample)?;
    let traj = model.integrate(&z0, &sample.theta, &ctx)?;
    let states = sample.trajectory.times.iter().map(|&t| traj.interpolate(t)).collect();
    Ok(Trajectory {
        context: sample.trajectory.context,
        times: sample.trajectory.times.clone(),
        states,
    })
}

/// Per-trace NRMSE and R² of `predictions` against `targets` (physical
/// states only), pooled over all samples and times. NRMSE divides the RMSE by
/// the trace's max − min over the targets.
pub fn trace_metrics(predictions: &[Trajectory], targets: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Dataset(
            "need matching, non-empty prediction and target sets".into(),
        ));
    }
    let mut nrmse = Vec::with_capacity(PHYSICAL_STATES);
    let mut r2 = Vec::with_capacity(PHYSICAL_STATES);
    for j in 0..PHYSICAL_STATES {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, y) in predictions.iter().zip(targets) {
            if p.len() != y.len() {
                return Err(Error::Dataset("prediction and target grids differ".into()));
            }
            for row in &y.states {
                sum += row[j];
                lo = lo.min(row[j]);
                hi = hi.max(row[j]);
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (p, y) in predictions.iter().zip(targets) {
            for (pr, yr) in p.states.iter().zip(&y.states) {
                ss_res += (pr[j] - yr[j]).powi(2);
                ss_tot += (yr[j] - mean).powi(2);
            }
        }
        let rmse = (ss_res / count as f64).sqrt();
        nrmse.push(if hi > lo {
            rmse / (hi - lo)
        } else if rmse == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
        r2.push(if ss_tot > 0.0 {
            100.0 * (1.0 - ss_res / ss_tot)
        } else if ss_res == 0.0 {
            100.0
        } else {
            f64::NEG_INFINITY
        });
    }
    Ok((nrmse, r2))
}

pub fn evaluate(model: &LnodeModel, samples: &[TrainingSample], dt: f64) -> Result<FitReport> {
    use rayon::prelude::*;
    let predictions = samples
        .par_iter()
        .map(|s| predict(model, s, dt))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Trajectory> = samples.iter().map(|s| s.trajectory.clone()).collect();
    let (nrmse, r2) = trace_metrics(&predictions, &targets)?;
    Ok(FitReport {
        split: "test".into(),
        labels: PHYSICAL_LABELS.iter().map(|s| s.to_string()).collect(),
        nrmse,
        r2,
        n_samples: samples.len(),
        history: Vec::new(),
    })
}
