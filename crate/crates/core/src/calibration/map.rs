//! MAP estimation by multi-start L-BFGS on a tanh reparameterization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::problem::CalibrationProblem;
use crate::error::{Error, Result};
use crate::lnode::LnodeModel;
use crate::lowdisc::SobolStream;
use crate::optim::{minimize, LbfgsConfig};

/// `θ = lo + (hi − lo)(1 + tanh u)/2` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxMap {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxMap {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn to_theta(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&u, (&lo, &hi))| (lo + 0.5 * (hi - lo) * (1.0 + u.tanh())).clamp(lo, hi))
            .collect()
    }

    /// Inverse map; points on the boundary are pulled inside by `1e-9` of
    /// the width.
    pub fn to_u(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&lo, &hi))| {
                let s = (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
                s.atanh()
            })
            .collect()
    }

    /// `dθ/du` per coordinate.
    pub fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&u, (&lo, &hi))| {
                let t = u.tanh();
                0.5 * (hi - lo) * (1.0 - t * t)
            })
            .collect()
    }

    /// `Σ log dθ/du` and its gradient over `u`.
    pub fn log_jacobian(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = Vec::with_capacity(u.len());
        for (&u, (&lo, &hi)) in u.iter().zip(self.lower.iter().zip(&self.upper)) {
            let a = u.abs();
            // log(1 - tanh²u) written to stay finite for large |u|
            value += (0.5 * (hi - lo)).ln() + 2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p());
            grad.push(-2.0 * u.tanh());
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub starts: usize,
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            starts: 4,
            seed: 0,
            lbfgs: LbfgsConfig {
                max_iters: 500,
                grad_tol: 1e-12,
                ..LbfgsConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartLog {
    pub start: usize,
    pub theta_init: Vec<f64>,
    pub initial_cost: f64,
    pub theta: Option<Vec<f64>>,
    pub cost: f64,
    pub iters: usize,
    pub evals: usize,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub theta_full: Vec<f64>,
    pub cost: f64,
    /// Cost at the caller's initial point.
    pub initial_cost: f64,
    pub best_start: usize,
    pub starts: Vec<StartLog>,
}

/// Start points: `theta_init` followed by scrambled Sobol' points of the
/// free box.
pub fn start_points(prob: &CalibrationProblem, theta_init: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut starts = vec![theta_init.to_vec()];
    if n > 1 {
        let seq = SobolStream::new(prob.n_free(), seed)?;
        let (lo, hi) = (prob.lower(), prob.upper());
        for i in 0..n - 1 {
            let q = seq.point(i);
            starts.push((0..q.len()).map(|j| lo[j] + q[j] * (hi[j] - lo[j])).collect());
        }
    }
    Ok(starts)
}

fn run_start(
    model: &LnodeModel,
    prob: &CalibrationProblem,
    map: &BoxMap,
    start: usize,
    theta0: &[f64],
    cfg: &LbfgsConfig,
) -> StartLog {
    let mut log = StartLog {
        start,
        theta_init: theta0.to_vec(),
        initial_cost: f64::NAN,
        theta: None,
        cost: f64::INFINITY,
        iters: 0,
        evals: 0,
        outcome: String::new(),
    };
    let mut objective = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = map.to_theta(u);
        match prob.cost_gradient(model, &theta) {
            Ok((c, g)) => {
                let jac = map.jacobian(u);
                Ok((c, g.iter().zip(&jac).map(|(a, b)| a * b).collect()))
            }
            Err(Error::Divergence { .. }) => Ok((f64::INFINITY, vec![0.0; u.len()])),
            Err(e) => Err(e),
        }
    };
    let u0 = map.to_u(theta0);
    log.initial_cost = prob.cost(model, &map.to_theta(&u0)).unwrap_or(f64::NAN);
    match minimize(&mut objective, &u0, cfg, |_, _, _| true) {
        Ok(r) if r.f.is_finite() => {
            log.theta = Some(map.to_theta(&r.x));
            log.cost = r.f;
            log.iters = r.iters;
            log.evals = r.evals;
            log.outcome = format!("{:?}", r.termination);
        }
        Ok(r) => log.outcome = format!("non-finite cost after {:?}", r.termination),
        Err(e) => log.outcome = e.to_string(),
    }
    log
}

/// Minimizes the cost from `theta_init` and `cfg.starts - 1` further
/// low-discrepancy points, keeping the best.
pub fn map_estimate(
    prob: &CalibrationProblem,
    theta_init: &[f64],
    model: &LnodeModel,
    cfg: &MapConfig,
) -> Result<MapResult> {
    if !prob.contains(theta_init) {
        return Err(Error::Config(format!(
            "initial θ {theta_init:?} outside the calibration bounds"
        )));
    }
    if cfg.starts == 0 {
        return Err(Error::Config("need at least one start".into()));
    }
    let map = BoxMap::new(prob.lower(), prob.upper());
    let initial_cost = prob.cost(model, theta_init)?;
    let starts = start_points(prob, theta_init, cfg.starts, cfg.seed)?;
    let logs: Vec<StartLog> = starts
        .par_iter()
        .enumerate()
        .map(|(i, t0)| run_start(model, prob, &map, i, t0, &cfg.lbfgs))
        .collect();
    let best = logs
        .iter()
        .filter(|l| l.theta.is_some())
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.start.cmp(&b.start)))
        .ok_or_else(|| {
            let detail: Vec<String> = logs
                .iter()
                .map(|l| format!("start {}: {}", l.start, l.outcome))
                .collect();
            Error::Calibration(format!("every start failed ({})", detail.join("; ")))
        })?;
    let theta = best.theta.clone().expect("filtered");
    Ok(MapResult {
        names: prob.free_names(),
        theta_full: prob.full_theta(&theta)?,
        theta,
        cost: best.cost,
        initial_cost,
        best_start: best.start,
        starts: logs.clone(),
    })
}
