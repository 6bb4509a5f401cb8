//! Gaussian-process model of the surrogate error: one amplitude per trace and
//! a shared squared-exponential correlation length.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{LnodeModel, PHYSICAL_LABELS, PHYSICAL_STATES};
use crate::optim::{Adam, AdamConfig};
use crate::refmodel::TrainingSample;
use crate::training::predict;

/// Largest number of time points one covariance block may span.
pub const MAX_GP_POINTS: usize = 200;
/// Floor on fitted amplitudes, in trace units.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Relative jitter levels tried in turn when factorizing.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
/// Intervals of the log-λ grid that seeds the optimizer.
const SCAN_POINTS: usize = 40;

/// One residual trace (truth minus surrogate) of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTrace {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpErrorModel {
    pub labels: Vec<String>,
    pub sigma: Vec<f64>,
    /// Correlation length.
    pub lambda: f64,
    pub lambda_unit: String,
}

/// Cholesky factor of one covariance block.
pub struct CovFactor {
    pub chol: Cholesky<f64, Dyn>,
    /// Diagonal jitter that was added, absolute.
    pub jitter: f64,
    pub log_det: f64,
}

impl CovFactor {
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(r)).as_slice().to_vec()
    }
}

/// Stride that keeps a grid of `n` points within [`MAX_GP_POINTS`].
pub fn subsample_stride(n: usize) -> usize {
    n.div_ceil(MAX_GP_POINTS).max(1)
}

/// `σ² exp(−(t − t')² / (2λ²))`.
pub fn se_covariance(sigma: f64, lambda: f64, times: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    let s2 = sigma * sigma;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            s2
        } else {
            let d = times[i] - times[j];
            s2 * (-d * d / (2.0 * lambda * lambda)).exp()
        }
    })
}

/// Cholesky with jitter escalating up to `1e-8 σ²`.
pub fn factor(cov: DMatrix<f64>, sigma: f64) -> Result<CovFactor> {
    let s2 = sigma * sigma;
    for rel in JITTER_LADDER {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += rel * s2;
        }
        if let Some(chol) = Cholesky::new(m) {
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            if log_det.is_finite() {
                return Ok(CovFactor {
                    chol,
                    jitter: rel * s2,
                    log_det,
                });
            }
        }
    }
    Err(Error::Config(format!(
        "covariance is not positive definite even with jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1] * s2
    )))
}

impl GpErrorModel {
    pub fn sigma_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.sigma[i])
    }

    fn amplitude(&self, label: &str) -> Result<f64> {
        self.sigma_of(label)
            .ok_or_else(|| Error::Config(format!("error model has no amplitude for {label}")))
    }

    pub fn covariance(&self, label: &str, times: &[f64]) -> Result<DMatrix<f64>> {
        Ok(se_covariance(self.amplitude(label)?, self.lambda, times))
    }

    pub fn factor(&self, label: &str, times: &[f64]) -> Result<CovFactor> {
        let sigma = self.amplitude(label)?;
        factor(se_covariance(sigma, self.lambda, times), sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Starting correlation length.
    pub lambda0: f64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.01,
            lambda0: 0.02,
        }
    }
}

/// Residual traces on a shared (subsampled) time grid.
struct Group {
    times: Vec<f64>,
    /// `(σ, values)` per trace.
    traces: Vec<(f64, Vec<f64>)>,
}

fn subsample(times: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = subsample_stride(times.len());
    (
        times.iter().step_by(s).copied().collect(),
        values.iter().step_by(s).copied().collect(),
    )
}

/// Log-likelihood of every group and its derivative with respect to `log λ`.
fn log_likelihood(groups: &[Group], lambda: f64) -> Result<(f64, f64)> {
    let mut ll = 0.0;
    let mut dll = 0.0;
    for g in groups {
        let n = g.times.len();
        let mut r = se_covariance(1.0, lambda, &g.times);
        let mut dr = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d = g.times[i] - g.times[j];
                dr[(i, j)] = r[(i, j)] * d * d / (lambda * lambda);
            }
            r[(i, i)] += 1e-8;
        }
        let chol = Cholesky::new(r).ok_or_else(|| Error::Config("correlation matrix not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        let trace_term = inv.component_mul(&dr.transpose()).sum();
        for (sigma, values) in &g.traces {
            let a = chol.solve(&DVector::from_column_slice(values));
            let quad = a.dot(&DVector::from_column_slice(values));
            let s2 = sigma * sigma;
            ll += -0.5 * quad / s2
                - 0.5 * log_det
                - n as f64 * sigma.ln()
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            dll += 0.5 * (a.transpose() * &dr * &a)[(0, 0)] / s2 - 0.5 * trace_term;
        }
    }
    Ok((ll, dll))
}

/// Amplitudes are the pooled RMS of each trace's residuals; the shared
/// correlation length maximizes the Gaussian likelihood by Adam on `log λ`.
pub fn fit_gp_error(residuals: &[ResidualTrace]) -> Result<GpErrorModel> {
    fit_gp_error_with(residuals, &GpFitConfig::default())
}

pub fn fit_gp_error_with(residuals: &[ResidualTrace], cfg: &GpFitConfig) -> Result<GpErrorModel> {
    if residuals.is_empty() {
        return Err(Error::Config("no residual traces".into()));
    }
    if !(cfg.lambda0 > 0.0) {
        return Err(Error::Config("lambda0 must be positive".into()));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in residuals {
        if r.times.len() != r.values.len() || r.times.len() < 2 {
            return Err(Error::Config(format!("residual trace {} is malformed", r.label)));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("residual trace {} is not finite", r.label)));
        }
        let i = match labels.iter().position(|l| l == &r.label) {
            Some(i) => i,
            None => {
                labels.push(r.label.clone());
                sums.push((0.0, 0));
                labels.len() - 1
            }
        };
        sums[i].0 += r.values.iter().map(|v| v * v).sum::<f64>();
        sums[i].1 += r.values.len();
    }
    let sigma: Vec<f64> = sums
        .iter()
        .map(|&(s, n)| (s / n as f64).sqrt().max(SIGMA_FLOOR))
        .collect();

    let mut groups: Vec<Group> = Vec::new();
    for r in residuals {
        let (t, v) = subsample(&r.times, &r.values);
        let s = sigma[labels.iter().position(|l| l == &r.label).expect("indexed")];
        match groups.iter_mut().find(|g| g.times == t) {
            Some(g) => g.traces.push((s, v)),
            None => groups.push(Group {
                times: t,
                traces: vec![(s, v)],
            }),
        }
    }
    let span = residuals
        .iter()
        .map(|r| r.times[r.times.len() - 1] - r.times[0])
        .fold(0.0, f64::max);
    let (lo, hi) = (1e-6f64.ln(), span.max(1e-6).ln());

    // Adam alone stalls when the first gradients are many orders larger than
    // those near the optimum, so it starts from the best point of a log grid.
    let mut best = (
        cfg.lambda0.ln().clamp(lo, hi),
        log_likelihood(&groups, cfg.lambda0.clamp(lo.exp(), hi.exp()))?.0,
    );
    for i in 0..=SCAN_POINTS {
        let x = lo + (hi - lo) * i as f64 / SCAN_POINTS as f64;
        let ll = log_likelihood(&groups, x.exp())?.0;
        if ll > best.1 {
            best = (x, ll);
        }
    }
    let mut x = vec![best.0];
    let mut adam = Adam::new(
        1,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    for _ in 0..cfg.steps {
        let (_, d) = log_likelihood(&groups, x[0].exp())?;
        adam.step(&mut x, &[-d]);
        x[0] = x[0].clamp(lo, hi);
    }
    Ok(GpErrorModel {
        labels,
        sigma,
        lambda: x[0].exp(),
        lambda_unit: "s".into(),
    })
}

/// Truth-minus-surrogate residuals of every physical trace of `samples`.
pub fn residual_traces(model: &LnodeModel, samples: &[TrainingSample], dt: f64) -> Result<Vec<ResidualTrace>> {
    let mut out = Vec::with_capacity(samples.len() * PHYSICAL_STATES);
    for s in samples {
        let pred = predict(model, s, dt)?;
        for (j, label) in PHYSICAL_LABELS.iter().enumerate() {
            out.push(ResidualTrace {
                label: label.to_string(),
                times: s.trajectory.times.clone(),
                values: s
                    .trajectory
                    .states
                    .iter()
                    .zip(&pred.states)
                    .map(|(a, b)| a[j] - b[j])
                    .collect(),
            });
        }
    }
    Ok(out)
}
