//! Log posterior of the free parameters under the GP error model and a
//! uniform prior around the MAP estimate.

use serde::{Deserialize, Serialize};

use crate::calibration::gp::{subsample_stride, CovFactor, GpErrorModel};
use crate::calibration::problem::{CalibrationProblem, Tape};
use crate::error::{Error, Result};
use crate::lnode::{LnodeModel, PHYSICAL_LABELS, PHYSICAL_STATES};

/// Default relative half-width of the prior box.
pub const PRIOR_HALF_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl PriorBox {
    /// `θ_MAP ± χ|θ_MAP|` intersected with the calibration bounds.
    pub fn around(theta_map: &[f64], chi: f64, prob: &CalibrationProblem) -> Result<Self> {
        if theta_map.len() != prob.n_free() {
            return Err(Error::ParameterShape {
                expected: prob.n_free(),
                got: theta_map.len(),
            });
        }
        if !(chi > 0.0) {
            return Err(Error::Config("prior half-width must be positive".into()));
        }
        let mut lower = Vec::with_capacity(theta_map.len());
        let mut upper = Vec::with_capacity(theta_map.len());
        for (f, &m) in prob.free.iter().zip(theta_map) {
            let (lo, hi) = ((m - chi * m.abs()).max(f.lower), (m + chi * m.abs()).min(f.upper));
            if !(lo < hi) {
                return Err(Error::Config(format!("empty prior box for {}", f.name)));
            }
            lower.push(lo);
            upper.push(hi);
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| x >= lo && x <= hi)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| (hi - lo).ln())
                .sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }
}

struct TraceLikelihood {
    state: usize,
    factor: CovFactor,
    /// `−½ log det(2πΣ)`.
    norm_const: f64,
}

/// Precomputed likelihood: one Cholesky factor per weighted trace on the
/// subsampled model grid.
pub struct Posterior<'a> {
    pub model: &'a LnodeModel,
    pub problem: &'a CalibrationProblem,
    pub prior: PriorBox,
    /// Grid indices the likelihood is evaluated at.
    pub indices: Vec<usize>,
    pub stride: usize,
    traces: Vec<TraceLikelihood>,
}

impl<'a> Posterior<'a> {
    pub fn new(
        model: &'a LnodeModel,
        problem: &'a CalibrationProblem,
        gp: &GpErrorModel,
        prior: PriorBox,
    ) -> Result<Self> {
        if prior.lower.len() != problem.n_free() {
            return Err(Error::ParameterShape {
                expected: problem.n_free(),
                got: prior.lower.len(),
            });
        }
        let grid = problem.context.grid();
        let stride = subsample_stride(grid.len());
        let indices: Vec<usize> = (0..grid.len()).step_by(stride).collect();
        let times: Vec<f64> = indices.iter().map(|&k| grid[k]).collect();
        let mut traces = Vec::new();
        for i in 0..PHYSICAL_STATES {
            if problem.weights[i] == 0.0 {
                continue;
            }
            let factor = gp.factor(PHYSICAL_LABELS[i], &times)?;
            let n = times.len() as f64;
            let norm_const = -0.5 * (factor.log_det + n * (2.0 * std::f64::consts::PI).ln());
            traces.push(TraceLikelihood {
                state: i,
                factor,
                norm_const,
            });
        }
        Ok(Self {
            model,
            problem,
            prior,
            indices,
            stride,
            traces,
        })
    }

    /// `Σ −½ log det(2πΣ_i)`: the log likelihood at zero residual.
    pub fn normalization(&self) -> f64 {
        self.traces.iter().map(|t| t.norm_const).sum()
    }

    fn residuals(&self, tape: &Tape, state: usize) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&k| self.problem.target[k][state] - tape.state(k)[state])
            .collect()
    }

    /// Log likelihood of the observations at free values `theta`, ignoring the prior.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let full = self.problem.full_theta(theta)?;
        let tape = match Tape::record(self.model, self.problem, &full) {
            Ok(t) => t,
            Err(Error::Divergence { .. }) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        Ok(self
            .traces
            .iter()
            .map(|t| {
                let r = self.residuals(&tape, t.state);
                let a = t.factor.solve(&r);
                t.norm_const - 0.5 * dot(&r, &a)
            })
            .sum())
    }

    /// `−∞` outside the prior box or on integrator divergence.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        let lp = self.prior.log_density(theta);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp + self.log_likelihood(theta)?)
    }

    /// Log posterior and its gradient; zero gradient when the value is `−∞`.
    pub fn log_posterior_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = self.prior.log_density(theta);
        let zero = vec![0.0; theta.len()];
        if lp == f64::NEG_INFINITY {
            return Ok((lp, zero));
        }
        let full = self.problem.full_theta(theta)?;
        let tape = match Tape::record(self.model, self.problem, &full) {
            Ok(t) => t,
            Err(Error::Divergence { .. }) => return Ok((f64::NEG_INFINITY, zero)),
            Err(e) => return Err(e),
        };
        let mut dz = vec![0.0; tape.states.len()];
        let mut value = lp;
        for t in &self.traces {
            let r = self.residuals(&tape, t.state);
            let a = t.factor.solve(&r);
            value += t.norm_const - 0.5 * dot(&r, &a);
            for (&k, &ak) in self.indices.iter().zip(&a) {
                dz[k * tape.nz + t.state] += ak;
            }
        }
        Ok((value, self.problem.backward(self.model, &tape, &dz)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One-shot log posterior; builds the factorizations on every call.
pub fn log_posterior(
    theta: &[f64],
    problem: &CalibrationProblem,
    gp: &GpErrorModel,
    prior: &PriorBox,
    model: &LnodeModel,
) -> Result<f64> {
    Posterior::new(model, problem, gp, prior.clone())?.log_posterior(theta)
}
