//! Posterior sampling of a calibration problem and chain summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::map::BoxMap;
use crate::calibration::nuts::{gelman_rubin, nuts_sample, NutsConfig};
use crate::calibration::posterior::Posterior;
use crate::error::{Error, Result};

/// Largest share of divergent transitions a valid chain may have.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub names: Vec<String>,
    /// Kept draws in physical units, one row per draw.
    pub draws: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub total: usize,
    pub rhat: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub lower_2sigma: f64,
    pub upper_2sigma: f64,
    pub rhat: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParameterSummary>,
    pub n_kept: usize,
    pub burn_in: usize,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
    pub converged: bool,
    pub valid: bool,
}

impl PosteriorChain {
    pub fn mean(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        (0..self.names.len())
            .map(|j| self.draws.iter().map(|d| d[j]).sum::<f64>() / n)
            .collect()
    }

    /// Sample standard deviation per parameter.
    pub fn std(&self) -> Vec<f64> {
        let n = self.draws.len() as f64;
        self.mean()
            .iter()
            .enumerate()
            .map(|(j, m)| (self.draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            .collect()
    }

    /// At most 10% of kept transitions diverged.
    pub fn valid(&self) -> bool {
        (self.divergences as f64) <= MAX_DIVERGENT_FRACTION * self.draws.len() as f64
    }

    /// All R̂ below 1.1 and no divergences.
    pub fn converged(&self) -> bool {
        self.divergences == 0 && self.rhat.iter().all(|&r| r < 1.1)
    }

    /// Whether `theta` lies within mean ± 2σ in every coordinate.
    pub fn covers(&self, theta: &[f64]) -> bool {
        let (m, s) = (self.mean(), self.std());
        theta.iter().enumerate().all(|(j, &x)| (x - m[j]).abs() <= 2.0 * s[j])
    }

    pub fn summary(&self) -> PosteriorSummary {
        let (mean, std) = (self.mean(), self.std());
        PosteriorSummary {
            parameters: (0..self.names.len())
                .map(|j| ParameterSummary {
                    name: self.names[j].clone(),
                    mean: mean[j],
                    std: std[j],
                    lower_2sigma: mean[j] - 2.0 * std[j],
                    upper_2sigma: mean[j] + 2.0 * std[j],
                    rhat: self.rhat[j],
                    zero_variance: self.zero_variance[j],
                })
                .collect(),
            n_kept: self.draws.len(),
            burn_in: self.burn_in,
            divergences: self.divergences,
            warmup_divergences: self.warmup_divergences,
            step_size: self.step_size,
            mean_accept: self.mean_accept,
            mean_tree_depth: self.mean_tree_depth,
            converged: self.converged(),
            valid: self.valid(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.names.join(","))?;
        for d in &self.draws {
            let row: Vec<String> = d.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// NUTS over the prior box of `posterior`, mapped to an unconstrained space
/// by the tanh transform, starting at `theta_start`.
pub fn sample_posterior(
    posterior: &Posterior,
    theta_start: &[f64],
    cfg: &NutsConfig,
    seed: u64,
) -> Result<PosteriorChain> {
    if !posterior.prior.contains(theta_start) {
        return Err(Error::Config("start point outside the prior box".into()));
    }
    let map = BoxMap::new(posterior.prior.lower.clone(), posterior.prior.upper.clone());
    let target = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = map.to_theta(u);
        let (lp, g) = posterior.log_posterior_grad(&theta)?;
        let (lj, gj) = map.log_jacobian(u);
        let jac = map.jacobian(u);
        let grad = (0..u.len()).map(|i| g[i] * jac[i] + gj[i]).collect();
        Ok((lp + lj, grad))
    };
    let out = nuts_sample(target, &map.to_u(theta_start), cfg, seed)?;
    let draws: Vec<Vec<f64>> = out.draws.iter().map(|u| map.to_theta(u)).collect();
    let diag = gelman_rubin(&draws)?;
    let chain = PosteriorChain {
        names: posterior.problem.free_names(),
        draws,
        burn_in: out.burn_in,
        total: out.total,
        rhat: diag.rhat,
        zero_variance: diag.zero_variance,
        divergences: out.divergences,
        warmup_divergences: out.warmup_divergences,
        step_size: out.step_size,
        mean_accept: out.mean_accept,
        mean_tree_depth: out.mean_tree_depth,
    };
    if !chain.valid() {
        return Err(Error::Calibration(format!(
            "{} of {} transitions diverged",
            chain.divergences,
            chain.draws.len()
        )));
    }
    Ok(chain)
}
