//! No-U-Turn sampler with multinomial trajectory sampling, identity mass
//! matrix and optional dual-averaging step-size adaptation during burn-in.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub iters: usize,
    pub burn_in: usize,
    /// Initial leapfrog step.
    pub step_size: f64,
    pub max_tree_depth: usize,
    /// Dual-averaging adaptation during burn-in; off keeps the step fixed.
    pub adapt: bool,
    pub target_accept: f64,
    /// Energy error beyond which a trajectory counts as divergent.
    pub max_energy_error: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            iters: 750,
            burn_in: 250,
            step_size: 1e-3,
            max_tree_depth: 10,
            adapt: true,
            target_accept: 0.8,
            max_energy_error: 1000.0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iters {
            return Err(Error::Config("burn-in must be shorter than the chain".into()));
        }
        if !(self.step_size > 0.0) || !(self.max_energy_error > 0.0) {
            return Err(Error::Config("step size and energy threshold must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsOutput {
    /// Draws after burn-in.
    pub draws: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub total: usize,
    /// Divergent transitions after burn-in.
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Step used after burn-in.
    pub step_size: f64,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Tree {
    left: Point,
    right: Point,
    proposal: Point,
    log_weight: f64,
    rho: Vec<f64>,
    /// Stopped by a U-turn or a divergence.
    stop: bool,
    diverged: bool,
    accept_sum: f64,
    n_leapfrog: usize,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ρ·p⁻ > 0 and ρ·p⁺ > 0`.
fn no_u_turn(rho: &[f64], left: &[f64], right: &[f64]) -> bool {
    dot(rho, left) > 0.0 && dot(rho, right) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// No-U-turn check of two adjacent trajectory pieces, `a` before `b` in
/// time: over the union, and across the junction from each side.
fn merged_no_u_turn(a: (&Point, &Point, &[f64]), b: (&Point, &Point, &[f64])) -> bool {
    let (a_left, a_right, a_rho) = a;
    let (b_left, b_right, b_rho) = b;
    no_u_turn(&add(a_rho, b_rho), &a_left.p, &b_right.p)
        && no_u_turn(&add(a_rho, &b_left.p), &a_left.p, &b_left.p)
        && no_u_turn(&add(b_rho, &a_right.p), &a_right.p, &b_right.p)
}

struct Sampler<'f, F> {
    logp: &'f mut F,
    cfg: NutsConfig,
}

impl<F> Sampler<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn hamiltonian(pt: &Point) -> f64 {
        -pt.logp + 0.5 * dot(&pt.p, &pt.p)
    }

    fn leapfrog(&mut self, pt: &Point, eps: f64) -> Result<Point> {
        let p_half: Vec<f64> = pt.p.iter().zip(&pt.grad).map(|(p, g)| p + 0.5 * eps * g).collect();
        let q: Vec<f64> = pt.q.iter().zip(&p_half).map(|(q, p)| q + eps * p).collect();
        let (logp, grad) = (self.logp)(&q)?;
        let p = p_half.iter().zip(&grad).map(|(p, g)| p + 0.5 * eps * g).collect();
        Ok(Point { q, p, logp, grad })
    }

    /// Subtree of `2^depth` leapfrog steps from `edge` in direction of `eps`.
    fn build(&mut self, edge: &Point, depth: usize, eps: f64, h0: f64, r: &mut Rng) -> Result<Tree> {
        if depth == 0 {
            let pt = self.leapfrog(edge, eps)?;
            let h = Self::hamiltonian(&pt);
            let err = if h.is_finite() { h - h0 } else { f64::INFINITY };
            let diverged = !(err <= self.cfg.max_energy_error);
            return Ok(Tree {
                left: pt.clone(),
                right: pt.clone(),
                rho: pt.p.clone(),
                proposal: pt,
                log_weight: -err,
                stop: diverged,
                diverged,
                accept_sum: if err.is_finite() { (-err).exp().min(1.0) } else { 0.0 },
                n_leapfrog: 1,
            });
        }
        let first = self.build(edge, depth - 1, eps, h0, r)?;
        if first.stop {
            return Ok(first);
        }
        let outer = if eps > 0.0 { &first.right } else { &first.left };
        let second = self.build(&outer.clone(), depth - 1, eps, h0, r)?;
        let accept_sum = first.accept_sum + second.accept_sum;
        let n_leapfrog = first.n_leapfrog + second.n_leapfrog;
        if second.stop {
            return Ok(Tree {
                accept_sum,
                n_leapfrog,
                diverged: second.diverged,
                stop: true,
                ..first
            });
        }
        let log_weight = log_add(first.log_weight, second.log_weight);
        let (a, b) = if eps > 0.0 {
            (&first, &second)
        } else {
            (&second, &first)
        };
        let turned = !merged_no_u_turn((&a.left, &a.right, &a.rho), (&b.left, &b.right, &b.rho));
        let proposal = if r.random::<f64>() < (second.log_weight - log_weight).exp() {
            second.proposal.clone()
        } else {
            first.proposal.clone()
        };
        Ok(Tree {
            left: a.left.clone(),
            right: b.right.clone(),
            proposal,
            log_weight,
            rho: add(&first.rho, &second.rho),
            stop: turned,
            diverged: false,
            accept_sum,
            n_leapfrog,
        })
    }

    /// One NUTS transition; returns the new point, mean acceptance
    /// statistic, divergence flag and tree depth.
    fn transition(&mut self, current: &Point, eps: f64, r: &mut Rng) -> Result<(Point, f64, bool, usize)> {
        let mut start = current.clone();
        start.p = (0..start.q.len()).map(|_| StandardNormal.sample(r)).collect();
        let h0 = Self::hamiltonian(&start);
        let mut left = start.clone();
        let mut right = start.clone();
        let mut proposal = start.clone();
        let mut rho = start.p.clone();
        let mut log_weight = 0.0;
        let mut accept_sum = 0.0;
        let mut n_leapfrog = 0;
        let mut diverged = false;
        let mut depth = 0;
        while depth < self.cfg.max_tree_depth {
            let forward = r.random::<bool>();
            let (edge, step) = if forward { (&right, eps) } else { (&left, -eps) };
            let sub = self.build(&edge.clone(), depth, step, h0, r)?;
            depth += 1;
            accept_sum += sub.accept_sum;
            n_leapfrog += sub.n_leapfrog;
            if sub.diverged {
                diverged = true;
                break;
            }
            if sub.stop {
                break;
            }
            let turned = if forward {
                !merged_no_u_turn((&left, &right, &rho), (&sub.left, &sub.right, &sub.rho))
            } else {
                !merged_no_u_turn((&sub.left, &sub.right, &sub.rho), (&left, &right, &rho))
            };
            if r.random::<f64>() < (sub.log_weight - log_weight).exp() {
                proposal = sub.proposal;
            }
            log_weight = log_add(log_weight, sub.log_weight);
            rho = add(&rho, &sub.rho);
            if forward {
                right = sub.right;
            } else {
                left = sub.left;
            }
            if turned {
                break;
            }
        }
        Ok((proposal, accept_sum / n_leapfrog.max(1) as f64, diverged, depth))
    }
}

/// Dual averaging of the log step toward a target acceptance rate.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: usize,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            m: 0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        self.m += 1;
        let m = self.m as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }
}

/// Single-chain NUTS from `x0`; `logp` returns the log density and its
/// gradient.
pub fn nuts_sample<F>(mut logp: F, x0: &[f64], cfg: &NutsConfig, seed: u64) -> Result<NutsOutput>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let (lp0, g0) = logp(x0)?;
    if !lp0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return Err(Error::Calibration(
            "log posterior is not finite at the start point".into(),
        ));
    }
    let mut r = rng::stream(seed, streams::NUTS);
    let mut sampler = Sampler {
        logp: &mut logp,
        cfg: cfg.clone(),
    };
    let mut current = Point {
        q: x0.to_vec(),
        p: vec![0.0; x0.len()],
        logp: lp0,
        grad: g0,
    };
    let mut da = DualAveraging::new(cfg.step_size, cfg.target_accept);
    let mut eps = cfg.step_size;
    let mut out = NutsOutput {
        draws: Vec::with_capacity(cfg.iters - cfg.burn_in),
        burn_in: cfg.burn_in,
        total: cfg.iters,
        divergences: 0,
        warmup_divergences: 0,
        step_size: eps,
        mean_accept: 0.0,
        mean_tree_depth: 0.0,
    };
    let (mut accept_total, mut depth_total) = (0.0, 0usize);
    for it in 0..cfg.iters {
        let (next, accept, diverged, depth) = sampler.transition(&current, eps, &mut r)?;
        current = next;
        if it < cfg.burn_in {
            out.warmup_divergences += usize::from(diverged);
            if cfg.adapt {
                da.update(accept);
                eps = if it + 1 == cfg.burn_in {
                    da.log_eps_bar.exp()
                } else {
                    da.log_eps.exp()
                };
            }
        } else {
            out.divergences += usize::from(diverged);
            accept_total += accept;
            depth_total += depth;
            out.draws.push(current.q.clone());
        }
    }
    let kept = (cfg.iters - cfg.burn_in) as f64;
    out.step_size = eps;
    out.mean_accept = accept_total / kept;
    out.mean_tree_depth = depth_total as f64 / kept;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRhat {
    pub rhat: Vec<f64>,
    /// Parameters whose draws never vary; their R̂ is reported as 1.
    pub zero_variance: Vec<bool>,
}

pub const MIN_RHAT_DRAWS: usize = 100;

/// Split-R̂ per parameter: the chain is halved into two pseudo-chains (a
/// middle draw of an odd chain is dropped).
pub fn gelman_rubin(draws: &[Vec<f64>]) -> Result<SplitRhat> {
    if draws.len() < MIN_RHAT_DRAWS {
        return Err(Error::Config(format!(
            "split-R̂ needs at least {MIN_RHAT_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    let dim = draws[0].len();
    let half = draws.len() / 2;
    let chains = [&draws[..half], &draws[draws.len() - half..]];
    let n = half as f64;
    let mut out = SplitRhat {
        rhat: Vec::with_capacity(dim),
        zero_variance: Vec::with_capacity(dim),
    };
    for j in 0..dim {
        let stats: Vec<(f64, f64)> = chains
            .iter()
            .map(|c| {
                let mean = c.iter().map(|d| d[j]).sum::<f64>() / n;
                let var = c.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, var)
            })
            .collect();
        let w = 0.5 * (stats[0].1 + stats[1].1);
        let grand = 0.5 * (stats[0].0 + stats[1].0);
        let b = n * stats.iter().map(|(m, _)| (m - grand).powi(2)).sum::<f64>();
        if w == 0.0 {
            out.rhat.push(if b == 0.0 { 1.0 } else { f64::INFINITY });
            out.zero_variance.push(true);
        } else {
            let var_plus = (n - 1.0) / n * w + b / n;
            out.rhat.push((var_plus / w).sqrt());
            out.zero_variance.push(false);
        }
    }
    Ok(out)
}
