//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of `f` over one iteration falls below this.
    pub f_rel_tol: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 20,
            max_iters: 10_000,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-10,
            f_rel_tol: 0.0,
            max_line_search_evals: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iters: usize,
    pub evals: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

/// Objective returning value and gradient; `Ok((f64::INFINITY, _))` or an
/// error both mark a point as infeasible, which the line search backs away from.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    /// Directional derivative at `alpha`.
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimizes `obj` from `x0`. `on_iter(iter, x, f)` runs after each accepted
/// step; returning `false` stops the run.
pub fn minimize<O: Objective>(
    obj: &mut O,
    x0: &[f64],
    cfg: &LbfgsConfig,
    mut on_iter: impl FnMut(usize, &[f64], f64) -> bool,
) -> Result<LbfgsResult> {
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.eval(&x)?;
    let mut evals = 1;
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut termination = Termination::MaxIterations;
    let mut iters = 0;

    if !f.is_finite() {
        return Ok(LbfgsResult {
            x,
            f,
            grad: g,
            iters,
            evals,
            termination: Termination::LineSearchFailed,
            history,
        });
    }

    while iters < cfg.max_iters {
        if max_abs(&g) <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut dir = two_loop(&g, &mem);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            // not a descent direction: reset to steepest descent
            mem.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let alpha0 = if mem.is_empty() {
            (1.0 / max_abs(&g).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let probe = match strong_wolfe(obj, &x, f, slope, &dir, alpha0, cfg, &mut evals)? {
            Some(p) => p,
            None => {
                if mem.is_empty() {
                    termination = Termination::LineSearchFailed;
                    break;
                }
                mem.clear();
                continue;
            }
        };
        let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if mem.len() == cfg.history {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let f_prev = f;
        x = probe.x;
        f = probe.f;
        g = probe.g;
        iters += 1;
        history.push(f);
        if !on_iter(iters, &x, f) {
            termination = Termination::Stopped;
            break;
        }
        if cfg.f_rel_tol > 0.0 && (f_prev - f) <= cfg.f_rel_tol * f_prev.abs().max(1e-300) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }
    Ok(LbfgsResult {
        x,
        f,
        grad: g,
        iters,
        evals,
        termination,
        history,
    })
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn evaluate<O: Objective>(obj: &mut O, x: &[f64], dir: &[f64], alpha: f64, evals: &mut usize) -> Probe {
    let xn: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + alpha * d).collect();
    *evals += 1;
    match obj.eval(&xn) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
            let d = dot(&g, dir);
            Probe { alpha, f, d, x: xn, g }
        }
        _ => Probe {
            alpha,
            f: f64::INFINITY,
            d: f64::NAN,
            x: xn,
            g: Vec::new(),
        },
    }
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, safeguarded
/// into the interior of the bracket.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let lo = a.min(b);
    let hi = a.max(b);
    let fallback = 0.5 * (a + b);
    if !fb.is_finite() || !db.is_finite() {
        return a + 0.1 * (b - a);
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return fallback;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() {
        t.clamp(lo + margin, hi - margin)
    } else {
        fallback
    }
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<O: Objective>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    evals: &mut usize,
) -> Result<Option<Probe>> {
    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        d: d0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let mut budget = cfg.max_line_search_evals;
    let mut first = true;
    while budget > 0 {
        budget -= 1;
        let cur = evaluate(obj, x, dir, alpha, evals);
        if !cur.f.is_finite() {
            // infeasible: shrink towards the last good point
            alpha = prev.alpha + 0.25 * (alpha - prev.alpha);
            if alpha - prev.alpha < 1e-16 {
                return Ok(None);
            }
            continue;
        }
        if cur.f > f0 + cfg.c1 * cur.alpha * d0 || (!first && cur.f >= prev.f) {
            return zoom(obj, x, f0, d0, dir, prev, cur, cfg, budget, evals);
        }
        if cur.d.abs() <= -cfg.c2 * d0 {
            return Ok(Some(cur));
        }
        if cur.d >= 0.0 {
            return zoom(obj, x, f0, d0, dir, cur, prev, cfg, budget, evals);
        }
        first = false;
        alpha *= 2.0;
        prev = cur;
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<O: Objective>(
    obj: &mut O,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    mut lo: Probe,
    mut hi: Probe,
    cfg: &LbfgsConfig,
    mut budget: usize,
    evals: &mut usize,
) -> Result<Option<Probe>> {
    while budget > 0 {
        budget -= 1;
        let alpha = if hi.f.is_finite() && hi.d.is_finite() && lo.d.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.d, hi.alpha, hi.f, hi.d)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let cur = evaluate(obj, x, dir, alpha, evals);
        if !cur.f.is_finite() || cur.f > f0 + cfg.c1 * cur.alpha * d0 || cur.f >= lo.f {
            hi = cur;
            continue;
        }
        if cur.d.abs() <= -cfg.c2 * d0 {
            return Ok(Some(cur));
        }
        if cur.d * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        lo = cur;
    }
    // accept the best sufficient-decrease point found, if any
    if lo.alpha > 0.0 && lo.f < f0 && !lo.g.is_empty() {
        return Ok(Some(lo));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let mut obj = rosenbrock;
        let r = minimize(&mut obj, &[-1.2, 1.0], &LbfgsConfig::default(), |_, _, _| true).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_in_many_dimensions() {
        let n = 50;
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum();
            let g = x.iter().enumerate().map(|(i, v)| 2.0 * (i + 1) as f64 * v).collect();
            Ok((f, g))
        };
        let r = minimize(&mut obj, &vec![1.0; n], &LbfgsConfig::default(), |_, _, _| true).unwrap();
        assert!(r.f < 1e-16);
        assert_eq!(r.termination, Termination::GradientTolerance);
    }

    #[test]
    fn backs_away_from_infeasible_region() {
        // f is infinite for x > 2; minimum at x = 1.5
        let mut obj = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 2.0 {
                return Ok((f64::INFINITY, vec![0.0]));
            }
            Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
        };
        let r = minimize(&mut obj, &[-30.0], &LbfgsConfig::default(), |_, _, _| true).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-8);
    }
}
