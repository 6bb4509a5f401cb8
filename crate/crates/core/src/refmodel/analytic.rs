//! Closed-form test problems with known answers.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::Result;
use crate::lnode::{CycleContext, Trajectory, PHYSICAL_STATES};
use crate::refmodel::dataset::{Dataset, Split, TrainingSample};
use crate::refmodel::space::{ParameterEntry, ParameterSpace};
use crate::rng;

/// `Y = Σ a_i X_i` with independent `X_i ~ U(-√3, √3)` (unit variance).
#[derive(Debug, Clone)]
pub struct AdditiveModel {
    pub coefficients: Vec<f64>,
}

impl AdditiveModel {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn space(&self) -> ParameterSpace {
        let h = 3f64.sqrt();
        ParameterSpace::new(
            (0..self.coefficients.len())
                .map(|i| ParameterEntry::new(&format!("x{i}"), "-", -h, h))
                .collect(),
        )
        .expect("valid")
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(a, x)| a * x).sum()
    }

    /// First-order and total indices coincide: `a_i² / Σ a_j²`.
    pub fn indices(&self) -> Vec<f64> {
        let total: f64 = self.coefficients.iter().map(|a| a * a).sum();
        self.coefficients.iter().map(|a| a * a / total).collect()
    }
}

/// Ishigami function on `[-π, π]³`.
#[derive(Debug, Clone, Copy)]
pub struct Ishigami {
    pub a: f64,
    pub b: f64,
}

impl Default for Ishigami {
    fn default() -> Self {
        Self { a: 7.0, b: 0.1 }
    }
}

impl Ishigami {
    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::new(
            (1..=3)
                .map(|i| ParameterEntry::new(&format!("x{i}"), "-", -PI, PI))
                .collect(),
        )
        .expect("valid")
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        x[0].sin() + self.a * x[1].sin().powi(2) + self.b * x[2].powi(4) * x[0].sin()
    }

    /// Closed-form `(S1, ST)`.
    pub fn analytic_indices(&self) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (self.a, self.b);
        let pi4 = PI.powi(4);
        let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
        let v2 = a * a / 8.0;
        let v13 = b * b * PI.powi(8) * (1.0 / 18.0 - 1.0 / 50.0);
        let v = v1 + v2 + v13;
        (vec![v1 / v, v2 / v, 0.0], vec![(v1 + v13) / v, v2 / v, v13 / v])
    }
}

/// Brute-force first-order and total indices of `f` over a box with
/// independent uniform inputs, by nested Monte Carlo.
///
/// `S1_i = Var(E[Y | x_i]) / Var(Y)` uses an equispaced outer grid over
/// `x_i` and Latin-hypercube inner draws of the rest; `ST_i = E(Var(Y | x_~i)) / Var(Y)`
/// uses Latin-hypercube outer draws of the rest and an equispaced inner grid
/// over `x_i`. Each index costs `n_outer * n_inner` evaluations.
pub fn brute_force_indices(
    f: &dyn Fn(&[f64]) -> f64,
    space: &ParameterSpace,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let d = space.len();
    let lo = space.lower();
    let hi = space.upper();
    let mut r = rng::stream(seed, 0xB00);
    let grid = |k: usize, n: usize, i: usize| lo[i] + (k as f64 + 0.5) / n as f64 * (hi[i] - lo[i]);
    let scale = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, &x)| lo[j] + x * (hi[j] - lo[j]))
            .collect()
    };

    let total: Vec<f64> = latin_hypercube(n_outer * n_inner, d, &mut r)
        .iter()
        .map(|u| f(&scale(u)))
        .collect();
    let var_y = variance(&total);

    let mut s1 = vec![0.0; d];
    let mut st = vec![0.0; d];
    for i in 0..d {
        let mut cond_means = Vec::with_capacity(n_outer);
        for k in 0..n_outer {
            let mut acc = 0.0;
            for u in latin_hypercube(n_inner, d, &mut r) {
                let mut x = scale(&u);
                x[i] = grid(k, n_outer, i);
                acc += f(&x);
            }
            cond_means.push(acc / n_inner as f64);
        }
        s1[i] = variance(&cond_means) / var_y;

        let mut acc_var = 0.0;
        let mut inner = vec![0.0; n_inner];
        for u in latin_hypercube(n_outer, d, &mut r) {
            let mut x = scale(&u);
            for (k, y) in inner.iter_mut().enumerate() {
                x[i] = grid(k, n_inner, i);
                *y = f(&x);
            }
            acc_var += variance(&inner);
        }
        st[i] = acc_var / n_outer as f64 / var_y;
    }
    (s1, st)
}

/// `n` points in [0, 1)^d, one per stratum along every axis.
fn latin_hypercube(n: usize, d: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(r);
        for (p, &stratum) in pts.iter_mut().zip(&perm) {
            p[j] = (stratum as f64 + r.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// `z_j(t) = z0_j exp(-k t)` for every physical trace.
#[derive(Debug, Clone)]
pub struct ExponentialFamily {
    pub z0: Vec<f64>,
    pub k_range: (f64, f64),
}

impl Default for ExponentialFamily {
    fn default() -> Self {
        Self {
            z0: vec![8.0, 10.0, 4.0, 15.0, 80.0, 120.0, 70.0, 130.0],
            k_range: (0.5, 2.0),
        }
    }
}

impl ExponentialFamily {
    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::new(vec![ParameterEntry::new("k", "1/s", self.k_range.0, self.k_range.1)]).expect("valid")
    }

    pub fn trajectory(&self, k: f64, ctx: &CycleContext) -> Trajectory {
        let times = ctx.grid();
        let states = times
            .iter()
            .map(|&t| self.z0.iter().map(|z| z * (-k * t).exp()).collect())
            .collect();
        Trajectory {
            context: *ctx,
            times,
            states,
        }
    }

    /// Equispaced decay rates; every `test_every`-th sample (if nonzero) is
    /// tagged as test data.
    pub fn dataset(&self, n: usize, ctx: &CycleContext, test_every: usize) -> Result<Dataset> {
        let samples = (0..n)
            .map(|i| {
                let k = self.k_range.0 + (i as f64 + 0.5) / n as f64 * (self.k_range.1 - self.k_range.0);
                let split = if test_every > 0 && i % test_every == test_every - 1 {
                    Split::Test
                } else {
                    Split::Train
                };
                TrainingSample::new(i, vec![k], self.trajectory(k, ctx), split)
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(samples.iter().all(|s| s.initial_state.len() == PHYSICAL_STATES));
        Ok(Dataset {
            space: self.space(),
            samples,
            generator: None,
            seed: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_indices() {
        let m = AdditiveModel::new(vec![1.0, 2.0, 3.0]);
        let s = m.indices();
        assert!((s[0] - 1.0 / 14.0).abs() < 1e-15);
        assert!((s[1] - 4.0 / 14.0).abs() < 1e-15);
        assert!((s[2] - 9.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_closed_form() {
        let fam = ExponentialFamily::default();
        let ctx = CycleContext::new(0.854, 0.0, 1e-3).unwrap();
        let tr = fam.trajectory(1.3, &ctx);
        assert_eq!(tr.states[0], fam.z0);
        let t = tr.times[400];
        assert_eq!(tr.states[400][5], 120.0 * (-1.3 * t).exp());
    }

    #[test]
    fn brute_force_matches_closed_form_on_ishigami() {
        let ish = Ishigami::default();
        let f = |x: &[f64]| ish.eval(x);
        let (s1, st) = brute_force_indices(&f, &ish.space(), 1000, 1000, 1);
        let (a1, at) = ish.analytic_indices();
        for i in 0..3 {
            assert!((s1[i] - a1[i]).abs() < 0.01, "S1[{i}] {} vs {}", s1[i], a1[i]);
            assert!((st[i] - at[i]).abs() < 0.01, "ST[{i}] {} vs {}", st[i], at[i]);
        }
    }
}
