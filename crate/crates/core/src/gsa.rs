//! Variance-based global sensitivity analysis: Saltelli design, QoI
//! extraction and first-order / total-effect Sobol' indices with bootstrap
//! confidence intervals.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{CycleContext, LnodeModel, Trajectory, PHYSICAL_STATES};
use crate::lowdisc::SobolStream;
use crate::refmodel::ParameterSpace;
use crate::rng::{self, streams};

pub const CHAMBERS: [&str; 4] = ["LA", "LV", "RA", "RV"];
pub const N_QOI: usize = 32;

/// QoI labels grouped per chamber: for each of LA, LV, RA, RV the max and
/// min of p, V, dp/dt and dV/dt.
pub fn qoi_labels() -> Vec<String> {
    let mut out = Vec::with_capacity(N_QOI);
    for c in CHAMBERS {
        for sig in ["p", "V", "dpdt", "dVdt"] {
            for ext in ["max", "min"] {
                out.push(format!("{ext}_{sig}_{c}"));
            }
        }
    }
    out
}

/// 32 QoIs in [`qoi_labels`] order. Derivatives use centered differences on
/// the trajectory grid, one-sided at the ends.
pub fn extract_qois(traj: &Trajectory) -> Result<Vec<f64>> {
    let n = traj.len();
    if n < 3 || traj.num_states() < PHYSICAL_STATES {
        return Err(Error::InputShape { expected: 3, got: n });
    }
    let t = &traj.times;
    // (max, min, max derivative, min derivative) of one column
    let stats = |col: usize| {
        let mut s = [f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY];
        for k in 0..n {
            let v = traj.states[k][col];
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k + 1 == n {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            let d = (traj.states[b][col] - traj.states[a][col]) / (t[b] - t[a]);
            s = [s[0].max(v), s[1].min(v), s[2].max(d), s[3].min(d)];
        }
        s
    };
    let mut out = Vec::with_capacity(N_QOI);
    for c in 0..4 {
        let p = stats(c);
        let v = stats(c + 4);
        out.extend_from_slice(&[p[0], p[1], v[0], v[1], p[2], p[3], v[2], v[3]]);
    }
    Ok(out)
}

/// Saltelli design: `A`, `B` and, for every parameter `i`, `AB_i` (A with
/// column `i` from B) and `BA_i` (B with column `i` from A).
#[derive(Debug, Clone, PartialEq)]
pub struct SaltelliDesign {
    pub space: ParameterSpace,
    pub n: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

/// Model evaluations required by a design: `N (2 N_P + 2)`.
pub fn saltelli_size(n: usize, n_params: usize) -> usize {
    n * (2 * n_params + 2)
}

pub fn saltelli_sample(space: &ParameterSpace, n: usize, seed: u64) -> Result<SaltelliDesign> {
    if n < 2 {
        return Err(Error::Config("Saltelli base size must be >= 2".into()));
    }
    let d = space.len();
    let seq = SobolStream::new(2 * d, seed)?;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let u = seq.point(i);
        a.push(space.from_unit_cube(&u[..d]));
        b.push(space.from_unit_cube(&u[d..]));
    }
    Ok(SaltelliDesign {
        space: space.clone(),
        n,
        a,
        b,
    })
}

impl SaltelliDesign {
    pub fn n_params(&self) -> usize {
        self.space.len()
    }

    pub fn total_rows(&self) -> usize {
        saltelli_size(self.n, self.n_params())
    }

    /// Row `r` in block order `A, B, AB_1, BA_1, ..., AB_P, BA_P`.
    pub fn row(&self, r: usize) -> Vec<f64> {
        let n = self.n;
        let (block, k) = (r / n, r % n);
        match block {
            0 => self.a[k].clone(),
            1 => self.b[k].clone(),
            _ => {
                let i = (block - 2) / 2;
                if (block - 2) % 2 == 0 {
                    let mut x = self.a[k].clone();
                    x[i] = self.b[k][i];
                    x
                } else {
                    let mut x = self.b[k].clone();
                    x[i] = self.a[k][i];
                    x
                }
            }
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.total_rows()).map(|r| self.row(r)).collect()
    }

    /// Evaluates `f` on every row in parallel, results in row order.
    pub fn evaluate<F>(&self, f: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        (0..self.total_rows())
            .into_par_iter()
            .map(|r| f(&self.row(r)))
            .collect()
    }
}

/// QoIs of the surrogate started from `initial_state` (physical values).
pub fn lnode_qois(model: &LnodeModel, initial_state: &[f64], theta: &[f64], ctx: &CycleContext) -> Result<Vec<f64>> {
    let z0 = model.initial_state_from(initial_state)?;
    extract_qois(&model.integrate(&z0, theta, ctx)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolResult {
    pub parameters: Vec<String>,
    pub qois: Vec<String>,
    /// `[parameter][qoi]`.
    pub s1: Vec<Vec<f64>>,
    pub st: Vec<Vec<f64>>,
    /// 95 % percentile bootstrap bounds, `[parameter][qoi]`.
    pub s1_lo: Vec<Vec<f64>>,
    pub s1_hi: Vec<Vec<f64>>,
    pub st_lo: Vec<Vec<f64>>,
    pub st_hi: Vec<Vec<f64>>,
    /// QoIs with zero output variance; their indices are reported as 0.
    pub degenerate: Vec<bool>,
}

struct Blocks<'a> {
    n: usize,
    evals: &'a [Vec<f64>],
}

impl Blocks<'_> {
    fn a(&self, k: usize, q: usize) -> f64 {
        self.evals[k][q]
    }
    fn b(&self, k: usize, q: usize) -> f64 {
        self.evals[self.n + k][q]
    }
    fn ab(&self, i: usize, k: usize, q: usize) -> f64 {
        self.evals[(2 + 2 * i) * self.n + k][q]
    }
    fn ba(&self, i: usize, k: usize, q: usize) -> f64 {
        self.evals[(3 + 2 * i) * self.n + k][q]
    }

    /// `(S1, ST, degenerate)` over the row multiset `idx`. Both estimators
    /// are averaged over the two role assignments (A, B) and (B, A).
    fn indices(&self, n_params: usize, n_q: usize, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>) {
        let m = idx.len() as f64;
        let mut s1 = vec![vec![0.0; n_q]; n_params];
        let mut st = vec![vec![0.0; n_q]; n_params];
        let mut degenerate = vec![false; n_q];
        for q in 0..n_q {
            let mut sum = 0.0;
            for &k in idx {
                sum += self.a(k, q) + self.b(k, q);
            }
            let mean = sum / (2.0 * m);
            let mut var = 0.0;
            for &k in idx {
                var += (self.a(k, q) - mean).powi(2) + (self.b(k, q) - mean).powi(2);
            }
            var /= 2.0 * m;
            if !(var > 1e-300) || var <= 1e-24 * mean * mean {
                degenerate[q] = true;
                continue;
            }
            for i in 0..n_params {
                let mut first = 0.0;
                let mut total = 0.0;
                for &k in idx {
                    let (fa, fb) = (self.a(k, q), self.b(k, q));
                    let (fab, fba) = (self.ab(i, k, q), self.ba(i, k, q));
                    first += fb * (fab - fa) + fa * (fba - fb);
                    total += (fa - fab).powi(2) + (fb - fba).powi(2);
                }
                s1[i][q] = first / (2.0 * m * var);
                st[i][q] = total / (4.0 * m * var);
            }
        }
        (s1, st, degenerate)
    }
}

/// Indices from design evaluations in [`SaltelliDesign::row`] order, with
/// `n_boot` bootstrap resamples of the base rows for 95 % percentile
/// intervals.
pub fn sobol_indices(
    design: &SaltelliDesign,
    evals: &[Vec<f64>],
    qoi_names: &[String],
    n_boot: usize,
    seed: u64,
) -> Result<SobolResult> {
    let n = design.n;
    let p = design.n_params();
    if evals.len() != design.total_rows() {
        return Err(Error::InputShape {
            expected: design.total_rows(),
            got: evals.len(),
        });
    }
    let n_q = qoi_names.len();
    if evals.iter().any(|r| r.len() != n_q) {
        return Err(Error::InputShape {
            expected: n_q,
            got: evals.iter().map(Vec::len).find(|l| *l != n_q).unwrap_or(0),
        });
    }
    if evals.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("design evaluations must be finite".into()));
    }
    let blocks = Blocks { n, evals };
    let all: Vec<usize> = (0..n).collect();
    let (s1, st, degenerate) = blocks.indices(p, n_q, &all);

    let boots: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, (streams::BOOTSTRAP << 40) + b as u64);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let (s1b, stb, _) = blocks.indices(p, n_q, &idx);
            (s1b, stb)
        })
        .collect();
    let percentile = |pick: &dyn Fn(&(Vec<Vec<f64>>, Vec<Vec<f64>>)) -> &Vec<Vec<f64>>, point: &Vec<Vec<f64>>| {
        let mut lo = point.clone();
        let mut hi = point.clone();
        if boots.is_empty() {
            return (lo, hi);
        }
        for i in 0..p {
            for q in 0..n_q {
                let mut v: Vec<f64> = boots.iter().map(|bt| pick(bt)[i][q]).collect();
                v.sort_by(f64::total_cmp);
                lo[i][q] = quantile(&v, 0.025);
                hi[i][q] = quantile(&v, 0.975);
            }
        }
        (lo, hi)
    };
    let (s1_lo, s1_hi) = percentile(&|b| &b.0, &s1);
    let (st_lo, st_hi) = percentile(&|b| &b.1, &st);
    Ok(SobolResult {
        parameters: design.space.names().iter().map(|s| s.to_string()).collect(),
        qois: qoi_names.to_vec(),
        s1,
        st,
        s1_lo,
        s1_hi,
        st_lo,
        st_hi,
        degenerate,
    })
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], q: f64) -> f64 {
    let h = q * (v.len() - 1) as f64;
    let k = h.floor() as usize;
    if k + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[k] + (h - k as f64) * (v[k + 1] - v[k])
}

impl SobolResult {
    /// CSV with one row per parameter: the index for every QoI, then the
    /// lower and upper 95 % bounds (`<qoi>_lo`, `<qoi>_hi`).
    pub fn to_csv(&self, total: bool) -> String {
        let (m, lo, hi) = if total {
            (&self.st, &self.st_lo, &self.st_hi)
        } else {
            (&self.s1, &self.s1_lo, &self.s1_hi)
        };
        let mut s = String::from("parameter");
        for q in &self.qois {
            s.push(',');
            s.push_str(q);
        }
        for q in &self.qois {
            s.push_str(&format!(",{q}_lo,{q}_hi"));
        }
        s.push('\n');
        for (i, name) in self.parameters.iter().enumerate() {
            s.push_str(name);
            for v in &m[i] {
                s.push_str(&format!(",{v}"));
            }
            for q in 0..self.qois.len() {
                s.push_str(&format!(",{},{}", lo[i][q], hi[i][q]));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::analytic::AdditiveModel;

    fn sinusoid(t_hb: f64, dt: f64) -> Trajectory {
        let ctx = CycleContext::new(t_hb, 0.0, dt).unwrap();
        let times = ctx.grid();
        let states = times
            .iter()
            .map(|&t| {
                let s = (2.0 * std::f64::consts::PI * t / t_hb).sin();
                vec![s, 2.0 * s, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
            })
            .collect();
        Trajectory {
            context: ctx,
            times,
            states,
        }
    }

    #[test]
    fn sizing_law() {
        assert_eq!(saltelli_size(8000, 43), 704_000);
        assert_eq!(saltelli_size(10, 3), 80);
        let d = saltelli_sample(&AdditiveModel::new(vec![1.0, 2.0, 3.0]).space(), 10, 0).unwrap();
        assert_eq!(d.rows().len(), 80);
    }

    #[test]
    fn radial_rows_differ_in_one_column() {
        let space = AdditiveModel::new(vec![1.0; 4]).space();
        let d = saltelli_sample(&space, 16, 3).unwrap();
        for i in 0..4 {
            for k in 0..16 {
                let ab = d.row((2 + 2 * i) * 16 + k);
                let ba = d.row((3 + 2 * i) * 16 + k);
                for j in 0..4 {
                    if j == i {
                        assert_eq!(ab[j], d.b[k][j]);
                        assert_eq!(ba[j], d.a[k][j]);
                    } else {
                        assert_eq!(ab[j], d.a[k][j]);
                        assert_eq!(ba[j], d.b[k][j]);
                    }
                }
                assert!(space.contains(&ab) && space.contains(&ba));
            }
        }
    }

    #[test]
    fn qoi_labels_and_constant_traces() {
        let labels = qoi_labels();
        assert_eq!(labels.len(), 32);
        assert_eq!(&labels[..4], ["max_p_LA", "min_p_LA", "max_V_LA", "min_V_LA"]);
        assert_eq!(labels[8], "max_p_LV");
        let q = extract_qois(&sinusoid(0.854, 1e-3)).unwrap();
        // RA: p = 3, V = 7, constant
        assert_eq!(&q[16..24], [3.0, 3.0, 7.0, 7.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sinusoid_qois() {
        let t_hb = 0.854;
        let q = extract_qois(&sinusoid(t_hb, 1e-3)).unwrap();
        let w = 2.0 * std::f64::consts::PI / t_hb;
        assert!((q[0] - 1.0).abs() < 1e-4 && (q[1] + 1.0).abs() < 1e-4);
        assert!((q[4] - w).abs() < 0.01 * w && (q[5] + w).abs() < 0.01 * w);
        // V_LA = 5 constant
        assert_eq!((q[2], q[3], q[6], q[7]), (5.0, 5.0, 0.0, 0.0));
        // LV pressure is 2 sin
        assert!((q[12] - 2.0 * w).abs() < 0.02 * w);
        for pair in q.chunks(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    #[test]
    fn degenerate_qoi_flagged() {
        let space = AdditiveModel::new(vec![1.0, 1.0]).space();
        let d = saltelli_sample(&space, 32, 0).unwrap();
        let evals = d.evaluate(|x| Ok(vec![x[0] + x[1], 4.0])).unwrap();
        let r = sobol_indices(&d, &evals, &["y".into(), "c".into()], 50, 0).unwrap();
        assert_eq!(r.degenerate, vec![false, true]);
        assert_eq!((r.s1[0][1], r.st[1][1]), (0.0, 0.0));
        assert!(sobol_indices(&d, &evals[1..], &["y".into(), "c".into()], 0, 0).is_err());
    }
}
