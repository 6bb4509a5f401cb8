//! Composite trajectory loss and its gradient through the unrolled Euler loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{CycleContext, LnodeModel, Trajectory, PHYSICAL_STATES};
use crate::nn::VjpScratch;
use crate::refmodel::TrainingSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Derivative mismatch weight.
    pub alpha: f64,
    /// Maximum mismatch weight.
    pub beta: f64,
    /// Minimum mismatch weight.
    pub gamma: f64,
    /// Latent endpoint penalty weight.
    pub eta: f64,
    /// L² weight regularization.
    pub iota: f64,
    /// Loss quadrature step [s], snapped to a whole multiple of `dt`.
    pub dt_ref: f64,
    /// Integration step [s].
    pub dt: f64,
    pub z_norm: Vec<f64>,
    pub z_norm_diff: Vec<f64>,
    pub z_norm_max: Vec<f64>,
    pub z_norm_min: Vec<f64>,
}

impl LossConfig {
    /// Default weights with normalization constants taken from the given
    /// training samples: half-range per trace, divided by the mean period for
    /// the derivative term.
    pub fn from_samples(samples: &[TrainingSample], dt_ref: f64, dt: f64, iota: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Dataset("no training samples".into()));
        }
        let mut lo = [f64::INFINITY; PHYSICAL_STATES];
        let mut hi = [f64::NEG_INFINITY; PHYSICAL_STATES];
        for s in samples {
            for row in &s.trajectory.states {
                for j in 0..PHYSICAL_STATES {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        let t_mean = samples.iter().map(|s| s.t_hb).sum::<f64>() / samples.len() as f64;
        let z_norm: Vec<f64> = (0..PHYSICAL_STATES)
            .map(|j| (0.5 * (hi[j] - lo[j])).max(1e-6))
            .collect();
        let cfg = Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            eta: 0.1,
            iota,
            dt_ref,
            dt,
            z_norm_diff: z_norm.iter().map(|z| z / t_mean).collect(),
            z_norm_max: z_norm.clone(),
            z_norm_min: z_norm.clone(),
            z_norm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.gamma, self.eta, self.iota];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.dt > 0.0) || !(self.dt_ref >= self.dt * (1.0 - 1e-9)) {
            return Err(Error::Config(format!(
                "need dt_ref >= dt > 0, got dt_ref = {}, dt = {}",
                self.dt_ref, self.dt
            )));
        }
        for v in [&self.z_norm, &self.z_norm_diff, &self.z_norm_max, &self.z_norm_min] {
            if v.len() != PHYSICAL_STATES || v.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config(format!(
                    "normalization constants must be {PHYSICAL_STATES} positive values"
                )));
            }
        }
        Ok(())
    }

    /// Loss grid stride in integration steps.
    pub fn stride(&self) -> usize {
        ((self.dt_ref / self.dt).round() as usize).max(1)
    }
}

/// A training sample with its targets laid out on the loss grid.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub id: usize,
    pub ctx: CycleContext,
    pub theta_norm: Vec<f64>,
    pub physical_ic: Vec<f64>,
    /// Integration-grid indices of the loss points.
    pub points: Vec<usize>,
    /// Quadrature weight of every loss point [s].
    pub weight: f64,
    /// Physical targets, `points.len() × 8`, row-major.
    pub target: Vec<f64>,
    pub target_diff: Vec<f64>,
    pub target_max: [f64; PHYSICAL_STATES],
    pub target_min: [f64; PHYSICAL_STATES],
}

/// Central differences in the interior, one-sided at the ends.
pub fn finite_difference(traj: &Trajectory) -> Trajectory {
    let n = traj.len();
    let t = &traj.times;
    let s = &traj.states;
    let states = (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k + 1 == n {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            s[a].iter().zip(&s[b]).map(|(x, y)| (y - x) / (t[b] - t[a])).collect()
        })
        .collect();
    Trajectory {
        context: traj.context,
        times: t.clone(),
        states,
    }
}

pub fn prepare_sample(model: &LnodeModel, sample: &TrainingSample, cfg: &LossConfig) -> Result<PreparedSample> {
    model.space.check_len(&sample.theta)?;
    let ctx = sample.context(cfg.dt)?;
    let n = ctx.n_steps();
    let m = cfg.stride();
    let points: Vec<usize> = (0..n).step_by(m).collect();
    let grid = ctx.grid();
    let diff = finite_difference(&sample.trajectory);
    let mut target = Vec::with_capacity(points.len() * PHYSICAL_STATES);
    let mut target_diff = Vec::with_capacity(points.len() * PHYSICAL_STATES);
    let mut target_max = [f64::NEG_INFINITY; PHYSICAL_STATES];
    let mut target_min = [f64::INFINITY; PHYSICAL_STATES];
    for &k in &points {
        let y = sample.trajectory.interpolate(grid[k]);
        let dy = diff.interpolate(grid[k]);
        for j in 0..PHYSICAL_STATES {
            target_max[j] = target_max[j].max(y[j]);
            target_min[j] = target_min[j].min(y[j]);
        }
        target.extend_from_slice(&y[..PHYSICAL_STATES]);
        target_diff.extend_from_slice(&dy[..PHYSICAL_STATES]);
    }
    Ok(PreparedSample {
        id: sample.id,
        ctx,
        theta_norm: model.space.normalize(&sample.theta),
        physical_ic: sample.initial_state.clone(),
        points,
        weight: m as f64 * cfg.dt,
        target,
        target_diff,
        target_max,
        target_min,
    })
}

pub fn prepare_batch(model: &LnodeModel, batch: &[TrainingSample], cfg: &LossConfig) -> Result<Vec<PreparedSample>> {
    cfg.validate()?;
    batch.iter().map(|s| prepare_sample(model, s, cfg)).collect()
}

/// Trainable parameters: flat network weights followed by the latent
/// initial condition.
pub fn model_params(model: &LnodeModel) -> Vec<f64> {
    let mut x = model.ann.as_flat().to_vec();
    x.extend_from_slice(&model.latent_ic);
    x
}

pub fn set_model_params(model: &mut LnodeModel, x: &[f64]) -> Result<()> {
    let n_w = model.ann.len();
    if x.len() != n_w + model.num_latent() {
        return Err(Error::ParameterShape {
            expected: n_w + model.num_latent(),
            got: x.len(),
        });
    }
    model.ann.as_flat_mut().copy_from_slice(&x[..n_w]);
    model.latent_ic.copy_from_slice(&x[n_w..]);
    Ok(())
}

/// Loss of one sample and, when `grad` is given, its gradient with respect
/// to [`model_params`] accumulated into `grad`.
pub fn sample_loss(model: &LnodeModel, p: &PreparedSample, cfg: &LossConfig, grad: Option<&mut [f64]>) -> Result<f64> {
    let arch = model.ann.architecture();
    let nz = arch.output_dim;
    let nin = arch.input_dim;
    let hw = arch.hidden_width();
    let n = p.ctx.n_steps();
    let grid = p.ctx.grid();
    let out_scale = model.output_scale(&p.ctx);

    let mut z = vec![0.0; (n + 1) * nz];
    z[..PHYSICAL_STATES].copy_from_slice(&p.physical_ic);
    z[PHYSICAL_STATES..nz].copy_from_slice(&model.latent_ic);
    let mut inp = vec![0.0; n * nin];
    let mut hid = vec![0.0; n * hw];
    let mut out = vec![0.0; n * nz];
    for k in 0..n {
        let (done, rest) = z.split_at_mut((k + 1) * nz);
        let zk = &done[k * nz..];
        let ik = &mut inp[k * nin..(k + 1) * nin];
        model.network_input(zk, grid[k], &p.theta_norm, &p.ctx, ik);
        let ok = &mut out[k * nz..(k + 1) * nz];
        model.ann.forward_tape(ik, &mut hid[k * hw..(k + 1) * hw], ok);
        let h = p.ctx.step(k);
        for j in 0..nz {
            rest[j] = zk[j] + h * ok[j] * out_scale[j];
        }
    }

    let w = p.weight;
    let mut value = 0.0;
    let mut arg_max = [0usize; PHYSICAL_STATES];
    let mut arg_min = [0usize; PHYSICAL_STATES];
    let mut zmax = [f64::NEG_INFINITY; PHYSICAL_STATES];
    let mut zmin = [f64::INFINITY; PHYSICAL_STATES];
    for (i, &k) in p.points.iter().enumerate() {
        let zk = &z[k * nz..k * nz + PHYSICAL_STATES];
        let ok = &out[k * nz..k * nz + PHYSICAL_STATES];
        let y = &p.target[i * PHYSICAL_STATES..(i + 1) * PHYSICAL_STATES];
        let dy = &p.target_diff[i * PHYSICAL_STATES..(i + 1) * PHYSICAL_STATES];
        for j in 0..PHYSICAL_STATES {
            let e = (zk[j] - y[j]) / cfg.z_norm[j];
            let d = (ok[j] * out_scale[j] - dy[j]) / cfg.z_norm_diff[j];
            value += w * (e * e + cfg.alpha * d * d);
            if zk[j] > zmax[j] {
                zmax[j] = zk[j];
                arg_max[j] = k;
            }
            if zk[j] < zmin[j] {
                zmin[j] = zk[j];
                arg_min[j] = k;
            }
        }
    }
    for j in 0..PHYSICAL_STATES {
        let a = (zmax[j] - p.target_max[j]) / cfg.z_norm_max[j];
        let b = (zmin[j] - p.target_min[j]) / cfg.z_norm_min[j];
        value += cfg.beta * a * a + cfg.gamma * b * b;
    }
    let lat0 = &z[PHYSICAL_STATES..nz];
    let lat_end = &z[n * nz + PHYSICAL_STATES..(n + 1) * nz];
    value += cfg.eta * (lat0.iter().map(|v| v * v).sum::<f64>() + lat_end.iter().map(|v| v * v).sum::<f64>());

    if !value.is_finite() {
        return Err(Error::LossDivergence { sample: p.id });
    }
    let Some(grad) = grad else {
        return Ok(value);
    };

    // direct sensitivities to states and to network outputs
    let mut dz = vec![0.0; (n + 1) * nz];
    let mut dout = vec![0.0; n * nz];
    for (i, &k) in p.points.iter().enumerate() {
        for j in 0..PHYSICAL_STATES {
            let zn2 = cfg.z_norm[j] * cfg.z_norm[j];
            let zd2 = cfg.z_norm_diff[j] * cfg.z_norm_diff[j];
            dz[k * nz + j] += 2.0 * w * (z[k * nz + j] - p.target[i * PHYSICAL_STATES + j]) / zn2;
            let fj = out[k * nz + j] * out_scale[j];
            dout[k * nz + j] +=
                2.0 * w * cfg.alpha * (fj - p.target_diff[i * PHYSICAL_STATES + j]) / zd2 * out_scale[j];
        }
    }
    for j in 0..PHYSICAL_STATES {
        dz[arg_max[j] * nz + j] +=
            2.0 * cfg.beta * (zmax[j] - p.target_max[j]) / (cfg.z_norm_max[j] * cfg.z_norm_max[j]);
        dz[arg_min[j] * nz + j] +=
            2.0 * cfg.gamma * (zmin[j] - p.target_min[j]) / (cfg.z_norm_min[j] * cfg.z_norm_min[j]);
    }
    for j in PHYSICAL_STATES..nz {
        dz[j] += 2.0 * cfg.eta * z[j];
        dz[n * nz + j] += 2.0 * cfg.eta * z[n * nz + j];
    }

    let n_w = model.ann.len();
    let (gw, glat) = grad.split_at_mut(n_w);
    let mut adj = dz[n * nz..].to_vec();
    let mut cot = vec![0.0; nz];
    let mut gin = vec![0.0; nin];
    let mut scratch = VjpScratch::new(arch);
    for k in (0..n).rev() {
        let h = p.ctx.step(k);
        for j in 0..nz {
            cot[j] = h * adj[j] * out_scale[j] + dout[k * nz + j];
        }
        model.ann.vjp_tape(
            &inp[k * nin..(k + 1) * nin],
            &hid[k * hw..(k + 1) * hw],
            &out[k * nz..(k + 1) * nz],
            &cot,
            &mut gin,
            gw,
            &mut scratch,
        );
        for j in 0..nz {
            adj[j] += dz[k * nz + j] + gin[j] / model.norm.scale[j];
        }
    }
    for (g, a) in glat.iter_mut().zip(&adj[PHYSICAL_STATES..]) {
        *g += a;
    }
    Ok(value)
}

/// Batch-mean loss plus `ι‖w‖²`, with the gradient over [`model_params`]
/// when `with_grad` is set. Samples are evaluated in parallel and reduced in
/// batch order.
pub fn loss_prepared(
    model: &LnodeModel,
    batch: &[PreparedSample],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let n_x = model.ann.len() + model.num_latent();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|p| {
            let mut g = if with_grad { vec![0.0; n_x] } else { Vec::new() };
            let v = sample_loss(model, p, cfg, with_grad.then_some(g.as_mut_slice()))?;
            Ok((v, g))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    let mut grad = if with_grad { Some(vec![0.0; n_x]) } else { None };
    for (v, g) in &parts {
        value += v * inv;
        if let Some(acc) = grad.as_mut() {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b * inv;
            }
        }
    }
    let wts = model.ann.as_flat();
    value += cfg.iota * wts.iter().map(|v| v * v).sum::<f64>();
    if let Some(acc) = grad.as_mut() {
        for (a, v) in acc.iter_mut().zip(wts) {
            *a += 2.0 * cfg.iota * v;
        }
    }
    Ok((value, grad))
}

/// Loss and gradient over [`model_params`] for a batch of samples.
pub fn loss(model: &LnodeModel, batch: &[TrainingSample], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let prepared = prepare_batch(model, batch, cfg)?;
    let (v, g) = loss_prepared(model, &prepared, cfg, true)?;
    Ok((v, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lnode::StateNormalization;
    use crate::refmodel::analytic::ExponentialFamily;
    use crate::refmodel::Split;
    use rand::Rng as _;

    fn setup(num_states: usize, neurons: usize) -> (LnodeModel, Vec<TrainingSample>) {
        let fam = ExponentialFamily::default();
        let ctx = CycleContext::new(0.2, 0.05, 1e-2).unwrap();
        let ds = fam.dataset(3, &ctx, 0).unwrap();
        let norm = StateNormalization::from_trajectories(ds.samples.iter().map(|s| &s.trajectory), num_states).unwrap();
        let model = LnodeModel::new(fam.space(), num_states, 2, neurons, norm, fam.z0.clone(), 7).unwrap();
        (model, ds.samples)
    }

    /// Straightforward re-implementation of the L² term only.
    fn naive_l2(model: &LnodeModel, samples: &[TrainingSample], cfg: &LossConfig) -> f64 {
        let mut total = 0.0;
        for s in samples {
            let ctx = s.context(cfg.dt).unwrap();
            let traj = model
                .integrate(&model.initial_state(s).unwrap(), &s.theta, &ctx)
                .unwrap();
            let m = cfg.stride();
            let mut acc = 0.0;
            let mut k = 0;
            while k < ctx.n_steps() {
                let y = s.trajectory.interpolate(traj.times[k]);
                for j in 0..PHYSICAL_STATES {
                    acc += m as f64 * cfg.dt * ((traj.states[k][j] - y[j]) / cfg.z_norm[j]).powi(2);
                }
                k += m;
            }
            total += acc;
        }
        total / samples.len() as f64
    }

    #[test]
    fn pure_l2_matches_naive_evaluation() {
        let (model, samples) = setup(9, 6);
        let mut cfg = LossConfig::from_samples(&samples, 2e-2, 1e-2, 0.0).unwrap();
        cfg.alpha = 0.0;
        cfg.beta = 0.0;
        cfg.gamma = 0.0;
        cfg.eta = 0.0;
        let (v, _) = loss(&model, &samples, &cfg).unwrap();
        let oracle = naive_l2(&model, &samples, &cfg);
        assert!((v - oracle).abs() <= 1e-12 * oracle.max(1.0), "{v} vs {oracle}");
    }

    #[test]
    fn exact_model_gives_zero_loss() {
        // zero network + constant targets: every term vanishes
        let (mut model, mut samples) = setup(8, 5);
        model.ann.as_flat_mut().iter_mut().for_each(|w| *w = 0.0);
        for s in &mut samples {
            for row in &mut s.trajectory.states {
                row.copy_from_slice(&s.initial_state);
            }
        }
        let cfg = LossConfig::from_samples(&samples[..1], 1e-2, 1e-2, 0.0).unwrap();
        let (v, g) = loss(&model, &samples, &cfg).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));

        let mut with_reg = cfg.clone();
        with_reg.iota = 0.3;
        let (v, _) = loss(&model, &samples, &with_reg).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn regularizer_alone_survives_on_exact_fit() {
        // a nonzero final-layer bias on a latent state only leaves physical states untouched
        let (mut model, mut samples) = setup(9, 5);
        model.ann.as_flat_mut().iter_mut().for_each(|w| *w = 0.0);
        let n = model.ann.len();
        model.ann.as_flat_mut()[n - 1] = 0.5;
        for s in &mut samples {
            for row in &mut s.trajectory.states {
                row.copy_from_slice(&s.initial_state);
            }
        }
        let mut cfg = LossConfig::from_samples(&samples[..1], 1e-2, 1e-2, 0.25).unwrap();
        cfg.eta = 0.0;
        let (v, _) = loss(&model, &samples, &cfg).unwrap();
        assert!((v - 0.25 * 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (mut model, samples) = setup(10, 5);
        model.latent_ic = vec![0.3, -0.2];
        let cfg = LossConfig::from_samples(&samples, 2e-2, 1e-2, 1e-3).unwrap();
        let (_, g) = loss(&model, &samples, &cfg).unwrap();
        let x0 = model_params(&model);
        assert!(x0.len() <= 300);
        let mut worst: f64 = 0.0;
        for i in 0..x0.len() {
            let h = 1e-6 * x0[i].abs().max(1.0);
            let mut xp = x0.clone();
            xp[i] += h;
            set_model_params(&mut model, &xp).unwrap();
            let (fp, _) = loss(&model, &samples, &cfg).unwrap();
            xp[i] -= 2.0 * h;
            set_model_params(&mut model, &xp).unwrap();
            let (fm, _) = loss(&model, &samples, &cfg).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        set_model_params(&mut model, &x0).unwrap();
        assert!(worst <= 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn reduction_is_independent_of_thread_count() {
        let (model, samples) = setup(9, 6);
        let cfg = LossConfig::from_samples(&samples, 1e-2, 1e-2, 1e-3).unwrap();
        let (v1, g1) = loss(&model, &samples, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (v3, g3) = pool.install(|| loss(&model, &samples, &cfg)).unwrap();
        assert_eq!(v1.to_bits(), v3.to_bits());
        assert_eq!(g1, g3);
    }

    #[test]
    fn nonfinite_loss_names_the_sample() {
        let (mut model, samples) = setup(8, 5);
        let mut rng = crate::rng::rng(1);
        model
            .ann
            .as_flat_mut()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-1.0..1.0) * 1e200);
        let cfg = LossConfig::from_samples(&samples, 1e-2, 1e-2, 0.0).unwrap();
        match loss(&model, &samples[1..2], &cfg) {
            Err(Error::LossDivergence { sample }) => assert_eq!(sample, samples[1].id),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(samples.iter().all(|s| s.split == Split::Train));
    }
}
