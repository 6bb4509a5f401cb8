//! Latent neural ODE over one heartbeat.
//!
//! The state is `[p_LA, p_LV, p_RA, p_RV, V_LA, V_LV, V_RA, V_RV, latent...]`.
//! The network sees the normalized state, the two periodic inputs and the
//! parameters mapped onto [-1, 1]; its output is rescaled so that a unit
//! output corresponds to one state scale per heartbeat.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AnnArchitecture, AnnWeights};
use crate::refmodel::{ParameterSpace, TrainingSample};

pub const PHYSICAL_STATES: usize = 8;
pub const PHYSICAL_LABELS: [&str; PHYSICAL_STATES] = ["p_LA", "p_LV", "p_RA", "p_RV", "V_LA", "V_LV", "V_RA", "V_RV"];

/// Column labels for a state vector of length `num_states`.
pub fn state_labels(num_states: usize) -> Vec<String> {
    let mut labels: Vec<String> = PHYSICAL_LABELS.iter().map(|s| s.to_string()).collect();
    labels.extend((0..num_states.saturating_sub(PHYSICAL_STATES)).map(|i| format!("z_lat_{i}")));
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleContext {
    /// Heartbeat period [s].
    pub t_hb: f64,
    /// Atrioventricular delay [s].
    pub av_delay: f64,
    /// Integration step [s].
    pub dt: f64,
}

impl CycleContext {
    pub fn new(t_hb: f64, av_delay: f64, dt: f64) -> Result<Self> {
        let ctx = Self { t_hb, av_delay, dt };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_hb > 0.0) || !(self.dt > 0.0) || !self.av_delay.is_finite() {
            return Err(Error::Config(format!("invalid cycle context {self:?}")));
        }
        if self.full_steps() < 2 {
            return Err(Error::Config(format!(
                "dt = {} leaves fewer than two steps in T_HB = {}",
                self.dt, self.t_hb
            )));
        }
        Ok(())
    }

    /// Whole steps of size `dt` that fit in the cycle. A ratio within 1e-9
    /// of an integer counts as that integer.
    pub fn full_steps(&self) -> usize {
        let ratio = self.t_hb / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
            rounded as usize
        } else {
            ratio.floor() as usize
        }
    }

    /// Total steps, including a trailing remainder step when `T_HB/dt` is not
    /// an integer.
    pub fn n_steps(&self) -> usize {
        let full = self.full_steps();
        if self.remainder() > 0.0 {
            full + 1
        } else {
            full
        }
    }

    fn remainder(&self) -> f64 {
        let r = self.t_hb - self.full_steps() as f64 * self.dt;
        if r > 1e-9 * self.dt {
            r
        } else {
            0.0
        }
    }

    /// Grid times `t_0 = 0, ..., t_n = T_HB`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_steps();
        let mut t: Vec<f64> = (0..=n).map(|k| k as f64 * self.dt).collect();
        t[n] = self.t_hb;
        t
    }

    /// Step size from grid point `k` to `k + 1`.
    pub fn step(&self, k: usize) -> f64 {
        if k + 1 == self.n_steps() {
            self.t_hb - k as f64 * self.dt
        } else {
            self.dt
        }
    }
}

/// `(cos, sin)` of the cardiac phase `2π (t - AV_delay) / T_HB`.
pub fn periodic_inputs(t: f64, ctx: &CycleContext) -> (f64, f64) {
    let phase = 2.0 * PI * (t - ctx.av_delay) / ctx.t_hb;
    (phase.cos(), phase.sin())
}

/// A right-hand side `dz/dt = f(z, t; θ)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[f64], t: f64, theta: &[f64], ctx: &CycleContext, out: &mut [f64]);
}

/// Wraps a closure as a [`VectorField`]; used to drive the integrator with
/// closed-form test systems.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &[f64], &CycleContext, &mut [f64]),
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], f64, &[f64], &CycleContext, &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64], t: f64, theta: &[f64], ctx: &CycleContext, out: &mut [f64]) {
        (self.f)(z, t, theta, ctx, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: CycleContext,
    pub times: Vec<f64>,
    /// One row per grid point.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Column `j` over the whole grid.
    pub fn trace(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|r| r[j]).collect()
    }

    /// Linear interpolation of every state at time `t` (clamped to the grid).
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let k = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.states[k].clone(),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Resample onto the grid of `ctx`.
    pub fn resample(&self, ctx: &CycleContext) -> Trajectory {
        let times = ctx.grid();
        let states = times.iter().map(|&t| self.interpolate(t)).collect();
        Trajectory {
            context: *ctx,
            times,
            states,
        }
    }

    /// CSV with a `t` column followed by the state labels; values are written
    /// in shortest round-trip form so reading back is bit-exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let labels = state_labels(self.num_states());
        writeln!(w, "t,{}", labels.join(","))?;
        for (t, row) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a CSV written by [`Self::write_csv`]. The step `dt` is taken
    /// from the first grid interval; `av_delay` is not stored in the file.
    pub fn read_csv<R: BufRead>(r: R, av_delay: f64) -> Result<Trajectory> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Dataset("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 1 + PHYSICAL_STATES {
            return Err(Error::Dataset(format!("unexpected trajectory header: {header}")));
        }
        for (c, want) in cols[1..].iter().zip(state_labels(cols.len() - 1)) {
            if *c != want {
                return Err(Error::Dataset(format!("unexpected column {c}, expected {want}")));
            }
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Dataset(format!("row {}: {e}", i + 1)))?;
            if vals.len() != cols.len() {
                return Err(Error::Dataset(format!("row {} has {} columns", i + 1, vals.len())));
            }
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        if times.len() < 3 {
            return Err(Error::Dataset("trajectory needs at least 3 rows".into()));
        }
        let context = CycleContext {
            t_hb: *times.last().unwrap() - times[0],
            av_delay,
            dt: times[1] - times[0],
        };
        Ok(Trajectory { context, times, states })
    }

    pub fn load_csv(path: &Path, av_delay: f64) -> Result<Trajectory> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), av_delay)
    }
}

/// Forward Euler over one cycle.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    z0: &[f64],
    theta: &[f64],
    ctx: &CycleContext,
) -> Result<Trajectory> {
    ctx.validate()?;
    let n_z = field.dim();
    if z0.len() != n_z {
        return Err(Error::InputShape {
            expected: n_z,
            got: z0.len(),
        });
    }
    let times = ctx.grid();
    let n = ctx.n_steps();
    let mut states = Vec::with_capacity(n + 1);
    states.push(z0.to_vec());
    let mut f = vec![0.0; n_z];
    for k in 0..n {
        let z = &states[k];
        field.eval(z, times[k], theta, ctx, &mut f);
        let h = ctx.step(k);
        let next: Vec<f64> = z.iter().zip(&f).map(|(a, b)| a + h * b).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        states.push(next);
    }
    Ok(Trajectory {
        context: *ctx,
        times,
        states,
    })
}

/// Affine per-state normalization: `(z - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNormalization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StateNormalization {
    pub fn identity(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Midrange center and half-range scale of each physical trace over the
    /// given trajectories; latent states keep (0, 1).
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>, num_states: usize) -> Result<Self> {
        let mut lo = [f64::INFINITY; PHYSICAL_STATES];
        let mut hi = [f64::NEG_INFINITY; PHYSICAL_STATES];
        for traj in trajs {
            for row in &traj.states {
                for j in 0..PHYSICAL_STATES {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        if lo[0].is_infinite() {
            return Err(Error::Dataset("no trajectories to normalize".into()));
        }
        let mut norm = Self::identity(num_states);
        for j in 0..PHYSICAL_STATES {
            norm.center[j] = 0.5 * (hi[j] + lo[j]);
            norm.scale[j] = (0.5 * (hi[j] - lo[j])).max(1e-6);
        }
        Ok(norm)
    }
}

/// Trained surrogate: network, normalization, latent initial condition and
/// the parameter space it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct LnodeModel {
    pub ann: AnnWeights,
    pub space: ParameterSpace,
    pub norm: StateNormalization,
    /// Trainable latent initial condition shared by all samples.
    pub latent_ic: Vec<f64>,
    /// Mean physical initial state of the training data, used when no
    /// per-case initial state is available.
    pub reference_ic: Vec<f64>,
    pub seed: u64,
}

impl LnodeModel {
    pub fn architecture(num_states: usize, n_params: usize, layers: usize, neurons: usize) -> AnnArchitecture {
        AnnArchitecture::new(num_states + 2 + n_params, layers, neurons, num_states)
    }

    /// Freshly initialized model: Glorot weights, zero latent initial state.
    pub fn new(
        space: ParameterSpace,
        num_states: usize,
        layers: usize,
        neurons: usize,
        norm: StateNormalization,
        reference_ic: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if num_states < PHYSICAL_STATES {
            return Err(Error::Config(format!(
                "num_states = {num_states} below the {PHYSICAL_STATES} physical states"
            )));
        }
        if norm.center.len() != num_states || norm.scale.len() != num_states {
            return Err(Error::Config("normalization length differs from num_states".into()));
        }
        let arch = Self::architecture(num_states, space.len(), layers, neurons);
        let ann = AnnWeights::init_glorot(arch, seed)?;
        Ok(Self {
            ann,
            space,
            norm,
            latent_ic: vec![0.0; num_states - PHYSICAL_STATES],
            reference_ic,
            seed,
        })
    }

    pub fn num_states(&self) -> usize {
        self.ann.architecture().output_dim
    }

    pub fn num_latent(&self) -> usize {
        self.num_states() - PHYSICAL_STATES
    }

    pub fn n_params(&self) -> usize {
        self.space.len()
    }

    pub fn state_labels(&self) -> Vec<String> {
        state_labels(self.num_states())
    }

    /// Network input for `(z, t, θ_normalized)`.
    pub fn network_input(&self, z: &[f64], t: f64, theta_norm: &[f64], ctx: &CycleContext, input: &mut [f64]) {
        let n_z = self.num_states();
        for j in 0..n_z {
            input[j] = (z[j] - self.norm.center[j]) / self.norm.scale[j];
        }
        let (c, s) = periodic_inputs(t, ctx);
        input[n_z] = c;
        input[n_z + 1] = s;
        input[n_z + 2..].copy_from_slice(theta_norm);
    }

    /// `dz/dt` at `(z, t)` for physical parameters `θ`.
    pub fn rhs(&self, z: &[f64], t: f64, theta: &[f64], ctx: &CycleContext) -> Result<Vec<f64>> {
        self.space.check_len(theta)?;
        if z.len() != self.num_states() {
            return Err(Error::InputShape {
                expected: self.num_states(),
                got: z.len(),
            });
        }
        let mut out = vec![0.0; self.num_states()];
        self.eval(z, t, theta, ctx, &mut out);
        Ok(out)
    }

    /// Scale mapping network outputs onto state derivatives.
    pub fn output_scale(&self, ctx: &CycleContext) -> Vec<f64> {
        self.norm.scale.iter().map(|s| s / ctx.t_hb).collect()
    }

    pub fn integrate(&self, z0: &[f64], theta: &[f64], ctx: &CycleContext) -> Result<Trajectory> {
        self.space.check_len(theta)?;
        integrate(self, z0, theta, ctx)
    }

    /// Initial state for a sample: its physical values followed by the
    /// shared latent initial condition.
    pub fn initial_state(&self, sample: &TrainingSample) -> Result<Vec<f64>> {
        assemble_initial_state(sample, self)
    }

    /// Physical initial values followed by the latent initial condition.
    pub fn initial_state_from(&self, physical: &[f64]) -> Result<Vec<f64>> {
        if physical.len() != PHYSICAL_STATES {
            return Err(Error::Dataset(format!(
                "expected {PHYSICAL_STATES} physical initial values, got {}",
                physical.len()
            )));
        }
        let mut z = physical.to_vec();
        z.extend_from_slice(&self.latent_ic);
        Ok(z)
    }
}

impl VectorField for LnodeModel {
    fn dim(&self) -> usize {
        self.num_states()
    }

    fn eval(&self, z: &[f64], t: f64, theta: &[f64], ctx: &CycleContext, out: &mut [f64]) {
        let arch = self.ann.architecture();
        let mut input = vec![0.0; arch.input_dim];
        let theta_norm = self.space.normalize(theta);
        self.network_input(z, t, &theta_norm, ctx, &mut input);
        let mut hidden = vec![0.0; arch.hidden_width()];
        self.ann.forward_tape(&input, &mut hidden, out);
        for (o, s) in out.iter_mut().zip(&self.norm.scale) {
            *o *= s / ctx.t_hb;
        }
    }
}

pub fn assemble_initial_state(sample: &TrainingSample, model: &LnodeModel) -> Result<Vec<f64>> {
    model.initial_state_from(&sample.initial_state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::ParameterEntry;

    fn ctx() -> CycleContext {
        CycleContext::new(0.854, 0.15, 1e-3).unwrap()
    }

    fn one_param_space() -> ParameterSpace {
        ParameterSpace::new(vec![ParameterEntry::new("k", "1/s", 0.0, 2.0)]).unwrap()
    }

    #[test]
    fn periodic_inputs_at_landmarks() {
        let c = ctx();
        let (a, b) = periodic_inputs(c.av_delay, &c);
        assert_eq!((a, b), (1.0, 0.0));
        let (a, b) = periodic_inputs(c.av_delay + c.t_hb / 4.0, &c);
        assert!(a.abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (a, b) = periodic_inputs(c.av_delay + c.t_hb, &c);
        assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-12);
        for k in 0..1000 {
            let (a, b) = periodic_inputs(k as f64 * 0.0137 - 3.0, &c);
            assert!((a * a + b * b - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_hits_period_exactly() {
        let c = ctx();
        let g = c.grid();
        assert_eq!(g.len(), 855);
        assert_eq!(*g.last().unwrap(), 0.854);
        assert_eq!(g[17], 17.0 * 1e-3);
        let odd = CycleContext::new(1.0, 0.0, 0.3).unwrap();
        assert_eq!(odd.n_steps(), 4);
        let g = odd.grid();
        assert_eq!(g.len(), 5);
        assert!((odd.step(3) - 0.1).abs() < 1e-12);
        assert_eq!(g[4], 1.0);
    }

    #[test]
    fn context_needs_two_steps() {
        assert!(CycleContext::new(1.0, 0.0, 0.6).is_err());
        assert!(CycleContext::new(-1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn zero_network_is_stationary() {
        let mut m = LnodeModel::new(
            one_param_space(),
            10,
            2,
            5,
            StateNormalization::identity(10),
            vec![0.0; 8],
            1,
        )
        .unwrap();
        m.ann.as_flat_mut().iter_mut().for_each(|w| *w = 0.0);
        let z0: Vec<f64> = (0..10).map(|i| i as f64 + 0.5).collect();
        assert!(m.rhs(&z0, 0.3, &[1.0], &ctx()).unwrap().iter().all(|&x| x == 0.0));
        let traj = m.integrate(&z0, &[1.0], &ctx()).unwrap();
        assert!(traj.states.iter().all(|r| r == &z0));
    }

    #[test]
    fn rhs_is_periodic_in_time() {
        let m = LnodeModel::new(
            one_param_space(),
            8,
            2,
            6,
            StateNormalization::identity(8),
            vec![0.0; 8],
            4,
        )
        .unwrap();
        let c = ctx();
        let z = [1.0, -0.5, 0.2, 0.3, 0.0, 0.1, -0.2, 0.4];
        let a = m.rhs(&z, 0.2, &[0.5], &c).unwrap();
        let b = m.rhs(&z, 0.2 + c.t_hb, &[0.5], &c).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_matches_hand_composition() {
        // one hidden tanh neuron reading only z_0; output 0 is w2 * tanh(w1 z0 + b1) + b2.
        let space = one_param_space();
        let mut m = LnodeModel::new(space, 8, 1, 1, StateNormalization::identity(8), vec![0.0; 8], 0).unwrap();
        let flat = m.ann.as_flat_mut();
        flat.iter_mut().for_each(|w| *w = 0.0);
        flat[0] = 0.7; // w1 for z_0
        flat[11] = 0.2; // b1 (input dim 11)
        flat[12] = 1.5; // w2 for output 0
        flat[20] = -0.3; // b2 for output 0
        let c = ctx();
        let z = [0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let f = m.rhs(&z, 0.1, &[1.0], &c).unwrap();
        let want = (1.5 * (0.7f64 * 0.4 + 0.2).tanh() - 0.3) / c.t_hb;
        assert!((f[0] - want).abs() < 1e-14);
        assert!(m.rhs(&z, 0.1, &[1.0, 2.0], &c).is_err());
    }

    #[test]
    fn euler_on_exponential_decay() {
        let field = FnField::new(1, |z: &[f64], _t, _th: &[f64], _c: &CycleContext, out: &mut [f64]| {
            out[0] = -z[0]
        });
        let err = |dt: f64| {
            let c = CycleContext::new(0.854, 0.0, dt).unwrap();
            let traj = integrate(&field, &[1.0], &[], &c).unwrap();
            (traj.states.last().unwrap()[0] - (-0.854f64).exp()).abs()
        };
        let e1 = err(1e-3);
        let e2 = err(5e-4);
        assert!(e1 < 5e-4);
        assert!((e2 / e1 - 0.5).abs() < 0.1);
    }

    #[test]
    fn periodic_forcing_returns_to_start() {
        let field = FnField::new(2, |_z: &[f64], t, _th: &[f64], c: &CycleContext, out: &mut [f64]| {
            let (a, b) = periodic_inputs(t, c);
            out[0] = a;
            out[1] = b;
        });
        let c = ctx();
        let traj = integrate(&field, &[0.3, -0.2], &[], &c).unwrap();
        let end = traj.states.last().unwrap();
        assert!((end[0] - 0.3).abs() < 2.0 * c.dt);
        assert!((end[1] + 0.2).abs() < 2.0 * c.dt);
    }

    #[test]
    fn divergence_reports_step() {
        let field = FnField::new(1, |z: &[f64], _t, _th: &[f64], _c: &CycleContext, out: &mut [f64]| {
            out[0] = z[0] * z[0] * 1e6
        });
        let c = ctx();
        match integrate(&field, &[10.0], &[], &c) {
            Err(Error::Divergence { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = LnodeModel::new(
            one_param_space(),
            10,
            2,
            5,
            StateNormalization::identity(10),
            vec![0.0; 8],
            9,
        )
        .unwrap();
        let z0 = vec![8.0, 10.0, 4.0, 15.0, 80.0, 120.0, 70.0, 130.0, 0.0, 0.0];
        let traj = m.integrate(&z0, &[0.7], &ctx()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,p_LA,p_LV,p_RA,p_RV,V_LA,V_LV,V_RA,V_RV,z_lat_0,z_lat_1\n"));
        let back = Trajectory::read_csv(&buf[..], 0.15).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!(back.times, traj.times);
    }
}
