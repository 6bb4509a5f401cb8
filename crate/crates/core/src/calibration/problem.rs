//! Calibration problems, the normalized misfit cost and its discrete adjoint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{CycleContext, LnodeModel, Trajectory, PHYSICAL_LABELS, PHYSICAL_STATES};
use crate::nn::VjpScratch;

/// Parameters that set the cycle itself and so can never be calibrated.
pub const CONTEXT_PARAMETERS: [&str; 2] = ["T_HB", "AV_delay"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParameter {
    pub fn new(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }
}

/// Everything about a calibration except the observed data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProblemSetup {
    /// Trace label to weight (0 or 1); missing labels weigh 0.
    pub weights: BTreeMap<String, f64>,
    pub free: Vec<FreeParameter>,
    /// Values of the parameters that are not free.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    /// Physical initial state; the model's reference state when absent.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
}

/// On-disk problem description. `observed` is resolved relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub observed: PathBuf,
    pub av_delay: f64,
    #[serde(flatten)]
    pub setup: ProblemSetup,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut file: ProblemFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.observed.is_relative() {
            if let Some(dir) = path.parent() {
                file.observed = dir.join(&file.observed);
            }
        }
        Ok(file)
    }

    pub fn observed_trajectory(&self) -> Result<Trajectory> {
        Trajectory::load_csv(&self.observed, self.av_delay)
    }

    pub fn build(&self, model: &LnodeModel, dt: f64) -> Result<CalibrationProblem> {
        CalibrationProblem::new(model, &self.observed_trajectory()?, &self.setup, dt)
    }
}

/// A validated calibration problem with the observations resampled onto the
/// model grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationProblem {
    pub context: CycleContext,
    pub weights: [f64; PHYSICAL_STATES],
    pub free: Vec<FreeParameter>,
    /// Index of each free parameter in the model's parameter space.
    pub free_index: Vec<usize>,
    /// Full parameter vector; free slots hold their bound midpoints.
    pub base: Vec<f64>,
    pub initial_state: Vec<f64>,
    /// Observations on the model grid, one row of physical states per point.
    pub target: Vec<Vec<f64>>,
    /// Time average of each squared observed trace.
    pub mu: [f64; PHYSICAL_STATES],
}

impl CalibrationProblem {
    pub fn new(model: &LnodeModel, observed: &Trajectory, setup: &ProblemSetup, dt: f64) -> Result<Self> {
        if observed.num_states() < PHYSICAL_STATES || observed.len() < 2 {
            return Err(Error::Dataset("observed trajectory lacks the physical traces".into()));
        }
        let t_hb = *observed.times.last().expect("non-empty");
        let context = CycleContext::new(t_hb, observed.context.av_delay, dt)?;

        let mut weights = [0.0; PHYSICAL_STATES];
        for (label, &w) in &setup.weights {
            let j = PHYSICAL_LABELS
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::Config(format!("unknown trace {label}")))?;
            if w != 0.0 && w != 1.0 {
                return Err(Error::Config(format!("weight of {label} must be 0 or 1, got {w}")));
            }
            weights[j] = w;
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("every trace weight is zero".into()));
        }

        let space = &model.space;
        if setup.free.is_empty() {
            return Err(Error::Config("no free parameters".into()));
        }
        let mut free_index = Vec::with_capacity(setup.free.len());
        for f in &setup.free {
            if CONTEXT_PARAMETERS.contains(&f.name.as_str()) {
                return Err(Error::Config(format!("{} sets the cycle and cannot be free", f.name)));
            }
            let i = space
                .index_of(&f.name)
                .ok_or_else(|| Error::Config(format!("model has no parameter {}", f.name)))?;
            if free_index.contains(&i) {
                return Err(Error::Config(format!("{} listed twice", f.name)));
            }
            let e = &space.entries()[i];
            if !(f.lower < f.upper) || f.lower < e.lower || f.upper > e.upper {
                return Err(Error::Config(format!(
                    "bounds [{}, {}] of {} must be ordered and inside [{}, {}]",
                    f.lower, f.upper, f.name, e.lower, e.upper
                )));
            }
            free_index.push(i);
        }
        for name in setup.fixed.keys() {
            if space.index_of(name).is_none() {
                return Err(Error::Config(format!("model has no parameter {name}")));
            }
        }

        let mut base = vec![0.0; space.len()];
        for (i, e) in space.entries().iter().enumerate() {
            if let Some(k) = free_index.iter().position(|&j| j == i) {
                let f = &setup.free[k];
                base[i] = 0.5 * (f.lower + f.upper);
                if setup.fixed.contains_key(&e.name) {
                    return Err(Error::Config(format!("{} is both free and fixed", e.name)));
                }
                continue;
            }
            let from_context = match e.name.as_str() {
                "T_HB" => Some(context.t_hb),
                "AV_delay" => Some(context.av_delay),
                _ => None,
            };
            base[i] = match (setup.fixed.get(&e.name), from_context) {
                (Some(&v), Some(c)) if (v - c).abs() > 1e-9 * c.abs().max(1.0) => {
                    return Err(Error::Config(format!(
                        "{} = {v} disagrees with the observed cycle ({c})",
                        e.name
                    )))
                }
                (Some(&v), _) => v,
                (None, Some(c)) => c,
                (None, None) => return Err(Error::Config(format!("no value for fixed parameter {}", e.name))),
            };
            if !base[i].is_finite() {
                return Err(Error::Config(format!("{} is not finite", e.name)));
            }
        }

        let initial_state = match &setup.initial_state {
            Some(s) => s.clone(),
            None => model.reference_ic.clone(),
        };
        if initial_state.len() != PHYSICAL_STATES {
            return Err(Error::Config(format!(
                "initial state needs {PHYSICAL_STATES} values, got {}",
                initial_state.len()
            )));
        }

        let target: Vec<Vec<f64>> = context
            .grid()
            .iter()
            .map(|&t| observed.interpolate(t)[..PHYSICAL_STATES].to_vec())
            .collect();
        let mut mu = [0.0; PHYSICAL_STATES];
        for (j, m) in mu.iter_mut().enumerate() {
            let trace: Vec<f64> = target.iter().map(|r| r[j]).collect();
            *m = mean_square(&trace, &context);
            if weights[j] > 0.0 && !(*m > 0.0) {
                return Err(Error::Config(format!(
                    "observed {} is identically zero",
                    PHYSICAL_LABELS[j]
                )));
            }
        }

        Ok(Self {
            context,
            weights,
            free: setup.free.clone(),
            free_index,
            base,
            initial_state,
            target,
            mu,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free.iter().map(|f| f.name.clone()).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.upper).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.n_free() && self.free.iter().zip(theta).all(|(f, &x)| x >= f.lower && x <= f.upper)
    }

    /// Full parameter vector with the free slots set to `theta`.
    pub fn full_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.n_free() {
            return Err(Error::ParameterShape {
                expected: self.n_free(),
                got: theta.len(),
            });
        }
        let mut full = self.base.clone();
        for (&i, &x) in self.free_index.iter().zip(theta) {
            full[i] = x;
        }
        Ok(full)
    }

    fn check(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let full = self.full_theta(theta)?;
        if !self.contains(theta) {
            return Err(Error::Config(format!("θ = {theta:?} outside the calibration bounds")));
        }
        Ok(full)
    }

    /// Model trajectory at free values `theta`.
    pub fn simulate(&self, model: &LnodeModel, theta: &[f64]) -> Result<Trajectory> {
        let full = self.full_theta(theta)?;
        let z0 = model.initial_state_from(&self.initial_state)?;
        model.integrate(&z0, &full, &self.context)
    }

    /// Misfit cost; `+∞` when the integration diverges.
    pub fn cost(&self, model: &LnodeModel, theta: &[f64]) -> Result<f64> {
        let full = self.check(theta)?;
        match Tape::record(model, self, &full) {
            Ok(tape) => Ok(self.misfit(&tape, None)),
            Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Cost and its gradient over the free parameters.
    pub fn cost_gradient(&self, model: &LnodeModel, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let full = self.check(theta)?;
        let tape = Tape::record(model, self, &full)?;
        let mut dz = vec![0.0; tape.states.len()];
        let cost = self.misfit(&tape, Some(&mut dz));
        Ok((cost, self.backward(model, &tape, &dz)))
    }

    /// Adds `∂J/∂z` into `dz` when given.
    fn misfit(&self, tape: &Tape, mut dz: Option<&mut [f64]>) -> f64 {
        let n = self.context.n_steps();
        let nz = tape.nz;
        let mut j = 0.0;
        for k in 0..n {
            let h = self.context.step(k);
            let z = &tape.states[k * nz..k * nz + PHYSICAL_STATES];
            for i in 0..PHYSICAL_STATES {
                if self.weights[i] == 0.0 {
                    continue;
                }
                let r = z[i] - self.target[k][i];
                j += self.weights[i] * h * r * r / self.mu[i];
                if let Some(dz) = dz.as_deref_mut() {
                    dz[k * nz + i] += 2.0 * self.weights[i] * h * r / self.mu[i];
                }
            }
        }
        j
    }

    /// Reverse sweep of the Euler recursion. `dz` holds the cotangent of every
    /// grid state; returns the gradient over the free parameters.
    pub(crate) fn backward(&self, model: &LnodeModel, tape: &Tape, dz: &[f64]) -> Vec<f64> {
        let arch = model.ann.architecture();
        let (nz, ni, hw) = (tape.nz, arch.input_dim, arch.hidden_width());
        let n = self.context.n_steps();
        let out_scale = model.output_scale(&self.context);
        let mut scratch = VjpScratch::new(arch);
        let mut adj = dz[n * nz..].to_vec();
        let mut cot = vec![0.0; nz];
        let mut gin = vec![0.0; ni];
        let mut g_norm = vec![0.0; model.n_params()];
        for k in (0..n).rev() {
            let h = self.context.step(k);
            for j in 0..nz {
                cot[j] = h * adj[j] * out_scale[j];
            }
            model.ann.vjp_input_tape(
                &tape.inputs[k * ni..(k + 1) * ni],
                &tape.hidden[k * hw..(k + 1) * hw],
                &tape.outs[k * nz..(k + 1) * nz],
                &cot,
                &mut gin,
                &mut scratch,
            );
            for (g, d) in g_norm.iter_mut().zip(&gin[nz + 2..]) {
                *g += d;
            }
            for j in 0..nz {
                adj[j] += gin[j] / model.norm.scale[j] + dz[k * nz + j];
            }
        }
        let entries = model.space.entries();
        self.free_index
            .iter()
            .map(|&i| g_norm[i] * 2.0 / entries[i].width())
            .collect()
    }
}

/// Time average of `x²` over the cycle by the left rectangle rule.
pub fn mean_square(x: &[f64], ctx: &CycleContext) -> f64 {
    (0..ctx.n_steps()).map(|k| ctx.step(k) * x[k] * x[k]).sum::<f64>() / ctx.t_hb
}

/// `‖x − x̂‖² / μ(x̂²)` by the left rectangle rule on the grid of `ctx`.
pub fn normalized_misfit(model: &[f64], observed: &[f64], ctx: &CycleContext) -> f64 {
    let num: f64 = (0..ctx.n_steps())
        .map(|k| ctx.step(k) * (model[k] - observed[k]).powi(2))
        .sum();
    num / mean_square(observed, ctx)
}

/// Forward Euler pass with every network evaluation recorded.
pub(crate) struct Tape {
    pub nz: usize,
    pub states: Vec<f64>,
    inputs: Vec<f64>,
    hidden: Vec<f64>,
    outs: Vec<f64>,
}

impl Tape {
    pub fn record(model: &LnodeModel, prob: &CalibrationProblem, theta_full: &[f64]) -> Result<Self> {
        let arch = model.ann.architecture();
        let (nz, ni, hw) = (model.num_states(), arch.input_dim, arch.hidden_width());
        let ctx = &prob.context;
        let n = ctx.n_steps();
        let times = ctx.grid();
        let theta_norm = model.space.normalize(theta_full);
        let out_scale = model.output_scale(ctx);
        let mut tape = Self {
            nz,
            states: Vec::with_capacity((n + 1) * nz),
            inputs: vec![0.0; n * ni],
            hidden: vec![0.0; n * hw],
            outs: vec![0.0; n * nz],
        };
        tape.states.extend(model.initial_state_from(&prob.initial_state)?);
        for k in 0..n {
            let (z, input) = (&tape.states[k * nz..], &mut tape.inputs[k * ni..(k + 1) * ni]);
            model.network_input(&z[..nz], times[k], &theta_norm, ctx, input);
            let out = &mut tape.outs[k * nz..(k + 1) * nz];
            model
                .ann
                .forward_tape(input, &mut tape.hidden[k * hw..(k + 1) * hw], out);
            let h = ctx.step(k);
            for j in 0..nz {
                let next = tape.states[k * nz + j] + h * out[j] * out_scale[j];
                if !next.is_finite() {
                    return Err(Error::Divergence { step: k + 1 });
                }
                tape.states.push(next);
            }
        }
        Ok(tape)
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.nz..(k + 1) * self.nz]
    }
}
