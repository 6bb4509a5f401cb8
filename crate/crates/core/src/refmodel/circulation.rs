//! Closed-loop 0D circulation with four time-varying-elastance chambers.
//!
//! Compartments: LA, LV, RA, RV, systemic arteries (SA) and veins (SV),
//! pulmonary arteries (PA) and veins (PV). Vessels are linear compliances,
//! valves are smooth diodes. Blood only moves between compartments, so the
//! total volume is an exact invariant of the right-hand side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lnode::{CycleContext, Trajectory};
use crate::refmodel::space::{ParameterEntry, ParameterSpace};

/// Pressure band [mmHg] over which a valve blends from closed to open.
const VALVE_BAND: f64 = 0.1;
const R_VALVE_OPEN: f64 = 0.01;
const R_VALVE_CLOSED: f64 = 75_000.0;
/// Internal RK4 step [s].
pub const GENERATOR_DT: f64 = 1e-4;

/// Every knob of the generator. Fields named in a [`ParameterSpace`] are
/// overridden per sample; the rest keep these nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculationParams {
    pub emax_lv: f64,
    pub emin_lv: f64,
    pub emax_rv: f64,
    pub emin_rv: f64,
    pub emax_la: f64,
    pub emin_la: f64,
    pub emax_ra: f64,
    pub emin_ra: f64,
    pub r_sys: f64,
    pub r_pulm: f64,
    pub av_delay: f64,
    pub t_hb: f64,
    pub v0_lv: f64,
    pub v0_rv: f64,
    pub v0_la: f64,
    pub v0_ra: f64,
    pub c_sa: f64,
    pub c_sv: f64,
    pub c_pa: f64,
    pub c_pv: f64,
    pub r_ven_sys: f64,
    pub r_ven_pulm: f64,
    /// Ventricular contraction / relaxation durations as fractions of T_HB.
    pub tc_v: f64,
    pub tr_v: f64,
    /// Atrial contraction / relaxation durations as fractions of T_HB.
    pub tc_a: f64,
    pub tr_a: f64,
}

impl Default for CirculationParams {
    fn default() -> Self {
        Self {
            emax_lv: 2.5,
            emin_lv: 0.08,
            emax_rv: 0.6,
            emin_rv: 0.05,
            emax_la: 0.2,
            emin_la: 0.09,
            emax_ra: 0.15,
            emin_ra: 0.07,
            r_sys: 1.0,
            r_pulm: 0.12,
            av_delay: 0.15,
            t_hb: 0.854,
            v0_lv: 5.0,
            v0_rv: 10.0,
            v0_la: 4.0,
            v0_ra: 4.0,
            c_sa: 1.2,
            c_sv: 15.0,
            c_pa: 6.0,
            c_pv: 12.0,
            r_ven_sys: 0.1,
            r_ven_pulm: 0.05,
            tc_v: 0.34,
            tr_v: 0.2,
            tc_a: 0.15,
            tr_a: 0.15,
        }
    }
}

/// Generator parameters that may vary; all other fields stay nominal.
pub fn full_space() -> ParameterSpace {
    ParameterSpace::new(vec![
        ParameterEntry::new("Emax_LV", "mmHg/mL", 1.5, 3.5),
        ParameterEntry::new("Emin_LV", "mmHg/mL", 0.05, 0.12),
        ParameterEntry::new("Emax_RV", "mmHg/mL", 0.4, 0.9),
        ParameterEntry::new("Emin_RV", "mmHg/mL", 0.03, 0.08),
        ParameterEntry::new("Emax_LA", "mmHg/mL", 0.14, 0.3),
        ParameterEntry::new("Emax_RA", "mmHg/mL", 0.1, 0.25),
        ParameterEntry::new("R_sys", "mmHg s/mL", 0.7, 1.4),
        ParameterEntry::new("R_pulm", "mmHg s/mL", 0.06, 0.2),
        ParameterEntry::new("AV_delay", "s", 0.1, 0.2),
        ParameterEntry::new("T_HB", "s", 0.7, 1.0),
    ])
    .expect("static space is valid")
}

/// Five-parameter benchmark space used by the surrogate and calibration tests.
pub fn benchmark_space() -> ParameterSpace {
    full_space()
        .subset(&["Emax_LV", "Emin_LV", "Emax_LA", "R_sys", "R_pulm"])
        .expect("names exist")
}

impl CirculationParams {
    /// Nominal parameters overridden by the named coordinates of `theta`.
    pub fn from_space(space: &ParameterSpace, theta: &[f64]) -> Result<Self> {
        space.check_len(theta)?;
        let mut p = Self::default();
        for (e, &x) in space.entries().iter().zip(theta) {
            *p.field_mut(&e.name)
                .ok_or_else(|| Error::Config(format!("generator has no parameter {}", e.name)))? = x;
        }
        Ok(p)
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "Emax_LV" => &mut self.emax_lv,
            "Emin_LV" => &mut self.emin_lv,
            "Emax_RV" => &mut self.emax_rv,
            "Emin_RV" => &mut self.emin_rv,
            "Emax_LA" => &mut self.emax_la,
            "Emin_LA" => &mut self.emin_la,
            "Emax_RA" => &mut self.emax_ra,
            "Emin_RA" => &mut self.emin_ra,
            "R_sys" => &mut self.r_sys,
            "R_pulm" => &mut self.r_pulm,
            "AV_delay" => &mut self.av_delay,
            "T_HB" => &mut self.t_hb,
            _ => return None,
        })
    }
}

/// Raised-cosine activation, C¹, zero outside `[start, start + tc + tr)`
/// modulo the period.
fn activation(t: f64, start: f64, tc: f64, tr: f64, period: f64) -> f64 {
    let s = (t - start).rem_euclid(period);
    if s < tc {
        0.5 * (1.0 - (std::f64::consts::PI * s / tc).cos())
    } else if s < tc + tr {
        0.5 * (1.0 + (std::f64::consts::PI * (s - tc) / tr).cos())
    } else {
        0.0
    }
}

fn valve(dp: f64) -> f64 {
    let open = 0.5 * (1.0 + (2.0 * dp / VALVE_BAND).tanh());
    dp * (1.0 / R_VALVE_CLOSED + open * (1.0 / R_VALVE_OPEN - 1.0 / R_VALVE_CLOSED))
}

/// Compartment volumes, in order LA, LV, RA, RV, SA, SV, PA, PV.
pub type Volumes = [f64; 8];

/// Chamber pressures `[p_LA, p_LV, p_RA, p_RV]` and vessel pressures
/// `[p_SA, p_SV, p_PA, p_PV]` at time `t`.
pub fn pressures(p: &CirculationParams, v: &Volumes, t: f64) -> ([f64; 4], [f64; 4]) {
    let period = p.t_hb;
    let ea = activation(t, 0.0, p.tc_a * period, p.tr_a * period, period);
    let ev = activation(t, p.av_delay, p.tc_v * period, p.tr_v * period, period);
    let e_la = p.emin_la + (p.emax_la - p.emin_la) * ea;
    let e_ra = p.emin_ra + (p.emax_ra - p.emin_ra) * ea;
    let e_lv = p.emin_lv + (p.emax_lv - p.emin_lv) * ev;
    let e_rv = p.emin_rv + (p.emax_rv - p.emin_rv) * ev;
    (
        [
            e_la * (v[0] - p.v0_la),
            e_lv * (v[1] - p.v0_lv),
            e_ra * (v[2] - p.v0_ra),
            e_rv * (v[3] - p.v0_rv),
        ],
        [v[4] / p.c_sa, v[5] / p.c_sv, v[6] / p.c_pa, v[7] / p.c_pv],
    )
}

fn rhs(p: &CirculationParams, v: &Volumes, t: f64) -> Volumes {
    let ([p_la, p_lv, p_ra, p_rv], [p_sa, p_sv, p_pa, p_pv]) = pressures(p, v, t);
    let q_mv = valve(p_la - p_lv);
    let q_av = valve(p_lv - p_sa);
    let q_sys = (p_sa - p_sv) / p.r_sys;
    let q_ven_sys = (p_sv - p_ra) / p.r_ven_sys;
    let q_tv = valve(p_ra - p_rv);
    let q_pv = valve(p_rv - p_pa);
    let q_pul = (p_pa - p_pv) / p.r_pulm;
    let q_ven_pul = (p_pv - p_la) / p.r_ven_pulm;
    [
        q_ven_pul - q_mv,
        q_mv - q_av,
        q_ven_sys - q_tv,
        q_tv - q_pv,
        q_av - q_sys,
        q_sys - q_ven_sys,
        q_pv - q_pul,
        q_pul - q_ven_pul,
    ]
}

fn rk4_step(p: &CirculationParams, v: &Volumes, t: f64, h: f64) -> Volumes {
    let add = |a: &Volumes, b: &Volumes, s: f64| -> Volumes {
        let mut out = *a;
        for i in 0..8 {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = rhs(p, v, t);
    let k2 = rhs(p, &add(v, &k1, 0.5 * h), t + 0.5 * h);
    let k3 = rhs(p, &add(v, &k2, 0.5 * h), t + 0.5 * h);
    let k4 = rhs(p, &add(v, &k3, h), t + h);
    let mut out = *v;
    for i in 0..8 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Steady-state starting volumes: a nominal run of 30 beats.
pub fn nominal_initial_volumes() -> Volumes {
    static CACHE: std::sync::OnceLock<Volumes> = std::sync::OnceLock::new();
    *CACHE.get_or_init(|| {
        let p = CirculationParams::default();
        let mut v: Volumes = [60.0, 110.0, 60.0, 120.0, 100.0, 120.0, 100.0, 130.0];
        for _ in 0..30 {
            v = run_beat(&p, &v, None).0;
        }
        v
    })
}

/// Integrates one beat, returning the end state and, when `record` is given,
/// the dense internal-grid samples of `(t, volumes)`.
fn run_beat(p: &CirculationParams, v0: &Volumes, mut record: Option<&mut Vec<(f64, Volumes)>>) -> (Volumes, f64) {
    let n = (p.t_hb / GENERATOR_DT).ceil() as usize;
    let h = p.t_hb / n as f64;
    let mut v = *v0;
    let mut stroke_lo = v[1];
    let mut stroke_hi = v[1];
    if let Some(rec) = record.as_deref_mut() {
        rec.push((0.0, v));
    }
    for k in 0..n {
        let t = k as f64 * h;
        v = rk4_step(p, &v, t, h);
        stroke_lo = stroke_lo.min(v[1]);
        stroke_hi = stroke_hi.max(v[1]);
        if let Some(rec) = record.as_deref_mut() {
            rec.push(((k + 1) as f64 * h, v));
        }
    }
    (v, stroke_hi - stroke_lo)
}

/// Result of a multi-beat generator run.
#[derive(Debug, Clone)]
pub struct CirculationRun {
    /// Last beat on the requested grid, 8 physical columns.
    pub trajectory: Trajectory,
    /// All eight compartment volumes on the same grid.
    pub volumes: Vec<Volumes>,
    pub stroke_volumes: Vec<f64>,
    pub warning: Option<String>,
}

/// Simulates `n_beats` heartbeats and returns the last one resampled onto
/// the grid of `ctx` (whose `t_hb` and `av_delay` must match the parameters).
pub fn simulate_circulation(p: &CirculationParams, ctx: &CycleContext, n_beats: usize) -> Result<CirculationRun> {
    ctx.validate()?;
    if n_beats == 0 {
        return Err(Error::Config("n_beats must be >= 1".into()));
    }
    if (ctx.t_hb - p.t_hb).abs() > 1e-12 || (ctx.av_delay - p.av_delay).abs() > 1e-12 {
        return Err(Error::Config(
            "cycle context disagrees with generator T_HB / AV_delay".into(),
        ));
    }
    let mut v = nominal_initial_volumes();
    let mut strokes = Vec::with_capacity(n_beats);
    let mut dense = Vec::new();
    for beat in 0..n_beats {
        let last = beat + 1 == n_beats;
        let (end, sv) = run_beat(p, &v, if last { Some(&mut dense) } else { None });
        if end.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: beat });
        }
        strokes.push(sv);
        v = end;
    }
    let warning = if n_beats >= 2 {
        let (a, b) = (strokes[n_beats - 2], strokes[n_beats - 1]);
        let drift = (b - a).abs() / a.abs().max(1e-12);
        (drift > 0.1).then(|| format!("stroke volume drift {:.1}% between the last two beats", 100.0 * drift))
    } else {
        None
    };

    let h = dense[1].0 - dense[0].0;
    let times = ctx.grid();
    let mut states = Vec::with_capacity(times.len());
    let mut volumes = Vec::with_capacity(times.len());
    for &t in &times {
        let x = (t / h).min((dense.len() - 1) as f64);
        let k = (x.floor() as usize).min(dense.len() - 2);
        let w = x - k as f64;
        let mut vol = [0.0; 8];
        for i in 0..8 {
            vol[i] = dense[k].1[i] + w * (dense[k + 1].1[i] - dense[k].1[i]);
        }
        let (pc, _) = pressures(p, &vol, t);
        states.push(vec![pc[0], pc[1], pc[2], pc[3], vol[0], vol[1], vol[2], vol[3]]);
        volumes.push(vol);
    }
    Ok(CirculationRun {
        trajectory: Trajectory {
            context: *ctx,
            times,
            states,
        },
        volumes,
        stroke_volumes: strokes,
        warning,
    })
}
