use std::collections::BTreeMap;
use std::hint::black_box;

use cardio_lnode::calibration::{nuts_sample, CalibrationProblem, FreeParameter, NutsConfig, ProblemSetup};
use cardio_lnode::gsa::{saltelli_sample, sobol_indices};
use cardio_lnode::refmodel::analytic::Ishigami;
use cardio_lnode::refmodel::benchmark_space;
use cardio_lnode::{AnnArchitecture, AnnWeights, CycleContext, LnodeModel, StateNormalization};
use criterion::{criterion_group, criterion_main, Criterion};

fn model() -> LnodeModel {
    let ic = vec![8.0, 6.0, 4.0, 3.0, 70.0, 120.0, 65.0, 130.0];
    let mut norm = StateNormalization::identity(16);
    for j in 0..8 {
        norm.center[j] = ic[j];
        norm.scale[j] = 0.3 * ic[j];
    }
    LnodeModel::new(benchmark_space(), 16, 3, 13, norm, ic, 1).unwrap()
}

fn ann(c: &mut Criterion) {
    let w = AnnWeights::init_glorot(AnnArchitecture::new(53, 3, 13, 8), 0).unwrap();
    let x: Vec<f64> = (0..53).map(|i| (i as f64 * 0.37).sin()).collect();
    let cot = vec![1.0; 8];
    c.bench_function("ann forward 53-3x13-8", |b| {
        b.iter(|| w.forward(black_box(&x)).unwrap())
    });
    c.bench_function("ann vjp 53-3x13-8", |b| b.iter(|| w.vjp(black_box(&x), &cot).unwrap()));
}

fn beat(c: &mut Criterion) {
    let m = model();
    let ctx = CycleContext::new(0.854, 0.15, 1e-3).unwrap();
    let z0 = m.initial_state_from(&m.reference_ic).unwrap();
    let theta = m.space.midpoint();
    c.bench_function("lnode one beat", |b| {
        b.iter(|| m.integrate(&z0, black_box(&theta), &ctx).unwrap())
    });

    let obs = m.integrate(&z0, &theta, &ctx).unwrap();
    let free = ["Emax_LV", "R_sys"];
    let setup = ProblemSetup {
        weights: [("V_LV".to_string(), 1.0), ("p_LV".to_string(), 1.0)]
            .into_iter()
            .collect(),
        free: free
            .iter()
            .map(|n| {
                let e = &m.space.entries()[m.space.index_of(n).unwrap()];
                FreeParameter::new(n, e.lower, e.upper)
            })
            .collect(),
        fixed: m
            .space
            .entries()
            .iter()
            .filter(|e| !free.contains(&e.name.as_str()))
            .map(|e| (e.name.clone(), e.midpoint()))
            .collect::<BTreeMap<_, _>>(),
        initial_state: None,
    };
    let prob = CalibrationProblem::new(&m, &obs, &setup, 1e-3).unwrap();
    let x = vec![2.4, 1.1];
    c.bench_function("calibration cost + adjoint", |b| {
        b.iter(|| prob.cost_gradient(&m, black_box(&x)).unwrap())
    });
}

fn sobol(c: &mut Criterion) {
    let ish = Ishigami::default();
    let d = saltelli_sample(&ish.space(), 4096, 0).unwrap();
    let evals = d.evaluate(|x| Ok(vec![ish.eval(x)])).unwrap();
    let labels = ["y".to_string()];
    c.bench_function("sobol indices N=4096", |b| {
        b.iter(|| sobol_indices(&d, black_box(&evals), &labels, 0, 0).unwrap())
    });
}

fn nuts(c: &mut Criterion) {
    let cfg = NutsConfig {
        iters: 300,
        burn_in: 100,
        ..NutsConfig::default()
    };
    let target = |x: &[f64]| -> cardio_lnode::Result<(f64, Vec<f64>)> {
        Ok((
            -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            x.iter().map(|v| -v).collect(),
        ))
    };
    let mut group = c.benchmark_group("nuts");
    group.sample_size(10);
    group.bench_function("4-d normal, 300 iterations", |b| {
        b.iter(|| nuts_sample(target, &[0.0; 4], &cfg, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, ann, beat, sobol, nuts);
criterion_main!(benches);
