use cardio_lnode::refmodel::analytic::ExponentialFamily;
use cardio_lnode::refmodel::{Dataset, Split};
use cardio_lnode::training::{
    evaluate, hyper_search, predict, train, train_observed, HyperConfig, HyperRanges, Phase, TrainSchedule,
};
use cardio_lnode::{CycleContext, Trajectory};

fn family_data(n: usize) -> Dataset {
    let ctx = CycleContext::new(0.854, 0.0, 1e-3).unwrap();
    ExponentialFamily::default().dataset(n, &ctx, 5).unwrap()
}

fn small_hyper() -> HyperConfig {
    HyperConfig {
        layers: 1,
        neurons: 8,
        num_states: 8,
        dt_ref: 0.02,
        iota: 1e-4,
    }
}

fn schedule(adam: usize, bfgs: usize) -> TrainSchedule {
    TrainSchedule {
        adam_iters: adam,
        bfgs_iters: bfgs,
        ..TrainSchedule::default()
    }
}

#[test]
fn exponential_family_is_learned() {
    let data = family_data(50);
    let (model, _) = train(&data, &small_hyper(), &schedule(200, 500), 1).unwrap();
    let test = data.split(Split::Test);
    assert_eq!(test.len(), 10);
    let report = evaluate(&model, &test.samples, 1e-3).unwrap();
    assert!(report.max_nrmse() <= 0.02, "NRMSE {:?}", report.nrmse);
}

#[test]
fn same_seed_same_weights() {
    let data = family_data(20);
    let run = || train(&data, &small_hyper(), &schedule(20, 20), 7).unwrap().0;
    let (a, b) = (run(), run());
    let bits = |m: &cardio_lnode::LnodeModel| m.ann.as_flat().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.latent_ic, b.latent_ic);
    let c = train(&data, &small_hyper(), &schedule(20, 20), 8).unwrap().0;
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn bfgs_never_increases_training_loss() {
    let data = family_data(20);
    let mut history = Vec::new();
    train_observed(&data, &small_hyper(), &schedule(30, 60), 2, &mut |h| {
        history.push(h.clone())
    })
    .unwrap();
    let bfgs: Vec<f64> = history
        .iter()
        .filter(|h| h.phase == Phase::Bfgs)
        .map(|h| h.train_loss)
        .collect();
    assert!(bfgs.len() > 10);
    for w in bfgs.windows(2) {
        assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn search_with_budget_one_trains_once_at_full_budget() {
    let data = family_data(10);
    let r = hyper_search(&HyperRanges::default(), 1, &data, &schedule(4, 4), 2, 3).unwrap();
    assert_eq!(r.trials.len(), 1);
    assert!(r.trials.iter().all(|t| t.rung == 1.0 && t.id == 0));
    assert!(HyperRanges::default().contains(&r.best));
}

#[test]
fn collapsed_search_space_returns_its_point() {
    let data = family_data(10);
    let h = small_hyper();
    let ranges = HyperRanges {
        layers: (h.layers, h.layers),
        neurons: (h.neurons, h.neurons),
        num_states: (h.num_states, h.num_states),
        dt_ref: (h.dt_ref, h.dt_ref),
        iota: (h.iota, h.iota),
    };
    let r = hyper_search(&ranges, 3, &data, &schedule(4, 4), 2, 5).unwrap();
    assert_eq!(r.best, h);
    assert!(r.best_score.is_finite());
}

#[test]
fn evaluation_matches_recomputation_from_csv() {
    let data = family_data(20);
    let (model, _) = train(&data, &small_hyper(), &schedule(30, 30), 4).unwrap();
    let test = data.split(Split::Test).samples;
    let report = evaluate(&model, &test, 1e-3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut preds = Vec::new();
    for s in &test {
        let path = dir.path().join(format!("pred_{}.csv", s.id));
        predict(&model, s, 1e-3).unwrap().save_csv(&path).unwrap();
        preds.push(Trajectory::load_csv(&path, s.av_delay).unwrap());
    }
    for j in 0..8 {
        let (mut se, mut n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
        let mut ss_tot_parts = Vec::new();
        for (s, p) in test.iter().zip(&preds) {
            for (a, b) in s.trajectory.states.iter().zip(&p.states) {
                se += (a[j] - b[j]).powi(2);
                n += 1;
                lo = lo.min(a[j]);
                hi = hi.max(a[j]);
                ss_tot_parts.push(a[j]);
            }
        }
        let nrmse = (se / n as f64).sqrt() / (hi - lo);
        let mean = ss_tot_parts.iter().sum::<f64>() / n as f64;
        let ss_tot: f64 = ss_tot_parts.iter().map(|x| (x - mean).powi(2)).sum();
        let r2 = 100.0 * (1.0 - se / ss_tot);
        assert!((nrmse - report.nrmse[j]).abs() <= 1e-12 * nrmse.max(1e-12), "trace {j}");
        assert!((r2 - report.r2[j]).abs() <= 1e-9, "trace {j}");
    }
}
