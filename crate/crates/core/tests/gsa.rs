use cardio_lnode::gsa::{extract_qois, qoi_labels, saltelli_sample, sobol_indices, N_QOI};
use cardio_lnode::refmodel::analytic::{brute_force_indices, AdditiveModel, Ishigami};
use cardio_lnode::{CycleContext, ParameterEntry, ParameterSpace, Trajectory};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("y{i}")).collect()
}

#[test]
fn additive_model_indices() {
    let m = AdditiveModel::new(vec![1.0, 2.0, 3.0]);
    let d = saltelli_sample(&m.space(), 4096, 11).unwrap();
    let evals = d.evaluate(|x| Ok(vec![m.eval(x)])).unwrap();
    let r = sobol_indices(&d, &evals, &names(1), 200, 1).unwrap();
    let exact = m.indices();
    for i in 0..3 {
        assert!((r.s1[i][0] - exact[i]).abs() <= 0.02, "S1 {i}: {}", r.s1[i][0]);
        assert!((r.st[i][0] - exact[i]).abs() <= 0.02, "ST {i}: {}", r.st[i][0]);
        assert!((r.st[i][0] - r.s1[i][0]).abs() <= 0.02);
        assert!(r.s1_lo[i][0] <= r.s1[i][0] && r.s1[i][0] <= r.s1_hi[i][0]);
    }
}

#[test]
fn null_parameter_has_zero_indices() {
    let space = ParameterSpace::new(vec![
        ParameterEntry::new("a", "-", 0.0, 1.0),
        ParameterEntry::new("b", "-", 0.0, 1.0),
        ParameterEntry::new("unused", "-", 0.0, 1.0),
    ])
    .unwrap();
    let d = saltelli_sample(&space, 4096, 2).unwrap();
    let evals = d.evaluate(|x| Ok(vec![x[0] * x[1] + x[0].exp()])).unwrap();
    let r = sobol_indices(&d, &evals, &names(1), 0, 0).unwrap();
    assert!(r.s1[2][0].abs() <= 0.02 && r.st[2][0].abs() <= 0.02);
}

#[test]
fn ishigami_against_brute_force_oracle() {
    let ish = Ishigami::default();
    let f = |x: &[f64]| ish.eval(x);
    let (bf_s1, bf_st) = brute_force_indices(&f, &ish.space(), 1000, 1000, 5);
    let d = saltelli_sample(&ish.space(), 8192, 4).unwrap();
    let evals = d.evaluate(|x| Ok(vec![ish.eval(x)])).unwrap();
    let r = sobol_indices(&d, &evals, &names(1), 0, 0).unwrap();
    for i in 0..3 {
        assert!(
            (r.s1[i][0] - bf_s1[i]).abs() <= 0.03,
            "S1 {i}: {} vs {}",
            r.s1[i][0],
            bf_s1[i]
        );
        assert!(
            (r.st[i][0] - bf_st[i]).abs() <= 0.03,
            "ST {i}: {} vs {}",
            r.st[i][0],
            bf_st[i]
        );
    }
}

#[test]
fn bootstrap_intervals_shrink_with_sample_size() {
    let m = AdditiveModel::new(vec![1.0, 2.0, 3.0]);
    let width = |n: usize| {
        let d = saltelli_sample(&m.space(), n, 7).unwrap();
        let evals = d.evaluate(|x| Ok(vec![m.eval(x)])).unwrap();
        let r = sobol_indices(&d, &evals, &names(1), 1000, 3).unwrap();
        (0..3).map(|i| r.st_hi[i][0] - r.st_lo[i][0]).sum::<f64>()
    };
    let ratio = width(2048) / width(4096);
    assert!((1.2..=2.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn indices_are_reproducible() {
    let ish = Ishigami::default();
    let run = || {
        let d = saltelli_sample(&ish.space(), 256, 9).unwrap();
        let evals = d.evaluate(|x| Ok(vec![ish.eval(x), x[0]])).unwrap();
        sobol_indices(&d, &evals, &names(2), 100, 9).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn qois_survive_csv_round_trip() {
    let ctx = CycleContext::new(0.854, 0.15, 1e-3).unwrap();
    let times = ctx.grid();
    let states: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            (0..8)
                .map(|j| (j as f64 + 1.0) * (7.0 * t + j as f64).sin() + 0.1 * t)
                .collect()
        })
        .collect();
    let traj = Trajectory {
        context: ctx,
        times,
        states,
    };
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(&buf[..], 0.15).unwrap();
    let q = extract_qois(&traj).unwrap();
    assert_eq!(q, extract_qois(&back).unwrap());
    assert_eq!(q.len(), N_QOI);
    assert_eq!(qoi_labels().len(), N_QOI);
    for pair in q.chunks(2) {
        assert!(pair[0] >= pair[1]);
    }
}
