use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cardio-lnode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Hashes of every file under `dir` except images, keyed by relative path.
fn digests(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.extension().is_none_or(|x| x != "png") {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let hash = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(rel, format!("{hash:x}"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Small dataset and a briefly trained checkpoint shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn model(&self) -> PathBuf {
        self.root.join("train/checkpoint.json")
    }
    fn problem(&self) -> PathBuf {
        self.root.join("problem.json")
    }
}

const TRAIN: &[&str] = &[
    "--layers",
    "1",
    "--neurons",
    "6",
    "--num-states",
    "8",
    "--adam-iters",
    "20",
    "--bfgs-iters",
    "20",
    "--seed",
    "3",
];

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "gen-data",
            "--n",
            "12",
            "--n-test",
            "2",
            "--seed",
            "1",
            "--n-beats",
            "2",
            "--out",
            p(&root.join("data")),
        ]);
        let (data, train) = (root.join("data"), root.join("train"));
        let mut args = vec!["train", "--data", p(&data), "--out", p(&train)];
        args.extend_from_slice(TRAIN);
        ok(&args);
        std::fs::write(
            root.join("problem.json"),
            r#"{
  "observed": "data/samples/sample_00011.csv",
  "av_delay": 0.15,
  "weights": {"V_LV": 1, "p_LV": 1},
  "free": [
    {"name": "Emax_LV", "lower": 1.5, "upper": 3.5},
    {"name": "R_sys", "lower": 0.7, "upper": 1.4}
  ],
  "fixed": {"Emin_LV": 0.085, "Emax_LA": 0.22, "R_pulm": 0.13}
}
"#,
        )
        .unwrap();
        Fixture { _dir: dir, root }
    })
}

/// Runs `args` twice into fresh directories and checks the numeric
/// artifacts agree byte for byte.
fn reproducible(name: &str, args: &[&str], expect: &[&str]) {
    let f = fixture();
    let outs: Vec<PathBuf> = (0..2).map(|i| f.root.join(format!("{name}_{i}"))).collect();
    for o in &outs {
        let mut a = args.to_vec();
        a.extend_from_slice(&["--out", p(o)]);
        ok(&a);
    }
    let (a, b) = (digests(&outs[0]), digests(&outs[1]));
    for e in expect {
        assert!(a.contains_key(*e), "{name}: missing {e} in {:?}", a.keys());
    }
    assert_eq!(a, b, "{name} artifacts differ between reruns");
}

#[test]
fn gen_data_is_reproducible() {
    reproducible(
        "gen",
        &["gen-data", "--n", "6", "--n-test", "1", "--n-beats", "2", "--seed", "4"],
        &["manifest.json", "config.json", "samples/sample_00005.csv"],
    );
}

#[test]
fn train_is_reproducible() {
    let f = fixture();
    let data = f.data();
    let mut args = vec!["train", "--data", p(&data)];
    args.extend_from_slice(TRAIN);
    reproducible(
        "train",
        &args,
        &["checkpoint.json", "history.csv", "report.json", "config.json"],
    );
}

#[test]
fn train_with_kfold_writes_cv_scores() {
    let f = fixture();
    let out = f.root.join("train_cv");
    ok(&[
        "train",
        "--data",
        p(&f.data()),
        "--kfold",
        "2",
        "--layers",
        "1",
        "--neurons",
        "5",
        "--adam-iters",
        "3",
        "--bfgs-iters",
        "3",
        "--out",
        p(&out),
    ]);
    let cv: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("cv.json")).unwrap()).unwrap();
    assert_eq!(cv["fold_losses"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_is_reproducible() {
    let f = fixture();
    reproducible(
        "eval",
        &["eval", "--model", p(&f.model()), "--data", p(&f.data())],
        &["eval.json", "predictions/pred_00010.csv", "predictions/pred_00011.csv"],
    );
}

#[test]
fn gsa_is_reproducible_and_sized() {
    let f = fixture();
    reproducible(
        "gsa",
        &["gsa", "--model", p(&f.model()), "--n", "16", "--bootstrap", "20"],
        &["s1.csv", "st.csv", "gsa.json"],
    );
    let g: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.root.join("gsa_0/gsa.json")).unwrap()).unwrap();
    assert_eq!(g["plan"]["evaluations"], 16 * (2 * 5 + 2));
    assert!(f.root.join("gsa_0/s1.png").exists() && f.root.join("gsa_0/st.png").exists());
    let s1 = std::fs::read_to_string(f.root.join("gsa_0/s1.csv")).unwrap();
    assert_eq!(s1.lines().count(), 6);
    assert_eq!(s1.lines().next().unwrap().split(',').count(), 1 + 3 * 32);
}

#[test]
fn gsa_plan_reports_design_size() {
    let f = fixture();
    let out = f.root.join("plan");
    ok(&[
        "gsa",
        "--plan-only",
        "--n",
        "8000",
        "--n-params",
        "43",
        "--out",
        p(&out),
    ]);
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("gsa.json")).unwrap()).unwrap();
    assert_eq!(g["evaluations"], 704_000);
}

#[test]
fn map_is_reproducible() {
    let f = fixture();
    reproducible(
        "map",
        &[
            "map",
            "--model",
            p(&f.model()),
            "--problem",
            p(&f.problem()),
            "--starts",
            "2",
            "--seed",
            "5",
        ],
        &["map.json"],
    );
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.root.join("map_0/map.json")).unwrap()).unwrap();
    assert!(m["cost"].as_f64().unwrap() <= m["initial_cost"].as_f64().unwrap());
}

#[test]
fn hmc_is_reproducible_and_keeps_post_burn_in_draws() {
    let f = fixture();
    reproducible(
        "hmc",
        &[
            "hmc",
            "--model",
            p(&f.model()),
            "--problem",
            p(&f.problem()),
            "--residuals",
            p(&f.data()),
            "--starts",
            "1",
            "--iters",
            "150",
            "--burn",
            "50",
            "--seed",
            "2",
        ],
        &["chain.csv", "summary.json", "gp.json", "map.json"],
    );
    let chain = std::fs::read_to_string(f.root.join("hmc_0/chain.csv")).unwrap();
    assert_eq!(chain.lines().next().unwrap(), "Emax_LV,R_sys");
    assert_eq!(chain.lines().count(), 1 + 100);
    assert!(f.root.join("hmc_0/corner.png").exists());
}

#[test]
fn report_is_reproducible() {
    let f = fixture();
    reproducible(
        "report",
        &["report", "--run", p(&f.root.join("train"))],
        &["overview.json"],
    );
    assert!(f.root.join("report_0/loss.png").exists());
}

#[test]
fn flags_override_config_file_and_snapshot_is_written() {
    let f = fixture();
    let cfg = f.root.join("gen.json");
    std::fs::write(&cfg, r#"{"n": 5, "n_test": 1, "n_beats": 2, "seed": 9}"#).unwrap();
    let out = f.root.join("gen_cfg");
    ok(&["gen-data", "--config", p(&cfg), "--n", "3", "--out", p(&out)]);
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snap["n"], 3);
    assert_eq!(snap["seed"], 9);
    assert_eq!(snap["n_test"], 1);
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"n_samples\": 3"));
}

#[test]
fn missing_output_is_a_configuration_error() {
    let o = run(&["gen-data", "--n", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn bad_inputs_are_configuration_errors() {
    let f = fixture();
    let out = f.root.join("bad");
    let missing = f.root.join("nope");
    for args in [
        vec!["train", "--data", p(&missing), "--out", p(&out)],
        vec!["eval", "--model", p(&missing), "--data", p(&f.data()), "--out", p(&out)],
        vec!["map", "--model", p(&f.model()), "--out", p(&out)],
        vec!["gen-data", "--space", "tiny", "--out", p(&out)],
        vec![
            "hmc",
            "--model",
            p(&f.model()),
            "--problem",
            p(&f.problem()),
            "--out",
            p(&out),
        ],
        vec!["report", "--run", p(&missing), "--out", p(&out)],
    ] {
        let o = run(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let cfg = f.root.join("typo.json");
    std::fs::write(&cfg, r#"{"nn": 3}"#).unwrap();
    assert_eq!(
        run(&["gen-data", "--config", p(&cfg), "--out", p(&out)]).status.code(),
        Some(2)
    );
}

#[test]
fn diverging_model_is_a_computation_failure() {
    let f = fixture();
    let mut ck: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.model()).unwrap()).unwrap();
    for w in ck["weights"].as_array_mut().unwrap() {
        *w = serde_json::json!(w.as_f64().unwrap().signum() * 1e300);
    }
    let bad = f.root.join("bad_checkpoint.json");
    std::fs::write(&bad, serde_json::to_string(&ck).unwrap()).unwrap();
    let o = run(&[
        "eval",
        "--model",
        p(&bad),
        "--data",
        p(&f.data()),
        "--out",
        p(&f.root.join("diverged")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
