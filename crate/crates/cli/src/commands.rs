use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cardio_lnode::calibration::{
    fit_gp_error, map_estimate, residual_traces, sample_posterior, CalibrationProblem, GpErrorModel, MapConfig,
    MapResult, NutsConfig, Posterior, PriorBox, ProblemFile, PRIOR_HALF_WIDTH,
};
use cardio_lnode::gsa::{lnode_qois, qoi_labels, saltelli_sample, saltelli_size, sobol_indices, SobolResult, CHAMBERS};
use cardio_lnode::optim::LbfgsConfig;
use cardio_lnode::refmodel::{
    benchmark_space, full_space, generate_dataset, CirculationParams, Dataset, GeneratorConfig, Split,
};
use cardio_lnode::training::{
    cross_validate, evaluate, hyper_search, predict, train, FitReport, HyperConfig, HyperRanges, TrainSchedule,
};
use cardio_lnode::{Checkpoint, CycleContext, LnodeModel, ParameterSpace, TrainingSample, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{snapshot, RunConfig};
use crate::failure::{Failure, InputContext};
use crate::plot;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::compute(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| Failure::compute(format!("cannot write {}: {e}", path.display())))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::config(format!("missing input: pass {flag} <PATH>")))
}

fn load_checkpoint(path: &Option<PathBuf>) -> Result<Checkpoint, Failure> {
    let p = required(path, "--model")?;
    Checkpoint::load(p).input(&format!("checkpoint {}", p.display()))
}

fn load_dataset(path: &Option<PathBuf>) -> Result<Dataset, Failure> {
    let p = required(path, "--data")?;
    Dataset::read(p).input(&format!("dataset {}", p.display()))
}

/// Samples of the named split; `all` keeps everything.
fn split_samples(ds: &Dataset, split: &str) -> Result<Vec<TrainingSample>, Failure> {
    let s = match split {
        "all" => ds.samples.clone(),
        "train" => ds.split(Split::Train).samples,
        "test" => ds.split(Split::Test).samples,
        other => return Err(Failure::config(format!("unknown split `{other}` (train, test or all)"))),
    };
    if s.is_empty() {
        return Err(Failure::config(format!("dataset has no `{split}` samples")));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenData {
    pub n: usize,
    pub n_test: usize,
    /// `benchmark` (5 parameters) or `full` (10 parameters).
    pub space: String,
    pub n_beats: usize,
    pub output_dt: f64,
}

impl Default for GenData {
    fn default() -> Self {
        Self {
            n: 405,
            n_test: 5,
            space: "benchmark".into(),
            n_beats: 5,
            output_dt: 1e-3,
        }
    }
}

fn named_space(name: &str) -> Result<ParameterSpace, Failure> {
    match name {
        "benchmark" => Ok(benchmark_space()),
        "full" => Ok(full_space()),
        other => Err(Failure::config(format!("unknown space `{other}` (benchmark or full)"))),
    }
}

pub fn gen_data(cfg: &RunConfig<GenData>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    let space = named_space(&s.space)?;
    snapshot(cfg, out)?;
    let gen = GeneratorConfig {
        n_samples: s.n,
        n_test: s.n_test,
        seed: cfg.seed,
        output_dt: s.output_dt,
        n_beats: s.n_beats,
    };
    let ds = generate_dataset(&space, &gen)?;
    ds.write(out)?;
    let warned = ds.samples.iter().filter(|x| x.warning.is_some()).count();
    eprintln!(
        "wrote {} samples to {} ({warned} with warnings)",
        ds.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Search {
    pub budget: usize,
    pub ranges: HyperRanges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Train {
    pub data: Option<PathBuf>,
    pub hyper: HyperConfig,
    pub schedule: TrainSchedule,
    /// Folds for cross-validation; also used by the search.
    pub kfold: Option<usize>,
    pub search: Option<Search>,
}

impl Default for Train {
    fn default() -> Self {
        Self {
            data: None,
            hyper: HyperConfig::default(),
            schedule: TrainSchedule::default(),
            kfold: None,
            search: None,
        }
    }
}

pub fn train_cmd(cfg: &RunConfig<Train>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    let ds = load_dataset(&s.data)?;
    s.schedule.validate()?;
    if s.kfold.is_some_and(|k| k < 2) {
        return Err(Failure::config("kfold must be >= 2"));
    }
    snapshot(cfg, out)?;
    let pool = {
        let train = ds.split(Split::Train);
        if train.is_empty() {
            ds.clone()
        } else {
            train
        }
    };
    let mut hyper = s.hyper.clone();
    if let Some(search) = &s.search {
        let k = s.kfold.unwrap_or(10);
        let r = hyper_search(&search.ranges, search.budget, &pool, &s.schedule, k, cfg.seed)?;
        eprintln!("search: best score {:.6e} with {:?}", r.best_score, r.best);
        write_json(&out.join("search.json"), &r)?;
        hyper = r.best;
    } else if let Some(k) = s.kfold {
        let cv = cross_validate(&pool, &hyper, &s.schedule, k, cfg.seed)?;
        eprintln!("{k}-fold validation loss {:.6e}", cv.mean_loss);
        write_json(&out.join("cv.json"), &cv)?;
    }
    let (model, mut report) = train(&ds, &hyper, &s.schedule, cfg.seed)?;
    std::fs::write(out.join("history.csv"), report.history_csv())?;
    report.history.clear();
    Checkpoint::new(model, s.schedule.dt).save(&out.join("checkpoint.json"))?;
    write_json(&out.join("report.json"), &report)?;
    eprintln!(
        "{} metrics: max NRMSE {:.4}, min R2 {:.2}%",
        report.split,
        report.max_nrmse(),
        report.min_r2()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eval {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            split: "test".into(),
        }
    }
}

pub fn eval_cmd(cfg: &RunConfig<Eval>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    let ck = load_checkpoint(&s.model)?;
    let ds = load_dataset(&s.data)?;
    let samples = split_samples(&ds, &s.split)?;
    snapshot(cfg, out)?;
    let mut report: FitReport = evaluate(&ck.model, &samples, ck.dt)?;
    report.split = s.split.clone();
    std::fs::create_dir_all(out.join("predictions"))?;
    for sample in &samples {
        let traj = predict(&ck.model, sample, ck.dt)?;
        traj.save_csv(&out.join(format!("predictions/pred_{:05}.csv", sample.id)))?;
    }
    write_json(&out.join("eval.json"), &report)?;
    eprintln!("max NRMSE {:.4}, min R2 {:.2}%", report.max_nrmse(), report.min_r2());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gsa {
    pub model: Option<PathBuf>,
    /// Saltelli base sample size.
    pub n: usize,
    pub bootstrap: usize,
    /// Physical initial state; the model's reference state when absent.
    pub initial_state: Option<Vec<f64>>,
    /// Report the design size without evaluating it.
    pub plan_only: bool,
    /// Parameter count for a plan without a model.
    pub n_params: Option<usize>,
}

impl Default for Gsa {
    fn default() -> Self {
        Self {
            model: None,
            n: 8000,
            bootstrap: 1000,
            initial_state: None,
            plan_only: false,
            n_params: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct GsaPlan<'a> {
    n: usize,
    n_params: usize,
    evaluations: usize,
    parameters: Vec<&'a str>,
}

#[derive(Debug, Serialize)]
struct GsaReport<'a> {
    plan: GsaPlan<'a>,
    row_order: Vec<String>,
    degenerate_qois: Vec<String>,
}

/// Parameter indices grouped atria, ventricles, whole heart, circulation.
pub fn parameter_groups(names: &[String]) -> Vec<Vec<usize>> {
    let group = |n: &str| {
        if n.ends_with("_LA") || n.ends_with("_RA") {
            0
        } else if n.ends_with("_LV") || n.ends_with("_RV") {
            1
        } else if n == "T_HB" || n == "AV_delay" {
            2
        } else {
            3
        }
    };
    let mut groups = vec![Vec::new(); 4];
    for (i, n) in names.iter().enumerate() {
        groups[group(n)].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

pub fn index_heatmap(parameters: &[String], values: &[Vec<f64>]) -> plot::Canvas {
    let groups = parameter_groups(parameters);
    let rows: Vec<Vec<f64>> = groups.iter().flatten().map(|&i| values[i].clone()).collect();
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    plot::heatmap(&rows, &sizes, 2 * CHAMBERS.len())
}

fn cycle_context(space: &ParameterSpace, theta: &[f64], dt: f64) -> cardio_lnode::Result<CycleContext> {
    let p = CirculationParams::from_space(space, theta)?;
    CycleContext::new(p.t_hb, p.av_delay, dt)
}

pub fn gsa_cmd(cfg: &RunConfig<Gsa>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    if s.n < 2 {
        return Err(Failure::config("n must be >= 2"));
    }
    if s.plan_only && s.model.is_none() {
        let Some(p) = s.n_params else {
            return Err(Failure::config("a plan without --model needs n_params"));
        };
        snapshot(cfg, out)?;
        let plan = GsaPlan {
            n: s.n,
            n_params: p,
            evaluations: saltelli_size(s.n, p),
            parameters: Vec::new(),
        };
        eprintln!(
            "{} evaluations for N = {}, {} parameters",
            plan.evaluations, plan.n, plan.n_params
        );
        return write_json(&out.join("gsa.json"), &plan);
    }
    let ck = load_checkpoint(&s.model)?;
    let space = ck.model.space.clone();
    snapshot(cfg, out)?;
    let names = space.names();
    let plan = GsaPlan {
        n: s.n,
        n_params: names.len(),
        evaluations: saltelli_size(s.n, names.len()),
        parameters: names.clone(),
    };
    eprintln!(
        "{} evaluations for N = {}, {} parameters",
        plan.evaluations, plan.n, plan.n_params
    );
    if s.plan_only {
        return write_json(&out.join("gsa.json"), &plan);
    }
    let model: &LnodeModel = &ck.model;
    let ic = s.initial_state.clone().unwrap_or_else(|| model.reference_ic.clone());
    if ic.len() != cardio_lnode::lnode::PHYSICAL_STATES {
        return Err(Failure::config("initial_state needs 8 values"));
    }
    let design = saltelli_sample(&space, s.n, cfg.seed)?;
    let evals = design.evaluate(|x| lnode_qois(model, &ic, x, &cycle_context(&space, x, ck.dt)?))?;
    let r: SobolResult = sobol_indices(&design, &evals, &qoi_labels(), s.bootstrap, cfg.seed)?;
    std::fs::write(out.join("s1.csv"), r.to_csv(false))?;
    std::fs::write(out.join("st.csv"), r.to_csv(true))?;
    index_heatmap(&r.parameters, &r.s1).save(&out.join("s1.png"))?;
    index_heatmap(&r.parameters, &r.st).save(&out.join("st.png"))?;
    let report = GsaReport {
        row_order: parameter_groups(&r.parameters)
            .iter()
            .flatten()
            .map(|&i| r.parameters[i].clone())
            .collect(),
        degenerate_qois: r
            .qois
            .iter()
            .zip(&r.degenerate)
            .filter(|(_, d)| **d)
            .map(|(q, _)| q.clone())
            .collect(),
        plan,
    };
    write_json(&out.join("gsa.json"), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Map {
    pub model: Option<PathBuf>,
    pub problem: Option<PathBuf>,
    /// Start point; the middle of the free box when absent.
    pub theta_init: Option<Vec<f64>>,
    pub starts: usize,
    pub lbfgs: LbfgsConfig,
}

impl Default for Map {
    fn default() -> Self {
        let d = MapConfig::default();
        Self {
            model: None,
            problem: None,
            theta_init: None,
            starts: d.starts,
            lbfgs: d.lbfgs,
        }
    }
}

fn load_problem(path: &Option<PathBuf>, ck: &Checkpoint) -> Result<CalibrationProblem, Failure> {
    let p = required(path, "--problem")?;
    let file = ProblemFile::load(p).input(&format!("problem {}", p.display()))?;
    file.build(&ck.model, ck.dt).input(&format!("problem {}", p.display()))
}

fn run_map(seed: u64, s: &Map, ck: &Checkpoint, prob: &CalibrationProblem) -> Result<MapResult, Failure> {
    let init = match &s.theta_init {
        Some(t) => t.clone(),
        None => prob
            .lower()
            .iter()
            .zip(prob.upper())
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    };
    if !prob.contains(&init) {
        return Err(Failure::config(
            "theta_init must have one value per free parameter inside its bounds",
        ));
    }
    let mc = MapConfig {
        starts: s.starts,
        seed,
        lbfgs: s.lbfgs.clone(),
    };
    let r = map_estimate(prob, &init, &ck.model, &mc)?;
    eprintln!("MAP cost {:.6e} (from {:.6e}) at {:?}", r.cost, r.initial_cost, r.theta);
    Ok(r)
}

pub fn map_cmd(cfg: &RunConfig<Map>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    let ck = load_checkpoint(&s.model)?;
    let prob = load_problem(&s.problem, &ck)?;
    if s.starts == 0 {
        return Err(Failure::config("starts must be >= 1"));
    }
    snapshot(cfg, out)?;
    let r = run_map(cfg.seed, s, &ck, &prob)?;
    write_json(&out.join("map.json"), &r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hmc {
    #[serde(flatten)]
    pub map: Map,
    /// Existing `map.json`; the MAP is computed first when absent.
    pub map_result: Option<PathBuf>,
    /// Fitted error model (`gp.json`).
    pub gp: Option<PathBuf>,
    /// Dataset whose test samples give the surrogate residuals when no
    /// error model is supplied.
    pub residuals: Option<PathBuf>,
    /// Half-width of the prior box relative to the MAP values.
    pub chi: f64,
    pub nuts: NutsConfig,
}

impl Default for Hmc {
    fn default() -> Self {
        Self {
            map: Map::default(),
            map_result: None,
            gp: None,
            residuals: None,
            chi: PRIOR_HALF_WIDTH,
            nuts: NutsConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct HmcSummary<'a> {
    #[serde(flatten)]
    posterior: cardio_lnode::calibration::PosteriorSummary,
    prior_lower: &'a [f64],
    prior_upper: &'a [f64],
    /// Every `gp_stride`-th grid point enters the likelihood.
    gp_stride: usize,
    gp_points: usize,
}

pub fn hmc_cmd(cfg: &RunConfig<Hmc>) -> Result<(), Failure> {
    let out = cfg.out_dir()?;
    let s = &cfg.settings;
    let ck = load_checkpoint(&s.map.model)?;
    let prob = load_problem(&s.map.problem, &ck)?;
    s.nuts.validate()?;
    if !(s.chi > 0.0) {
        return Err(Failure::config("chi must be positive"));
    }
    let gp: GpErrorModel = match (&s.gp, &s.residuals) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).input(&format!("error model {}", p.display()))?;
            serde_json::from_str(&text).input(&format!("error model {}", p.display()))?
        }
        (None, Some(_)) => {
            let ds = load_dataset(&s.residuals)?;
            let test = ds.split(Split::Test);
            let samples = if test.is_empty() { ds.samples } else { test.samples };
            fit_gp_error(&residual_traces(&ck.model, &samples, ck.dt)?)?
        }
        (None, None) => {
            return Err(Failure::config(
                "missing error model: pass --gp <FILE> or --residuals <DATA>",
            ))
        }
    };
    let prior_map: Option<MapResult> = match &s.map_result {
        Some(p) => {
            let text = std::fs::read_to_string(p).input(&format!("MAP result {}", p.display()))?;
            Some(serde_json::from_str(&text).input(&format!("MAP result {}", p.display()))?)
        }
        None => None,
    };
    snapshot(cfg, out)?;
    write_json(&out.join("gp.json"), &gp)?;
    let map = match prior_map {
        Some(m) => {
            if m.names != prob.free_names() {
                return Err(Failure::config(
                    "MAP result does not match the problem's free parameters",
                ));
            }
            m
        }
        None => {
            let m = run_map(cfg.seed, &s.map, &ck, &prob)?;
            write_json(&out.join("map.json"), &m)?;
            m
        }
    };
    let prior = PriorBox::around(&map.theta, s.chi, &prob)?;
    let post = Posterior::new(&ck.model, &prob, &gp, prior)?;
    let chain = sample_posterior(&post, &map.theta, &s.nuts, cfg.seed)?;
    let mut csv = Vec::new();
    chain.write_csv(&mut csv)?;
    std::fs::write(out.join("chain.csv"), csv)?;
    let summary = HmcSummary {
        posterior: chain.summary(),
        prior_lower: &post.prior.lower,
        prior_upper: &post.prior.upper,
        gp_stride: post.stride,
        gp_points: post.indices.len(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    plot::corner(&chain.draws, Some(&map.theta)).save(&out.join("corner.png"))?;
    eprintln!(
        "{} draws, {} divergences, R-hat {:?}",
        chain.draws.len(),
        chain.divergences,
        chain.rhat
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    /// Run directory to summarize.
    pub run: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize)]
struct ReportIndex {
    artifacts: Vec<String>,
    figures: Vec<String>,
    highlights: BTreeMap<String, serde_json::Value>,
}

fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), Failure> {
    let text = std::fs::read_to_string(path).input(&path.display().to_string())?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn number(s: &str, path: &Path) -> Result<f64, Failure> {
    s.parse()
        .map_err(|_| Failure::config(format!("{}: `{s}` is not a number", path.display())))
}

fn read_json(path: &Path) -> Result<serde_json::Value, Failure> {
    let text = std::fs::read_to_string(path).input(&path.display().to_string())?;
    serde_json::from_str(&text).input(&path.display().to_string())
}

pub fn report_cmd(cfg: &RunConfig<Report>) -> Result<(), Failure> {
    let out = cfg.out_dir()?.to_path_buf();
    let run = required(&cfg.settings.run, "--run")?.to_path_buf();
    if !run.is_dir() {
        return Err(Failure::config(format!(
            "run directory {} does not exist",
            run.display()
        )));
    }
    if out.canonicalize().ok() == Some(run.canonicalize()?) {
        return Err(Failure::config("--out must differ from --run"));
    }
    let mut idx = ReportIndex::default();
    let mut names: Vec<String> = std::fs::read_dir(&run)
        .input(&run.display().to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    idx.artifacts = names.clone();
    let has = |n: &str| names.iter().any(|x| x == n);
    snapshot(cfg, &out)?;
    let figure = |name: &str, c: plot::Canvas, idx: &mut ReportIndex| -> Result<(), Failure> {
        c.save(&out.join(name))?;
        idx.figures.push(name.to_string());
        Ok(())
    };

    if has("history.csv") {
        let path = run.join("history.csv");
        let (_, rows) = read_csv_table(&path)?;
        let (mut it, mut tr, mut vi, mut vit) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in &rows {
            let i = number(&r[0], &path)?;
            it.push(i);
            tr.push(number(&r[2], &path)?);
            if let Some(v) = r.get(3).filter(|v| !v.is_empty()) {
                vit.push(i);
                vi.push(number(v, &path)?);
            }
        }
        figure(
            "loss.png",
            plot::lines(&[(it, tr.clone()), (vit, vi.clone())], true),
            &mut idx,
        )?;
        if let Some(last) = tr.last() {
            idx.highlights.insert("final_train_loss".into(), (*last).into());
        }
        if let Some(best) = vi.iter().cloned().reduce(f64::min) {
            idx.highlights.insert("best_valid_loss".into(), best.into());
        }
    }
    for name in ["report.json", "eval.json"] {
        if has(name) {
            let v = read_json(&run.join(name))?;
            let fit: FitReport = serde_json::from_value(v).input(name)?;
            let key = name.trim_end_matches(".json");
            idx.highlights
                .insert(format!("{key}_max_nrmse"), fit.max_nrmse().into());
            idx.highlights.insert(format!("{key}_min_r2"), fit.min_r2().into());
        }
    }
    for (csv, png) in [("s1.csv", "s1.png"), ("st.csv", "st.png")] {
        if has(csv) {
            let path = run.join(csv);
            let (header, rows) = read_csv_table(&path)?;
            let n_q = header
                .iter()
                .skip(1)
                .filter(|h| !h.ends_with("_lo") && !h.ends_with("_hi"))
                .count();
            let params: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
            let values = rows
                .iter()
                .map(|r| {
                    r[1..=n_q]
                        .iter()
                        .map(|v| number(v, &path))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            figure(png, index_heatmap(&params, &values), &mut idx)?;
        }
    }
    if has("map.json") {
        let v = read_json(&run.join("map.json"))?;
        idx.highlights.insert("map_cost".into(), v["cost"].clone());
        idx.highlights.insert("map_theta".into(), v["theta"].clone());
    }
    if has("summary.json") {
        let v = read_json(&run.join("summary.json"))?;
        for k in ["converged", "valid", "divergences"] {
            idx.highlights.insert(format!("posterior_{k}"), v[k].clone());
        }
    }
    if has("chain.csv") {
        let path = run.join("chain.csv");
        let (_, rows) = read_csv_table(&path)?;
        let draws = rows
            .iter()
            .map(|r| r.iter().map(|v| number(v, &path)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        figure("corner.png", plot::corner(&draws, None), &mut idx)?;
    }
    let pred_dir = run.join("predictions");
    if pred_dir.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&pred_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        let mut loops = Vec::new();
        for f in files.iter().take(plot::PALETTE.len()) {
            let t: Trajectory = Trajectory::load_csv(f, 0.0).input(&f.display().to_string())?;
            loops.push((0..4).map(|c| (t.trace(4 + c), t.trace(c))).collect::<Vec<_>>());
        }
        if !loops.is_empty() {
            figure("pv_loops.png", plot::pv_loops(&loops), &mut idx)?;
        }
    }
    if idx.figures.is_empty() && idx.highlights.is_empty() {
        return Err(Failure::config(format!("no known artifacts in {}", run.display())));
    }
    write_json(&out.join("overview.json"), &idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_follow_anatomy() {
        let names: Vec<String> = ["Emax_LV", "R_sys", "T_HB", "Emax_LA", "Emin_RV", "Emax_RA"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(parameter_groups(&names), vec![vec![3, 5], vec![0, 4], vec![2], vec![1]]);
    }
}
