//! Command-line driver for the surrogate pipeline.

mod commands;
mod config;
mod failure;
mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::{resolve, Overrides, RunConfig};
use failure::Failure;

#[derive(Parser)]
#[command(
    name = "cardio-lnode",
    version,
    about = "Latent neural ODE surrogates of cardiac pressure-volume dynamics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file with settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training dataset with the reference circulation model.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
        /// Trailing samples tagged as test data.
        #[arg(long)]
        n_test: Option<usize>,
        /// `benchmark` or `full`.
        #[arg(long)]
        space: Option<String>,
        #[arg(long)]
        n_beats: Option<usize>,
        #[arg(long)]
        output_dt: Option<f64>,
    },
    /// Train a surrogate, optionally after cross-validation or a search.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kfold: Option<usize>,
        /// Number of sampled configurations for the hyperparameter search.
        #[arg(long)]
        search_budget: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        neurons: Option<usize>,
        #[arg(long)]
        num_states: Option<usize>,
        #[arg(long)]
        dt_ref: Option<f64>,
        #[arg(long)]
        iota: Option<f64>,
        #[arg(long)]
        adam_iters: Option<usize>,
        #[arg(long)]
        bfgs_iters: Option<usize>,
    },
    /// Score a checkpoint on a dataset split and export predictions.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `test`, `train` or `all`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Sobol' sensitivity indices of the surrogate's quantities of interest.
    Gsa {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Base sample size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Only report the number of model evaluations.
        #[arg(long)]
        plan_only: bool,
        /// Parameter count for a plan without a model.
        #[arg(long)]
        n_params: Option<usize>,
    },
    /// Maximum a posteriori parameter estimate.
    Map {
        #[command(flatten)]
        map: MapFlags,
    },
    /// Posterior sampling with NUTS under the surrogate error model.
    Hmc {
        #[command(flatten)]
        map: MapFlags,
        /// Existing map.json; computed first when absent.
        #[arg(long)]
        map_result: Option<PathBuf>,
        /// Fitted error model (gp.json).
        #[arg(long)]
        gp: Option<PathBuf>,
        /// Dataset whose test residuals fit the error model.
        #[arg(long)]
        residuals: Option<PathBuf>,
        #[arg(long)]
        chi: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        burn: Option<usize>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
        /// Keep the leapfrog step fixed during burn-in.
        #[arg(long)]
        no_adapt: bool,
    },
    /// Figures and an overview of an existing run directory.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Args)]
struct MapFlags {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long)]
    starts: Option<usize>,
}

impl MapFlags {
    fn apply(&self, o: &mut Overrides) {
        o.set("model", self.model.as_ref())
            .set("problem", self.problem.as_ref())
            .set("starts", self.starts);
    }
}

fn settings<C>(common: &Common, o: &mut Overrides) -> Result<RunConfig<C>, Failure>
where
    C: Default + Serialize + DeserializeOwned,
{
    o.set("seed", common.seed)
        .set("workers", common.workers)
        .set("out", common.out.as_ref());
    let defaults = RunConfig {
        seed: 0,
        workers: None,
        out: None,
        settings: C::default(),
    };
    let cfg = resolve(defaults, common.config.as_deref(), o)?;
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(Failure::config("--workers must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::compute(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut o = Overrides::default();
    let c = &cli.common;
    match &cli.command {
        Command::GenData {
            n,
            n_test,
            space,
            n_beats,
            output_dt,
        } => {
            o.set("n", *n)
                .set("n_test", *n_test)
                .set("space", space.as_ref())
                .set("n_beats", *n_beats)
                .set("output_dt", *output_dt);
            commands::gen_data(&settings(c, &mut o)?)
        }
        Command::Train {
            data,
            kfold,
            search_budget,
            layers,
            neurons,
            num_states,
            dt_ref,
            iota,
            adam_iters,
            bfgs_iters,
        } => {
            o.set("data", data.as_ref())
                .set("kfold", *kfold)
                .set("hyper.layers", *layers)
                .set("hyper.neurons", *neurons)
                .set("hyper.num_states", *num_states)
                .set("hyper.dt_ref", *dt_ref)
                .set("hyper.iota", *iota)
                .set("schedule.adam_iters", *adam_iters)
                .set("schedule.bfgs_iters", *bfgs_iters);
            let mut cfg: RunConfig<commands::Train> = settings(c, &mut o)?;
            if let Some(b) = search_budget {
                let search = cfg.settings.search.get_or_insert_with(|| commands::Search {
                    budget: *b,
                    ranges: Default::default(),
                });
                search.budget = *b;
            }
            commands::train_cmd(&cfg)
        }
        Command::Eval { model, data, split } => {
            o.set("model", model.as_ref())
                .set("data", data.as_ref())
                .set("split", split.as_ref());
            commands::eval_cmd(&settings(c, &mut o)?)
        }
        Command::Gsa {
            model,
            n,
            bootstrap,
            plan_only,
            n_params,
        } => {
            o.set("model", model.as_ref())
                .set("n", *n)
                .set("bootstrap", *bootstrap)
                .flag("plan_only", *plan_only, true)
                .set("n_params", *n_params);
            commands::gsa_cmd(&settings(c, &mut o)?)
        }
        Command::Map { map } => {
            map.apply(&mut o);
            commands::map_cmd(&settings(c, &mut o)?)
        }
        Command::Hmc {
            map,
            map_result,
            gp,
            residuals,
            chi,
            iters,
            burn,
            step,
            max_depth,
            no_adapt,
        } => {
            map.apply(&mut o);
            o.set("map_result", map_result.as_ref())
                .set("gp", gp.as_ref())
                .set("residuals", residuals.as_ref())
                .set("chi", *chi)
                .set("nuts.iters", *iters)
                .set("nuts.burn_in", *burn)
                .set("nuts.step_size", *step)
                .set("nuts.max_tree_depth", *max_depth)
                .flag("nuts.adapt", *no_adapt, false);
            commands::hmc_cmd(&settings(c, &mut o)?)
        }
        Command::Report { run } => {
            o.set("run", run.as_ref());
            commands::report_cmd(&settings(c, &mut o)?)
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 when a computation fails, 2 for
/// configuration and usage errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
