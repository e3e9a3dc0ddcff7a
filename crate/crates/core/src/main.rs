use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use promp_al::basis::BasisConfig;
use promp_al::context::{TaskModel, TaskTimestep};
use promp_al::experiment::{
    compare_strategies, emit_heatmap, evaluate_success, run_trial, CompareSettings, TrialSettings,
    World,
};
use promp_al::mixture::{LearnerHyper, PrompLibrary};
use promp_al::persist::{
    export_trajectory, import_trajectory, load_library, read_json, save_library, write_json,
};
use promp_al::promp::{fit_weights, mean_trajectory};
use promp_al::sampler::{coverage_metric, Strategy};
use promp_al::simworld::WorldConfig;
use promp_al::{Error, Result};

#[derive(Parser)]
#[command(
    name = "promp-al",
    version,
    about = "Active learning of ProMP libraries in a simulated planar grasp world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write default world and learner configuration files.
    GenWorld {
        /// Add a central infeasible disc to the world.
        #[arg(long)]
        disc: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one active-learning trial.
    Run {
        #[command(flatten)]
        trial: TrialArgs,
        #[arg(long, default_value = "gmd")]
        strategy: Strategy,
    },
    /// Run several strategies over paired seeds.
    Compare {
        #[command(flatten)]
        trial: TrialArgs,
        /// Comma-separated strategy list.
        #[arg(long, value_delimiter = ',', default_value = "gmd,random")]
        strategy: Vec<Strategy>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Score every grid cell with a strategy.
    Heatmap {
        #[command(flatten)]
        trial: TrialArgs,
        #[arg(long, default_value = "me")]
        strategy: Strategy,
        /// Score this library instead of learning one with a fresh trial.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Coverage and closed-loop success of a saved library.
    Eval {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Write each component's mean trajectory as CSV.
    Export {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fold trajectory CSV files into a library.
    Import {
        /// Existing library to extend; a fresh one is created otherwise.
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        traj: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long, default_value_t = 25)]
    queries: usize,
    #[arg(long, default_value_t = 3)]
    init: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "off")]
    feasibility: Switch,
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    hyper: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl TrialArgs {
    fn world(&self) -> Result<World> {
        load_world(self.world.as_deref())
    }

    fn hyper(&self) -> Result<LearnerHyper> {
        load_hyper(self.hyper.as_deref())
    }

    fn settings(&self, strategy: Strategy) -> TrialSettings {
        TrialSettings {
            strategy,
            n_queries: self.queries,
            n_init: self.init,
            seed: self.seed,
            feasibility: self.feasibility == Switch::On,
        }
    }
}

fn load_world(path: Option<&Path>) -> Result<World> {
    let cfg = match path {
        Some(p) => WorldConfig::load(p)?,
        None => WorldConfig::default(),
    };
    World::new(cfg)
}

fn load_hyper(path: Option<&Path>) -> Result<LearnerHyper> {
    let hyper = match path {
        Some(p) => read_json::<LearnerHyper>(p)?,
        None => LearnerHyper::default(),
    };
    hyper.validate()?;
    Ok(hyper)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld { disc, out } => {
            create_dir(&out)?;
            let cfg = if disc {
                WorldConfig::central_disc()
            } else {
                WorldConfig::default()
            };
            cfg.save(&out.join("world.json"))?;
            write_json(&out.join("hyper.json"), &LearnerHyper::default())?;
            println!(
                "wrote {} and {}",
                out.join("world.json").display(),
                out.join("hyper.json").display()
            );
        }
        Command::Run { trial, strategy } => {
            let world = trial.world()?;
            let report = run_trial(&world, &trial.hyper()?, &trial.settings(strategy))?;
            create_dir(&trial.out)?;
            let path = trial.out.join("trial.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([
                "iteration",
                "grid_index",
                "outcome",
                "library_size",
                "coverage",
            ])?;
            for r in &report.records {
                w.write_record([
                    r.iteration.to_string(),
                    r.grid_index.to_string(),
                    r.outcome.to_string(),
                    r.library_size.to_string(),
                    format!("{:.16e}", r.coverage),
                ])?;
            }
            w.flush().map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            save_library(
                &trial.out.join("library.json"),
                &report.library,
                Some(&world.grasp),
            )?;
            println!(
                "strategy {} seed {}: {} components, coverage {:.4} -> {:.4}{}",
                strategy,
                report.seed,
                report.library.len(),
                report.init_coverage,
                report.final_coverage(),
                if report.exhausted {
                    " (grid exhausted)"
                } else {
                    ""
                }
            );
        }
        Command::Compare {
            trial,
            strategy,
            trials,
        } => {
            let world = trial.world()?;
            let settings = CompareSettings {
                strategies: &strategy,
                n_trials: trials,
                n_queries: trial.queries,
                n_init: trial.init,
                base_seed: trial.seed,
                feasibility: trial.feasibility == Switch::On,
            };
            let cmp = compare_strategies(&world, &trial.hyper()?, &settings, &trial.out)?;
            for (s, k) in &cmp.medians {
                let r = &cmp.trials[*k];
                println!(
                    "{s}: median trial seed {} final coverage {:.4}",
                    r.seed,
                    r.final_coverage()
                );
            }
            println!("wrote {}", cmp.summary_path.display());
        }
        Command::Heatmap {
            trial,
            strategy,
            library,
        } => {
            let world = trial.world()?;
            create_dir(&trial.out)?;
            let path = trial.out.join("heatmap.csv");
            match library {
                Some(lib_path) => {
                    let (lib, _) = load_library(&lib_path)?;
                    let model = TaskModel::new(&lib, &world.grasp, TaskTimestep::default())?;
                    emit_heatmap(&world.grid, &model, strategy, None, trial.seed, &path)?;
                }
                None => {
                    let settings = trial.settings(strategy);
                    let report = run_trial(&world, &trial.hyper()?, &settings)?;
                    let model =
                        TaskModel::new(&report.library, &world.grasp, TaskTimestep::default())?;
                    let inf = settings.feasibility.then_some(&report.infeasible);
                    emit_heatmap(&world.grid, &model, strategy, inf, trial.seed, &path)?;
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Eval { library, world } => {
            let world = load_world(world.as_deref())?;
            let (lib, _) = load_library(&library)?;
            let model = TaskModel::new(&lib, &world.grasp, TaskTimestep::default())?;
            let coverage = coverage_metric(&world.grid, &model)?;
            let success = evaluate_success(&world, &lib)?;
            println!("components {}", lib.len());
            println!("coverage {coverage:.6}");
            println!(
                "success {}/{} ({:.2}%)",
                success.n_success,
                success.n_feasible,
                100.0 * success.rate()
            );
        }
        Command::Export { library, out } => {
            let (lib, _) = load_library(&library)?;
            create_dir(&out)?;
            for (j, c) in lib.components.iter().enumerate() {
                let traj = mean_trajectory(&c.params, &lib.cfg, 50)?;
                export_trajectory(&out.join(format!("component_{j}.csv")), &traj)?;
            }
            println!("exported {} components", lib.len());
        }
        Command::Import {
            library,
            hyper,
            traj,
            out,
        } => {
            let mut lib = match library {
                Some(p) => load_library(&p)?.0,
                None => PrompLibrary::new(BasisConfig::default(), load_hyper(hyper.as_deref())?)?,
            };
            for path in &traj {
                let t = import_trajectory(path)?;
                let w = fit_weights(&t, &lib.cfg, lib.hyper.ridge)?;
                let route = lib.incorporate(w)?;
                println!("{}: {route:?}", path.display());
            }
            create_dir(&out)?;
            save_library(&out.join("library.json"), &lib, None)?;
            println!("library has {} components", lib.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
