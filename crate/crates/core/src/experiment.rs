//! Seeded active-learning trials against the simulated teacher, strategy
//! comparison and heatmap output.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisConfig;
use crate::context::{GraspModel, TaskModel, TaskTimestep};
use crate::feasibility::{score_grid_two_class, InfeasibleModel};
use crate::mixture::{LearnerHyper, PrompLibrary, Route};
use crate::promp::{fit_weights, mean_trajectory};
use crate::sampler::{argmax_excluding, coverage_metric, score_grid, CandidateGrid, Strategy};
use crate::simworld::{
    build_grid, derive_seed, fit_world_grasp_model, judge_success, recorded_demo, DemoResult,
    WorldConfig,
};
use crate::{persist, Error, Result};

const QUERY_STREAM: u64 = 0x0005_EED0_FA11;

/// A world configuration together with its grid and fitted grasp model.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: WorldConfig,
    pub grid: CandidateGrid,
    pub grasp: GraspModel,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        let grid = build_grid(&cfg)?;
        let grasp = fit_world_grasp_model(&cfg, &grid)?;
        Ok(Self { cfg, grid, grasp })
    }

    pub fn demo(&self, index: usize) -> Result<DemoResult> {
        recorded_demo(&self.grid, index, &self.cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub strategy: Strategy,
    pub n_queries: usize,
    pub n_init: usize,
    pub seed: u64,
    pub feasibility: bool,
}

impl TrialSettings {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            n_queries: 25,
            n_init: 3,
            seed,
            feasibility: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    New(usize),
    Existing(usize),
    Infeasible,
}

impl Outcome {
    fn from_route(route: Route, size: usize) -> Self {
        match route {
            Route::Existing(j) => Outcome::Existing(j),
            Route::New => Outcome::New(size - 1),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::New(_) => write!(f, "new"),
            Outcome::Existing(j) => write!(f, "{j}"),
            Outcome::Infeasible => write!(f, "infeasible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub grid_index: usize,
    pub outcome: Outcome,
    pub library_size: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    pub strategy: Strategy,
    pub seed: u64,
    /// Grid cells consumed by initialization, in draw order.
    pub init_indices: Vec<usize>,
    pub init_coverage: f64,
    pub records: Vec<IterationRecord>,
    /// Set when the grid ran out of unqueried cells before the budget.
    pub exhausted: bool,
    pub library: PrompLibrary,
    pub infeasible: InfeasibleModel,
    pub queried: HashSet<usize>,
}

impl TrialReport {
    pub fn final_coverage(&self) -> f64 {
        self.records
            .last()
            .map_or(self.init_coverage, |r| r.coverage)
    }

    pub fn n_demonstrations(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.outcome != Outcome::Infeasible)
            .count()
    }
}

struct Learner<'w> {
    world: &'w World,
    library: PrompLibrary,
    infeasible: InfeasibleModel,
    queried: HashSet<usize>,
    feasibility: bool,
}

impl<'w> Learner<'w> {
    /// Queries the teacher at `index` and folds the answer into the models.
    fn teach(&mut self, index: usize) -> Result<Outcome> {
        self.queried.insert(index);
        match self.world.demo(index)? {
            DemoResult::Infeasible => {
                if self.feasibility {
                    self.infeasible
                        .label_infeasible(self.world.grid.contexts[index])?;
                }
                Ok(Outcome::Infeasible)
            }
            DemoResult::Demonstration(traj) => {
                let w = fit_weights(&traj, &self.library.cfg, self.library.hyper.ridge)?;
                let route = self.library.incorporate(w)?;
                Ok(Outcome::from_route(route, self.library.len()))
            }
        }
    }

    fn model(&self) -> Result<TaskModel<'_>> {
        TaskModel::new(&self.library, &self.world.grasp, TaskTimestep::default())
    }
}

/// Runs one trial: seeded initialization, then `n_queries` teacher
/// demonstrations chosen by the strategy. Infeasible answers are recorded
/// but do not use up the demonstration budget.
pub fn run_trial(
    world: &World,
    hyper: &LearnerHyper,
    settings: &TrialSettings,
) -> Result<TrialReport> {
    if settings.n_init == 0 {
        return Err(Error::domain("n_init must be at least 1"));
    }
    let mut learner = Learner {
        world,
        library: PrompLibrary::new(BasisConfig::default(), hyper.clone())?,
        infeasible: InfeasibleModel::new(1e-6, 1, settings.seed)?,
        queried: HashSet::new(),
        feasibility: settings.feasibility,
    };

    // The initial set depends only on the seed, so every strategy shares it.
    let mut order: Vec<usize> = (0..world.grid.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    let mut init_indices = Vec::new();
    for &index in &order {
        if learner.library.total_samples() >= settings.n_init {
            break;
        }
        init_indices.push(index);
        learner.teach(index)?;
    }
    if learner.library.is_empty() {
        return Err(Error::domain(
            "no feasible cell available for initialization",
        ));
    }
    let init_coverage = coverage_metric(&world.grid, &learner.model()?)?;

    let mut records = Vec::new();
    let mut demos = 0;
    let mut exhausted = false;
    while demos < settings.n_queries {
        let iteration = records.len();
        let stream = derive_seed(settings.seed ^ QUERY_STREAM, iteration as u64);
        let index = {
            let model = learner.model()?;
            let scores = if settings.feasibility {
                score_grid_two_class(
                    &world.grid,
                    settings.strategy,
                    &model,
                    &learner.infeasible,
                    stream,
                )?
            } else {
                score_grid(&world.grid, settings.strategy, &model, stream)?
            };
            argmax_excluding(&scores, &learner.queried)
        };
        let Some(index) = index else {
            exhausted = true;
            break;
        };
        let outcome = learner.teach(index)?;
        if outcome != Outcome::Infeasible {
            demos += 1;
        }
        records.push(IterationRecord {
            iteration,
            grid_index: index,
            outcome,
            library_size: learner.library.len(),
            coverage: coverage_metric(&world.grid, &learner.model()?)?,
        });
    }

    Ok(TrialReport {
        strategy: settings.strategy,
        seed: settings.seed,
        init_indices,
        init_coverage,
        records,
        exhausted,
        library: learner.library,
        infeasible: learner.infeasible,
        queried: learner.queried,
    })
}

/// Closed-loop check of a learned library over every feasible grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessReport {
    pub n_feasible: usize,
    pub n_success: usize,
    pub failures: Vec<usize>,
}

impl SuccessReport {
    pub fn rate(&self) -> f64 {
        if self.n_feasible == 0 {
            return 1.0;
        }
        self.n_success as f64 / self.n_feasible as f64
    }
}

/// Conditions the best component on each feasible cell, rolls out its mean
/// trajectory and judges it.
pub fn evaluate_success(world: &World, library: &PrompLibrary) -> Result<SuccessReport> {
    let model = TaskModel::new(library, &world.grasp, TaskTimestep::default())?;
    let cells: Vec<usize> = (0..world.grid.len())
        .filter(|&i| {
            let c = &world.grid.contexts[i];
            !world.cfg.is_infeasible(c.x, c.y)
        })
        .collect();
    let verdicts = cells
        .par_iter()
        .map(|&i| {
            let eta = &world.grid.contexts[i];
            let exec = model.best_execution(eta)?;
            let traj = mean_trajectory(&exec.conditioned, &library.cfg, world.cfg.n_timesteps)?;
            Ok(judge_success(&traj, eta, &world.cfg, &world.grasp))
        })
        .collect::<Result<Vec<bool>>>()?;
    let failures: Vec<usize> = cells
        .iter()
        .zip(&verdicts)
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| *i)
        .collect();
    Ok(SuccessReport {
        n_feasible: cells.len(),
        n_success: cells.len() - failures.len(),
        failures,
    })
}

/// Summary of a strategy comparison; trials are listed strategy-major.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub trials: Vec<TrialReport>,
    /// Index into `trials` of each strategy's median trial.
    pub medians: Vec<(Strategy, usize)>,
    pub summary_path: PathBuf,
    pub curves_path: PathBuf,
    pub median_path: PathBuf,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Position (within `finals`) of the lower median.
pub fn median_index(finals: &[f64]) -> Option<usize> {
    if finals.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..finals.len()).collect();
    order.sort_by(|&a, &b| finals[a].total_cmp(&finals[b]).then(a.cmp(&b)));
    Some(order[(finals.len() - 1) / 2])
}

pub struct CompareSettings<'a> {
    pub strategies: &'a [Strategy],
    pub n_trials: usize,
    pub n_queries: usize,
    pub n_init: usize,
    pub base_seed: u64,
    pub feasibility: bool,
}

/// Runs every (strategy, trial) pair with trial seed `base_seed + trial` and
/// writes `summary.csv`, `curves.csv`, `median.csv` and the median library
/// of each strategy into `out_dir`.
pub fn compare_strategies(
    world: &World,
    hyper: &LearnerHyper,
    settings: &CompareSettings<'_>,
    out_dir: &Path,
) -> Result<Comparison> {
    if settings.n_trials == 0 {
        return Err(Error::domain("n_trials must be at least 1"));
    }
    if settings.strategies.is_empty() {
        return Err(Error::domain("no strategies given"));
    }
    let jobs: Vec<(Strategy, u64)> = settings
        .strategies
        .iter()
        .flat_map(|s| (0..settings.n_trials as u64).map(move |t| (*s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(strategy, t)| {
            let trial = TrialSettings {
                strategy,
                n_queries: settings.n_queries,
                n_init: settings.n_init,
                seed: settings.base_seed.wrapping_add(t),
                feasibility: settings.feasibility,
            };
            run_trial(world, hyper, &trial)
        })
        .collect::<Result<Vec<_>>>()?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary_path = out_dir.join("summary.csv");
    let curves_path = out_dir.join("curves.csv");
    let median_path = out_dir.join("median.csv");

    let mut summary = csv::Writer::from_path(&summary_path)?;
    summary.write_record([
        "strategy",
        "trial",
        "seed",
        "init_coverage",
        "final_coverage",
        "library_size",
        "demonstrations",
        "exhausted",
    ])?;
    let mut curves = csv::Writer::from_path(&curves_path)?;
    curves.write_record([
        "strategy",
        "trial",
        "seed",
        "iteration",
        "grid_index",
        "outcome",
        "library_size",
        "coverage",
    ])?;
    for (k, report) in trials.iter().enumerate() {
        let t = k % settings.n_trials;
        let name = report.strategy.flag();
        summary.write_record([
            name.to_string(),
            t.to_string(),
            report.seed.to_string(),
            fmt_f64(report.init_coverage),
            fmt_f64(report.final_coverage()),
            report.library.len().to_string(),
            report.n_demonstrations().to_string(),
            report.exhausted.to_string(),
        ])?;
        for r in &report.records {
            curves.write_record([
                name.to_string(),
                t.to_string(),
                report.seed.to_string(),
                r.iteration.to_string(),
                r.grid_index.to_string(),
                r.outcome.to_string(),
                r.library_size.to_string(),
                fmt_f64(r.coverage),
            ])?;
        }
    }
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;
    curves.flush().map_err(|e| Error::io(&curves_path, e))?;

    let mut medians = Vec::new();
    let mut median = csv::Writer::from_path(&median_path)?;
    median.write_record([
        "strategy",
        "trial",
        "seed",
        "final_coverage",
        "library_file",
    ])?;
    for (s, chunk) in trials.chunks(settings.n_trials).enumerate() {
        let strategy = settings.strategies[s];
        let finals: Vec<f64> = chunk.iter().map(TrialReport::final_coverage).collect();
        let t = median_index(&finals).expect("n_trials is positive");
        let report = &chunk[t];
        let file = format!("library_{}.json", strategy.flag());
        persist::save_library(&out_dir.join(&file), &report.library, Some(&world.grasp))?;
        median.write_record([
            strategy.flag().to_string(),
            t.to_string(),
            report.seed.to_string(),
            fmt_f64(report.final_coverage()),
            file,
        ])?;
        medians.push((strategy, s * settings.n_trials + t));
    }
    median.flush().map_err(|e| Error::io(&median_path, e))?;

    Ok(Comparison {
        trials,
        medians,
        summary_path,
        curves_path,
        median_path,
    })
}

/// Scores for a heatmap, in grid order.
pub fn heatmap_scores(
    grid: &CandidateGrid,
    model: &TaskModel<'_>,
    strategy: Strategy,
    infeasible: Option<&InfeasibleModel>,
    seed: u64,
) -> Result<Vec<f64>> {
    if model.n_classes() == 0 {
        return Err(Error::domain("heatmap needs a nonempty library"));
    }
    match infeasible {
        Some(inf) => score_grid_two_class(grid, strategy, model, inf, seed),
        None => score_grid(grid, strategy, model, seed),
    }
}

/// Writes `x,y,theta,score`, one row per grid cell in grid order.
pub fn emit_heatmap(
    grid: &CandidateGrid,
    model: &TaskModel<'_>,
    strategy: Strategy,
    infeasible: Option<&InfeasibleModel>,
    seed: u64,
    out_path: &Path,
) -> Result<Vec<f64>> {
    let scores = heatmap_scores(grid, model, strategy, infeasible, seed)?;
    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record(["x", "y", "theta", "score"])?;
    for (c, s) in grid.contexts.iter().zip(&scores) {
        w.write_record([fmt_f64(c.x), fmt_f64(c.y), fmt_f64(c.theta), fmt_f64(*s)])?;
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_world(discs: bool) -> World {
        let mut cfg = if discs {
            WorldConfig::central_disc()
        } else {
            WorldConfig::default()
        };
        cfg.x_range = [0.45, 0.75];
        cfg.y_range = [-0.1, 0.1];
        cfg.position_step = 0.1;
        World::new(cfg).unwrap()
    }

    #[test]
    fn init_only_trial_has_no_records() {
        let world = small_world(false);
        let mut s = TrialSettings::new(Strategy::GreatestMahalanobis, 1);
        s.n_queries = 0;
        let r = run_trial(&world, &LearnerHyper::default(), &s).unwrap();
        assert!(r.records.is_empty());
        assert!(!r.library.is_empty());
        assert_eq!(r.library.total_samples(), 3);
        assert_eq!(r.final_coverage(), r.init_coverage);
    }

    #[test]
    fn records_are_contiguous_and_finite() {
        let world = small_world(false);
        let mut s = TrialSettings::new(Strategy::MaximumEntropy, 2);
        s.n_queries = 5;
        let r = run_trial(&world, &LearnerHyper::default(), &s).unwrap();
        assert_eq!(r.records.len(), 5);
        for (i, rec) in r.records.iter().enumerate() {
            assert_eq!(rec.iteration, i);
            assert!(rec.coverage.is_finite());
            assert!(!r.init_indices.contains(&rec.grid_index));
        }
        assert!(r
            .records
            .windows(2)
            .all(|w| w[0].library_size <= w[1].library_size));
        assert_eq!(r.records.last().unwrap().library_size, r.library.len());
    }

    #[test]
    fn strategies_share_the_initial_set() {
        let world = small_world(false);
        let mut a = TrialSettings::new(Strategy::GreatestMahalanobis, 9);
        a.n_queries = 1;
        let b = TrialSettings {
            strategy: Strategy::Random,
            ..a
        };
        let ra = run_trial(&world, &LearnerHyper::default(), &a).unwrap();
        let rb = run_trial(&world, &LearnerHyper::default(), &b).unwrap();
        assert_eq!(ra.init_indices, rb.init_indices);
        assert_eq!(ra.init_coverage, rb.init_coverage);
    }

    #[test]
    fn grid_exhaustion_is_flagged() {
        let world = small_world(false);
        let mut s = TrialSettings::new(Strategy::Random, 3);
        s.n_queries = world.grid.len() + 5;
        let r = run_trial(&world, &LearnerHyper::default(), &s).unwrap();
        assert!(r.exhausted);
        assert_eq!(r.queried.len(), world.grid.len());
    }

    #[test]
    fn infeasible_answers_do_not_use_budget() {
        let world = small_world(true);
        let mut s = TrialSettings::new(Strategy::MaximumEntropy, 4);
        s.feasibility = true;
        s.n_queries = 6;
        let r = run_trial(&world, &LearnerHyper::default(), &s).unwrap();
        assert_eq!(r.n_demonstrations(), 6);
        let n_inf = r
            .records
            .iter()
            .filter(|x| x.outcome == Outcome::Infeasible)
            .count();
        assert_eq!(r.records.len(), 6 + n_inf);
        let labeled_init = r
            .init_indices
            .iter()
            .filter(|&&i| {
                let c = &world.grid.contexts[i];
                world.cfg.is_infeasible(c.x, c.y)
            })
            .count();
        assert_eq!(r.infeasible.labeled.len(), n_inf + labeled_init);
    }

    #[test]
    fn lower_median() {
        assert_eq!(median_index(&[3.0]), Some(0));
        assert_eq!(median_index(&[3.0, 1.0, 2.0, 4.0]), Some(2));
        assert_eq!(median_index(&[5.0, 1.0, 3.0]), Some(2));
        assert_eq!(median_index(&[]), None);
    }
}
