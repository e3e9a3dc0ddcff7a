//! Uncertainty scores over candidate contexts and query selection.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{PlanarContext, TaskModel};
use crate::linalg::wrap_angle;
use crate::{Error, Result};

/// Discrete set of candidate task instances.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    pub contexts: Vec<PlanarContext>,
    pub position_step: f64,
    pub angle_step: f64,
}

impl CandidateGrid {
    pub fn new(contexts: Vec<PlanarContext>, position_step: f64, angle_step: f64) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::domain("candidate grid is empty"));
        }
        if !(position_step > 0.0 && angle_step > 0.0) {
            return Err(Error::domain("grid steps must be positive"));
        }
        for (i, a) in contexts.iter().enumerate() {
            if contexts[..i].contains(a) {
                return Err(Error::domain(format!("duplicate candidate at index {i}")));
            }
        }
        Ok(Self {
            contexts,
            position_step,
            angle_step,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Distance in grid steps, with the angle difference wrapped.
    pub fn step_distance(&self, a: &PlanarContext, b: &PlanarContext) -> f64 {
        let dx = (a.x - b.x) / self.position_step;
        let dy = (a.y - b.y) / self.position_step;
        let dt = wrap_angle(a.theta - b.theta) / self.angle_step;
        (dx * dx + dy * dy + dt * dt).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    LeastConfident,
    MinimumMargin,
    MaximumEntropy,
    GreatestMahalanobis,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::LeastConfident,
        Strategy::MinimumMargin,
        Strategy::MaximumEntropy,
        Strategy::GreatestMahalanobis,
        Strategy::Random,
    ];

    pub fn flag(&self) -> &'static str {
        match self {
            Strategy::LeastConfident => "lc",
            Strategy::MinimumMargin => "mm",
            Strategy::MaximumEntropy => "me",
            Strategy::GreatestMahalanobis => "gmd",
            Strategy::Random => "random",
        }
    }

    /// Whether the score is a function of the multi-class posterior.
    pub fn uses_posterior(&self) -> bool {
        matches!(
            self,
            Strategy::LeastConfident | Strategy::MinimumMargin | Strategy::MaximumEntropy
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| {
                Error::domain(format!(
                    "unknown strategy `{s}` (expected lc|mm|me|gmd|random)"
                ))
            })
    }
}

fn top_two(posterior: &[f64]) -> (f64, f64) {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in posterior {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    (first, if second.is_finite() { second } else { 0.0 })
}

pub fn least_confident(posterior: &[f64]) -> f64 {
    1.0 - top_two(posterior).0
}

/// Second-best minus best probability; zero at a tie, negative otherwise.
pub fn minimum_margin(posterior: &[f64]) -> f64 {
    let (first, second) = top_two(posterior);
    second - first
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(posterior: &[f64]) -> f64 {
    -posterior
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Score of one context under a deterministic strategy.
///
/// `Random` has no per-context score; use [`random_scores`].
pub fn score(eta: &PlanarContext, strategy: Strategy, model: &TaskModel<'_>) -> Result<f64> {
    match strategy {
        Strategy::LeastConfident => Ok(least_confident(&model.class_posterior(eta)?)),
        Strategy::MinimumMargin => Ok(minimum_margin(&model.class_posterior(eta)?)),
        Strategy::MaximumEntropy => Ok(entropy(&model.class_posterior(eta)?)),
        Strategy::GreatestMahalanobis => model.min_mahalanobis(eta),
        Strategy::Random => Err(Error::domain("random scores come from random_scores")),
    }
}

/// One uniform `[0, 1)` draw per candidate from a seeded stream.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Scores every candidate. Evaluation runs in parallel; the output order is the grid order.
pub fn score_grid(
    grid: &CandidateGrid,
    strategy: Strategy,
    model: &TaskModel<'_>,
    seed: u64,
) -> Result<Vec<f64>> {
    if strategy == Strategy::Random {
        return Ok(random_scores(grid.len(), seed));
    }
    if model.n_classes() == 0 {
        return Err(Error::domain(format!(
            "strategy {strategy} needs a nonempty library"
        )));
    }
    grid.contexts
        .par_iter()
        .map(|eta| score(eta, strategy, model))
        .collect()
}

/// Index of the largest score outside `exclude`; ties go to the lowest index.
pub fn argmax_excluding(scores: &[f64], exclude: &HashSet<usize>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub fn select_query(
    grid: &CandidateGrid,
    strategy: Strategy,
    model: &TaskModel<'_>,
    exclude: &HashSet<usize>,
    seed: u64,
) -> Result<usize> {
    if (0..grid.len()).all(|i| exclude.contains(&i)) {
        return Err(Error::domain("every candidate has already been queried"));
    }
    let scores = score_grid(grid, strategy, model, seed)?;
    Ok(argmax_excluding(&scores, exclude).expect("a candidate remains"))
}

/// Worst-case minimum Mahalanobis distance over the grid (lower is better).
pub fn coverage_metric(grid: &CandidateGrid, model: &TaskModel<'_>) -> Result<f64> {
    let scores = score_grid(grid, Strategy::GreatestMahalanobis, model, 0)?;
    Ok(scores.into_iter().fold(f64::NEG_INFINITY, f64::max))
}
