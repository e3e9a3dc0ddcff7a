//! Planar grasp world that stands in for the teacher and the robot.
//!
//! The world lays out the candidate grid, produces a minimum-jerk
//! demonstration toward the grasp pose appropriate for an object pose, and
//! judges whether an executed trajectory ends at a valid grasp without
//! entering a forbidden disc.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::phase_schedule;
use crate::context::{compose_pose, fit_grasp_gmm, relative_pose, GraspModel, PlanarContext};
use crate::linalg::{unwrap_near, wrap_angle};
use crate::promp::Trajectory;
use crate::sampler::CandidateGrid;
use crate::{Error, Result};

/// A grasp offset used for objects whose distance from the base lies in
/// `[min_radius, max_radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspOffset {
    pub offset: [f64; 3],
    pub min_radius: f64,
    #[serde(default)]
    pub max_radius: Option<f64>,
}

impl GraspOffset {
    pub fn applies(&self, radius: f64) -> bool {
        radius >= self.min_radius && self.max_radius.is_none_or(|m| radius < m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).hypot(y - self.center[1]) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub position_step: f64,
    pub angle_step: f64,
    pub home_pose: [f64; 3],
    pub grasp_offsets: Vec<GraspOffset>,
    pub demo_noise_std: [f64; 3],
    pub success_pos_tol: f64,
    pub success_ang_tol: f64,
    #[serde(default)]
    pub infeasible_discs: Vec<Disc>,
    pub n_timesteps: usize,
    /// Components of the grasp-offset mixture fitted from recorded demonstrations.
    pub grasp_components: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            x_range: [0.35, 0.85],
            y_range: [-0.175, 0.175],
            position_step: 0.05,
            angle_step: FRAC_PI_4,
            home_pose: [0.2, 0.0, 0.0],
            grasp_offsets: vec![
                // overhead analogue close to the base
                GraspOffset {
                    offset: [0.0, 0.0, FRAC_PI_2],
                    min_radius: 0.0,
                    max_radius: Some(0.55),
                },
                // side analogue further out
                GraspOffset {
                    offset: [-0.1, 0.0, 0.0],
                    min_radius: 0.55,
                    max_radius: None,
                },
            ],
            demo_noise_std: [0.005, 0.005, 0.02],
            success_pos_tol: 0.02,
            success_ang_tol: 0.17,
            infeasible_discs: Vec::new(),
            n_timesteps: 50,
            grasp_components: 2,
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// Default world with one obstacle disc in the middle of the table.
    pub fn central_disc() -> Self {
        let mut cfg = Self::default();
        cfg.infeasible_discs.push(Disc {
            center: [0.6, 0.0],
            radius: 0.1,
        });
        cfg
    }

    pub fn noiseless(mut self) -> Self {
        self.demo_noise_std = [0.0; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_step > 0.0 && self.angle_step > 0.0) {
            return Err(Error::domain("grid steps must be positive"));
        }
        if !(self.success_pos_tol > 0.0 && self.success_ang_tol > 0.0) {
            return Err(Error::domain("success tolerances must be positive"));
        }
        if self.n_timesteps < 2 {
            return Err(Error::domain("n_timesteps must be at least 2"));
        }
        if self.x_range[1] < self.x_range[0] || self.y_range[1] < self.y_range[0] {
            return Err(Error::domain("coordinate ranges are empty"));
        }
        if self.grasp_offsets.is_empty() {
            return Err(Error::domain("world needs at least one grasp offset"));
        }
        if self.demo_noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::domain("demonstration noise must be nonnegative"));
        }
        if self.grasp_components == 0 {
            return Err(Error::domain("grasp_components must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::persist::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::write_json(path, self)
    }

    pub fn is_infeasible(&self, x: f64, y: f64) -> bool {
        self.infeasible_discs.iter().any(|d| d.contains(x, y))
    }

    /// Offset the teacher uses for an object at `eta`.
    pub fn grasp_for(&self, eta: &PlanarContext) -> &GraspOffset {
        let radius = eta.x.hypot(eta.y);
        self.grasp_offsets
            .iter()
            .find(|g| g.applies(radius))
            .unwrap_or(&self.grasp_offsets[self.grasp_offsets.len() - 1])
    }
}

fn lattice(range: [f64; 2], step: f64) -> Vec<f64> {
    let count = ((range[1] - range[0]) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| range[0] + i as f64 * step).collect()
}

/// Row-major product of x (outer), y (middle) and angle (inner) lattices.
pub fn build_grid(cfg: &WorldConfig) -> Result<CandidateGrid> {
    cfg.validate()?;
    let xs = lattice(cfg.x_range, cfg.position_step);
    let ys = lattice(cfg.y_range, cfg.position_step);
    let n_angles = ((2.0 * PI) / cfg.angle_step).round().max(1.0) as usize;
    let mut contexts = Vec::with_capacity(xs.len() * ys.len() * n_angles);
    for &x in &xs {
        for &y in &ys {
            for k in 0..n_angles {
                contexts.push(PlanarContext::new(x, y, -PI + k as f64 * cfg.angle_step));
            }
        }
    }
    CandidateGrid::new(contexts, cfg.position_step, cfg.angle_step)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DemoResult {
    Demonstration(Trajectory),
    Infeasible,
}

impl DemoResult {
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            DemoResult::Demonstration(t) => Some(t),
            DemoResult::Infeasible => None,
        }
    }
}

/// Minimum-jerk position profile `10u^3 - 15u^4 + 6u^5`.
pub fn min_jerk(u: f64) -> f64 {
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Mixes a base seed with an index into an independent stream seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Target end-effector pose the teacher reaches for, with the angle
/// expressed nearest the home orientation.
pub fn teacher_target(eta: &PlanarContext, cfg: &WorldConfig) -> Vector3<f64> {
    let g = cfg.grasp_for(eta);
    let mut target = compose_pose(eta, &Vector3::from(g.offset));
    target[2] = unwrap_near(target[2], cfg.home_pose[2]);
    target
}

pub fn synthesize_demo(eta: &PlanarContext, cfg: &WorldConfig, seed: u64) -> Result<DemoResult> {
    if cfg.is_infeasible(eta.x, eta.y) {
        return Ok(DemoResult::Infeasible);
    }
    let target = teacher_target(eta, cfg);
    let home = Vector3::from(cfg.home_pose);
    let phases = phase_schedule(cfg.n_timesteps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Normal<f64>> = cfg
        .demo_noise_std
        .iter()
        .map(|s| Normal::new(0.0, *s).expect("noise std validated"))
        .collect();
    let last = cfg.n_timesteps - 1;
    let states = DMatrix::from_fn(cfg.n_timesteps, 3, |t, d| {
        let clean = home[d] + (target[d] - home[d]) * min_jerk(phases[t]);
        let scale = if t == last { 0.1 } else { 1.0 };
        clean + scale * noise[d].sample(&mut rng)
    });
    Ok(DemoResult::Demonstration(Trajectory::new(states)?))
}

/// True when the final state matches some grasp target and no waypoint
/// enters an infeasible disc.
pub fn judge_success(
    traj: &Trajectory,
    eta: &PlanarContext,
    cfg: &WorldConfig,
    gm: &GraspModel,
) -> bool {
    let states = traj.states();
    for t in 0..traj.len() {
        if cfg.is_infeasible(states[(t, 0)], states[(t, 1)]) {
            return false;
        }
    }
    let end = traj.last();
    gm.components.iter().any(|g| {
        let goal = compose_pose(eta, &g.mean);
        let pos_err = (end[0] - goal[0]).hypot(end[1] - goal[1]);
        let ang_err = wrap_angle(end[2] - goal[2]).abs();
        pos_err <= cfg.success_pos_tol && ang_err <= cfg.success_ang_tol
    })
}

/// The teacher's recorded demonstration for grid cell `index`.
pub fn recorded_demo(grid: &CandidateGrid, index: usize, cfg: &WorldConfig) -> Result<DemoResult> {
    synthesize_demo(
        &grid.contexts[index],
        cfg,
        derive_seed(cfg.seed, index as u64),
    )
}

/// Fits the grasp-offset mixture from the object-frame endpoints of the
/// recorded demonstrations over every feasible grid cell.
pub fn fit_world_grasp_model(cfg: &WorldConfig, grid: &CandidateGrid) -> Result<GraspModel> {
    let mut endpoints = Vec::new();
    for (i, eta) in grid.contexts.iter().enumerate() {
        if let DemoResult::Demonstration(traj) = recorded_demo(grid, i, cfg)? {
            let end = traj.last();
            endpoints.push(relative_pose(eta, &Vector3::new(end[0], end[1], end[2])));
        }
    }
    fit_grasp_gmm(&endpoints, cfg.grasp_components, cfg.seed)
}
