//! Planar grasp contexts and the task likelihoods derived from a library.
//!
//! A context is an object pose `(x, y, theta)` on the table. Grasp offsets in
//! the object frame come from a Gaussian mixture; composing the object pose
//! with an offset gives the end-effector pose a primitive must reach at the
//! task phase. All angular residuals are wrapped to `(-pi, pi]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::feature_matrix;
use crate::gmm::{fit_gmm, GaussianMixture};
use crate::linalg::{gaussian_log_density3, log_sum_exp, unwrap_near, wrap_angle};
use crate::mixture::PrompLibrary;
use crate::promp::{condition, PrompParams};
use crate::{Error, Result};

/// Object pose on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarContext {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarContext {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Grasp offsets (end-effector pose in the object frame).
pub type GraspModel = GaussianMixture;

/// Phase at which the task constraint applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTimestep {
    pub phase_star: f64,
}

impl TaskTimestep {
    pub fn new(phase_star: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phase_star) {
            return Err(Error::domain(format!(
                "task phase {phase_star} outside [0, 1]"
            )));
        }
        Ok(Self { phase_star })
    }
}

impl Default for TaskTimestep {
    fn default() -> Self {
        Self { phase_star: 1.0 }
    }
}

fn rotation(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Base-frame end-effector pose for an object pose and an object-frame offset.
pub fn compose_pose(obj: &PlanarContext, offset: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = obj.theta.sin_cos();
    Vector3::new(
        obj.x + c * offset[0] - s * offset[1],
        obj.y + s * offset[0] + c * offset[1],
        wrap_angle(obj.theta + offset[2]),
    )
}

/// Object-frame offset of a base-frame end-effector pose (inverse of [`compose_pose`]).
pub fn relative_pose(obj: &PlanarContext, pose: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = obj.theta.sin_cos();
    let dx = pose[0] - obj.x;
    let dy = pose[1] - obj.y;
    Vector3::new(
        c * dx + s * dy,
        -s * dx + c * dy,
        wrap_angle(pose[2] - obj.theta),
    )
}

/// Rotates an object-frame covariance into the base frame.
pub fn transform_cov(obj: &PlanarContext, cov: &Matrix3<f64>) -> Matrix3<f64> {
    let j = rotation(obj.theta);
    let out = j * cov * j.transpose();
    (out + out.transpose()) * 0.5
}

pub fn fit_grasp_gmm(poses: &[Vector3<f64>], r: usize, seed: u64) -> Result<GraspModel> {
    Ok(fit_gmm(poses, r, seed)?.model)
}

/// A primitive's state marginal at the task phase, cached per library snapshot.
#[derive(Debug, Clone)]
struct Projected {
    mean: Vector3<f64>,
    weight_cov: Matrix3<f64>,
    noise: Matrix3<f64>,
}

/// Immutable view of (library, grasp model, task phase) with per-component
/// projections precomputed. Every query is a pure function of the snapshot.
#[derive(Debug, Clone)]
pub struct TaskModel<'a> {
    pub library: &'a PrompLibrary,
    pub grasp: &'a GraspModel,
    pub task: TaskTimestep,
    projected: Vec<Projected>,
}

fn to3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn to33(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// One grasp target induced by a context: base-frame mean and covariance.
#[derive(Debug, Clone, Copy)]
pub struct GraspTarget {
    pub weight: f64,
    pub pose: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl<'a> TaskModel<'a> {
    pub fn new(
        library: &'a PrompLibrary,
        grasp: &'a GraspModel,
        task: TaskTimestep,
    ) -> Result<Self> {
        if library.cfg.state_dim != 3 {
            return Err(Error::domain(format!(
                "planar contexts need a 3-dimensional state, library has {}",
                library.cfg.state_dim
            )));
        }
        grasp.validate()?;
        let psi = feature_matrix(task.phase_star, &library.cfg)?.into_matrix();
        let projected = library
            .components
            .iter()
            .map(|c| {
                let p = &c.params;
                let w = &psi * &p.cov_w * psi.transpose();
                Projected {
                    mean: to3(&(&psi * &p.mean_w)),
                    weight_cov: (to33(&w) + to33(&w).transpose()) * 0.5,
                    noise: to33(&p.obs_noise),
                }
            })
            .collect();
        Ok(Self {
            library,
            grasp,
            task,
            projected,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.projected.len()
    }

    fn check_index(&self, j: usize) -> Result<&Projected> {
        self.projected
            .get(j)
            .ok_or_else(|| Error::domain(format!("component index {j} out of range")))
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.projected.is_empty() {
            Err(Error::domain("library has no components"))
        } else {
            Ok(())
        }
    }

    pub fn targets(&self, eta: &PlanarContext) -> Vec<GraspTarget> {
        self.grasp
            .components
            .iter()
            .map(|g| GraspTarget {
                weight: g.weight,
                pose: compose_pose(eta, &g.mean),
                cov: transform_cov(eta, &g.cov),
            })
            .collect()
    }

    /// Residual from the component's marginal mean to a target, angle wrapped.
    fn residual(proj: &Projected, target: &Vector3<f64>) -> Vector3<f64> {
        let mut d = target - proj.mean;
        d[2] = wrap_angle(d[2]);
        d
    }

    /// Log of the task achievability likelihood of `eta` under component `j`,
    /// evaluated after conditioning the component on each grasp target.
    pub fn log_p_task_given_class(&self, eta: &PlanarContext, j: usize) -> Result<f64> {
        let proj = self.check_index(j)?;
        let terms = self
            .targets(eta)
            .iter()
            .map(|t| {
                let delta = Self::residual(proj, &t.pose);
                let p = proj.weight_cov;
                let innovation = (t.cov + p).cholesky().ok_or_else(|| {
                    Error::numerical("waypoint innovation covariance is not positive definite")
                })?;
                // gain K = P (S + P)^-1; posterior residual (I - K) delta
                let gain = innovation.solve(&p).transpose();
                let post_mean_shift = gain * delta;
                let post_cov = p - gain * p;
                let mut resid = delta - post_mean_shift;
                resid[2] = wrap_angle(resid[2]);
                let cov = (post_cov + post_cov.transpose()) * 0.5 + proj.noise;
                Ok(t.weight.ln() + gaussian_log_density3(&resid, &cov)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn p_task_given_class(&self, eta: &PlanarContext, j: usize) -> Result<f64> {
        Ok(self.log_p_task_given_class(eta, j)?.exp())
    }

    /// Log density of the grasp targets under component `j`'s unconditioned
    /// state marginal at the task phase.
    pub fn log_marginal_task_density(&self, eta: &PlanarContext, j: usize) -> Result<f64> {
        let proj = self.check_index(j)?;
        let cov = proj.weight_cov + proj.noise;
        let terms = self
            .targets(eta)
            .iter()
            .map(|t| {
                Ok(t.weight.ln() + gaussian_log_density3(&Self::residual(proj, &t.pose), &cov)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Posterior over library components under a uniform class prior.
    pub fn class_posterior(&self, eta: &PlanarContext) -> Result<Vec<f64>> {
        self.require_nonempty()?;
        let logs = (0..self.n_classes())
            .map(|j| self.log_p_task_given_class(eta, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(normalize_log_weights(&logs))
    }

    /// Mahalanobis distance of each grasp target to component `j`'s state
    /// marginal, minimized over grasp targets.
    pub fn context_mahalanobis(&self, eta: &PlanarContext, j: usize) -> Result<f64> {
        let proj = self.check_index(j)?;
        let (_, d) = self.nearest_target(proj, eta)?;
        Ok(d)
    }

    fn nearest_target(&self, proj: &Projected, eta: &PlanarContext) -> Result<(usize, f64)> {
        let chol = (proj.weight_cov + proj.noise).cholesky().ok_or_else(|| {
            Error::numerical("state marginal covariance is not positive definite")
        })?;
        let mut best = (0, f64::INFINITY);
        for (r, t) in self.targets(eta).iter().enumerate() {
            let delta = Self::residual(proj, &t.pose);
            let d = delta.dot(&chol.solve(&delta)).max(0.0).sqrt();
            if d < best.1 {
                best = (r, d);
            }
        }
        Ok(best)
    }

    /// Minimum over components of [`Self::context_mahalanobis`].
    pub fn min_mahalanobis(&self, eta: &PlanarContext) -> Result<f64> {
        self.require_nonempty()?;
        let mut best = f64::INFINITY;
        for proj in &self.projected {
            best = best.min(self.nearest_target(proj, eta)?.1);
        }
        Ok(best)
    }

    /// Component and grasp target with the smallest state-space Mahalanobis
    /// distance, plus the component conditioned on that target.
    pub fn best_execution(&self, eta: &PlanarContext) -> Result<Execution> {
        self.require_nonempty()?;
        let mut best: Option<(usize, usize, f64)> = None;
        for (j, proj) in self.projected.iter().enumerate() {
            let chol = (proj.weight_cov + proj.noise).cholesky().ok_or_else(|| {
                Error::numerical("state marginal covariance is not positive definite")
            })?;
            for (r, t) in self.targets(eta).iter().enumerate() {
                let delta = Self::residual(proj, &t.pose);
                let d = delta.dot(&chol.solve(&delta)).max(0.0).sqrt();
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((j, r, d));
                }
            }
        }
        let (j, r, distance) = best.expect("library is nonempty");
        let conditioned = self.condition_on_target(eta, j, r)?;
        Ok(Execution {
            component: j,
            grasp: r,
            distance,
            conditioned,
        })
    }

    /// Conditions component `j` on grasp target `r`, choosing the angle
    /// representative nearest the component's own marginal mean.
    pub fn condition_on_target(
        &self,
        eta: &PlanarContext,
        j: usize,
        r: usize,
    ) -> Result<PrompParams> {
        let proj = self.check_index(j)?;
        let t = self
            .targets(eta)
            .get(r)
            .copied()
            .ok_or_else(|| Error::domain(format!("grasp index {r} out of range")))?;
        let mut y = t.pose;
        y[2] = unwrap_near(y[2], proj.mean[2]);
        let y_star = DVector::from_column_slice(y.as_slice());
        let cov_star = DMatrix::from_fn(3, 3, |a, b| t.cov[(a, b)]);
        condition(
            self.library.params(j),
            self.task.phase_star,
            &y_star,
            &cov_star,
            &self.library.cfg,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub component: usize,
    pub grasp: usize,
    pub distance: f64,
    pub conditioned: PrompParams,
}

/// Normalizes log weights into probabilities; uniform if every entry is -inf.
pub fn normalize_log_weights(logs: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(logs);
    if norm == f64::NEG_INFINITY || norm.is_nan() {
        return vec![1.0 / logs.len() as f64; logs.len()];
    }
    logs.iter().map(|l| (l - norm).exp()).collect()
}
