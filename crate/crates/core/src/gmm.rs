//! Three-dimensional Gaussian mixtures fitted by EM.
//!
//! Used for the grasp-offset model (end-effector poses in the object frame)
//! and for the infeasible-context model.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{gaussian_log_density3, log_sum_exp};
use crate::{Error, Result};

pub const COV_FLOOR: f64 = 1e-6;
const MAX_EM_ITERS: usize = 500;
const LLOYD_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<GmmComponent>,
}

/// Result of an EM run, with the log-likelihood after every iteration.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GaussianMixture,
    pub log_likelihoods: Vec<f64>,
}

impl GaussianMixture {
    pub fn single(mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        Self {
            components: vec![GmmComponent {
                weight: 1.0,
                mean,
                cov,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::domain("mixture has no components"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("mixture weights sum to {total}")));
        }
        for c in &self.components {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::domain("mixture weight outside [0, 1]"));
            }
            if c.cov.cholesky().is_none() {
                return Err(Error::domain("mixture covariance is not positive definite"));
            }
        }
        Ok(())
    }

    pub fn log_density(&self, x: &Vector3<f64>) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .map(|c| Ok(c.weight.ln() + gaussian_log_density3(&(x - c.mean), &c.cov)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn density(&self, x: &Vector3<f64>) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    pub fn log_likelihood(&self, points: &[Vector3<f64>]) -> Result<f64> {
        points.iter().map(|p| self.log_density(p)).sum()
    }
}

fn sq_dist(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm_squared()
}

/// k-means++ seeding followed by a few Lloyd iterations.
fn kmeans_init(points: &[Vector3<f64>], r: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < r {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
    }
    for _ in 0..LLOYD_ITERS {
        let labels = assign(points, &centers);
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<_> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == k)
                .collect();
            if !members.is_empty() {
                *c = members
                    .iter()
                    .fold(Vector3::zeros(), |acc, (p, _)| acc + *p)
                    / members.len() as f64;
            }
        }
    }
    centers
}

fn assign(points: &[Vector3<f64>], centers: &[Vector3<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            for (k, c) in centers.iter().enumerate() {
                if sq_dist(p, c) < sq_dist(p, &centers[best]) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn weighted_moments(points: &[Vector3<f64>], resp: &[f64]) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let mass: f64 = resp.iter().sum();
    let mean = points
        .iter()
        .zip(resp)
        .fold(Vector3::zeros(), |acc, (p, r)| acc + p * *r)
        / mass;
    let cov = points
        .iter()
        .zip(resp)
        .fold(Matrix3::zeros(), |acc, (p, r)| {
            let d = p - mean;
            acc + d * d.transpose() * *r
        })
        / mass;
    (mass, mean, cov)
}

/// Fits an `r`-component mixture with a `floor * I` covariance floor.
pub fn fit_gmm_with_floor(
    points: &[Vector3<f64>],
    r: usize,
    seed: u64,
    floor: f64,
) -> Result<GmmFit> {
    if r == 0 {
        return Err(Error::domain("component count must be positive"));
    }
    if points.len() < r {
        return Err(Error::domain(format!(
            "need at least {r} points for {r} components, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let floor_m = Matrix3::identity() * floor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_init(points, r, &mut rng);
    let labels = assign(points, &centers);
    let (_, _, global_cov) = weighted_moments(points, &vec![1.0; n]);
    let mut model = GaussianMixture {
        components: (0..r)
            .map(|k| {
                let resp: Vec<f64> = labels
                    .iter()
                    .map(|l| if *l == k { 1.0 } else { 0.0 })
                    .collect();
                let count: f64 = resp.iter().sum();
                if count == 0.0 {
                    GmmComponent {
                        weight: 1.0 / r as f64,
                        mean: centers[k],
                        cov: global_cov + floor_m,
                    }
                } else {
                    let (mass, mean, cov) = weighted_moments(points, &resp);
                    GmmComponent {
                        weight: mass / n as f64,
                        mean,
                        cov: cov + floor_m,
                    }
                }
            })
            .collect(),
    };
    normalize_weights(&mut model);

    let mut history = vec![model.log_likelihood(points)?];
    for _ in 0..MAX_EM_ITERS {
        // E-step
        let mut resp = vec![vec![0.0; n]; r];
        for (i, p) in points.iter().enumerate() {
            let logs = model
                .components
                .iter()
                .map(|c| Ok(c.weight.ln() + gaussian_log_density3(&(p - c.mean), &c.cov)?))
                .collect::<Result<Vec<_>>>()?;
            let norm = log_sum_exp(&logs);
            for k in 0..r {
                resp[k][i] = (logs[k] - norm).exp();
            }
        }
        // M-step
        for (k, c) in model.components.iter_mut().enumerate() {
            let mass: f64 = resp[k].iter().sum();
            if mass <= f64::MIN_POSITIVE {
                continue;
            }
            let (mass, mean, cov) = weighted_moments(points, &resp[k]);
            c.weight = mass / n as f64;
            c.mean = mean;
            c.cov = (cov + cov.transpose()) * 0.5 + floor_m;
        }
        normalize_weights(&mut model);
        let ll = model.log_likelihood(points)?;
        let prev = *history.last().expect("history is seeded");
        history.push(ll);
        if (ll - prev).abs() <= 1e-12 * (1.0 + ll.abs()) {
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihoods: history,
    })
}

pub fn fit_gmm(points: &[Vector3<f64>], r: usize, seed: u64) -> Result<GmmFit> {
    fit_gmm_with_floor(points, r, seed, COV_FLOOR)
}

fn normalize_weights(model: &mut GaussianMixture) {
    let total: f64 = model.components.iter().map(|c| c.weight).sum();
    for c in &mut model.components {
        c.weight /= total;
    }
}
