//! The incrementally learned library of primitives.
//!
//! A new demonstration's weight vector is routed to the closest primitive
//! (Mahalanobis distance in weight space) whose robust disparity threshold it
//! falls under, or it seeds a new primitive when no threshold admits it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::basis::{feature_matrix, phase_schedule, BasisConfig};
use crate::linalg::{cholesky, gaussian_log_density, log_sum_exp, median, symmetrize};
use crate::promp::{init_promp, sample_weights, PrompParams, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerHyper {
    /// Isotropic weight covariance of a freshly created primitive.
    pub gamma: f64,
    /// Initial prior covariance scale stored with a fresh primitive.
    pub sigma0: f64,
    /// Weight of the previous covariance in the MAP update, in (0, 1).
    pub map_lambda: f64,
    /// MAD outlier cutoff used for the disparity threshold.
    pub mad_beta: f64,
    pub n_threshold_samples: usize,
    pub ridge: f64,
    /// Diagonal of the observation noise, one entry per state dimension.
    pub obs_noise: Vec<f64>,
    pub seed: u64,
}

impl Default for LearnerHyper {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            sigma0: 1e-4,
            map_lambda: 0.5,
            mad_beta: 2.5,
            n_threshold_samples: 100,
            ridge: 1e-6,
            obs_noise: vec![1e-4; 3],
            seed: 0,
        }
    }
}

impl LearnerHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("sigma0", self.sigma0),
            ("mad_beta", self.mad_beta),
            ("ridge", self.ridge),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.map_lambda > 0.0 && self.map_lambda < 1.0) {
            return Err(Error::domain(format!(
                "map_lambda must lie in (0, 1), got {}",
                self.map_lambda
            )));
        }
        if self.n_threshold_samples == 0 {
            return Err(Error::domain("n_threshold_samples must be positive"));
        }
        if self.obs_noise.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain("observation noise entries must be positive"));
        }
        Ok(())
    }

    pub fn obs_noise_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.obs_noise.clone()))
    }
}

/// One library entry: the primitive and the weights it was learned from.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub params: PrompParams,
    pub samples: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Existing(usize),
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrompLibrary {
    pub components: Vec<Component>,
    pub mix_coeffs: Vec<f64>,
    pub cfg: BasisConfig,
    pub hyper: LearnerHyper,
}

/// Cached factorization for repeated distance queries against one primitive.
pub struct WeightMetric<'a> {
    mean: &'a DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> WeightMetric<'a> {
    pub fn new(p: &'a PrompParams) -> Result<Self> {
        Ok(Self {
            mean: &p.mean_w,
            chol: cholesky(&p.cov_w, "weight covariance")?,
        })
    }

    pub fn distance(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.mean.len() {
            return Err(Error::domain(format!(
                "weight vector has length {}, primitive expects {}",
                w.len(),
                self.mean.len()
            )));
        }
        let diff = w - self.mean;
        let solved = self.chol.solve(&diff);
        Ok(diff.dot(&solved).max(0.0).sqrt())
    }
}

/// Mahalanobis distance of a weight vector to a primitive.
pub fn mahalanobis_w(w: &DVector<f64>, p: &PrompParams) -> Result<f64> {
    WeightMetric::new(p)?.distance(w)
}

/// Largest distance that survives MAD outlier filtering at cutoff `beta`.
///
/// Falls back to the median when the MAD is zero.
pub fn mad_filter_max(distances: &[f64], beta: f64) -> f64 {
    let center = median(distances);
    let deviations: Vec<f64> = distances.iter().map(|d| (d - center).abs()).collect();
    let mad = median(&deviations);
    if mad == 0.0 {
        return center;
    }
    distances
        .iter()
        .copied()
        .filter(|d| (d - center) / mad < beta)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Disparity threshold of a primitive from its own seeded weight samples.
pub fn mad_threshold(p: &PrompParams, hyper: &LearnerHyper) -> Result<f64> {
    let metric = WeightMetric::new(p)?;
    let draws = sample_weights(p, hyper.n_threshold_samples, hyper.seed)?;
    let distances = draws
        .iter()
        .map(|w| metric.distance(w))
        .collect::<Result<Vec<_>>>()?;
    Ok(mad_filter_max(&distances, hyper.mad_beta))
}

impl PrompLibrary {
    pub fn new(cfg: BasisConfig, hyper: LearnerHyper) -> Result<Self> {
        cfg.validate()?;
        hyper.validate()?;
        if hyper.obs_noise.len() != cfg.state_dim {
            return Err(Error::domain(format!(
                "observation noise has {} entries, state dimension is {}",
                hyper.obs_noise.len(),
                cfg.state_dim
            )));
        }
        Ok(Self {
            components: Vec::new(),
            mix_coeffs: Vec::new(),
            cfg,
            hyper,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn params(&self, j: usize) -> &PrompParams {
        &self.components[j].params
    }

    pub fn total_samples(&self) -> usize {
        self.components.iter().map(|c| c.samples.len()).sum()
    }

    /// Distances and thresholds for every component.
    pub fn disparities(&self, w: &DVector<f64>) -> Result<Vec<(f64, f64)>> {
        self.components
            .iter()
            .map(|c| {
                let d = mahalanobis_w(w, &c.params)?;
                let delta = mad_threshold(&c.params, &self.hyper)?;
                Ok((d, delta))
            })
            .collect()
    }

    pub fn route_demonstration(&self, w: &DVector<f64>) -> Result<Route> {
        let mut best: Option<(usize, f64)> = None;
        for (j, (d, delta)) in self.disparities(w)?.into_iter().enumerate() {
            if d <= delta && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        Ok(best.map_or(Route::New, |(j, _)| Route::Existing(j)))
    }

    /// Routes `w` and folds it into the library, returning the decision taken.
    pub fn incorporate(&mut self, w: DVector<f64>) -> Result<Route> {
        if w.len() != self.cfg.weight_dim() {
            return Err(Error::domain(format!(
                "weight vector has length {}, library expects {}",
                w.len(),
                self.cfg.weight_dim()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("weight vector contains non-finite entries"));
        }
        let route = self.route_demonstration(&w)?;
        match route {
            Route::Existing(j) => {
                let lambda = self.hyper.map_lambda;
                let comp = &mut self.components[j];
                comp.samples.push(w);
                let (mean, cov) = map_update(&comp.params.cov_w, &comp.samples, lambda);
                comp.params.mean_w = mean;
                comp.params.prev_cov = cov.clone();
                comp.params.cov_w = cov;
                comp.params.n_samples = comp.samples.len();
            }
            Route::New => {
                let params = init_promp(
                    w.clone(),
                    self.hyper.gamma,
                    self.hyper.sigma0,
                    self.hyper.obs_noise_matrix(),
                )?;
                self.components.push(Component {
                    params,
                    samples: vec![w],
                });
            }
        }
        self.refresh_mix_coeffs();
        Ok(route)
    }

    pub fn refresh_mix_coeffs(&mut self) {
        let total = self.total_samples() as f64;
        self.mix_coeffs = self
            .components
            .iter()
            .map(|c| c.samples.len() as f64 / total)
            .collect();
    }

    /// Log mixture density of a whole trajectory.
    pub fn log_traj_density(&self, traj: &Trajectory) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::domain("library has no components"));
        }
        if traj.state_dim() != self.cfg.state_dim {
            return Err(Error::domain(
                "trajectory dimension does not match the library",
            ));
        }
        let phases = phase_schedule(traj.len())?;
        let features = phases
            .iter()
            .map(|&z| feature_matrix(z, &self.cfg).map(|f| f.into_matrix()))
            .collect::<Result<Vec<_>>>()?;
        let mut terms = Vec::with_capacity(self.len());
        for (comp, pi) in self.components.iter().zip(&self.mix_coeffs) {
            let p = &comp.params;
            let mut log_p = pi.ln();
            for (t, psi) in features.iter().enumerate() {
                let residual = traj.state(t) - psi * &p.mean_w;
                let mut cov = psi * &p.cov_w * psi.transpose() + &p.obs_noise;
                symmetrize(&mut cov);
                log_p += gaussian_log_density(&residual, &cov)?;
            }
            terms.push(log_p);
        }
        Ok(log_sum_exp(&terms))
    }
}

/// Sample mean and convex MAP covariance `lambda * prior + (1 - lambda) / N * scatter`.
pub fn map_update(
    prior: &DMatrix<f64>,
    samples: &[DVector<f64>],
    lambda: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let k = prior.nrows();
    let mean = samples.iter().fold(DVector::zeros(k), |acc, w| acc + w) / n;
    let mut scatter = DMatrix::zeros(k, k);
    for w in samples {
        let diff = w - &mean;
        scatter.ger(1.0, &diff, &diff, 1.0);
    }
    let mut cov = prior * lambda + scatter * ((1.0 - lambda) / n);
    symmetrize(&mut cov);
    (mean, cov)
}
