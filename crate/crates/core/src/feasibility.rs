//! Two-class feasible / infeasible formulation.
//!
//! The whole library is the feasible class; a Gaussian mixture over labeled
//! infeasible contexts is the other. Entropy of the two-class posterior is
//! highest where the two likelihoods cross.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::context::{normalize_log_weights, PlanarContext, TaskModel};
use crate::gmm::{fit_gmm_with_floor, GaussianMixture};
use crate::linalg::log_sum_exp;
use crate::sampler::{
    entropy, least_confident, minimum_margin, score_grid, CandidateGrid, Strategy,
};
use crate::{Error, Result};

/// One default grid position step, squared.
pub const DEFAULT_COV_FLOOR: f64 = 2.5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleModel {
    pub gmm: Option<GaussianMixture>,
    pub labeled: Vec<PlanarContext>,
    /// Likelihood used before any mixture has been fitted.
    pub density_floor: f64,
    /// Isotropic covariance floor of the fitted mixture.
    pub cov_floor: f64,
    pub n_components: usize,
    pub seed: u64,
}

impl Default for InfeasibleModel {
    fn default() -> Self {
        Self::new(1e-6, 1, 0).expect("defaults are valid")
    }
}

impl InfeasibleModel {
    pub fn new(density_floor: f64, n_components: usize, seed: u64) -> Result<Self> {
        if !(density_floor > 0.0) {
            return Err(Error::domain("density_floor must be positive"));
        }
        if n_components == 0 {
            return Err(Error::domain(
                "infeasible mixture needs at least one component",
            ));
        }
        Ok(Self {
            gmm: None,
            labeled: Vec::new(),
            density_floor,
            cov_floor: DEFAULT_COV_FLOOR,
            n_components,
            seed,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.gmm.is_some()
    }

    /// Fewest labels that support a fit: one per component, and never a
    /// single point.
    pub fn min_labels(&self) -> usize {
        self.n_components.max(2)
    }

    /// Records an infeasible context and refits once enough labels exist.
    pub fn label_infeasible(&mut self, eta: PlanarContext) -> Result<()> {
        self.labeled.push(eta);
        if self.labeled.len() >= self.min_labels() {
            let points: Vec<Vector3<f64>> = self.labeled.iter().map(|c| c.as_vector()).collect();
            self.gmm = Some(
                fit_gmm_with_floor(&points, self.n_components, self.seed, self.cov_floor)?.model,
            );
        }
        Ok(())
    }

    pub fn log_likelihood(&self, eta: &PlanarContext) -> Result<f64> {
        match &self.gmm {
            Some(g) => g.log_density(&eta.as_vector()),
            None => Ok(self.density_floor.ln()),
        }
    }
}

/// Log likelihood of `eta` under the library as one class: the grasp targets
/// evaluated under the trajectory mixture's state marginal at the task phase.
pub fn log_feasible_likelihood(eta: &PlanarContext, model: &TaskModel<'_>) -> Result<f64> {
    if model.n_classes() == 0 {
        return Err(Error::domain("library has no components"));
    }
    let terms = model
        .library
        .mix_coeffs
        .iter()
        .enumerate()
        .map(|(j, pi)| Ok(pi.ln() + model.log_marginal_task_density(eta, j)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms))
}

/// `(p_feasible, p_infeasible)` under a uniform class prior.
pub fn p_feasible_class(
    eta: &PlanarContext,
    model: &TaskModel<'_>,
    inf: &InfeasibleModel,
) -> Result<(f64, f64)> {
    let logs = [
        log_feasible_likelihood(eta, model)?,
        inf.log_likelihood(eta)?,
    ];
    let post = normalize_log_weights(&logs);
    Ok((post[0], post[1]))
}

pub fn two_class_entropy(
    eta: &PlanarContext,
    model: &TaskModel<'_>,
    inf: &InfeasibleModel,
) -> Result<f64> {
    let (f, i) = p_feasible_class(eta, model, inf)?;
    Ok(entropy(&[f, i]))
}

/// Grid scores when infeasible regions are modeled as a class of their own.
///
/// The posterior-based strategies score the two-class posterior
/// `(p_feasible, p_infeasible)`; GMD and Random score as usual.
pub fn score_grid_two_class(
    grid: &CandidateGrid,
    strategy: Strategy,
    model: &TaskModel<'_>,
    inf: &InfeasibleModel,
    seed: u64,
) -> Result<Vec<f64>> {
    if !strategy.uses_posterior() {
        return score_grid(grid, strategy, model, seed);
    }
    grid.contexts
        .par_iter()
        .map(|eta| {
            let (f, i) = p_feasible_class(eta, model, inf)?;
            let post = [f, i];
            Ok(match strategy {
                Strategy::LeastConfident => least_confident(&post),
                Strategy::MinimumMargin => minimum_margin(&post),
                _ => entropy(&post),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisConfig;
    use crate::context::{GraspModel, TaskTimestep};
    use crate::mixture::{Component, LearnerHyper, PrompLibrary};
    use crate::promp::{init_promp, marginal_at};
    use nalgebra::{DVector, Matrix3};

    fn library_at(poses: &[Vector3<f64>], gamma: f64) -> PrompLibrary {
        let mut lib = PrompLibrary::new(BasisConfig::default(), LearnerHyper::default()).unwrap();
        for pose in poses {
            let w = DVector::from_fn(30, |i, _| pose[i / 10]);
            let params = init_promp(w.clone(), gamma, 1e-4, lib.hyper.obs_noise_matrix()).unwrap();
            lib.components.push(Component {
                params,
                samples: vec![w],
            });
        }
        lib.refresh_mix_coeffs();
        lib
    }

    fn grasp() -> GraspModel {
        GaussianMixture::single(Vector3::zeros(), Matrix3::identity() * 1e-4)
    }

    #[test]
    fn equal_likelihoods_split_evenly() {
        let lib = library_at(&[Vector3::new(0.5, 0.0, 0.0)], 0.01);
        let gm = grasp();
        let model = TaskModel::new(&lib, &gm, TaskTimestep::default()).unwrap();
        let eta = PlanarContext::new(0.55, 0.02, 0.1);
        let floor = log_feasible_likelihood(&eta, &model).unwrap().exp();
        let inf = InfeasibleModel::new(floor, 1, 0).unwrap();
        let (f, i) = p_feasible_class(&eta, &model, &inf).unwrap();
        assert!((f - 0.5).abs() < 1e-9 && (i - 0.5).abs() < 1e-9);
        assert!((two_class_entropy(&eta, &model, &inf).unwrap() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn deep_in_feasible_region_is_feasible() {
        let lib = library_at(&[Vector3::new(0.5, 0.0, 0.0)], 1e-5);
        let gm = grasp();
        let model = TaskModel::new(&lib, &gm, TaskTimestep::default()).unwrap();
        let mut inf = InfeasibleModel::default();
        for k in 0..10 {
            inf.label_infeasible(PlanarContext::new(1.5 + 0.01 * k as f64, 0.0, 0.0))
                .unwrap();
        }
        let (f, i) = p_feasible_class(&PlanarContext::new(0.5, 0.0, 0.0), &model, &inf).unwrap();
        assert!(f > 0.9);
        assert!((f + i - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_peaks_at_the_one_dimensional_crossing() {
        let lib = library_at(&[Vector3::new(-0.5, 0.0, 0.0)], 0.01);
        let gm = grasp();
        let model = TaskModel::new(&lib, &gm, TaskTimestep::default()).unwrap();
        let marginal = marginal_at(lib.params(0), 1.0, &lib.cfg).unwrap();
        let cov = Matrix3::from_fn(|i, j| marginal.cov[(i, j)]);
        let inf = InfeasibleModel {
            gmm: Some(GaussianMixture::single(Vector3::new(0.5, 0.0, 0.0), cov)),
            ..InfeasibleModel::default()
        };

        let xs: Vec<f64> = (0..=40).map(|k| -1.0 + 0.05 * k as f64).collect();
        let grid = CandidateGrid::new(
            xs.iter()
                .map(|x| PlanarContext::new(*x, 0.0, 0.0))
                .collect(),
            0.05,
            1.0,
        )
        .unwrap();
        let scores =
            score_grid_two_class(&grid, Strategy::MaximumEntropy, &model, &inf, 0).unwrap();
        let best = crate::sampler::argmax_excluding(&scores, &Default::default()).unwrap();

        // brute-force scan of the two equal-variance Gaussians along x
        let var = cov[(0, 0)];
        let log_n = |x: f64, m: f64| -0.5 * (x - m).powi(2) / var;
        let crossing = xs
            .windows(2)
            .position(|w| {
                (log_n(w[0], -0.5) > log_n(w[0], 0.5)) != (log_n(w[1], -0.5) > log_n(w[1], 0.5))
            })
            .unwrap();
        assert!(
            (xs[best] - xs[crossing]).abs() <= 0.05 + 1e-12
                || (xs[best] - xs[crossing + 1]).abs() <= 0.05 + 1e-12
        );
        assert!(xs[best].abs() <= 0.05 + 1e-12, "argmax at {}", xs[best]);
        for s in &scores {
            assert!(*s <= 2f64.ln() + 1e-12);
        }
    }

    #[test]
    fn labels_accumulate_and_train() {
        let mut inf = InfeasibleModel::default();
        assert!(!inf.is_trained());
        inf.label_infeasible(PlanarContext::new(0.6, 0.0, 0.0))
            .unwrap();
        assert_eq!(inf.labeled.len(), 1);
        assert!(!inf.is_trained());
        assert_eq!(
            inf.log_likelihood(&PlanarContext::new(0.6, 0.0, 0.0))
                .unwrap(),
            1e-6f64.ln()
        );
        inf.label_infeasible(PlanarContext::new(0.65, 0.0, 0.0))
            .unwrap();
        assert!(inf.is_trained());

        let mut three = InfeasibleModel::new(1e-6, 3, 0).unwrap();
        three
            .label_infeasible(PlanarContext::new(0.6, 0.0, 0.0))
            .unwrap();
        three
            .label_infeasible(PlanarContext::new(0.7, 0.0, 0.0))
            .unwrap();
        assert!(!three.is_trained());
        three
            .label_infeasible(PlanarContext::new(0.8, 0.0, 0.0))
            .unwrap();
        assert!(three.is_trained());

        let mut inf = InfeasibleModel::default();
        for k in 0..30 {
            let a = k as f64 * 0.7;
            inf.label_infeasible(PlanarContext::new(
                0.6 + 0.03 * a.cos(),
                0.03 * a.sin(),
                0.1 * a.sin(),
            ))
            .unwrap();
            assert_eq!(inf.labeled.len(), k + 1);
        }
        let center = inf
            .log_likelihood(&PlanarContext::new(0.6, 0.0, 0.0))
            .unwrap();
        let away = inf
            .log_likelihood(&PlanarContext::new(1.1, 0.0, 0.0))
            .unwrap();
        assert_eq!(inf.labeled[0], PlanarContext::new(0.63, 0.0, 0.0));
        assert!(center > away);
    }

    #[test]
    fn empty_library_is_rejected() {
        let lib = PrompLibrary::new(BasisConfig::default(), LearnerHyper::default()).unwrap();
        let gm = grasp();
        let model = TaskModel::new(&lib, &gm, TaskTimestep::default()).unwrap();
        let inf = InfeasibleModel::default();
        assert!(p_feasible_class(&PlanarContext::new(0.0, 0.0, 0.0), &model, &inf).is_err());
    }
}
