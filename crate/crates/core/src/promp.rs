//! A single probabilistic movement primitive: a Gaussian over basis weights.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{feature_matrix, phase_schedule, rbf_features, BasisConfig};
use crate::linalg::{cholesky, symmetrize};
use crate::{Error, Result};

/// Timestep-ordered states, one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(states: DMatrix<f64>) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::domain(format!(
                "trajectory needs at least 2 timesteps, got {}",
                states.nrows()
            )));
        }
        if states.ncols() == 0 {
            return Err(Error::domain("trajectory state dimension is zero"));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("trajectory contains non-finite entries"));
        }
        Ok(Self { states })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain("trajectory rows have differing lengths"));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, t: usize) -> DVector<f64> {
        self.states.row(t).transpose()
    }

    pub fn last(&self) -> DVector<f64> {
        self.state(self.len() - 1)
    }
}

/// Weight-space Gaussian plus the bookkeeping the MAP update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PrompParams {
    pub mean_w: DVector<f64>,
    pub cov_w: DMatrix<f64>,
    pub n_samples: usize,
    pub prev_cov: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

impl PrompParams {
    pub fn weight_dim(&self) -> usize {
        self.mean_w.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Per-dimension ridge regression of the trajectory onto the basis.
///
/// Weights are stacked dimension-major: the first `n_basis` entries belong
/// to state dimension 0, and so on.
pub fn fit_weights(traj: &Trajectory, cfg: &BasisConfig, ridge: f64) -> Result<DVector<f64>> {
    cfg.validate()?;
    if !(ridge > 0.0) {
        return Err(Error::domain(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    if traj.state_dim() != cfg.state_dim {
        return Err(Error::domain(format!(
            "trajectory has dimension {}, basis expects {}",
            traj.state_dim(),
            cfg.state_dim
        )));
    }
    let phases = phase_schedule(traj.len())?;
    let n = cfg.n_basis;
    let mut phi = DMatrix::zeros(traj.len(), n);
    for (t, &z) in phases.iter().enumerate() {
        phi.set_row(t, &rbf_features(z, cfg)?.transpose());
    }
    let gram = phi.transpose() * &phi + DMatrix::identity(n, n) * ridge;
    let chol = cholesky(&gram, "regularized Gram matrix")?;
    let rhs = phi.transpose() * traj.states();
    let blocks = chol.solve(&rhs);
    Ok(DVector::from_iterator(
        cfg.weight_dim(),
        (0..cfg.state_dim).flat_map(|dim| blocks.column(dim).iter().copied().collect::<Vec<_>>()),
    ))
}

/// Fresh primitive from a single weight vector with an isotropic covariance.
pub fn init_promp(
    w: DVector<f64>,
    gamma: f64,
    sigma0: f64,
    obs_noise: DMatrix<f64>,
) -> Result<PrompParams> {
    if !(gamma > 0.0) || !(sigma0 > 0.0) {
        return Err(Error::domain(format!(
            "gamma and sigma0 must be positive, got {gamma} and {sigma0}"
        )));
    }
    let k = w.len();
    Ok(PrompParams {
        mean_w: w,
        cov_w: DMatrix::identity(k, k) * gamma,
        n_samples: 1,
        prev_cov: DMatrix::identity(k, k) * sigma0,
        obs_noise,
    })
}

/// State distribution at `phase` with the weights integrated out.
pub fn marginal_at(p: &PrompParams, phase: f64, cfg: &BasisConfig) -> Result<StateGaussian> {
    let psi = feature_matrix(phase, cfg)?.into_matrix();
    let mean = &psi * &p.mean_w;
    let mut cov = &psi * &p.cov_w * psi.transpose() + &p.obs_noise;
    symmetrize(&mut cov);
    Ok(StateGaussian { mean, cov })
}

/// Conditions the weight distribution on reaching `y_star` (covariance
/// `cov_star`) at `phase`.
pub fn condition(
    p: &PrompParams,
    phase: f64,
    y_star: &DVector<f64>,
    cov_star: &DMatrix<f64>,
    cfg: &BasisConfig,
) -> Result<PrompParams> {
    let psi = feature_matrix(phase, cfg)?.into_matrix();
    if y_star.len() != psi.nrows() || cov_star.shape() != (psi.nrows(), psi.nrows()) {
        return Err(Error::domain("waypoint dimension does not match the state"));
    }
    let cross = &p.cov_w * psi.transpose();
    let innovation_cov = cov_star + &psi * &cross;
    let chol = cholesky(&innovation_cov, "waypoint innovation covariance")?;
    let innovation = y_star - &psi * &p.mean_w;
    let mean_w = &p.mean_w + &cross * chol.solve(&innovation);
    let mut cov_w = &p.cov_w - &cross * chol.solve(&cross.transpose());
    symmetrize(&mut cov_w);
    Ok(PrompParams {
        mean_w,
        cov_w,
        n_samples: p.n_samples,
        prev_cov: p.prev_cov.clone(),
        obs_noise: p.obs_noise.clone(),
    })
}

/// Draws `count` weight vectors from `N(mean_w, cov_w)`.
pub fn sample_weights(p: &PrompParams, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let chol = cholesky(&p.cov_w, "weight covariance")?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = p.weight_dim();
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)));
            &p.mean_w + &l * z
        })
        .collect())
}

/// Mean trajectory `Psi_t mu_w` evaluated on `n_timesteps` evenly spaced phases.
pub fn mean_trajectory(
    p: &PrompParams,
    cfg: &BasisConfig,
    n_timesteps: usize,
) -> Result<Trajectory> {
    let phases = phase_schedule(n_timesteps)?;
    let mut states = DMatrix::zeros(n_timesteps, cfg.state_dim);
    for (t, &z) in phases.iter().enumerate() {
        let psi = feature_matrix(z, cfg)?.into_matrix();
        states.set_row(t, &(psi * &p.mean_w).transpose());
    }
    Trajectory::new(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    fn random_spd(k: usize, rng: &mut ChaCha8Rng, floor: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v / (k as f64).sqrt()
        });
        &a * a.transpose() + DMatrix::identity(k, k) * floor
    }

    fn random_vec(k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(rng)))
    }

    fn params(mean: DVector<f64>, cov: DMatrix<f64>, d: usize) -> PrompParams {
        let k = mean.len();
        PrompParams {
            mean_w: mean,
            cov_w: cov,
            n_samples: 1,
            prev_cov: DMatrix::identity(k, k) * 1e-4,
            obs_noise: DMatrix::identity(d, d) * 1e-4,
        }
    }

    /// Stacked regression solved as one dense system with LU.
    fn normal_equation_oracle(traj: &Trajectory, cfg: &BasisConfig, ridge: f64) -> DVector<f64> {
        let t_len = traj.len();
        let d = cfg.state_dim;
        let phases = phase_schedule(t_len).unwrap();
        let mut a = DMatrix::zeros(t_len * d, cfg.weight_dim());
        let mut y = DVector::zeros(t_len * d);
        for (t, &z) in phases.iter().enumerate() {
            let psi = feature_matrix(z, cfg).unwrap().into_matrix();
            for dim in 0..d {
                a.set_row(t * d + dim, &psi.row(dim));
                y[t * d + dim] = traj.states()[(t, dim)];
            }
        }
        let lhs =
            a.transpose() * &a + DMatrix::identity(cfg.weight_dim(), cfg.weight_dim()) * ridge;
        lhs.lu().solve(&(a.transpose() * y)).unwrap()
    }

    #[test]
    fn constant_trajectory_is_reproduced() {
        let cfg = BasisConfig::default();
        let traj = Trajectory::from_rows(&vec![vec![1.0, 2.0, 3.0]; 40]).unwrap();
        let w = fit_weights(&traj, &cfg, 1e-8).unwrap();
        for z in phase_schedule(40).unwrap() {
            let y = feature_matrix(z, &cfg).unwrap().into_matrix() * &w;
            for (got, want) in y.iter().zip([1.0, 2.0, 3.0]) {
                assert!((got - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn fit_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = BasisConfig::default();
        for _ in 0..5 {
            let states = DMatrix::from_fn(50, 3, |_, _| StandardNormal.sample(&mut rng));
            let traj = Trajectory::new(states).unwrap();
            let w = fit_weights(&traj, &cfg, 1e-6).unwrap();
            let oracle = normal_equation_oracle(&traj, &cfg, 1e-6);
            let rel = (&w - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-8, "relative error {rel}");
        }
    }

    #[test]
    fn minimum_jerk_profile_fits_closely() {
        let cfg = BasisConfig::new(10, 1).unwrap();
        let phases = phase_schedule(50).unwrap();
        let rows: Vec<Vec<f64>> = phases
            .iter()
            .map(|&u| vec![0.2 + 0.5 * (10.0 * u.powi(3) - 15.0 * u.powi(4) + 6.0 * u.powi(5))])
            .collect();
        let traj = Trajectory::from_rows(&rows).unwrap();
        let w = fit_weights(&traj, &cfg, 1e-6).unwrap();
        let recon = mean_trajectory(&params(w, DMatrix::identity(10, 10), 1), &cfg, 50).unwrap();
        let err = (recon.states() - traj.states()).abs().max();
        // measured once at 9.6e-5 for this 0.5 m displacement
        assert!(err < 1e-2, "max reconstruction error {err}");
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let cfg = BasisConfig::default();
        let traj = Trajectory::from_rows(&vec![vec![0.0, 0.0, 0.0]; 10]).unwrap();
        assert!(fit_weights(&traj, &cfg, 0.0).is_err());
        let narrow = Trajectory::from_rows(&vec![vec![0.0]; 10]).unwrap();
        assert!(fit_weights(&narrow, &cfg, 1e-6).is_err());
        assert!(Trajectory::from_rows(&[vec![0.0]]).is_err());
        assert!(Trajectory::from_rows(&[vec![f64::NAN], vec![0.0]]).is_err());
    }

    #[test]
    fn init_sets_isotropic_covariances() {
        let w = DVector::zeros(4);
        let p = init_promp(w.clone(), 1.0, 1e-4, DMatrix::identity(2, 2)).unwrap();
        assert_eq!(p.cov_w, DMatrix::identity(4, 4));
        assert_eq!(p.prev_cov, DMatrix::identity(4, 4) * 1e-4);
        assert_eq!(p.mean_w, w);
        assert_eq!(p.n_samples, 1);
        let v = DVector::from_vec(vec![0.3, -1.7, 2.5, 1e-9]);
        assert_eq!(
            init_promp(v.clone(), 2.0, 1.0, DMatrix::identity(2, 2))
                .unwrap()
                .mean_w,
            v
        );
        assert!(init_promp(w.clone(), 0.0, 1.0, DMatrix::identity(2, 2)).is_err());
        assert!(init_promp(w, 1.0, -1.0, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn marginal_with_zero_weight_covariance_is_noise() {
        let cfg = BasisConfig::default();
        let mut p = params(DVector::zeros(30), DMatrix::zeros(30, 30), 3);
        p.obs_noise = DMatrix::identity(3, 3);
        let m = marginal_at(&p, 0.4, &cfg).unwrap();
        assert_eq!(m.cov, DMatrix::identity(3, 3));
    }

    #[test]
    fn marginal_matches_explicit_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BasisConfig::default();
        let p = params(random_vec(30, &mut rng), random_spd(30, &mut rng, 0.01), 3);
        for phase in [0.0, 0.37, 1.0] {
            let m = marginal_at(&p, phase, &cfg).unwrap();
            let psi = feature_matrix(phase, &cfg).unwrap().into_matrix();
            let mut cov = DMatrix::zeros(3, 3);
            for a in 0..3 {
                for b in 0..3 {
                    let mut acc = p.obs_noise[(a, b)];
                    for i in 0..30 {
                        for j in 0..30 {
                            acc += psi[(a, i)] * p.cov_w[(i, j)] * psi[(b, j)];
                        }
                    }
                    cov[(a, b)] = acc;
                }
            }
            assert!((&m.cov - &cov).abs().max() < 1e-10);
            assert!((&m.mean - &psi * &p.mean_w).abs().max() < 1e-12);
            assert!(min_eigenvalue(&m.cov) >= 1e-4 - 1e-12);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = BasisConfig::default();
        let p = params(random_vec(30, &mut rng), random_spd(30, &mut rng, 0.01), 3);
        let psi = feature_matrix(0.6, &cfg).unwrap().into_matrix();
        let y = &psi * &p.mean_w;
        let post = condition(&p, 0.6, &y, &(DMatrix::identity(3, 3) * 1e-3), &cfg).unwrap();
        assert!((&post.mean_w - &p.mean_w).abs().max() < 1e-10);
        assert_eq!(post.n_samples, p.n_samples);
        assert_eq!(post.prev_cov, p.prev_cov);
        assert_eq!(post.obs_noise, p.obs_noise);
    }

    #[test]
    fn uninformative_waypoint_leaves_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = BasisConfig::default();
        let p = params(random_vec(30, &mut rng), random_spd(30, &mut rng, 0.01), 3);
        let y = random_vec(3, &mut rng);
        let post = condition(&p, 1.0, &y, &(DMatrix::identity(3, 3) * 1e12), &cfg).unwrap();
        assert!((&post.mean_w - &p.mean_w).norm() / p.mean_w.norm() < 1e-6);
        assert!((&post.cov_w - &p.cov_w).norm() / p.cov_w.norm() < 1e-6);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let cfg = BasisConfig::default();
        let p = params(DVector::zeros(30), DMatrix::zeros(30, 30), 3);
        let err = condition(&p, 0.5, &DVector::zeros(3), &DMatrix::zeros(3, 3), &cfg);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn sampling_is_seeded_and_centered() {
        let mean = DVector::from_vec(vec![0.5, -1.5]);
        let tight = params(mean.clone(), DMatrix::identity(2, 2) * 1e-18, 1);
        for s in sample_weights(&tight, 20, 3).unwrap() {
            assert!((s - &mean).abs().max() < 1e-8);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = random_spd(2, &mut rng, 0.1);
        let p = params(mean.clone(), cov.clone(), 1);
        assert_eq!(
            sample_weights(&p, 5, 42).unwrap(),
            sample_weights(&p, 5, 42).unwrap()
        );

        let draws = sample_weights(&p, 10_000, 99).unwrap();
        let avg = draws.iter().fold(DVector::zeros(2), |acc, w| acc + w) / 10_000.0;
        for i in 0..2 {
            let bound = 5.0 * cov[(i, i)].sqrt() / 100.0;
            assert!((avg[i] - mean[i]).abs() < bound);
        }
        assert!(sample_weights(&p, 0, 1).is_err());
    }
}
