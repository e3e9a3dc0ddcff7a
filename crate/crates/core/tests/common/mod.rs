#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const N_BASIS: usize = 10;
pub const STATE_DIM: usize = 3;

/// Block-diagonal feature matrix evaluated straight from the RBF definition.
pub fn psi(phase: f64) -> DMatrix<f64> {
    let h = 0.5 / 81.0;
    let raw: Vec<f64> = (0..N_BASIS)
        .map(|i| (-(phase - i as f64 / 9.0).powi(2) / (2.0 * h)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let mut m = DMatrix::zeros(STATE_DIM, STATE_DIM * N_BASIS);
    for d in 0..STATE_DIM {
        for k in 0..N_BASIS {
            m[(d, d * N_BASIS + k)] = raw[k] / total;
        }
    }
    m
}

/// Conditions `w ~ N(mean, cov)` on `y = psi w + e`, `e ~ N(0, cov_y)`,
/// observed at `y_obs`, by inverting the joint covariance of `(w, y)` and
/// reading the conditional off the precision blocks.
pub fn joint_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    y_obs: &DVector<f64>,
    cov_y: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len();
    let d = y_obs.len();
    let mut joint = DMatrix::zeros(n + d, n + d);
    joint.view_mut((0, 0), (n, n)).copy_from(cov);
    let cross = cov * psi.transpose();
    joint.view_mut((0, n), (n, d)).copy_from(&cross);
    joint.view_mut((n, 0), (d, n)).copy_from(&cross.transpose());
    joint
        .view_mut((n, n), (d, d))
        .copy_from(&(psi * cov * psi.transpose() + cov_y));
    let precision = joint.try_inverse().expect("joint covariance is invertible");
    let p_ww = precision.view((0, 0), (n, n)).into_owned();
    let p_wy = precision.view((0, n), (n, d)).into_owned();
    let cond_cov = p_ww
        .clone()
        .try_inverse()
        .expect("precision block is invertible");
    let cond_mean = mean - &cond_cov * p_wy * (y_obs - psi * mean);
    (cond_mean, cond_cov)
}

pub fn random_spd(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose()) * (scale / n as f64) + DMatrix::identity(n, n) * (0.1 * scale)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Gap between the two largest entries.
pub fn top_two_margin(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] - s.get(1).copied().unwrap_or(0.0)
}

/// Largest sample distance surviving the robust-z cut, by sorting.
pub fn sort_filter_threshold(values: &[f64], beta: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = |s: &[f64]| {
        let k = s.len();
        if k % 2 == 1 {
            s[k / 2]
        } else {
            0.5 * (s[k / 2 - 1] + s[k / 2])
        }
    };
    let m = mid(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = mid(&dev);
    if mad == 0.0 {
        return m;
    }
    v.into_iter()
        .rev()
        .find(|x| (x - m) / mad < beta)
        .unwrap_or(m)
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
