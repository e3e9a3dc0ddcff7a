//! Normalized Gaussian radial basis functions on a phase variable in `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub n_basis: usize,
    pub state_dim: usize,
    /// Width `h` in squared-phase units.
    pub bandwidth: f64,
    pub centers: Vec<f64>,
}

impl BasisConfig {
    /// Evenly spaced centers on `[0, 1]` with `h = 0.5 * spacing^2`.
    pub fn new(n_basis: usize, state_dim: usize) -> Result<Self> {
        if n_basis == 0 || state_dim == 0 {
            return Err(Error::domain("n_basis and state_dim must be positive"));
        }
        let (centers, bandwidth) = if n_basis == 1 {
            (vec![0.5], 1.0)
        } else {
            let step = 1.0 / (n_basis - 1) as f64;
            let centers = (0..n_basis).map(|i| i as f64 * step).collect();
            (centers, 0.5 * step * step)
        };
        Ok(Self {
            n_basis,
            state_dim,
            bandwidth,
            centers,
        })
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        self.bandwidth = bandwidth;
        self.validate()?;
        Ok(self)
    }

    /// Length of the stacked weight vector, `d * n`.
    pub fn weight_dim(&self) -> usize {
        self.n_basis * self.state_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 || self.state_dim == 0 {
            return Err(Error::domain("n_basis and state_dim must be positive"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::domain(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if self.centers.len() != self.n_basis {
            return Err(Error::domain(format!(
                "expected {} centers, got {}",
                self.n_basis,
                self.centers.len()
            )));
        }
        if self.n_basis >= 2 {
            let first = self.centers[0];
            let last = self.centers[self.n_basis - 1];
            if first != 0.0 || last != 1.0 {
                return Err(Error::domain("centers must start at 0 and end at 1"));
            }
            if self.centers.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::domain("centers must be strictly increasing"));
            }
        }
        Ok(())
    }
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self::new(10, 3).expect("default basis is valid")
    }
}

fn check_phase(phase: f64) -> Result<()> {
    if (0.0..=1.0).contains(&phase) {
        Ok(())
    } else {
        Err(Error::domain(format!("phase {phase} outside [0, 1]")))
    }
}

/// Evaluates the `n_basis` normalized activations at `phase`.
pub fn rbf_features(phase: f64, cfg: &BasisConfig) -> Result<DVector<f64>> {
    check_phase(phase)?;
    let exponents: Vec<f64> = cfg
        .centers
        .iter()
        .map(|c| -(phase - c).powi(2) / (2.0 * cfg.bandwidth))
        .collect();
    // shift by the max exponent so the largest activation is exactly 1 before normalizing
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw = DVector::from_iterator(cfg.n_basis, exponents.iter().map(|e| (e - shift).exp()));
    let total = raw.sum();
    Ok(raw / total)
}

/// Block-diagonal `d x (d * n)` feature matrix `Psi_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn feature_matrix(phase: f64, cfg: &BasisConfig) -> Result<FeatureMatrix> {
    let row = rbf_features(phase, cfg)?;
    let n = cfg.n_basis;
    let mut psi = DMatrix::zeros(cfg.state_dim, cfg.weight_dim());
    for dim in 0..cfg.state_dim {
        for k in 0..n {
            psi[(dim, dim * n + k)] = row[k];
        }
    }
    Ok(FeatureMatrix(psi))
}

/// Evenly spaced phases from 0 to 1 inclusive.
pub fn phase_schedule(n_timesteps: usize) -> Result<Vec<f64>> {
    if n_timesteps < 2 {
        return Err(Error::domain(format!(
            "need at least 2 timesteps, got {n_timesteps}"
        )));
    }
    let last = (n_timesteps - 1) as f64;
    Ok((0..n_timesteps).map(|i| i as f64 / last).collect())
}
