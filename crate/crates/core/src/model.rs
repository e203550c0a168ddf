//! Domain types for the clusterwise regression model: fixed hyperparameters,
//! observed data, the fitted variational posterior, and the predictive
//! mixture. All types are immutable value objects after validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{spd_cholesky, symmetrize};

/// Fixed model constants: cluster count, cluster prior, noise scale, the
/// shared within-cluster input covariance, and per-cluster Gaussian priors on
/// the cluster mean and the regression vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub k: usize,
    pub n: usize,
    /// Cluster prior pi_k; fixed, never updated.
    pub pi: Vec<f64>,
    /// Output noise standard deviation.
    pub sigma: f64,
    /// Within-cluster input covariance, shared by all clusters.
    pub m: DMatrix<f64>,
    pub mu0: Vec<DVector<f64>>,
    pub r0: Vec<DMatrix<f64>>,
    pub beta0: Vec<DVector<f64>>,
    pub q0: Vec<DMatrix<f64>>,
    /// Index of the constant-1 slot of x, if the model carries an intercept.
    pub intercept_index: Option<usize>,
}

impl Hyperparameters {
    /// Uniform-prior constructor used by tests and the config defaults:
    /// pi uniform, mu0 = 0, beta0 = 0, M = R0 = Q0 = I (with the intercept
    /// slot of M and R0 shrunk to 1e-6 when an intercept index is given).
    pub fn default_with(k: usize, n: usize, sigma: f64, intercept_index: Option<usize>) -> Self {
        let mut m = DMatrix::identity(n, n);
        let mut r0 = DMatrix::identity(n, n);
        if let Some(idx) = intercept_index {
            m[(idx, idx)] = 1e-6;
            r0[(idx, idx)] = 1e-6;
        }
        Hyperparameters {
            k,
            n,
            pi: vec![1.0 / k as f64; k],
            sigma,
            m,
            mu0: vec![DVector::zeros(n); k],
            r0: vec![r0; k],
            beta0: vec![DVector::zeros(n); k],
            q0: vec![DMatrix::identity(n, n); k],
            intercept_index,
        }
    }
}

fn check_dim_vec(v: &DVector<f64>, n: usize, context: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

fn check_spd(a: &DMatrix<f64>, n: usize, field: &str) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: field.to_string(),
            expected: n,
            actual: a.nrows().max(a.ncols()),
        });
    }
    spd_cholesky(a, field)?;
    Ok(())
}

/// Validates all type invariants and returns the hyperparameters unchanged
/// (matrices symmetrized before the SPD checks). Idempotent.
pub fn validate_hyperparameters(h: Hyperparameters) -> Result<Hyperparameters> {
    if h.k == 0 {
        return Err(Error::InvalidValue {
            field: "K".to_string(),
            reason: "must be positive".to_string(),
        });
    }
    if h.n == 0 {
        return Err(Error::InvalidValue {
            field: "n".to_string(),
            reason: "must be positive".to_string(),
        });
    }
    if h.pi.len() != h.k {
        return Err(Error::DimensionMismatch {
            context: "pi".to_string(),
            expected: h.k,
            actual: h.pi.len(),
        });
    }
    let sum: f64 = h.pi.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || h.pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::NotASimplex { sum });
    }
    if h.sigma.is_nan() || h.sigma <= 0.0 || !h.sigma.is_finite() {
        return Err(Error::InvalidValue {
            field: "sigma".to_string(),
            reason: format!("must be a positive real, got {}", h.sigma),
        });
    }
    check_spd(&h.m, h.n, "M")?;
    for (list, n_expected, name) in [(&h.mu0, h.k, "mu0"), (&h.beta0, h.k, "beta0")] {
        if list.len() != n_expected {
            return Err(Error::DimensionMismatch {
                context: name.to_string(),
                expected: n_expected,
                actual: list.len(),
            });
        }
    }
    if h.r0.len() != h.k || h.q0.len() != h.k {
        return Err(Error::DimensionMismatch {
            context: "R0/Q0".to_string(),
            expected: h.k,
            actual: h.r0.len().min(h.q0.len()),
        });
    }
    for k in 0..h.k {
        check_dim_vec(&h.mu0[k], h.n, &format!("mu0[{k}]"))?;
        check_dim_vec(&h.beta0[k], h.n, &format!("beta0[{k}]"))?;
        check_spd(&h.r0[k], h.n, &format!("R0[{k}]"))?;
        check_spd(&h.q0[k], h.n, &format!("Q0[{k}]"))?;
    }
    if let Some(idx) = h.intercept_index {
        if idx >= h.n {
            return Err(Error::InvalidValue {
                field: "intercept_index".to_string(),
                reason: format!("{idx} out of range for n = {}", h.n),
            });
        }
    }
    Ok(h)
}

/// Paired observations: row t of `x` predicts entry t of `y` (the
/// (x_t, y_{t+1}) alignment).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let d = Dataset { x, y };
        d.validate(None)?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.x.row(t).transpose()
    }

    pub fn validate(&self, intercept_index: Option<usize>) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::InvalidValue {
                field: "x".to_string(),
                reason: "T must be >= 1".to_string(),
            });
        }
        if self.x.nrows() != self.y.len() {
            return Err(Error::DimensionMismatch {
                context: "y".to_string(),
                expected: self.x.nrows(),
                actual: self.y.len(),
            });
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                field: "dataset".to_string(),
                reason: "contains NaN or Inf".to_string(),
            });
        }
        if let Some(idx) = intercept_index {
            if idx >= self.x.ncols() {
                return Err(Error::InvalidValue {
                    field: "intercept_index".to_string(),
                    reason: format!("{idx} out of range for n = {}", self.x.ncols()),
                });
            }
            if self.x.column(idx).iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidValue {
                    field: "x".to_string(),
                    reason: format!("column {idx} is not identically 1"),
                });
            }
        }
        Ok(())
    }
}

/// Fitted variational parameters: responsibilities phi (T x K) plus per-
/// cluster Gaussian factors for the cluster mean and the regression vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    pub phi: DMatrix<f64>,
    pub mu_hat: Vec<DVector<f64>>,
    pub r_hat: Vec<DMatrix<f64>>,
    pub beta_hat: Vec<DVector<f64>>,
    pub q_hat: Vec<DMatrix<f64>>,
}

impl VariationalPosterior {
    pub fn k(&self) -> usize {
        self.mu_hat.len()
    }

    /// Checks the simplex invariant on phi rows and the SPD invariant on the
    /// covariance factors.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.phi.nrows() {
            let row_sum: f64 = self.phi.row(t).iter().sum();
            if (row_sum - 1.0).abs() > 1e-10
                || self.phi.row(t).iter().any(|&p| !(0.0..=1.0).contains(&p))
            {
                return Err(Error::InvalidValue {
                    field: "phi".to_string(),
                    reason: format!("row {t} not on the simplex (sum = {row_sum})"),
                });
            }
        }
        for k in 0..self.k() {
            spd_cholesky(&self.r_hat[k], &format!("R_hat[{k}]"))?;
            spd_cholesky(&self.q_hat[k], &format!("Q_hat[{k}]"))?;
        }
        Ok(())
    }
}

/// Result of a multi-restart fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub posterior: VariationalPosterior,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub restart_index: usize,
    pub seed: u64,
}

/// The forecast density of y_{t+1}: a K-component Gaussian mixture with
/// component variance sigma^2 + x'Q_hat x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictiveMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl PredictiveMixture {
    pub fn validate(&self, sigma: f64) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidValue {
                field: "weights".to_string(),
                reason: format!("sum = {sum}"),
            });
        }
        let floor = sigma * sigma;
        if self.variances.iter().any(|&v| v < floor - 1e-12) {
            return Err(Error::InvalidValue {
                field: "variances".to_string(),
                reason: "component variance below sigma^2".to_string(),
            });
        }
        Ok(())
    }
}

/// Symmetrizes each covariance-like field of `h` in place. Used by the config
/// loader before validation.
pub fn symmetrize_hyperparameters(mut h: Hyperparameters) -> Hyperparameters {
    h.m = symmetrize(&h.m);
    h.r0 = h.r0.iter().map(symmetrize).collect();
    h.q0 = h.q0.iter().map(symmetrize).collect();
    h
}
