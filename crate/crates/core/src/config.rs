//! JSON configuration carrying all hyperparameters and run options. Missing
//! keys fall back to documented defaults; unknown keys are rejected, and
//! semantic violations report a JSON-pointer path.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::BacktestOptions;
use crate::cavi::FitOptions;
use crate::error::{Error, Result};
use crate::features::ReturnKind;
use crate::model::{validate_hyperparameters, Hyperparameters};

/// Fully resolved configuration. Serializing and re-parsing a resolved
/// config is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub sigma: f64,
    pub pi: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub mu0: Vec<Vec<f64>>,
    #[serde(rename = "R0")]
    pub r0: Vec<Vec<Vec<f64>>>,
    pub beta0: Vec<Vec<f64>>,
    #[serde(rename = "Q0")]
    pub q0: Vec<Vec<Vec<f64>>>,
    pub intercept_index: Option<usize>,
    pub window: usize,
    pub restarts: usize,
    pub rel_tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    pub refit_every: usize,
    pub returns: ReturnKind,
}

/// Raw file schema: every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    #[serde(rename = "K")]
    k: Option<usize>,
    n: Option<usize>,
    sigma: Option<f64>,
    pi: Option<Vec<f64>>,
    #[serde(rename = "M")]
    m: Option<Vec<Vec<f64>>>,
    mu0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R0")]
    r0: Option<Vec<Vec<Vec<f64>>>>,
    beta0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q0")]
    q0: Option<Vec<Vec<Vec<f64>>>>,
    intercept_index: Option<Option<usize>>,
    window: Option<usize>,
    restarts: Option<usize>,
    rel_tol: Option<f64>,
    max_sweeps: Option<usize>,
    seed: Option<u64>,
    refit_every: Option<usize>,
    returns: Option<ReturnKind>,
}

fn identity_with_slot(n: usize, slot: Option<usize>, slot_value: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
    }
    if let Some(idx) = slot {
        if idx < n {
            m[idx][idx] = slot_value;
        }
    }
    m
}

impl Config {
    /// The documented defaults: K = 3, a three-feature-plus-intercept input
    /// (n = 4, intercept last), sigma = 1, uniform pi, zero prior means,
    /// identity covariances with the intercept slot of M and R0 at 1e-6.
    pub fn defaults() -> Self {
        Self::resolve(PartialConfig::default()).expect("defaults are valid")
    }

    fn resolve(p: PartialConfig) -> Result<Self> {
        let k = p.k.unwrap_or(3);
        if k == 0 {
            return Err(Error::Config {
                pointer: "/K".to_string(),
                reason: "must be a positive integer".to_string(),
            });
        }
        let n = p.n.unwrap_or(4);
        if n == 0 {
            return Err(Error::Config {
                pointer: "/n".to_string(),
                reason: "must be a positive integer".to_string(),
            });
        }
        let intercept_index = match p.intercept_index {
            Some(v) => v,
            None => Some(n - 1),
        };
        let cfg = Config {
            k,
            n,
            sigma: p.sigma.unwrap_or(1.0),
            pi: p.pi.unwrap_or_else(|| vec![1.0 / k as f64; k]),
            m: p.m
                .unwrap_or_else(|| identity_with_slot(n, intercept_index, 1e-6)),
            mu0: p.mu0.unwrap_or_else(|| vec![vec![0.0; n]; k]),
            r0: p.r0.unwrap_or_else(|| {
                vec![identity_with_slot(n, intercept_index, 1e-6); k]
            }),
            beta0: p.beta0.unwrap_or_else(|| vec![vec![0.0; n]; k]),
            q0: p
                .q0
                .unwrap_or_else(|| vec![identity_with_slot(n, None, 1.0); k]),
            intercept_index,
            window: p.window.unwrap_or(250),
            restarts: p.restarts.unwrap_or(8),
            rel_tol: p.rel_tol.unwrap_or(1e-8),
            max_sweeps: p.max_sweeps.unwrap_or(500),
            seed: p.seed.unwrap_or(0),
            refit_every: p.refit_every.unwrap_or(1),
            returns: p.returns.unwrap_or_default(),
        };
        if cfg.restarts == 0 {
            return Err(Error::Config {
                pointer: "/restarts".to_string(),
                reason: "must be >= 1".to_string(),
            });
        }
        if cfg.max_sweeps == 0 {
            return Err(Error::Config {
                pointer: "/max_sweeps".to_string(),
                reason: "must be >= 1".to_string(),
            });
        }
        if cfg.refit_every == 0 {
            return Err(Error::Config {
                pointer: "/refit_every".to_string(),
                reason: "must be >= 1".to_string(),
            });
        }
        Ok(cfg)
    }

    fn matrix(rows: &[Vec<f64>], n: usize, pointer: &str) -> Result<DMatrix<f64>> {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config {
                pointer: pointer.to_string(),
                reason: format!("expected an {n}x{n} matrix"),
            });
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Converts to validated model hyperparameters.
    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        let check_k = |len: usize, pointer: &str| -> Result<()> {
            if len != self.k {
                return Err(Error::Config {
                    pointer: pointer.to_string(),
                    reason: format!("expected {} per-cluster entries, got {len}", self.k),
                });
            }
            Ok(())
        };
        check_k(self.mu0.len(), "/mu0")?;
        check_k(self.r0.len(), "/R0")?;
        check_k(self.beta0.len(), "/beta0")?;
        check_k(self.q0.len(), "/Q0")?;
        let vector = |v: &Vec<f64>, pointer: &str| -> Result<DVector<f64>> {
            if v.len() != self.n {
                return Err(Error::Config {
                    pointer: pointer.to_string(),
                    reason: format!("expected length {}, got {}", self.n, v.len()),
                });
            }
            Ok(DVector::from_column_slice(v))
        };
        let h = Hyperparameters {
            k: self.k,
            n: self.n,
            pi: self.pi.clone(),
            sigma: self.sigma,
            m: Self::matrix(&self.m, self.n, "/M")?,
            mu0: self
                .mu0
                .iter()
                .enumerate()
                .map(|(i, v)| vector(v, &format!("/mu0/{i}")))
                .collect::<Result<_>>()?,
            r0: self
                .r0
                .iter()
                .enumerate()
                .map(|(i, m)| Self::matrix(m, self.n, &format!("/R0/{i}")))
                .collect::<Result<_>>()?,
            beta0: self
                .beta0
                .iter()
                .enumerate()
                .map(|(i, v)| vector(v, &format!("/beta0/{i}")))
                .collect::<Result<_>>()?,
            q0: self
                .q0
                .iter()
                .enumerate()
                .map(|(i, m)| Self::matrix(m, self.n, &format!("/Q0/{i}")))
                .collect::<Result<_>>()?,
            intercept_index: self.intercept_index,
        };
        validate_hyperparameters(crate::model::symmetrize_hyperparameters(h))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_sweeps: self.max_sweeps,
            rel_tol: self.rel_tol,
            restarts: self.restarts,
            seed: self.seed,
        }
    }

    pub fn backtest_options(&self) -> BacktestOptions {
        BacktestOptions {
            window: self.window,
            refit_every: self.refit_every,
        }
    }
}

/// Parses a JSON config from a string, filling defaults.
pub fn parse_config_str(text: &str) -> Result<Config> {
    let partial: PartialConfig = serde_json::from_str(text).map_err(|e| Error::Config {
        pointer: "/".to_string(),
        reason: e.to_string(),
    })?;
    Config::resolve(partial)
}

/// Parses a JSON config file, filling defaults.
pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}
