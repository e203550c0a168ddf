//! Synthetic-data sampler for the generative process, plus label matching
//! and recovery scoring against the planted ground truth.
//!
//! Randomness comes from ChaCha20 with one substream per latent block
//! (cluster means, regression vectors, assignments, inputs, outputs), so
//! extending T appends draws without perturbing earlier ones. Gaussian
//! vectors are the Cholesky factor of the covariance times standard normals
//! (ziggurat standard normals from rand_distr).

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::spd_cholesky;
use crate::model::{Dataset, Hyperparameters, VariationalPosterior};

/// Substream ids, one per latent block of the generative process.
mod stream {
    pub const MU: u64 = 0;
    pub const BETA: u64 = 1;
    pub const ASSIGNMENT: u64 = 2;
    pub const X: u64 = 3;
    pub const Y: u64 = 4;
}

/// A sampled dataset together with the ground truth that generated it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub true_mu: Vec<DVector<f64>>,
    pub true_beta: Vec<DVector<f64>>,
    pub true_assignments: Vec<usize>,
    pub seed: u64,
}

fn substream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_vector(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    field: &str,
    rng: &mut ChaCha20Rng,
) -> Result<DVector<f64>> {
    let l = spd_cholesky(cov, field)?.l();
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + l * z)
}

/// Samples mu_k ~ N(mu_k0, R_k0) and beta_k ~ N(beta_k0, Q_k0) once per
/// cluster, then per observation: c_t ~ Cat(pi), x_t ~ N(mu_c, M),
/// y_{t+1} ~ N(x_t'beta_c, sigma^2). The intercept coordinate of x_t, when
/// configured, is forced to exactly 1 after sampling.
pub fn sample_dataset(h: &Hyperparameters, t: usize, seed: u64) -> Result<SyntheticDataset> {
    if t == 0 {
        return Err(Error::InvalidValue {
            field: "T".to_string(),
            reason: "must be positive".to_string(),
        });
    }
    let mut mu_rng = substream(seed, stream::MU);
    let mut beta_rng = substream(seed, stream::BETA);
    let mut c_rng = substream(seed, stream::ASSIGNMENT);
    let mut x_rng = substream(seed, stream::X);
    let mut y_rng = substream(seed, stream::Y);

    let mut true_mu = Vec::with_capacity(h.k);
    let mut true_beta = Vec::with_capacity(h.k);
    for k in 0..h.k {
        true_mu.push(gaussian_vector(
            &h.mu0[k],
            &h.r0[k],
            &format!("R0[{k}]"),
            &mut mu_rng,
        )?);
        true_beta.push(gaussian_vector(
            &h.beta0[k],
            &h.q0[k],
            &format!("Q0[{k}]"),
            &mut beta_rng,
        )?);
    }

    let mut assignments = Vec::with_capacity(t);
    let mut x = DMatrix::zeros(t, h.n);
    let mut y = DVector::zeros(t);
    for row in 0..t {
        let u: f64 = c_rng.gen();
        let mut acc = 0.0;
        let mut c = h.k - 1;
        for (k, &p) in h.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                c = k;
                break;
            }
        }
        assignments.push(c);
        let mut xt = gaussian_vector(&true_mu[c], &h.m, "M", &mut x_rng)?;
        if let Some(idx) = h.intercept_index {
            xt[idx] = 1.0;
        }
        let noise: f64 = y_rng.sample(StandardNormal);
        y[row] = xt.dot(&true_beta[c]) + h.sigma * noise;
        x.row_mut(row).copy_from(&xt.transpose());
    }

    Ok(SyntheticDataset {
        dataset: Dataset { x, y },
        true_mu,
        true_beta,
        true_assignments: assignments,
        seed,
    })
}

/// Permutation of cluster labels minimizing the total squared distance
/// between fitted and true cluster means, by exhaustive search (K <= 8).
/// `perm[k]` is the fitted index matched to true cluster k.
pub fn match_clusters(
    truth: &SyntheticDataset,
    post: &VariationalPosterior,
) -> Result<Vec<usize>> {
    let k = truth.true_mu.len();
    if k > 8 {
        return Err(Error::TooManyClusters(k));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let cost: f64 = (0..k)
            .map(|i| (&post.mu_hat[perm[i]] - &truth.true_mu[i]).norm_squared())
            .sum();
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, perm));
        }
    }
    Ok(best.unwrap().1)
}

/// Recovery scores after label matching.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryMetrics {
    pub max_mu_err: f64,
    pub max_beta_err: f64,
    pub assignment_accuracy: f64,
}

/// Max infinity-norm errors of the permuted cluster means and regression
/// vectors, plus the fraction of observations whose argmax responsibility
/// (ties to the lowest index) matches the planted assignment.
pub fn recovery_metrics(
    truth: &SyntheticDataset,
    post: &VariationalPosterior,
    perm: &[usize],
) -> RecoveryMetrics {
    let k = truth.true_mu.len();
    let mut max_mu_err = 0.0f64;
    let mut max_beta_err = 0.0f64;
    for i in 0..k {
        let mu_err = (&post.mu_hat[perm[i]] - &truth.true_mu[i]).abs().max();
        let beta_err = (&post.beta_hat[perm[i]] - &truth.true_beta[i]).abs().max();
        max_mu_err = max_mu_err.max(mu_err);
        max_beta_err = max_beta_err.max(beta_err);
    }
    // inverse permutation: fitted index -> true index
    let mut inv = vec![0usize; k];
    for (true_idx, &fit_idx) in perm.iter().enumerate() {
        inv[fit_idx] = true_idx;
    }
    let t = truth.true_assignments.len();
    let mut correct = 0usize;
    for row in 0..t {
        let mut arg = 0usize;
        let mut best = f64::NEG_INFINITY;
        for col in 0..k {
            let p = post.phi[(row, col)];
            if p > best {
                best = p;
                arg = col;
            }
        }
        if inv[arg] == truth.true_assignments[row] {
            correct += 1;
        }
    }
    RecoveryMetrics {
        max_mu_err,
        max_beta_err,
        assignment_accuracy: correct as f64 / t as f64,
    }
}
