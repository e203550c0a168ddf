//! Coordinate ascent for the variational posterior: responsibility updates,
//! cluster-moment updates, regression-moment updates, analytic ELBO
//! evaluation, and the multi-restart fit loop.
//!
//! One sweep applies the closed-form coordinate updates in order (phi, then
//! the cluster moments R_hat / mu_hat, then the regression moments
//! Q_hat / beta_hat) and each sweep can only increase the ELBO up to
//! floating-point slack.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, quad_form, spd_inverse, spd_log_det, symmetrize};
use crate::model::{Dataset, FitReport, Hyperparameters, VariationalPosterior};
use crate::parallel;

const LN_2PI: f64 = 1.8378770664093453;

/// Options for the multi-restart fit loop.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_sweeps: 500,
            rel_tol: 1e-8,
            restarts: 8,
            seed: 0,
        }
    }
}

/// Draws a uniform point on the K-simplex (symmetric Dirichlet with
/// concentration 1) as normalized Exp(1) draws.
fn simplex_point(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1).max(1e-300)).collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

/// k-means++-style D^2 seeding over the data rows: the first center is a
/// uniform row, each subsequent one is drawn with probability proportional to
/// its squared distance to the nearest chosen center. Already-chosen indices
/// are excluded, so the K seeds are distinct rows whenever possible.
fn d2_seed_indices(data: &Dataset, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let t = data.len();
    let mut chosen = vec![rng.gen_range(0..t)];
    let mut min_d2 = vec![f64::INFINITY; t];
    while chosen.len() < k {
        let last = data.row(*chosen.last().unwrap());
        for i in 0..t {
            let d = data.row(i) - &last;
            min_d2[i] = min_d2[i].min(d.norm_squared());
        }
        for &c in &chosen {
            min_d2[c] = 0.0;
        }
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = 0;
            for (i, &w) in min_d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining rows coincide with a center; take any unchosen index
            let unchosen: Vec<usize> = (0..t).filter(|i| !chosen.contains(i)).collect();
            unchosen[rng.gen_range(0..unchosen.len())]
        };
        chosen.push(next);
    }
    chosen
}

/// Initializes the variational parameters: random simplex rows for phi,
/// D^2-seeded data rows for mu_hat, priors for the covariance factors and
/// beta_hat. Deterministic for a fixed seed.
pub fn init_posterior(
    data: &Dataset,
    h: &Hyperparameters,
    seed: u64,
) -> Result<VariationalPosterior> {
    let t = data.len();
    if t < h.k {
        return Err(Error::TooFewObservations {
            observations: t,
            clusters: h.k,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut phi = DMatrix::zeros(t, h.k);
    for row in 0..t {
        let p = simplex_point(h.k, &mut rng);
        for (col, v) in p.into_iter().enumerate() {
            phi[(row, col)] = v;
        }
    }
    let seeds = d2_seed_indices(data, h.k, &mut rng);
    let mu_hat: Vec<DVector<f64>> = seeds.iter().map(|&i| data.row(i)).collect();
    Ok(VariationalPosterior {
        phi,
        mu_hat,
        r_hat: h.r0.clone(),
        beta_hat: h.beta0.clone(),
        q_hat: h.q0.clone(),
    })
}

/// Per-cluster coefficients of the log-responsibility, so the T-loop is a few
/// dot products per observation.
struct LogScoreCoeffs {
    log_pi: Vec<f64>,
    /// M^-1 mu_hat_k
    lin_x: Vec<DVector<f64>>,
    /// -1/2 tr(M^-1 (mu mu' + R_hat))
    const_k: Vec<f64>,
    /// beta_hat_k / sigma^2
    lin_y: Vec<DVector<f64>>,
    /// (beta beta' + Q_hat) / sigma^2
    quad_y: Vec<DMatrix<f64>>,
}

fn log_score_coeffs(post: &VariationalPosterior, h: &Hyperparameters) -> Result<LogScoreCoeffs> {
    let m_inv = spd_inverse(&h.m, "M")?;
    let inv_s2 = 1.0 / (h.sigma * h.sigma);
    let mut coeffs = LogScoreCoeffs {
        log_pi: h.pi.iter().map(|p| p.ln()).collect(),
        lin_x: Vec::with_capacity(h.k),
        const_k: Vec::with_capacity(h.k),
        lin_y: Vec::with_capacity(h.k),
        quad_y: Vec::with_capacity(h.k),
    };
    for k in 0..h.k {
        let mu = &post.mu_hat[k];
        let second_moment = mu * mu.transpose() + &post.r_hat[k];
        coeffs.lin_x.push(&m_inv * mu);
        coeffs.const_k.push(-0.5 * (&m_inv * second_moment).trace());
        coeffs.lin_y.push(&post.beta_hat[k] * inv_s2);
        let beta_second = &post.beta_hat[k] * post.beta_hat[k].transpose() + &post.q_hat[k];
        coeffs.quad_y.push(beta_second * inv_s2);
    }
    Ok(coeffs)
}

/// Responsibility update: softmax over clusters of
/// log pi_k + x'M^-1 mu_hat_k - 1/2 tr(M^-1 (mu mu' + R_hat)) +
/// y x'beta_hat_k / sigma^2 - 1/2 x'(beta beta' + Q_hat)x / sigma^2,
/// computed entirely in log space.
pub fn update_responsibilities(
    post: &VariationalPosterior,
    data: &Dataset,
    h: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let coeffs = log_score_coeffs(post, h)?;
    let t = data.len();
    let mut phi = DMatrix::zeros(t, h.k);
    let mut scores = vec![0.0; h.k];
    for row in 0..t {
        let x = data.row(row);
        let y = data.y[row];
        for k in 0..h.k {
            let s = coeffs.log_pi[k]
                + x.dot(&coeffs.lin_x[k])
                + coeffs.const_k[k]
                + y * x.dot(&coeffs.lin_y[k])
                - 0.5 * quad_form(&x, &coeffs.quad_y[k], &x);
            if !s.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite log responsibility at t = {row}, k = {k}"
                )));
            }
            scores[k] = s;
        }
        let norm = log_sum_exp(&scores)?;
        for k in 0..h.k {
            phi[(row, k)] = (scores[k] - norm).exp();
        }
        // renormalize so the row sums to 1 exactly up to one rounding step
        let row_sum: f64 = phi.row(row).iter().sum();
        for k in 0..h.k {
            phi[(row, k)] /= row_sum;
        }
    }
    Ok(phi)
}

/// Cluster-moment update:
/// R_hat_k = [R_k0^-1 + M^-1 sum_t phi_tk]^-1,
/// mu_hat_k = R_hat_k [R_k0^-1 mu_k0 + M^-1 sum_t phi_tk x_t].
/// A cluster with zero total responsibility returns its prior exactly.
pub fn update_cluster_moments(
    phi: &DMatrix<f64>,
    data: &Dataset,
    h: &Hyperparameters,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    let m_inv = spd_inverse(&h.m, "M")?;
    let mut r_hat = Vec::with_capacity(h.k);
    let mut mu_hat = Vec::with_capacity(h.k);
    for k in 0..h.k {
        let weight: f64 = phi.column(k).iter().sum();
        if weight == 0.0 {
            r_hat.push(h.r0[k].clone());
            mu_hat.push(h.mu0[k].clone());
            continue;
        }
        let r0_inv = spd_inverse(&h.r0[k], &format!("R0[{k}]"))?;
        let mut weighted_x = DVector::zeros(h.n);
        for t in 0..data.len() {
            weighted_x += data.row(t) * phi[(t, k)];
        }
        let precision = &r0_inv + &m_inv * weight;
        let r = spd_inverse(&precision, &format!("R_hat[{k}]"))?;
        let mu = &r * (&r0_inv * &h.mu0[k] + &m_inv * weighted_x);
        r_hat.push(symmetrize(&r));
        mu_hat.push(mu);
    }
    Ok((r_hat, mu_hat))
}

/// Regression-moment update:
/// Q_hat_k = [Q_k0^-1 + sigma^-2 sum_t phi_tk x_t x_t']^-1,
/// beta_hat_k = Q_hat_k [Q_k0^-1 beta_k0 + sigma^-2 sum_t phi_tk y_{t+1} x_t].
pub fn update_regression_moments(
    phi: &DMatrix<f64>,
    data: &Dataset,
    h: &Hyperparameters,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    let inv_s2 = 1.0 / (h.sigma * h.sigma);
    let mut q_hat = Vec::with_capacity(h.k);
    let mut beta_hat = Vec::with_capacity(h.k);
    for k in 0..h.k {
        let weight: f64 = phi.column(k).iter().sum();
        if weight == 0.0 {
            q_hat.push(h.q0[k].clone());
            beta_hat.push(h.beta0[k].clone());
            continue;
        }
        let q0_inv = spd_inverse(&h.q0[k], &format!("Q0[{k}]"))?;
        let mut scatter = DMatrix::zeros(h.n, h.n);
        let mut weighted_yx = DVector::zeros(h.n);
        for t in 0..data.len() {
            let x = data.row(t);
            scatter += &x * x.transpose() * phi[(t, k)];
            weighted_yx += x * (phi[(t, k)] * data.y[t]);
        }
        let precision = &q0_inv + scatter * inv_s2;
        let q = spd_inverse(&precision, &format!("Q_hat[{k}]"))?;
        let beta = &q * (&q0_inv * &h.beta0[k] + weighted_yx * inv_s2);
        q_hat.push(symmetrize(&q));
        beta_hat.push(beta);
    }
    Ok((q_hat, beta_hat))
}

/// Analytic ELBO, with all additive constants included so the converged K=1
/// value equals the exact conjugate log-evidence.
pub fn compute_elbo(
    post: &VariationalPosterior,
    data: &Dataset,
    h: &Hyperparameters,
) -> Result<f64> {
    let n = h.n as f64;
    let m_inv = spd_inverse(&h.m, "M")?;
    let log_det_m = spd_log_det(&h.m, "M")?;
    let inv_s2 = 1.0 / (h.sigma * h.sigma);
    let log_s2 = (h.sigma * h.sigma).ln();

    let mut elbo = 0.0;

    // Gaussian cross-entropies against the priors plus the q entropies:
    // together these are -KL(q_mu || p_mu) - KL(q_beta || p_beta).
    for k in 0..h.k {
        let r0_inv = spd_inverse(&h.r0[k], &format!("R0[{k}]"))?;
        let d_mu = &post.mu_hat[k] - &h.mu0[k];
        elbo += -0.5 * n * LN_2PI - 0.5 * spd_log_det(&h.r0[k], "R0")?
            - 0.5 * ((&r0_inv * &post.r_hat[k]).trace() + quad_form(&d_mu, &r0_inv, &d_mu));
        elbo += 0.5 * n * (1.0 + LN_2PI) + 0.5 * spd_log_det(&post.r_hat[k], "R_hat")?;

        let q0_inv = spd_inverse(&h.q0[k], &format!("Q0[{k}]"))?;
        let d_beta = &post.beta_hat[k] - &h.beta0[k];
        elbo += -0.5 * n * LN_2PI - 0.5 * spd_log_det(&h.q0[k], "Q0")?
            - 0.5 * ((&q0_inv * &post.q_hat[k]).trace() + quad_form(&d_beta, &q0_inv, &d_beta));
        elbo += 0.5 * n * (1.0 + LN_2PI) + 0.5 * spd_log_det(&post.q_hat[k], "Q_hat")?;
    }

    // Expected data log-likelihoods and the categorical terms.
    let mut mu_second = Vec::with_capacity(h.k);
    let mut beta_second = Vec::with_capacity(h.k);
    for k in 0..h.k {
        mu_second.push(&post.mu_hat[k] * post.mu_hat[k].transpose() + &post.r_hat[k]);
        beta_second.push(&post.beta_hat[k] * post.beta_hat[k].transpose() + &post.q_hat[k]);
    }
    for t in 0..data.len() {
        let x = data.row(t);
        let y = data.y[t];
        let x_m_x = quad_form(&x, &m_inv, &x);
        for k in 0..h.k {
            let p = post.phi[(t, k)];
            if p == 0.0 {
                continue;
            }
            // categorical prior and q_c entropy (0 log 0 := 0)
            elbo += p * h.pi[k].ln();
            elbo -= p * p.ln();
            // E_q[log p(x_t | mu, c_t = k)]
            elbo += p
                * (-0.5 * n * LN_2PI - 0.5 * log_det_m
                    - 0.5
                        * (x_m_x - 2.0 * quad_form(&x, &m_inv, &post.mu_hat[k])
                            + (&m_inv * &mu_second[k]).trace()));
            // E_q[log p(y_{t+1} | beta, x_t, c_t = k)]
            elbo += p
                * (-0.5 * (LN_2PI + log_s2)
                    - 0.5
                        * inv_s2
                        * (y * y - 2.0 * y * x.dot(&post.beta_hat[k])
                            + quad_form(&x, &beta_second[k], &x)));
        }
    }

    if !elbo.is_finite() {
        return Err(Error::Numerical("non-finite ELBO".to_string()));
    }
    Ok(elbo)
}

/// One full CAVI sweep in the fixed coordinate order, returning the updated
/// posterior and its ELBO.
pub fn sweep(
    post: &VariationalPosterior,
    data: &Dataset,
    h: &Hyperparameters,
) -> Result<(VariationalPosterior, f64)> {
    let phi = update_responsibilities(post, data, h)?;
    let (r_hat, mu_hat) = update_cluster_moments(&phi, data, h)?;
    let (q_hat, beta_hat) = update_regression_moments(&phi, data, h)?;
    let next = VariationalPosterior {
        phi,
        mu_hat,
        r_hat,
        beta_hat,
        q_hat,
    };
    let elbo = compute_elbo(&next, data, h)?;
    Ok((next, elbo))
}

fn fit_one_restart(
    data: &Dataset,
    h: &Hyperparameters,
    opts: &FitOptions,
    restart: usize,
) -> Result<FitReport> {
    let seed = opts.seed.wrapping_add(restart as u64);
    let mut post = init_posterior(data, h, seed)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_sweeps {
        let (next, elbo) = sweep(&post, data, h)?;
        post = next;
        if let Some(&prev) = trace.last() {
            if (elbo - prev).abs() / (1.0 + elbo.abs()) < opts.rel_tol {
                trace.push(elbo);
                converged = true;
                break;
            }
        }
        trace.push(elbo);
    }
    let sweeps = trace.len();
    Ok(FitReport {
        posterior: post,
        elbo_trace: trace,
        converged,
        sweeps,
        restart_index: restart,
        seed,
    })
}

/// Multi-restart fit: restart r uses seed `opts.seed + r`; the restart with
/// the highest final ELBO wins, ties broken by lowest restart index.
/// Restarts run in parallel when the `parallel` feature is on; results are
/// independent of scheduling.
pub fn fit(data: &Dataset, h: &Hyperparameters, opts: &FitOptions) -> Result<FitReport> {
    if opts.max_sweeps == 0 || opts.restarts == 0 {
        return Err(Error::InvalidValue {
            field: "fit options".to_string(),
            reason: "max_sweeps and restarts must be >= 1".to_string(),
        });
    }
    data.validate(h.intercept_index)?;
    let results = parallel::run_indexed(opts.restarts, |r| fit_one_restart(data, h, opts, r));
    let mut best: Option<FitReport> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(report) => {
                let final_elbo = *report.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY);
                let better = match &best {
                    None => true,
                    Some(b) => final_elbo > *b.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY),
                };
                if better {
                    best = Some(report);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(report) => Ok(report),
        None => Err(first_err.unwrap_or(Error::AllRestartsFailed(opts.restarts))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_dataset(x: &[f64], y: &[f64]) -> Dataset {
        Dataset::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
        )
        .unwrap()
    }

    fn scalar_h(k: usize, pi: Vec<f64>, sigma: f64, m: f64, r0: f64, q0: f64) -> Hyperparameters {
        let mut h = Hyperparameters::default_with(k, 1, sigma, None);
        h.pi = pi;
        h.m = DMatrix::from_element(1, 1, m);
        h.r0 = vec![DMatrix::from_element(1, 1, r0); k];
        h.q0 = vec![DMatrix::from_element(1, 1, q0); k];
        h
    }

    /// Posterior with given scalar mu_hat / beta_hat values and tiny
    /// covariance factors (stand-ins for zero-variance limits).
    fn scalar_posterior(t: usize, mu: &[f64], beta: &[f64]) -> VariationalPosterior {
        let k = mu.len();
        VariationalPosterior {
            phi: DMatrix::from_element(t, k, 1.0 / k as f64),
            mu_hat: mu.iter().map(|&v| DVector::from_element(1, v)).collect(),
            r_hat: vec![DMatrix::from_element(1, 1, 1e-300); k],
            beta_hat: beta.iter().map(|&v| DVector::from_element(1, v)).collect(),
            q_hat: vec![DMatrix::from_element(1, 1, 1e-300); k],
        }
    }

    #[test]
    fn init_deterministic() {
        let data = scalar_dataset(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let a = init_posterior(&data, &h, 42).unwrap();
        let b = init_posterior(&data, &h, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_single_cluster_phi_all_ones() {
        let data = scalar_dataset(&[0.5, 1.5], &[0.0, 0.0]);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1.0, 1.0);
        let post = init_posterior(&data, &h, 3).unwrap();
        assert!(post.phi.iter().all(|&p| p == 1.0));
        let mu = post.mu_hat[0][0];
        assert!(mu == 0.5 || mu == 1.5);
    }

    #[test]
    fn init_d2_seeds_distinct() {
        let data = scalar_dataset(&[0.0, 5.0, 10.0], &[0.0; 3]);
        let h = scalar_h(3, vec![1.0 / 3.0; 3], 1.0, 1.0, 1.0, 1.0);
        for seed in 0..20 {
            let post = init_posterior(&data, &h, seed).unwrap();
            let mut mus: Vec<f64> = post.mu_hat.iter().map(|m| m[0]).collect();
            mus.sort_by(f64::total_cmp);
            mus.dedup();
            assert_eq!(mus.len(), 3, "seed {seed} produced duplicate seeds");
        }
    }

    #[test]
    fn init_too_few_observations() {
        let data = scalar_dataset(&[0.0], &[0.0]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            init_posterior(&data, &h, 0),
            Err(Error::TooFewObservations { .. })
        ));
    }

    #[test]
    fn responsibilities_single_cluster() {
        let data = scalar_dataset(&[1.0, -2.0], &[0.3, 0.1]);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1.0, 1.0);
        let post = scalar_posterior(2, &[0.0], &[0.0]);
        let phi = update_responsibilities(&post, &data, &h).unwrap();
        assert!(phi.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn responsibilities_equidistant_symmetry() {
        let data = scalar_dataset(&[1.0], &[0.0]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let post = scalar_posterior(1, &[0.0, 2.0], &[0.0, 0.0]);
        let phi = update_responsibilities(&post, &data, &h).unwrap();
        assert_abs_diff_eq!(phi[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(phi[(0, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn responsibilities_scalar_oracle() {
        // x = 2, cluster means 0 and 2: log-score gap is
        // (x*mu2 - mu2^2/2) - (x*mu1 - mu1^2/2) = 2, so phi_2 = e^2/(1+e^2).
        let data = scalar_dataset(&[2.0], &[0.0]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let post = scalar_posterior(1, &[0.0, 2.0], &[0.0, 0.0]);
        let phi = update_responsibilities(&post, &data, &h).unwrap();
        let expected = (2.0f64).exp() / (1.0 + (2.0f64).exp());
        assert_abs_diff_eq!(phi[(0, 1)], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(phi[(0, 1)], 0.880797, epsilon = 1e-6);
    }

    #[test]
    fn cluster_moments_empty_cluster_returns_prior() {
        let data = scalar_dataset(&[1.0, 3.0], &[0.0, 0.0]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let (r_hat, mu_hat) = update_cluster_moments(&phi, &data, &h).unwrap();
        assert_eq!(r_hat[1], h.r0[1]);
        assert_eq!(mu_hat[1], h.mu0[1]);
        let (q_hat, beta_hat) = update_regression_moments(&phi, &data, &h).unwrap();
        assert_eq!(q_hat[1], h.q0[1]);
        assert_eq!(beta_hat[1], h.beta0[1]);
    }

    #[test]
    fn cluster_moments_scalar_oracle() {
        // R0 = M = 1, mu0 = 0, phi = [1,1], x = [1,3]:
        // R_hat = 1/(1+2) = 1/3, mu_hat = (1/3)(0 + 4) = 4/3.
        let data = scalar_dataset(&[1.0, 3.0], &[0.0, 0.0]);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1.0, 1.0);
        let phi = DMatrix::from_element(2, 1, 1.0);
        let (r_hat, mu_hat) = update_cluster_moments(&phi, &data, &h).unwrap();
        assert_abs_diff_eq!(r_hat[0][(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(mu_hat[0][0], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn cluster_moments_flat_prior_limit_is_sample_mean() {
        let xs = [0.4, 1.9, -0.7, 2.2, 0.1];
        let data = scalar_dataset(&xs, &[0.0; 5]);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1e12, 1.0);
        let phi = DMatrix::from_element(5, 1, 1.0);
        let (_, mu_hat) = update_cluster_moments(&phi, &data, &h).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mu_hat[0][0] - mean).abs() / mean.abs() < 1e-6);
    }

    #[test]
    fn regression_moments_scalar_oracle() {
        // Q0 = 1, beta0 = 0, sigma = 1, phi = [1,1], x = [1,2], y = [1,4]:
        // Q_hat = 1/(1+5) = 1/6, beta_hat = (1/6)(0 + 9) = 1.5.
        let data = scalar_dataset(&[1.0, 2.0], &[1.0, 4.0]);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1.0, 1.0);
        let phi = DMatrix::from_element(2, 1, 1.0);
        let (q_hat, beta_hat) = update_regression_moments(&phi, &data, &h).unwrap();
        assert_abs_diff_eq!(q_hat[0][(0, 0)], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(beta_hat[0][0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn regression_moments_ridge_limit_is_least_squares() {
        let xs = [1.0, 2.0, 3.0, -1.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let data = scalar_dataset(&xs, &ys);
        let h = scalar_h(1, vec![1.0], 1.0, 1.0, 1.0, 1e12);
        let phi = DMatrix::from_element(4, 1, 1.0);
        let (_, beta_hat) = update_regression_moments(&phi, &data, &h).unwrap();
        assert!((beta_hat[0][0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn elbo_prior_equals_zero_for_empty_data() {
        // T = 0 with q set to the priors: ELBO = -KL(prior || prior) = 0.
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let data = Dataset {
            x: DMatrix::zeros(0, 1),
            y: DVector::zeros(0),
        };
        let post = VariationalPosterior {
            phi: DMatrix::zeros(0, 2),
            mu_hat: h.mu0.clone(),
            r_hat: h.r0.clone(),
            beta_hat: h.beta0.clone(),
            q_hat: h.q0.clone(),
        };
        let elbo = compute_elbo(&post, &data, &h).unwrap();
        assert_abs_diff_eq!(elbo, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_deterministic() {
        let data = scalar_dataset(&[0.1, 1.2, -0.6, 2.0, 0.8, -1.1], &[0.2, 1.0, -0.4, 1.8, 0.9, -1.0]);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1.0, 1.0);
        let opts = FitOptions {
            max_sweeps: 50,
            restarts: 3,
            ..Default::default()
        };
        let a = fit(&data, &h, &opts).unwrap();
        let b = fit(&data, &h, &opts).unwrap();
        assert_eq!(a.posterior, b.posterior);
        assert_eq!(a.elbo_trace, b.elbo_trace);
        assert_eq!(a.restart_index, b.restart_index);
    }

    #[test]
    fn fit_single_cluster_matches_bayesian_ridge() {
        let xs = [1.0, -0.5, 2.0, 0.3, -1.7];
        let ys = [0.8, -0.4, 2.1, 0.5, -1.5];
        let data = scalar_dataset(&xs, &ys);
        let h = scalar_h(1, vec![1.0], 0.7, 1.0, 1.0, 2.0);
        let opts = FitOptions {
            max_sweeps: 10,
            restarts: 1,
            ..Default::default()
        };
        let report = fit(&data, &h, &opts).unwrap();
        let inv_s2 = 1.0 / (0.7f64 * 0.7);
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let q = 1.0 / (1.0 / 2.0 + inv_s2 * sxx);
        let beta = q * inv_s2 * sxy;
        assert_abs_diff_eq!(report.posterior.q_hat[0][(0, 0)], q, epsilon = 1e-10);
        assert_abs_diff_eq!(report.posterior.beta_hat[0][0], beta, epsilon = 1e-10);
    }

    #[test]
    fn phi_rows_normalized_after_update() {
        let data = scalar_dataset(&[0.1, 5.0, -3.0], &[0.0, 1.0, -1.0]);
        let h = scalar_h(3, vec![0.2, 0.3, 0.5], 0.5, 1.0, 1.0, 1.0);
        let post = init_posterior(&data, &h, 9).unwrap();
        let phi = update_responsibilities(&post, &data, &h).unwrap();
        for t in 0..3 {
            let s: f64 = phi.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_equivariance_k2() {
        let data = scalar_dataset(&[0.2, 1.8, -0.9, 2.4], &[0.1, 1.5, -0.8, 2.0]);
        let mut h = scalar_h(2, vec![0.3, 0.7], 1.0, 1.0, 1.0, 1.0);
        h.mu0 = vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)];
        let init = init_posterior(&data, &h, 5).unwrap();

        let mut h_swapped = h.clone();
        h_swapped.pi = vec![0.7, 0.3];
        h_swapped.mu0 = vec![h.mu0[1].clone(), h.mu0[0].clone()];
        let init_swapped = VariationalPosterior {
            phi: {
                let mut p = init.phi.clone();
                p.swap_columns(0, 1);
                p
            },
            mu_hat: vec![init.mu_hat[1].clone(), init.mu_hat[0].clone()],
            r_hat: vec![init.r_hat[1].clone(), init.r_hat[0].clone()],
            beta_hat: vec![init.beta_hat[1].clone(), init.beta_hat[0].clone()],
            q_hat: vec![init.q_hat[1].clone(), init.q_hat[0].clone()],
        };

        let mut a = init;
        let mut b = init_swapped;
        for _ in 0..5 {
            let (na, ea) = sweep(&a, &data, &h).unwrap();
            let (nb, eb) = sweep(&b, &data, &h_swapped).unwrap();
            assert_abs_diff_eq!(ea, eb, epsilon = 1e-9);
            a = na;
            b = nb;
        }
        assert_abs_diff_eq!(a.mu_hat[0][0], b.mu_hat[1][0], epsilon = 1e-9);
        assert_abs_diff_eq!(a.beta_hat[1][0], b.beta_hat[0][0], epsilon = 1e-9);
    }

    #[test]
    fn flat_prior_hard_responsibilities_match_ols() {
        // two clusters, hard assignment, flat priors: moment updates must equal
        // per-cluster sample mean and per-cluster OLS.
        let xs = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let ys = [2.1, 3.9, 6.2, -9.8, -11.1, -12.2];
        let data = scalar_dataset(&xs, &ys);
        let h = scalar_h(2, vec![0.5, 0.5], 1.0, 1.0, 1e12, 1e12);
        let phi = DMatrix::from_row_slice(
            6,
            2,
            &[1., 0., 1., 0., 1., 0., 0., 1., 0., 1., 0., 1.],
        );
        let (_, mu_hat) = update_cluster_moments(&phi, &data, &h).unwrap();
        let (_, beta_hat) = update_regression_moments(&phi, &data, &h).unwrap();
        let mean0 = (1.0 + 2.0 + 3.0) / 3.0;
        let mean1 = (10.0 + 11.0 + 12.0) / 3.0;
        assert!((mu_hat[0][0] - mean0).abs() / mean0 < 1e-6);
        assert!((mu_hat[1][0] - mean1).abs() / mean1 < 1e-6);
        let ols = |xs: &[f64], ys: &[f64]| {
            let sxx: f64 = xs.iter().map(|x| x * x).sum();
            let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
            sxy / sxx
        };
        let b0 = ols(&xs[..3], &ys[..3]);
        let b1 = ols(&xs[3..], &ys[3..]);
        assert!((beta_hat[0][0] - b0).abs() / b0.abs() < 1e-6);
        assert!((beta_hat[1][0] - b1).abs() / b1.abs() < 1e-6);
    }
}
