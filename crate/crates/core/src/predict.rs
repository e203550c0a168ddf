//! Predictive cluster probabilities and the forecast density of the next
//! output: a K-component Gaussian mixture with component mean beta_hat_k'x
//! and component variance sigma^2 + x'Q_hat_k x, plus derived moments,
//! quantiles, and intervals.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normal_cdf, normal_pdf, quad_form, spd_inverse};
use crate::model::{Hyperparameters, PredictiveMixture, VariationalPosterior};

/// Cluster probabilities from x alone: softmax over k of
/// log pi_k + x'M^-1 mu_hat_k - 1/2 tr(M^-1 (mu mu' + R_hat)).
/// The y-dependent term of the in-sample responsibility is absent because
/// the next output is unknown at prediction time.
pub fn predictive_cluster_probs(
    x: &DVector<f64>,
    post: &VariationalPosterior,
    h: &Hyperparameters,
) -> Result<Vec<f64>> {
    if x.len() != h.n {
        return Err(Error::DimensionMismatch {
            context: "predictive x".to_string(),
            expected: h.n,
            actual: x.len(),
        });
    }
    let m_inv = spd_inverse(&h.m, "M")?;
    let mut scores = Vec::with_capacity(h.k);
    for k in 0..h.k {
        let mu = &post.mu_hat[k];
        let second = mu * mu.transpose() + &post.r_hat[k];
        scores.push(
            h.pi[k].ln() + quad_form(x, &m_inv, mu) - 0.5 * (&m_inv * second).trace(),
        );
    }
    let norm = log_sum_exp(&scores)?;
    Ok(scores.iter().map(|s| (s - norm).exp()).collect())
}

/// Builds the forecast mixture. The determinant prefactor of the raw density
/// reduces to sigma / sqrt(sigma^2 + x'Q_hat x), which makes each component an
/// exactly normalized Gaussian; only the simplified form is used here.
pub fn predictive_mixture(
    x: &DVector<f64>,
    post: &VariationalPosterior,
    h: &Hyperparameters,
) -> Result<PredictiveMixture> {
    let weights = predictive_cluster_probs(x, post, h)?;
    let s2 = h.sigma * h.sigma;
    let means: Vec<f64> = post.beta_hat.iter().map(|b| b.dot(x)).collect();
    let variances: Vec<f64> = post
        .q_hat
        .iter()
        .map(|q| s2 + quad_form(x, q, x))
        .collect();
    Ok(PredictiveMixture {
        weights,
        means,
        variances,
    })
}

/// Mixture density at y.
pub fn density_at(mix: &PredictiveMixture, y: f64) -> f64 {
    mix.weights
        .iter()
        .zip(&mix.means)
        .zip(&mix.variances)
        .map(|((&w, &m), &v)| w * normal_pdf(y, m, v))
        .sum()
}

/// First moment of the mixture.
pub fn mixture_mean(mix: &PredictiveMixture) -> f64 {
    mix.weights
        .iter()
        .zip(&mix.means)
        .map(|(&w, &m)| w * m)
        .sum()
}

/// Variance of the mixture: sum w_k (v_k + m_k^2) - mean^2.
pub fn mixture_variance(mix: &PredictiveMixture) -> f64 {
    let mean = mixture_mean(mix);
    let second: f64 = mix
        .weights
        .iter()
        .zip(&mix.means)
        .zip(&mix.variances)
        .map(|((&w, &m), &v)| w * (v + m * m))
        .sum();
    second - mean * mean
}

/// Mixture CDF: sum w_k Phi((y - m_k) / sqrt(v_k)).
pub fn mixture_cdf(mix: &PredictiveMixture, y: f64) -> f64 {
    mix.weights
        .iter()
        .zip(&mix.means)
        .zip(&mix.variances)
        .map(|((&w, &m), &v)| w * normal_cdf((y - m) / v.sqrt()))
        .sum()
}

/// Quantile by bisection on a 12-standard-deviation bracket, to 1e-10
/// absolute.
pub fn mixture_quantile(mix: &PredictiveMixture, p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidValue {
            field: "p".to_string(),
            reason: format!("quantile level must be in (0, 1), got {p}"),
        });
    }
    let max_sd = mix
        .variances
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .sqrt();
    let mut lo = mix.means.iter().cloned().fold(f64::INFINITY, f64::min) - 12.0 * max_sd;
    let mut hi = mix.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 12.0 * max_sd;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mix, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Full forecast for one input: the mixture plus its mean, variance, and a
/// central interval at level alpha.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Prediction {
    pub mixture: PredictiveMixture,
    pub mean: f64,
    pub variance: f64,
    pub interval: (f64, f64),
}

pub fn predict(
    x: &DVector<f64>,
    post: &VariationalPosterior,
    h: &Hyperparameters,
    alpha: f64,
) -> Result<Prediction> {
    let mixture = predictive_mixture(x, post, h)?;
    let mean = mixture_mean(&mixture);
    let variance = mixture_variance(&mixture);
    let interval = (
        mixture_quantile(&mixture, alpha / 2.0)?,
        mixture_quantile(&mixture, 1.0 - alpha / 2.0)?,
    );
    Ok(Prediction {
        mixture,
        mean,
        variance,
        interval,
    })
}

/// Raw-form density evaluation carrying the explicit rank-one update matrix
/// and its determinants. Exists only to cross-check the simplified mixture
/// path; not used by the predictor itself.
#[doc(hidden)]
pub mod raw_form {
    use nalgebra::{DMatrix, DVector};

    use crate::error::Result;
    use crate::math::{quad_form, spd_cholesky, spd_inverse};
    use crate::model::{Hyperparameters, VariationalPosterior};

    /// (sigma^-2 x x' + Q_hat^-1)^-1, formed explicitly.
    pub fn delta(x: &DVector<f64>, q_hat: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
        let q_inv = spd_inverse(q_hat, "Q_hat")?;
        let precision = x * x.transpose() / (sigma * sigma) + q_inv;
        spd_inverse(&precision, "Delta")
    }

    /// |Delta| / |Q_hat| via explicit determinants.
    pub fn det_ratio(x: &DVector<f64>, q_hat: &DMatrix<f64>, sigma: f64) -> Result<f64> {
        let d = delta(x, q_hat, sigma)?;
        let det_d = spd_cholesky(&d, "Delta")?.determinant();
        let det_q = spd_cholesky(q_hat, "Q_hat")?.determinant();
        Ok(det_d / det_q)
    }

    /// Density of the forecast evaluated through the unsimplified expression:
    /// (1 / sigma sqrt(2 pi)) sum_k q_k sqrt(|Delta_k|/|Q_hat_k|)
    ///   exp(-y^2/2s^2 - beta'Q^-1 beta / 2 + psi'Delta psi / 2).
    pub fn density_at(
        x: &DVector<f64>,
        post: &VariationalPosterior,
        h: &Hyperparameters,
        y: f64,
    ) -> Result<f64> {
        let weights = super::predictive_cluster_probs(x, post, h)?;
        let s2 = h.sigma * h.sigma;
        let mut total = 0.0;
        for k in 0..h.k {
            let q_hat = &post.q_hat[k];
            let q_inv = spd_inverse(q_hat, "Q_hat")?;
            let d = delta(x, q_hat, h.sigma)?;
            let psi = x * (y / s2) + &q_inv * &post.beta_hat[k];
            let exponent = -y * y / (2.0 * s2)
                - 0.5 * quad_form(&post.beta_hat[k], &q_inv, &post.beta_hat[k])
                + 0.5 * quad_form(&psi, &d, &psi);
            total += weights[k] * det_ratio(x, q_hat, h.sigma)?.sqrt() * exponent.exp();
        }
        Ok(total / (h.sigma * (2.0 * std::f64::consts::PI).sqrt()))
    }
}
