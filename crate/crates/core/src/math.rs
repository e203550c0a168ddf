//! Small dense linear-algebra and numerically-stable primitives shared by the
//! rest of the crate. Matrices are expected to be small (n on the order of a
//! few to ~50), so everything goes through dense Cholesky factorizations.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter escalation used when a Cholesky factorization fails: each attempt
/// adds `eps * mean(diag) * I` with eps stepping 1e-10 -> 1e-8 -> 1e-6.
const JITTER_STEPS: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Returns (A + A') / 2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factorization of a symmetric positive-definite matrix, with
/// jitter retries. The input is symmetrized first. On total failure the error
/// carries the first failing pivot index of the unjittered attempt.
pub fn spd_cholesky(a: &DMatrix<f64>, field: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let sym = symmetrize(a);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol);
    }
    let pivot = failing_pivot(&sym);
    let mean_diag = sym.diagonal().iter().map(|d| d.abs()).sum::<f64>() / sym.nrows().max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for eps in JITTER_STEPS {
        let jittered = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * (eps * scale);
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
    }
    Err(Error::NotSpd {
        field: field.to_string(),
        pivot,
    })
}

/// Index of the first leading principal minor that is not positive.
fn failing_pivot(a: &DMatrix<f64>) -> usize {
    for k in 1..=a.nrows() {
        let minor = a.view((0, 0), (k, k)).into_owned();
        if Cholesky::new(minor).is_none() {
            return k - 1;
        }
    }
    a.nrows().saturating_sub(1)
}

/// Inverse of an SPD matrix via Cholesky; the result is symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>, field: &str) -> Result<DMatrix<f64>> {
    let chol = spd_cholesky(a, field)?;
    Ok(symmetrize(&chol.inverse()))
}

/// log|A| for SPD A, via the Cholesky factor.
pub fn spd_log_det(a: &DMatrix<f64>, field: &str) -> Result<f64> {
    let chol = spd_cholesky(a, field)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// log sum_i exp(v_i), computed by subtracting the maximum. Returns -inf for
/// an all-(-inf) input.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput {
            context: "log_sum_exp".to_string(),
        });
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Standard normal density.
pub fn normal_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    (-0.5 * d * d / variance).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Complementary error function, Cody's rational approximations (relative
/// error below 1e-15 over the whole range).
#[allow(clippy::excessive_precision)] // coefficients kept as published
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let ax = x;
    if ax <= 0.46875 {
        // erf(x) on the central interval
        const A: [f64; 5] = [
            3.16112374387056560e0,
            1.13864154151050156e2,
            3.77485237685302021e2,
            3.20937758913846947e3,
            1.85777706184603153e-1,
        ];
        const B: [f64; 4] = [
            2.36012909523441209e1,
            2.44024637934444173e2,
            1.28261652607737228e3,
            2.84423683343917062e3,
        ];
        let z = x * x;
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        let erf = x * (num + A[3]) / (den + B[3]);
        return 1.0 - erf;
    }
    let result = if ax <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + C[i]) * ax;
            den = (den + D[i]) * ax;
        }
        (num + C[7]) / (den + D[7])
    } else {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let z = 1.0 / (ax * ax);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let r = z * (num + P[4]) / (den + Q[4]);
        const FRAC_1_SQRT_PI: f64 = 5.6418958354775628695e-1;
        (FRAC_1_SQRT_PI - r) / ax
    };
    // exp(-x^2) split to reduce cancellation, per the reference algorithm
    let xsq = (ax * 16.0).trunc() / 16.0;
    let del = (ax - xsq) * (ax + xsq);
    (-xsq * xsq).exp() * (-del).exp() * result
}

/// Standard normal CDF via erfc.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// x' A y for dynamic vectors.
pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * a * y)[(0, 0)]
}
