use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

const JITTER: f64 = 1e-9;
const JITTER_RETRIES: usize = 3;

/// Cholesky factorization that retries with a growing diagonal jitter.
///
/// Rank-1 sums accumulated for barely-used components can sit right on the
/// boundary of positive definiteness; the first retry adds 1e-9·I and each
/// further retry multiplies the jitter by ten.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows();
    let mut jitter = JITTER;
    for _ in 0..JITTER_RETRIES {
        let shifted = m + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(Error::InvalidParameter(
        "matrix is not symmetric positive definite".into(),
    ))
}

/// Strict SPD check: symmetric within a relative tolerance and Cholesky succeeds.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return false;
            }
        }
    }
    Cholesky::new(m.clone()).is_some()
}

/// log|A| from a Cholesky factor.
pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Symmetrize in place, averaging the two triangles.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
