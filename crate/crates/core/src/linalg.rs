//! Small dense linear-algebra helpers shared by both trainers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// On failure a diagonal jitter is added, starting at 1e-10 and escalating
/// by factors of 10 up to 1e-4; if the factorization still fails the system
/// is reported as singular.
pub(crate) fn spd_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(ch) = b.cholesky() {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "singular system: Cholesky of a {}x{} matrix failed even with jitter {JITTER_MAX:e}",
        a.nrows(),
        a.ncols()
    )))
}

/// log-determinant of the factorized matrix.
pub(crate) fn chol_log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    2.0 * acc
}
