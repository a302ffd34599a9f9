use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

const SVD_MAX_ITERATIONS: usize = 10_000;

pub(crate) fn svd(a: DMatrix<f64>, what: &str) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a, true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::InvalidModel(format!("{what}: singular value decomposition did not converge")))
}

/// Minimum-norm least squares `min ‖A X − B‖`, treating singular values
/// below `rtol·σ_max` as zero. Tall systems are reduced by QR first.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64, what: &str) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    let (r, rhs) = if m > n {
        let qr = a.clone().qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, n).into_owned())
    } else {
        (a.clone(), b.clone())
    };
    let dec = svd(r, what)?;
    let top = dec.singular_values.max();
    dec.solve(&rhs, (rtol * top).max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidModel(format!("{what}: {e}")))
}

/// Singular values of `a`, via the triangular factor for tall matrices.
pub(crate) fn singular_values(a: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    let r = if a.nrows() > a.ncols() { a.clone().qr().r() } else { a.clone() };
    let dec = SVD::try_new(r, false, false, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or_else(|| Error::InvalidModel(format!("{what}: singular value decomposition did not converge")))?;
    Ok(dec.singular_values.iter().copied().collect())
}
