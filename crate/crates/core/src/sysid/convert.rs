//! Zero-order-hold conversion between continuous and discrete models.

use nalgebra::DMatrix;

use super::linalg::svd;
use super::model::{StateSpaceModel, TimeDomain};
use crate::error::{Error, Result};

fn augmented(top_left: &DMatrix<f64>, top_right: &DMatrix<f64>, bottom_right: DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (top_left.nrows(), top_right.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(top_left);
    aug.view_mut((0, n), (n, m)).copy_from(top_right);
    aug.view_mut((n, n), (m, m)).copy_from(&bottom_right);
    aug
}

/// `Ad = exp(A·dt)`, `Bd = ∫₀^dt exp(Aτ) dτ · B`, from one exponential of
/// the augmented matrix `[[A, B], [0, 0]]·dt`.
pub fn c2d(model: &StateSpaceModel, dt: f64) -> Result<StateSpaceModel> {
    if model.domain() != TimeDomain::Continuous {
        return Err(Error::InvalidModel("c2d expects a continuous model".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let (n, m) = (model.order(), model.inputs());
    let aug = augmented(model.a(), model.b(), DMatrix::zeros(m, m)) * dt;
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    let out = StateSpaceModel::new(ad, bd, model.c().clone(), model.d().clone(), TimeDomain::Discrete { dt })?;
    Ok(out
        .with_labels(model.input_labels().to_vec(), model.output_labels().to_vec())?
        .with_meta(model.meta().clone()))
}

/// Inverse of [`c2d`] through the logarithm of `[[Ad, Bd], [0, I]]`.
///
/// Undefined when `Ad` has an eigenvalue on the closed negative real axis.
pub fn d2c(model: &StateSpaceModel) -> Result<StateSpaceModel> {
    let Some(dt) = model.dt() else {
        return Err(Error::InvalidModel("d2c expects a discrete model".into()));
    };
    for l in model.eigenvalues() {
        let tol = 1e-12 * l.norm().max(1.0);
        if l.im.abs() <= tol && l.re <= tol {
            return Err(Error::LogUndefined(format!("{:.6e}{:+.6e}i", l.re, l.im)));
        }
    }
    let (n, m) = (model.order(), model.inputs());
    let aug = augmented(model.a(), model.b(), DMatrix::identity(m, m));
    let log = logm(&aug)? / dt;
    let a = log.view((0, 0), (n, n)).into_owned();
    let b = log.view((0, n), (n, m)).into_owned();
    let out = StateSpaceModel::new(a, b, model.c().clone(), model.d().clone(), TimeDomain::Continuous)?;
    Ok(out
        .with_labels(model.input_labels().to_vec(), model.output_labels().to_vec())?
        .with_meta(model.meta().clone()))
}

/// Unit vector spanning the numerical null space of `m`.
fn null_vector(m: DMatrix<f64>) -> Result<nalgebra::DVector<f64>> {
    let dec = svd(m, "eigenvector")?;
    let k = dec.singular_values.imin();
    let v_t = dec.v_t.as_ref().ok_or_else(|| Error::InvalidModel("eigenvector: missing singular vectors".into()))?;
    Ok(v_t.row(k).transpose())
}

/// Replaces real modes of a discrete model with `|λ| < tol` by their static
/// gain, folded into `D`. Such modes settle within one step, so the sampled
/// data carry their gain but not their time constant. Returns the reduced
/// model and the number of modes removed.
pub fn residualize_fast_modes(model: &StateSpaceModel, tol: f64) -> Result<(StateSpaceModel, usize)> {
    if model.dt().is_none() {
        return Err(Error::InvalidModel("residualization expects a discrete model".into()));
    }
    let (mut a, mut b, mut c, mut d) = (model.a().clone(), model.b().clone(), model.c().clone(), model.d().clone());
    let mut removed = 0;
    while a.nrows() > 0 {
        let n = a.nrows();
        let probe = StateSpaceModel::new(a.clone(), b.clone(), c.clone(), d.clone(), model.domain())?;
        let Some(lambda) = probe
            .eigenvalues()
            .into_iter()
            .filter(|l| l.norm() < tol && l.im.abs() < tol)
            .min_by(|x, y| x.norm().total_cmp(&y.norm()))
            .map(|l| l.re)
        else {
            break;
        };
        let shifted = &a - DMatrix::<f64>::identity(n, n) * lambda;
        let v = null_vector(shifted.clone())?;
        let w = null_vector(shifted.transpose())?;
        let wv = w.dot(&v);
        if wv.abs() < 1e-8 {
            break;
        }
        // x = v·ξ + U·z with U an orthonormal basis of w⊥, which A leaves invariant
        let w_unit = w.normalize();
        let dec = svd(DMatrix::<f64>::identity(n, n) - &w_unit * w_unit.transpose(), "complement basis")?;
        let basis = dec.u.as_ref().ok_or_else(|| Error::InvalidModel("complement basis: missing singular vectors".into()))?;
        let keep: Vec<usize> = (0..n).filter(|&i| dec.singular_values[i] > 0.5).collect();
        let u = basis.select_columns(&keep);
        let proj = &v * w.transpose() / wv;
        let complement = DMatrix::<f64>::identity(n, n) - &proj;
        let b_mode = w.transpose() * &b / wv;
        d += &c * &v * b_mode / (1.0 - lambda);
        b = u.transpose() * &complement * &b;
        a = u.transpose() * &a * &u;
        c = &c * &u;
        removed += 1;
    }
    let out = StateSpaceModel::new(a, b, c, d, model.domain())?;
    Ok((
        out.with_labels(model.input_labels().to_vec(), model.output_labels().to_vec())?
            .with_meta(model.meta().clone()),
        removed,
    ))
}

/// Principal square root by the product form of the Denman–Beavers iteration.
fn sqrtm(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut m = x.clone();
    let mut y = x.clone();
    for _ in 0..100 {
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LogUndefined("singular iterate in matrix square root".into()))?;
        y = &y * (&eye + &m_inv) * 0.5;
        m = (&eye * 2.0 + &m + &m_inv) * 0.25;
        if (&m - &eye).norm() < 1e-15 * n as f64 {
            return Ok(y);
        }
    }
    Err(Error::LogUndefined("matrix square root did not converge".into()))
}

/// Matrix logarithm by inverse scaling and squaring with a Gregory series.
pub(crate) fn logm(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut r = x.clone();
    let mut roots = 0u32;
    while (&r - &eye).norm() > 0.1 {
        if roots > 60 {
            return Err(Error::LogUndefined("square-root scaling did not approach identity".into()));
        }
        r = sqrtm(&r)?;
        roots += 1;
    }
    let inv = (&r + &eye)
        .try_inverse()
        .ok_or_else(|| Error::LogUndefined("singular Gregory series denominator".into()))?;
    let z = (&r - &eye) * inv;
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z;
    for j in 1..30 {
        term = &term * &z2;
        sum += &term / (2 * j + 1) as f64;
        if term.norm() < 1e-18 {
            break;
        }
    }
    Ok(sum * 2.0 * 2f64.powi(roots as i32))
}
