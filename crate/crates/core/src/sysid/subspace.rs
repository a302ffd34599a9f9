//! Past-output MOESP subspace estimation.
//!
//! Block-Hankel matrices of future inputs, past inputs/outputs and future
//! outputs are triangularized together. The part of the future outputs that
//! lies orthogonal to the future inputs but is explained by the past data
//! spans the extended observability matrix; its dominant `n` left singular
//! vectors give `C` (first block row) and `A` (shift invariance). `B`, `D`
//! and the initial state then follow from a linear least-squares fit of the
//! simulated output.

use nalgebra::{DMatrix, DVector};

use super::model::{series_matrix, EstimationMeta, StateSpaceModel, TimeDomain};
use super::linalg::{lstsq, svd};
use super::IdentificationConfig;
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

/// Relative singular-value threshold below which a direction counts as absent.
pub const RANK_TOLERANCE: f64 = 1e-11;

pub fn default_horizon(order: usize, outputs: usize) -> usize {
    (order.div_ceil(outputs.max(1)) + 1).max(20)
}

pub fn estimate_subspace(
    inputs: &[TimeSeries],
    outputs: &[TimeSeries],
    order: usize,
    cfg: &IdentificationConfig,
) -> Result<StateSpaceModel> {
    let dt = check_data(inputs, outputs)?;
    let u = series_matrix(inputs)?;
    let y = series_matrix(outputs)?;
    let mut model = estimate_subspace_matrix(&u, &y, order, dt, cfg)?;
    let labels_in = inputs.iter().map(|s| s.name().to_string()).collect();
    let labels_out = outputs.iter().map(|s| s.name().to_string()).collect();
    let meta = model.meta().clone();
    model = model.with_labels(labels_in, labels_out)?.with_meta(meta);
    Ok(model)
}

pub(crate) fn check_data(inputs: &[TimeSeries], outputs: &[TimeSeries]) -> Result<f64> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::InvalidConfig("identification needs at least one output".into()))?;
    for s in inputs.iter().chain(outputs) {
        if s.dt() != first.dt() {
            return Err(Error::DtMismatch { expected: first.dt(), found: s.dt() });
        }
        if s.len() != first.len() {
            return Err(Error::LengthMismatch { expected: first.len(), found: s.len() });
        }
    }
    Ok(first.dt())
}

fn block_hankel(data: &DMatrix<f64>, start: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let ch = data.nrows();
    DMatrix::from_fn(rows * ch, cols, |r, j| data[(r % ch, start + r / ch + j)])
}

pub fn estimate_subspace_matrix(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    order: usize,
    dt: f64,
    cfg: &IdentificationConfig,
) -> Result<StateSpaceModel> {
    let (m, p, n_samples) = (u.nrows(), y.nrows(), y.ncols());
    if order == 0 {
        return Err(Error::InvalidConfig("model order must be at least 1".into()));
    }
    let s = cfg.horizon.unwrap_or_else(|| default_horizon(order, p));
    if s * p < order + p {
        return Err(Error::InvalidConfig(format!(
            "horizon {s} too short for order {order} with {p} outputs"
        )));
    }
    if n_samples < 2 * s + 1 {
        return Err(Error::InvalidConfig(format!("{n_samples} samples is too few for horizon {s}")));
    }
    let cols = n_samples - 2 * s + 1;
    let rows_total = 2 * s * (m + p);
    if cols < rows_total {
        return Err(Error::InvalidConfig(format!(
            "{n_samples} samples is too few: need at least {} for horizon {s}",
            rows_total + 2 * s - 1
        )));
    }

    // [U_f; U_p; Y_p; Y_f] = L Qᵀ
    let mut h = DMatrix::zeros(rows_total, cols);
    let blocks = [
        block_hankel(u, s, s, cols),
        block_hankel(u, 0, s, cols),
        block_hankel(y, 0, s, cols),
        block_hankel(y, s, s, cols),
    ];
    let mut row = 0;
    for blk in &blocks {
        h.view_mut((row, 0), (blk.nrows(), cols)).copy_from(blk);
        row += blk.nrows();
    }
    let scale = h.amax();
    if !(scale > 0.0) {
        return Err(Error::RankDeficient { rank: 0, order });
    }
    h /= scale * (cols as f64).sqrt();
    let l = h.transpose().qr().r().transpose();

    let f_in = s * m;
    let past = s * (m + p);
    let l32 = l.view((f_in + past, f_in), (s * p, past)).into_owned();
    let svd = svd(l32, "observability estimate")?;
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().enumerate().map(|(i, v)| (v, i)).collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let singular_values: Vec<f64> = sv.iter().map(|v| v.0).collect();
    let top = singular_values.first().copied().unwrap_or(0.0);
    let rank = singular_values.iter().filter(|&&v| v > RANK_TOLERANCE * top).count();
    if top == 0.0 || rank < order {
        return Err(Error::RankDeficient { rank, order });
    }

    let mut warnings = Vec::new();
    if let Some(&next) = singular_values.get(order) {
        let gap = singular_values[order - 1] / next.max(f64::MIN_POSITIVE);
        if gap < cfg.gap_warning_ratio {
            warnings.push(format!(
                "weak singular-value gap at order {order}: ratio {gap:.3} below {}",
                cfg.gap_warning_ratio
            ));
        }
    }

    let left = svd.u.expect("left singular vectors requested");
    let mut gamma = DMatrix::zeros(s * p, order);
    for (j, &(v, idx)) in sv.iter().take(order).enumerate() {
        gamma.set_column(j, &(left.column(idx) * v.sqrt()));
    }
    let c = gamma.rows(0, p).into_owned();
    let upper = gamma.rows(0, (s - 1) * p).into_owned();
    let lower = gamma.rows(p, (s - 1) * p).into_owned();
    let a = lstsq(&upper, &lower, 1e-13, "shift invariance")?;

    let (b, d, _) = fit_input_matrices(&a, &c, u, y, cfg.feedthrough, cfg.regularization)?;
    let mut model = StateSpaceModel::new(a, b, c, d, TimeDomain::Discrete { dt })?;
    if !model.is_stable() {
        warnings.push("estimated A has eigenvalues on or outside the unit circle".into());
    }
    model = model.with_meta(EstimationMeta {
        method: "subspace".into(),
        singular_values,
        converged: None,
        iterations: None,
        warnings,
    });
    Ok(model)
}

/// Least squares for `vec(B)`, `vec(D)` and `x0` given `A` and `C`, on the
/// simulation error `y_k − C A^k x0 − Σ C A^{k−1−j} B u_j − D u_k`.
pub(crate) fn fit_input_matrices(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    feedthrough: bool,
    ridge: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (n, m, p, len) = (a.nrows(), u.nrows(), c.nrows(), y.ncols());
    let n_b = n * m;
    let n_d = if feedthrough { p * m } else { 0 };
    let n_par = n_b + n_d + n;
    let rows = len * p;
    let mut phi = DMatrix::zeros(rows + if ridge > 0.0 { n_par } else { 0 }, n_par);

    // B entries: state driven through e_i by input l
    let mut z = DVector::zeros(n);
    let mut next = DVector::zeros(n);
    let mut cz = DVector::zeros(p);
    for l in 0..m {
        for i in 0..n {
            z.fill(0.0);
            let col = l * n + i;
            for k in 0..len {
                cz.gemv(1.0, c, &z, 0.0);
                for r in 0..p {
                    phi[(k * p + r, col)] = cz[r];
                }
                next.gemv(1.0, a, &z, 0.0);
                next[i] += u[(l, k)];
                std::mem::swap(&mut z, &mut next);
            }
        }
    }
    if feedthrough {
        for l in 0..m {
            for r in 0..p {
                let col = n_b + l * p + r;
                for k in 0..len {
                    phi[(k * p + r, col)] = u[(l, k)];
                }
            }
        }
    }
    // initial state
    let mut cak = c.clone();
    for k in 0..len {
        for r in 0..p {
            for i in 0..n {
                phi[(k * p + r, n_b + n_d + i)] = cak[(r, i)];
            }
        }
        cak = &cak * a;
    }

    let mut target = DVector::zeros(phi.nrows());
    for k in 0..len {
        for r in 0..p {
            target[k * p + r] = y[(r, k)];
        }
    }

    // column equilibration keeps x0 and power-scaled inputs comparable
    let norms: Vec<f64> = (0..n_par)
        .map(|j| {
            let v = phi.column(j).norm();
            if v > 0.0 { v } else { 1.0 }
        })
        .collect();
    for (j, &nrm) in norms.iter().enumerate() {
        phi.column_mut(j).scale_mut(1.0 / nrm);
    }
    if ridge > 0.0 {
        for j in 0..n_par {
            phi[(rows + j, j)] = ridge.sqrt();
        }
    }
    let target = DMatrix::from_column_slice(target.len(), 1, target.as_slice());
    let theta = lstsq(&phi, &target, 1e-13, "input matrices")?;
    let theta: DVector<f64> = DVector::from_iterator(n_par, theta.iter().zip(&norms).map(|(t, s)| t / s));

    let b = DMatrix::from_fn(n, m, |i, l| theta[l * n + i]);
    let d = if feedthrough {
        DMatrix::from_fn(p, m, |r, l| theta[n_b + l * p + r])
    } else {
        DMatrix::zeros(p, m)
    };
    let x0 = theta.rows(n_b + n_d, n).into_owned();
    Ok((b, d, x0))
}
