//! Output-error transfer models, `y = Σ Bᵢ(z⁻¹)/Fᵢ(z⁻¹) uᵢ + e`.
//!
//! Denominators are stored as `1 + f₁z⁻¹ + … + f_nf z⁻ⁿᶠ`, so a slow pole
//! near one shows up as `f₁ ≈ −1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{series_matrix, EstimationMeta, StateSpaceModel, TimeDomain};
use super::linalg::{lstsq, singular_values};
use super::subspace::check_data;
use super::IdentificationConfig;
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OeOrders {
    pub nb: usize,
    pub nf: usize,
    pub nk: usize,
}

impl OeOrders {
    pub fn new(nb: usize, nf: usize, nk: usize) -> Self {
        Self { nb, nf, nk }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeChannel {
    /// Numerator, applied at delays `nk ..= nk + nb − 1`.
    pub b: Vec<f64>,
    /// Denominator without its leading 1.
    pub f: Vec<f64>,
    pub nk: usize,
}

impl OeChannel {
    pub fn orders(&self) -> OeOrders {
        OeOrders::new(self.b.len(), self.f.len(), self.nk)
    }

    pub fn is_stable(&self) -> bool {
        poly_is_stable(&self.f)
    }

    /// `w_t = Σ b_j u_{t−nk−j} − Σ f_i w_{t−i}` from rest.
    pub fn filter(&self, u: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; u.len()];
        for t in 0..u.len() {
            let mut acc = 0.0;
            for (j, bj) in self.b.iter().enumerate() {
                if let Some(idx) = t.checked_sub(self.nk + j) {
                    acc += bj * u[idx];
                }
            }
            for (i, fi) in self.f.iter().enumerate() {
                if let Some(idx) = t.checked_sub(i + 1) {
                    acc -= fi * w[idx];
                }
            }
            w[t] = acc;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputErrorModel {
    pub channels: Vec<OeChannel>,
    pub dt: f64,
    pub input_labels: Vec<String>,
    pub output_label: String,
    pub converged: bool,
    pub iterations: usize,
    pub cost: f64,
}

impl OutputErrorModel {
    pub fn is_stable(&self) -> bool {
        self.channels.iter().all(OeChannel::is_stable)
    }

    pub fn simulate_values(&self, inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if inputs.len() != self.channels.len() {
            return Err(Error::InvalidModel(format!(
                "model takes {} inputs, got {}",
                self.channels.len(),
                inputs.len()
            )));
        }
        let len = inputs.first().map_or(0, |u| u.len());
        let mut y = vec![0.0; len];
        for (ch, u) in self.channels.iter().zip(inputs) {
            if u.len() != len {
                return Err(Error::LengthMismatch { expected: len, found: u.len() });
            }
            for (yt, wt) in y.iter_mut().zip(ch.filter(u)) {
                *yt += wt;
            }
        }
        Ok(y)
    }

    pub fn simulate(&self, inputs: &[TimeSeries]) -> Result<TimeSeries> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidModel("simulation needs at least one input series".into()))?;
        for s in inputs {
            if (s.dt() - self.dt).abs() > 1e-9 * self.dt {
                return Err(Error::DtMismatch { expected: self.dt, found: s.dt() });
            }
        }
        let views: Vec<&[f64]> = inputs.iter().map(|s| s.values()).collect();
        let y = self.simulate_values(&views)?;
        TimeSeries::new(self.output_label.clone(), "", first.t0(), self.dt, y)
    }

    /// Block-diagonal observer-form realization, one block per channel.
    pub fn to_state_space(&self) -> Result<StateSpaceModel> {
        let m = self.channels.len();
        let blocks: Vec<(DMatrix<f64>, DVector<f64>, f64)> = self.channels.iter().map(channel_realization).collect();
        let n: usize = blocks.iter().map(|b| b.0.nrows()).sum();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        let mut c = DMatrix::zeros(1, n);
        let mut d = DMatrix::zeros(1, m);
        let mut off = 0;
        for (l, (ab, bb, db)) in blocks.iter().enumerate() {
            let r = ab.nrows();
            a.view_mut((off, off), (r, r)).copy_from(ab);
            b.view_mut((off, l), (r, 1)).copy_from(bb);
            if r > 0 {
                c[(0, off)] = 1.0;
            }
            d[(0, l)] = *db;
            off += r;
        }
        let model = StateSpaceModel::new(a, b, c, d, TimeDomain::Discrete { dt: self.dt })?
            .with_labels(self.input_labels.clone(), vec![self.output_label.clone()])?;
        Ok(model.with_meta(EstimationMeta {
            method: "oe".into(),
            singular_values: Vec::new(),
            converged: Some(self.converged),
            iterations: Some(self.iterations),
            warnings: Vec::new(),
        }))
    }
}

fn channel_realization(ch: &OeChannel) -> (DMatrix<f64>, DVector<f64>, f64) {
    let r = ch.f.len().max((ch.nk + ch.b.len()).saturating_sub(1));
    let mut num = vec![0.0; r + 1];
    for (j, bj) in ch.b.iter().enumerate() {
        num[ch.nk + j] = *bj;
    }
    let mut den = vec![0.0; r + 1];
    den[0] = 1.0;
    den[1..=ch.f.len()].copy_from_slice(&ch.f);
    let direct = num[0];
    let strict: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n - direct * d).collect();
    let mut a = DMatrix::zeros(r, r);
    let mut b = DVector::zeros(r);
    for i in 0..r {
        a[(i, 0)] = -den[i + 1];
        if i + 1 < r {
            a[(i, i + 1)] = 1.0;
        }
        b[i] = strict[i + 1];
    }
    (a, b, direct)
}

/// Roots of `1 + f₁z⁻¹ + …` strictly inside the unit circle.
pub fn poly_is_stable(f: &[f64]) -> bool {
    if f.is_empty() {
        return true;
    }
    let r = f.len();
    let companion = DMatrix::from_fn(r, r, |i, j| {
        if i == 0 {
            -f[j]
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().all(|l| l.norm() < 1.0)
}

fn stabilize(f: &mut [f64]) {
    let mut guard = 0;
    while !poly_is_stable(f) && guard < 200 {
        for (i, fi) in f.iter_mut().enumerate() {
            *fi *= 0.95_f64.powi(i as i32 + 1);
        }
        guard += 1;
    }
}

struct Layout {
    orders: Vec<OeOrders>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(orders: &[OeOrders]) -> Self {
        let mut offsets = Vec::with_capacity(orders.len());
        let mut total = 0;
        for o in orders {
            offsets.push(total);
            total += o.nb + o.nf;
        }
        Self { orders: orders.to_vec(), offsets, total }
    }

    fn channels(&self, theta: &DVector<f64>) -> Vec<OeChannel> {
        self.orders
            .iter()
            .zip(&self.offsets)
            .map(|(o, &off)| OeChannel {
                b: theta.rows(off, o.nb).iter().copied().collect(),
                f: theta.rows(off + o.nb, o.nf).iter().copied().collect(),
                nk: o.nk,
            })
            .collect()
    }
}

fn sum_sq(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// ARX-initialized, Levenberg-damped Gauss–Newton minimization of the
/// simulation-error sum of squares.
pub fn estimate_oe(
    inputs: &[TimeSeries],
    output: &TimeSeries,
    orders: &[OeOrders],
    cfg: &IdentificationConfig,
) -> Result<OutputErrorModel> {
    let dt = check_data(inputs, std::slice::from_ref(output))?;
    if inputs.len() != orders.len() {
        return Err(Error::InvalidConfig(format!(
            "{} inputs but {} order triples",
            inputs.len(),
            orders.len()
        )));
    }
    if orders.iter().any(|o| o.nb == 0) {
        return Err(Error::InvalidConfig("every channel needs nb ≥ 1".into()));
    }
    let layout = Layout::new(orders);
    let n = output.len();
    if n <= 10 * layout.total {
        return Err(Error::InvalidConfig(format!(
            "{n} samples is too few for {} parameters",
            layout.total
        )));
    }
    if inputs.iter().all(|u| crate::signal::crest_factor(u, true).is_err()) {
        return Err(Error::InsufficientExcitation("no input has a defined centered crest factor".into()));
    }
    let u = series_matrix(inputs)?;
    let u_rows: Vec<Vec<f64>> = (0..u.nrows()).map(|i| u.row(i).iter().copied().collect()).collect();
    let y = output.values();

    let mut theta = arx_initial(&u_rows, y, &layout, cfg.regularization)?;
    let ridge = cfg.regularization;
    let eval = |theta: &DVector<f64>| -> (Vec<OeChannel>, Vec<Vec<f64>>, f64) {
        let chans = layout.channels(theta);
        let ws: Vec<Vec<f64>> = chans.iter().zip(&u_rows).map(|(c, ur)| c.filter(ur)).collect();
        let mut yhat = vec![0.0; n];
        for w in &ws {
            for (a, b) in yhat.iter_mut().zip(w) {
                *a += b;
            }
        }
        let cost = 0.5 * sum_sq(y, &yhat) + 0.5 * ridge * theta.norm_squared();
        (chans, ws, cost)
    };

    let (mut chans, mut ws, mut cost) = eval(&theta);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let cost_scale = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
    if cost <= 1e-30 * cost_scale.max(f64::MIN_POSITIVE) || cost == 0.0 {
        converged = true;
    }
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = jacobian(&chans, &ws, &u_rows, &layout, n);
        let yhat: Vec<f64> = (0..n).map(|t| ws.iter().map(|w| w[t]).sum()).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&yhat).map(|(a, b)| a - b));
        let mut jtj = jac.transpose() * &jac;
        let mut jte = jac.transpose() * resid;
        if ridge > 0.0 {
            for i in 0..layout.total {
                jtj[(i, i)] += ridge;
            }
            jte -= &theta * ridge;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..layout.total {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.clone().cholesky().map(|c| c.solve(&jte)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &theta + &step;
            let cand_chans = layout.channels(&candidate);
            if !cand_chans.iter().all(OeChannel::is_stable) {
                lambda *= 10.0;
                continue;
            }
            let (c2, w2, cost2) = eval(&candidate);
            if cost2 <= cost {
                let decrease = cost - cost2;
                theta = candidate;
                chans = c2;
                ws = w2;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if decrease <= cfg.tolerance * cost.max(f64::MIN_POSITIVE) || cost2 <= 1e-30 * cost_scale {
                    converged = true;
                }
                cost = cost2;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
        }
    }

    Ok(OutputErrorModel {
        channels: chans,
        dt,
        input_labels: inputs.iter().map(|s| s.name().to_string()).collect(),
        output_label: output.name().to_string(),
        converged,
        iterations,
        cost,
    })
}

fn jacobian(chans: &[OeChannel], ws: &[Vec<f64>], u: &[Vec<f64>], layout: &Layout, n: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(n, layout.total);
    for (ci, ch) in chans.iter().enumerate() {
        let off = layout.offsets[ci];
        let inv_f = OeChannel { b: vec![1.0], f: ch.f.clone(), nk: 0 };
        // 1/F applied once; delays are plain shifts of the filtered signal
        let fu = inv_f.filter(&u[ci]);
        let fw = inv_f.filter(&ws[ci]);
        for j in 0..ch.b.len() {
            let delay = ch.nk + j;
            for t in delay..n {
                jac[(t, off + j)] = fu[t - delay];
            }
        }
        for i in 0..ch.f.len() {
            let delay = i + 1;
            for t in delay..n {
                jac[(t, off + ch.b.len() + i)] = -fw[t - delay];
            }
        }
    }
    jac
}

fn arx_initial(u: &[Vec<f64>], y: &[f64], layout: &Layout, ridge: f64) -> Result<DVector<f64>> {
    let na = layout.orders.iter().map(|o| o.nf).max().unwrap_or(0);
    let nb_total: usize = layout.orders.iter().map(|o| o.nb).sum();
    let start = layout
        .orders
        .iter()
        .map(|o| o.nk + o.nb - 1)
        .max()
        .unwrap_or(0)
        .max(na);
    let rows = y.len() - start;
    let cols = na + nb_total;
    let mut phi = DMatrix::zeros(rows, cols);
    let mut target = DVector::zeros(rows);
    for (r, t) in (start..y.len()).enumerate() {
        target[r] = y[t];
        for i in 0..na {
            phi[(r, i)] = -y[t - i - 1];
        }
        let mut col = na;
        for (ci, o) in layout.orders.iter().enumerate() {
            for j in 0..o.nb {
                phi[(r, col)] = u[ci][t - o.nk - j];
                col += 1;
            }
        }
    }

    let input_block = phi.columns(na, nb_total).into_owned();
    let sv = singular_values(&input_block, "input regressors")?;
    let top = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&v| v > 1e-10 * top).count();
    if ridge == 0.0 && (top == 0.0 || rank < nb_total) {
        return Err(Error::InsufficientExcitation(format!(
            "input regressor rank {rank} below {nb_total} numerator parameters"
        )));
    }

    let (phi, target) = if ridge > 0.0 {
        let mut p2 = DMatrix::zeros(rows + cols, cols);
        p2.view_mut((0, 0), (rows, cols)).copy_from(&phi);
        for i in 0..cols {
            p2[(rows + i, i)] = ridge.sqrt();
        }
        let mut t2 = DVector::zeros(rows + cols);
        t2.rows_mut(0, rows).copy_from(&target);
        (p2, t2)
    } else {
        (phi, target)
    };
    let target = DMatrix::from_column_slice(target.len(), 1, target.as_slice());
    let est = lstsq(&phi, &target, 1e-12, "ARX initialization")?.column(0).into_owned();

    let mut denom: Vec<f64> = est.rows(0, na).iter().copied().collect();
    stabilize(&mut denom);
    let mut theta = DVector::zeros(layout.total);
    let mut col = na;
    for (ci, o) in layout.orders.iter().enumerate() {
        let off = layout.offsets[ci];
        for j in 0..o.nb {
            theta[off + j] = est[col];
            col += 1;
        }
        for i in 0..o.nf {
            theta[off + o.nb + i] = denom[i];
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realization_matches_difference_equation() {
        let model = OutputErrorModel {
            channels: vec![
                OeChannel { b: vec![0.3, -0.1], f: vec![-0.8], nk: 1 },
                OeChannel { b: vec![0.5], f: vec![-0.2, 0.05], nk: 0 },
            ],
            dt: 1.0,
            input_labels: vec!["a".into(), "b".into()],
            output_label: "y".into(),
            converged: true,
            iterations: 0,
            cost: 0.0,
        };
        let u1: Vec<f64> = (0..50).map(|k| ((k * 7) % 11) as f64 - 5.0).collect();
        let u2: Vec<f64> = (0..50).map(|k| ((k * 3) % 5) as f64).collect();
        let direct = model.simulate_values(&[&u1, &u2]).unwrap();
        let ss = model.to_state_space().unwrap();
        let u = DMatrix::from_fn(2, 50, |i, k| if i == 0 { u1[k] } else { u2[k] });
        let y = ss.simulate_matrix(&u, None).unwrap();
        for k in 0..50 {
            assert!((y[(0, k)] - direct[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_of_denominators() {
        assert!(poly_is_stable(&[-0.996]));
        assert!(!poly_is_stable(&[-1.2]));
        assert!(poly_is_stable(&[]));
    }
}
