//! Model estimation from sampled input/output data, simulation, time-domain
//! conversion and order selection.

mod convert;
mod linalg;
mod model;
mod oe;
mod subspace;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use convert::{c2d, d2c, residualize_fast_modes};
pub use model::{series_matrix, simulate, EstimationMeta, StateSpaceModel, TimeDomain};
pub use oe::{estimate_oe, poly_is_stable, OeChannel, OeOrders, OutputErrorModel};
pub use subspace::{default_horizon, estimate_subspace, RANK_TOLERANCE};

use crate::error::{Error, Result};
use crate::signal::{split_halves, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationConfig {
    /// Past and future block rows for subspace estimation; `None` picks
    /// [`default_horizon`].
    pub horizon: Option<usize>,
    /// Estimate a direct `D` term. Sampled-data building models with
    /// zero-order-held inputs are strictly proper, so the case studies turn
    /// this off.
    pub feedthrough: bool,
    pub regularization: f64,
    pub max_iterations: usize,
    /// Relative cost decrease below which Gauss–Newton stops.
    pub tolerance: f64,
    /// Singular-value ratio σₙ/σₙ₊₁ below which a warning is attached.
    pub gap_warning_ratio: f64,
    /// Orders for the output-error estimator; `None` uses `(order, order, 1)`
    /// on every channel.
    pub oe_orders: Option<Vec<OeOrders>>,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            horizon: None,
            feedthrough: true,
            regularization: 0.0,
            max_iterations: 100,
            tolerance: 1e-10,
            gap_warning_ratio: 10.0,
            oe_orders: None,
        }
    }
}

impl IdentificationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.regularization < 0.0 {
            return Err(Error::InvalidConfig("regularization weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Error statistics of a simulated output against a measured one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mu_e: f64,
    pub mu_signed: f64,
    pub sigma_e: f64,
    pub fit_percent: f64,
}

/// Statistics of `simulated − measured`; `sigma_e` is the population
/// standard deviation.
pub fn fit_report(measured: &[f64], simulated: &[f64]) -> FitReport {
    let n = measured.len().min(simulated.len()).max(1) as f64;
    let err: Vec<f64> = simulated.iter().zip(measured).map(|(s, m)| s - m).collect();
    let mu_signed = err.iter().sum::<f64>() / n;
    let mu_e = err.iter().map(|e| e.abs()).sum::<f64>() / n;
    let sigma_e = (err.iter().map(|e| (e - mu_signed).powi(2)).sum::<f64>() / n).sqrt();
    let mean = measured.iter().sum::<f64>() / n;
    let err_norm = err.iter().map(|e| e * e).sum::<f64>().sqrt();
    let spread = measured.iter().map(|m| (m - mean).powi(2)).sum::<f64>().sqrt();
    let fit_percent = if spread > 0.0 {
        100.0 * (1.0 - err_norm / spread)
    } else if err_norm == 0.0 {
        100.0
    } else {
        f64::NEG_INFINITY
    };
    FitReport { mu_e, mu_signed, sigma_e, fit_percent }
}

/// Samples used to fit the initial state before validation.
pub fn initial_state_window(order: usize) -> usize {
    (2 * order).max(20)
}

/// Least-squares initial state matching the first `window` samples.
pub fn estimate_initial_state(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    window: usize,
) -> Result<DVector<f64>> {
    let n = model.order();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let len = window.min(y.ncols());
    let forced = model.simulate_matrix(&u.columns(0, len).into_owned(), None)?;
    let p = model.outputs();
    let obs = model.free_response_basis(len);
    let mut rhs = DVector::zeros(len * p);
    for k in 0..len {
        for r in 0..p {
            rhs[k * p + r] = y[(r, k)] - forced[(r, k)];
        }
    }
    let x0 = linalg::lstsq(&obs, &DMatrix::from_column_slice(len * p, 1, rhs.as_slice()), 1e-12, "initial state")?;
    Ok(x0.column(0).into_owned())
}

/// Simulates `model` on validation data from a fitted initial state and
/// reports the error per output channel.
pub fn validate(model: &StateSpaceModel, inputs: &[TimeSeries], outputs: &[TimeSeries]) -> Result<Vec<FitReport>> {
    let Some(dt) = model.dt() else {
        return Err(Error::InvalidModel("continuous model must be discretized before validation".into()));
    };
    if outputs.len() != model.outputs() {
        return Err(Error::InvalidModel(format!(
            "model has {} outputs, validation data {}",
            model.outputs(),
            outputs.len()
        )));
    }
    let data_dt = subspace::check_data(inputs, outputs)?;
    if (data_dt - dt).abs() > 1e-9 * dt {
        return Err(Error::DtMismatch { expected: dt, found: data_dt });
    }
    let u = series_matrix(inputs)?;
    let y = series_matrix(outputs)?;
    let x0 = estimate_initial_state(model, &u, &y, initial_state_window(model.order()))?;
    let yhat = model.simulate_matrix(&u, Some(&x0))?;
    Ok((0..model.outputs())
        .map(|r| {
            let meas: Vec<f64> = y.row(r).iter().copied().collect();
            let sim: Vec<f64> = yhat.row(r).iter().copied().collect();
            fit_report(&meas, &sim)
        })
        .collect())
}

/// A state-space estimation strategy selectable by name.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn estimate(
        &self,
        inputs: &[TimeSeries],
        outputs: &[TimeSeries],
        order: usize,
        cfg: &IdentificationConfig,
    ) -> Result<StateSpaceModel>;
}

pub struct SubspaceEstimator;

impl Estimator for SubspaceEstimator {
    fn name(&self) -> &'static str {
        "subspace"
    }

    fn estimate(
        &self,
        inputs: &[TimeSeries],
        outputs: &[TimeSeries],
        order: usize,
        cfg: &IdentificationConfig,
    ) -> Result<StateSpaceModel> {
        estimate_subspace(inputs, outputs, order, cfg)
    }
}

/// Output-error polynomials realized in state-space form. Single output only.
pub struct OutputErrorEstimator;

impl Estimator for OutputErrorEstimator {
    fn name(&self) -> &'static str {
        "oe"
    }

    fn estimate(
        &self,
        inputs: &[TimeSeries],
        outputs: &[TimeSeries],
        order: usize,
        cfg: &IdentificationConfig,
    ) -> Result<StateSpaceModel> {
        let [output] = outputs else {
            return Err(Error::InvalidConfig("output-error estimation handles one output".into()));
        };
        let orders = cfg
            .oe_orders
            .clone()
            .unwrap_or_else(|| vec![OeOrders::new(order, order, 1); inputs.len()]);
        let oe = estimate_oe(inputs, output, &orders, cfg)?;
        oe.to_state_space()
    }
}

#[derive(Clone)]
pub struct EstimatorRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Estimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, estimator: Arc<dyn Estimator>) {
        self.entries.insert(estimator.name(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Estimator>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy { kind: "estimator", name: name.to_string() })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(SubspaceEstimator));
        reg.register(Arc::new(OutputErrorEstimator));
        reg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRow {
    pub order: usize,
    pub result: std::result::Result<Vec<FitReport>, Error>,
}

/// Estimates on the first half, validates on the second, one row per order.
pub fn select_order(
    estimator: &dyn Estimator,
    inputs: &[TimeSeries],
    outputs: &[TimeSeries],
    orders: &[usize],
    cfg: &IdentificationConfig,
) -> Result<Vec<OrderRow>> {
    if orders.is_empty() {
        return Ok(Vec::new());
    }
    let split = |series: &[TimeSeries]| -> Result<(Vec<TimeSeries>, Vec<TimeSeries>)> {
        let mut est = Vec::new();
        let mut val = Vec::new();
        for s in series {
            let (a, b) = split_halves(s)?;
            est.push(a);
            val.push(b);
        }
        Ok((est, val))
    };
    let (u_est, u_val) = split(inputs)?;
    let (y_est, y_val) = split(outputs)?;
    let mut sorted = orders.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(sorted
        .par_iter()
        .map(|&order| OrderRow {
            order,
            result: estimator
                .estimate(&u_est, &y_est, order, cfg)
                .and_then(|model| validate(&model, &u_val, &y_val)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
            TimeDomain::Discrete { dt: 1.0 },
        )
        .unwrap()
    }

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new("u", "-", 0.0, 1.0, values).unwrap()
    }

    #[test]
    fn impulse_response_by_hand() {
        let y = simulate(&scalar(0.5, 1.0, 1.0, 0.0), &[series(vec![1.0, 0.0, 0.0, 0.0])], None).unwrap();
        assert_eq!(y[0].values(), &[0.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn identity_feedthrough() {
        let model = StateSpaceModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            TimeDomain::Discrete { dt: 1.0 },
        )
        .unwrap();
        let u = vec![series(vec![1.0, -2.0, 3.5]), series(vec![0.25, 9.0, -1.0])];
        let y = simulate(&model, &u, None).unwrap();
        assert_eq!(y[0].values(), u[0].values());
        assert_eq!(y[1].values(), u[1].values());
    }

    #[test]
    fn dt_mismatch_is_rejected() {
        let model = scalar(0.5, 1.0, 1.0, 0.0);
        let u = TimeSeries::new("u", "-", 0.0, 2.0, vec![1.0; 4]).unwrap();
        assert!(matches!(simulate(&model, &[u], None), Err(Error::DtMismatch { .. })));
    }

    #[test]
    fn self_validation_is_perfect() {
        let model = scalar(0.8, 1.0, 1.0, 0.0);
        let u = series((0..100).map(|k| ((k * 13) % 7) as f64).collect());
        let y = simulate(&model, std::slice::from_ref(&u), None).unwrap();
        let rep = validate(&model, &[u], &y).unwrap();
        assert!(rep[0].mu_e < 1e-12);
        assert!((rep[0].fit_percent - 100.0).abs() < 1e-9);
    }

    #[test]
    fn fit_report_constant_output() {
        let rep = fit_report(&[2.0; 5], &[2.0; 5]);
        assert_eq!(rep.sigma_e, 0.0);
        assert_eq!(rep.fit_percent, 100.0);
        let rep = fit_report(&[2.0; 5], &[3.0; 5]);
        assert_eq!(rep.sigma_e, 0.0);
        assert_eq!(rep.mu_e, 1.0);
    }

    #[test]
    fn registry_lookup() {
        let reg = EstimatorRegistry::default();
        assert_eq!(reg.names(), vec!["oe", "subspace"]);
        assert!(reg.get("subspace").is_ok());
        assert!(matches!(reg.get("n4sid"), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn empty_sweep() {
        let u = series(vec![1.0; 40]);
        let rows = select_order(&SubspaceEstimator, &[u.clone()], &[u], &[], &IdentificationConfig::default()).unwrap();
        assert!(rows.is_empty());
    }
}
