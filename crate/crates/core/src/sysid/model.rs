use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeDomain {
    Discrete { dt: f64 },
    Continuous,
}

/// Diagnostics attached by an estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimationMeta {
    pub method: String,
    pub singular_values: Vec<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub warnings: Vec<String>,
}

/// `x' = A x + B u`, `y = C x + D u`, either as a difference equation
/// sampled at `dt` or as a differential equation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    domain: TimeDomain,
    input_labels: Vec<String>,
    output_labels: Vec<String>,
    meta: EstimationMeta,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != p || d.ncols() != m {
            return Err(Error::InvalidModel(format!(
                "inconsistent dimensions A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if let TimeDomain::Discrete { dt } = domain {
            if !(dt > 0.0) {
                return Err(Error::InvalidModel(format!("sample interval must be positive, got {dt}")));
            }
        }
        if [&a, &b, &c, &d].iter().any(|mat| mat.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidModel("non-finite matrix entry".into()));
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            domain,
            input_labels: (0..m).map(|i| format!("u{i}")).collect(),
            output_labels: (0..p).map(|i| format!("y{i}")).collect(),
            meta: EstimationMeta::default(),
        })
    }

    pub fn with_labels(mut self, inputs: Vec<String>, outputs: Vec<String>) -> Result<Self> {
        if inputs.len() != self.inputs() || outputs.len() != self.outputs() {
            return Err(Error::InvalidModel("label count does not match model dimensions".into()));
        }
        self.input_labels = inputs;
        self.output_labels = outputs;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: EstimationMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn domain(&self) -> TimeDomain {
        self.domain
    }
    pub fn input_labels(&self) -> &[String] {
        &self.input_labels
    }
    pub fn output_labels(&self) -> &[String] {
        &self.output_labels
    }
    pub fn meta(&self) -> &EstimationMeta {
        &self.meta
    }
    pub fn meta_mut(&mut self) -> &mut EstimationMeta {
        &mut self.meta
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn dt(&self) -> Option<f64> {
        match self.domain {
            TimeDomain::Discrete { dt } => Some(dt),
            TimeDomain::Continuous => None,
        }
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        if self.order() == 0 {
            return Vec::new();
        }
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    /// Discrete: spectral radius below 1. Continuous: all real parts negative.
    pub fn is_stable(&self) -> bool {
        let eig = self.eigenvalues();
        match self.domain {
            TimeDomain::Discrete { .. } => eig.iter().all(|l| l.norm() < 1.0),
            TimeDomain::Continuous => eig.iter().all(|l| l.re < 0.0),
        }
    }

    /// Copy with different B and D, same A and C.
    pub fn with_input_matrices(&self, b: DMatrix<f64>, d: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let model = StateSpaceModel::new(self.a.clone(), b, self.c.clone(), d, self.domain)?;
        let model = model.with_labels(labels, self.output_labels.clone())?;
        Ok(model.with_meta(self.meta.clone()))
    }

    /// Simulates the difference equation on a column-per-sample input matrix.
    pub fn simulate_matrix(&self, u: &DMatrix<f64>, x0: Option<&DVector<f64>>) -> Result<DMatrix<f64>> {
        if self.dt().is_none() {
            return Err(Error::InvalidModel("continuous model must be discretized before simulation".into()));
        }
        if u.nrows() != self.inputs() {
            return Err(Error::InvalidModel(format!(
                "model takes {} inputs, got {}",
                self.inputs(),
                u.nrows()
            )));
        }
        let mut x = match x0 {
            Some(x0) if x0.len() != self.order() => {
                return Err(Error::InvalidModel("initial state has the wrong dimension".into()))
            }
            Some(x0) => x0.clone(),
            None => DVector::zeros(self.order()),
        };
        let n_samples = u.ncols();
        let mut y = DMatrix::zeros(self.outputs(), n_samples);
        let mut next = DVector::zeros(self.order());
        let mut out = DVector::zeros(self.outputs());
        for k in 0..n_samples {
            let uk = u.column(k);
            out.gemv(1.0, &self.c, &x, 0.0);
            out.gemv(1.0, &self.d, &uk, 1.0);
            y.set_column(k, &out);
            next.gemv(1.0, &self.a, &x, 0.0);
            next.gemv(1.0, &self.b, &uk, 1.0);
            std::mem::swap(&mut x, &mut next);
        }
        Ok(y)
    }

    /// Response from `x0` with rows 0..len of `C A^k`.
    pub fn free_response_basis(&self, len: usize) -> DMatrix<f64> {
        let (n, p) = (self.order(), self.outputs());
        let mut obs = DMatrix::zeros(len * p, n);
        let mut cak = self.c.clone();
        for k in 0..len {
            obs.view_mut((k * p, 0), (p, n)).copy_from(&cak);
            cak = &cak * &self.a;
        }
        obs
    }
}

/// Stacks equally long series into a `channels × samples` matrix.
pub fn series_matrix(series: &[TimeSeries]) -> Result<DMatrix<f64>> {
    let Some(first) = series.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let len = first.len();
    for s in series {
        if s.dt() != first.dt() {
            return Err(Error::DtMismatch { expected: first.dt(), found: s.dt() });
        }
        if s.len() != len {
            return Err(Error::LengthMismatch { expected: len, found: s.len() });
        }
    }
    Ok(DMatrix::from_fn(series.len(), len, |i, k| series[i].values()[k]))
}

/// Simulates a discrete model driven by `inputs`, returning one series per output.
///
/// An unstable model is simulated anyway; the caller checks [`StateSpaceModel::is_stable`].
pub fn simulate(model: &StateSpaceModel, inputs: &[TimeSeries], x0: Option<&DVector<f64>>) -> Result<Vec<TimeSeries>> {
    let Some(dt) = model.dt() else {
        return Err(Error::InvalidModel("continuous model must be discretized before simulation".into()));
    };
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidModel("simulation needs at least one input series".into()))?;
    if inputs.len() != model.inputs() {
        return Err(Error::InvalidModel(format!(
            "model takes {} inputs, got {}",
            model.inputs(),
            inputs.len()
        )));
    }
    if (first.dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::DtMismatch { expected: dt, found: first.dt() });
    }
    let u = series_matrix(inputs)?;
    let y = model.simulate_matrix(&u, x0)?;
    (0..model.outputs())
        .map(|i| {
            TimeSeries::new(
                model.output_labels()[i].clone(),
                "",
                first.t0(),
                dt,
                y.row(i).iter().copied().collect(),
            )
        })
        .collect()
}
