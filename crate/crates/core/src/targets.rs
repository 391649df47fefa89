//! Measurement containers and regression-target construction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{evaluate, LibraryMatrix, LibrarySpec};
use crate::error::{Error, Result};

pub type RhsFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;

/// Known physics `f(X, u, t)`.
#[derive(Clone)]
pub struct NominalModel {
    pub state_dim: usize,
    pub n_inputs: usize,
    pub rhs: Arc<RhsFn>,
    /// One equation line per state.
    pub description: Vec<String>,
    /// States whose equations carry dynamics beyond kinematic identities.
    pub driven_states: Vec<usize>,
    /// States driven by Brownian noise in stochastic operation.
    pub noise_states: Vec<usize>,
}

impl fmt::Debug for NominalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NominalModel")
            .field("state_dim", &self.state_dim)
            .field("n_inputs", &self.n_inputs)
            .field("description", &self.description)
            .finish()
    }
}

impl NominalModel {
    pub fn new(
        state_dim: usize,
        n_inputs: usize,
        rhs: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        NominalModel {
            state_dim,
            n_inputs,
            rhs: Arc::new(rhs),
            description: (0..state_dim).map(|i| format!("dX{}/dt = f{}(X, u, t)", i + 1, i + 1)).collect(),
            driven_states: (0..state_dim).collect(),
            noise_states: (0..state_dim).collect(),
        }
    }

    /// `f ≡ 0`.
    pub fn zero(state_dim: usize) -> Self {
        let mut m = NominalModel::new(state_dim, 0, |_, _, _, out| out.fill(0.0));
        m.description = (0..state_dim).map(|i| format!("dX{}/dt = 0", i + 1)).collect();
        m
    }

    pub fn eval(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        (self.rhs)(x, u, t, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub states: DMatrix<f64>,
    pub inputs: Option<DMatrix<f64>>,
    /// Measured time derivative of each state, row-aligned with `states`.
    /// For stochastic runs row k is `(X_{k+1} − X_k)/Δt`.
    pub rates: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Deterministic,
    Stochastic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    /// Only the measured rate channels of the driven states.
    #[default]
    Rates,
    /// States and inputs; any rate channel is discarded so derivatives and
    /// increments are rebuilt from the noisy states.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dt: f64,
    pub source: Source,
    pub system: Option<String>,
    pub noise_level: f64,
    pub noise_scope: Option<NoiseScope>,
    pub noise_seed: Option<u64>,
    pub driven_states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub t: Vec<f64>,
    pub realizations: Vec<Realization>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn single(t: Vec<f64>, states: DMatrix<f64>, inputs: Option<DMatrix<f64>>) -> Result<Self> {
        let dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
        let m = states.ncols();
        let d = Dataset {
            t,
            realizations: vec![Realization { states, inputs, rates: None }],
            meta: DatasetMeta {
                dt,
                source: Source::External,
                system: None,
                noise_level: 0.0,
                noise_scope: None,
                noise_seed: None,
                driven_states: (0..m).collect(),
            },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn state_dim(&self) -> usize {
        self.realizations.first().map_or(0, |r| r.states.ncols())
    }

    pub fn n_inputs(&self) -> usize {
        self.realizations.first().and_then(|r| r.inputs.as_ref()).map_or(0, |u| u.ncols())
    }

    pub fn dt(&self) -> f64 {
        self.meta.dt
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 2 {
            return Err(Error::Dimension("dataset needs at least two samples".into()));
        }
        let dt = self.t[1] - self.t[0];
        if !(dt > 0.0) {
            return Err(Error::Config("timestamps must be strictly increasing".into()));
        }
        for (k, w) in self.t.windows(2).enumerate() {
            let expected = self.t[0] + (k + 1) as f64 * dt;
            if !(w[1] > w[0]) || (w[1] - expected).abs() > 1e-9 * dt.max(expected.abs()) {
                return Err(Error::Config(format!("non-uniform sampling at row {}", k + 1)));
            }
        }
        if (self.meta.dt - dt).abs() > 1e-9 * dt {
            return Err(Error::Config("meta.dt disagrees with timestamps".into()));
        }
        let Some(first) = self.realizations.first() else {
            return Err(Error::Dimension("dataset has no realizations".into()));
        };
        let m = first.states.ncols();
        let nu = self.n_inputs();
        for r in &self.realizations {
            if r.states.nrows() != n || r.states.ncols() != m {
                return Err(Error::Dimension("realization state shape".into()));
            }
            match &r.inputs {
                Some(u) if u.nrows() != n || u.ncols() != nu => {
                    return Err(Error::Dimension("realization input shape".into()))
                }
                None if nu > 0 => return Err(Error::Dimension("realization missing inputs".into())),
                _ => {}
            }
            if let Some(d) = &r.rates {
                if d.nrows() != n || d.ncols() != m {
                    return Err(Error::Dimension("realization rate shape".into()));
                }
            }
        }
        Ok(())
    }

    /// Row-stacked states of all realizations.
    pub fn stacked_states(&self) -> DMatrix<f64> {
        stack(self.realizations.iter().map(|r| &r.states))
    }
}

fn stack<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let mats: Vec<&DMatrix<f64>> = mats.collect();
    let rows = mats.iter().map(|m| m.nrows()).sum();
    let cols = mats.first().map_or(0, |m| m.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for m in mats {
        out.rows_mut(r0, m.nrows()).copy_from(m);
        r0 += m.nrows();
    }
    out
}

/// Weights `w` with `Σ w_j f(t + o_j h) ≈ h f'(t)`, exact for polynomials of
/// degree below the stencil length.
fn stencil(offsets: &[f64]) -> Vec<f64> {
    let n = offsets.len();
    let a = DMatrix::from_fn(n, n, |p, j| offsets[j].powi(p as i32));
    let mut rhs = DVector::zeros(n);
    rhs[1] = 1.0;
    let w = a.lu().solve(&rhs).expect("distinct stencil offsets");
    w.iter().copied().collect()
}

/// Number of leading and trailing rows computed with one-sided stencils.
pub const EDGE_ROWS: usize = 2;

/// Fourth-order central differences in the interior; the two rows at each
/// end use one-sided stencils (six points when available, five otherwise).
pub fn differentiate(states: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let n = states.nrows();
    if n < 5 {
        return Err(Error::Dimension(format!("differentiation needs at least 5 rows, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("differentiation step must be positive".into()));
    }
    let width = if n >= 6 { 6 } else { 5 };
    let central = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
    let mut out = DMatrix::zeros(n, states.ncols());
    let head: Vec<Vec<f64>> = (0..EDGE_ROWS)
        .map(|r| stencil(&(0..width).map(|j| j as f64 - r as f64).collect::<Vec<_>>()))
        .collect();
    for c in 0..states.ncols() {
        let x = states.column(c);
        for r in 0..n {
            // weights sum to zero, so work on offsets from the centre sample
            let x0 = x[r];
            let v = if r < EDGE_ROWS {
                head[r].iter().enumerate().map(|(j, w)| w * (x[j] - x0)).sum::<f64>()
            } else if r >= n - EDGE_ROWS {
                // mirror of the leading stencil: f'(t) from f(t − s) flips sign
                let rr = n - 1 - r;
                -head[rr].iter().enumerate().map(|(j, w)| w * (x[n - 1 - j] - x0)).sum::<f64>()
            } else {
                central.iter().enumerate().map(|(j, w)| w * (x[r + j - 2] - x0)).sum::<f64>()
            };
            out[(r, c)] = v / dt;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    DriftF1,
    DriftF2,
    DiffusionF2,
}

#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub y: DVector<f64>,
    pub library: LibraryMatrix,
    pub kind: ProblemKind,
    pub state_index: usize,
    pub pair: Option<(usize, usize)>,
    pub dt: f64,
    /// Variance of the measured rate channel the target was built from.
    pub signal_variance: f64,
}

impl RegressionProblem {
    pub fn residual_variance(&self) -> f64 {
        variance(self.y.as_slice())
    }

    /// True when the target is a pure kinematic identity of the nominal model.
    pub fn is_trivial(&self) -> bool {
        self.residual_variance() <= 1e-12 * self.signal_variance
    }
}

pub fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Options {
    /// Drop the one-sided stencil rows when derivatives are reconstructed.
    pub trim_edges: bool,
}

impl Default for F1Options {
    fn default() -> Self {
        F1Options { trim_edges: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F2Options {
    pub max_dt: f64,
    /// Average targets and library rows across realizations at each time
    /// index instead of stacking raw increments.
    pub ensemble_average: bool,
}

impl Default for F2Options {
    fn default() -> Self {
        F2Options { max_dt: 5e-3, ensemble_average: false }
    }
}

fn check_state(data: &Dataset, i: usize) -> Result<()> {
    data.validate()?;
    if i >= data.state_dim() {
        return Err(Error::Dimension(format!("state index {i} out of range")));
    }
    Ok(())
}

pub fn build_f1(data: &Dataset, nominal: &NominalModel, spec: &LibrarySpec, i: usize) -> Result<RegressionProblem> {
    build_f1_with(data, nominal, spec, i, &F1Options::default())
}

/// Residual derivative `Ẋ_i − f_i(X, u, t)` against the library at `X`.
pub fn build_f1_with(
    data: &Dataset,
    nominal: &NominalModel,
    spec: &LibrarySpec,
    i: usize,
    opts: &F1Options,
) -> Result<RegressionProblem> {
    check_state(data, i)?;
    let m = data.state_dim();
    if nominal.state_dim != m {
        return Err(Error::Dimension("nominal model and data state dimensions differ".into()));
    }
    if (spec.include_input || nominal.n_inputs > 0) && data.n_inputs() < nominal.n_inputs.max(spec.n_inputs) {
        return Err(Error::Dimension("framework-1 needs measured inputs".into()));
    }
    let mut ys = Vec::new();
    let mut rates_all = Vec::new();
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut f = vec![0.0; m];
    for r in &data.realizations {
        let (rates, range) = match &r.rates {
            Some(d) => (d.clone(), 0..data.n()),
            None => {
                let d = differentiate(&r.states, data.dt())?;
                let e = if opts.trim_edges { EDGE_ROWS } else { 0 };
                (d, e..data.n() - e)
            }
        };
        for k in range {
            let x: Vec<f64> = r.states.row(k).iter().copied().collect();
            let u: Vec<f64> = r.inputs.as_ref().map_or(vec![], |u| u.row(k).iter().copied().collect());
            nominal.eval(&x, &u, data.t[k], &mut f);
            ys.push(rates[(k, i)] - f[i]);
            rates_all.push(rates[(k, i)]);
            xs.push(x);
            us.push(u);
        }
    }
    let n = ys.len();
    let states = DMatrix::from_fn(n, m, |r, c| xs[r][c]);
    let nu = data.n_inputs();
    let inputs = (nu > 0).then(|| DMatrix::from_fn(n, nu, |r, c| us[r][c]));
    let library = evaluate(spec, &states, inputs.as_ref())?;
    Ok(RegressionProblem {
        y: DVector::from_vec(ys),
        library,
        kind: ProblemKind::DriftF1,
        state_index: i,
        pair: None,
        dt: data.dt(),
        signal_variance: variance(&rates_all),
    })
}

/// Nominal-removed increments `ΔZ_k = ΔX_k − f(X_k, t_k)·Δt` of one
/// realization, one row per usable time index.
fn residual_increments(r: &Realization, t: &[f64], dt: f64, drift: Option<&NominalModel>) -> DMatrix<f64> {
    let m = r.states.ncols();
    let n = match &r.rates {
        Some(_) => r.states.nrows(),
        None => r.states.nrows() - 1,
    };
    let mut out = DMatrix::zeros(n, m);
    let mut f = vec![0.0; m];
    let zeros = vec![0.0; drift.map_or(0, |d| d.n_inputs)];
    for k in 0..n {
        let x: Vec<f64> = r.states.row(k).iter().copied().collect();
        match drift {
            Some(d) => d.eval(&x, &zeros, t[k], &mut f),
            None => f.fill(0.0),
        }
        for c in 0..m {
            let inc = match &r.rates {
                Some(d) => d[(k, c)] * dt,
                None => r.states[(k + 1, c)] - r.states[(k, c)],
            };
            out[(k, c)] = inc - f[c] * dt;
        }
    }
    out
}

fn check_f2(data: &Dataset, opts: &F2Options) -> Result<()> {
    if data.dt() > opts.max_dt {
        return Err(Error::CoarseSampling { dt: data.dt(), cap: opts.max_dt });
    }
    if opts.ensemble_average {
        let n0 = data.realizations[0].states.nrows();
        if data.realizations.iter().any(|r| r.states.nrows() != n0 || r.rates.is_some() != data.realizations[0].rates.is_some()) {
            return Err(Error::Dimension("ensemble averaging needs equally shaped realizations".into()));
        }
    }
    Ok(())
}

/// Assembles rows `(X_k, value_k)` over realizations, optionally averaging
/// across the ensemble at each time index.
fn assemble(
    data: &Dataset,
    spec: &LibrarySpec,
    incs: &[DMatrix<f64>],
    value: impl Fn(&DMatrix<f64>, usize) -> f64,
    opts: &F2Options,
) -> Result<(DVector<f64>, LibraryMatrix)> {
    let m = data.state_dim();
    let mut ys = Vec::new();
    let mut blocks = Vec::new();
    for (r, inc) in data.realizations.iter().zip(incs) {
        let n = inc.nrows();
        ys.extend((0..n).map(|k| value(inc, k)));
        blocks.push(r.states.rows(0, n).into_owned());
    }
    let states = stack(blocks.iter());
    debug_assert_eq!(states.ncols(), m);
    let lib = evaluate(spec, &states, None)?;
    if !opts.ensemble_average || data.realizations.len() == 1 {
        return Ok((DVector::from_vec(ys), lib));
    }
    let e = data.realizations.len();
    let n = ys.len() / e;
    let mut y = DVector::zeros(n);
    let mut values = DMatrix::zeros(n, lib.ncols());
    for r in 0..e {
        for k in 0..n {
            y[k] += ys[r * n + k] / e as f64;
            for c in 0..lib.ncols() {
                values[(k, c)] += lib.values[(r * n + k, c)] / e as f64;
            }
        }
    }
    Ok((y, LibraryMatrix { values, ..lib }))
}

fn rate_variance(incs: &[DMatrix<f64>], i: usize, dt: f64) -> f64 {
    let v: Vec<f64> = incs.iter().flat_map(|d| d.column(i).iter().map(|x| x / dt).collect::<Vec<_>>()).collect();
    variance(&v)
}

pub fn build_f2_drift(data: &Dataset, nominal: &NominalModel, spec: &LibrarySpec, i: usize) -> Result<RegressionProblem> {
    build_f2_drift_with(data, nominal, spec, i, &F2Options::default())
}

/// Kramers-Moyal drift targets `ΔZ_i,k / Δt` against the library at `X_k`.
pub fn build_f2_drift_with(
    data: &Dataset,
    nominal: &NominalModel,
    spec: &LibrarySpec,
    i: usize,
    opts: &F2Options,
) -> Result<RegressionProblem> {
    check_state(data, i)?;
    check_f2(data, opts)?;
    if spec.include_input {
        return Err(Error::Config("output-only targets cannot use input columns".into()));
    }
    let dt = data.dt();
    let incs: Vec<DMatrix<f64>> =
        data.realizations.iter().map(|r| residual_increments(r, &data.t, dt, Some(nominal))).collect();
    let raw: Vec<DMatrix<f64>> =
        data.realizations.iter().map(|r| residual_increments(r, &data.t, dt, None)).collect();
    let (y, library) = assemble(data, spec, &incs, |d, k| d[(k, i)] / dt, opts)?;
    Ok(RegressionProblem {
        y,
        library,
        kind: ProblemKind::DriftF2,
        state_index: i,
        pair: None,
        dt,
        signal_variance: rate_variance(&raw, i, dt),
    })
}

pub fn build_f2_diffusion(
    data: &Dataset,
    spec: &LibrarySpec,
    pair: (usize, usize),
    drift: Option<&NominalModel>,
) -> Result<RegressionProblem> {
    build_f2_diffusion_with(data, spec, pair, drift, &F2Options::default())
}

/// Quadratic-covariation targets `ΔZ_i·ΔZ_j / Δt`. With `drift` given the
/// increments are taken relative to it; otherwise raw increments are used.
pub fn build_f2_diffusion_with(
    data: &Dataset,
    spec: &LibrarySpec,
    (i, j): (usize, usize),
    drift: Option<&NominalModel>,
    opts: &F2Options,
) -> Result<RegressionProblem> {
    check_state(data, i)?;
    check_state(data, j)?;
    check_f2(data, opts)?;
    if spec.include_input {
        return Err(Error::Config("output-only targets cannot use input columns".into()));
    }
    let dt = data.dt();
    let incs: Vec<DMatrix<f64>> =
        data.realizations.iter().map(|r| residual_increments(r, &data.t, dt, drift)).collect();
    let (y, library) = assemble(data, spec, &incs, |d, k| d[(k, i)] * d[(k, j)] / dt, opts)?;
    let sv = variance(y.as_slice()).max(y.mean().powi(2));
    Ok(RegressionProblem {
        y,
        library,
        kind: ProblemKind::DiffusionF2,
        state_index: i,
        pair: Some((i, j)),
        dt,
        signal_variance: sv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_weights_central() {
        let w = stencil(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let expected = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(differentiate(&DMatrix::zeros(4, 1), 0.1).is_err());
        assert!(differentiate(&DMatrix::zeros(5, 1), 0.1).is_ok());
    }

    #[test]
    fn jittered_timestamps_rejected() {
        let mut t: Vec<f64> = (0..10).map(|k| k as f64 * 0.01).collect();
        t[5] += 1e-6;
        assert!(Dataset::single(t, DMatrix::zeros(10, 1), None).is_err());
    }
}
