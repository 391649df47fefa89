//! Spike-and-slab Gibbs sampler for sparse linear regression.
//!
//! The slab correlation matrix is the identity. Latent indicators are drawn
//! with the regression weights and the noise variance integrated out, so the
//! inclusion odds only need the Gram quantities `LᵀL`, `LᵀY` and `YᵀY`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::LibraryMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha_p: f64,
    pub beta_p: f64,
    pub alpha_sigma: f64,
    pub beta_sigma: f64,
    pub alpha_v: f64,
    pub beta_v: f64,
    pub p0_init: f64,
    pub theta_s_init: f64,
    pub n_mcmc: usize,
    pub n_burn: usize,
    pub pip_threshold: f64,
}

impl Default for Hyperparameters {
    /// Published values except for a vague noise-variance prior.
    fn default() -> Self {
        Hyperparameters { alpha_sigma: 1e-10, beta_sigma: 1e-10, ..Hyperparameters::informative() }
    }
}

impl Hyperparameters {
    /// The values printed in the original study, including the
    /// informative `IG(1e4, 1e4)` prior on the noise variance.
    pub fn informative() -> Self {
        Hyperparameters {
            alpha_p: 0.1,
            beta_p: 1.0,
            alpha_sigma: 1e4,
            beta_sigma: 1e4,
            alpha_v: 0.5,
            beta_v: 0.5,
            p0_init: 0.1,
            theta_s_init: 10.0,
            n_mcmc: 3000,
            n_burn: 500,
            pip_threshold: 0.7,
        }
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.pip_threshold = t;
        self
    }

    pub fn with_chain(mut self, n_mcmc: usize, n_burn: usize) -> Self {
        self.n_mcmc = n_mcmc;
        self.n_burn = n_burn;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("alpha_p", self.alpha_p),
            ("beta_p", self.beta_p),
            ("alpha_sigma", self.alpha_sigma),
            ("beta_sigma", self.beta_sigma),
            ("alpha_v", self.alpha_v),
            ("beta_v", self.beta_v),
            ("theta_s_init", self.theta_s_init),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.p0_init > 0.0 && self.p0_init < 1.0) {
            return Err(Error::Config("p0_init must lie in (0, 1)".into()));
        }
        if !(self.pip_threshold > 0.0 && self.pip_threshold < 1.0) {
            return Err(Error::Config("pip_threshold must lie in (0, 1)".into()));
        }
        if self.n_burn >= self.n_mcmc {
            return Err(Error::Config("n_burn must be smaller than n_mcmc".into()));
        }
        Ok(())
    }
}

/// Which blocks of the sweep are held fixed, plus sweep-order and
/// scaling switches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    /// Run on RMS-scaled columns and target, reporting results in the
    /// original units. Hyperparameters then refer to the scaled problem.
    pub standardize: bool,
    pub random_order: bool,
    pub freeze_psi: bool,
    pub freeze_sigma2: bool,
    pub freeze_theta_s: bool,
    pub freeze_p0: bool,
    /// Starting indicators; the greedy search is skipped when given.
    pub initial_psi: Option<Vec<bool>>,
    pub initial_sigma2: Option<f64>,
}

impl ChainOptions {
    pub fn standard() -> Self {
        ChainOptions { standardize: true, ..Default::default() }
    }

    /// Every block except the weights held at its initial value.
    pub fn frozen(psi: Vec<bool>, sigma2: f64) -> Self {
        ChainOptions {
            freeze_psi: true,
            freeze_sigma2: true,
            freeze_theta_s: true,
            freeze_p0: true,
            initial_psi: Some(psi),
            initial_sigma2: Some(sigma2),
            ..Default::default()
        }
    }
}

/// Sufficient statistics of a regression problem.
#[derive(Debug, Clone)]
pub struct Gram {
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    pub yy: f64,
    pub n: usize,
    pub labels: Vec<String>,
}

impl Gram {
    pub fn new(y: &DVector<f64>, lib: &LibraryMatrix) -> Result<Self> {
        let l = &lib.values;
        if y.len() != l.nrows() {
            return Err(Error::Dimension(format!(
                "target has {} rows, library has {}",
                y.len(),
                l.nrows()
            )));
        }
        if y.is_empty() || l.ncols() == 0 {
            return Err(Error::Config("regression needs at least one row and one column".into()));
        }
        if y.iter().any(|v| !v.is_finite()) || l.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression problem".into()));
        }
        Ok(Gram {
            g: l.tr_mul(l),
            b: l.tr_mul(y),
            yy: y.dot(y),
            n: y.len(),
            labels: lib.labels.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.b.len()
    }

    /// Rescales columns by `1/sc` and the target by `1/sy`.
    fn scaled(&self, sc: &[f64], sy: f64) -> Gram {
        let k = self.k();
        let g = DMatrix::from_fn(k, k, |i, j| self.g[(i, j)] / (sc[i] * sc[j]));
        let b = DVector::from_fn(k, |i, _| self.b[i] / (sc[i] * sy));
        Gram { g, b, yy: self.yy / (sy * sy), n: self.n, labels: self.labels.clone() }
    }

    fn sub(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let r = idx.len();
        let g = DMatrix::from_fn(r, r, |i, j| self.g[(idx[i], idx[j])]);
        let b = DVector::from_fn(r, |i, _| self.b[idx[i]]);
        (g, b)
    }
}

/// Conditional quantities for an active set under a given slab variance.
struct Active {
    chol: Cholesky<f64, Dyn>,
    mu: DVector<f64>,
    q: f64,
    log_det: f64,
}

fn active_terms(gram: &Gram, idx: &[usize], theta_s: f64) -> Option<Active> {
    let (mut a, b) = gram.sub(idx);
    for i in 0..idx.len() {
        a[(i, i)] += 1.0 / theta_s;
    }
    let chol = Cholesky::new(a)?;
    let mu = chol.solve(&b);
    let q = (gram.yy - b.dot(&mu)).max(0.0);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    if !log_det.is_finite() || !q.is_finite() {
        return None;
    }
    Some(Active { chol, mu, q, log_det })
}

fn active_set(psi: &[bool]) -> Vec<usize> {
    psi.iter().enumerate().filter(|(_, &p)| p).map(|(k, _)| k).collect()
}

fn ill_conditioned(gram: &Gram, idx: &[usize]) -> Error {
    Error::IllConditioned { labels: idx.iter().map(|&k| gram.labels[k].clone()).collect() }
}

/// Log of the collapsed marginal likelihood `p(Y | Ψ, ϑ_s)` up to the
/// factors shared by every active set.
pub fn log_marginal(gram: &Gram, psi: &[bool], theta_s: f64, hp: &Hyperparameters) -> Result<f64> {
    let idx = active_set(psi);
    let shape = hp.alpha_sigma + 0.5 * gram.n as f64;
    if idx.is_empty() {
        return Ok(-shape * (hp.beta_sigma + 0.5 * gram.yy).ln());
    }
    let a = active_terms(gram, &idx, theta_s).ok_or_else(|| ill_conditioned(gram, &idx))?;
    Ok(-0.5 * idx.len() as f64 * theta_s.ln() - 0.5 * a.log_det
        - shape * (hp.beta_sigma + 0.5 * a.q).ln())
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inclusion_from_logs(l0: f64, l1: f64, p0: f64) -> f64 {
    logistic(l1 - l0 + p0.ln() - (1.0 - p0).ln())
}

/// `P(ψ_k = 1 | Y, Ψ_{-k}, ϑ_s, p₀) = p₀ / (p₀ + λ(1 − p₀))`.
pub fn inclusion_probability(
    gram: &Gram,
    psi: &[bool],
    k: usize,
    theta_s: f64,
    p0: f64,
    hp: &Hyperparameters,
) -> Result<f64> {
    let mut p = psi.to_vec();
    p[k] = false;
    let l0 = log_marginal(gram, &p, theta_s, hp)?;
    p[k] = true;
    let l1 = log_marginal(gram, &p, theta_s, hp)?;
    Ok(inclusion_from_logs(l0, l1, p0))
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    pub theta: DVector<f64>,
    pub psi: Vec<bool>,
    pub theta_s: f64,
    pub sigma2: f64,
    pub p0: f64,
    pub rng: ChaCha8Rng,
    /// Latent flips per column since the state was created.
    pub flips: Vec<usize>,
}

fn inv_gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

fn ols_rss(gram: &Gram, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return gram.yy;
    }
    let (mut a, b) = gram.sub(idx);
    let ridge = 1e-12 * a.diagonal().max().max(f64::MIN_POSITIVE);
    for i in 0..idx.len() {
        a[(i, i)] += ridge;
    }
    match Cholesky::new(a) {
        Some(ch) => {
            let c = ch.solve(&b);
            let gc = DMatrix::from_fn(idx.len(), idx.len(), |i, j| gram.g[(idx[i], idx[j])]) * &c;
            (gram.yy - 2.0 * c.dot(&b) + c.dot(&gc)).max(0.0)
        }
        None => f64::INFINITY,
    }
}

/// Forward selection: repeatedly activate the column giving the largest
/// drop in OLS mean-squared error, stopping once the best drop no longer
/// pays for an extra parameter (`N·ln(mse_old/mse_new) ≤ ln N`).
fn greedy_psi(gram: &Gram) -> (Vec<bool>, f64) {
    let k = gram.k();
    let n = gram.n as f64;
    let floor = f64::EPSILON * gram.yy.max(f64::MIN_POSITIVE);
    let mut psi = vec![false; k];
    let mut idx: Vec<usize> = Vec::new();
    let mut rss = gram.yy;
    while idx.len() < k.min(gram.n) && rss > floor {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..k).filter(|&c| !psi[c]) {
            let mut trial = idx.clone();
            trial.push(c);
            trial.sort_unstable();
            let r = ols_rss(gram, &trial);
            if best.is_none_or(|(_, b)| r < b) {
                best = Some((c, r));
            }
        }
        let Some((c, r)) = best else { break };
        let gain = n * (rss.max(floor) / r.max(floor)).ln();
        if !(gain > n.ln()) {
            break;
        }
        psi[c] = true;
        idx.push(c);
        idx.sort_unstable();
        rss = r;
    }
    (psi, (rss / n).max(f64::MIN_POSITIVE))
}

fn draw_theta(
    gram: &Gram,
    psi: &[bool],
    theta_s: f64,
    sigma2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let idx = active_set(psi);
    let mut theta = DVector::zeros(gram.k());
    if idx.is_empty() {
        return Ok(theta);
    }
    let a = active_terms(gram, &idx, theta_s).ok_or_else(|| ill_conditioned(gram, &idx))?;
    let z = DVector::from_fn(idx.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    // A = L Lᵀ, so L⁻ᵀz has covariance A⁻¹.
    let w = a
        .chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| ill_conditioned(gram, &idx))?;
    let sd = sigma2.sqrt();
    for (i, &k) in idx.iter().enumerate() {
        theta[k] = a.mu[i] + sd * w[i];
    }
    Ok(theta)
}

fn initialize_gram(
    gram: &Gram,
    hp: &Hyperparameters,
    seed: u64,
    opts: &ChainOptions,
) -> Result<SamplerState> {
    hp.validate()?;
    let (psi, mse) = match &opts.initial_psi {
        Some(p) => {
            if p.len() != gram.k() {
                return Err(Error::Dimension("initial indicator length".into()));
            }
            (p.clone(), (ols_rss(gram, &active_set(p)) / gram.n as f64).max(f64::MIN_POSITIVE))
        }
        None => greedy_psi(gram),
    };
    let sigma2 = opts.initial_sigma2.unwrap_or(mse);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = draw_theta(gram, &psi, hp.theta_s_init, sigma2, &mut rng)?;
    Ok(SamplerState {
        theta,
        psi,
        theta_s: hp.theta_s_init,
        sigma2,
        p0: hp.p0_init,
        rng,
        flips: vec![0; gram.k()],
    })
}

/// Chain start: greedy indicators, OLS residual variance and a weight
/// draw from the conditional Gaussian.
pub fn initialize(
    y: &DVector<f64>,
    lib: &LibraryMatrix,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<SamplerState> {
    let gram = Gram::new(y, lib)?;
    initialize_gram(&gram, hp, seed, &ChainOptions::default())
}

/// One sweep: indicators, noise variance, weights, slab variance, `p₀`.
pub fn gibbs_sweep(
    state: &mut SamplerState,
    gram: &Gram,
    hp: &Hyperparameters,
    opts: &ChainOptions,
) -> Result<()> {
    let k_all = gram.k();
    if !opts.freeze_psi {
        let mut order: Vec<usize> = (0..k_all).collect();
        if opts.random_order {
            order.shuffle(&mut state.rng);
        }
        let mut cur = log_marginal(gram, &state.psi, state.theta_s, hp)?;
        for k in order {
            state.psi[k] = !state.psi[k];
            // A proposal whose system cannot be factorized gets zero weight.
            let other = log_marginal(gram, &state.psi, state.theta_s, hp).unwrap_or(f64::NEG_INFINITY);
            state.psi[k] = !state.psi[k];
            let (l0, l1) = if state.psi[k] { (other, cur) } else { (cur, other) };
            let u = inclusion_from_logs(l0, l1, state.p0);
            let draw = state.rng.gen::<f64>() < u;
            if draw != state.psi[k] {
                state.psi[k] = draw;
                state.flips[k] += 1;
                cur = other;
            }
        }
    }
    let idx = active_set(&state.psi);
    let r = idx.len();
    if !opts.freeze_sigma2 {
        let q = if r == 0 {
            gram.yy
        } else {
            active_terms(gram, &idx, state.theta_s).ok_or_else(|| ill_conditioned(gram, &idx))?.q
        };
        let shape = hp.alpha_sigma + 0.5 * gram.n as f64;
        state.sigma2 = inv_gamma(&mut state.rng, shape, hp.beta_sigma + 0.5 * q).max(f64::MIN_POSITIVE);
    }
    state.theta = draw_theta(gram, &state.psi, state.theta_s, state.sigma2, &mut state.rng)?;
    if !opts.freeze_theta_s {
        let tt = state.theta.dot(&state.theta);
        let scale = hp.beta_v + tt / (2.0 * state.sigma2);
        state.theta_s = inv_gamma(&mut state.rng, hp.alpha_v + 0.5 * r as f64, scale)
            .clamp(1e-300, 1e300);
    }
    if !opts.freeze_p0 {
        let beta = Beta::new(hp.alpha_p + r as f64, hp.beta_p + (k_all - r) as f64)
            .expect("positive beta parameters");
        state.p0 = beta.sample(&mut state.rng);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Latent flips per column over the whole chain.
    pub flips: Vec<usize>,
    /// Columns whose PIP falls in (0.3, 0.7).
    pub confused: Vec<usize>,
    /// Retained draws in which every selected column was active; the
    /// reported moments come from these.
    pub n_model_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub labels: Vec<String>,
    pub pip: Vec<f64>,
    pub selected: Vec<usize>,
    pub mu_theta: Vec<f64>,
    /// Row-major K×K.
    pub sigma_theta: Vec<f64>,
    pub mu_sigma2: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    pub diagnostics: Diagnostics,
}

impl PosteriorSummary {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_row_slice(k, k, &self.sigma_theta)
    }

    pub fn selected_labels(&self) -> Vec<&str> {
        self.selected.iter().map(|&k| self.labels[k].as_str()).collect()
    }

    pub fn std(&self, k: usize) -> f64 {
        self.sigma_theta[k * self.k() + k].max(0.0).sqrt()
    }
}

/// Raw chain output in original units.
pub struct ChainTrace {
    pub psi: Vec<Vec<bool>>,
    pub theta: Vec<DVector<f64>>,
    pub sigma2: Vec<f64>,
    pub flips: Vec<usize>,
}

/// Runs the chain and returns every retained draw.
pub fn run_trace(
    y: &DVector<f64>,
    lib: &LibraryMatrix,
    hp: &Hyperparameters,
    seed: u64,
    opts: &ChainOptions,
) -> Result<ChainTrace> {
    hp.validate()?;
    let raw = Gram::new(y, lib)?;
    let k = raw.k();
    let (sc, sy) = if opts.standardize {
        let n = raw.n as f64;
        let sc: Vec<f64> = (0..k)
            .map(|i| {
                let s = (raw.g[(i, i)] / n).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        let sy = (raw.yy / n).sqrt();
        (sc, if sy > 0.0 { sy } else { 1.0 })
    } else {
        (vec![1.0; k], 1.0)
    };
    let gram = if opts.standardize { raw.scaled(&sc, sy) } else { raw };
    let mut o = opts.clone();
    if let Some(s2) = o.initial_sigma2.as_mut() {
        *s2 /= sy * sy;
    }
    let mut state = initialize_gram(&gram, hp, seed, &o)?;
    let keep = hp.n_mcmc - hp.n_burn;
    let mut trace = ChainTrace {
        psi: Vec::with_capacity(keep),
        theta: Vec::with_capacity(keep),
        sigma2: Vec::with_capacity(keep),
        flips: Vec::new(),
    };
    for it in 0..hp.n_mcmc {
        gibbs_sweep(&mut state, &gram, hp, &o)?;
        if it >= hp.n_burn {
            trace.psi.push(state.psi.clone());
            trace.theta.push(DVector::from_fn(k, |i, _| state.theta[i] * sy / sc[i]));
            trace.sigma2.push(state.sigma2 * sy * sy);
        }
    }
    trace.flips = state.flips;
    Ok(trace)
}

pub fn summarize(trace: &ChainTrace, labels: &[String], hp: &Hyperparameters, seed: u64) -> PosteriorSummary {
    let k = labels.len();
    let n_mc = trace.psi.len();
    let mut pip = vec![0.0; k];
    for p in &trace.psi {
        for (acc, &v) in pip.iter_mut().zip(p) {
            if v {
                *acc += 1.0;
            }
        }
    }
    for v in &mut pip {
        *v /= n_mc as f64;
    }
    let selected: Vec<usize> = (0..k).filter(|&i| pip[i] > hp.pip_threshold).collect();
    let mut rows: Vec<usize> =
        (0..n_mc).filter(|&s| selected.iter().all(|&i| trace.psi[s][i])).collect();
    if rows.is_empty() {
        rows = (0..n_mc).collect();
    }
    let nr = rows.len() as f64;
    let mut mu = vec![0.0; k];
    for &s in &rows {
        for &i in &selected {
            mu[i] += trace.theta[s][i];
        }
    }
    for &i in &selected {
        mu[i] /= nr;
    }
    let mut sigma = vec![0.0; k * k];
    if rows.len() > 1 {
        for &s in &rows {
            for &i in &selected {
                let di = trace.theta[s][i] - mu[i];
                for &j in &selected {
                    sigma[i * k + j] += di * (trace.theta[s][j] - mu[j]);
                }
            }
        }
        for v in &mut sigma {
            *v /= nr - 1.0;
        }
    }
    let mu_sigma2 = trace.sigma2.iter().sum::<f64>() / n_mc as f64;
    let confused = (0..k).filter(|&i| pip[i] > 0.3 && pip[i] < 0.7).collect();
    PosteriorSummary {
        labels: labels.to_vec(),
        pip,
        selected,
        mu_theta: mu,
        sigma_theta: sigma,
        mu_sigma2,
        n_mc,
        seed,
        hyperparameters: hp.clone(),
        diagnostics: Diagnostics { flips: trace.flips.clone(), confused, n_model_samples: rows.len() },
    }
}

pub fn run_chain_with(
    y: &DVector<f64>,
    lib: &LibraryMatrix,
    hp: &Hyperparameters,
    seed: u64,
    opts: &ChainOptions,
) -> Result<PosteriorSummary> {
    let trace = run_trace(y, lib, hp, seed, opts)?;
    Ok(summarize(&trace, &lib.labels, hp, seed))
}

/// Full chain with column and target scaling.
pub fn run_chain(
    y: &DVector<f64>,
    lib: &LibraryMatrix,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<PosteriorSummary> {
    run_chain_with(y, lib, hp, seed, &ChainOptions::standard())
}

/// Predictive mean `Lp·μ_θ` and covariance `Lp·Σ_θ·Lpᵀ + μ_σ²·I`.
pub fn predict(summary: &PosteriorSummary, lp: &LibraryMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if lp.labels != summary.labels {
        return Err(Error::LabelMismatch);
    }
    let mu = DVector::from_column_slice(&summary.mu_theta);
    let mean = &lp.values * &mu;
    let mut cov = &lp.values * summary.sigma_matrix() * lp.values.transpose();
    for i in 0..cov.nrows() {
        cov[(i, i)] += summary.mu_sigma2;
    }
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{evaluate, Family, LibrarySpec};

    fn lib_1d(x: &[f64]) -> LibraryMatrix {
        let spec = LibrarySpec::new(1, 2, &[Family::Constant, Family::Multinomial]);
        evaluate(&spec, &DMatrix::from_column_slice(x.len(), 1, x), None).unwrap()
    }

    #[test]
    fn greedy_picks_exact_column() {
        let x: Vec<f64> = (0..40).map(|i| 0.3 + 0.05 * i as f64).collect();
        let lib = lib_1d(&x);
        let y = DVector::from_iterator(x.len(), x.iter().map(|v| 2.0 * v));
        let s = initialize(&y, &lib, &Hyperparameters::default(), 0).unwrap();
        assert_eq!(s.psi, [false, true, false]);
    }

    #[test]
    fn zero_target_starts_empty() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let lib = lib_1d(&x);
        let s = initialize(&DVector::zeros(20), &lib, &Hyperparameters::default(), 0).unwrap();
        assert!(s.psi.iter().all(|p| !p));
        assert!(s.sigma2 > 0.0);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().with_chain(10, 10).validate().is_err());
        let mut hp = Hyperparameters::default();
        hp.p0_init = 1.0;
        assert!(hp.validate().is_err());
        assert!(Hyperparameters::informative().validate().is_ok());
    }
}
