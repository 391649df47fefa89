//! Digital-twin updating: per-state regressions, assembled models,
//! equation rendering, prediction and noise sweeps.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{parse_label, Column, Family, LibrarySpec};
use crate::error::{Error, Result};
use crate::sampler::{run_chain_with, ChainOptions, Hyperparameters, PosteriorSummary};
use crate::simulate::{
    corrupt, em_integrate, em_simulate, realization_rng, rk4_integrate, rk4_simulate, Model, NoisePolicy,
    SystemDef, TrueTerm,
};
use crate::targets::{
    build_f1_with, build_f2_diffusion_with, build_f2_drift_with, Dataset, F1Options, F2Options, NoiseScope,
    NominalModel, RegressionProblem,
};

pub const SCHEMA: &str = "twinforge/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub pip: f64,
}

/// Identified perturbation of one state equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub state: usize,
    /// True when the residual was a kinematic identity and no regression ran.
    pub skipped: bool,
    pub terms: Vec<Term>,
    /// Row-major covariance over `terms`.
    pub cov: Vec<f64>,
    pub mu_sigma2: f64,
    pub summary: Option<PosteriorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub pair: (usize, usize),
    pub terms: Vec<Term>,
    pub cov: Vec<f64>,
    pub mu_sigma2: f64,
    /// Mean and std of the constant term of `Γ_ij` (zero when unselected).
    pub gamma: f64,
    pub gamma_std: f64,
    /// `√Γ_ii` for diagonal entries with positive mean.
    pub magnitude: Option<f64>,
    pub magnitude_std: Option<f64>,
    pub summary: Option<PosteriorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatedTwin {
    pub schema: String,
    pub framework: u8,
    pub state_dim: usize,
    pub n_inputs: usize,
    pub nominal_equations: Vec<String>,
    /// Source of the nominal physics when it is a built-in system.
    pub system: Option<SystemDef>,
    pub library: LibrarySpec,
    pub diffusion_library: Option<LibrarySpec>,
    pub drift: Vec<StateModel>,
    pub diffusion: Vec<DiffusionModel>,
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOptions {
    pub chain: ChainOptions,
    pub f1: F1Options,
    pub f2: F2Options,
    /// Diffusion pairs; defaults to all pairs of the noise-carrying states.
    pub diffusion_pairs: Option<Vec<(usize, usize)>>,
    /// Take covariation increments relative to nominal plus identified drift.
    pub drift_corrected_diffusion: bool,
    /// Keep full posterior summaries in the twin.
    pub keep_summaries: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            chain: ChainOptions::standard(),
            f1: F1Options::default(),
            f2: F2Options::default(),
            diffusion_pairs: None,
            drift_corrected_diffusion: true,
            keep_summaries: true,
        }
    }
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn terms_of(summary: &PosteriorSummary) -> (Vec<Term>, Vec<f64>) {
    let sel = &summary.selected;
    let k = summary.k();
    let terms = sel
        .iter()
        .map(|&i| Term {
            label: summary.labels[i].clone(),
            mean: summary.mu_theta[i],
            std: summary.std(i),
            pip: summary.pip[i],
        })
        .collect();
    let mut cov = Vec::with_capacity(sel.len() * sel.len());
    for &i in sel {
        for &j in sel {
            cov.push(summary.sigma_theta[i * k + j]);
        }
    }
    (terms, cov)
}

fn solve_state(
    problem: Result<RegressionProblem>,
    state: usize,
    hp: &Hyperparameters,
    seed: u64,
    opts: &UpdateOptions,
) -> Result<StateModel> {
    let problem = problem.map_err(|e| e.at_state(state))?;
    if problem.is_trivial() {
        return Ok(StateModel { state, skipped: true, terms: vec![], cov: vec![], mu_sigma2: 0.0, summary: None });
    }
    let summary = run_chain_with(&problem.y, &problem.library, hp, seed, &opts.chain).map_err(|e| e.at_state(state))?;
    let (terms, cov) = terms_of(&summary);
    Ok(StateModel {
        state,
        skipped: false,
        terms,
        cov,
        mu_sigma2: summary.mu_sigma2,
        summary: opts.keep_summaries.then_some(summary),
    })
}

fn check_hp(hp: &Hyperparameters) -> Result<()> {
    hp.validate()
}

/// Input-output update: one regression per state on residual derivatives.
pub fn update_f1(
    data: &Dataset,
    nominal: &NominalModel,
    spec: &LibrarySpec,
    hp: &Hyperparameters,
    seed: u64,
    opts: &UpdateOptions,
) -> Result<UpdatedTwin> {
    check_hp(hp)?;
    let m = data.state_dim();
    let drift: Result<Vec<StateModel>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = build_f1_with(data, nominal, spec, i, &opts.f1);
            solve_state(p, i, hp, derive_seed(seed, i as u64), opts)
        })
        .collect();
    Ok(UpdatedTwin {
        schema: SCHEMA.into(),
        framework: 1,
        state_dim: m,
        n_inputs: data.n_inputs(),
        nominal_equations: nominal.description.clone(),
        system: None,
        library: spec.clone(),
        diffusion_library: None,
        drift: drift?,
        diffusion: vec![],
        seed,
        hyperparameters: hp.clone(),
    })
}

/// Output-only update: drift regressions per state, then covariation
/// regressions per state pair.
pub fn update_f2(
    data: &Dataset,
    nominal: &NominalModel,
    spec_drift: &LibrarySpec,
    spec_diff: &LibrarySpec,
    hp: &Hyperparameters,
    seed: u64,
    opts: &UpdateOptions,
) -> Result<UpdatedTwin> {
    check_hp(hp)?;
    let m = data.state_dim();
    let drift: Vec<StateModel> = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = build_f2_drift_with(data, nominal, spec_drift, i, &opts.f2);
            solve_state(p, i, hp, derive_seed(seed, i as u64), opts)
        })
        .collect::<Result<_>>()?;
    let pairs = match &opts.diffusion_pairs {
        Some(p) => p.clone(),
        None => {
            let s = &nominal.noise_states;
            let mut p = Vec::new();
            for (a, &i) in s.iter().enumerate() {
                for &j in &s[a..] {
                    p.push((i, j));
                }
            }
            p
        }
    };
    let corrected = if opts.drift_corrected_diffusion {
        Some(combined_model(nominal, &drift, m, 0)?)
    } else {
        Some(nominal.clone())
    };
    let diffusion: Vec<DiffusionModel> = pairs
        .par_iter()
        .enumerate()
        .map(|(n, &(i, j))| {
            let p = build_f2_diffusion_with(data, spec_diff, (i, j), corrected.as_ref(), &opts.f2)
                .map_err(|e| e.at_state(i))?;
            let summary = run_chain_with(&p.y, &p.library, hp, derive_seed(seed, 1000 + n as u64), &opts.chain)
                .map_err(|e| e.at_state(i))?;
            let (terms, cov) = terms_of(&summary);
            let (gamma, gamma_std) = terms
                .iter()
                .find(|t| t.label == "1")
                .map_or((0.0, 0.0), |t| (t.mean, t.std));
            let (magnitude, magnitude_std) = if i == j && gamma > 0.0 {
                (Some(gamma.sqrt()), Some(gamma_std / (2.0 * gamma.sqrt())))
            } else {
                (None, None)
            };
            Ok(DiffusionModel {
                pair: (i, j),
                terms,
                cov,
                mu_sigma2: summary.mu_sigma2,
                gamma,
                gamma_std,
                magnitude,
                magnitude_std,
                summary: opts.keep_summaries.then_some(summary),
            })
        })
        .collect::<Result<_>>()?;
    Ok(UpdatedTwin {
        schema: SCHEMA.into(),
        framework: 2,
        state_dim: m,
        n_inputs: 0,
        nominal_equations: nominal.description.clone(),
        system: None,
        library: spec_drift.clone(),
        diffusion_library: Some(spec_diff.clone()),
        drift,
        diffusion,
        seed,
        hyperparameters: hp.clone(),
    })
}

/// Parsed identified terms of every state.
#[derive(Debug, Clone)]
struct TermSet {
    per_state: Vec<Vec<(Column, f64)>>,
}

impl TermSet {
    fn new(drift: &[StateModel], m: usize, coefs: Option<&[Vec<f64>]>) -> Result<Self> {
        let mut per_state = vec![Vec::new(); m];
        for (s, sm) in drift.iter().enumerate() {
            for (t, term) in sm.terms.iter().enumerate() {
                let c = parse_label(&term.label, m)?;
                let v = coefs.map_or(term.mean, |c| c[s][t]);
                per_state[sm.state].push((c, v));
            }
        }
        Ok(TermSet { per_state })
    }

    fn add(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (i, terms) in self.per_state.iter().enumerate() {
            for (c, v) in terms {
                out[i] += v * c.eval(x, u);
            }
        }
    }
}

/// Nominal model plus the identified drift terms (posterior means).
fn combined_model(nominal: &NominalModel, drift: &[StateModel], m: usize, n_inputs: usize) -> Result<NominalModel> {
    combined_with(nominal, TermSet::new(drift, m, None)?, n_inputs)
}

fn combined_with(nominal: &NominalModel, set: TermSet, n_inputs: usize) -> Result<NominalModel> {
    let base = nominal.clone();
    let nu_nom = nominal.n_inputs;
    let mut model = NominalModel::new(base.state_dim, n_inputs.max(nu_nom), move |x, u, t, out| {
        if u.len() >= nu_nom {
            base.eval(x, u, t, out);
        } else {
            let z = vec![0.0; nu_nom];
            base.eval(x, &z, t, out);
        }
        set.add(x, u, out);
    });
    model.description = nominal.description.clone();
    model.driven_states = nominal.driven_states.clone();
    model.noise_states = nominal.noise_states.clone();
    Ok(model)
}

impl UpdatedTwin {
    /// Nominal plus identified drift, evaluable like any model.
    pub fn model(&self, nominal: &NominalModel) -> Result<NominalModel> {
        combined_model(nominal, &self.drift, self.state_dim, self.n_inputs)
    }

    pub fn selected_labels(&self, state: usize) -> Vec<String> {
        self.drift.iter().find(|s| s.state == state).map_or(vec![], |s| s.terms.iter().map(|t| t.label.clone()).collect())
    }

    pub fn term(&self, state: usize, label: &str) -> Option<&Term> {
        self.drift.iter().find(|s| s.state == state)?.terms.iter().find(|t| t.label == label)
    }

    pub fn diffusion_entry(&self, pair: (usize, usize)) -> Option<&DiffusionModel> {
        self.diffusion.iter().find(|d| d.pair == pair)
    }

    /// Γ over the given states, from the identified constant terms.
    fn gamma_matrix(&self, states: &[usize]) -> DMatrix<f64> {
        let q = states.len();
        DMatrix::from_fn(q, q, |a, b| {
            let (i, j) = (states[a].min(states[b]), states[a].max(states[b]));
            self.diffusion_entry((i, j)).map_or(0.0, |d| d.gamma)
        })
    }

    /// Diffusion matrix `g` with `ggᵀ = Γ` on the noise states.
    pub fn diffusion_matrix(&self, noise_states: &[usize]) -> DMatrix<f64> {
        let m = self.state_dim;
        let q = noise_states.len();
        let gamma = self.gamma_matrix(noise_states);
        let l = match gamma.clone().cholesky() {
            Some(c) => c.l(),
            None => DMatrix::from_fn(q, q, |a, b| if a == b { gamma[(a, a)].max(0.0).sqrt() } else { 0.0 }),
        };
        let mut g = DMatrix::zeros(m, q);
        for (a, &i) in noise_states.iter().enumerate() {
            for b in 0..q {
                g[(i, b)] = l[(a, b)];
            }
        }
        g
    }
}

fn fmt_sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 12) as usize;
    format!("{:.*}", decimals, v)
}

fn render_term(t: &Term) -> String {
    let sign = if t.mean < 0.0 { '-' } else { '+' };
    format!(" {sign} {}*{} [±{}]", fmt_sig(t.mean.abs()), t.label, fmt_sig(t.std))
}

/// Per-state equations: nominal line, identified terms with one-sigma
/// uncertainty in brackets, then any diffusion annotation.
pub fn render_equations(twin: &UpdatedTwin) -> String {
    let mut out = String::new();
    for (i, line) in twin.nominal_equations.iter().enumerate() {
        out.push_str(line);
        if let Some(s) = twin.drift.iter().find(|s| s.state == i) {
            for t in &s.terms {
                out.push_str(&render_term(t));
            }
        }
        if let Some(d) = twin.diffusion_entry((i, i)) {
            if let Some(mag) = d.magnitude {
                out.push_str(&format!(" + {}*dB{}/dt", fmt_sig(mag), i + 1));
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the term lists back out of rendered equations.
pub fn parse_rendered_terms(text: &str) -> Vec<Vec<(String, f64)>> {
    text.lines()
        .map(|line| {
            let mut terms = Vec::new();
            let mut rest = line;
            while let Some(pos) = rest.find(" [±") {
                let head = &rest[..pos];
                let start = head.rfind(" + ").max(head.rfind(" - ")).unwrap_or(0);
                let sign = if head[start..].starts_with(" - ") { -1.0 } else { 1.0 };
                let body = &head[start + 3..];
                if let Some((num, label)) = body.split_once('*') {
                    if let Ok(v) = num.parse::<f64>() {
                        terms.push((label.to_string(), sign * v));
                    }
                }
                let close = rest[pos..].find(']').map_or(rest.len(), |c| pos + c + 1);
                rest = &rest[close..];
            }
            terms
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BandMode {
    /// Predictive variance evaluated on each step's library row.
    Local,
    /// Spread of trajectories integrated with sampled parameters.
    Propagated { samples: usize, seed: u64 },
}

pub enum Excitation<'a> {
    None,
    /// Recorded input samples, one row per step.
    Forcing(&'a DMatrix<f64>),
    /// Brownian path of realization `index` under `seed`.
    Brownian { seed: u64, index: usize, g: Option<DMatrix<f64>> },
}

/// Quantity the 95% band brackets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandTarget {
    /// The state rate `dX_i/dt`, as the regression predicts it.
    Rate,
    State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: Vec<f64>,
    pub mean: DMatrix<f64>,
    /// Twin right-hand side along `mean`.
    pub rate: DMatrix<f64>,
    pub band: BandTarget,
    /// Band variance per state; zero where nothing was identified.
    pub variance: DMatrix<f64>,
    pub lo: DMatrix<f64>,
    pub hi: DMatrix<f64>,
}

pub const Z95: f64 = 1.959963984540054;

fn integrate(
    model: &NominalModel,
    x0: &[f64],
    exc: &Excitation,
    g: &DMatrix<f64>,
    dt: f64,
    n: usize,
) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    match exc {
        Excitation::Brownian { seed, index, .. } => {
            let zeros = vec![0.0; model.n_inputs];
            let drift = |x: &[f64], t: f64, out: &mut [f64]| model.eval(x, &zeros, t, out);
            let mut rng = realization_rng(*seed, *index);
            let path = em_integrate(&drift, g, x0, 0.0, dt, n - 1, &mut rng)?;
            Ok((path, None))
        }
        Excitation::Forcing(u) => {
            let rhs = |x: &[f64], u: &[f64], t: f64, out: &mut [f64]| model.eval(x, u, t, out);
            let (s, _) = rk4_integrate(&rhs, x0, Some(u), 0.0, dt, n)?;
            Ok((s, Some((*u).clone())))
        }
        Excitation::None => {
            let rhs = |x: &[f64], u: &[f64], t: f64, out: &mut [f64]| model.eval(x, u, t, out);
            let u = DMatrix::zeros(n, model.n_inputs);
            let (s, _) = rk4_integrate(&rhs, x0, Some(&u), 0.0, dt, n)?;
            Ok((s, Some(u)))
        }
    }
}

/// Integrates the mean-parameter twin for `n` samples and attaches a 95% band.
///
/// The local band is the regression predictive interval on each step's
/// library row, so it brackets the rate of every identified state. The
/// propagated band is the spread of trajectories under sampled parameters
/// and brackets the states themselves.
pub fn predict_states(
    twin: &UpdatedTwin,
    nominal: &NominalModel,
    x0: &[f64],
    exc: &Excitation,
    dt: f64,
    n: usize,
    band: BandMode,
) -> Result<Prediction> {
    let m = twin.state_dim;
    if x0.len() != m {
        return Err(Error::Dimension("initial state length".into()));
    }
    if let Excitation::Forcing(u) = exc {
        if u.nrows() < n {
            return Err(Error::Dimension("forcing shorter than prediction horizon".into()));
        }
    }
    let model = twin.model(nominal)?;
    let g = match exc {
        Excitation::Brownian { g: Some(g), .. } => g.clone(),
        Excitation::Brownian { g: None, .. } => twin.diffusion_matrix(&nominal.noise_states),
        _ => DMatrix::zeros(m, 0),
    };
    let (mean, inputs) = integrate(&model, x0, exc, &g, dt, n)?;
    let mean = mean.rows(0, n).into_owned();
    let mut rate = DMatrix::zeros(n, m);
    {
        let nu = inputs.as_ref().map_or(model.n_inputs, |u| u.ncols());
        let mut u = vec![0.0; nu];
        let mut f = vec![0.0; m];
        for k in 0..n {
            let x: Vec<f64> = mean.row(k).iter().copied().collect();
            if let Some(inp) = &inputs {
                for (j, uj) in u.iter_mut().enumerate() {
                    *uj = inp[(k, j)];
                }
            }
            model.eval(&x, &u, k as f64 * dt, &mut f);
            for i in 0..m {
                rate[(k, i)] = f[i];
            }
        }
    }
    let mut variance = DMatrix::zeros(n, m);
    match band {
        BandMode::Local => {
            let sets: Vec<(usize, Vec<Column>, DMatrix<f64>, f64)> = twin
                .drift
                .iter()
                .filter(|s| !s.skipped)
                .map(|s| {
                    let cols = s.terms.iter().map(|t| parse_label(&t.label, m)).collect::<Result<Vec<_>>>()?;
                    let r = cols.len();
                    Ok((s.state, cols, DMatrix::from_row_slice(r, r, &s.cov), s.mu_sigma2))
                })
                .collect::<Result<_>>()?;
            let nu = inputs.as_ref().map_or(0, |u| u.ncols());
            let mut u = vec![0.0; nu];
            for k in 0..n {
                let x: Vec<f64> = mean.row(k).iter().copied().collect();
                if let Some(inp) = &inputs {
                    for (j, uj) in u.iter_mut().enumerate() {
                        *uj = inp[(k, j)];
                    }
                }
                for (state, cols, cov, s2) in &sets {
                    let l = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.eval(&x, &u)));
                    variance[(k, *state)] = (l.transpose() * cov * &l)[(0, 0)].max(0.0) + s2;
                }
            }
        }
        BandMode::Propagated { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sum = DMatrix::zeros(n, m);
            let mut sumsq = DMatrix::zeros(n, m);
            let mut used = 0usize;
            for _ in 0..samples {
                let coefs: Vec<Vec<f64>> = twin
                    .drift
                    .iter()
                    .map(|s| {
                        let r = s.terms.len();
                        let mu = DVector::from_iterator(r, s.terms.iter().map(|t| t.mean));
                        if r == 0 {
                            return vec![];
                        }
                        let cov = DMatrix::from_row_slice(r, r, &s.cov);
                        let z = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
                        let l = cov.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
                            DMatrix::from_fn(r, r, |a, b| if a == b { cov[(a, a)].max(0.0).sqrt() } else { 0.0 })
                        });
                        (mu + l * z).iter().copied().collect()
                    })
                    .collect();
                let set = TermSet::new(&twin.drift, m, Some(&coefs))?;
                let sample_model = combined_with(nominal, set, twin.n_inputs)?;
                if let Ok((traj, _)) = integrate(&sample_model, x0, exc, &g, dt, n) {
                    sum += &traj;
                    sumsq += traj.component_mul(&traj);
                    used += 1;
                }
            }
            if used > 1 {
                let c = used as f64;
                for k in 0..n {
                    for i in 0..m {
                        let mu = sum[(k, i)] / c;
                        variance[(k, i)] = ((sumsq[(k, i)] / c - mu * mu) * c / (c - 1.0)).max(0.0);
                    }
                }
            }
        }
    }
    let sd = variance.map(|v| Z95 * v.sqrt());
    let (target, centre) = match band {
        BandMode::Local => (BandTarget::Rate, &rate),
        BandMode::Propagated { .. } => (BandTarget::State, &mean),
    };
    Ok(Prediction {
        t: (0..n).map(|k| k as f64 * dt).collect(),
        lo: centre - &sd,
        hi: centre + &sd,
        band: target,
        mean,
        rate,
        variance,
    })
}

/// Default drift and diffusion libraries for a built-in system.
pub fn default_libraries(sys: &SystemDef, framework: u8) -> Result<(LibrarySpec, LibrarySpec)> {
    let m = sys.state_dim();
    let nu = if framework == 1 { sys.n_inputs() } else { 0 };
    let drift = match sys.model {
        Model::Duffing => LibrarySpec::preset("duffing", m, nu)?,
        Model::TwoDof => LibrarySpec::preset("two-dof", m, nu)?,
        Model::Crack => LibrarySpec::preset("crack", m, nu)?,
        Model::Oscillator => LibrarySpec::preset("polynomial", m, nu)?,
        Model::OrnsteinUhlenbeck | Model::Brownian => {
            LibrarySpec::new(m, 1, &[Family::Constant, Family::Multinomial]).with_inputs(nu)
        }
    };
    let diff = match sys.model {
        Model::OrnsteinUhlenbeck | Model::Brownian => LibrarySpec::new(m, 1, &[Family::Constant, Family::Multinomial]),
        _ => LibrarySpec::preset("diffusion", m, 0)?,
    };
    Ok((drift, diff))
}

/// Settings shared by simulate-corrupt-update pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub t_end: f64,
    pub dt: f64,
    pub ensemble: usize,
    pub noise_scope: NoiseScope,
    pub library: Option<LibrarySpec>,
    pub diffusion_library: Option<LibrarySpec>,
    pub hyperparameters: Hyperparameters,
    pub options: UpdateOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            t_end: 1.0,
            dt: 1e-3,
            ensemble: 100,
            noise_scope: NoiseScope::default(),
            library: None,
            diffusion_library: None,
            hyperparameters: Hyperparameters::default(),
            options: UpdateOptions { keep_summaries: false, ..UpdateOptions::default() },
        }
    }
}

/// Simulated measurements for a framework: a forced RK4 run or an EM ensemble.
pub fn simulate_for(sys: &SystemDef, framework: u8, cfg: &PipelineConfig, seed: u64) -> Result<Dataset> {
    match framework {
        1 => rk4_simulate(sys, cfg.t_end, cfg.dt, seed),
        2 => em_simulate(sys, cfg.t_end, cfg.dt, cfg.ensemble, seed),
        f => Err(Error::Config(format!("framework must be 1 or 2, got {f}"))),
    }
}

/// Updates a twin of `sys` from already simulated (and corrupted) data.
pub fn update_system(sys: &SystemDef, framework: u8, data: &Dataset, cfg: &PipelineConfig, seed: u64) -> Result<UpdatedTwin> {
    let (d_lib, s_lib) = default_libraries(sys, framework)?;
    let lib = cfg.library.clone().unwrap_or(d_lib);
    let nominal = sys.nominal();
    let mut twin = match framework {
        1 => update_f1(data, &nominal, &lib, &cfg.hyperparameters, seed, &cfg.options)?,
        2 => {
            let dlib = cfg.diffusion_library.clone().unwrap_or(s_lib);
            update_f2(data, &nominal, &lib, &dlib, &cfg.hyperparameters, seed, &cfg.options)?
        }
        f => return Err(Error::Config(format!("framework must be 1 or 2, got {f}"))),
    };
    twin.system = Some(sys.clone());
    Ok(twin)
}

/// Simulate, corrupt at `level`, update.
pub fn run_pipeline(sys: &SystemDef, framework: u8, level: f64, cfg: &PipelineConfig, seed: u64) -> Result<UpdatedTwin> {
    let clean = simulate_for(sys, framework, cfg, seed)?;
    let noisy = corrupt(&clean, &NoisePolicy { level, seed, scope: cfg.noise_scope })?;
    update_system(sys, framework, &noisy, cfg, seed)
}

/// Identifier of a ground-truth term, e.g. `X2: X1^3` or `G22: 1`.
pub fn term_id(t: &TrueTerm) -> String {
    match t.pair {
        Some((i, j)) => format!("G{}{}: {}", i + 1, j + 1, t.label),
        None => format!("X{}: {}", t.state + 1, t.label),
    }
}

/// Relative error of every true term (1 when missed) and whether the
/// selected supports equal the true ones exactly.
pub fn score(twin: &UpdatedTwin, truth: &[TrueTerm]) -> (Vec<f64>, bool) {
    let errors = truth
        .iter()
        .map(|t| {
            let est = match t.pair {
                Some(p) => twin.diffusion_entry(p).and_then(|d| d.terms.iter().find(|x| x.label == t.label)).map(|x| x.mean),
                None => twin.term(t.state, &t.label).map(|x| x.mean),
            };
            est.map_or(1.0, |e| ((e - t.value) / t.value).abs())
        })
        .collect();
    let mut exact = true;
    for s in &twin.drift {
        let mut want: Vec<&str> = truth.iter().filter(|t| t.pair.is_none() && t.state == s.state).map(|t| t.label.as_str()).collect();
        let mut got: Vec<&str> = s.terms.iter().map(|t| t.label.as_str()).collect();
        want.sort_unstable();
        got.sort_unstable();
        exact &= want == got;
    }
    for d in &twin.diffusion {
        let mut want: Vec<&str> = truth.iter().filter(|t| t.pair == Some(d.pair)).map(|t| t.label.as_str()).collect();
        let mut got: Vec<&str> = d.terms.iter().map(|t| t.label.as_str()).collect();
        want.sort_unstable();
        got.sort_unstable();
        exact &= want == got;
    }
    (errors, exact)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub level: f64,
    pub seed: u64,
    pub errors: Vec<f64>,
    pub exact: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: f64,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    pub exact_count: usize,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub system: String,
    pub framework: u8,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub terms: Vec<String>,
    pub cells: Vec<SweepCell>,
    pub per_level: Vec<LevelSummary>,
}

/// Runs every (level, seed) cell on up to `jobs` threads; results are
/// ordered level-major regardless of scheduling.
pub fn noise_sweep(
    sys: &SystemDef,
    framework: u8,
    levels: &[f64],
    seeds: &[u64],
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<SweepReport> {
    if levels.iter().any(|l| !(0.0..=0.6).contains(l)) {
        return Err(Error::Config("sweep levels must lie in [0, 0.6]".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep levels must be strictly ascending".into()));
    }
    let truth = sys.true_terms(framework);
    let cells: Vec<(f64, u64)> = levels.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let run = |&(level, seed): &(f64, u64)| -> SweepCell {
        match run_pipeline(sys, framework, level, cfg, seed) {
            Ok(twin) => {
                let (errors, exact) = score(&twin, &truth);
                SweepCell { level, seed, errors, exact, failure: None }
            }
            Err(e) => SweepCell { level, seed, errors: vec![], exact: false, failure: Some(e.to_string()) },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<SweepCell> = pool.install(|| cells.par_iter().map(run).collect());
    let per_level = levels
        .iter()
        .map(|&level| {
            let ok: Vec<&SweepCell> = results.iter().filter(|c| c.level == level && c.failure.is_none()).collect();
            let nt = truth.len();
            let n = ok.len() as f64;
            let mean: Vec<f64> = (0..nt).map(|t| ok.iter().map(|c| c.errors[t]).sum::<f64>() / n).collect();
            let std = (0..nt)
                .map(|t| {
                    if ok.len() < 2 {
                        return 0.0;
                    }
                    let v = ok.iter().map(|c| (c.errors[t] - mean[t]).powi(2)).sum::<f64>() / (n - 1.0);
                    v.sqrt()
                })
                .collect();
            LevelSummary {
                level,
                mean_error: mean,
                std_error: std,
                exact_count: ok.iter().filter(|c| c.exact).count(),
                completed: ok.len(),
            }
        })
        .collect();
    Ok(SweepReport {
        schema: SCHEMA.into(),
        system: sys.name.clone(),
        framework,
        levels: levels.to_vec(),
        seeds: seeds.to_vec(),
        terms: truth.iter().map(term_id).collect(),
        cells: results,
        per_level,
    })
}

/// RMSE per column normalized by the range of the reference column.
pub fn nrmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    (0..truth.ncols())
        .map(|c| {
            let t = truth.column(c);
            let rmse = ((pred.column(c) - t).norm_squared() / t.len() as f64).sqrt();
            rmse / (t.max() - t.min())
        })
        .collect()
}

/// RMSE per column normalized by the standard deviation of the reference.
pub fn nrmse_std(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    (0..truth.ncols())
        .map(|c| {
            let n = truth.nrows() as f64;
            let t = truth.column(c);
            let mean = t.sum() / n;
            let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let rmse = ((pred.column(c) - t).norm_squared() / n).sqrt();
            rmse / sd
        })
        .collect()
}
