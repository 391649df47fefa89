//! Ground-truth data: fixed-step RK4 for forced runs, Euler-Maruyama for
//! stochastic ensembles, the three example systems and measurement noise.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{Dataset, DatasetMeta, NoiseScope, NominalModel, Realization, Source};

// Independent generator streams per purpose.
const FORCING_STREAM: u64 = 1 << 40;
const NOISE_STREAM: u64 = 2 << 40;

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Duffing,
    TwoDof,
    Crack,
    Oscillator,
    OrnsteinUhlenbeck,
    Brownian,
}

/// How the white-noise forcing is discretized for RK4 runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingScale {
    /// `σ·ξ_k/√Δt`: white noise of intensity `σ²`, the same excitation an
    /// Euler-Maruyama step applies.
    #[default]
    Intensity,
    /// `σ·ξ_k`: unit-variance samples scaled by `σ`.
    UnitVariance,
}

/// What the recorded input channel holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputRecord {
    /// The applied force; its coefficient in the rate equation is `1/m`.
    #[default]
    Applied,
    /// The force divided by `σ`; the coefficient becomes `σ/m`.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Forcing {
    pub scale: ForcingScale,
    pub record: InputRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDef {
    pub name: String,
    pub model: Model,
    pub params: BTreeMap<String, f64>,
    pub x0: Vec<f64>,
    /// Initial condition for stochastic runs when it differs from `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_sde: Option<Vec<f64>>,
    #[serde(default)]
    pub forcing: Forcing,
}

/// A ground-truth perturbation or diffusion term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueTerm {
    pub state: usize,
    pub pair: Option<(usize, usize)>,
    pub label: String,
    pub value: f64,
}

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl SystemDef {
    pub fn builtin(name: &str) -> Result<SystemDef> {
        let (canonical, model, p, x0, x0_sde): (&str, Model, BTreeMap<String, f64>, Vec<f64>, Option<Vec<f64>>) =
            match name {
                "duffing" | "duffing-sdof" => (
                    "duffing",
                    Model::Duffing,
                    params(&[("m", 1.0), ("c", 2.0), ("k", 1000.0), ("alpha", 1e5), ("sigma", 0.5)]),
                    vec![0.1, 0.0],
                    None,
                ),
                "two-dof" | "2dof" | "coupled-2dof" => (
                    "two-dof",
                    Model::TwoDof,
                    params(&[
                        ("m1", 1.0),
                        ("m2", 1.0),
                        ("c1", 4.0),
                        ("c2", 4.0),
                        ("k1", 4000.0),
                        ("k2", 2000.0),
                        ("alpha", 5e4),
                        ("sigma1", 0.5),
                        ("sigma2", 0.5),
                    ]),
                    vec![0.3, 0.0, 0.1, 0.0],
                    Some(vec![0.15, 0.0, 0.05, 0.0]),
                ),
                "crack" | "crack-degradation" => (
                    "crack",
                    Model::Crack,
                    params(&[
                        ("m", 1.0),
                        ("c", 2.0),
                        ("k", 2000.0),
                        ("alpha1", 0.5),
                        ("alpha2", 0.5),
                        ("alpha3", 1.0),
                        ("alpha4", 1.0),
                        ("gamma", 0.001),
                        ("beta", 2.0),
                        ("sigma", 1.0),
                    ]),
                    vec![1.0, 0.0, 0.0],
                    None,
                ),
                "oscillator" => (
                    "oscillator",
                    Model::Oscillator,
                    params(&[("m", 1.0), ("c", 0.0), ("k", 1000.0), ("sigma", 0.0)]),
                    vec![0.1, 0.0],
                    None,
                ),
                "ou" | "ornstein-uhlenbeck" => (
                    "ou",
                    Model::OrnsteinUhlenbeck,
                    params(&[("theta", 2.0), ("sigma", 0.5)]),
                    vec![3.0],
                    None,
                ),
                "brownian" => ("brownian", Model::Brownian, params(&[("sigma", 0.5)]), vec![0.0], None),
                other => return Err(Error::Config(format!("unknown system '{other}'"))),
            };
        Ok(SystemDef { name: canonical.to_string(), model, params: p, x0, x0_sde, forcing: Forcing::default() })
    }

    pub fn p(&self, key: &str) -> f64 {
        *self.params.get(key).unwrap_or_else(|| panic!("system {} lacks parameter {key}", self.name))
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Result<Self> {
        match self.params.get_mut(key) {
            Some(v) => *v = value,
            None => return Err(Error::Config(format!("system {} has no parameter '{key}'", self.name))),
        }
        Ok(self)
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0.clone();
        self.x0_sde = None;
        self
    }

    pub fn state_dim(&self) -> usize {
        match self.model {
            Model::Duffing | Model::Oscillator => 2,
            Model::TwoDof => 4,
            Model::Crack => 3,
            Model::OrnsteinUhlenbeck | Model::Brownian => 1,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self.model {
            Model::Duffing | Model::Oscillator | Model::Crack => 1,
            Model::TwoDof => 2,
            Model::OrnsteinUhlenbeck | Model::Brownian => 0,
        }
    }

    pub fn state_names(&self) -> Vec<&'static str> {
        match self.model {
            Model::Duffing | Model::Oscillator => vec!["x", "v"],
            Model::TwoDof => vec!["x1", "v1", "x2", "v2"],
            Model::Crack => vec!["x", "v", "q"],
            Model::OrnsteinUhlenbeck | Model::Brownian => vec!["x"],
        }
    }

    /// States with dynamics beyond `ẋ = v`.
    pub fn driven_states(&self) -> Vec<usize> {
        match self.model {
            Model::Duffing | Model::Oscillator => vec![1],
            Model::TwoDof => vec![1, 3],
            Model::Crack => vec![1, 2],
            Model::OrnsteinUhlenbeck | Model::Brownian => vec![0],
        }
    }

    /// States with a nonzero row in the diffusion matrix.
    pub fn noise_states(&self) -> Vec<usize> {
        let g = self.diffusion();
        (0..g.nrows()).filter(|&i| g.row(i).iter().any(|v| *v != 0.0)).collect()
    }

    /// Parameters that vanish in the nominal model.
    pub fn perturbation_params(&self) -> &'static [&'static str] {
        match self.model {
            Model::Duffing | Model::TwoDof => &["alpha"],
            Model::Crack => &["alpha1", "alpha2", "gamma"],
            Model::OrnsteinUhlenbeck => &["theta"],
            Model::Oscillator | Model::Brownian => &[],
        }
    }

    /// Noise intensity per input channel.
    pub fn sigmas(&self) -> Vec<f64> {
        match self.model {
            Model::Duffing | Model::Oscillator | Model::Crack | Model::OrnsteinUhlenbeck | Model::Brownian => {
                vec![self.p("sigma")]
            }
            Model::TwoDof => vec![self.p("sigma1"), self.p("sigma2")],
        }
    }

    /// Diffusion matrix `g` (m × number of Brownian channels).
    pub fn diffusion(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        match self.model {
            Model::Duffing | Model::Oscillator | Model::Crack => {
                let mut g = DMatrix::zeros(m, 1);
                g[(1, 0)] = self.p("sigma") / self.p("m");
                g
            }
            Model::TwoDof => {
                let mut g = DMatrix::zeros(4, 2);
                g[(1, 0)] = self.p("sigma1") / self.p("m1");
                g[(3, 1)] = self.p("sigma2") / self.p("m2");
                g
            }
            Model::OrnsteinUhlenbeck | Model::Brownian => DMatrix::from_element(1, 1, self.p("sigma")),
        }
    }

    fn input_gain(&self) -> Vec<f64> {
        match self.forcing.record {
            InputRecord::Applied => vec![1.0; self.n_inputs()],
            InputRecord::Normalized => self.sigmas(),
        }
    }

    /// Right-hand side with inputs as recorded.
    pub fn rhs(&self, x: &[f64], u: &[f64], perturbed: bool, out: &mut [f64]) {
        let on = if perturbed { 1.0 } else { 0.0 };
        let gain = self.input_gain();
        let f = |j: usize| u.get(j).copied().unwrap_or(0.0) * gain.get(j).copied().unwrap_or(0.0);
        match self.model {
            Model::Duffing | Model::Oscillator => {
                let (m, c, k) = (self.p("m"), self.p("c"), self.p("k"));
                let alpha = if self.model == Model::Duffing { on * self.p("alpha") } else { 0.0 };
                out[0] = x[1];
                out[1] = (f(0) - c * x[1] - k * x[0] - alpha * x[0].powi(3)) / m;
            }
            Model::TwoDof => {
                let (m1, m2) = (self.p("m1"), self.p("m2"));
                let (c1, c2, k1, k2) = (self.p("c1"), self.p("c2"), self.p("k1"), self.p("k2"));
                let a = on * self.p("alpha");
                let (x1, v1, x2, v2) = (x[0], x[1], x[2], x[3]);
                let p1 = a * x1.powi(3) + a * (x1 - x2).powi(3);
                let p2 = a * (x2 - x1).powi(3);
                out[0] = v1;
                out[1] = (f(0) - (c1 + c2) * v1 + c2 * v2 - (k1 + k2) * x1 + k2 * x2 - p1) / m1;
                out[2] = v2;
                out[3] = (f(1) + c2 * v1 - c2 * v2 + k2 * x1 - k2 * x2 - p2) / m2;
            }
            Model::Crack => {
                let (m, c, k) = (self.p("m"), self.p("c"), self.p("k"));
                let (a1, a2) = (on * self.p("alpha1"), on * self.p("alpha2"));
                let (a3, a4) = (self.p("alpha3"), self.p("alpha4"));
                let (gamma, beta) = (on * self.p("gamma"), self.p("beta"));
                let lambda = a1 + a2 * (-a3 * x[2].max(0.0).powf(a4)).exp();
                out[0] = x[1];
                out[1] = (f(0) - c * x[1] - k * lambda * x[0]) / m;
                out[2] = gamma * (x[0] * x[0] + x[1] * x[1]).powf(beta / 2.0);
            }
            Model::OrnsteinUhlenbeck => out[0] = -on * self.p("theta") * x[0],
            Model::Brownian => out[0] = 0.0,
        }
    }

    pub fn equations(&self, perturbed: bool) -> Vec<String> {
        let fmt = |v: f64| format!("{}", v);
        match self.model {
            Model::Duffing | Model::Oscillator => {
                let (m, c, k) = (self.p("m"), self.p("c"), self.p("k"));
                let mut acc = format!("dX2/dt = -{}*X2 - {}*X1", fmt(c / m), fmt(k / m));
                if perturbed && self.model == Model::Duffing {
                    acc += &format!(" - {}*X1^3", fmt(self.p("alpha") / m));
                }
                if perturbed {
                    acc += &format!(" + {}*u1", fmt(self.input_gain()[0] / m));
                }
                vec!["dX1/dt = X2".into(), acc]
            }
            Model::TwoDof => {
                let (m1, m2) = (self.p("m1"), self.p("m2"));
                let (c1, c2, k1, k2) = (self.p("c1"), self.p("c2"), self.p("k1"), self.p("k2"));
                let g = self.input_gain();
                let mut a1 = format!(
                    "dX2/dt = -{}*X2 + {}*X4 - {}*X1 + {}*X3",
                    fmt((c1 + c2) / m1),
                    fmt(c2 / m1),
                    fmt((k1 + k2) / m1),
                    fmt(k2 / m1)
                );
                let mut a2 = format!(
                    "dX4/dt = {}*X2 - {}*X4 + {}*X1 - {}*X3",
                    fmt(c2 / m2),
                    fmt(c2 / m2),
                    fmt(k2 / m2),
                    fmt(k2 / m2)
                );
                if perturbed {
                    let a = self.p("alpha");
                    a1 += &format!(" - {}*(X1^3 + (X1 - X3)^3)", fmt(a / m1));
                    a2 += &format!(" - {}*(X3 - X1)^3", fmt(a / m2));
                }
                if perturbed {
                    a1 += &format!(" + {}*u1", fmt(g[0] / m1));
                    a2 += &format!(" + {}*u2", fmt(g[1] / m2));
                }
                vec!["dX1/dt = X2".into(), a1, "dX3/dt = X4".into(), a2]
            }
            Model::Crack => {
                let (m, c, k) = (self.p("m"), self.p("c"), self.p("k"));
                let mut v = format!("dX2/dt = -{}*X2", fmt(c / m));
                let mut q = "dX3/dt = 0".to_string();
                if perturbed {
                    v += &format!(
                        " - {}*({} + {}*exp(-{}*X3^{}))*X1",
                        fmt(k / m),
                        fmt(self.p("alpha1")),
                        fmt(self.p("alpha2")),
                        fmt(self.p("alpha3")),
                        fmt(self.p("alpha4"))
                    );
                    q = format!("dX3/dt = {}*(X1^2 + X2^2)^{}", fmt(self.p("gamma")), fmt(self.p("beta") / 2.0));
                }
                if perturbed {
                    v += &format!(" + {}*u1", fmt(self.input_gain()[0] / m));
                }
                vec!["dX1/dt = X2".into(), v, q]
            }
            Model::OrnsteinUhlenbeck => {
                if perturbed {
                    vec![format!("dX1/dt = -{}*X1", fmt(self.p("theta")))]
                } else {
                    vec!["dX1/dt = 0".into()]
                }
            }
            Model::Brownian => vec!["dX1/dt = 0".into()],
        }
    }

    fn model_of(&self, perturbed: bool) -> NominalModel {
        let def = self.clone();
        // The known physics is the free system; input terms are identified.
        let mut m = NominalModel::new(self.state_dim(), self.n_inputs(), move |x, u, _t, out| {
            def.rhs(x, if perturbed { u } else { &[] }, perturbed, out)
        });
        m.description = self.equations(perturbed);
        m.driven_states = self.driven_states();
        m.noise_states = self.noise_states();
        m
    }

    /// Known physics: perturbation parameters set to zero and no forcing.
    pub fn nominal(&self) -> NominalModel {
        self.model_of(false)
    }

    pub fn truth(&self) -> NominalModel {
        self.model_of(true)
    }

    /// Perturbation and diffusion terms as they appear in the library
    /// grammar, for framework 1 (with input columns) or 2.
    pub fn true_terms(&self, framework: u8) -> Vec<TrueTerm> {
        let drift = |state: usize, label: &str, value: f64| TrueTerm { state, pair: None, label: label.into(), value };
        let diff = |i: usize, value: f64| TrueTerm { state: i, pair: Some((i, i)), label: "1".into(), value };
        let gain = self.input_gain();
        let mut t = Vec::new();
        match self.model {
            Model::Duffing => {
                let m = self.p("m");
                t.push(drift(1, "X1^3", -self.p("alpha") / m));
                if framework == 1 {
                    t.push(drift(1, "u1", gain[0] / m));
                } else {
                    t.push(diff(1, (self.p("sigma") / m).powi(2)));
                }
            }
            Model::TwoDof => {
                let (m1, m2, a) = (self.p("m1"), self.p("m2"), self.p("alpha"));
                t.push(drift(1, "X1^3", -2.0 * a / m1));
                t.push(drift(1, "X1^2*X3", 3.0 * a / m1));
                t.push(drift(1, "X1*X3^2", -3.0 * a / m1));
                t.push(drift(1, "X3^3", a / m1));
                t.push(drift(3, "X1^3", a / m2));
                t.push(drift(3, "X1^2*X3", -3.0 * a / m2));
                t.push(drift(3, "X1*X3^2", 3.0 * a / m2));
                t.push(drift(3, "X3^3", -a / m2));
                if framework == 1 {
                    t.push(drift(1, "u1", gain[0] / m1));
                    t.push(drift(3, "u2", gain[1] / m2));
                } else {
                    t.push(diff(1, (self.p("sigma1") / m1).powi(2)));
                    t.push(diff(3, (self.p("sigma2") / m2).powi(2)));
                }
            }
            Model::Crack => {
                let (m, k) = (self.p("m"), self.p("k"));
                t.push(drift(1, "X1", -k * self.p("alpha1") / m));
                t.push(drift(1, "exp(-X3)*X1", -k * self.p("alpha2") / m));
                t.push(drift(2, "X1^2", self.p("gamma")));
                t.push(drift(2, "X2^2", self.p("gamma")));
                if framework == 1 {
                    t.push(drift(1, "u1", gain[0] / m));
                } else {
                    t.push(diff(1, (self.p("sigma") / m).powi(2)));
                }
            }
            Model::OrnsteinUhlenbeck => {
                t.push(drift(0, "X1", -self.p("theta")));
                if framework == 2 {
                    t.push(diff(0, self.p("sigma").powi(2)));
                }
            }
            Model::Brownian => {
                if framework == 2 {
                    t.push(diff(0, self.p("sigma").powi(2)));
                }
            }
            Model::Oscillator => {}
        }
        t
    }
}

pub fn builtin_systems() -> Vec<SystemDef> {
    ["duffing", "two-dof", "crack"].iter().map(|n| SystemDef::builtin(n).expect("builtin")).collect()
}

fn rk4_step(rhs: &dyn Fn(&[f64], &[f64], f64, &mut [f64]), x: &mut [f64], u: &[f64], t: f64, dt: f64, ws: &mut [Vec<f64>; 5]) {
    let m = x.len();
    let [k1, k2, k3, k4, tmp] = ws;
    rhs(x, u, t, k1);
    for i in 0..m {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    rhs(tmp, u, t + 0.5 * dt, k2);
    for i in 0..m {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    rhs(tmp, u, t + 0.5 * dt, k3);
    for i in 0..m {
        tmp[i] = x[i] + dt * k3[i];
    }
    rhs(tmp, u, t + dt, k4);
    for i in 0..m {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates `n` samples with inputs held constant over each step.
/// Returns states and the right-hand side at each sample.
pub fn rk4_integrate(
    rhs: &dyn Fn(&[f64], &[f64], f64, &mut [f64]),
    x0: &[f64],
    inputs: Option<&DMatrix<f64>>,
    t0: f64,
    dt: f64,
    n: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = x0.len();
    let mut states = DMatrix::zeros(n, m);
    let mut rates = DMatrix::zeros(n, m);
    let mut x = x0.to_vec();
    let mut ws: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; m]);
    let nu = inputs.map_or(0, |u| u.ncols());
    let mut u = vec![0.0; nu];
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t_last_good: t - dt });
        }
        if let Some(inp) = inputs {
            for (j, uj) in u.iter_mut().enumerate() {
                *uj = inp[(k, j)];
            }
        }
        let mut f = vec![0.0; m];
        rhs(&x, &u, t, &mut f);
        for i in 0..m {
            states[(k, i)] = x[i];
            rates[(k, i)] = f[i];
        }
        if k + 1 < n {
            rk4_step(rhs, &mut x, &u, t, dt, &mut ws);
        }
    }
    if rates.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { t_last_good: t0 + (n as f64 - 2.0) * dt });
    }
    Ok((states, rates))
}

/// Euler-Maruyama over `n` steps, returning `n + 1` states. Each step draws
/// one standard normal per column of `g`.
pub fn em_integrate(
    drift: &dyn Fn(&[f64], f64, &mut [f64]),
    g: &DMatrix<f64>,
    x0: &[f64],
    t0: f64,
    dt: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let m = x0.len();
    let q = g.ncols();
    let mut states = DMatrix::zeros(n + 1, m);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; m];
    let mut xi = vec![0.0; q];
    let sq = dt.sqrt();
    for k in 0..=n {
        let t = t0 + k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t_last_good: t - dt });
        }
        for i in 0..m {
            states[(k, i)] = x[i];
        }
        if k == n {
            break;
        }
        drift(&x, t, &mut f);
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..m {
            let noise: f64 = (0..q).map(|j| g[(i, j)] * xi[j]).sum();
            x[i] += f[i] * dt + noise * sq;
        }
    }
    Ok(states)
}

fn sample_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t_end > 0.0) {
        return Err(Error::Config("T and dt must be positive".into()));
    }
    let n = (t_end / dt).round() as usize;
    if n < 2 {
        return Err(Error::Config("run shorter than two samples".into()));
    }
    Ok(n)
}

/// White-noise forcing samples for a deterministic run, as recorded.
pub fn forcing_samples(sys: &SystemDef, n: usize, dt: f64, seed: u64) -> DMatrix<f64> {
    let nu = sys.n_inputs();
    let sigmas = sys.sigmas();
    let mut rng = stream_rng(seed, FORCING_STREAM);
    let mut u = DMatrix::zeros(n, nu);
    let step = match sys.forcing.scale {
        ForcingScale::Intensity => 1.0 / dt.sqrt(),
        ForcingScale::UnitVariance => 1.0,
    };
    for k in 0..n {
        for j in 0..nu {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let applied = sigmas[j] * xi * step;
            u[(k, j)] = match sys.forcing.record {
                InputRecord::Applied => applied,
                InputRecord::Normalized => if sigmas[j] != 0.0 { applied / sigmas[j] } else { 0.0 },
            };
        }
    }
    u
}

fn meta(sys: &SystemDef, dt: f64, source: Source) -> DatasetMeta {
    DatasetMeta {
        dt,
        source,
        system: Some(sys.name.clone()),
        noise_level: 0.0,
        noise_scope: None,
        noise_seed: None,
        driven_states: sys.driven_states(),
    }
}

/// Forced run of the perturbed system; `T/Δt` samples from `t = 0`.
pub fn rk4_simulate(sys: &SystemDef, t_end: f64, dt: f64, forcing_seed: u64) -> Result<Dataset> {
    let n = sample_count(t_end, dt)?;
    let inputs = (sys.n_inputs() > 0).then(|| forcing_samples(sys, n, dt, forcing_seed));
    let def = sys.clone();
    let rhs = move |x: &[f64], u: &[f64], _t: f64, out: &mut [f64]| def.rhs(x, u, true, out);
    let (states, rates) = rk4_integrate(&rhs, &sys.x0, inputs.as_ref(), 0.0, dt, n)?;
    Ok(Dataset {
        t: (0..n).map(|k| k as f64 * dt).collect(),
        realizations: vec![Realization { states, inputs, rates: Some(rates) }],
        meta: meta(sys, dt, Source::Deterministic),
    })
}

/// Brownian-path generator for realization `index` of an ensemble.
pub fn realization_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(seed, index as u64)
}

/// Unforced SDE ensemble of the perturbed system. Rates are the forward
/// increment quotients, so an extra step past `T` is simulated.
pub fn em_simulate(sys: &SystemDef, t_end: f64, dt: f64, n_realizations: usize, seed: u64) -> Result<Dataset> {
    let n = sample_count(t_end, dt)?;
    if n_realizations == 0 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    let g = sys.diffusion();
    let x0 = sys.x0_sde.clone().unwrap_or_else(|| sys.x0.clone());
    let zeros = vec![0.0; sys.n_inputs()];
    let realizations: Result<Vec<Realization>> = (0..n_realizations)
        .into_par_iter()
        .map(|e| {
            let drift = |x: &[f64], _t: f64, out: &mut [f64]| sys.rhs(x, &zeros, true, out);
            let mut rng = realization_rng(seed, e);
            let path = em_integrate(&drift, &g, &x0, 0.0, dt, n, &mut rng)?;
            let states = path.rows(0, n).into_owned();
            let rates = DMatrix::from_fn(n, path.ncols(), |k, c| (path[(k + 1, c)] - path[(k, c)]) / dt);
            Ok(Realization { states, inputs: None, rates: Some(rates) })
        })
        .collect();
    Ok(Dataset {
        t: (0..n).map(|k| k as f64 * dt).collect(),
        realizations: realizations?,
        meta: meta(sys, dt, Source::Stochastic),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub level: f64,
    pub seed: u64,
    #[serde(default)]
    pub scope: NoiseScope,
}

impl NoisePolicy {
    pub fn new(level: f64, seed: u64) -> Self {
        NoisePolicy { level, seed, scope: NoiseScope::default() }
    }
}

fn pooled_std<'a>(cols: impl Iterator<Item = nalgebra::DVectorView<'a, f64>> + Clone) -> f64 {
    let mut n = 0.0;
    let mut s = 0.0;
    for c in cols.clone() {
        n += c.len() as f64;
        s += c.sum();
    }
    let mean = s / n;
    let ss: f64 = cols.map(|c| c.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sum();
    (ss / n).sqrt()
}

fn add_noise(
    mats: &mut [&mut DMatrix<f64>],
    cols: &[usize],
    level: f64,
    rng: &mut ChaCha8Rng,
) {
    for &c in cols {
        let sd = level * pooled_std(mats.iter().map(|m| m.column(c)));
        for m in mats.iter_mut() {
            for r in 0..m.nrows() {
                let z: f64 = StandardNormal.sample(rng);
                m[(r, c)] += sd * z;
            }
        }
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation `ρ·std(channel)`.
/// The input dataset is left untouched.
pub fn corrupt(data: &Dataset, policy: &NoisePolicy) -> Result<Dataset> {
    if !(policy.level >= 0.0 && policy.level.is_finite()) {
        return Err(Error::Config("noise level must be non-negative".into()));
    }
    let mut out = data.clone();
    if policy.level == 0.0 {
        return Ok(out);
    }
    let mut rng = stream_rng(policy.seed, NOISE_STREAM);
    match policy.scope {
        NoiseScope::Rates => {
            if out.realizations.iter().any(|r| r.rates.is_none()) {
                return Err(Error::Config("rate-channel noise needs a rate channel; use scope 'all'".into()));
            }
            let cols = data.meta.driven_states.clone();
            let mut mats: Vec<&mut DMatrix<f64>> =
                out.realizations.iter_mut().map(|r| r.rates.as_mut().expect("checked")).collect();
            add_noise(&mut mats, &cols, policy.level, &mut rng);
        }
        NoiseScope::All => {
            let m = data.state_dim();
            let nu = data.n_inputs();
            {
                let mut mats: Vec<&mut DMatrix<f64>> = out.realizations.iter_mut().map(|r| &mut r.states).collect();
                add_noise(&mut mats, &(0..m).collect::<Vec<_>>(), policy.level, &mut rng);
            }
            if nu > 0 {
                let mut mats: Vec<&mut DMatrix<f64>> =
                    out.realizations.iter_mut().map(|r| r.inputs.as_mut().expect("validated")).collect();
                add_noise(&mut mats, &(0..nu).collect::<Vec<_>>(), policy.level, &mut rng);
            }
            for r in &mut out.realizations {
                r.rates = None;
            }
        }
    }
    out.meta.noise_level = policy.level;
    out.meta.noise_scope = Some(policy.scope);
    out.meta.noise_seed = Some(policy.seed);
    Ok(out)
}

/// Evenly spaced noise levels from 0 to 0.6 inclusive.
pub fn default_noise_levels() -> Vec<f64> {
    (0..14).map(|i| 0.6 * i as f64 / 13.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crack_lambda_at_zero_damage() {
        let s = SystemDef::builtin("crack").unwrap();
        let lambda = s.p("alpha1") + s.p("alpha2") * (-s.p("alpha3") * 0f64.powf(s.p("alpha4"))).exp();
        assert_eq!(lambda, 1.0);
    }

    #[test]
    fn nominal_matches_zeroed_perturbation() {
        for sys in builtin_systems() {
            let mut zeroed = sys.clone();
            for p in sys.perturbation_params() {
                zeroed = zeroed.with_param(p, 0.0).unwrap();
            }
            let m = sys.state_dim();
            let x: Vec<f64> = (0..m).map(|i| 0.3 - 0.17 * i as f64).collect();
            let u = vec![0.0; sys.n_inputs()];
            let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
            sys.nominal().eval(&x, &u, 0.0, &mut a);
            zeroed.truth().eval(&x, &u, 0.0, &mut b);
            assert_eq!(a, b, "{}", sys.name);
        }
    }

    #[test]
    fn default_levels() {
        let l = default_noise_levels();
        assert_eq!(l.len(), 14);
        assert_eq!(l[0], 0.0);
        assert!((l[13] - 0.6).abs() < 1e-15);
    }
}
