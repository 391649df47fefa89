//! Run configuration: a JSON file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twinforge::dictionary::LibrarySpec;
use twinforge::sampler::Hyperparameters;
use twinforge::simulate::{Forcing, SystemDef};
use twinforge::targets::NoiseScope;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ode,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Local,
    Propagated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Published values with a vague noise-variance prior.
    Default,
    /// Published values including the informative noise-variance prior.
    Informative,
}

/// Every field is optional so that a file, flags and defaults can be
/// layered. Manifests store the fully resolved form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forcing: Option<Forcing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub framework: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scope: Option<NoiseScope>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library: Option<LibrarySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_library: Option<LibrarySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<Hyperparameters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pip_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_mcmc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_burn: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twin: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forcing_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f),)* }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `top` win.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        let mut params = self.params.clone();
        if let Some(p) = &top.params {
            let merged = params.get_or_insert_with(BTreeMap::new);
            merged.extend(p.iter().map(|(k, v)| (k.clone(), *v)));
        }
        let mut out = overlay!(
            self, top, system, params, x0, forcing, data, framework, mode, t_end, dt, ensemble, noise,
            noise_scope, seed, format, preset, library, diffusion_library, prior, hyperparameters,
            pip_threshold, n_mcmc, n_burn, twin, forcing_seed, band, samples, levels, seeds, jobs, out
        );
        out.params = params;
        out
    }

    pub fn system_def(&self) -> Result<SystemDef, CliError> {
        let name = self.system.as_deref().ok_or_else(|| CliError::config("no system given"))?;
        let mut sys = SystemDef::builtin(name).map_err(CliError::config_from)?;
        if let Some(p) = &self.params {
            for (k, v) in p {
                sys = sys.with_param(k, *v).map_err(CliError::config_from)?;
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != sys.state_dim() {
                return Err(CliError::config(format!(
                    "x0 has {} entries, system {} has {} states",
                    x0.len(),
                    sys.name,
                    sys.state_dim()
                )));
            }
            sys = sys.with_x0(x0.clone());
        }
        if let Some(f) = self.forcing {
            sys.forcing = f;
        }
        Ok(sys)
    }

    pub fn hyperparameters(&self) -> Result<Hyperparameters, CliError> {
        let mut hp = match (&self.hyperparameters, self.prior) {
            (Some(h), _) => h.clone(),
            (None, Some(Prior::Informative)) => Hyperparameters::informative(),
            (None, _) => Hyperparameters::default(),
        };
        if let Some(t) = self.pip_threshold {
            hp.pip_threshold = t;
        }
        if let Some(n) = self.n_mcmc {
            hp.n_mcmc = n;
        }
        if let Some(n) = self.n_burn {
            hp.n_burn = n;
        }
        hp.validate().map_err(CliError::config_from)?;
        Ok(hp)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end.unwrap_or(1.0)
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1e-3)
    }

    pub fn ensemble(&self) -> usize {
        self.ensemble.unwrap_or(100)
    }

    pub fn noise(&self) -> Result<f64, CliError> {
        let n = self.noise.unwrap_or(0.0);
        if !(n >= 0.0 && n.is_finite()) {
            return Err(CliError::config("noise level must be a non-negative number"));
        }
        Ok(n)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn framework(&self) -> Result<Option<u8>, CliError> {
        match self.framework {
            None => Ok(None),
            Some(f @ (1 | 2)) => Ok(Some(f)),
            Some(f) => Err(CliError::config(format!("framework must be 1 or 2, got {f}"))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
