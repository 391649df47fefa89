//! Command-line front end: simulate, update, predict, sweep and replay.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twinforge::simulate::builtin_systems;
use twinforge::targets::NoiseScope;

use commands::{CommandKind, Manifest};
use config::{Band, Format, Mode, Prior, RunConfig};
pub use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "twinforge", version, about = "Sparse Bayesian digital-twin updating")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a built-in system and write clean and noisy measurements.
    Simulate(Flags),
    /// Identify perturbation terms from data and write the updated twin.
    Update(Flags),
    /// Integrate an updated twin and write the mean with a 95% band.
    Predict(Flags),
    /// Repeat simulate-corrupt-update over noise levels and seeds.
    Sweep(Flags),
    /// Rerun a command from its manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in systems.
    Systems,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Rates,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Ode,
    Sde,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BandArg {
    Local,
    Propagated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorArg {
    Default,
    Informative,
}

/// Flags shared by the run commands; each overrides the same field of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    /// Override a system parameter, e.g. `--param alpha=0`.
    #[arg(long = "param", value_parser = parse_kv)]
    pub params: Vec<(String, f64)>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Measurement file (.csv or .bin).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub framework: Option<u8>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Duration in seconds.
    #[arg(long = "T")]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// Noise level as a fraction of each channel's standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub noise_scope: Option<ScopeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Named drift library.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    /// Posterior inclusion probability needed to select a term.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_mcmc: Option<usize>,
    #[arg(long)]
    pub n_burn: Option<usize>,
    /// Updated twin JSON.
    #[arg(long)]
    pub twin: Option<PathBuf>,
    #[arg(long)]
    pub forcing_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub band: Option<BandArg>,
    /// Parameter draws for the propagated band.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Seed list `0,1,2` or half-open range `0..10`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| format!("bad seed '{x}'")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

impl Flags {
    pub fn to_config(&self) -> RunConfig {
        RunConfig {
            system: self.system.clone(),
            params: (!self.params.is_empty()).then(|| self.params.iter().cloned().collect::<BTreeMap<_, _>>()),
            x0: self.x0.clone(),
            data: self.data.clone(),
            framework: self.framework,
            mode: self.mode.map(|m| match m {
                ModeArg::Ode => Mode::Ode,
                ModeArg::Sde => Mode::Sde,
            }),
            t_end: self.t_end,
            dt: self.dt,
            ensemble: self.ensemble,
            noise: self.noise,
            noise_scope: self.noise_scope.map(|s| match s {
                ScopeArg::Rates => NoiseScope::Rates,
                ScopeArg::All => NoiseScope::All,
            }),
            seed: self.seed,
            format: self.format.map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Bin => Format::Bin,
            }),
            preset: self.preset.clone(),
            prior: self.prior.map(|p| match p {
                PriorArg::Default => Prior::Default,
                PriorArg::Informative => Prior::Informative,
            }),
            pip_threshold: self.threshold,
            n_mcmc: self.n_mcmc,
            n_burn: self.n_burn,
            twin: self.twin.clone(),
            forcing_seed: self.forcing_seed,
            band: self.band.map(|b| match b {
                BandArg::Local => Band::Local,
                BandArg::Propagated => Band::Propagated,
            }),
            samples: self.samples,
            levels: self.levels.clone(),
            seeds: self.seeds.clone().map(|s| s.0),
            jobs: self.jobs,
            out: self.out.clone(),
            ..RunConfig::default()
        }
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(file.overlay(self.to_config()))
    }
}

/// Runs a parsed command; `None` for commands that write no manifest.
pub fn execute(cli: Cli) -> Result<Option<Manifest>, CliError> {
    let (kind, flags) = match cli.command {
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Update(f) => (CommandKind::Update, f),
        Command::Predict(f) => (CommandKind::Predict, f),
        Command::Sweep(f) => (CommandKind::Sweep, f),
        Command::Replay { manifest, out } => return commands::replay(&manifest, out).map(Some),
        Command::Systems => {
            for sys in builtin_systems() {
                println!("{}", sys.name);
                for line in sys.equations(true) {
                    println!("  {line}");
                }
            }
            return Ok(None);
        }
    };
    commands::run(kind, flags.resolve()?).map(Some)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(Some(m)) => {
            if let Some(out) = &m.config.out {
                println!("{}", out.join(commands::MANIFEST).display());
            }
            exit::OK
        }
        Ok(None) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
