use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use twinforge::dictionary::LibrarySpec;
use twinforge::simulate::{corrupt, default_noise_levels, em_simulate, forcing_samples, rk4_simulate, NoisePolicy, SystemDef};
use twinforge::targets::{Dataset, Source};
use twinforge::twin::{
    default_libraries, noise_sweep, nrmse, nrmse_std, predict_states, render_equations, update_f1, update_f2, BandMode,
    Excitation, PipelineConfig, Prediction, UpdateOptions, UpdatedTwin,
};

use crate::config::{Band, Format, Mode, RunConfig};
use crate::error::{CliError, Stage};
use crate::io;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "twinforge-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Update,
    Predict,
    Sweep,
}

/// Everything needed to rerun a command: the resolved configuration and
/// the files it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub command: CommandKind,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

fn finish(
    command: CommandKind,
    config: RunConfig,
    out: &Path,
    outputs: &[&str],
    metrics: Option<serde_json::Value>,
) -> Result<Manifest, CliError> {
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        metrics,
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(out)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::fs::canonicalize(p).map_err(|e| CliError::io(p, e))
}

pub fn run(kind: CommandKind, cfg: RunConfig) -> Result<Manifest, CliError> {
    match kind {
        CommandKind::Simulate => simulate(cfg),
        CommandKind::Update => update(cfg),
        CommandKind::Predict => predict(cfg),
        CommandKind::Sweep => sweep(cfg),
    }
}

/// Reruns a manifest into `out`.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<Manifest, CliError> {
    let manifest: Manifest = io::read_json(manifest_path)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(CliError::config(format!("unsupported manifest schema '{}'", manifest.schema)));
    }
    let out = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    let cfg = RunConfig { out: Some(out), ..manifest.config };
    run(manifest.command, cfg)
}

fn mode_of(cfg: &RunConfig) -> Mode {
    cfg.mode.unwrap_or(match cfg.framework {
        Some(2) => Mode::Sde,
        _ => Mode::Ode,
    })
}

fn simulate_dataset(sys: &SystemDef, cfg: &RunConfig, mode: Mode) -> Result<Dataset, CliError> {
    let r = match mode {
        Mode::Ode => rk4_simulate(sys, cfg.t_end(), cfg.dt(), cfg.seed()),
        Mode::Sde => em_simulate(sys, cfg.t_end(), cfg.dt(), cfg.ensemble(), cfg.seed()),
    };
    r.map_err(|e| CliError::from_core(Stage::Simulate, e))
}

fn noise_policy(cfg: &RunConfig) -> Result<NoisePolicy, CliError> {
    Ok(NoisePolicy { level: cfg.noise()?, seed: cfg.seed(), scope: cfg.noise_scope.unwrap_or_default() })
}

pub fn simulate(mut cfg: RunConfig) -> Result<Manifest, CliError> {
    let sys = cfg.system_def()?;
    let mode = mode_of(&cfg);
    let clean = simulate_dataset(&sys, &cfg, mode)?;
    let noisy = corrupt(&clean, &noise_policy(&cfg)?).map_err(CliError::config_from)?;
    let format = cfg.format.unwrap_or(match mode {
        Mode::Ode => Format::Csv,
        Mode::Sde => Format::Bin,
    });
    let ext = match format {
        Format::Csv => "csv",
        Format::Bin => "bin",
    };
    let out = prepare_out(&cfg)?;
    let (clean_name, data_name) = (format!("clean.{ext}"), format!("data.{ext}"));
    io::write_dataset(&out.join(&clean_name), &clean)?;
    io::write_dataset(&out.join(&data_name), &noisy)?;

    cfg.mode = Some(mode);
    cfg.format = Some(format);
    cfg.t_end = Some(cfg.t_end());
    cfg.dt = Some(cfg.dt());
    cfg.noise = Some(cfg.noise()?);
    cfg.noise_scope = Some(cfg.noise_scope.unwrap_or_default());
    cfg.seed = Some(cfg.seed());
    cfg.ensemble = (mode == Mode::Sde).then(|| cfg.ensemble());
    cfg.out = Some(out.clone());
    let metrics = json!({
        "samples": clean.n(),
        "realizations": clean.realizations.len(),
        "states": clean.state_dim(),
        "inputs": clean.n_inputs(),
    });
    finish(CommandKind::Simulate, cfg, &out, &[&clean_name, &data_name], Some(metrics))
}

/// Nominal physics for an external dataset: the configured system, else
/// the system recorded by the `simulate` manifest next to the data file.
fn sibling_system(cfg: &RunConfig, data: &Path) -> Result<RunConfig, CliError> {
    if cfg.system.is_some() {
        return Ok(cfg.clone());
    }
    let path = data.parent().unwrap_or(Path::new(".")).join(MANIFEST);
    if !path.exists() {
        return Err(CliError::config("no system given and no simulate manifest beside the data file; pass --system"));
    }
    let m: Manifest = io::read_json(&path)?;
    let mut out = cfg.clone();
    out.system = m.config.system;
    out.params = m.config.params;
    out.x0 = m.config.x0;
    out.forcing = m.config.forcing;
    if out.system.is_none() {
        return Err(CliError::config(format!("{} names no system; pass --system", path.display())));
    }
    Ok(out)
}

fn libraries(cfg: &RunConfig, sys: &SystemDef, framework: u8, n_inputs: usize) -> Result<(LibrarySpec, LibrarySpec), CliError> {
    let (mut drift, diff) = default_libraries(sys, framework).map_err(CliError::config_from)?;
    if let Some(name) = &cfg.preset {
        let nu = if framework == 1 { n_inputs } else { 0 };
        drift = LibrarySpec::preset(name, sys.state_dim(), nu).map_err(CliError::config_from)?;
    }
    Ok((cfg.library.clone().unwrap_or(drift), cfg.diffusion_library.clone().unwrap_or(diff)))
}

pub fn update(mut cfg: RunConfig) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let (data, framework) = match cfg.data.clone() {
        Some(path) => {
            let path = absolute(&path)?;
            cfg = sibling_system(&cfg, &path)?;
            let (data, _) = io::read_dataset(&path)?;
            let inferred = if data.realizations.len() > 1 || data.meta.source == Source::Stochastic { 2 } else { 1 };
            cfg.data = Some(path);
            let fw = cfg.framework()?.unwrap_or(inferred);
            (data, fw)
        }
        None => {
            let fw = cfg.framework()?.unwrap_or(if mode_of(&cfg) == Mode::Sde { 2 } else { 1 });
            let mode = if fw == 2 { Mode::Sde } else { Mode::Ode };
            let sys = cfg.system_def()?;
            let clean = simulate_dataset(&sys, &cfg, mode)?;
            let noisy = corrupt(&clean, &noise_policy(&cfg)?).map_err(CliError::config_from)?;
            cfg.mode = Some(mode);
            cfg.t_end = Some(cfg.t_end());
            cfg.dt = Some(cfg.dt());
            cfg.noise = Some(cfg.noise()?);
            cfg.noise_scope = Some(cfg.noise_scope.unwrap_or_default());
            cfg.ensemble = (mode == Mode::Sde).then(|| cfg.ensemble());
            (noisy, fw)
        }
    };
    let sys = cfg.system_def()?;
    if data.state_dim() != sys.state_dim() {
        return Err(CliError::config(format!(
            "data has {} states, system {} has {}",
            data.state_dim(),
            sys.name,
            sys.state_dim()
        )));
    }
    let hp = cfg.hyperparameters()?;
    let seed = cfg.seed();
    let (lib, dlib) = libraries(&cfg, &sys, framework, data.n_inputs())?;
    let nominal = sys.nominal();
    let opts = UpdateOptions::default();
    let twin = match framework {
        1 => update_f1(&data, &nominal, &lib, &hp, seed, &opts),
        _ => update_f2(&data, &nominal, &lib, &dlib, &hp, seed, &opts),
    };
    let mut twin = twin.map_err(|e| CliError::from_core(Stage::Update, e))?;
    twin.system = Some(sys.clone());

    let out = prepare_out(&cfg)?;
    io::write_json(&out.join("twin.json"), &twin)?;
    write_pip(&out.join("pip.csv"), &twin)?;
    std::fs::write(out.join("equations.txt"), render_equations(&twin)).map_err(|e| CliError::io(&out, e))?;
    io::write_json(&out.join("terms.json"), &selected_terms(&twin))?;
    eprintln!("update finished in {:.2} s", started.elapsed().as_secs_f64());

    cfg.framework = Some(framework);
    cfg.seed = Some(seed);
    cfg.hyperparameters = Some(hp);
    cfg.library = Some(lib);
    cfg.diffusion_library = (framework == 2).then_some(dlib);
    cfg.preset = None;
    cfg.prior = None;
    cfg.pip_threshold = None;
    cfg.n_mcmc = None;
    cfg.n_burn = None;
    cfg.out = Some(out.clone());
    finish(CommandKind::Update, cfg, &out, &["twin.json", "pip.csv", "equations.txt", "terms.json"], None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTerm {
    pub equation: String,
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub pip: f64,
}

pub fn selected_terms(twin: &UpdatedTwin) -> Vec<SelectedTerm> {
    let mut out = vec![];
    for s in &twin.drift {
        for t in &s.terms {
            out.push(SelectedTerm { equation: format!("X{}", s.state + 1), label: t.label.clone(), mean: t.mean, std: t.std, pip: t.pip });
        }
    }
    for d in &twin.diffusion {
        for t in &d.terms {
            out.push(SelectedTerm {
                equation: format!("G{}{}", d.pair.0 + 1, d.pair.1 + 1),
                label: t.label.clone(),
                mean: t.mean,
                std: t.std,
                pip: t.pip,
            });
        }
    }
    out
}

fn write_pip(path: &Path, twin: &UpdatedTwin) -> Result<(), CliError> {
    let header: Vec<String> = ["equation", "label", "pip", "mean", "std", "selected"].iter().map(|s| s.to_string()).collect();
    let mut rows = vec![];
    let mut push = |eq: String, s: &twinforge::sampler::PosteriorSummary| {
        for k in 0..s.k() {
            rows.push(vec![
                eq.clone(),
                s.labels[k].clone(),
                io::fmt_f64(s.pip[k]),
                io::fmt_f64(s.mu_theta[k]),
                io::fmt_f64(s.std(k)),
                s.selected.contains(&k).to_string(),
            ]);
        }
    };
    for s in &twin.drift {
        if let Some(sum) = &s.summary {
            push(format!("X{}", s.state + 1), sum);
        }
    }
    for d in &twin.diffusion {
        if let Some(sum) = &d.summary {
            push(format!("G{}{}", d.pair.0 + 1, d.pair.1 + 1), sum);
        }
    }
    io::write_rows(path, &header, &rows)
}

fn sample_count(cfg: &RunConfig) -> Result<usize, CliError> {
    let (t, dt) = (cfg.t_end(), cfg.dt());
    if !(t > 0.0 && dt > 0.0) {
        return Err(CliError::config("T and dt must be positive"));
    }
    let n = (t / dt).round() as usize;
    if n < 2 {
        return Err(CliError::config("prediction shorter than two samples"));
    }
    Ok(n)
}

pub fn predict(mut cfg: RunConfig) -> Result<Manifest, CliError> {
    let twin_path = absolute(cfg.twin.as_deref().ok_or_else(|| CliError::config("predict needs --twin"))?)?;
    let twin: UpdatedTwin = io::read_json(&twin_path)?;
    let sys = match (&cfg.system, &twin.system) {
        (Some(_), _) => cfg.system_def()?,
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(CliError::config("twin carries no system; pass --system for the nominal physics")),
    };
    if sys.state_dim() != twin.state_dim {
        return Err(CliError::config("system and twin differ in state dimension"));
    }
    let n = sample_count(&cfg)?;
    let dt = cfg.dt();
    let seed = cfg.forcing_seed.unwrap_or(1);
    let x0 = match (&cfg.x0, twin.framework) {
        (Some(x), _) => x.clone(),
        (None, 2) => sys.x0_sde.clone().unwrap_or_else(|| sys.x0.clone()),
        (None, _) => sys.x0.clone(),
    };
    let band = match cfg.band.unwrap_or(Band::Local) {
        Band::Local => BandMode::Local,
        Band::Propagated => BandMode::Propagated { samples: cfg.samples.unwrap_or(200), seed },
    };
    let forcing = (twin.framework == 1 && twin.n_inputs > 0).then(|| forcing_samples(&sys, n, dt, seed));
    let exc = match (&forcing, twin.framework) {
        (Some(u), _) => Excitation::Forcing(u),
        (None, 2) => Excitation::Brownian { seed, index: 0, g: None },
        (None, _) => Excitation::None,
    };
    let pred = predict_states(&twin, &sys.nominal(), &x0, &exc, dt, n, band)
        .map_err(|e| CliError::from_core(Stage::Predict, e))?;

    // the reference run shares the forcing or Brownian path with the prediction
    let noise = cfg.noise()?;
    let truth_sys = if cfg.x0.is_some() { sys.clone().with_x0(x0.clone()) } else { sys.clone() };
    let truth = match twin.framework {
        1 => rk4_simulate(&truth_sys, cfg.t_end(), dt, seed),
        _ => {
            let mut s = truth_sys;
            s.x0_sde = Some(x0.clone());
            em_simulate(&s, cfg.t_end(), dt, 1, seed)
        }
    };
    let metrics = match truth {
        Ok(truth) => Some(compare(&twin, &pred, &truth, noise, seed)?),
        Err(e) => {
            eprintln!("reference run failed: {e}");
            None
        }
    };

    let out = prepare_out(&cfg)?;
    write_prediction(&out.join("prediction.csv"), &pred)?;
    if let Some(m) = &metrics {
        io::write_json(&out.join("metrics.json"), m)?;
    }
    cfg.twin = Some(twin_path);
    cfg.t_end = Some(cfg.t_end());
    cfg.dt = Some(dt);
    cfg.forcing_seed = Some(seed);
    cfg.band = Some(cfg.band.unwrap_or(Band::Local));
    cfg.samples = matches!(band, BandMode::Propagated { .. }).then(|| cfg.samples.unwrap_or(200));
    cfg.noise = Some(noise);
    cfg.out = Some(out.clone());
    let outputs: &[&str] = if metrics.is_some() { &["prediction.csv", "metrics.json"] } else { &["prediction.csv"] };
    finish(CommandKind::Predict, cfg, &out, outputs, metrics)
}

/// Accuracy of a prediction against the simulated truth. Band coverage is
/// counted on states with identified terms; with `noise > 0` it is also
/// measured against truth rates corrupted at that level.
pub fn compare(twin: &UpdatedTwin, pred: &Prediction, truth: &Dataset, noise: f64, seed: u64) -> Result<serde_json::Value, CliError> {
    let n = pred.t.len();
    let states = truth.realizations[0].states.rows(0, n).into_owned();
    let identified: Vec<usize> = twin.drift.iter().filter(|s| !s.terms.is_empty()).map(|s| s.state).collect();
    let coverage = |data: &Dataset| -> Option<f64> {
        let r = data.realizations[0].rates.as_ref()?;
        if identified.is_empty() {
            return None;
        }
        let (lo, hi) = match pred.band {
            twinforge::twin::BandTarget::Rate => (&pred.lo, &pred.hi),
            twinforge::twin::BandTarget::State => return None,
        };
        let mut inside = 0usize;
        for &i in &identified {
            for k in 0..n {
                inside += usize::from(r[(k, i)] >= lo[(k, i)] && r[(k, i)] <= hi[(k, i)]);
            }
        }
        Some(inside as f64 / (n * identified.len()) as f64)
    };
    let state_coverage = (pred.band == twinforge::twin::BandTarget::State).then(|| {
        let m = twin.state_dim;
        let mut inside = 0usize;
        for i in 0..m {
            for k in 0..n {
                let v = states[(k, i)];
                inside += usize::from(v >= pred.lo[(k, i)] && v <= pred.hi[(k, i)]);
            }
        }
        inside as f64 / (n * m) as f64
    });
    let measured = if noise > 0.0 {
        let noisy = corrupt(truth, &NoisePolicy::new(noise, seed)).map_err(CliError::config_from)?;
        coverage(&noisy)
    } else {
        None
    };
    Ok(json!({
        "band": pred.band,
        "nrmse": nrmse(&pred.mean, &states),
        "nrmse_std": nrmse_std(&pred.mean, &states),
        "identified_states": identified,
        "rate_coverage_clean": coverage(truth),
        "rate_coverage_measured": measured,
        "state_coverage": state_coverage,
    }))
}

fn write_prediction(path: &Path, p: &Prediction) -> Result<(), CliError> {
    let m = p.mean.ncols();
    let mut header = vec!["t".to_string()];
    for i in 1..=m {
        header.extend([format!("mean_X{i}"), format!("rate_X{i}"), format!("lo95_X{i}"), format!("hi95_X{i}")]);
    }
    let rows: Vec<Vec<String>> = (0..p.t.len())
        .map(|k| {
            let mut r = vec![io::fmt_f64(p.t[k])];
            for i in 0..m {
                r.extend([p.mean[(k, i)], p.rate[(k, i)], p.lo[(k, i)], p.hi[(k, i)]].map(io::fmt_f64));
            }
            r
        })
        .collect();
    io::write_rows(path, &header, &rows)
}

pub fn sweep(mut cfg: RunConfig) -> Result<Manifest, CliError> {
    let sys = cfg.system_def()?;
    let framework = cfg.framework()?.unwrap_or(1);
    let levels = cfg.levels.clone().unwrap_or_else(default_noise_levels);
    let seeds = cfg.seeds.clone().unwrap_or_else(|| (0..10).collect());
    if seeds.is_empty() || levels.is_empty() {
        return Err(CliError::config("sweep needs at least one level and one seed"));
    }
    let jobs = cfg.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let hp = cfg.hyperparameters()?;
    let (lib, dlib) = libraries(&cfg, &sys, framework, sys.n_inputs())?;
    let pipeline = PipelineConfig {
        t_end: cfg.t_end(),
        dt: cfg.dt(),
        ensemble: cfg.ensemble(),
        noise_scope: cfg.noise_scope.unwrap_or_default(),
        library: Some(lib.clone()),
        diffusion_library: Some(dlib.clone()),
        hyperparameters: hp.clone(),
        ..PipelineConfig::default()
    };
    let report = noise_sweep(&sys, framework, &levels, &seeds, &pipeline, jobs).map_err(CliError::config_from)?;
    for c in report.cells.iter().filter(|c| c.failure.is_some()) {
        eprintln!("level {} seed {}: {}", c.level, c.seed, c.failure.as_deref().unwrap_or(""));
    }

    let out = prepare_out(&cfg)?;
    io::write_json(&out.join("sweep.json"), &report)?;
    let header: Vec<String> =
        ["level", "term", "mean_error", "std_error", "exact_count", "completed", "seeds"].iter().map(|s| s.to_string()).collect();
    let mut rows = vec![];
    for l in &report.per_level {
        for (t, name) in report.terms.iter().enumerate() {
            rows.push(vec![
                io::fmt_f64(l.level),
                name.clone(),
                io::fmt_f64(l.mean_error.get(t).copied().unwrap_or(f64::NAN)),
                io::fmt_f64(l.std_error.get(t).copied().unwrap_or(f64::NAN)),
                l.exact_count.to_string(),
                l.completed.to_string(),
                seeds.len().to_string(),
            ]);
        }
    }
    io::write_rows(&out.join("sweep.csv"), &header, &rows)?;

    cfg.framework = Some(framework);
    cfg.levels = Some(levels);
    cfg.seeds = Some(seeds);
    cfg.jobs = Some(jobs);
    cfg.t_end = Some(pipeline.t_end);
    cfg.dt = Some(pipeline.dt);
    cfg.ensemble = (framework == 2).then_some(pipeline.ensemble);
    cfg.noise_scope = Some(pipeline.noise_scope);
    cfg.hyperparameters = Some(hp);
    cfg.library = Some(lib);
    cfg.diffusion_library = (framework == 2).then_some(dlib);
    cfg.preset = None;
    cfg.prior = None;
    cfg.pip_threshold = None;
    cfg.n_mcmc = None;
    cfg.n_burn = None;
    cfg.out = Some(out.clone());
    finish(CommandKind::Sweep, cfg, &out, &["sweep.json", "sweep.csv"], None)
}
