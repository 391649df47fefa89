use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use twinforge::simulate::{em_simulate, rk4_simulate, SystemDef};
use twinforge::twin::{parse_rendered_terms, UpdatedTwin};
use twinforge_cli::commands::{Manifest, SelectedTerm};
use twinforge_cli::io::{read_dataset, write_dataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twinforge"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("twinforge-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn zero_noise_files_identical() {
    let d = scratch("zero");
    ok(&["simulate", "--system", "duffing", "--noise", "0", "--out", s(&d)]);
    assert_eq!(fs::read(d.join("clean.csv")).unwrap(), fs::read(d.join("data.csv")).unwrap());
    let text = fs::read_to_string(d.join("data.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,X1,X2,u1,dX1,dX2");
    assert_eq!(text.lines().count(), 1001);
}

#[test]
fn csv_round_trip_is_lossless() {
    let d = scratch("csv");
    let sys = SystemDef::builtin("two-dof").unwrap();
    let data = rk4_simulate(&sys, 0.5, 1e-3, 9).unwrap();
    let path = d.join("x.csv");
    write_dataset(&path, &data).unwrap();
    let (back, _) = read_dataset(&path).unwrap();
    assert_eq!(back.t, data.t);
    assert_eq!(back.realizations, data.realizations);
}

#[test]
fn ensemble_binary_round_trip() {
    let d = scratch("bin");
    ok(&["simulate", "--system", "crack", "--mode", "sde", "--ensemble", "100", "--seed", "2", "--out", s(&d)]);
    let (back, has_meta) = read_dataset(&d.join("data.bin")).unwrap();
    assert!(has_meta);
    assert_eq!(back.realizations.len(), 100);
    assert_eq!(back.n(), 1000);
    let sys = SystemDef::builtin("crack").unwrap();
    let direct = em_simulate(&sys, 1.0, 1e-3, 100, 2).unwrap();
    assert_eq!(back, direct);

    // the same ensemble as CSV carries a realization column
    let path = d.join("e.csv");
    write_dataset(&path, &direct).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",realization"));
    assert_eq!(text.lines().count(), 100 * 1000 + 1);
    let (csv_back, _) = read_dataset(&path).unwrap();
    assert_eq!(csv_back.realizations, direct.realizations);
}

#[test]
fn flags_override_config_file() {
    let d = scratch("precedence");
    let cfg = d.join("run.json");
    fs::write(&cfg, r#"{"system": "duffing", "seed": 3, "noise": 0.1, "T": 0.5}"#).unwrap();
    ok(&["simulate", "--config", s(&cfg), "--seed", "5", "--out", s(&d.join("o"))]);
    let m = manifest(&d.join("o"));
    assert_eq!(m.config.seed, Some(5));
    assert_eq!(m.config.noise, Some(0.1));
    assert_eq!(m.config.t_end, Some(0.5));
    assert_eq!(m.config.dt, Some(1e-3));
}

#[test]
fn bad_configs_exit_2() {
    let d = scratch("badcfg");
    let cfg = d.join("run.json");
    fs::write(&cfg, r#"{"system": "duffing", "sead": 3}"#).unwrap();
    assert_eq!(run(&["simulate", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--system", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--system", "duffing", "--param", "zeta=1"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--system", "duffing", "--noise", "-1", "--out", s(&d)]).status.code(), Some(2));
    assert_eq!(run(&["update", "--system", "duffing", "--framework", "3"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn blow_ups_map_to_stage_codes() {
    let d = scratch("blowup");
    let o = run(&["simulate", "--system", "duffing", "--param", "alpha=1e12", "--x0", "10,0", "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(3));

    ok(&["update", "--system", "duffing", "--out", s(&d.join("u"))]);
    let twin = d.join("u/twin.json");
    let o = run(&["predict", "--twin", s(&twin), "--param", "alpha=1e12", "--x0", "10,0", "--out", s(&d.join("p"))]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn overflowing_library_is_a_sampler_failure() {
    let d = scratch("overflow");
    let mut text = String::from("t,X1,X2,u1\n");
    for k in 0..200 {
        let x = if k == 100 { 1e200 } else { (k as f64 * 0.05).sin() };
        text.push_str(&format!("{},{},{},{}\n", k as f64 * 1e-3, x, 0.1, 0.0));
    }
    let path = d.join("data.csv");
    fs::write(&path, text).unwrap();
    let o = run(&["update", "--data", s(&path), "--system", "duffing", "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("X2"));
}

#[test]
fn file_update_matches_in_memory_pipeline() {
    let d = scratch("pipeline");
    ok(&["simulate", "--system", "duffing", "--noise", "0.05", "--seed", "4", "--out", s(&d.join("sim"))]);
    ok(&["update", "--data", s(&d.join("sim/data.csv")), "--seed", "4", "--out", s(&d.join("a"))]);
    ok(&["update", "--system", "duffing", "--noise", "0.05", "--seed", "4", "--out", s(&d.join("b"))]);
    for f in ["twin.json", "pip.csv", "equations.txt", "terms.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let m = manifest(&d.join("a"));
    assert_eq!(m.config.system.as_deref(), Some("duffing"));
    assert_eq!(m.config.framework, Some(1));
}

#[test]
fn update_outputs_agree() {
    let d = scratch("outputs");
    ok(&["update", "--system", "duffing", "--noise", "0.05", "--out", s(&d)]);
    let twin: UpdatedTwin = serde_json::from_str(&fs::read_to_string(d.join("twin.json")).unwrap()).unwrap();
    let terms: Vec<SelectedTerm> = serde_json::from_str(&fs::read_to_string(d.join("terms.json")).unwrap()).unwrap();
    let mut labels: Vec<&str> = terms.iter().map(|t| t.label.as_str()).collect();
    labels.sort_unstable();
    assert_eq!(labels, ["X1^3", "u1"]);
    assert!(terms.iter().all(|t| t.equation == "X2"));

    let parsed = parse_rendered_terms(&fs::read_to_string(d.join("equations.txt")).unwrap());
    for t in &terms {
        let (_, v) = parsed[1].iter().find(|(l, _)| *l == t.label).unwrap();
        assert!((v - t.mean).abs() <= 1e-5 * t.mean.abs());
    }

    let pip = fs::read_to_string(d.join("pip.csv")).unwrap();
    let mut lines = pip.lines();
    assert_eq!(lines.next().unwrap(), "equation,label,pip,mean,std,selected");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), twin.library.n_columns().unwrap());
    for r in &rows {
        let p: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(r[5] == "true", labels.contains(&r[1]), "{r:?}");
    }
}

#[test]
fn prediction_file_layout() {
    let d = scratch("predict");
    ok(&["update", "--system", "duffing", "--noise", "0.05", "--out", s(&d.join("u"))]);
    ok(&["predict", "--twin", s(&d.join("u/twin.json")), "--T", "0.5", "--noise", "0.05", "--out", s(&d.join("p"))]);
    let text = fs::read_to_string(d.join("p/prediction.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,mean_X1,rate_X1,lo95_X1,hi95_X1,mean_X2,rate_X2,lo95_X2,hi95_X2");
    assert_eq!(text.lines().count(), 501);
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[7] <= v[6] && v[6] <= v[8]);
    }
    let m = manifest(&d.join("p"));
    let metrics = m.metrics.unwrap();
    assert_eq!(metrics["band"], "rate");
    assert!(metrics["nrmse"][1].as_f64().unwrap() < 0.01);
}

#[test]
fn replay_reproduces_outputs() {
    let d = scratch("replay");
    ok(&["simulate", "--system", "two-dof", "--noise", "0.05", "--seed", "1", "--out", s(&d.join("sim"))]);
    ok(&["update", "--data", s(&d.join("sim/data.csv")), "--out", s(&d.join("upd"))]);
    ok(&["predict", "--twin", s(&d.join("upd/twin.json")), "--band", "propagated", "--samples", "20", "--out", s(&d.join("pred"))]);
    for stage in ["sim", "upd", "pred"] {
        let src = d.join(stage);
        let dst = d.join(format!("{stage}-replay"));
        ok(&["replay", s(&src.join("manifest.json")), "--out", s(&dst)]);
        let m = manifest(&src);
        assert!(!m.outputs.is_empty());
        for f in &m.outputs {
            assert_eq!(fs::read(src.join(f)).unwrap(), fs::read(dst.join(f)).unwrap(), "{stage}/{f}");
        }
        let r = manifest(&dst);
        assert_eq!(RunConfigNoOut::from(&m), RunConfigNoOut::from(&r));
    }
}

#[derive(Debug, PartialEq)]
struct RunConfigNoOut(String);

impl From<&Manifest> for RunConfigNoOut {
    fn from(m: &Manifest) -> Self {
        let mut c = m.config.clone();
        c.out = None;
        RunConfigNoOut(serde_json::to_string(&c).unwrap())
    }
}

#[test]
fn sweep_independent_of_jobs() {
    let d = scratch("sweep");
    let args = |jobs: &str, out: &Path| {
        ok(&["sweep", "--system", "duffing", "--levels", "0,0.2", "--seeds", "0..4", "--jobs", jobs, "--out", s(out)]);
    };
    args("1", &d.join("a"));
    args("4", &d.join("b"));
    for f in ["sweep.json", "sweep.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(d.join("a/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn seeds_and_systems() {
    let o = run(&["systems"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["duffing", "two-dof", "crack"] {
        assert!(text.lines().any(|l| l == name), "{text}");
    }
    let d = scratch("seeds");
    ok(&["sweep", "--system", "duffing", "--levels", "0", "--seeds", "7,9", "--T", "0.3", "--out", s(&d)]);
    assert_eq!(manifest(&d).config.seeds, Some(vec![7, 9]));
}

#[test]
fn unperturbed_update_renders_nominal() {
    let d = scratch("nominal");
    ok(&["update", "--system", "duffing", "--param", "alpha=0", "--param", "sigma=0", "--out", s(&d)]);
    let sys = SystemDef::builtin("duffing").unwrap();
    let want: String = sys.nominal().description.iter().map(|l| format!("{l}\n")).collect();
    assert_eq!(fs::read_to_string(d.join("equations.txt")).unwrap(), want);
}

#[test]
fn cubic_term_has_high_inclusion_probability() {
    let d = scratch("pip");
    ok(&["update", "--system", "duffing", "--noise", "0.05", "--out", s(&d)]);
    let pip = fs::read_to_string(d.join("pip.csv")).unwrap();
    let row = pip.lines().find(|l| l.starts_with("X2,X1^3,")).unwrap();
    let p: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!(p > 0.7, "{row}");
}

#[test]
fn output_only_twin_carries_diffusion_magnitude() {
    let d = scratch("f2");
    ok(&["update", "--system", "duffing", "--framework", "2", "--noise", "0.05", "--out", s(&d)]);
    let twin: UpdatedTwin = serde_json::from_str(&fs::read_to_string(d.join("twin.json")).unwrap()).unwrap();
    let mag = twin.diffusion_entry((1, 1)).and_then(|e| e.magnitude).unwrap();
    assert!((mag - 0.51).abs() < 0.05, "{mag}");
    assert_eq!(twin.schema, "twinforge/1");
}

#[test]
fn resting_linear_twin_predicts_zero() {
    let d = scratch("rest");
    ok(&["update", "--system", "duffing", "--param", "alpha=0", "--param", "sigma=0", "--out", s(&d.join("u"))]);
    ok(&["predict", "--twin", s(&d.join("u/twin.json")), "--x0", "0,0", "--out", s(&d.join("p"))]);
    let text = fs::read_to_string(d.join("p/prediction.csv")).unwrap();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!((v[1], v[5]), (0.0, 0.0));
    }
}

#[test]
fn default_sweep_grid() {
    let d = scratch("grid");
    ok(&["sweep", "--system", "duffing", "--seeds", "0", "--T", "0.5", "--out", s(&d)]);
    let levels = manifest(&d).config.levels.unwrap();
    assert_eq!(levels.len(), 14);
    assert_eq!((levels[0], levels[13]), (0.0, 0.6));
}
