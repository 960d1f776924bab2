//! End-to-end checks of the command-line interface: file products of each
//! subcommand, exit codes and diagnostics of the shipped binary, and the
//! one-frame compound identity.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use pwdcl::cli::{run, Cli, Command};
use pwdcl::formats::{read_iq, read_pwset, read_rf};

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let base = "\
probe.n_elements = 32
sim.angles = 4
sim.span_deg = 12.0
sim.depths = 1.2e-2
sim.laterals = 0.0
sim.depth_max = 1.6e-2
net.levels = 2
net.filters = 4,6
net.crop_size = 32
train.total_steps = 8
train.period_steps = 8
train.val_interval = 0
";
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn run_cli(command: Command) -> pwdcl::Result<()> {
    run(Cli { command })
}

#[test]
fn simulate_beamform_compound_render_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let rf_dir = dir.path().join("rf");

    run_cli(Command::Simulate {
        config: cfg.clone(),
        out_dir: rf_dir.clone(),
        seed: None,
    })
    .unwrap();
    assert!(rf_dir.join("phantom.txt").exists());
    let rf = read_rf(&rf_dir.join("rf_0000.pwrf")).unwrap();
    assert_eq!(rf.probe.n_elements, 32);
    // Provenance block survives the round trip.
    assert!(rf.meta.iter().any(|l| l.starts_with("sim.angles")));

    let set_path = dir.path().join("set.pwsq");
    run_cli(Command::Beamform {
        config: cfg.clone(),
        input: rf_dir.clone(),
        out: set_path.clone(),
    })
    .unwrap();
    let (set, meta) = read_pwset(&set_path).unwrap();
    assert_eq!(set.len(), 4);
    assert!(meta.iter().any(|l| l.starts_with("probe.n_elements")));

    let comp_path = dir.path().join("comp.pwiq");
    run_cli(Command::Compound {
        config: cfg.clone(),
        input: set_path.clone(),
        out: comp_path.clone(),
    })
    .unwrap();
    let comp = read_iq(&comp_path).unwrap();
    assert_eq!(comp.grid, *set.grid());

    let pgm_path = dir.path().join("comp.pgm");
    run_cli(Command::Render {
        config: cfg.clone(),
        input: comp_path.clone(),
        out: pgm_path.clone(),
    })
    .unwrap();
    let pgm = fs::read(&pgm_path).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    let expected_pixels = comp.grid.n_pixels();
    assert!(pgm.len() > expected_pixels);

    // Single-file beamform produces a lone I/Q image.
    let iq_path = dir.path().join("one.pwiq");
    run_cli(Command::Beamform {
        config: cfg.clone(),
        input: rf_dir.join("rf_0001.pwrf"),
        out: iq_path.clone(),
    })
    .unwrap();
    let one = read_iq(&iq_path).unwrap();
    assert_eq!(one.grid, comp.grid);

    // Evaluate the compound against the written phantom.
    let report_path = dir.path().join("report.txt");
    run_cli(Command::Evaluate {
        config: cfg.clone(),
        input: comp_path.clone(),
        phantom: rf_dir.join("phantom.txt"),
        out: report_path.clone(),
    })
    .unwrap();
    let report = fs::read_to_string(&report_path).unwrap();
    assert!(report.lines().any(|l| l.starts_with("fwhm_lateral")));
}

#[test]
fn train_and_infer_products() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let rf_dir = dir.path().join("rf");
    run_cli(Command::Simulate {
        config: cfg.clone(),
        out_dir: rf_dir.clone(),
        seed: Some(5),
    })
    .unwrap();
    let set_path = dir.path().join("set.pwsq");
    run_cli(Command::Beamform {
        config: cfg.clone(),
        input: rf_dir.clone(),
        out: set_path.clone(),
    })
    .unwrap();

    let ckpt = dir.path().join("net.dclnet");
    run_cli(Command::Train {
        config: cfg.clone(),
        input: set_path.clone(),
        out: ckpt.clone(),
        log: None,
        seed: Some(5),
    })
    .unwrap();
    assert!(ckpt.exists());
    let log = fs::read_to_string(dir.path().join("net.log")).unwrap();
    // Header record plus one line per step.
    assert_eq!(log.lines().count(), 9);

    let comp_path = dir.path().join("comp.pwiq");
    run_cli(Command::Compound {
        config: cfg.clone(),
        input: set_path.clone(),
        out: comp_path.clone(),
    })
    .unwrap();
    let out_path = dir.path().join("dcl.pwiq");
    run_cli(Command::Infer {
        config: cfg.clone(),
        input: comp_path.clone(),
        checkpoint: ckpt.clone(),
        out: out_path.clone(),
    })
    .unwrap();
    let img = read_iq(&out_path).unwrap();
    assert!(img.values.iter().any(|v| v.norm() > 0.0));
    // Network outputs are tanh-bounded.
    assert!(img
        .values
        .iter()
        .all(|v| v.re.abs() < 1.0 && v.im.abs() < 1.0));
}

#[test]
fn one_frame_pipeline_compound_equals_beamform() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.angles = 1\n");
    run_cli(Command::Pipeline {
        config: cfg,
        out_dir: dir.path().to_path_buf(),
        with_sp: false,
        seed: None,
    })
    .unwrap();
    let das1 = read_iq(&dir.path().join("das_1pw.pwiq")).unwrap();
    let cpwc1 = read_iq(&dir.path().join("cpwc_1.pwiq")).unwrap();
    assert_eq!(das1.grid, cpwc1.grid);
    assert_eq!(das1.values, cpwc1.values);
}

#[test]
fn binary_reports_single_line_diagnostics_and_nonzero_exit() {
    let exe = env!("CARGO_BIN_EXE_pwdcl");
    let dir = tempfile::tempdir().unwrap();

    // Unknown config key.
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "nonsense.key = 1\n").unwrap();
    let out = Process::new(exe)
        .args(["simulate", "--config"])
        .arg(&bad_cfg)
        .arg("--out-dir")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
    assert_eq!(stderr.lines().filter(|l| l.starts_with("error:")).count(), 1);

    // Missing input file.
    let cfg = write_config(dir.path(), "");
    let out = Process::new(exe)
        .args(["compound", "--config"])
        .arg(&cfg)
        .arg("--in")
        .arg(dir.path().join("missing.pwsq"))
        .arg("--out")
        .arg(dir.path().join("out.pwiq"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn infer_with_all_zero_checkpoint_fails_with_diagnostic() {
    let exe = env!("CARGO_BIN_EXE_pwdcl");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let rf_dir = dir.path().join("rf");
    run_cli(Command::Simulate {
        config: cfg.clone(),
        out_dir: rf_dir.clone(),
        seed: None,
    })
    .unwrap();
    let iq_path = dir.path().join("one.pwiq");
    run_cli(Command::Beamform {
        config: cfg.clone(),
        input: rf_dir.join("rf_0001.pwrf"),
        out: iq_path.clone(),
    })
    .unwrap();

    // Hand-built checkpoint with all-zero weights: tanh(0) everywhere.
    let ncfg = pwdcl::net::NetworkConfig {
        levels: 2,
        filters_per_level: vec![4, 6],
        kernel_size: 3,
        leaky_slope: 0.01,
        crop_size: 32,
    };
    let zero_params = pwdcl::net::Parameters {
        layers: pwdcl::net::layer_plan(&ncfg)
            .iter()
            .map(|&(i, o, _)| pwdcl::net::ConvLayer::zeros(i, o))
            .collect(),
        iteration: 0,
    };
    let ckpt = dir.path().join("zero.dclnet");
    pwdcl::formats::write_checkpoint(&ckpt, &zero_params, &ncfg).unwrap();

    let out = Process::new(exe)
        .args(["infer", "--config"])
        .arg(&cfg)
        .arg("--in")
        .arg(&iq_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(dir.path().join("dead.pwiq"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("zero"), "stderr: {stderr}");
}

#[test]
fn pwc_seed_environment_override() {
    // flag > env > config: with no flag, PWC_SEED fixes all stage seeds.
    let exe = env!("CARGO_BIN_EXE_pwdcl");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.noise_rms = 1e-3\nsim.seed = 1\n");
    for (name, env_seed) in [("a", "77"), ("b", "77"), ("c", "78")] {
        let out_dir = dir.path().join(name);
        let out = Process::new(exe)
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out-dir")
            .arg(&out_dir)
            .env("PWC_SEED", env_seed)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let read = |n: &str| fs::read(dir.path().join(n).join("rf_0000.pwrf")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}
