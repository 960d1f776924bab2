//! Command-line front end: simulate, beamform, compound, dmas, train,
//! infer, evaluate, render and the full comparison pipeline.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::beamform::{compound, das_beamform, dmas_beamform, to_bmode, BmodeImage};
use crate::config::RunConfig;
use crate::dcltrain::{infer_tiled, normalize_frame, train, LossKind, TrainConfig};
use crate::domain::{IqImage, ProbeGeometry, PwSet, RfFrame, SteeringAngle, Validate};
use crate::error::{Error, Result};
use crate::formats::{
    read_checkpoint, read_iq, read_pwset, read_rf, render_pgm, write_checkpoint, write_iq,
    write_pwset, write_rf,
};
use crate::quality::{
    cnr, cyst_masks, extract_profile, fwhm, gcnr, pral, Profile, ProfileAxis, RegionLabel,
    RegionMask,
};
use crate::simfield::{phantom_from_text, phantom_to_text, simulate_rf, Phantom, SimParams};

#[derive(Parser)]
#[command(
    name = "pwdcl",
    version,
    about = "Plane-wave ultrasound reconstruction toolkit with an unsupervised coherence-trained beamformer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate steered plane-wave RF frames over the configured phantom
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving rf_####.pwrf and phantom.txt
        #[arg(long)]
        out_dir: PathBuf,
        /// Seed override (precedence: flag > PWC_SEED > config > default)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Delay-and-sum beamform one RF file (-> .pwiq) or a directory of RF
    /// files (-> .pwsq plane-wave set)
    Beamform {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coherently compound a plane-wave set into one I/Q image
    Compound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered delay-multiply-and-sum beamforming of one RF file
    Dmas {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the coherence (or MSE-baseline) beamformer on a plane-wave set
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint output path (.dclnet)
        #[arg(long)]
        out: PathBuf,
        /// Training log path (defaults to the checkpoint with .log)
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a trained network over a single-transmit I/Q image
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure image quality (FWHM/PRAL on point phantoms, CNR/gCNR on
    /// cyst phantoms) against the phantom geometry
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Phantom description file written by `simulate`
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an I/Q image to a binary PGM at the configured dynamic range
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full chain: simulate, beamform, compound, f-DMAS, coherence
    /// training and inference, per-method quality report
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also train and report the supervised MSE baseline
        #[arg(long)]
        with_sp: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out_dir,
            seed,
        } => cmd_simulate(&config, &out_dir, seed),
        Command::Beamform { config, input, out } => cmd_beamform(&config, &input, &out),
        Command::Compound { config, input, out } => cmd_compound(&config, &input, &out),
        Command::Dmas { config, input, out } => cmd_dmas(&config, &input, &out),
        Command::Train {
            config,
            input,
            out,
            log,
            seed,
        } => cmd_train(&config, &input, &out, log.as_deref(), seed),
        Command::Infer {
            config,
            input,
            checkpoint,
            out,
        } => cmd_infer(&config, &input, &checkpoint, &out),
        Command::Evaluate {
            config,
            input,
            phantom,
            out,
        } => cmd_evaluate(&config, &input, &phantom, &out),
        Command::Render { config, input, out } => cmd_render(&config, &input, &out),
        Command::Pipeline {
            config,
            out_dir,
            with_sp,
            seed,
        } => cmd_pipeline(&config, &out_dir, with_sp, seed),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_seed_override(seed)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct Simulated {
    probe: ProbeGeometry,
    phantom: Phantom,
    angles: Vec<SteeringAngle>,
    frames: Vec<RfFrame>,
}

fn simulate_frames(cfg: &RunConfig) -> Result<Simulated> {
    let probe = cfg.probe()?;
    let phantom = cfg.phantom()?;
    let angles = cfg.angles()?;
    let base = cfg.sim_params(&phantom, &probe)?;
    let frames = angles
        .iter()
        .enumerate()
        .map(|(i, &angle)| {
            let params = SimParams {
                seed: base.seed.wrapping_add(i as u64),
                ..base
            };
            simulate_rf(&phantom, &probe, angle, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulated {
        probe,
        phantom,
        angles,
        frames,
    })
}

fn cmd_simulate(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let sim = simulate_frames(&cfg)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("phantom.txt"), phantom_to_text(&sim.phantom))?;
    for (i, frame) in sim.frames.iter().enumerate() {
        let mut tagged = frame.clone();
        tagged.meta.extend(cfg.meta_lines());
        write_rf(&out_dir.join(format!("rf_{i:04}.pwrf")), &tagged)?;
    }
    println!(
        "simulated {} angles over {} scatterers -> {}",
        sim.frames.len(),
        sim.phantom.scatterers.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// beamform / compound / dmas
// ---------------------------------------------------------------------------

fn cmd_beamform(config: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let bf = cfg.beamform_config()?;
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pwrf"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::invalid_argument(format!(
                "no .pwrf files in {}",
                input.display()
            )));
        }
        let mut frames = Vec::with_capacity(paths.len());
        let mut angles = Vec::with_capacity(paths.len());
        for p in &paths {
            let rf = read_rf(p)?;
            let grid = cfg.grid(&rf.probe)?;
            angles.push(rf.angle);
            frames.push(das_beamform(&rf, &grid, &bf)?);
        }
        let v = cfg.validation_index(&angles)?;
        let set = PwSet::new(frames, v)?;
        write_pwset(out, &set, &cfg.meta_lines())?;
        println!(
            "beamformed {} transmits into {} (validation frame {v})",
            set.len(),
            out.display()
        );
    } else {
        let rf = read_rf(input)?;
        let grid = cfg.grid(&rf.probe)?;
        let mut img = das_beamform(&rf, &grid, &bf)?;
        img.meta.extend(cfg.meta_lines());
        write_iq(out, &img)?;
        println!("beamformed {} -> {}", input.display(), out.display());
    }
    Ok(())
}

fn cmd_compound(config: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let (set, _) = read_pwset(input)?;
    let mut img = compound(&set.frames)?;
    img.meta.extend(cfg.meta_lines());
    write_iq(out, &img)?;
    println!("compounded {} frames -> {}", set.len(), out.display());
    Ok(())
}

fn cmd_dmas(config: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let bf = cfg.beamform_config()?;
    let rf = read_rf(input)?;
    let grid = cfg.dmas_grid(&rf.probe)?;
    let mut img = dmas_beamform(&rf, &grid, &bf)?;
    img.meta.extend(cfg.meta_lines());
    write_iq(out, &img)?;
    println!("f-DMAS beamformed {} -> {}", input.display(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train / infer
// ---------------------------------------------------------------------------

fn run_training(
    cfg: &RunConfig,
    set: &PwSet,
    tcfg: &TrainConfig,
    checkpoint_path: &Path,
    log_path: &Path,
) -> Result<(crate::dcltrain::TrainOutcome, f64, f64)> {
    let ncfg = cfg.net_config()?;
    let net_seed = cfg.get_u64("net.seed")?;
    let checkpoint_interval = cfg.get_usize("train.checkpoint_interval")?;
    let mut log = std::io::BufWriter::new(fs::File::create(log_path)?);
    let outcome = train(set, tcfg, &ncfg, net_seed, |record, params| {
        writeln!(log, "{}", record.log_line())?;
        if checkpoint_interval > 0 && record.step > 0 && record.step % checkpoint_interval == 0 {
            write_checkpoint(checkpoint_path, params, &ncfg)?;
        }
        Ok(())
    })?;
    log.flush()?;
    write_checkpoint(checkpoint_path, &outcome.params, &ncfg)?;
    let first_val = outcome.records.first().map(|r| r.val_loss).unwrap_or(f64::NAN);
    let last_val = outcome.records.last().map(|r| r.val_loss).unwrap_or(f64::NAN);
    Ok((outcome, first_val, last_val))
}

fn cmd_train(
    config: &Path,
    input: &Path,
    out: &Path,
    log: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let (set, _) = read_pwset(input)?;
    let tcfg = cfg.train_config()?;
    let log_path = log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("log"));
    let (outcome, first_val, last_val) = run_training(&cfg, &set, &tcfg, out, &log_path)?;
    println!(
        "trained {} steps: validation loss {first_val:.4} -> {last_val:.4}; checkpoint {}",
        outcome.params.iteration,
        out.display()
    );
    Ok(())
}

fn cmd_infer(config: &Path, input: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let img = read_iq(input)?;
    let (params, ncfg) = read_checkpoint(checkpoint)?;
    let prepared = if img.norm_scale == 1.0 {
        normalize_frame(&img)?
    } else {
        img
    };
    let mut predicted = infer_tiled(&prepared, &params, &ncfg)?;
    if predicted.values.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::DegenerateNorm(
            "network produced an identically zero image (dead checkpoint?)".to_string(),
        ));
    }
    predicted.meta.extend(cfg.meta_lines());
    write_iq(out, &predicted)?;
    println!("inferred {} -> {}", input.display(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / render
// ---------------------------------------------------------------------------

fn mm(v: f64) -> f64 {
    v * 1.0e3
}

/// Windowed profile around one target, for width measurements on
/// multi-target images.
fn target_profile(
    bmode: &BmodeImage,
    axis: ProfileAxis,
    fixed: f64,
    center: f64,
    half_width: f64,
) -> Result<Profile> {
    extract_profile(bmode, axis, fixed)?.window(center, half_width)
}

/// Quality report lines (`metric region value unit`) for one image over a
/// phantom's geometry.
fn evaluate_image(cfg: &RunConfig, img: &IqImage, phantom: &Phantom) -> Result<Vec<String>> {
    let dr = cfg.get_f64("metrics.dynamic_range")?;
    let bmode = to_bmode(img, dr)?;
    let mut lines = Vec::new();

    if !phantom.cysts.is_empty() {
        let margin = cfg.get_f64("metrics.mask_margin")?;
        let bins = cfg.get_usize("metrics.gcnr_bins")?;
        let values: Vec<f64> = match cfg.get_str("metrics.cnr_domain") {
            "db" => bmode.db_values.clone(),
            _ => img.envelope(),
        };
        let mut all_inner = RegionMask {
            grid: img.grid,
            membership: vec![false; img.grid.n_pixels()],
            label: RegionLabel::Anechoic,
        };
        let mut all_outer = all_inner.clone();
        all_outer.label = RegionLabel::Isoechoic;
        for (i, cyst) in phantom.cysts.iter().enumerate() {
            let (inner, outer) = cyst_masks(&img.grid, cyst, margin);
            if !inner.violations().is_empty() || !outer.violations().is_empty() {
                lines.push(format!("# cyst{i} skipped: region too small on this grid"));
                continue;
            }
            match cnr(&values, &inner, &outer) {
                Ok(v) => lines.push(format!("cnr cyst{i} {v:.3} dB")),
                Err(e) => lines.push(format!("# cnr cyst{i} failed: {e}")),
            }
            match gcnr(&values, &inner, &outer, bins) {
                Ok(v) => lines.push(format!("gcnr cyst{i} {v:.4} -")),
                Err(e) => lines.push(format!("# gcnr cyst{i} failed: {e}")),
            }
            for (acc, mask) in [(&mut all_inner, &inner), (&mut all_outer, &outer)] {
                for (a, b) in acc.membership.iter_mut().zip(&mask.membership) {
                    *a = *a || *b;
                }
            }
        }
        if all_inner.count() >= 16 && all_outer.count() >= 16 {
            if let Ok(v) = cnr(&values, &all_inner, &all_outer) {
                lines.push(format!("cnr all {v:.3} dB"));
            }
            if let Ok(v) = gcnr(&values, &all_inner, &all_outer, bins) {
                lines.push(format!("gcnr all {v:.4} -"));
            }
        }
    } else {
        let half_width = cfg.get_f64("metrics.profile_half_width")?;
        let guard = cfg.get_f64("metrics.pral_guard")?;
        let window = cfg.get_f64("metrics.pral_window")?;
        for s in &phantom.scatterers {
            let region = format!("x={:.1}mm,z={:.1}mm", mm(s.x), mm(s.z));
            match target_profile(&bmode, ProfileAxis::Lateral, s.z, s.x, half_width)
                .and_then(|p| fwhm(&p))
            {
                Ok(w) => lines.push(format!("fwhm_lateral {region} {:.4} mm", mm(w))),
                Err(e) => lines.push(format!("# fwhm_lateral {region} failed: {e}")),
            }
            match target_profile(&bmode, ProfileAxis::Axial, s.x, s.z, half_width)
                .and_then(|p| fwhm(&p))
            {
                Ok(w) => lines.push(format!("fwhm_axial {region} {:.4} mm", mm(w))),
                Err(e) => lines.push(format!("# fwhm_axial {region} failed: {e}")),
            }
            if s.x.abs() <= img.grid.dx {
                match extract_profile(&bmode, ProfileAxis::Axial, s.x)
                    .and_then(|p| pral(&p, s.z, guard, window))
                {
                    Ok(v) => lines.push(format!("pral z={:.1}mm {v:.2} dB", mm(s.z))),
                    Err(e) => lines.push(format!("# pral z={:.1}mm failed: {e}", mm(s.z))),
                }
            }
        }
    }
    Ok(lines)
}

fn cmd_evaluate(config: &Path, input: &Path, phantom: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let img = read_iq(input)?;
    let phantom = phantom_from_text(&fs::read_to_string(phantom)?)?;
    let lines = evaluate_image(&cfg, &img, &phantom)?;
    let mut text = String::from("# pwdcl metric report: metric region value unit\n");
    for l in &lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(out, text)?;
    println!("evaluated {} -> {} ({} lines)", input.display(), out.display(), lines.len());
    Ok(())
}

fn cmd_render(config: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let img = read_iq(input)?;
    let dr = cfg.get_f64("metrics.dynamic_range")?;
    let bmode = to_bmode(&img, dr)?;
    let mut comments = vec![format!("pwdcl render, dynamic range {dr} dB")];
    comments.extend(cfg.meta_lines());
    render_pgm(out, &bmode, &comments)?;
    println!("rendered {} -> {}", input.display(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

fn save_iq_and_pgm(
    cfg: &RunConfig,
    out_dir: &Path,
    name: &str,
    img: &IqImage,
) -> Result<()> {
    let mut tagged = img.clone();
    tagged.meta.extend(cfg.meta_lines());
    write_iq(&out_dir.join(format!("{name}.pwiq")), &tagged)?;
    let dr = cfg.get_f64("metrics.dynamic_range")?;
    let bmode = to_bmode(img, dr)?;
    let mut comments = vec![format!("pwdcl pipeline image '{name}'")];
    comments.extend(cfg.meta_lines());
    render_pgm(&out_dir.join(format!("{name}.pgm")), &bmode, &comments)?;
    Ok(())
}

fn cmd_pipeline(config: &Path, out_dir: &Path, with_sp: bool, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    fs::create_dir_all(out_dir)?;
    let rf_dir = out_dir.join("rf");
    fs::create_dir_all(&rf_dir)?;

    println!("[1/6] simulating RF data");
    let sim = simulate_frames(&cfg)?;
    fs::write(out_dir.join("phantom.txt"), phantom_to_text(&sim.phantom))?;
    for (i, frame) in sim.frames.iter().enumerate() {
        write_rf(&rf_dir.join(format!("rf_{i:04}.pwrf")), frame)?;
    }

    println!("[2/6] delay-and-sum beamforming {} transmits", sim.frames.len());
    let bf = cfg.beamform_config()?;
    let grid = cfg.grid(&sim.probe)?;
    let das_frames: Vec<IqImage> = sim
        .frames
        .iter()
        .map(|rf| das_beamform(rf, &grid, &bf))
        .collect::<Result<Vec<_>>>()?;
    let v = cfg.validation_index(&sim.angles)?;
    let k = das_frames.len();

    let das1 = das_frames[v].clone();
    save_iq_and_pgm(&cfg, out_dir, "das_1pw", &das1)?;
    let das_n = compound(&das_frames)?;
    let das_n_name = format!("cpwc_{k}");
    save_iq_and_pgm(&cfg, out_dir, &das_n_name, &das_n)?;

    println!("[3/6] f-DMAS beamforming the held-out transmit");
    let dmas_grid = cfg.dmas_grid(&sim.probe)?;
    let dmas1 = dmas_beamform(&sim.frames[v], &dmas_grid, &bf)?;
    save_iq_and_pgm(&cfg, out_dir, "dmas_1pw", &dmas1)?;

    let mut methods: Vec<(String, &IqImage)> = vec![
        ("das_1pw".to_string(), &das1),
        (das_n_name.clone(), &das_n),
        ("dmas_1pw".to_string(), &dmas1),
    ];

    let dcl1;
    let sp1;
    if k >= 3 {
        let set = PwSet::new(das_frames, v)?;
        write_pwset(&out_dir.join("set.pwsq"), &set, &cfg.meta_lines())?;

        println!("[4/6] coherence training");
        let tcfg = TrainConfig {
            loss_kind: LossKind::Coherence,
            ..cfg.train_config()?
        };
        let (outcome, val0, val1) = run_training(
            &cfg,
            &set,
            &tcfg,
            &out_dir.join("dcl.dclnet"),
            &out_dir.join("train_log.txt"),
        )?;
        println!("      validation loss {val0:.4} -> {val1:.4}");
        let ncfg = cfg.net_config()?;
        dcl1 = infer_tiled(&outcome.normalized.frames[v], &outcome.params, &ncfg)?;
        save_iq_and_pgm(&cfg, out_dir, "dcl_1pw", &dcl1)?;
        methods.push(("dcl_1pw".to_string(), &dcl1));

        if with_sp {
            println!("[5/6] supervised MSE baseline training");
            let sp_cfg = TrainConfig {
                loss_kind: LossKind::Mse,
                ..cfg.train_config()?
            };
            let (outcome_sp, _, _) = run_training(
                &cfg,
                &set,
                &sp_cfg,
                &out_dir.join("sp.dclnet"),
                &out_dir.join("sp_log.txt"),
            )?;
            sp1 = infer_tiled(&outcome_sp.normalized.frames[v], &outcome_sp.params, &ncfg)?;
            save_iq_and_pgm(&cfg, out_dir, "sp_1pw", &sp1)?;
            methods.push(("sp_1pw".to_string(), &sp1));
        } else {
            println!("[5/6] supervised baseline skipped (enable with --with-sp)");
        }
    } else {
        println!("[4/6] training skipped: a plane-wave set needs at least 3 frames (got {k})");
        println!("[5/6] supervised baseline skipped");
    }

    println!("[6/6] quality report");
    let mut report = String::from("# pwdcl comparison report: method metric region value unit\n");
    for (name, img) in &methods {
        let lines = evaluate_image(&cfg, img, &sim.phantom)?;
        for l in &lines {
            if let Some(comment) = l.strip_prefix('#') {
                report.push_str(&format!("#{name}{comment}\n"));
            } else {
                report.push_str(&format!("{name} {l}\n"));
            }
        }
    }
    fs::write(out_dir.join("report.txt"), &report)?;
    print!("{report}");
    println!("pipeline complete -> {}", out_dir.display());
    Ok(())
}

