use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use wblcmp::linalg::CVec;
use wblcmp::metrics::{align_to, evaluate};
use wblcmp::pipeline::{report_csv, run_sweep, sweep_csv, trace_csv};
use wblcmp::scenario::build_scenario_with_clips;
use wblcmp::{enhance, ScenarioBundle};

use crate::config::RunConfig;
use crate::io::{check_rate, config_echo, load_clips, read_wav, write_wav, Sidecar, MIXTURE_WAV, REFERENCE_WAV, SIDECAR};

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn write_echo(cfg: &RunConfig, command: &str, scenario: Option<&wblcmp::ScenarioSpec>) -> Result<()> {
    let path = cfg.out.join(config_echo(command));
    fs::write(&path, cfg.echo(scenario)?).with_context(|| format!("writing {}", path.display()))
}

fn render(cfg: &RunConfig) -> Result<ScenarioBundle> {
    let spec = cfg.scenario_spec()?;
    let clips = load_clips(&spec)?;
    Ok(build_scenario_with_clips(&spec, &clips)?)
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let bundle = render(cfg)?;
    let dir = out_dir(cfg)?;
    let fs_hz = bundle.spec.sample_rate;
    let mix: Vec<&[f64]> = bundle.mixture.iter().map(Vec::as_slice).collect();
    write_wav(&dir.join(MIXTURE_WAV), &mix, fs_hz)?;
    write_wav(&dir.join(REFERENCE_WAV), &[&bundle.reference_direct[0], &bundle.reference_direct[1]], fs_hz)?;
    Sidecar::from_bundle(&bundle).write(&dir.join(SIDECAR))?;
    write_echo(cfg, "simulate", Some(&bundle.spec))?;
    println!(
        "simulated {:.1} s, {} channels, {} frames -> {}",
        bundle.spec.duration,
        bundle.mixture.len(),
        bundle.labels.len(),
        dir.display()
    );
    Ok(())
}

/// Sidecar next to the mixture unless given explicitly.
fn sidecar_path(mixture: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| mixture.parent().unwrap_or(Path::new(".")).join(SIDECAR))
}

pub fn enhance_file(cfg: &RunConfig, mixture: &Path, sidecar: Option<&PathBuf>) -> Result<()> {
    let enh_cfg = cfg.enhance_config()?;
    let side = Sidecar::read(&sidecar_path(mixture, sidecar))?;
    let (channels, fs_hz) = read_wav(mixture)?;
    check_rate(mixture, fs_hz, enh_cfg.stft.sample_rate)?;
    let oracle = side.oracle();
    let oracle_refs: Vec<&[CVec<f64>]> = oracle.iter().map(Vec::as_slice).collect();
    let out = enhance(&channels, &side.labels, &enh_cfg, Some(&oracle_refs))?;

    let dir = out_dir(cfg)?;
    write_wav(&dir.join("enhanced.wav"), &[&out.outputs[0], &out.outputs[1]], fs_hz)?;
    fs::write(dir.join("trace.csv"), trace_csv(&out.trace))?;
    write_echo(cfg, "enhance", None)?;
    let angle = out.mean_herm_angle().map_or("n/a".to_string(), |a| format!("{a:.3} rad"));
    println!(
        "enhanced {} ({} mode), mean Hermitian angle {angle}, max constraint violation {:.2e} -> {}",
        mixture.display(),
        enh_cfg.mode,
        out.max_violation(),
        dir.display()
    );
    Ok(())
}

pub fn evaluate_file(cfg: &RunConfig, bundle_dir: &Path, enhanced: &Path) -> Result<()> {
    let side = Sidecar::read(&bundle_dir.join(SIDECAR))?;
    let fs_hz = side.spec.sample_rate;
    let (mix, r1) = read_wav(&bundle_dir.join(MIXTURE_WAV))?;
    let (refs, r2) = read_wav(&bundle_dir.join(REFERENCE_WAV))?;
    let (enh, r3) = read_wav(enhanced)?;
    check_rate(&bundle_dir.join(MIXTURE_WAV), r1, fs_hz)?;
    check_rate(&bundle_dir.join(REFERENCE_WAV), r2, fs_hz)?;
    check_rate(enhanced, r3, fs_hz)?;
    ensure!(refs.len() == 2, "{} must have 2 channels, found {}", REFERENCE_WAV, refs.len());
    ensure!(enh.len() == 2, "{} must have 2 channels (left, right), found {}", enhanced.display(), enh.len());
    let (l, r) = side.ref_mics;
    ensure!(l < mix.len() && r < mix.len(), "reference microphones {:?} missing from {MIXTURE_WAV}", side.ref_mics);

    let len = refs[0].len();
    let tol = side.stft.frame_shift;
    let report = evaluate(
        [&refs[0], &refs[1]],
        [align_to(&mix[l], len, 0)?, align_to(&mix[r], len, 0)?],
        [align_to(&enh[0], len, tol)?, align_to(&enh[1], len, tol)?],
        fs_hz,
        side.target_interval,
    )?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("report.csv"), report_csv(&report))?;
    write_echo(cfg, "evaluate", None)?;
    println!(
        "delta FWSSNR {:+.2} dB, delta SRR {:+.2} dB over [{}, {}) s -> {}",
        report.delta_fwssnr,
        report.delta_srr,
        report.interval.start,
        report.interval.end,
        dir.display()
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig, timing: bool) -> Result<()> {
    let base = cfg.enhance_config()?;
    let (ts, ps) = (&cfg.sweep.t_gammas, &cfg.sweep.ps);
    ensure!(!ts.is_empty() && !ps.is_empty(), "sweep.t_gammas and sweep.ps must both be non-empty");
    let bundle = render(cfg)?;
    let (rows, failures) = run_sweep(&bundle, &base, ts, ps, timing)?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    write_echo(cfg, "sweep", Some(&bundle.spec))?;
    for f in &failures {
        eprintln!("cell t_gamma = {} s, p = {}, {} failed: {}", f.t_gamma, f.p, f.mode, f.error);
    }
    println!("{} rows -> {}", rows.len(), dir.join("sweep.csv").display());
    if !failures.is_empty() {
        bail!("{} of {} sweep cells failed", failures.len(), failures.len() + rows.len());
    }
    Ok(())
}
