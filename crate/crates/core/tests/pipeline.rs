mod common;

use std::sync::OnceLock;

use common::*;
use wblcmp::pipeline::{run_sweep, sweep_csv, PipelineError, SWEEP_CSV_HEADER};
use wblcmp::scenario::FrameLabel;
use wblcmp::*;

fn scene() -> &'static ScenarioBundle {
    static B: OnceLock<ScenarioBundle> = OnceLock::new();
    B.get_or_init(|| build_scenario(&short_scene(6.0, 11)).unwrap())
}

fn config() -> EnhanceConfig {
    EnhanceConfig::paper_defaults(scene().spec.n_mics(), scene().spec.ref_mics)
}

#[test]
fn adaptive_run_is_aligned_finite_and_constrained() {
    let b = scene();
    let (enh, report) = run_scenario(b, &config()).unwrap();
    for ch in &enh.outputs {
        assert_eq!(ch.len(), b.n_samples());
        assert!(ch.iter().all(|v| v.is_finite()));
    }
    assert_eq!(enh.trace.len(), b.labels.len());
    assert!(enh.max_violation() < 1e-8);
    assert!(enh.trace.iter().filter(|f| matches!(f.label, FrameLabel::Target(_))).all(|f| f.n_constraints == 2));
    assert!(enh.mean_herm_angle().is_some());
    assert!(report.delta_fwssnr.is_finite() && report.delta_srr.is_finite());
    assert!(enh.batch_objective.is_empty());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let b = scene();
    let cfg = config();
    let first = enhance(&b.mixture, &b.labels, &cfg, None).unwrap();
    let second = enhance(&b.mixture, &b.labels, &cfg, None).unwrap();
    for (x, y) in first.outputs.iter().flatten().zip(second.outputs.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn non_adaptive_run_reports_irls_objective() {
    let b = scene();
    let mut cfg = config();
    cfg.mode = Mode::NonAdaptive;
    cfg.beamformer.n_irls_iters = 2;
    let enh = enhance(&b.mixture, &b.labels, &cfg, None).unwrap();
    assert_eq!(enh.batch_objective.len(), 2);
    assert!(enh.batch_objective[1] <= enh.batch_objective[0] * 1.001);
    assert!(enh.max_violation() < 1e-8);
}

// Single precision holds up for short stacks; the recursive inverse of the
// full 56-dimensional STCM loses definiteness in f32 at low frequencies.
#[test]
fn single_precision_pipeline_matches_double() {
    let b = scene();
    let mut cfg = config();
    cfg.beamformer.filter_len = 6;
    let mix32: Vec<Vec<f32>> = b.mixture.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
    let e32 = enhance(&mix32, &b.labels, &cfg, None).unwrap();
    let e64 = enhance(&b.mixture, &b.labels, &cfg, None).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, c) in e64.outputs.iter().flatten().zip(e32.outputs.iter().flatten()) {
        num += (a - *c as f64).powi(2);
        den += a * a;
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.05, "f32 output differs by {rel:.3e}");
}

#[test]
fn input_errors_are_reported() {
    let b = scene();
    let cfg = config();
    let err = enhance(&b.mixture[..3], &b.labels, &cfg, None).unwrap_err();
    assert_eq!(err, PipelineError::ChannelMismatch { expected: 4, got: 3 });
    let err = enhance(&b.mixture, &b.labels[1..], &cfg, None).unwrap_err();
    assert!(matches!(err, PipelineError::LabelMismatch { .. }));
    let mut bad = cfg.clone();
    bad.beamformer.p = 3.0;
    assert!(matches!(enhance(&b.mixture, &b.labels, &bad, None), Err(PipelineError::ConfigInvalid(_))));
    let mut bad = cfg;
    bad.rtf.gamma_cov = Some(1.5);
    assert!(matches!(enhance(&b.mixture, &b.labels, &bad, None), Err(PipelineError::ConfigInvalid(_))));
}

#[test]
fn sweep_rows_and_csv() {
    let b = scene();
    let (rows, failures) = run_sweep(b, &config(), &[0.3], &[0.5], true).unwrap();
    assert!(failures.is_empty());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].mode, Mode::Adaptive);
    assert_eq!(rows[1].mode, Mode::NonAdaptive);
    assert!(rows[1].t_gamma.is_infinite());
    assert!(rows.iter().all(|r| r.runtime.is_some()));
    let csv = sweep_csv(&rows);
    let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], SWEEP_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(run_sweep(b, &config(), &[], &[0.5], false).is_err());
    assert!(run_sweep(b, &config(), &[-1.0], &[0.5], false).is_err());
}
