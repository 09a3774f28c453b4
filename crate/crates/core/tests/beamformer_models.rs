mod common;

use common::*;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wblcmp::beamformer::{batch_solve, initial_loading};
use wblcmp::scenario::SPEED_OF_SOUND;
use wblcmp::{BeamformerConfig, BinBeamformerF32, BinBeamformerF64, ScenarioSpec, StftConfig};

/// Per-bin free-field transfer vectors of a far-field source at `deg` for
/// the preset array, as pure delays relative to the array center.
fn steering(deg: f64, bin: usize, stft: &StftConfig) -> Vec<C64> {
    let spec = ScenarioSpec::paper_switching_target(0);
    let dir = at(deg, 1.0);
    let f = stft.bin_frequency(bin);
    spec.mic_positions
        .iter()
        .map(|m| {
            let delay = -(m[0] * dir[0] + m[1] * dir[1] + m[2] * dir[2]) / SPEED_OF_SOUND;
            C64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * delay)
        })
        .collect()
}

fn normalized(a: &[C64], r: usize) -> Vec<C64> {
    a.iter().map(|v| v / a[r]).collect()
}

/// Speech-like source: complex Gaussian with a slowly varying, sometimes
/// tiny, variance.
fn source(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|t| {
            let env = 0.05 + (0.5 + 0.5 * (t as f64 / 9.0).sin()).powi(3);
            crandn(rng) * env
        })
        .collect()
}

#[test]
fn exact_rtf_without_noise_is_distortionless() {
    let stft = StftConfig::default();
    let mut cfg = BeamformerConfig::paper_defaults(4, (0, 2));
    cfg.filter_len = cfg.delay;
    cfg.betas_db = vec![0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for bin in (1..stft.n_bins() - 1).step_by(16) {
        let a = steering(25.0, bin, &stft);
        let s = source(&mut rng, 400);
        let frames: Vec<Vec<C64>> = s.iter().map(|&v| a.iter().map(|x| x * v).collect()).collect();
        let rtf = normalized(&a, 0);
        let mut state = BinBeamformerF64::new(&cfg, initial_loading(&frames, cfg.p)).unwrap();
        for (t, y) in frames.iter().enumerate() {
            let out = state.online_step(y, Some(&rtf), None).unwrap().outputs;
            if t >= 50 {
                for (k, nu) in [0, 2].into_iter().enumerate() {
                    let want = y[nu];
                    worst = worst.max((out[k] - want).norm() / want.norm());
                }
            }
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst:.2e}");
}

#[test]
fn interferer_is_attenuated_by_its_scaling() {
    // Target and interferer from different directions plus weak sensor
    // noise; the interferer image in each output should carry the
    // configured -20 dB scaling.
    let stft = StftConfig::default();
    let mut cfg = BeamformerConfig::paper_defaults(4, (0, 2));
    cfg.filter_len = cfg.delay;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for bin in [20, 60, 120, 200] {
        let (a, b) = (steering(0.0, bin, &stft), steering(-120.0, bin, &stft));
        let (s, q) = (source(&mut rng, 300), source(&mut rng, 300));
        let frames: Vec<Vec<C64>> = (0..300)
            .map(|t| (0..4).map(|m| a[m] * s[t] + b[m] * q[t] + crandn(&mut rng) * 1e-3).collect())
            .collect();
        let (ra, rb) = (normalized(&a, 0), normalized(&b, 0));
        let mut state = BinBeamformerF64::new(&cfg, initial_loading(&frames, cfg.p)).unwrap();
        for y in &frames {
            state.online_step(y, Some(&ra), Some(&rb)).unwrap();
        }
        for (k, nu) in [0, 2].into_iter().enumerate() {
            let h = &state.filters()[k];
            let gain_b = inner(h, &b) / b[nu];
            let gain_a = inner(h, &a) / a[nu];
            assert!((gain_a - 1.0).norm() < 1e-8, "bin {bin}: target gain {gain_a}");
            assert!((gain_b - 0.1).norm() < 1e-8, "bin {bin}: interferer gain {gain_b}");
        }
    }
}

#[test]
fn irls_objective_decreases_on_sparse_data() {
    let stft = StftConfig::default();
    let mut cfg = BeamformerConfig::paper_defaults(4, (0, 2));
    cfg.gamma = 1.0;
    cfg.n_irls_iters = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for bin in [10, 90, 170] {
        let a = steering(40.0, bin, &stft);
        let s = source(&mut rng, 400);
        let frames: Vec<Vec<C64>> = s
            .iter()
            .map(|&v| a.iter().map(|x| x * v + crandn(&mut rng) * (0.05 + rng.gen::<f64>())).collect())
            .collect();
        let out = batch_solve(&frames, &normalized(&a, 0), None, &cfg, initial_loading(&frames, cfg.p)).unwrap();
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-3), "bin {bin}: {:?}", out.objective);
        }
        for w in out.joint_objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "bin {bin}: joint {:?}", out.joint_objective);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let stft = StftConfig::default();
    let cfg = BeamformerConfig::paper_defaults(4, (0, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bin = 77;
    let (a, b) = (steering(10.0, bin, &stft), steering(-100.0, bin, &stft));
    let frames: Vec<Vec<C64>> = (0..300)
        .map(|_| {
            let (s, q) = (crandn(&mut rng), crandn(&mut rng));
            (0..4).map(|m| a[m] * s + b[m] * q + crandn(&mut rng) * 0.3).collect()
        })
        .collect();
    let (ra, rb) = (normalized(&a, 0), normalized(&b, 0));
    let delta = initial_loading(&frames, cfg.p);
    let mut st64 = BinBeamformerF64::new(&cfg, delta).unwrap();
    let mut st32 = BinBeamformerF32::new(&cfg, delta).unwrap();
    let to32 = |v: &[C64]| v.iter().map(|z| num_complex::Complex32::new(z.re as f32, z.im as f32)).collect::<Vec<_>>();
    let (ra32, rb32) = (to32(&ra), to32(&rb));
    let (mut num, mut den) = (0.0, 0.0);
    for y in &frames {
        let o64 = st64.online_step(y, Some(&ra), Some(&rb)).unwrap().outputs;
        let o32 = st32.online_step(&to32(y), Some(&ra32), Some(&rb32)).unwrap().outputs;
        for k in 0..2 {
            num += (o64[k] - C64::new(o32[k].re as f64, o32[k].im as f64)).norm_sqr();
            den += o64[k].norm_sqr();
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel < 1e-2, "f32 vs f64 output difference {rel:.2e}");
}
