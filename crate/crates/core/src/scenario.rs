//! Synthetic acoustic scenes: switching-position target, fixed interferer and
//! quasi-diffuse background noise, rendered through stochastic room impulse
//! responses.
//!
//! Coordinates are meters relative to the array center. Every random draw
//! comes from a ChaCha stream derived from the scenario seed, so identical
//! specs produce bit-identical bundles.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{principal_eigvec, CMat, CVec, LinalgError};
use crate::stft::StftConfig;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Direct path plus early reflections: the first 50 ms of each RIR.
pub const EARLY_PART_SECONDS: f64 = 0.05;
pub const MIN_NOISE_SOURCES: usize = 16;

const SINC_HALF_WIDTH: isize = 32;
const EARLY_REFLECTIONS: usize = 12;
/// Plane waves composing the late reverberant field.
const DIFFUSE_WAVES: usize = 48;
/// Samples discarded at each end of the circular diffuse field.
const DIFFUSE_GUARD: usize = 64;
/// 60 dB of energy decay expressed as `ln(10^6)`.
const DECAY_60DB: f64 = 13.815_510_557_964_274;
const COVARIANCE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    SpecInvalid(String),
    #[error("degenerate oracle covariance in bin {bin}")]
    DegenerateCovariance { bin: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub const fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn samples(&self, sample_rate: f64) -> (usize, usize) {
        ((self.start * sample_rate).round() as usize, (self.end * sample_rate).round() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceRole {
    Target,
    Interferer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalDescriptor {
    /// Seeded harmonic/noise syllable sequence with speech-like sparsity.
    SyntheticSpeech { pitch_hz: f64 },
    /// A user-supplied mono clip, looked up by path in the clip table passed
    /// to [`build_scenario_with_clips`].
    Clip { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub role: SourceRole,
    pub position: [f64; 3],
    pub activity: Interval,
    pub signal: SignalDescriptor,
}

/// Missing fields in serialized specs take their values from the paper
/// preset with seed 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub duration: f64,
    pub sample_rate: f64,
    pub mic_positions: Vec<[f64; 3]>,
    /// Left and right reference microphones.
    pub ref_mics: (usize, usize),
    pub sources: Vec<SourceSpec>,
    pub t60: f64,
    pub room_volume: f64,
    /// Broadband SNR at the left reference microphone; `inf` disables noise.
    pub snr_db: f64,
    /// Broadband SIR at the left reference microphone; `inf` disables the interferer.
    pub sir_db: f64,
    pub noise_only: Interval,
    pub noise_plus_interferer: Interval,
    pub n_noise_sources: usize,
    pub noise_radius: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::paper_switching_target(1)
    }
}

impl ScenarioSpec {
    pub const PAPER_PRESET: &'static str = "paper-switching-target";

    /// Two behind-the-ear devices with two microphones each, a target that
    /// jumps from 0 deg to 90 deg at 20.4 s, an interferer at -120 deg and
    /// constant diffuse noise; 0 dB SNR and SIR, T60 = 0.5 s.
    pub fn paper_switching_target(seed: u64) -> Self {
        let at = |deg: f64, r: f64| {
            let a = deg.to_radians();
            [r * a.sin(), r * a.cos(), 0.0]
        };
        Self {
            duration: 39.0,
            sample_rate: 16_000.0,
            mic_positions: vec![
                [-0.0875, 0.0075, 0.0],
                [-0.0875, -0.0075, 0.0],
                [0.0875, 0.0075, 0.0],
                [0.0875, -0.0075, 0.0],
            ],
            ref_mics: (0, 2),
            sources: vec![
                SourceSpec {
                    role: SourceRole::Target,
                    position: at(0.0, 2.0),
                    activity: Interval::new(2.0, 20.4),
                    signal: SignalDescriptor::SyntheticSpeech { pitch_hz: 115.0 },
                },
                SourceSpec {
                    role: SourceRole::Target,
                    position: at(90.0, 2.0),
                    activity: Interval::new(20.4, 39.0),
                    signal: SignalDescriptor::SyntheticSpeech { pitch_hz: 205.0 },
                },
                SourceSpec {
                    role: SourceRole::Interferer,
                    position: at(-120.0, 2.0),
                    activity: Interval::new(1.0, 39.0),
                    signal: SignalDescriptor::SyntheticSpeech { pitch_hz: 130.0 },
                },
            ],
            t60: 0.5,
            room_volume: 7.0 * 6.0 * 2.7,
            snr_db: 0.0,
            sir_db: 0.0,
            noise_only: Interval::new(0.0, 1.0),
            noise_plus_interferer: Interval::new(1.0, 2.0),
            n_noise_sources: MIN_NOISE_SOURCES,
            noise_radius: 2.5,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        (name == Self::PAPER_PRESET).then(|| Self::paper_switching_target(seed))
    }

    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn acoustics(&self) -> RoomAcoustics {
        RoomAcoustics { t60: self.t60, room_volume: self.room_volume }
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.sources.iter().enumerate().filter(|(_, s)| s.role == SourceRole::Target).map(|(i, _)| i).collect()
    }

    pub fn interferer_indices(&self) -> Vec<usize> {
        self.sources.iter().enumerate().filter(|(_, s)| s.role == SourceRole::Interferer).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ScenarioError::SpecInvalid(msg));
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate));
        }
        if self.n_mics() < 2 {
            return bad(format!("at least two microphones required, got {}", self.n_mics()));
        }
        let (l, r) = self.ref_mics;
        if l >= self.n_mics() || r >= self.n_mics() {
            return bad(format!("reference microphones {:?} out of range", self.ref_mics));
        }
        if !(self.t60 > 0.0) || !(self.room_volume > 0.0) {
            return bad("t60 and room volume must be positive".into());
        }
        if self.snr_db.is_nan() || self.sir_db.is_nan() {
            return bad("SNR/SIR must not be NaN".into());
        }
        if self.n_noise_sources < MIN_NOISE_SOURCES && self.snr_db.is_finite() {
            return bad(format!("at least {MIN_NOISE_SOURCES} noise sources required"));
        }
        for iv in [self.noise_only, self.noise_plus_interferer] {
            if !(iv.start >= 0.0 && iv.start <= iv.end && iv.end <= self.duration) {
                return bad(format!("interval [{}, {}) outside the scenario", iv.start, iv.end));
            }
        }
        if self.noise_only.end > self.noise_plus_interferer.start {
            return bad("noise-only interval must precede the noise-plus-interferer interval".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            let a = s.activity;
            if !(a.start >= 0.0 && a.start < a.end && a.end <= self.duration + 1e-9) {
                return bad(format!("source {i} activity [{}, {}) outside the scenario", a.start, a.end));
            }
            let d = norm3(s.position);
            if !(d > 0.0) {
                return bad(format!("source {i} sits at the array center"));
            }
            if a.start < self.noise_only.end {
                return bad(format!("source {i} is active during the noise-only interval"));
            }
            if s.role == SourceRole::Target && a.start < self.noise_plus_interferer.end {
                return bad(format!("target {i} is active during the noise-plus-interferer interval"));
            }
        }
        let mut targets: Vec<Interval> =
            self.target_indices().into_iter().map(|i| self.sources[i].activity).collect();
        if targets.is_empty() {
            return bad("at least one target source required".into());
        }
        targets.sort_by(|a, b| a.start.total_cmp(&b.start));
        if targets.windows(2).any(|w| w[1].start < w[0].end) {
            return bad("target activity intervals overlap".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomAcoustics {
    pub t60: f64,
    pub room_volume: f64,
}

impl RoomAcoustics {
    /// Distance at which direct and reverberant energy are equal
    /// (Sabine-based estimate).
    pub fn critical_distance(&self) -> f64 {
        0.057 * (self.room_volume / self.t60).sqrt()
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)))
}

/// Adds a Hann-windowed fractional-delay sinc of the given amplitude.
fn add_sinc(h: &mut [f64], delay: f64, amp: f64, half_width: isize) {
    let center = delay.round() as isize;
    for n in center - half_width..=center + half_width {
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        let x = n as f64 - delay;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let win = 0.5 + 0.5 * (PI * x / (half_width as f64 + 1.0)).cos();
        h[n as usize] += amp * sinc * win;
    }
}

/// Stochastic room impulse response: fractional-delay direct path with `1/d`
/// amplitude, a sparse set of plane-wave early reflections within the first
/// 50 ms, and an exponentially decaying diffuse tail. All randomness depends
/// only on `seed`, so responses of one source are coherent across
/// microphones.
pub fn generate_rir(src: [f64; 3], mic: [f64; 3], room: &RoomAcoustics, sample_rate: f64, seed: u64) -> Vec<f64> {
    let fs = sample_rate;
    let d = dist3(src, mic).max(1e-3);
    let direct = d / SPEED_OF_SOUND * fs;
    let decay_len = (1.5 * room.t60).max(EARLY_PART_SECONDS + 0.01);
    let len = ((d / SPEED_OF_SOUND + decay_len) * fs).ceil() as usize + SINC_HALF_WIDTH as usize + 1;
    let mut h = vec![0.0; len];
    add_sinc(&mut h, direct, 1.0 / d, SINC_HALF_WIDTH);

    // Reverberant energy relative to the direct path follows (d / r_c)^2.
    let rc = room.critical_distance();
    let rev_energy = 1.0 / (rc * rc);
    let amp2 = rev_energy * DECAY_60DB / (fs * room.t60);
    let amp = amp2.sqrt();
    let envelope = |tau: f64| amp * (-0.5 * DECAY_60DB * tau / room.t60).exp();

    let early_end = EARLY_PART_SECONDS * fs;
    let src_origin = norm3(src) / SPEED_OF_SOUND * fs;
    let first_gap = 0.001 * fs;
    let window = early_end - direct - first_gap;
    if window > 0.0 {
        let mut rng = stream(seed, 0xEA21);
        let spacing = window / EARLY_REFLECTIONS as f64;
        for _ in 0..EARLY_REFLECTIONS {
            let excess = first_gap + rng.gen::<f64>() * window;
            let (u, sign) = (random_unit(&mut rng), if rng.gen::<bool>() { 1.0 } else { -1.0 });
            // Plane wave arriving at the array center `excess` samples after the direct sound.
            let proj = (u[0] * mic[0] + u[1] * mic[1] + u[2] * mic[2]) / SPEED_OF_SOUND * fs;
            let arrival = src_origin + excess - proj;
            let tau = (arrival - direct) / fs;
            add_sinc(&mut h, arrival, sign * envelope(tau.max(0.0)) * spacing.sqrt(), 8);
        }
    }

    let tail_start = early_end.max(direct + first_gap).ceil() as usize;
    if tail_start < len {
        let field = diffuse_field(len, mic, fs, seed);
        for (n, v) in h.iter_mut().enumerate().skip(tail_start) {
            let tau = (n as f64 - direct) / fs;
            *v += field[n] * envelope(tau);
        }
    }
    h
}

/// Unit-variance white noise as observed at `mic` when it arrives as a
/// superposition of plane waves from random directions. The waves depend only
/// on `seed`, so nearby microphones see the spatial coherence of a diffuse
/// field rather than independent tails.
fn diffuse_field(len: usize, mic: [f64; 3], fs: f64, seed: u64) -> Vec<f64> {
    let size = (len + 2 * DIFFUSE_GUARD).next_power_of_two();
    let half = size / 2;
    let mut rng = stream(seed, 0x7A11);
    let mut spec = vec![Complex::new(0.0, 0.0); size];
    for _ in 0..DIFFUSE_WAVES {
        let u = random_unit(&mut rng);
        let delay = -(u[0] * mic[0] + u[1] * mic[1] + u[2] * mic[2]) / SPEED_OF_SOUND * fs;
        let step = Complex::from_polar(1.0, -2.0 * PI * delay / size as f64);
        let mut rot = Complex::new(1.0, 0.0);
        for bin in spec.iter_mut().take(half + 1) {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *bin += Complex::new(re, im) * rot;
            rot *= step;
        }
    }
    spec[0].im = 0.0;
    spec[half].im = 0.0;
    for k in 1..half {
        spec[size - k] = spec[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(size).process(&mut spec);
    // Each bin carries DIFFUSE_WAVES unit complex draws of variance 2.
    let scale = 1.0 / (2.0 * DIFFUSE_WAVES as f64 * size as f64).sqrt();
    spec.iter().skip(DIFFUSE_GUARD).take(len).map(|z| z.re * scale).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Reverberation time from the Schroeder backward-integrated energy decay,
/// fitted by least squares between -5 dB and -35 dB and extrapolated to 60 dB.
pub fn schroeder_t60(rir: &[f64], sample_rate: f64) -> f64 {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for (i, &x) in rir.iter().enumerate().rev() {
        acc += x * x;
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return 0.0;
    }
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-35.0..=-5.0).contains(&db) {
            let t = i as f64 / sample_rate;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if n < 2.0 {
        return 0.0;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    -60.0 / slope
}

/// Full linear convolution truncated to `out_len` samples.
pub fn fft_convolve(signal: &[f64], ir: &[f64], out_len: usize) -> Vec<f64> {
    let mut conv = FftConvolver::new(signal, ir.len());
    conv.apply(ir, out_len)
}

/// Convolves one signal with several impulse responses, reusing its spectrum.
struct FftConvolver {
    size: usize,
    onset: usize,
    spectrum: Vec<Complex<f64>>,
    planner: FftPlanner<f64>,
}

impl FftConvolver {
    fn new(signal: &[f64], max_ir_len: usize) -> Self {
        let size = (signal.len() + max_ir_len).max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let mut spectrum: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
        spectrum.resize(size, Complex::new(0.0, 0.0));
        planner.plan_fft_forward(size).process(&mut spectrum);
        let onset = signal.iter().position(|&x| x != 0.0).unwrap_or(signal.len());
        Self { size, onset, spectrum, planner }
    }

    fn apply(&mut self, ir: &[f64], out_len: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = ir.iter().map(|&x| Complex::new(x, 0.0)).collect();
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.planner.plan_fft_forward(self.size).process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.planner.plan_fft_inverse(self.size).process(&mut buf);
        let scale = 1.0 / self.size as f64;
        let ir_onset = ir.iter().position(|&x| x != 0.0).unwrap_or(ir.len());
        // Exact zeros before the first possible output sample, not FFT round-off.
        let first = self.onset.saturating_add(ir_onset);
        buf.iter().take(out_len).enumerate().map(|(i, z)| if i < first { 0.0 } else { z.re * scale }).collect()
    }
}

/// Per-bin oracle RTF: principal eigenvector of the expected STFT-domain
/// covariance of white noise filtered by the early RIRs, normalized so the
/// reference entry equals one. The expectation is evaluated in closed form
/// (sum over all frame alignments of the windowed early responses), which is
/// the infinite-length limit of averaging over a white-noise realization.
pub fn oracle_rtf(early_rirs: &[Vec<f64>], cfg: &StftConfig, ref_mic: usize) -> Result<Vec<CVec<f64>>> {
    let m = early_rirs.len();
    let n = cfg.frame_len;
    let n_bins = cfg.n_bins();
    let h_len = early_rirs.iter().map(Vec::len).max().unwrap_or(0);
    let window: Vec<f64> = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut covs = vec![CMat::<f64>::zeros(m, m); n_bins];
    let mut g = vec![vec![Complex::new(0.0, 0.0); n]; m];

    // Frame sample i sees filter tap (i - shift) of the input impulse at `shift`.
    for shift in -(h_len as isize - 1)..n as isize {
        let mut any = false;
        for (mic, h) in early_rirs.iter().enumerate() {
            for (i, gi) in g[mic].iter_mut().enumerate() {
                let tap = i as isize - shift;
                let v = if tap >= 0 && (tap as usize) < h.len() { h[tap as usize] } else { 0.0 };
                any |= v != 0.0;
                *gi = Complex::new(window[i] * v, 0.0);
            }
            fft.process(&mut g[mic]);
        }
        if !any {
            continue;
        }
        for (k, cov) in covs.iter_mut().enumerate() {
            for a in 0..m {
                for b in 0..m {
                    cov[(a, b)] += g[a][k] * g[b][k].conj();
                }
            }
        }
    }

    covs.into_iter()
        .enumerate()
        .map(|(bin, mut cov)| {
            cov.hermitianize();
            if cov.trace().re <= COVARIANCE_FLOOR {
                return Err(ScenarioError::DegenerateCovariance { bin });
            }
            let v = principal_eigvec(&cov)?;
            let r = v[ref_mic];
            if r.norm() <= 1e-12 * v.norm() {
                return Err(ScenarioError::DegenerateCovariance { bin });
            }
            let mut rtf = v.scaled(r.inv());
            rtf[ref_mic] = Complex::new(1.0, 0.0);
            Ok(rtf)
        })
        .collect()
}

/// Seeded speech-like excitation: voiced syllables built from a jittered
/// harmonic series shaped by random formants, unvoiced noise bursts and
/// pauses. Starts with a voiced syllable at sample 0. Unit RMS.
pub fn synthetic_speech(n_samples: usize, sample_rate: f64, pitch_hz: f64, seed: u64) -> Vec<f64> {
    let fs = sample_rate;
    let mut rng = stream(seed, 0x5EEC);
    let mut out = vec![0.0; n_samples];
    let max_freq = 0.45 * fs;
    let mut pos = 0usize;
    let mut first = true;
    while pos < n_samples {
        let syl = (rng.gen_range(0.12..0.35) * fs) as usize;
        let end = (pos + syl).min(n_samples);
        let gain = rng.gen_range(0.5..1.0);
        let ramp = (0.015 * fs) as usize;
        let voiced = first || rng.gen::<f64>() < 0.8;
        first = false;
        let env = |i: usize| -> f64 {
            let k = i - pos;
            let rem = end - i;
            let up = if k < ramp { 0.5 - 0.5 * (PI * (k as f64 + 1.0) / ramp as f64).cos() } else { 1.0 };
            let down = if rem < ramp { 0.5 - 0.5 * (PI * rem as f64 / ramp as f64).cos() } else { 1.0 };
            gain * up * down
        };
        if voiced {
            let formants = [
                (rng.gen_range(300.0..850.0), 90.0),
                (rng.gen_range(900.0..2400.0), 130.0),
                (rng.gen_range(2400.0..3300.0), 180.0),
            ];
            let f0 = pitch_hz * rng.gen_range(0.85..1.15);
            let glide = rng.gen_range(-0.2..0.2);
            let n_harm = (max_freq / (f0 * 1.25)).floor().max(1.0) as usize;
            let amps: Vec<f64> = (1..=n_harm)
                .map(|k| {
                    let f = k as f64 * f0;
                    let shape: f64 =
                        formants.iter().map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2))).sum();
                    (shape + 0.15) / (k as f64).sqrt()
                })
                .collect();
            let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let mut phase0 = 0.0;
            for i in pos..end {
                let frac = (i - pos) as f64 / syl.max(1) as f64;
                let f_inst = f0 * (1.0 + glide * frac);
                phase0 += 2.0 * PI * f_inst / fs;
                let mut s = 0.0;
                for (k, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
                    s += a * ((k + 1) as f64 * phase0 + p).sin();
                }
                let breath: f64 = StandardNormal.sample(&mut rng);
                out[i] = env(i) * (s + 0.02 * breath);
            }
        } else {
            let mut prev = 0.0;
            for i in pos..end {
                let g: f64 = StandardNormal.sample(&mut rng);
                // First difference tilts the burst toward high frequencies.
                out[i] = env(i) * 0.4 * (g - 0.7 * prev);
                prev = g;
            }
        }
        pos = end;
        let pause = if rng.gen::<f64>() < 0.15 { rng.gen_range(0.25..0.4) } else { rng.gen_range(0.03..0.2) };
        pos += (pause * fs) as usize;
    }
    normalize_rms(&mut out);
    out
}

/// Stationary low-pass-tilted Gaussian noise, unit RMS.
pub fn babble_like_noise(n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, 0xB0B0);
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..n_samples)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            y = 0.7 * y + g;
            y
        })
        .collect();
    normalize_rms(&mut out);
    out
}

fn normalize_rms(x: &mut [f64]) {
    let e: f64 = x.iter().map(|v| v * v).sum();
    if e > 0.0 {
        let s = (x.len() as f64 / e).sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Per-frame oracle activity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    NoiseOnly,
    NoisePlusInterferer,
    /// Index into the scenario's target sources in declaration order.
    Target(usize),
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoiseOnly => f.write_str("noise-only"),
            Self::NoisePlusInterferer => f.write_str("noise+interferer"),
            Self::Target(k) => write!(f, "target-{}", k + 1),
        }
    }
}

impl std::str::FromStr for FrameLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "noise-only" => Ok(Self::NoiseOnly),
            "noise+interferer" => Ok(Self::NoisePlusInterferer),
            _ => s
                .strip_prefix("target-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(|k| Self::Target(k - 1))
                .ok_or_else(|| format!("unknown frame label `{s}`")),
        }
    }
}

impl Serialize for FrameLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FrameLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Labels every STFT frame from the source activity schedule. A frame is
/// noise-only when it ends before any source starts, target-active when its
/// center lies in a target's activity interval, and noise-plus-interferer
/// otherwise.
pub fn frame_labels(spec: &ScenarioSpec, cfg: &StftConfig, n_frames: usize) -> Vec<FrameLabel> {
    let fs = spec.sample_rate;
    let earliest = spec.sources.iter().map(|s| s.activity.start).fold(f64::INFINITY, f64::min);
    let targets = spec.target_indices();
    (0..n_frames)
        .map(|t| {
            let center = cfg.frame_center(t) as f64 / fs;
            let end = (cfg.frame_center(t) + cfg.frame_shift) as f64 / fs;
            if end <= earliest {
                return FrameLabel::NoiseOnly;
            }
            targets
                .iter()
                .position(|&j| spec.sources[j].activity.contains(center))
                .map_or(FrameLabel::NoisePlusInterferer, FrameLabel::Target)
        })
        .collect()
}

/// One additive component of the mixture, as received at every microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: String,
    pub source: Option<usize>,
    pub channels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub spec: ScenarioSpec,
    pub stft: StftConfig,
    pub mixture: Vec<Vec<f64>>,
    /// Source images in declaration order, followed by the diffuse noise.
    pub components: Vec<Component>,
    /// Direct-plus-early target component at the left and right reference mics.
    pub reference_direct: [Vec<f64>; 2],
    /// Per-source, per-bin RTF vectors normalized to the left reference mic.
    pub oracle_rtfs: Vec<Vec<CVec<f64>>>,
    pub labels: Vec<FrameLabel>,
    /// `rirs[source][mic]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    /// Linear gains applied to each source signal and to the noise.
    pub source_gains: Vec<f64>,
    pub noise_gain: f64,
}

impl ScenarioBundle {
    pub fn n_samples(&self) -> usize {
        self.mixture.first().map_or(0, Vec::len)
    }

    /// Oracle RTFs of the `k`-th target source.
    pub fn target_rtfs(&self, k: usize) -> Option<&[CVec<f64>]> {
        self.spec.target_indices().get(k).map(|&j| self.oracle_rtfs[j].as_slice())
    }

    /// Interval over which targets are active (first onset to last offset).
    pub fn target_interval(&self) -> Interval {
        let ts = self.spec.target_indices();
        let start = ts.iter().map(|&j| self.spec.sources[j].activity.start).fold(f64::INFINITY, f64::min);
        let end = ts.iter().map(|&j| self.spec.sources[j].activity.end).fold(f64::NEG_INFINITY, f64::max);
        Interval::new(start, end)
    }
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<ScenarioBundle> {
    build_scenario_with_clips(spec, &HashMap::new())
}

/// Renders the scenario. `clips` maps [`SignalDescriptor::Clip`] paths to
/// mono samples at the scenario sample rate.
pub fn build_scenario_with_clips(spec: &ScenarioSpec, clips: &HashMap<String, Vec<f64>>) -> Result<ScenarioBundle> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let len = spec.n_samples();
    let n_mics = spec.n_mics();
    let room = spec.acoustics();
    let (ref_l, ref_r) = spec.ref_mics;
    let early_len = (EARLY_PART_SECONDS * fs).round() as usize;
    let stft = StftConfig::from_durations(32.0, fs);
    stft.validate().map_err(|e| ScenarioError::SpecInvalid(e.to_string()))?;

    // Dry source signals, zero outside their activity.
    let mut dry = Vec::with_capacity(spec.sources.len());
    for (j, src) in spec.sources.iter().enumerate() {
        let (a, b) = src.activity.samples(fs);
        let b = b.min(len);
        let active = b.saturating_sub(a);
        let body = match &src.signal {
            SignalDescriptor::SyntheticSpeech { pitch_hz } => {
                synthetic_speech(active, fs, *pitch_hz, splitmix(spec.seed ^ (j as u64 + 1)))
            }
            SignalDescriptor::Clip { path } => {
                let clip = clips
                    .get(path)
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| ScenarioError::SpecInvalid(format!("clip `{path}` not loaded")))?;
                let mut s: Vec<f64> = clip.iter().copied().cycle().take(active).collect();
                normalize_rms(&mut s);
                s
            }
        };
        let mut s = vec![0.0; len];
        s[a..b].copy_from_slice(&body);
        dry.push(s);
    }

    // Source images through their RIRs.
    let mut rirs = Vec::with_capacity(spec.sources.len());
    let mut images = Vec::with_capacity(spec.sources.len());
    let mut early_refs = Vec::with_capacity(spec.sources.len());
    for (j, src) in spec.sources.iter().enumerate() {
        let seed = splitmix(spec.seed ^ 0x0A11_0000 ^ j as u64);
        let src_rirs: Vec<Vec<f64>> =
            spec.mic_positions.iter().map(|&mic| generate_rir(src.position, mic, &room, fs, seed)).collect();
        let max_len = src_rirs.iter().map(Vec::len).max().unwrap_or(1);
        let mut conv = FftConvolver::new(&dry[j], max_len);
        let img: Vec<Vec<f64>> = src_rirs.iter().map(|h| conv.apply(h, len)).collect();
        let early: [Vec<f64>; 2] = [ref_l, ref_r].map(|m| {
            let h = &src_rirs[m];
            conv.apply(&h[..early_len.min(h.len())], len)
        });
        rirs.push(src_rirs);
        images.push(img);
        early_refs.push(early);
    }

    // Quasi-diffuse noise from independent point sources around the array.
    let noise_enabled = spec.snr_db.is_finite() || spec.snr_db < 0.0;
    let mut noise = vec![vec![0.0; len]; n_mics];
    if noise_enabled {
        for k in 0..spec.n_noise_sources {
            let az = 2.0 * PI * (k as f64 + 0.5) / spec.n_noise_sources as f64;
            let z = if k % 2 == 0 { 0.4 } else { -0.4 };
            let pos = [spec.noise_radius * az.sin(), spec.noise_radius * az.cos(), z];
            let seed = splitmix(spec.seed ^ 0x0B0B_0000 ^ k as u64);
            let sig = babble_like_noise(len, seed);
            let hs: Vec<Vec<f64>> =
                spec.mic_positions.iter().map(|&mic| generate_rir(pos, mic, &room, fs, seed)).collect();
            let max_len = hs.iter().map(Vec::len).max().unwrap_or(1);
            let mut conv = FftConvolver::new(&sig, max_len);
            for (m, h) in hs.iter().enumerate() {
                let y = conv.apply(h, len);
                for (acc, v) in noise[m].iter_mut().zip(y) {
                    *acc += v;
                }
            }
        }
    }

    // Level calibration at the left reference microphone.
    let targets = spec.target_indices();
    let interferers = spec.interferer_indices();
    let mut gains = vec![1.0; spec.sources.len()];
    let noise_gain = if noise_enabled { 1.0 } else { 0.0 };
    if noise_enabled {
        for &j in &targets {
            let (a, b) = spec.sources[j].activity.samples(fs);
            let b = b.min(len);
            let es = energy(&images[j][ref_l][a..b]);
            let en = energy(&noise[ref_l][a..b]);
            if es > 0.0 && en > 0.0 {
                gains[j] = (en / es * 10f64.powf(spec.snr_db / 10.0)).sqrt();
            }
        }
    }
    let target_mask: Vec<bool> = {
        let mut mask = vec![false; len];
        for &j in &targets {
            let (a, b) = spec.sources[j].activity.samples(fs);
            mask[a..b.min(len)].iter_mut().for_each(|v| *v = true);
        }
        mask
    };
    let masked_energy = |x: &[f64]| -> f64 { x.iter().zip(&target_mask).filter(|(_, &m)| m).map(|(v, _)| v * v).sum() };
    let target_energy: f64 = {
        let mut sum = vec![0.0; len];
        for &j in &targets {
            for (s, v) in sum.iter_mut().zip(&images[j][ref_l]) {
                *s += gains[j] * v;
            }
        }
        masked_energy(&sum)
    };
    if !interferers.is_empty() {
        let mut isum = vec![0.0; len];
        for &j in &interferers {
            for (s, v) in isum.iter_mut().zip(&images[j][ref_l]) {
                *s += v;
            }
        }
        let ei = masked_energy(&isum);
        let g = if spec.sir_db.is_finite() && ei > 0.0 {
            (target_energy / ei * 10f64.powf(-spec.sir_db / 10.0)).sqrt()
        } else if spec.sir_db == f64::INFINITY {
            0.0
        } else {
            1.0
        };
        for &j in &interferers {
            gains[j] = g;
        }
    }

    // Global level: reference-mic mixture RMS of 0.05 over target activity.
    let mut ref_mix = vec![0.0; len];
    for (j, img) in images.iter().enumerate() {
        for (s, v) in ref_mix.iter_mut().zip(&img[ref_l]) {
            *s += gains[j] * v;
        }
    }
    for (s, v) in ref_mix.iter_mut().zip(&noise[ref_l]) {
        *s += noise_gain * v;
    }
    let active = target_mask.iter().filter(|&&m| m).count().max(1) as f64;
    let rms = (masked_energy(&ref_mix) / active).sqrt();
    let global = if rms > 0.0 { 0.05 / rms } else { 1.0 };
    gains.iter_mut().for_each(|g| *g *= global);
    let noise_gain = noise_gain * global;

    let mut components = Vec::with_capacity(spec.sources.len() + 1);
    for (j, img) in images.into_iter().enumerate() {
        let g = gains[j];
        let name = match spec.sources[j].role {
            SourceRole::Target => format!("target-{}", targets.iter().position(|&t| t == j).unwrap_or(0) + 1),
            SourceRole::Interferer => format!("interferer-{}", interferers.iter().position(|&t| t == j).unwrap_or(0) + 1),
        };
        components.push(Component {
            name,
            source: Some(j),
            channels: img.into_iter().map(|ch| ch.into_iter().map(|v| v * g).collect()).collect(),
        });
    }
    components.push(Component {
        name: "noise".into(),
        source: None,
        channels: noise.into_iter().map(|ch| ch.into_iter().map(|v| v * noise_gain).collect()).collect(),
    });

    let mut mixture = vec![vec![0.0; len]; n_mics];
    for comp in &components {
        for (mix, ch) in mixture.iter_mut().zip(&comp.channels) {
            for (acc, v) in mix.iter_mut().zip(ch) {
                *acc += v;
            }
        }
    }

    let mut reference_direct = [vec![0.0; len], vec![0.0; len]];
    for &j in &targets {
        for (side, refsig) in reference_direct.iter_mut().enumerate() {
            for (acc, v) in refsig.iter_mut().zip(&early_refs[j][side]) {
                *acc += gains[j] * v;
            }
        }
    }

    let oracle_rtfs = rirs
        .iter()
        .map(|src_rirs| {
            let early: Vec<Vec<f64>> = src_rirs.iter().map(|h| h[..early_len.min(h.len())].to_vec()).collect();
            oracle_rtf(&early, &stft, ref_l)
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = frame_labels(spec, &stft, stft.n_frames(len));

    Ok(ScenarioBundle {
        spec: spec.clone(),
        stft,
        mixture,
        components,
        reference_direct,
        oracle_rtfs,
        labels,
        rirs,
        source_gains: gains,
        noise_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> ScenarioSpec {
        let mut spec = ScenarioSpec::paper_switching_target(seed);
        spec.duration = 6.0;
        spec.sources[0].activity = Interval::new(2.0, 4.0);
        spec.sources[1].activity = Interval::new(4.0, 6.0);
        spec.sources[2].activity = Interval::new(1.0, 6.0);
        spec
    }

    fn direct_peak(h: &[f64]) -> usize {
        h.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0
    }

    #[test]
    fn near_anechoic_rir_has_negligible_tail() {
        let room = RoomAcoustics { t60: 0.001, room_volume: 113.4 };
        let h = generate_rir([0.0, 2.0, 0.0], [0.0; 3], &room, 16_000.0, 1);
        let peak = direct_peak(&h);
        let split = peak + SINC_HALF_WIDTH as usize + 1;
        let direct: f64 = energy(&h[..split]);
        let tail: f64 = energy(&h[split..]);
        assert!(tail < 0.01 * direct, "tail/direct = {}", tail / direct);
    }

    #[test]
    fn equidistant_mics_share_direct_delay() {
        let room = RoomAcoustics { t60: 0.4, room_volume: 100.0 };
        let src = [0.0, 2.0, 0.0];
        let a = generate_rir(src, [-0.1, 0.0, 0.0], &room, 16_000.0, 3);
        let b = generate_rir(src, [0.1, 0.0, 0.0], &room, 16_000.0, 3);
        assert_eq!(direct_peak(&a), direct_peak(&b));
        let n = direct_peak(&a);
        assert_eq!(a[n], b[n]);
    }

    #[test]
    fn schroeder_fit_matches_requested_t60() {
        for (t60, seed) in [(0.2, 1), (0.5, 2), (0.5, 9), (0.8, 3), (1.0, 4)] {
            let room = RoomAcoustics { t60, room_volume: 113.4 };
            let h = generate_rir([1.0, 1.7, 0.2], [0.05, 0.0, 0.0], &room, 16_000.0, seed);
            let est = schroeder_t60(&h, 16_000.0);
            assert!((est - t60).abs() <= 0.15 * t60, "t60 {t60}: estimated {est}");
        }
    }

    #[test]
    fn schroeder_of_pure_exponential() {
        // Deterministic exponential decay: the fit must be exact.
        let fs = 8000.0;
        let h: Vec<f64> = (0..8000).map(|n| (-0.5 * DECAY_60DB * n as f64 / fs / 0.6).exp()).collect();
        assert!((schroeder_t60(&h, fs) - 0.6).abs() < 0.01);
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.5, -0.25, 1.0];
        let got = fft_convolve(&a, &b, 6);
        let mut want = [0.0; 6];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                want[i + j] += x * y;
            }
        }
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rirs_give_unit_rtf() {
        let cfg = StftConfig::default();
        let h: Vec<f64> = (0..400).map(|n| ((n * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let rtfs = oracle_rtf(&[h.clone(), h.clone(), h], &cfg, 1).unwrap();
        for v in &rtfs {
            for z in v.iter() {
                assert!((z - Complex::new(1.0, 0.0)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_delay_rtf_matches_analytic_phase() {
        let cfg = StftConfig::default();
        let fs = cfg.sample_rate;
        let delta = 0.37e-3;
        let mut h0 = vec![0.0; 200];
        let mut h1 = vec![0.0; 200];
        add_sinc(&mut h0, 40.0, 1.0, SINC_HALF_WIDTH);
        add_sinc(&mut h1, 40.0 + delta * fs, 1.0, SINC_HALF_WIDTH);
        let rtfs = oracle_rtf(&[h0, h1], &cfg, 0).unwrap();
        for (k, v) in rtfs.iter().enumerate() {
            assert_eq!(v[0], Complex::new(1.0, 0.0));
            let f = cfg.bin_frequency(k);
            if f == 0.0 || f >= 4000.0 {
                continue;
            }
            let analytic = CVec::from_vec(vec![Complex::new(1.0, 0.0), Complex::from_polar(1.0, -2.0 * PI * f * delta)]);
            let cos = (v.dot(&analytic).norm() / (v.norm() * analytic.norm())).min(1.0);
            assert!(cos.acos() < 0.05, "bin {k}: angle {}", cos.acos());
        }
    }

    #[test]
    fn paper_preset_layout() {
        let spec = ScenarioSpec::paper_switching_target(0);
        spec.validate().unwrap();
        assert_eq!(spec.duration, 39.0);
        assert_eq!(spec.n_mics(), 4);
        assert_eq!(spec.sources[0].activity, Interval::new(2.0, 20.4));
        assert_eq!(spec.sources[1].activity, Interval::new(20.4, 39.0));
        assert_eq!(spec.sources[2].activity, Interval::new(1.0, 39.0));
        assert_eq!(spec.noise_only, Interval::new(0.0, 1.0));
        assert!(ScenarioSpec::preset("paper-switching-target", 0).is_some());
        assert!(ScenarioSpec::preset("nope", 0).is_none());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec(1);
        spec.duration = 0.0;
        assert!(matches!(build_scenario(&spec), Err(ScenarioError::SpecInvalid(_))));
        let mut spec = small_spec(1);
        spec.sources[1].activity = Interval::new(3.0, 6.0);
        assert!(matches!(spec.validate(), Err(ScenarioError::SpecInvalid(_))));
        let mut spec = small_spec(1);
        spec.mic_positions.truncate(1);
        assert!(spec.validate().is_err());
        let mut spec = small_spec(1);
        spec.t60 = 0.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for l in [FrameLabel::NoiseOnly, FrameLabel::NoisePlusInterferer, FrameLabel::Target(0), FrameLabel::Target(1)] {
            assert_eq!(l.to_string().parse::<FrameLabel>().unwrap(), l);
        }
        assert!("target-0".parse::<FrameLabel>().is_err());
    }

    #[test]
    fn built_scenario_properties() {
        let spec = small_spec(11);
        let b = build_scenario(&spec).unwrap();
        let fs = spec.sample_rate;
        let len = b.n_samples();
        assert_eq!(len, 96_000);

        // Additivity: components sum to the mixture exactly.
        for m in 0..spec.n_mics() {
            for i in (0..len).step_by(97) {
                let s = b.components.iter().fold(0.0, |acc, c| acc + c.channels[m][i]);
                assert_eq!(s, b.mixture[m][i]);
            }
        }

        // SNR per target segment and SIR over all target frames.
        let noise = &b.components.last().unwrap().channels[0];
        for j in spec.target_indices() {
            let (a, e) = spec.sources[j].activity.samples(fs);
            let snr = 10.0 * (energy(&b.components[j].channels[0][a..e]) / energy(&noise[a..e])).log10();
            assert!((snr - spec.snr_db).abs() < 0.1, "target {j}: snr {snr}");
        }
        let (a, e) = (2 * 16_000, 6 * 16_000);
        let tsum: Vec<f64> = (a..e).map(|i| b.components[0].channels[0][i] + b.components[1].channels[0][i]).collect();
        let sir = 10.0 * (energy(&tsum) / energy(&b.components[2].channels[0][a..e])).log10();
        assert!((sir - spec.sir_db).abs() < 0.1, "sir {sir}");

        // Labels: one per frame, consistent with component energies.
        assert_eq!(b.labels.len(), b.stft.n_frames(len));
        let shift = b.stft.frame_shift;
        for (t, label) in b.labels.iter().enumerate() {
            let lo = (t * shift).saturating_sub(shift);
            let hi = (t * shift + shift).min(len);
            let e = |c: usize| energy(&b.components[c].channels[0][lo..hi]);
            match label {
                FrameLabel::NoiseOnly => assert!(e(0) == 0.0 && e(1) == 0.0 && e(2) == 0.0, "frame {t}"),
                FrameLabel::Target(k) => assert!(e(*k) > 0.0, "frame {t}"),
                FrameLabel::NoisePlusInterferer => {}
            }
        }
        assert_eq!(b.labels[0], FrameLabel::NoiseOnly);
        assert_eq!(b.labels[(1.5 * fs) as usize / shift], FrameLabel::NoisePlusInterferer);
        assert_eq!(b.labels[(3.0 * fs) as usize / shift], FrameLabel::Target(0));
        assert_eq!(b.labels[(5.0 * fs) as usize / shift], FrameLabel::Target(1));

        // Oracle RTFs: reference entry exactly one.
        for rtfs in &b.oracle_rtfs {
            assert_eq!(rtfs.len(), b.stft.n_bins());
            assert!(rtfs.iter().all(|v| v[spec.ref_mics.0] == Complex::new(1.0, 0.0)));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let spec = small_spec(5);
        let a = build_scenario(&spec).unwrap();
        let b = build_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let c = build_scenario(&small_spec(6)).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn noiseless_anechoic_scene_is_delayed_source() {
        let mut spec = small_spec(2);
        spec.snr_db = f64::INFINITY;
        spec.sir_db = f64::INFINITY;
        spec.t60 = 0.001;
        let b = build_scenario(&spec).unwrap();
        // Only the target image survives; at each mic it is the dry signal
        // delayed by d/c and scaled by 1/d (up to the global gain).
        assert!(b.components[2].channels.iter().flatten().all(|&v| v == 0.0));
        assert!(b.components[3].channels.iter().flatten().all(|&v| v == 0.0));
        let fs = spec.sample_rate;
        let dry = synthetic_speech(32_000, fs, 115.0, splitmix(spec.seed ^ 1));
        for (m, &mic) in spec.mic_positions.iter().enumerate() {
            let d = dist3(spec.sources[0].position, mic);
            let delay = d / SPEED_OF_SOUND * fs;
            let mut h = vec![0.0; 200];
            add_sinc(&mut h, delay, b.source_gains[0] / d, SINC_HALF_WIDTH);
            let mut x = vec![0.0; 96_000];
            x[32_000..64_000].copy_from_slice(&dry);
            let want = fft_convolve(&x, &h, 96_000);
            let got = &b.mixture[m];
            let err: f64 = (33_000..63_000).map(|i| (got[i] - want[i]).powi(2)).sum();
            let sig: f64 = (33_000..63_000).map(|i| want[i].powi(2)).sum();
            assert!(err / sig < 1e-3, "mic {m}: rel err {}", err / sig);
        }
    }
}
