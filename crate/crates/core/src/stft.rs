//! Analysis/synthesis filterbank with a square-root periodic Hann window at
//! 50% overlap.
//!
//! The analysis side pads `frame_len - frame_shift` zeros in front of the
//! signal so the first frame is centered on the first sample; synthesis
//! removes that lead again, so `synthesize(analyze(x))` is time-aligned with
//! `x`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{czero, Real, C};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StftError {
    #[error("invalid STFT configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    SqrtHann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub window: Window,
    pub sample_rate: f64,
}

impl Default for StftConfig {
    /// 32 ms frames with a 16 ms shift at 16 kHz.
    fn default() -> Self {
        Self { frame_len: 512, frame_shift: 256, window: Window::SqrtHann, sample_rate: 16_000.0 }
    }
}

impl StftConfig {
    pub fn from_durations(frame_ms: f64, sample_rate: f64) -> Self {
        let frame_len = (frame_ms * 1e-3 * sample_rate).round() as usize;
        Self { frame_len, frame_shift: frame_len / 2, window: Window::SqrtHann, sample_rate }
    }

    pub fn validate(&self) -> Result<(), StftError> {
        if self.frame_shift == 0 || self.frame_len != 2 * self.frame_shift {
            return Err(StftError::ConfigInvalid(format!(
                "frame_len ({}) must equal twice frame_shift ({})",
                self.frame_len, self.frame_shift
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(StftError::ConfigInvalid(format!("sample rate {} must be positive", self.sample_rate)));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Zeros prepended before the first analysis frame.
    pub fn analysis_lead(&self) -> usize {
        self.frame_len - self.frame_shift
    }

    /// One frame past `ceil(len / shift)` so every sample lies under two
    /// overlapping windows.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.frame_shift) + 1
    }

    /// Frame shift in seconds.
    pub fn shift_seconds(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate
    }

    /// Center frequency of `bin` in Hz.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.frame_len as f64
    }

    /// Sample index (in the unpadded signal) at the center of `frame`.
    pub fn frame_center(&self, frame: usize) -> usize {
        frame * self.frame_shift
    }

    pub fn window<T: Real>(&self) -> Vec<T> {
        sqrt_hann(self.frame_len)
    }
}

/// `sqrt(0.5 - 0.5 cos(2 pi n / N))`, the DFT-even Hann window's square root.
pub fn sqrt_hann<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            T::lit((0.5 - 0.5 * phase.cos()).max(0.0).sqrt())
        })
        .collect()
}

/// Complex STFT coefficients indexed `(frame, bin, mic)` with the microphone
/// index fastest, so each `(frame, bin)` pair is a contiguous `M`-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor<T> {
    n_frames: usize,
    n_bins: usize,
    n_mics: usize,
    data: Vec<C<T>>,
}

impl<T: Real> SpectralTensor<T> {
    pub fn zeros(n_frames: usize, n_bins: usize, n_mics: usize) -> Self {
        Self { n_frames, n_bins, n_mics, data: vec![czero(); n_frames * n_bins * n_mics] }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    #[inline]
    fn offset(&self, frame: usize, bin: usize) -> usize {
        (frame * self.n_bins + bin) * self.n_mics
    }

    pub fn get(&self, frame: usize, bin: usize, mic: usize) -> C<T> {
        self.data[self.offset(frame, bin) + mic]
    }

    pub fn set(&mut self, frame: usize, bin: usize, mic: usize, value: C<T>) {
        let o = self.offset(frame, bin);
        self.data[o + mic] = value;
    }

    /// The `M`-channel observation `y_t` of one bin.
    pub fn frame_bin(&self, frame: usize, bin: usize) -> &[C<T>] {
        let o = self.offset(frame, bin);
        &self.data[o..o + self.n_mics]
    }

    pub fn frame_bin_mut(&mut self, frame: usize, bin: usize) -> &mut [C<T>] {
        let o = self.offset(frame, bin);
        let m = self.n_mics;
        &mut self.data[o..o + m]
    }

    /// All frames of one bin, copied into contiguous per-frame vectors.
    pub fn bin_frames(&self, bin: usize) -> Vec<Vec<C<T>>> {
        (0..self.n_frames).map(|t| self.frame_bin(t, bin).to_vec()).collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { data: self.data.iter().map(|z| z * s).collect(), ..*self }
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn check_audio<T>(audio: &[Vec<T>]) -> Result<usize, StftError> {
    let Some(first) = audio.first() else {
        return Err(StftError::InvalidInput("no channels".into()));
    };
    let len = first.len();
    if audio.iter().any(|ch| ch.len() != len) {
        return Err(StftError::InvalidInput("channels have different lengths".into()));
    }
    Ok(len)
}

/// Forward STFT of every channel; `n_frames = ceil(len / frame_shift) + 1`.
pub fn analyze<T: Real + FftNum>(audio: &[Vec<T>], cfg: &StftConfig) -> Result<SpectralTensor<T>, StftError> {
    cfg.validate()?;
    let len = check_audio(audio)?;
    if len < cfg.frame_len {
        return Err(StftError::InvalidInput(format!(
            "signal of {len} samples is shorter than one frame ({})",
            cfg.frame_len
        )));
    }
    let n = cfg.frame_len;
    let n_bins = cfg.n_bins();
    let n_frames = cfg.n_frames(len);
    let lead = cfg.analysis_lead() as isize;
    let window: Vec<T> = cfg.window();
    let fft: Arc<dyn Fft<T>> = FftPlanner::new().plan_fft_forward(n);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];

    let mut out = SpectralTensor::zeros(n_frames, n_bins, audio.len());
    for (mic, channel) in audio.iter().enumerate() {
        for t in 0..n_frames {
            let start = (t * cfg.frame_shift) as isize - lead;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let x = if idx >= 0 && (idx as usize) < len { channel[idx as usize] } else { T::zero() };
                *b = Complex::new(x * window[i], T::zero());
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, &z) in buf.iter().take(n_bins).enumerate() {
                out.set(t, k, mic, z);
            }
            // DC and Nyquist of a real signal are real.
            let dc = out.get(t, 0, mic);
            out.set(t, 0, mic, Complex::new(dc.re, T::zero()));
            let ny = out.get(t, n_bins - 1, mic);
            out.set(t, n_bins - 1, mic, Complex::new(ny.re, T::zero()));
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`analyze`]. Returns `n_frames *
/// frame_shift` samples per channel, aligned with the analyzed input.
pub fn synthesize<T: Real + FftNum>(spec: &SpectralTensor<T>, cfg: &StftConfig) -> Result<Vec<Vec<T>>, StftError> {
    cfg.validate()?;
    if spec.n_bins() != cfg.n_bins() {
        return Err(StftError::ConfigInvalid(format!(
            "tensor has {} bins, configuration expects {}",
            spec.n_bins(),
            cfg.n_bins()
        )));
    }
    let n = cfg.frame_len;
    let shift = cfg.frame_shift;
    let lead = cfg.analysis_lead();
    let n_frames = spec.n_frames();
    let n_bins = spec.n_bins();
    let window: Vec<T> = cfg.window();
    let ifft: Arc<dyn Fft<T>> = FftPlanner::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let inv_n = T::one() / T::from_usize_lossy(n);

    let padded_len = if n_frames == 0 { 0 } else { (n_frames - 1) * shift + n };
    let mut out = Vec::with_capacity(spec.n_mics());
    for mic in 0..spec.n_mics() {
        let mut acc = vec![T::zero(); padded_len];
        for t in 0..n_frames {
            for k in 0..n_bins {
                buf[k] = spec.get(t, k, mic);
            }
            buf[0].im = T::zero();
            buf[n_bins - 1].im = T::zero();
            for k in 1..n_bins - 1 {
                buf[n - k] = buf[k].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let base = t * shift;
            for i in 0..n {
                acc[base + i] = acc[base + i] + buf[i].re * inv_n * window[i];
            }
        }
        let trimmed = if padded_len > lead { acc[lead..].to_vec() } else { Vec::new() };
        out.push(trimmed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Naive DFT magnitude-squared of a real frame.
    fn dft_energy(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn rejects_bad_overlap() {
        let cfg = StftConfig { frame_len: 512, frame_shift: 128, ..Default::default() };
        assert!(matches!(analyze(&[vec![0.0f64; 1024]], &cfg), Err(StftError::ConfigInvalid(_))));
        assert!(matches!(synthesize(&SpectralTensor::<f64>::zeros(1, 257, 1), &cfg), Err(StftError::ConfigInvalid(_))));
    }

    #[test]
    fn squared_window_overlap_adds_to_one() {
        let w: Vec<f64> = sqrt_hann(512);
        for i in 0..256 {
            assert!((w[i] * w[i] + w[i + 256] * w[i + 256] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bin_centered_sine_concentrates_in_main_lobe() {
        let cfg = StftConfig::default();
        let k0 = 32;
        let x: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / cfg.frame_len as f64).sin())
            .collect();
        let spec = analyze(&[x], &cfg).unwrap();
        // Closed-form reference: DFT of the window-weighted sine computed directly.
        let w: Vec<f64> = cfg.window();
        let frame: Vec<f64> = (0..512)
            .map(|i| w[i] * (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / 512.0).sin())
            .collect();
        let oracle = dft_energy(&frame);
        let oracle_total: f64 = oracle.iter().sum();
        let oracle_center = oracle[k0] / oracle_total;
        for t in 2..spec.n_frames() - 2 {
            let e: Vec<f64> = (0..spec.n_bins()).map(|k| spec.get(t, k, 0).norm_sqr()).collect();
            let total: f64 = e.iter().sum();
            let lobe = e[k0 - 1] + e[k0] + e[k0 + 1];
            assert!(lobe / total >= 0.99, "frame {t}: main lobe holds {}", lobe / total);
            assert!((e[k0] / total - oracle_center).abs() < 1e-9);
        }
    }

    #[test]
    fn zeros_map_to_zeros() {
        let cfg = StftConfig::default();
        let spec = analyze(&[vec![0.0f64; 2048], vec![0.0; 2048]], &cfg).unwrap();
        assert!(spec.as_slice().iter().all(|z| z.norm() == 0.0));
        let audio = synthesize(&spec, &cfg).unwrap();
        assert!(audio.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_spectrum_is_flat() {
        let cfg = StftConfig::default();
        let mut x = vec![0.0f64; 2048];
        x[0] = 1.0;
        let spec = analyze(&[x], &cfg).unwrap();
        let w: Vec<f64> = cfg.window();
        // The impulse sits at offset `analysis_lead` inside frame 0.
        let lead = cfg.analysis_lead();
        for k in 0..spec.n_bins() {
            let phase = -2.0 * std::f64::consts::PI * (k * lead) as f64 / cfg.frame_len as f64;
            let expected = w[lead] * phase.cos();
            let z = spec.get(0, k, 0);
            assert!((z.re - expected).abs() < 1e-12 && z.im.abs() < 1e-12, "bin {k}: {z}");
        }
    }

    #[test]
    fn frame_count_covers_tail() {
        let cfg = StftConfig::default();
        let spec = analyze(&[vec![0.0f64; 1000]], &cfg).unwrap();
        assert_eq!(spec.n_frames(), 5);
        assert_eq!(spec.n_bins(), 257);
    }

    #[test]
    fn roundtrip_one_second_noise() {
        let cfg = StftConfig::default();
        let x = noise(42, 16_000);
        let y = synthesize(&analyze(&[x.clone()], &cfg).unwrap(), &cfg).unwrap();
        let (lo, hi) = (cfg.frame_len, x.len() - cfg.frame_len);
        let err: f64 = (lo..hi).map(|i| (y[0][i] - x[i]).powi(2)).sum();
        let sig: f64 = (lo..hi).map(|i| x[i].powi(2)).sum();
        assert!((err / sig).sqrt() < 1e-4);
        assert!(10.0 * (err / sig).log10() < -80.0);
    }

    #[test]
    fn synthesis_is_linear_in_scale() {
        let cfg = StftConfig::default();
        let spec = analyze(&[noise(1, 4096)], &cfg).unwrap();
        let a = synthesize(&spec.scaled(2.5), &cfg).unwrap();
        let b = synthesize(&spec, &cfg).unwrap();
        for (u, v) in a[0].iter().zip(&b[0]) {
            assert!((u - 2.5 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_with_one_sided_doubling() {
        let cfg = StftConfig::default();
        let x = noise(3, 8000);
        let spec = analyze(&[x.clone()], &cfg).unwrap();
        let w: Vec<f64> = cfg.window();
        let lead = cfg.analysis_lead() as isize;
        let nb = spec.n_bins();
        for t in 0..spec.n_frames() {
            let spectral: f64 = (0..nb)
                .map(|k| {
                    let e = spec.get(t, k, 0).norm_sqr();
                    if k == 0 || k == nb - 1 { e } else { 2.0 * e }
                })
                .sum::<f64>()
                / cfg.frame_len as f64;
            let start = (t * cfg.frame_shift) as isize - lead;
            let temporal: f64 = (0..cfg.frame_len)
                .map(|i| {
                    let idx = start + i as isize;
                    let s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
                    (s * w[i]).powi(2)
                })
                .sum();
            if temporal > 0.0 {
                assert!((spectral - temporal).abs() / temporal < 1e-6);
            }
        }
    }

    #[test]
    fn single_precision_roundtrip() {
        let cfg = StftConfig::default();
        let x: Vec<f32> = noise(5, 4096).into_iter().map(|v| v as f32).collect();
        let y = synthesize(&analyze(&[x.clone()], &cfg).unwrap(), &cfg).unwrap();
        let err: f32 = (512..3584).map(|i| (y[0][i] - x[i]).powi(2)).sum();
        let sig: f32 = (512..3584).map(|i| x[i].powi(2)).sum();
        assert!((err / sig).sqrt() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn perfect_reconstruction_interior(seed in 0u64..10_000, len in 1536usize..6000) {
            let cfg = StftConfig::default();
            let x = noise(seed, len);
            let y = synthesize(&analyze(&[x.clone()], &cfg).unwrap(), &cfg).unwrap();
            prop_assert!(y[0].len() >= len);
            let (lo, hi) = (cfg.frame_len, len - cfg.frame_len);
            let err: f64 = (lo..hi).map(|i| (y[0][i] - x[i]).powi(2)).sum();
            let sig: f64 = (lo..hi).map(|i| x[i].powi(2)).sum();
            prop_assert!((err / sig).sqrt() <= 1e-4);
        }

        #[test]
        fn analysis_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = StftConfig::default();
            let x = noise(seed, 2048);
            let y = noise(seed + 1, 2048);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let sx = analyze(&[x], &cfg).unwrap();
            let sy = analyze(&[y], &cfg).unwrap();
            let sm = analyze(&[mix], &cfg).unwrap();
            for ((m, p), q) in sm.as_slice().iter().zip(sx.as_slice()).zip(sy.as_slice()) {
                prop_assert!((m - (p * a + q * b)).norm() < 1e-10);
            }
        }
    }
}
