//! Objective measures: frequency-weighted segmental SNR and segmental
//! signal-to-reverberation ratio against the direct-plus-early target.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::scenario::Interval;

pub const FWSSNR_BANDS: usize = 25;
pub const FWSSNR_WEIGHT_EXPONENT: f64 = 0.2;
pub const FWSSNR_MIN_DB: f64 = -10.0;
pub const FWSSNR_MAX_DB: f64 = 35.0;
pub const FWSSNR_FRAME_SECONDS: f64 = 0.03;
pub const SRR_MIN_DB: f64 = -20.0;
pub const SRR_MAX_DB: f64 = 40.0;
pub const SRR_SEGMENT_SECONDS: f64 = 0.032;
/// Frames whose reference energy is this far below the loudest frame are skipped.
pub const ACTIVITY_GATE_DB: f64 = -40.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: reference {reference}, test {test}")]
    LengthMismatch { reference: usize, test: usize },
    #[error("alignment error: {0}")]
    AlignmentError(String),
    #[error("no active reference frames to evaluate")]
    NoActiveFrames,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn to_f64<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64_lossy()).collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on a mel scale from 0 Hz to Nyquist; `bank[k][bin]`.
fn mel_filterbank(n_bands: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_bands + 2).map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64)).collect();
    (0..n_bands)
        .map(|k| {
            let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * sample_rate / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Frame starts with the activity gate applied to the reference.
fn active_frames(reference: &[f64], frame: usize, hop: usize) -> Vec<usize> {
    if reference.len() < frame {
        return Vec::new();
    }
    let starts: Vec<usize> = (0..=(reference.len() - frame) / hop).map(|i| i * hop).collect();
    let energies: Vec<f64> = starts.iter().map(|&s| reference[s..s + frame].iter().map(|v| v * v).sum()).collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let gate = peak * 10f64.powf(ACTIVITY_GATE_DB / 10.0);
    starts.into_iter().zip(energies).filter(|&(_, e)| e > gate).map(|(s, _)| s).collect()
}

fn check_lengths(reference: usize, test: usize) -> Result<()> {
    if reference != test {
        return Err(MetricsError::LengthMismatch { reference, test });
    }
    Ok(())
}

/// Frequency-weighted segmental SNR in dB. The per-band noise is the
/// complex spectral error `test - reference`, so phase errors count.
pub fn fwssnr<T: Real>(reference: &[T], test: &[T], sample_rate: f64) -> Result<f64> {
    check_lengths(reference.len(), test.len())?;
    let (r, x) = (to_f64(reference), to_f64(test));
    let frame = (FWSSNR_FRAME_SECONDS * sample_rate).round() as usize;
    let hop = (frame / 4).max(1);
    let n_fft = (2 * frame).next_power_of_two();
    let bank = mel_filterbank(FWSSNR_BANDS, n_fft, sample_rate);
    let win = hann(frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let starts = active_frames(&r, frame, hop);
    if starts.is_empty() {
        return Err(MetricsError::NoActiveFrames);
    }
    let mut total = 0.0;
    let (mut rb, mut eb) = (vec![Complex::new(0.0, 0.0); n_fft], vec![Complex::new(0.0, 0.0); n_fft]);
    for &s in &starts {
        for i in 0..n_fft {
            let (rv, ev) = if i < frame { (r[s + i] * win[i], (x[s + i] - r[s + i]) * win[i]) } else { (0.0, 0.0) };
            rb[i] = Complex::new(rv, 0.0);
            eb[i] = Complex::new(ev, 0.0);
        }
        fft.process(&mut rb);
        fft.process(&mut eb);
        let (mut num, mut den) = (0.0, 0.0);
        for filt in &bank {
            let (mut sig, mut err, mut mag) = (0.0, 0.0, 0.0);
            for (b, &f) in filt.iter().enumerate() {
                if f > 0.0 {
                    sig += f * rb[b].norm_sqr();
                    err += f * eb[b].norm_sqr();
                    mag += f * rb[b].norm();
                }
            }
            let snr = if err > 0.0 { 10.0 * (sig / err).log10() } else { FWSSNR_MAX_DB };
            let snr = if snr.is_nan() { FWSSNR_MIN_DB } else { snr.clamp(FWSSNR_MIN_DB, FWSSNR_MAX_DB) };
            let w = mag.powf(FWSSNR_WEIGHT_EXPONENT);
            num += w * snr;
            den += w;
        }
        total += if den > 0.0 { num / den } else { FWSSNR_MIN_DB };
    }
    Ok(total / starts.len() as f64)
}

/// Segmental SRR in dB with a per-segment least-squares gain on the reference.
pub fn srr<T: Real>(reference_direct: &[T], test: &[T], sample_rate: f64) -> Result<f64> {
    check_lengths(reference_direct.len(), test.len())?;
    let (r, x) = (to_f64(reference_direct), to_f64(test));
    let seg = (SRR_SEGMENT_SECONDS * sample_rate).round() as usize;
    let hop = (seg / 2).max(1);
    let starts = active_frames(&r, seg, hop);
    if starts.is_empty() {
        return Err(MetricsError::NoActiveFrames);
    }
    let total: f64 = starts
        .iter()
        .map(|&s| {
            let (rs, xs) = (&r[s..s + seg], &x[s..s + seg]);
            let rr: f64 = rs.iter().map(|v| v * v).sum();
            let alpha = rs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>() / rr;
            let signal = alpha * alpha * rr;
            let resid: f64 = rs.iter().zip(xs).map(|(a, b)| (b - alpha * a).powi(2)).sum();
            let v = if resid <= 0.0 {
                SRR_MAX_DB
            } else if signal <= 0.0 {
                SRR_MIN_DB
            } else {
                10.0 * (signal / resid).log10()
            };
            v.clamp(SRR_MIN_DB, SRR_MAX_DB)
        })
        .sum();
    Ok(total / starts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub fwssnr_in: f64,
    pub fwssnr_out: f64,
    pub srr_in: f64,
    pub srr_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Left then right reference.
    pub channels: [ChannelMetrics; 2],
    pub fwssnr_in: f64,
    pub fwssnr_out: f64,
    pub delta_fwssnr: f64,
    pub srr_in: f64,
    pub srr_out: f64,
    pub delta_srr: f64,
    pub interval: Interval,
}

/// Aligns an enhanced signal to the mixture timeline: STFT synthesis output
/// may run up to one frame shift past the input and is truncated.
pub fn align_to<T: Real>(enhanced: &[T], len: usize, tolerance: usize) -> Result<&[T]> {
    if enhanced.len() < len || enhanced.len() > len + tolerance {
        return Err(MetricsError::AlignmentError(format!(
            "enhanced signal has {} samples, expected {len} (+{tolerance})",
            enhanced.len()
        )));
    }
    Ok(&enhanced[..len])
}

/// Input and output scores over `interval`, per reference and averaged over
/// left and right. `unprocessed` are the reference microphone signals,
/// `reference_direct` the direct-plus-early target at those microphones.
pub fn evaluate<T: Real>(
    reference_direct: [&[T]; 2],
    unprocessed: [&[T]; 2],
    enhanced: [&[T]; 2],
    sample_rate: f64,
    interval: Interval,
) -> Result<MetricReport> {
    let (a, b) = interval.samples(sample_rate);
    let mut channels = [ChannelMetrics { fwssnr_in: 0.0, fwssnr_out: 0.0, srr_in: 0.0, srr_out: 0.0 }; 2];
    for (k, ch) in channels.iter_mut().enumerate() {
        let len = reference_direct[k].len();
        check_lengths(len, unprocessed[k].len())?;
        check_lengths(len, enhanced[k].len())?;
        let b = b.min(len);
        if a >= b {
            return Err(MetricsError::AlignmentError(format!("interval [{}, {}) outside the signal", interval.start, interval.end)));
        }
        let r = &reference_direct[k][a..b];
        let (u, e) = (&unprocessed[k][a..b], &enhanced[k][a..b]);
        *ch = ChannelMetrics {
            fwssnr_in: fwssnr(r, u, sample_rate)?,
            fwssnr_out: fwssnr(r, e, sample_rate)?,
            srr_in: srr(r, u, sample_rate)?,
            srr_out: srr(r, e, sample_rate)?,
        };
    }
    let avg = |f: fn(&ChannelMetrics) -> f64| 0.5 * (f(&channels[0]) + f(&channels[1]));
    let (fi, fo) = (avg(|c| c.fwssnr_in), avg(|c| c.fwssnr_out));
    let (si, so) = (avg(|c| c.srr_in), avg(|c| c.srr_out));
    Ok(MetricReport {
        channels,
        fwssnr_in: fi,
        fwssnr_out: fo,
        delta_fwssnr: fo - fi,
        srr_in: si,
        srr_out: so,
        delta_srr: so - si,
        interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const FS: f64 = 16_000.0;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn perfect_test_hits_ceilings() {
        let r = noise(16_000, 1);
        assert_eq!(fwssnr(&r, &r, FS).unwrap(), FWSSNR_MAX_DB);
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert_eq!(srr(&r, &scaled, FS).unwrap(), SRR_MAX_DB);
    }

    #[test]
    fn equal_power_noise_is_zero_db() {
        let r = noise(48_000, 2);
        let n = noise(48_000, 3);
        let t: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + b).collect();
        let v = fwssnr(&r, &t, FS).unwrap();
        assert!(v.abs() < 1.0, "fwssnr {v}");
    }

    #[test]
    fn inverted_reference_is_negative() {
        let r = noise(16_000, 4);
        let t: Vec<f64> = r.iter().map(|v| -v).collect();
        let v = fwssnr(&r, &t, FS).unwrap();
        // Error spectrum is 2R: -6 dB in every band.
        assert!(v < -5.0 && v >= FWSSNR_MIN_DB, "fwssnr {v}");
    }

    #[test]
    fn srr_with_orthogonal_residual() {
        // Residual orthogonal to the reference in every segment, equal energy.
        let seg = 512;
        let hop = 256;
        let n = 40 * hop + seg;
        let r: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / FS).sin()).collect();
        let q: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / FS).cos()).collect();
        let t: Vec<f64> = r.iter().zip(&q).map(|(a, b)| a + b).collect();
        let v = srr(&r, &t, FS).unwrap();
        assert!(v.abs() < 0.1, "srr {v}");
    }

    #[test]
    fn srr_uncorrelated_near_floor() {
        let r = noise(32_000, 5);
        let t = noise(32_000, 6);
        let v = srr(&r, &t, FS).unwrap();
        assert!(v < -10.0, "srr {v}");
    }

    #[test]
    fn srr_is_gain_invariant() {
        let r = noise(32_000, 7);
        let t: Vec<f64> = r.iter().zip(noise(32_000, 8)).map(|(a, b)| a + 0.3 * b).collect();
        let t2: Vec<f64> = t.iter().map(|v| 5.0 * v).collect();
        assert!((srr(&r, &t, FS).unwrap() - srr(&r, &t2, FS).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(fwssnr(&[0.0; 10], &[0.0; 11], FS), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(srr(&[0.0; 10], &[0.0; 11], FS), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(srr(&[0.0; 2000], &[0.0; 2000], FS), Err(MetricsError::NoActiveFrames));
        assert!(matches!(align_to(&[0.0f64; 10], 12, 4), Err(MetricsError::AlignmentError(_))));
        assert_eq!(align_to(&[1.0f64; 14], 12, 4).unwrap().len(), 12);
    }

    #[test]
    fn identity_processing_has_zero_deltas() {
        let r = [noise(32_000, 9), noise(32_000, 10)];
        let u = [
            r[0].iter().zip(noise(32_000, 11)).map(|(a, b)| a + b).collect::<Vec<f64>>(),
            r[1].iter().zip(noise(32_000, 12)).map(|(a, b)| a + b).collect::<Vec<f64>>(),
        ];
        let rep = evaluate([&r[0], &r[1]], [&u[0], &u[1]], [&u[0], &u[1]], FS, Interval::new(0.0, 2.0)).unwrap();
        assert_eq!(rep.delta_fwssnr, 0.0);
        assert_eq!(rep.delta_srr, 0.0);
        let best = evaluate([&r[0], &r[1]], [&u[0], &u[1]], [&r[0], &r[1]], FS, Interval::new(0.0, 2.0)).unwrap();
        assert_eq!(best.fwssnr_out, FWSSNR_MAX_DB);
        assert_eq!(best.srr_out, SRR_MAX_DB);
        assert_eq!(best.delta_srr, best.srr_out - best.srr_in);
    }

    #[test]
    fn filterbank_shape() {
        let bank = mel_filterbank(FWSSNR_BANDS, 1024, FS);
        assert_eq!(bank.len(), 25);
        assert!(bank.iter().all(|f| f.iter().any(|&v| v > 0.0)));
    }
}
