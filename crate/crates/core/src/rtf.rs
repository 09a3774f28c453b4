//! Relative transfer function estimation by covariance whitening, and the
//! per-bin tracker that feeds the beamformer constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gevd_principal, CMat, CVec, Cholesky, LinalgError};
use crate::scalar::{cone, Real, C};
use crate::scenario::FrameLabel;

/// Diagonal loading, relative to `trace / M`, applied when the whitening
/// matrix is singular or badly conditioned.
pub const RTF_REG_EPS: f64 = 1e-6;
/// Whitening matrices whose squared Cholesky pivots span more than this
/// ratio get loaded.
const WHITENING_PIVOT_RATIO: f64 = 1e-10;
/// Relative magnitude below which the reference entry is considered zero.
pub const RTF_REF_FLOOR: f64 = 1e-10;
/// Generalized eigenvalues at or below `1 + margin` mean no source energy
/// beyond the whitening covariance.
pub const RTF_CONFIDENCE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RtfError {
    #[error("degenerate RTF: reference entry magnitude {value:e}")]
    DegenerateRtf { value: f64 },
    #[error("zero vector in Hermitian angle")]
    ZeroVector,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtfEstimate<T> {
    /// RTF vector with the reference entry exactly one.
    pub vector: CVec<T>,
    pub gen_eigenvalue: T,
    /// False when the source covariance is indistinguishable from the
    /// whitening covariance (no source present).
    pub confident: bool,
}

/// Covariance-whitening RTF estimate from a source-plus-interference
/// covariance and the interference covariance.
pub fn estimate_rtf<T: Real>(r_source_plus_v: &CMat<T>, r_v: &CMat<T>, ref_mic: usize) -> Result<CVec<T>, RtfError> {
    estimate_rtf_detailed(r_source_plus_v, r_v, ref_mic).map(|e| e.vector)
}

pub fn estimate_rtf_detailed<T: Real>(
    r_source_plus_v: &CMat<T>,
    r_v: &CMat<T>,
    ref_mic: usize,
) -> Result<RtfEstimate<T>, RtfError> {
    let m = r_v.rows();
    if r_source_plus_v.rows() != m || ref_mic >= m {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} and {}x{} covariances with reference {ref_mic}",
            r_source_plus_v.rows(),
            r_source_plus_v.cols(),
            m,
            r_v.cols()
        ))
        .into());
    }
    let mut a = r_source_plus_v.clone();
    let mut b = r_v.clone();
    a.hermitianize();
    b.hermitianize();
    if needs_loading(&b) {
        let tr = b.trace().re;
        if !(tr > T::zero()) {
            return Err(LinalgError::NotPositiveDefinite { index: 0, pivot: tr.to_f64_lossy() }.into());
        }
        // Equal loading on both keeps the rank-one-plus-R_v structure.
        let load = T::lit(RTF_REG_EPS) * tr / T::from_usize_lossy(m);
        a.add_scaled_identity(load);
        b.add_scaled_identity(load);
    }
    let (lambda, v) = gevd_principal(&a, &b)?;
    let dewhitened = b.mul_vec(&v);
    let r = dewhitened[ref_mic];
    if !(r.norm() > T::lit(RTF_REF_FLOOR) * dewhitened.norm()) {
        return Err(RtfError::DegenerateRtf { value: r.norm().to_f64_lossy() });
    }
    let mut vector = dewhitened.scaled(cone::<T>() / r);
    vector[ref_mic] = cone();
    Ok(RtfEstimate { vector, gen_eigenvalue: lambda, confident: lambda > T::lit(1.0 + RTF_CONFIDENCE_MARGIN) })
}

fn needs_loading<T: Real>(b: &CMat<T>) -> bool {
    match Cholesky::factor(b) {
        Err(_) => true,
        Ok(ch) => {
            let l = ch.lower();
            let pivots: Vec<T> = (0..l.rows()).map(|i| l[(i, i)].re * l[(i, i)].re).collect();
            let max = pivots.iter().copied().fold(T::zero(), T::max);
            let min = pivots.iter().copied().fold(T::infinity(), T::min);
            !(min > T::lit(WHITENING_PIVOT_RATIO) * max)
        }
    }
}

/// Scale- and phase-invariant angle between two complex vectors, in `[0, pi/2]`.
pub fn hermitian_angle<T: Real>(a: &[C<T>], b: &[C<T>]) -> Result<T, RtfError> {
    let na = a.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt();
    let nb = b.iter().map(|v| v.norm_sqr()).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(RtfError::ZeroVector);
    }
    let inner = a.iter().zip(b).fold(C::<T>::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y);
    let c = (inner.norm() / (na * nb)).min(T::one()).max(T::zero());
    Ok(c.acos())
}

/// How the target covariance follows the active target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetTracking {
    /// `R <- g R + (1 - g) z z^H` on every target frame.
    Exponential { gamma: f64 },
    /// Arithmetic mean over all target frames (non-adaptive processing).
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfTrackerConfig {
    pub n_mics: usize,
    pub ref_mic: usize,
    pub tracking: TargetTracking,
}

/// Per-bin covariance and RTF state driven by oracle frame labels.
#[derive(Debug, Clone)]
pub struct RtfEstimatorState<T> {
    cfg: RtfTrackerConfig,
    r_target: CMat<T>,
    r_noise_sum: CMat<T>,
    r_npi_sum: CMat<T>,
    target_frames: usize,
    noise_frames: usize,
    npi_frames: usize,
    rtf_target: Option<CVec<T>>,
    rtf_interferer: Option<CVec<T>>,
    interferer_frozen: bool,
    target_confident: bool,
}

impl<T: Real> RtfEstimatorState<T> {
    pub fn new(cfg: RtfTrackerConfig) -> Self {
        let m = cfg.n_mics;
        Self {
            cfg,
            r_target: CMat::zeros(m, m),
            r_noise_sum: CMat::zeros(m, m),
            r_npi_sum: CMat::zeros(m, m),
            target_frames: 0,
            noise_frames: 0,
            npi_frames: 0,
            rtf_target: None,
            rtf_interferer: None,
            interferer_frozen: false,
            target_confident: false,
        }
    }

    pub fn rtf_target(&self) -> Option<&CVec<T>> {
        self.rtf_target.as_ref()
    }

    pub fn rtf_interferer(&self) -> Option<&CVec<T>> {
        self.rtf_interferer.as_ref()
    }

    pub fn target_confident(&self) -> bool {
        self.target_confident
    }

    pub fn r_target(&self) -> &CMat<T> {
        &self.r_target
    }

    pub fn frame_counts(&self) -> (usize, usize, usize) {
        (self.noise_frames, self.npi_frames, self.target_frames)
    }

    pub fn r_noise(&self) -> Option<CMat<T>> {
        mean(&self.r_noise_sum, self.noise_frames)
    }

    pub fn r_noise_plus_interferer(&self) -> Option<CMat<T>> {
        mean(&self.r_npi_sum, self.npi_frames)
    }

    /// Consumes one dereverberated frame with its oracle label.
    pub fn update(&mut self, z: &[C<T>], label: FrameLabel) {
        match label {
            FrameLabel::NoiseOnly => {
                self.r_noise_sum.rank_one_accumulate(T::one(), T::one(), z);
                self.noise_frames += 1;
            }
            FrameLabel::NoisePlusInterferer if !self.interferer_frozen => {
                self.r_npi_sum.rank_one_accumulate(T::one(), T::one(), z);
                self.npi_frames += 1;
            }
            FrameLabel::NoisePlusInterferer => {}
            FrameLabel::Target(_) => {
                self.freeze_interferer();
                match self.cfg.tracking {
                    TargetTracking::Exponential { gamma } => {
                        let g = T::lit(gamma);
                        self.r_target.rank_one_accumulate(g, T::one() - g, z);
                    }
                    TargetTracking::Cumulative => {
                        let n = T::from_usize_lossy(self.target_frames);
                        let inv = T::one() / (n + T::one());
                        self.r_target.rank_one_accumulate(n * inv, inv, z);
                    }
                }
                self.r_target.hermitianize();
                self.target_frames += 1;
                self.refresh_target();
            }
        }
    }

    /// Ends the noise-plus-interferer period and fixes the interferer RTF.
    pub fn freeze_interferer(&mut self) {
        if self.interferer_frozen {
            return;
        }
        self.interferer_frozen = true;
        if let (Some(rnpi), Some(rn)) = (self.r_noise_plus_interferer(), self.r_noise()) {
            self.rtf_interferer = estimate_rtf(&rnpi, &rn, self.cfg.ref_mic).ok();
        }
    }

    fn refresh_target(&mut self) {
        let Some(rv) = self.r_noise_plus_interferer().or_else(|| self.r_noise()) else {
            return;
        };
        if let Ok(est) = estimate_rtf_detailed(&self.r_target, &rv, self.cfg.ref_mic) {
            if est.vector.is_finite() {
                self.target_confident = est.confident;
                self.rtf_target = Some(est.vector);
            }
        }
    }
}

fn mean<T: Real>(sum: &CMat<T>, n: usize) -> Option<CMat<T>> {
    (n > 0).then(|| sum.scaled(C::new(T::one() / T::from_usize_lossy(n), T::zero())))
}
