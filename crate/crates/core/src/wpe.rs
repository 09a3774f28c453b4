//! Adaptive MIMO weighted prediction error dereverberation for one STFT bin.
//!
//! Late reverberation in each microphone is predicted from frames
//! `t-tau ..= t-L_w+1` of all microphones and subtracted. The prediction
//! filters follow an exponentially weighted RLS recursion with lp-style
//! weights; one inverse correlation matrix is shared by all output channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::FrameRing;
use crate::linalg::{rank_one_inverse_update_in_place, CMat, CVec, LinalgError, UpdateScratch};
use crate::scalar::{czero, Real, C};

/// Relative floor on the prediction-error power used for the weights.
pub const WPE_POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WpeError {
    #[error("invalid WPE configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    pub n_mics: usize,
    /// Filter length `L_w` in frames, counting the current frame.
    pub filter_len: usize,
    /// Prediction delay `tau` in frames.
    pub delay: usize,
    pub gamma: f64,
    /// Shape parameter of the weights, `w = power^(p/2 - 1)`.
    pub p: f64,
    /// Initial regularization `delta_w`; the inverse starts at `I / delta_w`.
    pub reg: f64,
}

impl WpeConfig {
    pub fn validate(&self) -> Result<(), WpeError> {
        let bad = |m: String| Err(WpeError::ConfigInvalid(m));
        if self.n_mics == 0 {
            return bad("n_mics must be positive".into());
        }
        if self.delay < 1 || self.filter_len < self.delay {
            return bad(format!("need filter_len >= delay >= 1, got L_w = {}, tau = {}", self.filter_len, self.delay));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=2.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 2], got {}", self.p));
        }
        if !(self.reg > 0.0 && self.reg.is_finite()) {
            return bad(format!("regularization must be positive, got {}", self.reg));
        }
        Ok(())
    }

    /// Length of the delayed stack, `M (L_w - tau)`.
    pub fn stack_dim(&self) -> usize {
        self.n_mics * (self.filter_len - self.delay)
    }
}

#[derive(Debug, Clone)]
pub struct WpeBinState<T> {
    cfg: WpeConfig,
    inv_corr: CMat<T>,
    /// `stack_dim x n_mics`; column `m` predicts microphone `m`.
    pred: CMat<T>,
    history: FrameRing<T>,
    delayed: Vec<C<T>>,
    scratch: UpdateScratch<T>,
    power_sum: T,
    frames: usize,
    adapt: bool,
}

pub fn wpe_init<T: Real>(cfg: &WpeConfig) -> Result<WpeBinState<T>, WpeError> {
    cfg.validate()?;
    let d = cfg.stack_dim();
    let mut inv_corr = CMat::zeros(d, d);
    inv_corr.add_scaled_identity(T::lit(1.0 / cfg.reg));
    Ok(WpeBinState {
        cfg: *cfg,
        inv_corr,
        pred: CMat::zeros(d, cfg.n_mics),
        history: FrameRing::new(cfg.n_mics, cfg.filter_len.saturating_sub(1)),
        delayed: vec![czero(); d],
        scratch: UpdateScratch::default(),
        power_sum: T::zero(),
        frames: 0,
        adapt: true,
    })
}

impl<T: Real> WpeBinState<T> {
    pub fn config(&self) -> &WpeConfig {
        &self.cfg
    }

    pub fn inv_corr(&self) -> &CMat<T> {
        &self.inv_corr
    }

    pub fn pred_filters(&self) -> &CMat<T> {
        &self.pred
    }

    /// With adaptation off the filters stay frozen and only the history advances.
    pub fn set_adaptation(&mut self, on: bool) {
        self.adapt = on;
    }

    /// Processes frame `y` and writes the dereverberated frame into `z`.
    pub fn step_into(&mut self, y: &[C<T>], z: &mut [C<T>]) -> Result<(), WpeError> {
        let m = self.cfg.n_mics;
        debug_assert_eq!(y.len(), m);
        debug_assert_eq!(z.len(), m);
        let d = self.delayed.len();
        if d > 0 {
            self.history.stack_lags(self.cfg.delay, self.cfg.filter_len - 1, &mut self.delayed);
        }
        let x = &self.delayed;

        // z = y - G^H x
        let g = self.pred.as_slice();
        for (ch, zc) in z.iter_mut().enumerate() {
            let mut acc = czero();
            for (i, xi) in x.iter().enumerate() {
                acc = acc + g[i * m + ch].conj() * xi;
            }
            *zc = y[ch] - acc;
        }

        let y_power = y.iter().map(|v| v.norm_sqr()).sum::<T>() / T::from_usize_lossy(m);
        let silent = y_power == T::zero() && x.iter().all(|v| *v == czero());
        if d > 0 && self.adapt && !silent {
            self.power_sum = self.power_sum + y_power;
            self.frames += 1;
            let mean_power = self.power_sum / T::from_usize_lossy(self.frames);
            let floor = (T::lit(WPE_POWER_FLOOR) * mean_power).max(T::min_positive_value());
            let z_power = z.iter().map(|v| v.norm_sqr()).sum::<T>() / T::from_usize_lossy(m);
            let w = z_power.max(floor).powf(T::lit(self.cfg.p / 2.0 - 1.0));
            let gamma = T::lit(self.cfg.gamma);
            rank_one_inverse_update_in_place(&mut self.inv_corr, x, w, gamma, &mut self.scratch)?;
            // G += k z^H with the shared gain k.
            let gm = self.pred.as_mut_slice();
            for (i, k) in self.scratch.gain().enumerate() {
                for (ch, zc) in z.iter().enumerate() {
                    gm[i * m + ch] = gm[i * m + ch] + k * zc.conj();
                }
            }
        }
        self.history.push(y);
        Ok(())
    }

    pub fn step(&mut self, y: &[C<T>]) -> Result<CVec<T>, WpeError> {
        let mut z = CVec::zeros(self.cfg.n_mics);
        self.step_into(y, &mut z)?;
        Ok(z)
    }
}
