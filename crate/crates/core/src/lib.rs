//! Adaptive sparse convolutional beamforming (wBLCMP) for binaural hearing
//! devices: joint dereverberation, noise and interferer reduction with
//! per-frame tracking of the target relative transfer function.
//!
//! Numeric modules are generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common choices. Scenario synthesis and metrics run
//! in `f64`.
//!
//! `f32` is fine for the STFT, the metrics and short stacks, but the
//! recursive inverse of a large, badly conditioned STCM (the default
//! 56-dimensional stack with coherent low-frequency noise) drifts out of
//! definiteness in single precision. Use `f64` for the default settings.

pub mod beamformer;
pub mod frames;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod rtf;
pub mod scalar;
pub mod scenario;
pub mod stft;
pub mod wpe;

pub use beamformer::{BeamformerConfig, BinBeamformerState};
pub use pipeline::{enhance, run_scenario, run_sweep, EnhanceConfig, Mode, SweepRow};
pub use scenario::{build_scenario, ScenarioBundle, ScenarioSpec};
pub use stft::StftConfig;

pub type CVecF64 = linalg::CVec<f64>;
pub type CVecF32 = linalg::CVec<f32>;
pub type CMatF64 = linalg::CMat<f64>;
pub type CMatF32 = linalg::CMat<f32>;
pub type SpectralTensorF64 = stft::SpectralTensor<f64>;
pub type SpectralTensorF32 = stft::SpectralTensor<f32>;
pub type BinBeamformerF64 = beamformer::BinBeamformerState<f64>;
pub type BinBeamformerF32 = beamformer::BinBeamformerState<f32>;
pub type WpeBinStateF64 = wpe::WpeBinState<f64>;
pub type WpeBinStateF32 = wpe::WpeBinState<f32>;
pub type RtfEstimatorF64 = rtf::RtfEstimatorState<f64>;
pub type RtfEstimatorF32 = rtf::RtfEstimatorState<f32>;
