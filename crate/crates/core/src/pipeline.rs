//! End-to-end enhancement: per bin, MIMO-WPE feeds the RTF tracker whose
//! estimates constrain the wBLCMP beamformer. Also hosts the time-constant
//! sweep used to compare adaptive and non-adaptive processing.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use rustfft::FftNum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamformer::{
    batch_solve, gamma_from_time_constant, initial_loading, BeamformerConfig, BeamformerError, BinBeamformerState,
};
use crate::linalg::CVec;
use crate::metrics::{evaluate, MetricReport, MetricsError};
use crate::rtf::{hermitian_angle, RtfEstimatorState, RtfTrackerConfig, TargetTracking};
use crate::scalar::{Real, C};
use crate::scenario::{FrameLabel, ScenarioBundle};
use crate::stft::{analyze, synthesize, SpectralTensor, StftConfig, StftError};
use crate::wpe::{wpe_init, WpeConfig, WpeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("mixture has {got} channels, configuration expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("{got} frame labels for {expected} frames")]
    LabelMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Stft(#[from] StftError),
    #[error("WPE failed in bin {bin}, frame {frame}: {source}")]
    Wpe { bin: usize, frame: usize, source: WpeError },
    #[error("beamformer failed in bin {bin}, frame {frame}: {source}")]
    Beamformer { bin: usize, frame: usize, source: BeamformerError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Adaptive,
    NonAdaptive,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Adaptive => "adaptive",
            Self::NonAdaptive => "non-adaptive",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "non-adaptive" => Ok(Self::NonAdaptive),
            _ => Err(format!("unknown mode `{s}` (expected adaptive or non-adaptive)")),
        }
    }
}

/// WPE overrides; unset fields follow the beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct WpeSettings {
    pub filter_len: Option<usize>,
    pub delay: Option<usize>,
    pub gamma: Option<f64>,
    pub p: Option<f64>,
    pub reg: Option<f64>,
}

/// Target covariance tracking; unset `gamma_cov` follows the beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RtfSettings {
    pub gamma_cov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub stft: StftConfig,
    pub beamformer: BeamformerConfig,
    #[serde(default)]
    pub wpe: WpeSettings,
    #[serde(default)]
    pub rtf: RtfSettings,
    pub mode: Mode,
}

impl EnhanceConfig {
    pub fn paper_defaults(n_mics: usize, ref_mics: (usize, usize)) -> Self {
        Self {
            stft: StftConfig::default(),
            beamformer: BeamformerConfig::paper_defaults(n_mics, ref_mics),
            wpe: WpeSettings::default(),
            rtf: RtfSettings::default(),
            mode: Mode::Adaptive,
        }
    }

    /// Sets `gamma` from a time constant in seconds at the configured shift.
    pub fn set_time_constant(&mut self, t_gamma_s: f64) {
        self.beamformer.gamma = gamma_from_time_constant(self.stft.shift_seconds(), t_gamma_s);
    }

    /// Beamformer configuration actually used: non-adaptive runs use the
    /// growing window.
    pub fn effective_beamformer(&self) -> BeamformerConfig {
        let mut bf = self.beamformer.clone();
        if self.mode == Mode::NonAdaptive {
            bf.gamma = 1.0;
        }
        bf
    }

    fn wpe_config(&self, reg: f64) -> WpeConfig {
        let bf = self.effective_beamformer();
        WpeConfig {
            n_mics: bf.n_mics,
            filter_len: self.wpe.filter_len.unwrap_or(bf.filter_len),
            delay: self.wpe.delay.unwrap_or(bf.delay),
            gamma: if self.mode == Mode::NonAdaptive { 1.0 } else { self.wpe.gamma.unwrap_or(bf.gamma) },
            p: self.wpe.p.unwrap_or(bf.p),
            reg,
        }
    }

    fn tracking(&self) -> TargetTracking {
        match self.mode {
            Mode::Adaptive => TargetTracking::Exponential { gamma: self.rtf.gamma_cov.unwrap_or(self.beamformer.gamma) },
            Mode::NonAdaptive => TargetTracking::Cumulative,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: String| PipelineError::ConfigInvalid(e);
        self.stft.validate()?;
        self.effective_beamformer().validate().map_err(|e| invalid(e.to_string()))?;
        self.wpe_config(self.wpe.reg.unwrap_or(1.0)).validate().map_err(|e| invalid(e.to_string()))?;
        if let TargetTracking::Exponential { gamma } = self.tracking() {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(invalid(format!("gamma_cov must lie in (0, 1], got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Per-frame diagnostics aggregated over bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub frame: usize,
    pub time: f64,
    pub label: FrameLabel,
    /// Mean Hermitian angle to the active target's oracle RTF over bins
    /// (DC and Nyquist excluded), when both are available.
    pub mean_herm_angle: Option<f64>,
    pub weight_mean: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub max_violation: f64,
    pub singular_bins: usize,
    pub n_constraints: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced<T> {
    /// Left and right outputs, aligned with and as long as the input.
    pub outputs: [Vec<T>; 2],
    pub trace: Vec<FrameTrace>,
    /// IRLS objective per iteration summed over bins (non-adaptive only).
    pub batch_objective: Vec<f64>,
}

impl<T> Enhanced<T> {
    /// Mean of the per-frame angles over target-active frames.
    pub fn mean_herm_angle(&self) -> Option<f64> {
        let vals: Vec<f64> = self.trace.iter().filter_map(|f| f.mean_herm_angle).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn max_violation(&self) -> f64 {
        self.trace.iter().map(|f| f.max_violation).fold(0.0, f64::max)
    }
}

struct BinResult<T> {
    outputs: [Vec<C<T>>; 2],
    weights: Vec<f64>,
    violations: Vec<f64>,
    singular: Vec<bool>,
    n_constraints: Vec<usize>,
    angles: Vec<Option<f64>>,
    objective: Vec<f64>,
}

/// Oracle RTFs per target (declaration order) and bin.
pub type OracleRtfs<'a> = &'a [&'a [CVec<f64>]];

fn angle_to_oracle<T: Real>(est: Option<&CVec<T>>, label: FrameLabel, oracle: Option<OracleRtfs>, bin: usize, n_bins: usize) -> Option<f64> {
    let (FrameLabel::Target(k), Some(oracle), Some(est)) = (label, oracle, est) else {
        return None;
    };
    if bin == 0 || bin + 1 == n_bins {
        return None;
    }
    let truth = oracle.get(k)?.get(bin)?;
    let est: Vec<C<f64>> = est.iter().map(|z| C::new(z.re.to_f64_lossy(), z.im.to_f64_lossy())).collect();
    hermitian_angle(&est, truth).ok()
}

fn process_bin<T: Real>(
    frames: Vec<Vec<C<T>>>,
    labels: &[FrameLabel],
    cfg: &EnhanceConfig,
    bin: usize,
    n_bins: usize,
    oracle: Option<OracleRtfs>,
) -> Result<BinResult<T>> {
    let bf = cfg.effective_beamformer();
    let n = frames.len();
    let wpe_cfg = {
        let p = cfg.wpe.p.unwrap_or(bf.p);
        cfg.wpe_config(cfg.wpe.reg.unwrap_or_else(|| initial_loading(&frames, p)))
    };
    let mut wpe = wpe_init::<T>(&wpe_cfg).map_err(|source| PipelineError::Wpe { bin, frame: 0, source })?;
    let mut tracker = RtfEstimatorState::<T>::new(RtfTrackerConfig {
        n_mics: bf.n_mics,
        ref_mic: bf.ref_mics.0,
        tracking: cfg.tracking(),
    });
    let delta = bf.init_reg.unwrap_or_else(|| initial_loading(&frames, bf.p));
    let mut z = vec![C::new(T::zero(), T::zero()); bf.n_mics];

    match cfg.mode {
        Mode::Adaptive => {
            let mut state =
                BinBeamformerState::<T>::new(&bf, delta).map_err(|source| PipelineError::Beamformer { bin, frame: 0, source })?;
            let mut res = BinResult {
                outputs: [Vec::with_capacity(n), Vec::with_capacity(n)],
                weights: Vec::with_capacity(n),
                violations: Vec::with_capacity(n),
                singular: Vec::with_capacity(n),
                n_constraints: Vec::with_capacity(n),
                angles: Vec::with_capacity(n),
                objective: Vec::new(),
            };
            for (t, y) in frames.iter().enumerate() {
                wpe.step_into(y, &mut z).map_err(|source| PipelineError::Wpe { bin, frame: t, source })?;
                tracker.update(&z, labels[t]);
                let rt = tracker.rtf_target();
                let rep = state
                    .online_step(y, rt.map(|v| &v[..]), tracker.rtf_interferer().map(|v| &v[..]))
                    .map_err(|source| PipelineError::Beamformer { bin, frame: t, source })?;
                res.outputs[0].push(rep.outputs[0]);
                res.outputs[1].push(rep.outputs[1]);
                res.weights.push(rep.weight.to_f64_lossy());
                res.violations.push(rep.violation.to_f64_lossy());
                res.singular.push(rep.singular);
                res.n_constraints.push(rep.n_constraints);
                res.angles.push(angle_to_oracle(rt, labels[t], oracle, bin, n_bins));
            }
            Ok(res)
        }
        Mode::NonAdaptive => {
            for (t, y) in frames.iter().enumerate() {
                wpe.step_into(y, &mut z).map_err(|source| PipelineError::Wpe { bin, frame: t, source })?;
                tracker.update(&z, labels[t]);
            }
            tracker.freeze_interferer();
            let target = tracker.rtf_target().cloned().unwrap_or_else(|| CVec::basis(bf.n_mics, bf.ref_mics.0));
            let interferer = tracker.rtf_interferer().cloned();
            let mut bf_solve = bf.clone();
            bf_solve.gamma = 1.0;
            let (out, singular) = match batch_solve(&frames, &target, interferer.as_ref().map(|v| &v[..]), &bf_solve, delta) {
                Ok(out) => (out, false),
                Err(BeamformerError::SingularConstraintGram { .. }) => {
                    // Fall back to the target constraint alone.
                    let out = batch_solve(&frames, &target, None, &bf_solve, delta)
                        .map_err(|source| PipelineError::Beamformer { bin, frame: n, source })?;
                    (out, true)
                }
                Err(source) => return Err(PipelineError::Beamformer { bin, frame: n, source }),
            };
            let j = 1 + usize::from(interferer.is_some() && !singular);
            let est = tracker.rtf_target();
            Ok(BinResult {
                weights: out.weights.iter().map(|w| w.to_f64_lossy()).collect(),
                violations: vec![out.max_violation.to_f64_lossy(); n],
                singular: vec![singular; n],
                n_constraints: vec![j; n],
                angles: labels.iter().map(|&l| angle_to_oracle(est, l, oracle, bin, n_bins)).collect(),
                objective: out.objective.clone(),
                outputs: out.outputs,
            })
        }
    }
}

/// Enhances a multichannel mixture. `labels` holds one oracle label per
/// STFT frame; `oracle` optionally enables the Hermitian-angle trace.
pub fn enhance<T: Real + FftNum>(
    mixture: &[Vec<T>],
    labels: &[FrameLabel],
    cfg: &EnhanceConfig,
    oracle: Option<OracleRtfs>,
) -> Result<Enhanced<T>> {
    cfg.validate()?;
    let m = cfg.beamformer.n_mics;
    if mixture.len() != m {
        return Err(PipelineError::ChannelMismatch { expected: m, got: mixture.len() });
    }
    let len = mixture[0].len();
    let spec = analyze(mixture, &cfg.stft)?;
    let (n_frames, n_bins) = (spec.n_frames(), spec.n_bins());
    if labels.len() != n_frames {
        return Err(PipelineError::LabelMismatch { expected: n_frames, got: labels.len() });
    }

    let results: Vec<BinResult<T>> = (0..n_bins)
        .into_par_iter()
        .map(|bin| {
            let frames: Vec<Vec<C<T>>> = (0..n_frames).map(|t| spec.frame_bin(t, bin).to_vec()).collect();
            process_bin(frames, labels, cfg, bin, n_bins, oracle)
        })
        .collect::<Result<_>>()?;

    let mut out = SpectralTensor::<T>::zeros(n_frames, n_bins, 2);
    for (bin, r) in results.iter().enumerate() {
        for t in 0..n_frames {
            out.set(t, bin, 0, r.outputs[0][t]);
            out.set(t, bin, 1, r.outputs[1][t]);
        }
    }
    let mut audio = synthesize(&out, &cfg.stft)?;
    for ch in &mut audio {
        ch.truncate(len);
    }
    let outputs = [audio.remove(0), audio.remove(0)];

    let trace = (0..n_frames)
        .map(|t| {
            let ws = results.iter().map(|r| r.weights[t]);
            let angles: Vec<f64> = results.iter().filter_map(|r| r.angles[t]).collect();
            FrameTrace {
                frame: t,
                time: cfg.stft.frame_center(t) as f64 / cfg.stft.sample_rate,
                label: labels[t],
                mean_herm_angle: (!angles.is_empty()).then(|| angles.iter().sum::<f64>() / angles.len() as f64),
                weight_mean: ws.clone().sum::<f64>() / n_bins as f64,
                weight_min: ws.clone().fold(f64::INFINITY, f64::min),
                weight_max: ws.fold(f64::NEG_INFINITY, f64::max),
                max_violation: results.iter().map(|r| r.violations[t]).fold(0.0, f64::max),
                singular_bins: results.iter().filter(|r| r.singular[t]).count(),
                n_constraints: results.iter().map(|r| r.n_constraints[t]).max().unwrap_or(0),
            }
        })
        .collect();

    let iters = results.iter().map(|r| r.objective.len()).max().unwrap_or(0);
    let batch_objective = (0..iters).map(|i| results.iter().filter_map(|r| r.objective.get(i)).sum()).collect();
    Ok(Enhanced { outputs, trace, batch_objective })
}

/// Enhances a rendered scenario and scores the result over the target-active
/// interval.
pub fn run_scenario(bundle: &ScenarioBundle, cfg: &EnhanceConfig) -> Result<(Enhanced<f64>, MetricReport)> {
    let oracle: Vec<&[CVec<f64>]> =
        (0..bundle.spec.target_indices().len()).filter_map(|k| bundle.target_rtfs(k)).collect();
    let enhanced = enhance(&bundle.mixture, &bundle.labels, cfg, Some(&oracle))?;
    let report = evaluate_bundle(bundle, [&enhanced.outputs[0], &enhanced.outputs[1]])?;
    Ok((enhanced, report))
}

pub fn evaluate_bundle(bundle: &ScenarioBundle, enhanced: [&[f64]; 2]) -> Result<MetricReport> {
    let (l, r) = bundle.spec.ref_mics;
    Ok(evaluate(
        [&bundle.reference_direct[0], &bundle.reference_direct[1]],
        [&bundle.mixture[l], &bundle.mixture[r]],
        enhanced,
        bundle.spec.sample_rate,
        bundle.target_interval(),
    )?)
}

/// Time constants of the published comparison, in seconds.
pub const PAPER_T_GAMMAS: [f64; 9] = [0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5];
pub const PAPER_PS: [f64; 2] = [0.0, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Seconds; infinite for non-adaptive rows.
    pub t_gamma: f64,
    pub p: f64,
    pub mode: Mode,
    pub delta_fwssnr: f64,
    pub delta_srr: f64,
    pub mean_herm_angle: Option<f64>,
    /// Wall-clock seconds, only recorded when timing is requested.
    pub runtime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub t_gamma: f64,
    pub p: f64,
    pub mode: Mode,
    pub error: PipelineError,
}

/// Runs every `(t_gamma, p)` adaptive cell plus one non-adaptive run per
/// `p`. Failed cells are collected and the sweep continues. Rows are sorted
/// by `(p, t_gamma)`, non-adaptive last within each `p`.
pub fn run_sweep(
    bundle: &ScenarioBundle,
    base: &EnhanceConfig,
    t_gammas: &[f64],
    ps: &[f64],
    timing: bool,
) -> Result<(Vec<SweepRow>, Vec<SweepFailure>)> {
    if t_gammas.is_empty() || ps.is_empty() {
        return Err(PipelineError::ConfigInvalid("sweep needs at least one time constant and one p".into()));
    }
    if t_gammas.iter().chain(ps).any(|v| !v.is_finite()) || t_gammas.iter().any(|&t| t <= 0.0) {
        return Err(PipelineError::ConfigInvalid("sweep values must be finite and time constants positive".into()));
    }
    let mut cells: Vec<(f64, f64, Mode)> = Vec::new();
    for &p in ps {
        for &t in t_gammas {
            cells.push((t, p, Mode::Adaptive));
        }
        cells.push((f64::INFINITY, p, Mode::NonAdaptive));
    }
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for (t_gamma, p, mode) in cells {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.beamformer.p = p;
        cfg.set_time_constant(t_gamma);
        let start = Instant::now();
        match run_scenario(bundle, &cfg) {
            Ok((enh, rep)) => rows.push(SweepRow {
                t_gamma,
                p,
                mode,
                delta_fwssnr: rep.delta_fwssnr,
                delta_srr: rep.delta_srr,
                mean_herm_angle: enh.mean_herm_angle(),
                runtime: timing.then(|| start.elapsed().as_secs_f64()),
            }),
            Err(error) => failures.push(SweepFailure { t_gamma, p, mode, error }),
        }
    }
    rows.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.t_gamma.total_cmp(&b.t_gamma)).then(a.mode.cmp(&b.mode)));
    Ok((rows, failures))
}

pub const SWEEP_CSV_HEADER: &str = "t_gamma,p,mode,delta_fwssnr,delta_srr,mean_herm_angle,runtime";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("# t_gamma [s] (inf = non-adaptive), delta_fwssnr [dB], delta_srr [dB], mean_herm_angle [rad], runtime [s]\n");
    s.push_str(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.t_gamma,
            r.p,
            r.mode,
            r.delta_fwssnr,
            r.delta_srr,
            opt(r.mean_herm_angle),
            opt(r.runtime)
        );
    }
    s
}

pub const TRACE_CSV_HEADER: &str =
    "frame,time,label,mean_herm_angle,weight_mean,weight_min,weight_max,max_violation,singular_bins,n_constraints";

pub fn trace_csv(trace: &[FrameTrace]) -> String {
    let mut s = String::from("# time [s], mean_herm_angle [rad]\n");
    s.push_str(TRACE_CSV_HEADER);
    s.push('\n');
    for f in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            f.frame,
            f.time,
            f.label,
            opt(f.mean_herm_angle),
            f.weight_mean,
            f.weight_min,
            f.weight_max,
            f.max_violation,
            f.singular_bins,
            f.n_constraints
        );
    }
    s
}

pub const REPORT_CSV_HEADER: &str = "fwssnr_in,fwssnr_out,delta_fwssnr,srr_in,srr_out,delta_srr,\
fwssnr_in_left,fwssnr_out_left,srr_in_left,srr_out_left,fwssnr_in_right,fwssnr_out_right,srr_in_right,srr_out_right,\
interval_start,interval_end";

pub fn report_csv(r: &MetricReport) -> String {
    let [l, rt] = r.channels;
    format!(
        "# all scores in dB, interval in s\n{REPORT_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.fwssnr_in,
        r.fwssnr_out,
        r.delta_fwssnr,
        r.srr_in,
        r.srr_out,
        r.delta_srr,
        l.fwssnr_in,
        l.fwssnr_out,
        l.srr_in,
        l.srr_out,
        rt.fwssnr_in,
        rt.fwssnr_out,
        rt.srr_in,
        rt.srr_out,
        r.interval.start,
        r.interval.end
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings() {
        assert_eq!("adaptive".parse::<Mode>().unwrap(), Mode::Adaptive);
        assert_eq!(Mode::NonAdaptive.to_string(), "non-adaptive");
        assert!("batch".parse::<Mode>().is_err());
    }

    #[test]
    fn non_adaptive_forces_growing_window() {
        let mut cfg = EnhanceConfig::paper_defaults(4, (0, 2));
        cfg.mode = Mode::NonAdaptive;
        assert_eq!(cfg.effective_beamformer().gamma, 1.0);
        assert_eq!(cfg.wpe_config(1.0).gamma, 1.0);
        assert_eq!(cfg.tracking(), TargetTracking::Cumulative);
    }

    #[test]
    fn wpe_defaults_follow_beamformer() {
        let mut cfg = EnhanceConfig::paper_defaults(4, (0, 2));
        cfg.set_time_constant(0.2);
        let w = cfg.wpe_config(1.0);
        assert_eq!((w.filter_len, w.delay, w.p), (16, 3, 0.5));
        assert!((w.gamma - (-0.016f64 / 0.2).exp()).abs() < 1e-12);
        cfg.wpe.p = Some(0.0);
        assert_eq!(cfg.wpe_config(1.0).p, 0.0);
    }

    #[test]
    fn csv_layout() {
        let rows = vec![SweepRow {
            t_gamma: f64::INFINITY,
            p: 0.5,
            mode: Mode::NonAdaptive,
            delta_fwssnr: 1.25,
            delta_srr: -0.5,
            mean_herm_angle: None,
            runtime: None,
        }];
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], SWEEP_CSV_HEADER);
        assert_eq!(lines[2], "inf,0.5,non-adaptive,1.25,-0.5,,");
    }
}
