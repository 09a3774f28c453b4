use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};
use wblcmp::linalg::CVec;
use wblcmp::scalar::C;
use wblcmp::scenario::{FrameLabel, Interval, SignalDescriptor};
use wblcmp::{ScenarioBundle, ScenarioSpec, StftConfig};

pub const MIXTURE_WAV: &str = "mixture.wav";
pub const REFERENCE_WAV: &str = "reference.wav";
pub const SIDECAR: &str = "scenario.toml";

/// Name of the resolved-config echo a command writes next to its outputs.
pub fn config_echo(command: &str) -> String {
    format!("{command}.config.toml")
}

/// Writes 32-bit float PCM, one inner vector per channel.
pub fn write_wav(path: &Path, channels: &[&[f64]], sample_rate: f64) -> Result<()> {
    ensure!(!channels.is_empty(), "no channels to write to {}", path.display());
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: sample_rate.round() as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    let len = channels[0].len();
    for i in 0..len {
        for ch in channels {
            w.write_sample(ch[i] as f32)?;
        }
    }
    w.finalize().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads any float or integer PCM WAV into per-channel `f64` samples.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut r = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = r.spec();
    let n = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<Result<_, _>>()?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n.max(1)); n];
    for frame in interleaved.chunks_exact(n) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    Ok((channels, spec.sample_rate as f64))
}

pub fn check_rate(path: &Path, got: f64, expected: f64) -> Result<()> {
    if (got - expected).abs() > 0.5 {
        bail!("{} is sampled at {got} Hz, expected {expected} Hz", path.display());
    }
    Ok(())
}

/// Loads every clip the scenario refers to, as mono at the scenario rate.
/// Multichannel files contribute their first channel.
pub fn load_clips(spec: &ScenarioSpec) -> Result<HashMap<String, Vec<f64>>> {
    let mut clips = HashMap::new();
    for src in &spec.sources {
        if let SignalDescriptor::Clip { path } = &src.signal {
            if clips.contains_key(path) {
                continue;
            }
            let p = PathBuf::from(path);
            let (mut chans, fs) = read_wav(&p).with_context(|| format!("loading clip {path}"))?;
            check_rate(&p, fs, spec.sample_rate)?;
            ensure!(!chans.is_empty(), "clip {path} has no channels");
            clips.insert(path.clone(), chans.swap_remove(0));
        }
    }
    Ok(clips)
}

/// Everything about a rendered scenario that is not audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub ref_mics: (usize, usize),
    pub target_interval: Interval,
    pub n_samples: usize,
    pub labels: Vec<FrameLabel>,
    pub stft: StftConfig,
    pub spec: ScenarioSpec,
    /// `oracle_rtfs[target][bin][mic] = [re, im]`, normalized to the left
    /// reference.
    pub oracle_rtfs: Vec<Vec<Vec<[f64; 2]>>>,
}

impl Sidecar {
    pub fn from_bundle(b: &ScenarioBundle) -> Self {
        let oracle_rtfs = (0..b.spec.target_indices().len())
            .filter_map(|k| b.target_rtfs(k))
            .map(|bins| bins.iter().map(|v| v.iter().map(|c| [c.re, c.im]).collect()).collect())
            .collect();
        Self {
            ref_mics: b.spec.ref_mics,
            target_interval: b.target_interval(),
            n_samples: b.n_samples(),
            labels: b.labels.clone(),
            stft: b.stft,
            spec: b.spec.clone(),
            oracle_rtfs,
        }
    }

    pub fn oracle(&self) -> Vec<Vec<CVec<f64>>> {
        self.oracle_rtfs
            .iter()
            .map(|bins| bins.iter().map(|v| CVec::from_vec(v.iter().map(|&[re, im]| C::new(re, im)).collect())).collect())
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| {
            format!(
                "scenario sidecar {} not found; `wblcmp simulate --out <dir>` writes it next to {MIXTURE_WAV} \
                 (enhance also accepts --sidecar <path>)",
                path.display()
            )
        })?;
        toml::from_str(&text).with_context(|| format!("parsing sidecar {}", path.display()))
    }
}
