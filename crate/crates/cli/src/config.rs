use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wblcmp::pipeline::{EnhanceConfig, Mode, RtfSettings, WpeSettings, PAPER_PS, PAPER_T_GAMMAS};
use wblcmp::{BeamformerConfig, ScenarioSpec, StftConfig};

use crate::Common;

/// Time constants in seconds and shape parameters of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepLists {
    pub t_gammas: Vec<f64>,
    pub ps: Vec<f64>,
}

impl Default for SweepLists {
    fn default() -> Self {
        Self { t_gammas: PAPER_T_GAMMAS.to_vec(), ps: PAPER_PS.to_vec() }
    }
}

/// Everything a run needs. Missing keys take the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub mode: Mode,
    /// Beamformer time constant in ms; overrides `beamformer.gamma` when set.
    pub t_gamma_ms: Option<f64>,
    /// Scenario file (TOML or JSON); takes precedence over `scenario`.
    pub scenario_path: Option<PathBuf>,
    pub stft: StftConfig,
    pub beamformer: BeamformerConfig,
    pub wpe: WpeSettings,
    pub rtf: RtfSettings,
    pub sweep: SweepLists,
    /// Inline scenario; the preset is used when neither this nor
    /// `scenario_path` is given.
    pub scenario: Option<ScenarioSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: ScenarioSpec::PAPER_PRESET.to_string(),
            seed: None,
            out: PathBuf::from("out"),
            mode: Mode::Adaptive,
            t_gamma_ms: None,
            scenario_path: None,
            stft: StftConfig::default(),
            beamformer: BeamformerConfig::default(),
            wpe: WpeSettings::default(),
            rtf: RtfSettings::default(),
            sweep: SweepLists::default(),
            scenario: None,
        }
    }
}

impl RunConfig {
    /// Reads the config file if given, then applies command-line overrides.
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                // relative scenario paths are relative to the config file
                if let (Some(sp), Some(dir)) = (&cfg.scenario_path, path.parent()) {
                    if sp.is_relative() {
                        cfg.scenario_path = Some(dir.join(sp));
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(out) = &common.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = common.seed {
            cfg.seed = Some(seed);
        }
        if let Some(preset) = &common.preset {
            cfg.preset = preset.clone();
        }
        if let Some(mode) = common.mode {
            cfg.mode = mode;
        }
        if let Some(p) = common.p {
            cfg.beamformer.p = p;
        }
        if let Some(t) = common.t_gamma_ms {
            cfg.t_gamma_ms = Some(t);
        }
        if let Some(t) = cfg.t_gamma_ms {
            if !(t > 0.0) {
                bail!("t_gamma_ms must be positive, got {t}");
            }
        }
        Ok(cfg)
    }

    pub fn enhance_config(&self) -> Result<EnhanceConfig> {
        let mut cfg = EnhanceConfig {
            stft: self.stft,
            beamformer: self.beamformer.clone(),
            wpe: self.wpe,
            rtf: self.rtf,
            mode: self.mode,
        };
        if let Some(t) = self.t_gamma_ms {
            cfg.set_time_constant(t * 1e-3);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scenario from file, inline table or preset, with the seed override.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let mut spec = if let Some(path) = &self.scenario_path {
            read_scenario(path)?
        } else if let Some(spec) = &self.scenario {
            spec.clone()
        } else {
            ScenarioSpec::preset(&self.preset, 1).with_context(|| {
                format!("unknown preset `{}` (available: {})", self.preset, ScenarioSpec::PAPER_PRESET)
            })?
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Fully resolved echo written next to every output.
    pub fn echo(&self, scenario: Option<&ScenarioSpec>) -> Result<String> {
        let mut resolved = self.clone();
        let enh = self.enhance_config()?;
        resolved.beamformer = enh.beamformer;
        if let Some(spec) = scenario {
            resolved.scenario = Some(spec.clone());
            resolved.scenario_path = None;
            resolved.seed = Some(spec.seed);
        }
        Ok(toml::to_string(&resolved)?)
    }
}

fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let spec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_parses_back_to_the_same_run() {
        let common = Common { t_gamma_ms: Some(200.0), ..Common::default() };
        let cfg = RunConfig::resolve(&common).unwrap();
        let spec = cfg.scenario_spec().unwrap();
        let back: RunConfig = toml::from_str(&cfg.echo(Some(&spec)).unwrap()).unwrap();
        assert_eq!(back.enhance_config().unwrap(), cfg.enhance_config().unwrap());
        assert_eq!(back.scenario_spec().unwrap(), spec);
        assert_eq!(back.sweep, SweepLists::default());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str("[beamformer]\np = 0.0\n").unwrap();
        assert_eq!(cfg.beamformer.p, 0.0);
        assert_eq!(cfg.beamformer.filter_len, 16);
        assert_eq!(cfg.beamformer.betas_db, vec![0.0, -20.0]);
        assert!(toml::from_str::<RunConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn shipped_defaults_match_builtin() {
        let text = include_str!("../../../configs/default.toml");
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let builtin = RunConfig { seed: Some(1), t_gamma_ms: Some(450.0), ..RunConfig::default() };
        assert_eq!(cfg, builtin);
        assert_eq!(cfg.enhance_config().unwrap(), RunConfig::default().enhance_config().unwrap());
    }
}
