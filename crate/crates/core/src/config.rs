//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::{McmcConfig, Priors};
use crate::interp::{DEFAULT_IDW_POWER, DEFAULT_MIN_HOURS};
use crate::predict::{PredictionMode, DEFAULT_MAX_KRIGING_DRAWS};
use crate::traffic::{RingSpec, DEFAULT_EXPOSURE_SCALE, DEFAULT_TARGET_LEN_M};
use crate::validate::DEFAULT_BIN_WIDTH_KM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Longitudinal,
    #[default]
    Spatial,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Longitudinal => "longitudinal",
            ModelKind::Spatial => "spatial",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "longitudinal" => Ok(ModelKind::Longitudinal),
            "spatial" => Ok(ModelKind::Spatial),
            _ => Err(format!("unknown model '{s}' (expected linear, longitudinal or spatial)")),
        }
    }
}

/// `"single"`, `"multi"`, or explicit boundaries in meters (a leading 0 is
/// optional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rings {
    Named(RingPreset),
    Boundaries(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingPreset {
    Single,
    Multi,
}

impl Default for Rings {
    fn default() -> Self {
        Rings::Named(RingPreset::Single)
    }
}

impl Rings {
    pub fn spec(&self) -> Result<RingSpec> {
        match self {
            Rings::Named(RingPreset::Single) => Ok(RingSpec::default_single()),
            Rings::Named(RingPreset::Multi) => Ok(RingSpec::multi_step()),
            Rings::Boundaries(b) => {
                let mut v = b.clone();
                if v.first() != Some(&0.0) {
                    v.insert(0, 0.0);
                }
                RingSpec::new(v)
            }
        }
    }
}

impl FromStr for Rings {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(Rings::Named(RingPreset::Single)),
            "multi" => Ok(Rings::Named(RingPreset::Multi)),
            _ => s
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad ring boundary '{t}': {e}")))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Rings::Boundaries),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub monitors: PathBuf,
    pub sites: PathBuf,
    pub roads: PathBuf,
    /// CSV of `site_id,role` with role `learning` or `validation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureSettings {
    pub rings: Rings,
    pub target_len_m: f64,
    /// Raw vehicle-meters are divided by this before fitting.
    pub scale: f64,
}

impl Default for ExposureSettings {
    fn default() -> Self {
        ExposureSettings { rings: Rings::default(), target_len_m: DEFAULT_TARGET_LEN_M, scale: DEFAULT_EXPOSURE_SCALE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpSettings {
    pub power: f64,
    pub min_hours: usize,
}

impl Default for InterpSettings {
    fn default() -> Self {
        InterpSettings { power: DEFAULT_IDW_POWER, min_hours: DEFAULT_MIN_HOURS }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub reml: bool,
    pub prediction: PredictionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub target_acceptance: f64,
    pub adapt_every: usize,
    pub initial_log_step: f64,
    pub distance_unit_m: f64,
    pub priors: Priors,
}

impl Default for McmcSettings {
    fn default() -> Self {
        let d = McmcConfig::default();
        McmcSettings {
            chains: d.chains,
            iterations: d.iterations,
            burn_in: d.burn_in,
            target_acceptance: d.target_acceptance,
            adapt_every: d.adapt_every,
            initial_log_step: d.initial_log_step,
            distance_unit_m: d.distance_unit_m,
            priors: d.priors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    /// Sites held out at random when no split file is given.
    pub n_validation: usize,
    pub bin_width_km: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_lag_km: Option<f64>,
    pub max_kriging_draws: usize,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            n_validation: 50,
            bin_width_km: DEFAULT_BIN_WIDTH_KM,
            max_lag_km: None,
            max_kriging_draws: DEFAULT_MAX_KRIGING_DRAWS,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    #[serde(default)]
    pub exposure: ExposureSettings,
    #[serde(default)]
    pub interp: InterpSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default)]
    pub validation: ValidationSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn new(inputs: Inputs) -> Self {
        RunConfig {
            seed: default_seed(),
            output_dir: default_output_dir(),
            inputs,
            exposure: ExposureSettings::default(),
            interp: InterpSettings::default(),
            model: ModelSettings::default(),
            mcmc: McmcSettings::default(),
            validation: ValidationSettings::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn rings(&self) -> Result<RingSpec> {
        self.exposure.rings.spec()
    }

    pub fn mcmc_config(&self) -> McmcConfig {
        let m = &self.mcmc;
        McmcConfig {
            chains: m.chains,
            iterations: m.iterations,
            burn_in: m.burn_in,
            seed: self.seed,
            priors: m.priors.clone(),
            target_acceptance: m.target_acceptance,
            adapt_every: m.adapt_every,
            initial_log_step: m.initial_log_step,
            distance_unit_m: m.distance_unit_m,
            ..McmcConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rings()?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos("exposure.target_len_m", self.exposure.target_len_m)?;
        pos("exposure.scale", self.exposure.scale)?;
        pos("interp.power", self.interp.power)?;
        pos("validation.bin_width_km", self.validation.bin_width_km)?;
        pos("mcmc.distance_unit_m", self.mcmc.distance_unit_m)?;
        if self.interp.min_hours == 0 || self.interp.min_hours > 24 {
            return Err(Error::invalid(format!("interp.min_hours must be in 1..=24, got {}", self.interp.min_hours)));
        }
        if self.model.kind == ModelKind::Spatial && (self.mcmc.chains == 0 || self.mcmc.burn_in >= self.mcmc.iterations)
        {
            return Err(Error::invalid(format!(
                "mcmc needs chains >= 1 and iterations ({}) > burn_in ({})",
                self.mcmc.iterations, self.mcmc.burn_in
            )));
        }
        Ok(())
    }

    /// SHA-256 of the effective settings, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
