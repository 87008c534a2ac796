//! Run configuration: TOML on disk, JSON accepted for configs echoed in reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::fitness::BetaRule;
use crate::imc::HardwareConfig;
use crate::quant::{QuantSpec, Rounding};
use crate::search::{Constraints, SearchProblem};
use crate::spike::LifParams;

/// Fractional bits: `"auto"` means `bit_w - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FracBits {
    #[default]
    Auto,
    Fixed(u32),
}

impl Serialize for FracBits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FracBits::Auto => s.serialize_str("auto"),
            FracBits::Fixed(f) => s.serialize_u32(*f),
        }
    }
}

impl<'de> Deserialize<'de> for FracBits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(f) => Ok(FracBits::Fixed(f)),
            Raw::Text(t) if t == "auto" => Ok(FracBits::Auto),
            Raw::Text(t) => Err(de::Error::custom(format!("expected \"auto\" or an integer, got {t:?}"))),
        }
    }
}

/// Weight precision. Device bits per cell live in `hw.bits_per_cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub bit_w: u32,
    pub rounding: Rounding,
    pub frac_bits: FracBits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitnessConfig {
    pub beta: BetaRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_seed: u64,
    pub base_channels: usize,
    pub num_classes: usize,
    pub batch_path: PathBuf,
    pub output_path: PathBuf,
    pub trace: bool,
    /// Worker threads, 0 = auto. Never affects results, so it is left out of
    /// serialized echoes.
    #[serde(default, skip_serializing)]
    pub workers: usize,
    pub constraints: Constraints,
    pub quant: QuantConfig,
    pub lif: LifParams,
    pub fitness: FitnessConfig,
    pub hw: HardwareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_seed: 0,
            base_channels: 64,
            num_classes: 10,
            batch_path: PathBuf::from("batch.nnas"),
            output_path: PathBuf::from("report.json"),
            trace: false,
            workers: 0,
            constraints: Constraints::default(),
            quant: QuantConfig {
                bit_w: 8,
                rounding: Rounding::NearestEven,
                frac_bits: FracBits::Auto,
            },
            lif: LifParams::default(),
            fitness: FitnessConfig::default(),
            hw: HardwareConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn quant_spec(&self) -> Result<QuantSpec> {
        let q = &self.quant;
        let frac = match q.frac_bits {
            FracBits::Auto => q.bit_w.saturating_sub(1),
            FracBits::Fixed(f) => f,
        };
        let spec = QuantSpec {
            bit_w: q.bit_w,
            bit_d: self.hw.bits_per_cell,
            rounding: q.rounding,
            frac_bits: frac,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every nested invariant; budgets must be strictly positive here.
    pub fn validate(&self) -> Result<()> {
        let c = &self.constraints;
        for (key, v) in [
            ("mem_params_max", c.mem_params_max),
            ("area_mm2_max", c.area_mm2_max),
            ("latency_ms_max", c.latency_ms_max),
            ("energy_uj_max", c.energy_uj_max),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::config(format!("constraints.{key}"), "must be positive"));
            }
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        self.quant_spec()?;
        self.lif.validate()?;
        self.fitness.beta.validate()?;
        self.hw.validate()
    }

    pub fn problem(&self, batch: Batch) -> Result<SearchProblem> {
        Ok(SearchProblem {
            constraints: self.constraints,
            hw: self.hw,
            quant: self.quant_spec()?,
            lif: self.lif,
            beta: self.fitness.beta,
            base_channels: self.base_channels,
            num_classes: self.num_classes,
            run_seed: self.run_seed,
            batch,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

fn parse_error(path: &Path, message: impl fmt::Display) -> Error {
    Error::ConfigParse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Parses a config from text. JSON input may be a bare config or a report,
/// in which case its echoed config is used.
pub fn parse_config(text: &str, json: bool, path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = if json {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, e))?;
        if let Some(echo) = value.pointer_mut("/canonical/config") {
            value = echo.take();
        }
        serde_json::from_value(value).map_err(|e| parse_error(path, e))?
    } else {
        toml::from_str(text).map_err(|e| parse_error(path, e))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads `.json` files as JSON and anything else as TOML.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_config(&text, json, path)
}
