use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_spaces::SpaceNorm;
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub box_length: f64,
    #[serde(rename = "N")]
    pub points_per_axis: usize,
    pub dealias: f64,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.box_length, self.points_per_axis, self.dealias)
    }
}

impl From<GridSpec> for GridConfig {
    fn from(g: GridSpec) -> Self {
        Self { box_length: g.box_length(), points_per_axis: g.points_per_axis(), dealias: g.dealias_fraction() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// `V = 0`; `w0` random with rms `amplitude`.
    #[serde(rename = "zero_V")]
    ZeroV,
    /// `V(t) = V0` homogeneous of degree `-1` with size `amplitude`.
    #[serde(rename = "small_stationary_V")]
    SmallStationaryV,
    /// Mild solution from homogeneous data of size `amplitude`.
    #[serde(rename = "self_similar_V")]
    SelfSimilarV,
    /// Large homogeneous `u0` of size `amplitude`, split at height `R`.
    #[serde(rename = "calderon_split")]
    CalderonSplit,
}

impl Scenario {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::ZeroV => "zero_V",
            Self::SmallStationaryV => "small_stationary_V",
            Self::SelfSimilarV => "self_similar_V",
            Self::CalderonSplit => "calderon_split",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_V" => Ok(Self::ZeroV),
            "small_stationary_V" => Ok(Self::SmallStationaryV),
            "self_similar_V" => Ok(Self::SelfSimilarV),
            "calderon_split" => Ok(Self::CalderonSplit),
            _ => Err(Error::Config(format!("unknown scenario {s:?}"))),
        }
    }
}

/// One experiment, read from a TOML file whose keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub space: SpaceNorm,
    pub amplitude: f64,
    pub seed: u64,
    pub t_max: f64,
    pub dt: f64,
    pub alpha: f64,
    pub hardy_trials: usize,
    pub output_dir: PathBuf,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub grid: GridConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("field `{field}`: {why}")));
        if let Err(e) = self.grid.spec() {
            return bad("grid", &e.to_string());
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return bad("amplitude", "must be positive and finite");
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return bad("t_max", "must be nonnegative and finite");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt", "must be positive and finite");
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha", "must be positive");
        }
        if self.hardy_trials == 0 {
            return bad("hardy_trials", "at least one trial is required");
        }
        if let SpaceNorm::Morrey3p { p } = self.space {
            if !(p > 2.0 && p <= 3.0) {
                return bad("space", "Morrey exponent must lie in (2, 3]");
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        self.grid.spec()
    }
}
