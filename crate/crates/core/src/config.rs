//! TOML configuration files.
//!
//! Two files drive a run. The technology file holds `[tech]` (every
//! [`TechParams`] field, all optional), the conventional reference plane and
//! a record of the calibration that produced it. The system file holds the
//! PIM device (`[topology]`, `[plane]`, `[cores]`), the baseline device it is
//! compared against (`[baseline]`), and the sweep grids (`[sweep]`). Missing
//! tables and keys fall back to the shipped defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationResult, CalibrationTargets, Residual};
use crate::dse::SweepAxis;
use crate::error::Result;
use crate::interconnect::FlashTopology;
use crate::tech::{PlaneConfig, TechParams};
use crate::workload::CoreParams;

pub const DEFAULT_TECH_TOML: &str = include_str!("../data/tech_default.toml");
pub const DEFAULT_SYSTEM_TOML: &str = include_str!("../data/system_default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationRecord {
    pub targets: CalibrationTargets,
    pub residuals: Vec<Residual>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TechFile {
    pub tech: TechParams,
    pub conventional_plane: PlaneConfig,
    pub calibration: Option<CalibrationRecord>,
}

impl Default for TechFile {
    fn default() -> Self {
        Self { tech: TechParams::default(), conventional_plane: PlaneConfig::conventional(), calibration: None }
    }
}

impl TechFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: TechFile = toml::from_str(text)?;
        f.tech.validate()?;
        f.conventional_plane.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_TECH_TOML).expect("shipped technology file parses")
    }

    pub fn from_calibration(res: &CalibrationResult, targets: &CalibrationTargets) -> Self {
        Self {
            tech: res.tech.clone(),
            conventional_plane: targets.conventional_plane,
            calibration: Some(CalibrationRecord { targets: targets.clone(), residuals: res.residuals.clone() }),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Parse(e.to_string()))
    }
}

/// The device compared against, built from regular storage planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub topology: FlashTopology,
    pub plane: PlaneConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { topology: FlashTopology::conventional(), plane: PlaneConfig::conventional() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrids {
    pub n_row: Vec<u32>,
    pub n_col: Vec<u32>,
    pub n_stack: Vec<u32>,
    pub fixed: PlaneConfig,
    /// Latency budget of plane selection (s).
    pub select_budget_s: f64,
}

impl Default for SweepGrids {
    fn default() -> Self {
        Self {
            n_row: SweepAxis::NRow.default_values(),
            n_col: SweepAxis::NCol.default_values(),
            n_stack: SweepAxis::NStack.default_values(),
            fixed: crate::dse::sweep_baseline(),
            select_budget_s: 2.2e-6,
        }
    }
}

impl SweepGrids {
    pub fn values(&self, axis: SweepAxis) -> &[u32] {
        match axis {
            SweepAxis::NRow => &self.n_row,
            SweepAxis::NCol => &self.n_col,
            SweepAxis::NStack => &self.n_stack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub topology: FlashTopology,
    pub plane: PlaneConfig,
    pub cores: CoreParams,
    pub baseline: BaselineConfig,
    pub sweep: SweepGrids,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            topology: FlashTopology::default(),
            plane: PlaneConfig::size_a(),
            cores: CoreParams::default(),
            baseline: BaselineConfig::default(),
            sweep: SweepGrids::default(),
        }
    }
}

impl SystemConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let s: SystemConfig = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_SYSTEM_TOML).expect("shipped system file parses")
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.plane.validate()?;
        self.cores.validate()?;
        self.baseline.topology.validate()?;
        self.baseline.plane.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_files_match_defaults() {
        assert_eq!(TechFile::shipped().tech, TechParams::default());
        assert_eq!(TechFile::shipped().conventional_plane, PlaneConfig::conventional());
        assert_eq!(SystemConfig::shipped(), SystemConfig::default());
    }

    #[test]
    fn empty_files_are_defaults() {
        assert_eq!(TechFile::parse("").unwrap(), TechFile::default());
        assert_eq!(SystemConfig::parse("").unwrap(), SystemConfig::default());
    }

    #[test]
    fn partial_override() {
        let f = TechFile::parse("[tech]\nt_sense = 1e-7\n").unwrap();
        assert_eq!(f.tech.t_sense, 1e-7);
        assert_eq!(f.tech.horowitz_k, TechParams::default().horowitz_k);
        let s = SystemConfig::parse("[topology]\nn_channel = 4\n").unwrap();
        assert_eq!(s.topology.n_channel, 4);
        assert_eq!(s.topology.n_plane, 256);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TechFile::parse("[tech]\nbogus = 1\n").is_err());
        assert!(TechFile::parse("[tech]\nalpha_input = 2.0\n").is_err());
        assert!(SystemConfig::parse("[topology]\nslc_dies_per_way = 5\n").is_err());
        assert!(SystemConfig::parse("[plane]\nn_row = 6\n").is_err());
    }
}
