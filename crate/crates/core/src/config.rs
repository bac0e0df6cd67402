//! JSON configuration for simulation and synthesis runs.
//!
//! ```json
//! {
//!   "tau0_ns": 26.2, "tau_p_ns": 13.3, "lambda": 0.033,
//!   "envelope": { "shape": "rising" },
//!   "grid": { "t_min_ns": -300, "t_max_ns": 300, "step_ns": 0.05 }
//! }
//! ```
//!
//! `envelope.shape` is `rising`, `decaying`, `tabulated` (with `path`, an
//! envelope CSV relative to the config file) or `cavity` (with optional
//! `cavity` parameters and `detuning_mhz`). `chain` and `bins` default to
//! the measured efficiencies and the standard histogram binning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cavity::{shape_conditional_probe, CavityParams};
use crate::dynamics::AtomParams;
use crate::envelope::{PhotonEnvelope, Profile};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::histogram::BinSpec;
use crate::io::read_envelope_csv;
use crate::synthesis::EfficiencyChain;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeConfig {
    Rising,
    #[default]
    Decaying,
    Tabulated {
        path: PathBuf,
    },
    Cavity {
        #[serde(default = "CavityParams::measured")]
        cavity: CavityParams,
        #[serde(default)]
        detuning_mhz: f64,
    },
}

impl EnvelopeConfig {
    pub fn profile(&self) -> Option<Profile> {
        match self {
            EnvelopeConfig::Rising => Some(Profile::Rising),
            EnvelopeConfig::Decaying => Some(Profile::Decaying),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EnvelopeConfig::Rising => "rising",
            EnvelopeConfig::Decaying => "decaying",
            EnvelopeConfig::Tabulated { .. } => "tabulated",
            EnvelopeConfig::Cavity { .. } => "cavity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_min_ns: f64,
    pub t_max_ns: f64,
    pub step_ns: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            t_min_ns: -300.0,
            t_max_ns: 300.0,
            step_ns: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsConfig {
    pub t_min_ns: f64,
    pub t_max_ns: f64,
    pub forward_dt_ns: f64,
    pub backward_dt_ns: f64,
}

impl Default for BinsConfig {
    fn default() -> Self {
        BinsConfig {
            t_min_ns: -300.0,
            t_max_ns: 300.0,
            forward_dt_ns: 2.0,
            backward_dt_ns: 5.0,
        }
    }
}

impl BinsConfig {
    pub fn forward(&self) -> Result<BinSpec> {
        BinSpec::from_range(self.t_min_ns, self.t_max_ns, self.forward_dt_ns)
    }

    pub fn backward(&self) -> Result<BinSpec> {
        BinSpec::from_range(self.t_min_ns, self.t_max_ns, self.backward_dt_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub tau0_ns: f64,
    pub tau_p_ns: f64,
    pub lambda: f64,
    #[serde(default)]
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "EfficiencyChain::measured")]
    pub chain: EfficiencyChain,
    #[serde(default)]
    pub bins: BinsConfig,
}

impl SimConfig {
    /// Measured parameters with the given envelope.
    pub fn measured(envelope: EnvelopeConfig) -> Self {
        SimConfig {
            tau0_ns: 26.2,
            tau_p_ns: 13.3,
            lambda: 0.033,
            envelope,
            grid: GridConfig::default(),
            chain: EfficiencyChain::measured(),
            bins: BinsConfig::default(),
        }
    }

    /// Parse a configuration; any structural problem is a [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        SimConfig::from_json(&text)
    }

    pub fn atom(&self) -> Result<AtomParams> {
        AtomParams::new(self.tau0_ns, self.lambda)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_range(self.grid.t_min_ns, self.grid.t_max_ns, self.grid.step_ns)
    }

    /// Build the configured envelope; relative paths resolve against `base_dir`.
    pub fn envelope(&self, base_dir: &Path) -> Result<PhotonEnvelope> {
        let grid = self.time_grid()?;
        match &self.envelope {
            EnvelopeConfig::Rising => Profile::Rising.make(self.tau_p_ns, grid),
            EnvelopeConfig::Decaying => Profile::Decaying.make(self.tau_p_ns, grid),
            EnvelopeConfig::Tabulated { path } => read_envelope_csv(&base_dir.join(path)),
            EnvelopeConfig::Cavity {
                cavity,
                detuning_mhz,
            } => shape_conditional_probe(&cavity.with_detuning(*detuning_mhz), self.tau_p_ns, grid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = SimConfig::from_json(r#"{"tau0_ns": 26.2, "tau_p_ns": 13.3, "lambda": 0.033}"#)
            .unwrap();
        assert_eq!(c.envelope, EnvelopeConfig::Decaying);
        assert_eq!(c.chain, EfficiencyChain::measured());
        assert_eq!(c.bins.forward().unwrap(), BinSpec::forward_default());
        let env = c.envelope(Path::new(".")).unwrap();
        assert_eq!(env.grid().len(), 12001);
    }

    #[test]
    fn missing_key_is_named() {
        let err = SimConfig::from_json(r#"{"tau_p_ns": 13.3, "lambda": 0.033}"#).unwrap_err();
        assert!(
            matches!(&err, Error::Config(m) if m.contains("tau0_ns")),
            "{err}"
        );
        assert!(
            SimConfig::from_json(r#"{"tau0_ns": 1, "tau_p_ns": 1, "lambda": 0, "bogus": 1}"#)
                .is_err()
        );
    }

    #[test]
    fn envelope_variants_parse() {
        let c = SimConfig::from_json(
            r#"{"tau0_ns": 26.2, "tau_p_ns": 13.3, "lambda": 0.033,
                "envelope": {"shape": "cavity", "detuning_mhz": 70}}"#,
        )
        .unwrap();
        assert_eq!(
            c.envelope,
            EnvelopeConfig::Cavity {
                cavity: CavityParams::measured(),
                detuning_mhz: 70.0
            }
        );
        assert_eq!(c.envelope.profile(), None);
        let env = c.envelope(Path::new(".")).unwrap();
        assert!((env.norm() - 1.0).abs() < 1e-9);
        let r = SimConfig::from_json(r#"{"tau0_ns": 26.2, "tau_p_ns": 13.3, "lambda": 0.033, "envelope": {"shape": "rising"}}"#)
            .unwrap();
        assert_eq!(r.envelope.profile(), Some(Profile::Rising));
    }
}
