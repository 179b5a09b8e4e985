//! Aggregated run configuration; every knob in one serializable struct.
//!
//! Unknown keys are rejected on load so a typo cannot silently fall back to
//! a default.

use serde::{Deserialize, Serialize};

use crate::classifier::{GridConfig, TrainConfig};
use crate::filter::FilterTable;
use crate::optimizer::OptimizerConfig;
use crate::scan::ScanConfig;
use crate::tracker::TrackerConfig;
use crate::visibility::VisibilityConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Per-point perturbation std used by the pose covariance (m).
    pub sigma_p: f64,
    pub scan: ScanConfig,
    pub filter: FilterTable,
    pub optimizer: OptimizerConfig,
    pub visibility: VisibilityConfig,
    pub tracker: TrackerConfig,
    pub grid: GridConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sigma_p: 0.05,
            scan: ScanConfig::default(),
            filter: FilterTable::default(),
            optimizer: OptimizerConfig::default(),
            visibility: VisibilityConfig::default(),
            tracker: TrackerConfig::default(),
            grid: GridConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
