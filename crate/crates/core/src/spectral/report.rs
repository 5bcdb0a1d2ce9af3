//! Gap reports.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisInfo {
    pub radial_deg: usize,
    pub angular_deg: usize,
}

/// A spectral-gap estimate with its error bar and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub basis: Option<BasisInfo>,
    /// Set when the estimator could not produce a trustworthy value.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl GapReport {
    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| crate::KacError::Format(e.to_string()))
    }
}
