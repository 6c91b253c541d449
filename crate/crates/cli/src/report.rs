//! The JSON analysis report shared by every subcommand.

use serde::Serialize;
use serde_json::Value;

pub const TOOL: &str = "medmeta";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    MasemParam,
    MasemCorr,
    Ml,
    IpdTransport,
    XmIntegrate,
    Simulate,
    #[serde(rename = "demo-appendix1")]
    DemoAppendix1,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InputSummary {
    pub files: Vec<String>,
    /// Number of studies analysed.
    pub k: usize,
    pub n_total: u64,
    /// Covariates adjusted for, when participant data were modelled.
    pub adjust: Vec<String>,
    pub declared_assumptions: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Optimizer convergence, when an iterative fit was run.
    pub converged: Option<bool>,
    /// Sources whose covariate range does not cover the target population.
    pub positivity_flagged: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch; present only when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub approach: Approach,
    /// Effective configuration with every default materialized.
    pub config: Value,
    pub inputs: InputSummary,
    pub results: Value,
    pub diagnostics: Diagnostics,
    pub provenance: Provenance,
}

impl Report {
    pub fn new(approach: Approach, config: Value, inputs: InputSummary, results: Value, diagnostics: Diagnostics, seed: Option<u64>) -> Self {
        Self {
            approach,
            config,
            inputs,
            results,
            diagnostics,
            provenance: Provenance { tool: TOOL, version: VERSION, seed, timestamp: None },
        }
    }

    pub fn stamp(&mut self) {
        let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.provenance.timestamp = Some(now);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
