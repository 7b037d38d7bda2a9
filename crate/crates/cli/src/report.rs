//! JSON report layouts.

use serde::{Deserialize, Serialize};
use tailcp::wbs::MultiCpReport;
use tailcp::{AdaptiveTestResult, ChangePointEstimate, IndividualTestResult, TestConfig};

use crate::settings::WbsSection;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub command: String,
    pub input: String,
    pub n: usize,
    pub p: usize,
    pub header: bool,
    pub standardize: bool,
    pub seed: u64,
    pub config: TestConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wbs: Option<WbsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSummary {
    pub t_ad: f64,
    pub p_ad: f64,
    pub reject: bool,
    pub alpha_star: f64,
    pub t_hat_ad: ChangePointEstimate,
}

/// Wall-clock durations in milliseconds; excluded from reproducibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub load_ms: f64,
    pub analysis_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub adaptive: AdaptiveSummary,
    pub individual: Vec<IndividualTestResult>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl TestReport {
    pub fn new(metadata: Metadata, res: AdaptiveTestResult, include_samples: bool, timing: Timing) -> Self {
        let mut individual = res.individual;
        if !include_samples {
            for r in &mut individual {
                r.bootstrap_samples.clear();
            }
        }
        let warnings = individual.iter().flat_map(|r| r.warnings.iter().cloned()).collect();
        TestReport {
            schema_version: SCHEMA_VERSION,
            metadata,
            adaptive: AdaptiveSummary {
                t_ad: res.t_ad,
                p_ad: res.p_ad,
                reject: res.reject,
                alpha_star: res.alpha_star,
                t_hat_ad: res.t_hat_ad,
            },
            individual,
            warnings,
            timing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub result: MultiCpReport,
    pub timing: Timing,
}
