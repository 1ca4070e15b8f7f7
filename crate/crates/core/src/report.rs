//! Machine-readable run reports. Field order is fixed by the struct
//! definitions and maps are sorted, so serialization is deterministic for a
//! given configuration and seed.

use serde::{Deserialize, Serialize};

use crate::bench::BenchRecord;
use crate::config::RunConfig;
use crate::suite::{CaseOutcome, OracleReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub suite: String,
    pub name: String,
    pub seed: u64,
    pub detail: String,
    pub status: String,
    pub max_rel_err: Option<f64>,
    pub tolerance: Option<f64>,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub error: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub cases: Vec<CaseRecord>,
    pub benchmarks: Vec<BenchRecord>,
    pub summary: Summary,
}

impl SuiteReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            cases: Vec::new(),
            benchmarks: Vec::new(),
            summary: Summary::default(),
        }
    }

    pub fn absorb(&mut self, oracle: &OracleReport) {
        for case in &oracle.cases {
            let (status, max_rel_err, message) = match &case.outcome {
                CaseOutcome::Pass { max_err } => ("pass", Some(*max_err), None),
                CaseOutcome::Fail { max_err } => ("fail", Some(*max_err), None),
                CaseOutcome::Error { message } => ("error", None, Some(message.clone())),
            };
            self.cases.push(CaseRecord {
                suite: oracle.suite.clone(),
                name: case.name.clone(),
                seed: case.seed,
                detail: case.detail.clone(),
                status: status.to_string(),
                max_rel_err,
                tolerance: Some(case.tolerance),
                wall_ms: case.wall_ms,
                message,
            });
        }
        self.summary.pass += oracle.passes;
        self.summary.fail += oracle.fails;
        self.summary.error += oracle.errors;
    }

    /// Process exit status: zero exactly when nothing failed or errored.
    pub fn exit_code(&self) -> i32 {
        if self.summary.fail == 0 && self.summary.error == 0 {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{run_cases, CaseSpec, SuiteConfig};

    fn quick_case(name: &str, err: f64, tol: f64) -> CaseSpec {
        CaseSpec {
            name: name.into(),
            seed: 1,
            detail: String::new(),
            tolerance: tol,
            run: Box::new(move || Ok(err)),
        }
    }

    #[test]
    fn exit_code_tracks_failures() {
        let mut report = SuiteReport::new(RunConfig::default());
        let clean = run_cases(
            "u",
            vec![quick_case("a", 0.0, 1e-9)],
            &SuiteConfig::default(),
        );
        report.absorb(&clean);
        assert_eq!(report.exit_code(), 0);

        let dirty = run_cases(
            "u",
            vec![quick_case("b", 1.0, 1e-9)],
            &SuiteConfig::default(),
        );
        report.absorb(&dirty);
        assert_eq!(report.exit_code(), 1);
        assert_eq!(report.summary.pass, 1);
        assert_eq!(report.summary.fail, 1);
    }

    #[test]
    fn json_round_trips() {
        let mut report = SuiteReport::new(RunConfig::default());
        let r = run_cases(
            "u",
            vec![quick_case("a", 0.5e-9, 1e-9)],
            &SuiteConfig::default(),
        );
        report.absorb(&r);
        let text = report.to_json();
        let back: SuiteReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.cases.len(), 1);
        assert_eq!(back.cases[0].max_rel_err, Some(0.5e-9));
    }
}
