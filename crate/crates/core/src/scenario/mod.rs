//! Declarative scenarios: JSON files describing domains, subscribers,
//! policies, the building network, a timeline of actions and expectations
//! over the resulting event log.

mod expect;
mod spec;
mod world;

pub use expect::{default_name, evaluate, Counterexample, ExpectationResult};
pub use spec::{
    parse_key, Action, DomainSpec, Expectation, ExpectationSpec, FederationSpec, HubSpec, HvacSpec, IotSpec,
    Pattern, ScenarioSpec, TimelineEntry, Verdict, INTERNET, SCHEMA_VERSION,
};
pub use world::{row_label, FlowMatrix, MatrixSession, Msg, OnboardingItem, Origin, World, WorldError};

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iot::CommissioningRecord;
use crate::sim::{EventLog, EventLogRecord};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{} validation error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Validation(Vec<String>),
}

/// Parses and validates a scenario held in memory. A `commissioning_file`
/// is resolved against `base_dir`.
pub fn load_str(text: &str, base_dir: Option<&Path>) -> Result<ScenarioSpec, ScenarioError> {
    let mut spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut errs = Vec::new();
    if let Some(iot) = spec.iot.as_mut() {
        if let Some(file) = iot.commissioning_file.take() {
            let path = match base_dir {
                Some(dir) => dir.join(&file),
                None => file.clone(),
            };
            match std::fs::read_to_string(&path) {
                Err(e) => errs.push(format!("commissioning_file {}: {e}", path.display())),
                Ok(text) => match serde_json::from_str::<Vec<CommissioningRecord>>(&text) {
                    Err(e) => errs.push(format!("commissioning_file {}: {e}", path.display())),
                    Ok(records) => iot.commissioning.extend(records),
                },
            }
        }
    }
    errs.extend(spec.validate());
    if errs.is_empty() {
        Ok(spec)
    } else {
        Err(ScenarioError::Validation(errs))
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_str(&text, path.parent())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceSample {
    pub version: u64,
    pub updated_at: u64,
    /// First instant every domain had applied `version` or later.
    pub converged_at: Option<u64>,
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub records: usize,
    pub event_counts: BTreeMap<String, u64>,
    pub loop_latencies_ms: Vec<u64>,
    pub convergence: Vec<ConvergenceSample>,
    pub final_policy_version: u64,
    pub applied_versions: BTreeMap<String, u64>,
    pub security_alarms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub expectations: Vec<ExpectationResult>,
    pub metrics: Metrics,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = &ExpectationResult> {
        self.expectations.iter().filter(|e| !e.passed)
    }

    /// Human-readable summary: one line per expectation, with the
    /// offending log line under each failure.
    pub fn render(&self) -> String {
        let mut out = format!("scenario {} (seed {})\n", self.scenario, self.seed);
        for e in &self.expectations {
            let tag = if e.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("  {tag} [{}] {}: {}\n", e.index, e.name, e.detail));
            if let Some(c) = &e.counterexample {
                out.push_str(&format!("       line {}: {}\n", c.line, c.record));
            }
        }
        let passed = self.expectations.iter().filter(|e| e.passed).count();
        out.push_str(&format!(
            "{passed}/{} expectations passed, {} log records, policy v{}\n",
            self.expectations.len(),
            self.metrics.records,
            self.metrics.final_policy_version
        ));
        out
    }
}

fn metrics(world: &World) -> Metrics {
    let records = world.log().records();
    let mut m = Metrics {
        records: records.len(),
        final_policy_version: world.sdn().version(),
        ..Metrics::default()
    };
    for r in records {
        *m.event_counts.entry(r.event.clone()).or_default() += 1;
    }
    m.security_alarms = m.event_counts.get("security_alarm").copied().unwrap_or(0);
    m.loop_latencies_ms = records
        .iter()
        .filter(|r| r.event == "hvac_command")
        .filter_map(|r| r.int_field("latency_ms"))
        .map(|v| v as u64)
        .collect();
    m.applied_versions = world
        .sdn()
        .registry()
        .iter()
        .map(|(d, rec)| (d.to_string(), rec.applied_policy_version))
        .collect();
    let domains: Vec<String> = m.applied_versions.keys().cloned().collect();
    m.convergence = convergence(records, &domains);
    m
}

/// Per policy version, when every domain first caught up to it.
pub fn convergence(records: &[EventLogRecord], domains: &[String]) -> Vec<ConvergenceSample> {
    records
        .iter()
        .filter(|r| r.event == "policy_updated")
        .filter_map(|r| Some((r.int_field("version")? as u64, r.ts.0)))
        .map(|(version, updated_at)| {
            let per_domain: Option<Vec<u64>> = domains
                .iter()
                .map(|d| {
                    records
                        .iter()
                        .filter(|a| a.event == "push_applied" && a.ts.0 >= updated_at)
                        .filter(|a| a.str_field("domain") == Some(d.as_str()))
                        .find(|a| a.int_field("version").is_some_and(|v| v as u64 >= version))
                        .map(|a| a.ts.0)
                })
                .collect();
            let converged_at = per_domain.and_then(|v| v.into_iter().max());
            ConvergenceSample {
                version,
                updated_at,
                converged_at,
                delay_ms: converged_at.map(|c| c - updated_at),
            }
        })
        .collect()
}

/// Evaluates the scenario's expectations against a finished world.
pub fn report(world: &World) -> RunReport {
    let spec = world.spec();
    let records = world.log().records();
    let expectations: Vec<ExpectationResult> = spec
        .expectations
        .iter()
        .enumerate()
        .map(|(i, e)| evaluate(i, e, records))
        .collect();
    RunReport {
        scenario: spec.name.clone(),
        seed: spec.seed,
        passed: expectations.iter().all(|e| e.passed),
        expectations,
        metrics: metrics(world),
    }
}

/// Runs the scenario to `duration_ms` and checks every expectation.
pub fn run(spec: &ScenarioSpec) -> Result<(RunReport, EventLog), ScenarioError> {
    let mut world = World::new(spec)?;
    world.run_until(spec.duration_ms);
    let report = report(&world);
    Ok((report, world.into_log()))
}

/// The PEP flow matrix at `matrix_at_ms` (or the end of the run).
pub fn flow_matrix(spec: &ScenarioSpec) -> Result<FlowMatrix, ScenarioError> {
    let mut world = World::new(spec)?;
    world.run_until(spec.matrix_at_ms.unwrap_or(spec.duration_ms));
    Ok(world.flow_matrix())
}

/// Cells where two matrices disagree, as `(row, column, left, right)`.
pub fn matrix_diff(a: &FlowMatrix, b: &FlowMatrix) -> Vec<(String, String, Option<Verdict>, Option<Verdict>)> {
    let mut out = Vec::new();
    let rows: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for row in rows {
        let empty = BTreeMap::new();
        let ra = a.get(row).unwrap_or(&empty);
        let rb = b.get(row).unwrap_or(&empty);
        let cols: std::collections::BTreeSet<&String> = ra.keys().chain(rb.keys()).collect();
        for col in cols {
            let (x, y) = (ra.get(col).copied(), rb.get(col).copied());
            if x != y {
                out.push((row.clone(), col.clone(), x, y));
            }
        }
    }
    out
}

/// Renders a matrix as an aligned text table.
pub fn render_matrix(m: &FlowMatrix) -> String {
    let cols: Vec<String> = m
        .values()
        .flat_map(|r| r.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let w0 = m.keys().map(String::len).max().unwrap_or(4).max(4);
    let mut out = format!("{:w0$}", "");
    for c in &cols {
        out.push_str(&format!("  {c}"));
    }
    out.push('\n');
    for (row, cells) in m {
        out.push_str(&format!("{row:w0$}"));
        for c in &cols {
            let v = match cells.get(c) {
                Some(Verdict::Permit) => "permit",
                Some(Verdict::Deny) => "deny",
                None => "-",
            };
            out.push_str(&format!("  {v:>w$}", w = c.len()));
        }
        out.push('\n');
    }
    out
}
