//! Post-run predicates over the event log.

use serde::{Deserialize, Serialize};

use super::spec::{Expectation, ExpectationSpec, Pattern};
use crate::sim::EventLogRecord;

/// A log line that falsifies an expectation. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub line: usize,
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub passed: bool,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

impl Pattern {
    pub fn matches(&self, r: &EventLogRecord) -> bool {
        r.event == self.event
            && self.component.as_ref().is_none_or(|c| c == &r.component)
            && self.fields.iter().all(|(k, v)| r.fields.get(k) == Some(v))
    }

    fn describe(&self) -> String {
        let mut s = self.event.clone();
        if let Some(c) = &self.component {
            s.push_str(&format!("@{c}"));
        }
        if !self.fields.is_empty() {
            let kv: Vec<String> = self.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
            s.push_str(&format!("{{{}}}", kv.join(",")));
        }
        s
    }
}

fn joined(a: &EventLogRecord, b: &EventLogRecord, join: Option<&String>) -> bool {
    match join {
        None => true,
        Some(k) => matches!((a.fields.get(k), b.fields.get(k)), (Some(x), Some(y)) if x == y),
    }
}

fn counterexample(records: &[EventLogRecord], i: usize) -> Option<Counterexample> {
    Some(Counterexample {
        line: i + 1,
        record: records[i].to_json_line(),
    })
}

pub fn default_name(e: &Expectation) -> String {
    match e {
        Expectation::EventExists { pattern } => format!("exists {}", pattern.describe()),
        Expectation::EventAbsent { pattern } => format!("absent {}", pattern.describe()),
        Expectation::Ordering { before, after, join } => format!(
            "{} before {}{}",
            before.describe(),
            after.describe(),
            join.as_ref().map(|j| format!(" by {j}")).unwrap_or_default()
        ),
        Expectation::Count { pattern, equals, min, max } => {
            let mut s = format!("count {}", pattern.describe());
            if let Some(n) = equals {
                s.push_str(&format!(" == {n}"));
            }
            if let Some(n) = min {
                s.push_str(&format!(" >= {n}"));
            }
            if let Some(n) = max {
                s.push_str(&format!(" <= {n}"));
            }
            s
        }
        Expectation::LatencyBound {
            from,
            to,
            min_ms,
            max_ms,
            ..
        } => format!("{} -> {} in [{min_ms}, {max_ms}] ms", from.describe(), to.describe()),
    }
}

pub fn evaluate(index: usize, spec: &ExpectationSpec, records: &[EventLogRecord]) -> ExpectationResult {
    let (passed, detail, cex) = check(&spec.check, records);
    ExpectationResult {
        index,
        name: spec.name.clone().unwrap_or_else(|| default_name(&spec.check)),
        kind: spec.check.kind().to_string(),
        passed,
        detail,
        counterexample: cex,
    }
}

fn check(e: &Expectation, records: &[EventLogRecord]) -> (bool, String, Option<Counterexample>) {
    match e {
        Expectation::EventExists { pattern } => match records.iter().position(|r| pattern.matches(r)) {
            Some(i) => (true, format!("first match at line {}", i + 1), None),
            None => (false, "no matching record".into(), None),
        },
        Expectation::EventAbsent { pattern } => match records.iter().position(|r| pattern.matches(r)) {
            None => (true, "no matching record".into(), None),
            Some(i) => (false, "unexpected record".into(), counterexample(records, i)),
        },
        Expectation::Ordering { before, after, join } => {
            let mut seen = 0;
            for (i, r) in records.iter().enumerate() {
                if !after.matches(r) {
                    continue;
                }
                seen += 1;
                let ok = records[..i].iter().any(|b| before.matches(b) && joined(b, r, join.as_ref()));
                if !ok {
                    return (false, "no earlier matching record".into(), counterexample(records, i));
                }
            }
            (true, format!("{seen} records checked"), None)
        }
        Expectation::Count { pattern, equals, min, max } => {
            let hits: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| pattern.matches(r))
                .map(|(i, _)| i)
                .collect();
            let n = hits.len() as u64;
            let upper = match (equals, max) {
                (Some(e), Some(m)) => Some((*e).min(*m)),
                (e, m) => e.or(*m),
            };
            let lower = match (equals, min) {
                (Some(e), Some(m)) => Some((*e).max(*m)),
                (e, m) => e.or(*m),
            };
            if let Some(u) = upper {
                if n > u {
                    return (false, format!("count {n} above {u}"), counterexample(records, hits[u as usize]));
                }
            }
            if let Some(l) = lower {
                if n < l {
                    return (false, format!("count {n} below {l}"), None);
                }
            }
            (true, format!("count {n}"), None)
        }
        Expectation::LatencyBound {
            from,
            to,
            join,
            first_only,
            min_ms,
            max_ms,
        } => {
            let mut seen = 0;
            let mut worst = 0;
            let mut answered = std::collections::BTreeSet::new();
            for (i, r) in records.iter().enumerate() {
                if !to.matches(r) {
                    continue;
                }
                seen += 1;
                let start = records[..i]
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, b)| from.matches(b) && joined(b, r, join.as_ref()));
                let Some((j, start)) = start else {
                    return (false, "no earlier start record".into(), counterexample(records, i));
                };
                if !answered.insert(j) && *first_only {
                    seen -= 1;
                    continue;
                }
                let gap = r.ts.saturating_sub(start.ts);
                worst = worst.max(gap);
                if gap < *min_ms || gap > *max_ms {
                    return (
                        false,
                        format!("latency {gap} ms outside [{min_ms}, {max_ms}]"),
                        counterexample(records, i),
                    );
                }
            }
            if seen == 0 {
                return (false, "no end record".into(), None);
            }
            (true, format!("{seen} pairs, max {worst} ms"), None)
        }
    }
}
