//! Federation SDN controller.
//!
//! Owns the canonical policy set, aggregates session state from every
//! domain, compiles per-domain enforcement programs, and keeps the domain
//! registry converging on the canonical version. The controller never
//! touches the kernel directly: operations return the pushes the caller
//! must schedule.

mod compile;
mod policy_set;
mod view;

pub use compile::{compile_enforcement, entry_permissions, GLOBAL_DENY_PRIORITY, SESSION_BLOCK};
pub use policy_set::CanonicalPolicySet;
pub use view::{poll_domain, SessionView, SessionViewEntry};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core5g::{Core5g, DomainId};
use crate::gateway::{AuthorizationPolicy, Gateway, GatewayError, ServiceCatalog};
use crate::sim::{EventLog, Fields, Scalar, Timestamp};

pub const COMPONENT: &str = "fed-sdn";
pub const RETRY_BACKOFF_MS: u64 = 500;
pub const MAX_RETRIES: u32 = 10;
pub const RECONCILE_PERIOD_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdnError {
    #[error(transparent)]
    Policy(#[from] GatewayError),
    #[error("unknown rule {0}")]
    UnknownRule(String),
    #[error("unknown domain {0}")]
    UnknownDomain(DomainId),
    #[error("domain {0} unreachable")]
    DomainUnreachable(DomainId),
}

/// Replacement body for a full policy update.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    #[serde(default)]
    pub rules: Vec<AuthorizationPolicy>,
    #[serde(default)]
    pub role_slice_map: BTreeMap<String, String>,
    #[serde(default)]
    pub service_catalog: ServiceCatalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PolicyMutation {
    Replace(PolicyDocument),
    AddRule { rule: AuthorizationPolicy },
    RemoveRule { rule_id: String },
}

impl PolicyMutation {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyMutation::Replace(_) => "replace",
            PolicyMutation::AddRule { .. } => "add_rule",
            PolicyMutation::RemoveRule { .. } => "remove_rule",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub gateway: String,
    pub applied_policy_version: u64,
}

/// A program push the caller must deliver after `delay_ms`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Push {
    pub domain: DomainId,
    pub version: u64,
    pub attempt: u32,
    pub delay_ms: u64,
}

/// What to do with a push whose delivery time has come.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PushPlan {
    /// Compile against the current view and install; then call `ack`.
    Deliver,
    /// A newer canonical version exists; its own push supersedes this one.
    Superseded { canonical: u64 },
    /// Delivery failed; `retry` is `None` once retries are exhausted.
    Failed { retry: Option<Push> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultState {
    /// Remaining pushes to drop.
    pub drop_pushes: u32,
    /// Pushes and polls fail until this instant.
    pub unreachable_until: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    DropPushes { count: u32 },
    Unreachable { duration_ms: u64 },
}

fn fields<const N: usize>(pairs: [(&str, Scalar); N]) -> Fields {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Default)]
pub struct FedSdn {
    canonical: Arc<CanonicalPolicySet>,
    registry: BTreeMap<DomainId, DomainRecord>,
    /// Highest version with an undelivered push per domain.
    in_flight: BTreeMap<DomainId, u64>,
    faults: BTreeMap<DomainId, FaultState>,
}

impl FedSdn {
    pub fn new() -> Self {
        FedSdn::default()
    }

    pub fn register_domain(&mut self, domain: DomainId, gateway: impl Into<String>) {
        self.registry.insert(
            domain,
            DomainRecord {
                gateway: gateway.into(),
                applied_policy_version: 0,
            },
        );
    }

    pub fn registry(&self) -> &BTreeMap<DomainId, DomainRecord> {
        &self.registry
    }

    pub fn canonical(&self) -> &Arc<CanonicalPolicySet> {
        &self.canonical
    }

    pub fn version(&self) -> u64 {
        self.canonical.version
    }

    /// True when every registered domain runs the canonical version.
    pub fn converged(&self) -> bool {
        self.registry
            .values()
            .all(|r| r.applied_policy_version == self.canonical.version)
    }

    /// Applies a mutation, bumps the version, audits it, and returns one
    /// push per registered domain. `base_version` is the version the caller
    /// last read; a stale base is accepted (last writer wins) and flagged in
    /// the audit record.
    pub fn update_policies(
        &mut self,
        mutation: PolicyMutation,
        actor: &str,
        base_version: Option<u64>,
        log: &mut EventLog,
        now: Timestamp,
    ) -> Result<(u64, Vec<Push>), SdnError> {
        let mut next = (*self.canonical).clone();
        let kind = mutation.kind();
        match mutation {
            PolicyMutation::Replace(doc) => {
                next.rules = doc.rules;
                next.role_slice_map = doc.role_slice_map;
                next.service_catalog = doc.service_catalog;
            }
            PolicyMutation::AddRule { rule } => next.rules.push(rule),
            PolicyMutation::RemoveRule { rule_id } => {
                let before = next.rules.len();
                next.rules.retain(|r| r.rule_id != rule_id);
                if next.rules.len() == before {
                    return Err(SdnError::UnknownRule(rule_id));
                }
            }
        }
        next.validate()?;
        let concurrent = base_version.is_some_and(|b| b != self.canonical.version);
        next.version = self.canonical.version + 1;
        self.canonical = Arc::new(next);
        let version = self.canonical.version;
        log.append(
            now,
            COMPONENT,
            "policy_updated",
            fields([
                ("version", version.into()),
                ("actor", actor.into()),
                ("mutation", kind.into()),
                ("concurrent", concurrent.into()),
                ("rules", (self.canonical.rules.len() as u64).into()),
            ]),
        );
        let pushes = self
            .registry
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .into_iter()
            .map(|d| {
                self.in_flight.insert(d.clone(), version);
                Push {
                    domain: d,
                    version,
                    attempt: 0,
                    delay_ms: 0,
                }
            })
            .collect();
        Ok((version, pushes))
    }

    /// A push of the current version to re-sync `domain` after its session
    /// set changed. Coalesced with any push still in flight.
    pub fn request_sync(&mut self, domain: &DomainId) -> Option<Push> {
        if !self.registry.contains_key(domain) {
            return None;
        }
        let v = self.canonical.version;
        if self.in_flight.get(domain).is_some_and(|f| *f >= v) {
            return None;
        }
        self.in_flight.insert(domain.clone(), v);
        Some(Push {
            domain: domain.clone(),
            version: v,
            attempt: 0,
            delay_ms: 0,
        })
    }

    /// Periodic convergence check: a push for each lagging domain that has
    /// none in flight. Running it twice in a row yields nothing the second
    /// time.
    pub fn reconcile(&mut self) -> Vec<Push> {
        let v = self.canonical.version;
        let mut out = Vec::new();
        for (d, rec) in &self.registry {
            if rec.applied_policy_version >= v {
                continue;
            }
            if self.in_flight.get(d).is_some_and(|f| *f >= v) {
                continue;
            }
            self.in_flight.insert(d.clone(), v);
            out.push(Push {
                domain: d.clone(),
                version: v,
                attempt: 0,
                delay_ms: 0,
            });
        }
        out
    }

    pub fn inject_fault(&mut self, domain: &DomainId, fault: Fault, now: Timestamp) -> Result<(), SdnError> {
        if !self.registry.contains_key(domain) {
            return Err(SdnError::UnknownDomain(domain.clone()));
        }
        let f = self.faults.entry(domain.clone()).or_default();
        match fault {
            Fault::DropPushes { count } => f.drop_pushes += count,
            Fault::Unreachable { duration_ms } => f.unreachable_until = Some(now + duration_ms),
        }
        Ok(())
    }

    pub fn is_unreachable(&self, domain: &DomainId, now: Timestamp) -> bool {
        self.faults
            .get(domain)
            .and_then(|f| f.unreachable_until)
            .is_some_and(|until| now < until)
    }

    /// Aggregates the sessions of every reachable domain. Unreachable
    /// domains are listed in the view and skipped.
    pub fn poll_sessions<'a>(
        &self,
        domains: impl IntoIterator<Item = (&'a Core5g, &'a Gateway)>,
        log: &mut EventLog,
        now: Timestamp,
    ) -> SessionView {
        let mut view = SessionView {
            as_of: now,
            ..SessionView::default()
        };
        for (core, gw) in domains {
            if self.is_unreachable(core.domain(), now) {
                view.unreachable.push(core.domain().clone());
                continue;
            }
            view.entries.extend(poll_domain(core, gw));
        }
        view.entries.sort_by(|a, b| (&a.domain, a.session_id).cmp(&(&b.domain, b.session_id)));
        log.append(
            now,
            COMPONENT,
            "sessions_polled",
            fields([
                ("entries", (view.entries.len() as u64).into()),
                ("unreachable", (view.unreachable.len() as u64).into()),
            ]),
        );
        view
    }

    /// Decides the fate of a due push. Logs superseded, failed, and alarm
    /// outcomes; delivery is logged by the caller once installed.
    pub fn begin_push(&mut self, push: &Push, log: &mut EventLog, now: Timestamp) -> Result<PushPlan, SdnError> {
        if !self.registry.contains_key(&push.domain) {
            return Err(SdnError::DomainUnreachable(push.domain.clone()));
        }
        let canonical = self.canonical.version;
        if push.version < canonical {
            log.append(
                now,
                COMPONENT,
                "push_superseded",
                fields([
                    ("domain", push.domain.as_str().into()),
                    ("version", push.version.into()),
                    ("canonical", canonical.into()),
                ]),
            );
            return Ok(PushPlan::Superseded { canonical });
        }
        let unreachable = self.is_unreachable(&push.domain, now);
        let fault = self.faults.entry(push.domain.clone()).or_default();
        let dropped = !unreachable && fault.drop_pushes > 0;
        if dropped {
            fault.drop_pushes -= 1;
        }
        if !(unreachable || dropped) {
            return Ok(PushPlan::Deliver);
        }
        log.append(
            now,
            COMPONENT,
            "push_failed",
            fields([
                ("domain", push.domain.as_str().into()),
                ("version", push.version.into()),
                ("attempt", push.attempt.into()),
                ("reason", if unreachable { "unreachable" } else { "dropped" }.into()),
            ]),
        );
        if push.attempt >= MAX_RETRIES {
            self.in_flight.remove(&push.domain);
            log.append(
                now,
                COMPONENT,
                "push_alarm",
                fields([
                    ("domain", push.domain.as_str().into()),
                    ("version", push.version.into()),
                    ("attempts", (push.attempt + 1).into()),
                ]),
            );
            return Ok(PushPlan::Failed { retry: None });
        }
        Ok(PushPlan::Failed {
            retry: Some(Push {
                domain: push.domain.clone(),
                version: push.version,
                attempt: push.attempt + 1,
                delay_ms: RETRY_BACKOFF_MS,
            }),
        })
    }

    /// Records a successful install of `version` in `domain`.
    pub fn ack(&mut self, domain: &DomainId, version: u64) {
        if let Some(rec) = self.registry.get_mut(domain) {
            rec.applied_policy_version = rec.applied_policy_version.max(version);
        }
        if self.in_flight.get(domain).is_some_and(|f| *f <= version) {
            self.in_flight.remove(domain);
        }
    }
}

#[cfg(test)]
mod tests;
