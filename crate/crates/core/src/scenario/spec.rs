use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddrV4;
use std::path::PathBuf;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::core5g::{DomainId, Imsi, Slice, Subscriber};
use crate::gateway::MacKey;
use crate::iot::{BridgeMapping, CommissioningRecord, Direction, Dpt, HvacThresholds, IndividualAddress, Topology};
use crate::sdn::{CanonicalPolicySet, Fault, PolicyDocument, PolicyMutation};
use crate::sim::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

/// Flow target naming internet egress instead of a catalog service.
pub const INTERNET: &str = "internet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub domains: Vec<DomainSpec>,
    pub federation: FederationSpec,
    #[serde(default = "default_token_ttl")]
    pub token_ttl_ms: u64,
    pub subscribers: Vec<Subscriber>,
    pub policy: PolicyDocument,
    /// Destination used for internet probes and the internet matrix column.
    #[serde(default = "default_internet_probe")]
    pub internet_probe: SocketAddrV4,
    #[serde(default)]
    pub iot: Option<IotSpec>,
    #[serde(default)]
    pub timeline: Vec<TimelineEntry>,
    #[serde(default)]
    pub expectations: Vec<ExpectationSpec>,
    /// Declared flow matrix: row label -> column -> verdict.
    #[serde(default)]
    pub access_matrix: BTreeMap<String, BTreeMap<String, Verdict>>,
    /// Virtual time at which the flow matrix is taken; defaults to the end.
    #[serde(default)]
    pub matrix_at_ms: Option<u64>,
}

fn default_token_ttl() -> u64 {
    3_600_000
}

fn default_internet_probe() -> SocketAddrV4 {
    "93.184.216.34:443".parse().expect("literal address")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: DomainId,
    pub pool: Ipv4Net,
    /// 32-byte hex key for tokens issued by this domain's gateway.
    pub gateway_key: String,
    pub slices: Vec<Slice>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationSpec {
    /// 32-byte hex key shared by federated gateways.
    pub key: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default = "default_assertion_ttl")]
    pub assertion_ttl_ms: u64,
}

fn default_assertion_ttl() -> u64 {
    5_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotSpec {
    pub topology: Topology,
    pub hub: HubSpec,
    #[serde(default)]
    pub commissioning: Vec<CommissioningRecord>,
    /// JSON list of commissioning records, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commissioning_file: Option<PathBuf>,
    #[serde(default)]
    pub hvac: Option<HvacSpec>,
    /// Catalog service the broker listens on.
    pub broker_service: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubSpec {
    pub individual_address: IndividualAddress,
    pub mappings: Vec<BridgeMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacSpec {
    pub co2_topic: String,
    pub command_topic: String,
    #[serde(default)]
    pub thresholds: HvacThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Attach {
        imsi: Imsi,
        domain: DomainId,
        #[serde(default)]
        vpn_tunnel: bool,
    },
    Detach {
        imsi: Imsi,
        domain: DomainId,
    },
    Roam {
        imsi: Imsi,
        from: DomainId,
        to: DomainId,
    },
    /// `target` is a catalog service, `internet`, or a literal `ip:port`.
    FlowQuery {
        imsi: Imsi,
        target: String,
    },
    Publish {
        topic: String,
        payload: String,
        #[serde(default)]
        retained: bool,
    },
    Co2Sample {
        device: String,
        ppm: f64,
    },
    PolicyMutation {
        actor: String,
        #[serde(default)]
        base_version: Option<u64>,
        mutation: PolicyMutation,
    },
    FaultInjection {
        domain: DomainId,
        fault: Fault,
    },
    /// A subscriber publishes through its session to the broker service.
    Command {
        imsi: Imsi,
        topic: String,
        payload: String,
    },
    Commission {
        imsi: Imsi,
        record: CommissioningRecord,
    },
    Onboarding {
        imsi: Imsi,
        domain: DomainId,
        approve: bool,
        #[serde(default = "operator")]
        actor: String,
    },
}

fn operator() -> String {
    "operator".to_string()
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Attach { .. } => "attach",
            Action::Detach { .. } => "detach",
            Action::Roam { .. } => "roam",
            Action::FlowQuery { .. } => "flow_query",
            Action::Publish { .. } => "publish",
            Action::Co2Sample { .. } => "co2_sample",
            Action::PolicyMutation { .. } => "policy_mutation",
            Action::FaultInjection { .. } => "fault_injection",
            Action::Command { .. } => "command",
            Action::Commission { .. } => "commission",
            Action::Onboarding { .. } => "onboarding",
        }
    }
}

/// Matches log records by event name, optional component, and exact field
/// values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub check: Expectation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    EventExists {
        pattern: Pattern,
    },
    EventAbsent {
        pattern: Pattern,
    },
    /// Every `after` record has an earlier `before` record, sharing the
    /// `join` field when given.
    Ordering {
        before: Pattern,
        after: Pattern,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        join: Option<String>,
    },
    Count {
        pattern: Pattern,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equals: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<u64>,
    },
    /// Every `to` record is paired with the latest earlier `from` record
    /// (sharing `join`), and the gap lies in `[min_ms, max_ms]`. With
    /// `first_only`, later `to` records paired with an already answered
    /// `from` are skipped.
    LatencyBound {
        from: Pattern,
        to: Pattern,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        join: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        first_only: bool,
        #[serde(default)]
        min_ms: u64,
        max_ms: u64,
    },
}

impl Expectation {
    pub fn kind(&self) -> &'static str {
        match self {
            Expectation::EventExists { .. } => "event_exists",
            Expectation::EventAbsent { .. } => "event_absent",
            Expectation::Ordering { .. } => "ordering",
            Expectation::Count { .. } => "count",
            Expectation::LatencyBound { .. } => "latency_bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Permit,
    Deny,
}

impl Verdict {
    pub fn from_permit(permit: bool) -> Self {
        if permit {
            Verdict::Permit
        } else {
            Verdict::Deny
        }
    }
}

pub fn parse_key(hex_key: &str) -> Result<MacKey, String> {
    let bytes = hex::decode(hex_key).map_err(|e| format!("bad hex key: {e}"))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|b: Vec<u8>| format!("key must be 32 bytes, got {}", b.len()))?;
    Ok(MacKey::new(arr))
}

impl ScenarioSpec {
    /// The catalog-level policy set the scenario starts from.
    pub fn initial_policies(&self) -> CanonicalPolicySet {
        CanonicalPolicySet {
            version: 0,
            rules: self.policy.rules.clone(),
            role_slice_map: self.policy.role_slice_map.clone(),
            service_catalog: self.policy.service_catalog.clone(),
        }
    }

    /// Distinct roles held by subscribers.
    pub fn roles(&self) -> BTreeSet<String> {
        self.subscribers.iter().flat_map(|s| s.roles.iter().cloned()).collect()
    }

    pub fn subscriber(&self, imsi: &Imsi) -> Option<&Subscriber> {
        self.subscribers.iter().find(|s| &s.imsi == imsi)
    }

    /// Every problem found, in a stable order. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty() {
            errs.push("name is empty".into());
        }

        let mut domain_ids = BTreeSet::new();
        if self.domains.is_empty() {
            errs.push("no domains".into());
        }
        for d in &self.domains {
            if !domain_ids.insert(d.id.clone()) {
                errs.push(format!("domain {}: duplicate id", d.id));
            }
            if let Err(e) = parse_key(&d.gateway_key) {
                errs.push(format!("domain {}: gateway_key: {e}", d.id));
            }
            let mut slice_ids = BTreeSet::new();
            for s in &d.slices {
                if !slice_ids.insert(&s.slice_id) {
                    errs.push(format!("domain {}: duplicate slice {}", d.id, s.slice_id));
                }
            }
        }
        for (i, a) in self.domains.iter().enumerate() {
            for b in &self.domains[i + 1..] {
                if a.pool.contains(&b.pool.network()) || b.pool.contains(&a.pool.network()) {
                    errs.push(format!("domains {} and {}: address pools overlap", a.id, b.id));
                }
            }
        }
        if let Err(e) = parse_key(&self.federation.key) {
            errs.push(format!("federation key: {e}"));
        }

        let mut imsis = BTreeSet::new();
        for s in &self.subscribers {
            if let Err(e) = s.validate() {
                errs.push(format!("subscriber {e}"));
            }
            if !imsis.insert(s.imsi.clone()) {
                errs.push(format!("subscriber {}: duplicate imsi", s.imsi));
            }
            if !domain_ids.contains(&s.home_domain) {
                errs.push(format!("subscriber {}: unknown home domain {}", s.imsi, s.home_domain));
            }
            if !s.sim_profiles.contains(&s.home_domain) {
                errs.push(format!("subscriber {}: no SIM profile for home domain", s.imsi));
            }
            for d in &s.sim_profiles {
                if !domain_ids.contains(d) {
                    errs.push(format!("subscriber {}: unknown sim profile domain {d}", s.imsi));
                }
            }
        }

        let policies = self.initial_policies();
        if let Err(e) = policies.validate() {
            errs.push(format!("policy: {e}"));
        }
        for (key, slice) in &self.policy.role_slice_map {
            for d in &self.domains {
                if !d.slices.iter().any(|s| &s.slice_id == slice) {
                    errs.push(format!("role_slice_map {key}: slice {slice} missing in domain {}", d.id));
                }
            }
        }
        for (name, svc) in &self.policy.service_catalog {
            if !self.domains.iter().any(|d| d.slices.iter().any(|s| s.slice_id == svc.slice_id)) {
                errs.push(format!("service {name}: unknown slice {}", svc.slice_id));
            }
        }

        let mut devices: BTreeMap<String, &CommissioningRecord> = BTreeMap::new();
        if let Some(iot) = &self.iot {
            if iot.commissioning_file.is_some() {
                errs.push("iot: commissioning_file was not resolved".into());
            }
            if !self.policy.service_catalog.contains_key(&iot.broker_service) {
                errs.push(format!("iot: unknown broker service {}", iot.broker_service));
            }
            let mut addrs = BTreeSet::new();
            addrs.insert(iot.hub.individual_address);
            for rec in &iot.commissioning {
                if let Err(e) = rec.validate() {
                    errs.push(format!("commissioning: {e}"));
                }
                if devices.insert(rec.device_id.clone(), rec).is_some() {
                    errs.push(format!("commissioning {}: duplicate device id", rec.device_id));
                }
                if !addrs.insert(rec.individual_address) {
                    errs.push(format!(
                        "commissioning {}: address {} already in use",
                        rec.device_id, rec.individual_address
                    ));
                }
            }
            if let Err(e) = crate::iot::Hub::new(iot.hub.individual_address, &iot.hub.mappings) {
                errs.push(format!("iot hub: {e}"));
            }
            for m in &iot.hub.mappings {
                let linked = iot
                    .commissioning
                    .iter()
                    .flat_map(|r| &r.links)
                    .any(|l| l.ga == m.ga && l.dpt == m.dpt);
                if !linked {
                    errs.push(format!("iot hub mapping {}: no commissioned {} object on {}", m.topic, m.dpt, m.ga));
                }
            }
            if let Some(h) = &iot.hvac {
                if h.thresholds.lower_below_ppm > h.thresholds.raise_above_ppm {
                    errs.push("hvac: lower threshold above raise threshold".into());
                }
                if crate::iot::pubsub::validate_topic(&h.co2_topic).is_err() {
                    errs.push(format!("hvac: bad co2 topic {:?}", h.co2_topic));
                }
                if !iot.hub.mappings.iter().any(|m| m.topic == h.command_topic) {
                    errs.push(format!("hvac: command topic {} has no hub mapping", h.command_topic));
                }
            }
        }

        let mut last = 0;
        for (i, entry) in self.timeline.iter().enumerate() {
            let at = format!("timeline[{i}] ({} at {} ms)", entry.action.kind(), entry.at_ms);
            if entry.at_ms < last {
                errs.push(format!("{at}: out of order (previous entry at {last} ms)"));
            }
            last = last.max(entry.at_ms);
            if entry.at_ms > self.duration_ms {
                errs.push(format!("{at}: after duration_ms {}", self.duration_ms));
            }
            let known_imsi = |imsi: &Imsi, errs: &mut Vec<String>| {
                if !imsis.contains(imsi) {
                    errs.push(format!("{at}: unknown imsi {imsi}"));
                }
            };
            let known_domain = |d: &DomainId, errs: &mut Vec<String>| {
                if !domain_ids.contains(d) {
                    errs.push(format!("{at}: unknown domain {d}"));
                }
            };
            match &entry.action {
                Action::Attach { imsi, domain, .. }
                | Action::Detach { imsi, domain }
                | Action::Onboarding { imsi, domain, .. } => {
                    known_imsi(imsi, &mut errs);
                    known_domain(domain, &mut errs);
                }
                Action::Roam { imsi, from, to } => {
                    known_imsi(imsi, &mut errs);
                    known_domain(from, &mut errs);
                    known_domain(to, &mut errs);
                    if from == to {
                        errs.push(format!("{at}: roam to the same domain"));
                    }
                }
                Action::FlowQuery { imsi, target } => {
                    known_imsi(imsi, &mut errs);
                    if target != INTERNET
                        && !self.policy.service_catalog.contains_key(target)
                        && target.parse::<SocketAddrV4>().is_err()
                    {
                        errs.push(format!("{at}: unknown flow target {target}"));
                    }
                }
                Action::Publish { topic, .. } => {
                    if self.iot.is_none() {
                        errs.push(format!("{at}: no iot domain configured"));
                    }
                    if crate::iot::pubsub::validate_topic(topic).is_err() {
                        errs.push(format!("{at}: bad topic {topic:?}"));
                    }
                }
                Action::Co2Sample { device, ppm } => match devices.get(device) {
                    None => errs.push(format!("{at}: unknown device {device}")),
                    Some(rec) => {
                        if !rec.links.iter().any(|l| l.direction == Direction::Out && l.dpt == Dpt::Ppm) {
                            errs.push(format!("{at}: device {device} has no ppm output"));
                        }
                        if crate::iot::dpt9_encode(*ppm).is_err() {
                            errs.push(format!("{at}: ppm {ppm} out of range"));
                        }
                    }
                },
                Action::PolicyMutation { actor, .. } => {
                    if actor.is_empty() {
                        errs.push(format!("{at}: empty actor"));
                    }
                }
                Action::FaultInjection { domain, .. } => known_domain(domain, &mut errs),
                Action::Command { imsi, topic, .. } => {
                    known_imsi(imsi, &mut errs);
                    match &self.iot {
                        None => errs.push(format!("{at}: no iot domain configured")),
                        Some(iot) => {
                            if !iot.hub.mappings.iter().any(|m| &m.topic == topic) {
                                errs.push(format!("{at}: topic {topic} has no hub mapping"));
                            }
                        }
                    }
                }
                Action::Commission { imsi, record } => {
                    known_imsi(imsi, &mut errs);
                    if self.iot.is_none() {
                        errs.push(format!("{at}: no iot domain configured"));
                    }
                    if let Err(e) = record.validate() {
                        errs.push(format!("{at}: {e}"));
                    }
                }
            }
        }

        for (i, e) in self.expectations.iter().enumerate() {
            let patterns: Vec<&Pattern> = match &e.check {
                Expectation::EventExists { pattern }
                | Expectation::EventAbsent { pattern }
                | Expectation::Count { pattern, .. } => vec![pattern],
                Expectation::Ordering { before, after, .. } => vec![before, after],
                Expectation::LatencyBound { from, to, .. } => vec![from, to],
            };
            if patterns.iter().any(|p| p.event.is_empty()) {
                errs.push(format!("expectations[{i}]: empty event name"));
            }
            if let Expectation::LatencyBound { min_ms, max_ms, .. } = &e.check {
                if min_ms > max_ms {
                    errs.push(format!("expectations[{i}]: min_ms above max_ms"));
                }
            }
            if let Expectation::Count { equals, min, max, .. } = &e.check {
                if equals.is_none() && min.is_none() && max.is_none() {
                    errs.push(format!("expectations[{i}]: count needs equals, min or max"));
                }
            }
        }

        for (row, cols) in &self.access_matrix {
            for col in cols.keys() {
                if col != INTERNET && !self.policy.service_catalog.contains_key(col) {
                    errs.push(format!("access_matrix {row}: unknown service {col}"));
                }
            }
        }
        errs
    }
}
