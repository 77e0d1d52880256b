//! The wired simulation: every domain's core, gateway and PEP, the
//! controller, and the building network, driven by one kernel.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::{parse_key, Action, HvacSpec, ScenarioSpec, TimelineEntry, Verdict, INTERNET};
use super::ScenarioError;
use crate::core5g::{Core5g, DomainId, Imsi, SessionId, SessionState, Subscriber, SubscriberContext};
use crate::gateway::{
    AccessRequest, AuthzDecision, ContinuityToken, FederationAssertion, Gateway, GatewayConfig, GatewayError,
};
use crate::iot::{
    dpt, dpt9_encode, BridgeOutcome, Broker, Bus, CommissioningRecord, Direction, Dpt, HvacController, Hub,
    PubSubMessage, Service, Telegram, Topology,
};
use crate::pep::{FlowDecision, FlowQuery, Pep, Proto};
use crate::sdn::{
    compile_enforcement, poll_domain, CanonicalPolicySet, FedSdn, PolicyMutation, Push, PushPlan, SdnError,
    SessionView, RECONCILE_PERIOD_MS,
};
use crate::sim::{EventLog, EventLogRecord, Fields, Kernel, Scalar, SimEvent, Timestamp};

const HARNESS: &str = "scenario";
const BUS: &str = "iot:bus";
const HUB: &str = "iot:hub";
const BROKER: &str = "iot:broker";
const HVAC: &str = "iot:hvac";
const ALARM: &str = "iot:alarm";

const HUB_OWNER: &str = "hub";
const HVAC_OWNER: &str = "hvac";

fn fields<const N: usize>(pairs: [(&str, Scalar); N]) -> Fields {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Errors for requests made against a live world (the control API).
#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown imsi {0}")]
    UnknownImsi(Imsi),
    #[error("unknown domain {0}")]
    UnknownDomain(DomainId),
    #[error("imsi {0} has no active session")]
    NoActiveSession(Imsi),
    #[error("imsi {0} is already in domain {1}")]
    SameDomain(Imsi, DomainId),
    #[error("session {0} is not awaiting approval")]
    NotAwaitingApproval(SessionId),
    #[error(transparent)]
    Sdn(#[from] SdnError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Where a message on the building side came from, carried along so the
/// delivery end can log end-to-end latency.
#[derive(Debug, Clone)]
pub enum Origin {
    External,
    Sample {
        sample_id: u64,
        ts: Timestamp,
    },
    Command {
        imsi: Imsi,
        session_id: SessionId,
        domain: DomainId,
        service_session_id: Option<u64>,
        ts: Timestamp,
    },
}

#[derive(Debug, Clone)]
pub enum Msg {
    Action(Action),
    Push(Push),
    Reconcile,
    /// A signed assertion arriving at the visited gateway.
    Federation {
        imsi: Imsi,
        from: DomainId,
        to: DomainId,
        from_session: SessionId,
        vpn_tunnel: bool,
        assertion: Box<FederationAssertion>,
    },
    HubTelegram {
        telegram: Telegram,
        origin: Origin,
    },
    BrokerIn {
        msg: PubSubMessage,
        origin: Origin,
    },
    HubMessage {
        msg: PubSubMessage,
        origin: Origin,
    },
    BusWrite {
        telegram: Telegram,
        origin: Origin,
    },
}

#[derive(Debug)]
pub struct DomainNode {
    pub core: Core5g,
    pub gateway: Gateway,
    pub pep: Pep,
}

#[derive(Debug)]
struct IotNode {
    bus: Bus,
    broker: Broker,
    hub: Hub,
    hvac: Option<(HvacController, HvacSpec)>,
    topology: Topology,
    broker_service: String,
    next_sample: u64,
}

/// One active session as the flow matrix sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSession {
    pub label: String,
    pub session_id: SessionId,
    pub domain: DomainId,
    pub ip: Ipv4Addr,
    pub slice_id: String,
    pub vpn_tunnel: bool,
    pub federated: bool,
    /// Attributes as the home domain knows them.
    pub context: SubscriberContext,
}

pub type FlowMatrix = BTreeMap<String, BTreeMap<String, Verdict>>;

/// A pending manual onboarding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnboardingItem {
    pub session_id: SessionId,
    pub imsi: Imsi,
    pub domain: DomainId,
    pub matched_rule: String,
}

/// Row label of a subscriber: its first role, or its device type when it
/// holds none.
pub fn row_label(s: &Subscriber) -> String {
    s.roles.iter().next().cloned().unwrap_or_else(|| s.device_type.clone())
}

pub struct World {
    spec: ScenarioSpec,
    kernel: Kernel<Msg>,
    log: EventLog,
    domains: BTreeMap<DomainId, DomainNode>,
    sdn: FedSdn,
    iot: Option<IotNode>,
    next_session: SessionId,
}

impl World {
    /// Builds the world, applies the initial policy set as version 1, and
    /// schedules the timeline. Nothing runs until `run_until`.
    pub fn new(spec: &ScenarioSpec) -> Result<World, ScenarioError> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(ScenarioError::Validation(errs));
        }
        let bad = |e: String| ScenarioError::Validation(vec![e]);
        let federation_key = parse_key(&spec.federation.key).map_err(bad)?;
        let all: BTreeSet<DomainId> = spec.domains.iter().map(|d| d.id.clone()).collect();

        let mut domains = BTreeMap::new();
        let mut sdn = FedSdn::new();
        for d in &spec.domains {
            let mut core = Core5g::new(d.id.clone(), d.pool, d.slices.iter().cloned());
            for s in spec.subscribers.iter().filter(|s| s.sim_profiles.contains(&d.id)) {
                core.register_subscriber(s.clone())
                    .map_err(|e| bad(format!("subscriber {}: {e}", s.imsi)))?;
            }
            let mut peers = all.clone();
            peers.remove(&d.id);
            let gateway = Gateway::new(GatewayConfig {
                domain: d.id.clone(),
                key: parse_key(&d.gateway_key).map_err(bad)?,
                federation_key: federation_key.clone(),
                peers,
                token_ttl_ms: spec.token_ttl_ms,
                assertion_ttl_ms: spec.federation.assertion_ttl_ms,
            });
            sdn.register_domain(d.id.clone(), gateway.component().to_string());
            domains.insert(
                d.id.clone(),
                DomainNode {
                    core,
                    gateway,
                    pep: Pep::new(),
                },
            );
        }

        let mut log = EventLog::new();
        let iot = match &spec.iot {
            None => None,
            Some(iot) => {
                let hub = Hub::new(iot.hub.individual_address, &iot.hub.mappings)
                    .map_err(|e| bad(format!("iot hub: {e}")))?;
                let mut bus = Bus::new();
                for rec in &iot.commissioning {
                    bus.commission(rec.clone())
                        .map_err(|e| bad(format!("commissioning: {e}")))?;
                    log.append(
                        Timestamp::ZERO,
                        BUS,
                        "device_commissioned",
                        fields([
                            ("device_id", rec.device_id.as_str().into()),
                            ("individual_address", rec.individual_address.to_string().into()),
                            ("links", rec.links.len().into()),
                            ("installer", "preloaded".into()),
                        ]),
                    );
                }
                let mut broker = Broker::new();
                let topics: Vec<String> = hub.command_topics().cloned().collect();
                for t in topics {
                    broker
                        .subscribe(HUB_OWNER, &t)
                        .map_err(|e| bad(format!("hub subscription: {e}")))?;
                }
                let hvac = match &iot.hvac {
                    None => None,
                    Some(h) => {
                        broker
                            .subscribe(HVAC_OWNER, &h.co2_topic)
                            .map_err(|e| bad(format!("hvac subscription: {e}")))?;
                        Some((HvacController::new(h.thresholds), h.clone()))
                    }
                };
                Some(IotNode {
                    bus,
                    broker,
                    hub,
                    hvac,
                    topology: iot.topology,
                    broker_service: iot.broker_service.clone(),
                    next_sample: 1,
                })
            }
        };

        let mut world = World {
            spec: spec.clone(),
            kernel: Kernel::new(spec.seed),
            log,
            domains,
            sdn,
            iot,
            next_session: 1,
        };
        world.log.append(
            Timestamp::ZERO,
            HARNESS,
            "scenario_started",
            fields([
                ("name", spec.name.as_str().into()),
                ("seed", spec.seed.into()),
                ("domains", spec.domains.len().into()),
                ("subscribers", spec.subscribers.len().into()),
            ]),
        );
        let initial = PolicyMutation::Replace(spec.policy.clone());
        let (_, pushes) = world
            .sdn
            .update_policies(initial, HARNESS, None, &mut world.log, Timestamp::ZERO)
            .map_err(|e| bad(format!("policy: {e}")))?;
        world.schedule_pushes(pushes);
        for TimelineEntry { at_ms, action } in &spec.timeline {
            world
                .kernel
                .schedule(Timestamp(*at_ms), HARNESS, action.kind(), Msg::Action(action.clone()))
                .expect("timeline entries are not in the past");
        }
        world.kernel.schedule_in(RECONCILE_PERIOD_MS, "fed-sdn", "reconcile", Msg::Reconcile);
        Ok(world)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn now(&self) -> Timestamp {
        self.kernel.now()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    pub fn sdn(&self) -> &FedSdn {
        &self.sdn
    }

    pub fn domain(&self, id: &DomainId) -> Option<&DomainNode> {
        self.domains.get(id)
    }

    pub fn domains(&self) -> impl Iterator<Item = (&DomainId, &DomainNode)> {
        self.domains.iter()
    }

    pub fn bus(&self) -> Option<&Bus> {
        self.iot.as_ref().map(|i| &i.bus)
    }

    pub fn hvac_level(&self) -> Option<u8> {
        self.iot.as_ref()?.hvac.as_ref().map(|(c, _)| c.level())
    }

    /// Processes every event up to and including `t_ms`.
    pub fn run_until(&mut self, t_ms: u64) {
        let end = Timestamp(t_ms.max(self.kernel.now().0));
        while let Some(ev) = self.kernel.pop_due(end) {
            self.dispatch(ev);
        }
        self.kernel.advance_to(end);
    }

    /// Processes whatever is due at the current instant.
    pub fn settle(&mut self) {
        self.run_until(self.kernel.now().0);
    }

    /// Queues an action at the current instant and processes it. Returns
    /// the log records it produced so far.
    pub fn submit(&mut self, action: Action) -> &[EventLogRecord] {
        let start = self.log.len();
        self.kernel.schedule_in(0, "api", action.kind(), Msg::Action(action));
        self.settle();
        self.log.since(start)
    }

    fn dispatch(&mut self, ev: SimEvent<Msg>) {
        match ev.payload {
            Msg::Action(a) => self.on_action(a),
            Msg::Push(p) => self.on_push(p),
            Msg::Reconcile => {
                let pushes = self.sdn.reconcile();
                if !pushes.is_empty() {
                    let now = self.now();
                    self.log.append(now, "fed-sdn", "reconcile_scheduled", fields([("pushes", pushes.len().into())]));
                }
                self.schedule_pushes(pushes);
                self.kernel.schedule_in(RECONCILE_PERIOD_MS, "fed-sdn", "reconcile", Msg::Reconcile);
            }
            Msg::Federation {
                imsi,
                from,
                to,
                from_session,
                vpn_tunnel,
                assertion,
            } => self.on_federation(imsi, from, to, from_session, vpn_tunnel, *assertion),
            Msg::HubTelegram { telegram, origin } => self.on_hub_telegram(telegram, origin),
            Msg::BrokerIn { msg, origin } => self.on_broker_in(msg, origin),
            Msg::HubMessage { msg, origin } => self.on_hub_message(msg, origin),
            Msg::BusWrite { telegram, origin } => self.on_bus_write(telegram, origin),
        }
    }

    fn on_action(&mut self, action: Action) {
        match action {
            Action::Attach { imsi, domain, vpn_tunnel } => {
                self.attach(&imsi, &domain, vpn_tunnel, None);
            }
            Action::Detach { imsi, domain } => self.detach(&imsi, &domain),
            Action::Roam { imsi, from, to } => self.start_roam(&imsi, &from, &to),
            Action::FlowQuery { imsi, target } => {
                self.flow_for(&imsi, &target);
            }
            Action::Publish { topic, payload, retained } => {
                let mut msg = PubSubMessage::text(topic, &payload);
                msg.retained = retained;
                self.on_broker_in(msg, Origin::External);
            }
            Action::Co2Sample { device, ppm } => self.co2_sample(&device, ppm),
            Action::PolicyMutation {
                actor,
                base_version,
                mutation,
            } => {
                let kind = mutation.kind();
                if let Err(e) = self.mutate_policies(mutation, &actor, base_version) {
                    let now = self.now();
                    self.log.append(
                        now,
                        "fed-sdn",
                        "policy_rejected",
                        fields([
                            ("actor", actor.as_str().into()),
                            ("mutation", kind.into()),
                            ("error", e.to_string().into()),
                        ]),
                    );
                }
            }
            Action::FaultInjection { domain, fault } => {
                let now = self.now();
                if self.sdn.inject_fault(&domain, fault, now).is_ok() {
                    let mut f = fields([("domain", domain.as_str().into())]);
                    match fault {
                        crate::sdn::Fault::DropPushes { count } => {
                            f.insert("fault".into(), "drop_pushes".into());
                            f.insert("count".into(), count.into());
                        }
                        crate::sdn::Fault::Unreachable { duration_ms } => {
                            f.insert("fault".into(), "unreachable".into());
                            f.insert("duration_ms".into(), duration_ms.into());
                        }
                    }
                    self.log.push(EventLogRecord {
                        ts: now,
                        component: "fed-sdn".into(),
                        event: "fault_injected".into(),
                        fields: f,
                    });
                }
            }
            Action::Command { imsi, topic, payload } => self.command(&imsi, &topic, &payload),
            Action::Commission { imsi, record } => self.commission(&imsi, record),
            Action::Onboarding {
                imsi,
                domain,
                approve,
                actor,
            } => {
                let pending = self.domains.get(&domain).and_then(|n| {
                    n.gateway
                        .awaiting_approval()
                        .find(|(_, p)| p.request.imsi == imsi)
                        .map(|(sid, _)| *sid)
                });
                match pending {
                    Some(sid) => {
                        let _ = self.resolve_onboarding(sid, approve, &actor);
                    }
                    None => {
                        let now = self.now();
                        self.log.append(
                            now,
                            &format!("gateway:{domain}"),
                            "onboarding_failed",
                            fields([("imsi", imsi.as_str().into()), ("reason", "not_pending".into())]),
                        );
                    }
                }
            }
        }
    }

    // ---- 5G side ----

    fn alloc_session(&mut self) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        id
    }

    fn token_entropy(&mut self, domain: &DomainId) -> u64 {
        self.kernel.rng_next(&format!("gateway:{domain}"))
    }

    /// Opens a pending session and lets the gateway decide. Returns the new
    /// session id when admitted.
    fn attach(
        &mut self,
        imsi: &Imsi,
        domain: &DomainId,
        vpn_tunnel: bool,
        continuity: Option<ContinuityToken>,
    ) -> Option<SessionId> {
        let now = self.now();
        let sid = self.alloc_session();
        let entropy = self.token_entropy(domain);
        let node = self.domains.get_mut(domain)?;
        let core_component = format!("core5g:{domain}");
        if let Err(e) = node.core.attach(imsi, sid, vpn_tunnel) {
            self.log.append(
                now,
                &core_component,
                "attach_error",
                fields([("imsi", imsi.as_str().into()), ("reason", e.to_string().into())]),
            );
            return None;
        }
        self.log.append(
            now,
            &core_component,
            "attach_requested",
            fields([
                ("session_id", sid.into()),
                ("imsi", imsi.as_str().into()),
                ("vpn_tunnel", vpn_tunnel.into()),
            ]),
        );
        let mut req = AccessRequest::attach(sid, imsi.clone(), domain.clone());
        req.vpn_tunnel = vpn_tunnel;
        let outcome = node
            .gateway
            .handle_attach(&req, continuity, &mut node.core, &mut self.log, now, entropy);
        match outcome {
            Ok(o) if o.admitted() => {
                self.sync(domain);
                Some(sid)
            }
            Ok(_) => None,
            Err(e) => {
                let _ = node.core.reject_session(sid);
                self.log.append(
                    now,
                    &core_component,
                    "attach_error",
                    fields([("imsi", imsi.as_str().into()), ("reason", e.to_string().into())]),
                );
                None
            }
        }
    }

    fn release(&mut self, domain: &DomainId, sid: SessionId, imsi: &Imsi, reason: &str) {
        let now = self.now();
        let Some(node) = self.domains.get_mut(domain) else {
            return;
        };
        if node.core.release_session(sid).is_ok() {
            node.gateway.forget_session(sid);
            self.log.append(
                now,
                &format!("core5g:{domain}"),
                "session_released",
                fields([
                    ("session_id", sid.into()),
                    ("imsi", imsi.as_str().into()),
                    ("reason", reason.into()),
                ]),
            );
            self.sync(domain);
        }
    }

    fn detach(&mut self, imsi: &Imsi, domain: &DomainId) {
        let sid = self
            .domains
            .get(domain)
            .and_then(|n| n.core.live_session(imsi))
            .map(|s| s.session_id);
        match sid {
            Some(sid) => self.release(domain, sid, imsi, "detach"),
            None => {
                let now = self.now();
                self.log.append(
                    now,
                    &format!("core5g:{domain}"),
                    "detach_error",
                    fields([("imsi", imsi.as_str().into()), ("reason", "no_session".into())]),
                );
            }
        }
    }

    fn roam_failed(&mut self, imsi: &Imsi, from: &DomainId, to: &DomainId, reason: String) {
        let now = self.now();
        self.log.append(
            now,
            &format!("core5g:{from}"),
            "roam_failed",
            fields([
                ("imsi", imsi.as_str().into()),
                ("from", from.as_str().into()),
                ("to", to.as_str().into()),
                ("reason", reason.into()),
            ]),
        );
    }

    /// Make-before-break switch: the session in `to` is admitted before the
    /// one in `from` is released.
    fn start_roam(&mut self, imsi: &Imsi, from: &DomainId, to: &DomainId) {
        let now = self.now();
        let Some(old) = self
            .domains
            .get(from)
            .and_then(|n| n.core.active_session(imsi))
            .cloned()
        else {
            return self.roam_failed(imsi, from, to, "no_active_session".into());
        };
        let Some(target) = self.domains.get(to) else {
            return self.roam_failed(imsi, from, to, "unknown_domain".into());
        };
        let Some(home) = target.core.subscriber(imsi).map(|s| s.home_domain.clone()) else {
            return self.roam_failed(imsi, from, to, "no_sim_profile".into());
        };
        self.log.append(
            now,
            &format!("core5g:{from}"),
            "sim_switched",
            fields([
                ("imsi", imsi.as_str().into()),
                ("from", from.as_str().into()),
                ("to", to.as_str().into()),
                ("session_id", old.session_id.into()),
            ]),
        );
        let src = &self.domains[from];
        let continuity = src.gateway.session(old.session_id).map(|g| g.continuity.clone());
        if &home == to {
            // Returning home: an ordinary attach carrying the continuity token.
            if self.attach(imsi, to, old.vpn_tunnel, continuity).is_some() {
                self.release(from, old.session_id, imsi, "roamed");
            } else {
                self.roam_failed(imsi, from, to, "home_attach_denied".into());
            }
            return;
        }
        match src.gateway.federate_out(imsi, to, &src.core, now) {
            Err(e) => self.roam_failed(imsi, from, to, e.to_string()),
            Ok(assertion) => {
                self.log.append(
                    now,
                    &format!("gateway:{from}"),
                    "federation_assertion_sent",
                    fields([
                        ("imsi", imsi.as_str().into()),
                        ("to", to.as_str().into()),
                        ("permitted", assertion.permitted.len().into()),
                        ("service_session_id", assertion.continuity.service_session_id.into()),
                    ]),
                );
                let latency = self.spec.federation.latency_ms;
                self.kernel.schedule_in(
                    latency,
                    format!("gateway:{to}"),
                    "federation",
                    Msg::Federation {
                        imsi: imsi.clone(),
                        from: from.clone(),
                        to: to.clone(),
                        from_session: old.session_id,
                        vpn_tunnel: old.vpn_tunnel,
                        assertion: Box::new(assertion),
                    },
                );
            }
        }
    }

    fn on_federation(
        &mut self,
        imsi: Imsi,
        from: DomainId,
        to: DomainId,
        from_session: SessionId,
        vpn_tunnel: bool,
        assertion: FederationAssertion,
    ) {
        let now = self.now();
        let sid = self.alloc_session();
        let entropy = self.token_entropy(&to);
        let node = self.domains.get_mut(&to).expect("roam target validated");
        if let Err(e) = node.core.attach(&imsi, sid, vpn_tunnel) {
            return self.roam_failed(&imsi, &from, &to, e.to_string());
        }
        self.log.append(
            now,
            &format!("core5g:{to}"),
            "attach_requested",
            fields([
                ("session_id", sid.into()),
                ("imsi", imsi.as_str().into()),
                ("vpn_tunnel", vpn_tunnel.into()),
            ]),
        );
        let mut req = AccessRequest::attach(sid, imsi.clone(), to.clone());
        req.via_federation = true;
        req.vpn_tunnel = vpn_tunnel;
        let outcome = node
            .gateway
            .handle_federated_attach(&req, &assertion, &mut node.core, &mut self.log, now, entropy);
        match outcome {
            Ok(o) if o.admitted() => {
                self.sync(&to);
                self.release(&from, from_session, &imsi, "roamed");
            }
            Ok(o) => {
                let reason = o.decision.reason.unwrap_or_else(|| "federation_denied".into());
                self.roam_failed(&imsi, &from, &to, reason);
            }
            Err(e) => {
                let _ = node.core.reject_session(sid);
                self.roam_failed(&imsi, &from, &to, e.to_string());
            }
        }
    }

    /// The domain and active session serving `imsi`, if any.
    pub fn active_session(&self, imsi: &Imsi) -> Option<(DomainId, crate::core5g::PduSession)> {
        self.domains
            .iter()
            .find_map(|(d, n)| n.core.active_session(imsi).map(|s| (d.clone(), s.clone())))
    }

    fn resolve_target(&self, target: &str) -> Option<(Ipv4Addr, u16, Proto)> {
        if target == INTERNET {
            let p = self.spec.internet_probe;
            return Some((*p.ip(), p.port(), Proto::Tcp));
        }
        if let Some(svc) = self.sdn.canonical().service_catalog.get(target) {
            return Some((svc.ip, svc.port, svc.proto));
        }
        target
            .parse::<SocketAddrV4>()
            .ok()
            .map(|a| (*a.ip(), a.port(), Proto::Tcp))
    }

    /// Runs a flow from the subscriber's active session through that
    /// domain's PEP. Every decision is logged; a deny towards a catalog
    /// service also raises a security alarm.
    fn flow_for(&mut self, imsi: &Imsi, target: &str) -> Option<(FlowDecision, DomainId, SessionId)> {
        let now = self.now();
        let Some((domain, session)) = self.active_session(imsi) else {
            self.log.append(
                now,
                HARNESS,
                "flow_unroutable",
                fields([("imsi", imsi.as_str().into()), ("target", target.into())]),
            );
            return None;
        };
        let (dst, port, proto) = self.resolve_target(target)?;
        let src = session.ip.expect("active session has an address");
        let q = FlowQuery {
            src,
            dst,
            dst_port: port,
            proto,
        };
        let node = &self.domains[&domain];
        let decision = node.pep.evaluate_flow(&q);
        let component = format!("pep:{domain}");
        self.log.append(
            now,
            &component,
            "flow_decision",
            fields([
                ("imsi", imsi.as_str().into()),
                ("session_id", session.session_id.into()),
                ("src", src.to_string().into()),
                ("dst", dst.to_string().into()),
                ("dst_port", port.into()),
                ("proto", proto.to_string().into()),
                ("target", target.into()),
                ("action", decision.action.to_string().into()),
                ("matched_acl", decision.matched_label().into()),
                ("egress", decision.egress_label().into()),
                ("policy_version", node.pep.installed_version().into()),
            ]),
        );
        if !decision.is_permit() {
            let service = self
                .sdn
                .canonical()
                .service_catalog
                .iter()
                .find(|(_, s)| s.ip == dst)
                .map(|(n, _)| n.clone());
            if let Some(service) = service {
                self.log.append(
                    now,
                    ALARM,
                    "security_alarm",
                    fields([
                        ("imsi", imsi.as_str().into()),
                        ("session_id", session.session_id.into()),
                        ("src", src.to_string().into()),
                        ("dst", dst.to_string().into()),
                        ("service", service.into()),
                        ("domain", domain.as_str().into()),
                    ]),
                );
            }
        }
        Some((decision, domain, session.session_id))
    }

    // ---- controller ----

    fn schedule_pushes(&mut self, pushes: Vec<Push>) {
        for p in pushes {
            let target = format!("pep:{}", p.domain);
            self.kernel.schedule_in(p.delay_ms, target, "push", Msg::Push(p));
        }
    }

    fn sync(&mut self, domain: &DomainId) {
        if let Some(p) = self.sdn.request_sync(domain) {
            self.schedule_pushes(vec![p]);
        }
    }

    fn on_push(&mut self, push: Push) {
        let now = self.now();
        let plan = match self.sdn.begin_push(&push, &mut self.log, now) {
            Ok(plan) => plan,
            Err(e) => {
                self.log.append(
                    now,
                    "fed-sdn",
                    "push_rejected",
                    fields([("domain", push.domain.as_str().into()), ("error", e.to_string().into())]),
                );
                return;
            }
        };
        match plan {
            PushPlan::Superseded { .. } | PushPlan::Failed { retry: None } => {}
            PushPlan::Failed { retry: Some(p) } => self.schedule_pushes(vec![p]),
            PushPlan::Deliver => {
                let view = self.sdn.poll_sessions(
                    self.domains.values().map(|n| (&n.core, &n.gateway)),
                    &mut self.log,
                    now,
                );
                let canonical = Arc::clone(self.sdn.canonical());
                let node = self.domains.get_mut(&push.domain).expect("registered domain");
                let installed = compile_enforcement(&view, &canonical, &push.domain)
                    .map_err(|e| e.to_string())
                    .and_then(|prog| {
                        let counts = (prog.routes.len(), prog.acls.len());
                        node.pep
                            .apply_program(prog.routes, prog.acls, canonical.version)
                            .map(|()| counts)
                            .map_err(|e| e.to_string())
                    });
                match installed {
                    Ok((routes, acls)) => {
                        node.gateway.install_policies(Arc::clone(&canonical));
                        self.sdn.ack(&push.domain, canonical.version);
                        self.log.append(
                            now,
                            "fed-sdn",
                            "push_applied",
                            fields([
                                ("domain", push.domain.as_str().into()),
                                ("version", canonical.version.into()),
                                ("attempt", push.attempt.into()),
                                ("routes", routes.into()),
                                ("acls", acls.into()),
                            ]),
                        );
                    }
                    Err(e) => self.log.append(
                        now,
                        "fed-sdn",
                        "push_rejected",
                        fields([("domain", push.domain.as_str().into()), ("error", e.into())]),
                    ),
                }
            }
        }
    }

    /// Applies a policy mutation and processes the resulting zero-delay
    /// pushes. Returns the new canonical version.
    pub fn mutate_policies(
        &mut self,
        mutation: PolicyMutation,
        actor: &str,
        base_version: Option<u64>,
    ) -> Result<u64, WorldError> {
        let now = self.now();
        let (version, pushes) = self
            .sdn
            .update_policies(mutation, actor, base_version, &mut self.log, now)?;
        self.schedule_pushes(pushes);
        Ok(version)
    }

    pub fn policies(&self) -> Arc<CanonicalPolicySet> {
        Arc::clone(self.sdn.canonical())
    }

    /// Current sessions across domains, read without logging.
    pub fn sessions(&self) -> SessionView {
        let mut view = SessionView {
            as_of: self.now(),
            ..SessionView::default()
        };
        let now = self.now();
        for (d, n) in &self.domains {
            if self.sdn.is_unreachable(d, now) {
                view.unreachable.push(d.clone());
                continue;
            }
            view.entries.extend(poll_domain(&n.core, &n.gateway));
        }
        view.entries.sort_by(|a, b| (&a.domain, a.session_id).cmp(&(&b.domain, b.session_id)));
        view
    }

    pub fn pending_onboarding(&self) -> Vec<OnboardingItem> {
        self.domains
            .iter()
            .flat_map(|(d, n)| {
                n.gateway.awaiting_approval().map(move |(sid, p)| OnboardingItem {
                    session_id: *sid,
                    imsi: p.request.imsi.clone(),
                    domain: d.clone(),
                    matched_rule: p.matched_rule.clone(),
                })
            })
            .collect()
    }

    /// Approves or denies a pending onboarding. Returns whether a session
    /// was admitted.
    pub fn resolve_onboarding(&mut self, session_id: SessionId, approve: bool, actor: &str) -> Result<bool, WorldError> {
        let domain = self
            .domains
            .iter()
            .find(|(_, n)| n.gateway.awaiting_approval().any(|(s, _)| *s == session_id))
            .map(|(d, _)| d.clone())
            .ok_or(WorldError::NotAwaitingApproval(session_id))?;
        let now = self.now();
        let entropy = self.token_entropy(&domain);
        let node = self.domains.get_mut(&domain).expect("domain found above");
        let outcome = node
            .gateway
            .resolve_approval(session_id, approve, actor, &mut node.core, &mut self.log, now, entropy)?;
        if outcome.admitted() {
            self.sync(&domain);
        }
        Ok(outcome.admitted())
    }

    /// Starts a roam of `imsi` from wherever it is active to `to`.
    pub fn roam(&mut self, imsi: &Imsi, to: &DomainId) -> Result<(), WorldError> {
        if self.spec.subscriber(imsi).is_none() {
            return Err(WorldError::UnknownImsi(imsi.clone()));
        }
        if !self.domains.contains_key(to) {
            return Err(WorldError::UnknownDomain(to.clone()));
        }
        let (from, _) = self
            .active_session(imsi)
            .ok_or_else(|| WorldError::NoActiveSession(imsi.clone()))?;
        if &from == to {
            return Err(WorldError::SameDomain(imsi.clone(), from));
        }
        if self.sdn.is_unreachable(to, self.now()) {
            return Err(SdnError::DomainUnreachable(to.clone()).into());
        }
        self.submit(Action::Roam {
            imsi: imsi.clone(),
            from,
            to: to.clone(),
        });
        Ok(())
    }

    /// Evaluates a request against a domain's installed rules without side
    /// effects.
    pub fn decide(&self, domain: &DomainId, req: &AccessRequest) -> Result<AuthzDecision, WorldError> {
        let node = self
            .domains
            .get(domain)
            .ok_or_else(|| WorldError::UnknownDomain(domain.clone()))?;
        if self.sdn.is_unreachable(domain, self.now()) {
            return Err(SdnError::DomainUnreachable(domain.clone()).into());
        }
        let ctx = node
            .core
            .query_subscriber_context(&req.imsi)
            .map_err(|_| WorldError::UnknownImsi(req.imsi.clone()))?;
        Ok(crate::gateway::evaluate_access(req, &ctx, &node.gateway.policies().rules)?)
    }

    // ---- building side ----

    fn co2_sample(&mut self, device: &str, ppm: f64) {
        let now = self.now();
        let Some(iot) = self.iot.as_mut() else { return };
        let Some(rec) = iot.bus.device(device).map(|d| d.record.clone()) else {
            return;
        };
        let Some(link) = rec
            .links
            .iter()
            .find(|l| l.direction == Direction::Out && l.dpt == Dpt::Ppm)
        else {
            return;
        };
        let Ok(payload) = dpt9_encode(ppm) else { return };
        let telegram = Telegram {
            src: rec.individual_address,
            ga: link.ga,
            service: Service::Write,
            payload: payload.to_vec(),
        };
        let _ = iot.bus.group_write(telegram.src, telegram.ga, &telegram.payload);
        let sample_id = iot.next_sample;
        iot.next_sample += 1;
        let value = dpt::decode(Dpt::Ppm, &payload).map(dpt::render).unwrap_or_default();
        let mesh = iot.topology.mesh_hops * iot.topology.hop_latency_ms;
        self.log.append(
            now,
            BUS,
            "co2_sampled",
            fields([
                ("device", device.into()),
                ("ga", link.ga.to_string().into()),
                ("ppm", value.into()),
                ("sample_id", sample_id.into()),
            ]),
        );
        self.kernel.schedule_in(
            mesh,
            HUB,
            "telegram",
            Msg::HubTelegram {
                telegram,
                origin: Origin::Sample { sample_id, ts: now },
            },
        );
    }

    fn on_hub_telegram(&mut self, telegram: Telegram, origin: Origin) {
        let now = self.now();
        let Some(iot) = self.iot.as_ref() else { return };
        let backhaul = iot.topology.backhaul_hops * iot.topology.hop_latency_ms;
        match iot.hub.on_telegram(&telegram) {
            Ok(BridgeOutcome::Forwarded(msg)) => {
                self.log.append(
                    now,
                    HUB,
                    "telemetry_bridged",
                    fields([
                        ("ga", telegram.ga.to_string().into()),
                        ("topic", msg.topic.as_str().into()),
                        ("payload", msg.payload_text().into()),
                    ]),
                );
                self.kernel
                    .schedule_in(backhaul, BROKER, "publish", Msg::BrokerIn { msg, origin });
            }
            Ok(BridgeOutcome::Suppressed) | Ok(BridgeOutcome::Unmapped) => {}
            Err(e) => self.log.append(
                now,
                HUB,
                "bridge_error",
                fields([("ga", telegram.ga.to_string().into()), ("error", e.to_string().into())]),
            ),
        }
    }

    fn on_broker_in(&mut self, msg: PubSubMessage, origin: Origin) {
        let now = self.now();
        let Some(iot) = self.iot.as_mut() else { return };
        let backhaul = iot.topology.backhaul_hops * iot.topology.hop_latency_ms;
        let subs = match iot.broker.publish(&msg) {
            Ok(s) => s,
            Err(e) => {
                self.log.append(
                    now,
                    BROKER,
                    "publish_rejected",
                    fields([("topic", msg.topic.as_str().into()), ("error", e.to_string().into())]),
                );
                return;
            }
        };
        self.log.append(
            now,
            BROKER,
            "message_published",
            fields([
                ("topic", msg.topic.as_str().into()),
                ("payload", msg.payload_text().into()),
                ("subscribers", subs.len().into()),
                ("retained", msg.retained.into()),
            ]),
        );
        for sub in subs {
            match sub.owner.as_str() {
                HUB_OWNER => {
                    self.kernel.schedule_in(
                        backhaul,
                        HUB,
                        "message",
                        Msg::HubMessage {
                            msg: msg.clone(),
                            origin: origin.clone(),
                        },
                    );
                }
                HVAC_OWNER => self.on_hvac_sample(&msg, origin.clone()),
                _ => {}
            }
        }
    }

    fn on_hvac_sample(&mut self, msg: &PubSubMessage, origin: Origin) {
        let now = self.now();
        let Some((ctl, cfg)) = self.iot.as_mut().and_then(|i| i.hvac.as_mut()) else {
            return;
        };
        let text = msg.payload_text();
        let Ok(ppm) = text.trim().parse::<f64>() else {
            self.log.append(now, HVAC, "hvac_bad_sample", fields([("payload", text.into())]));
            return;
        };
        let Some(level) = ctl.on_sample(ppm) else { return };
        let command = PubSubMessage::text(cfg.command_topic.clone(), &level.to_string());
        let sample_id = match &origin {
            Origin::Sample { sample_id, .. } => *sample_id as i64,
            _ => -1,
        };
        self.log.append(
            now,
            HVAC,
            "hvac_level_changed",
            fields([
                ("level", level.into()),
                ("ppm", text.into()),
                ("sample_id", sample_id.into()),
            ]),
        );
        self.on_broker_in(command, origin);
    }

    fn on_hub_message(&mut self, msg: PubSubMessage, origin: Origin) {
        let now = self.now();
        let Some(iot) = self.iot.as_ref() else { return };
        let mesh = iot.topology.mesh_hops * iot.topology.hop_latency_ms;
        match iot.hub.on_message(&msg) {
            Ok(BridgeOutcome::Forwarded(telegram)) => {
                self.log.append(
                    now,
                    HUB,
                    "command_bridged",
                    fields([
                        ("topic", msg.topic.as_str().into()),
                        ("ga", telegram.ga.to_string().into()),
                    ]),
                );
                self.kernel
                    .schedule_in(mesh, BUS, "write", Msg::BusWrite { telegram, origin });
            }
            Ok(_) => {}
            Err(e) => self.log.append(
                now,
                HUB,
                "bridge_error",
                fields([("topic", msg.topic.as_str().into()), ("error", e.to_string().into())]),
            ),
        }
    }

    fn on_bus_write(&mut self, telegram: Telegram, origin: Origin) {
        let now = self.now();
        let Some(iot) = self.iot.as_mut() else { return };
        let delivered = match iot.bus.group_write(telegram.src, telegram.ga, &telegram.payload) {
            Ok(n) => n,
            Err(e) => {
                self.log.append(
                    now,
                    BUS,
                    "telegram_rejected",
                    fields([("ga", telegram.ga.to_string().into()), ("error", e.to_string().into())]),
                );
                return;
            }
        };
        let value = iot
            .bus
            .group_dpt(telegram.ga)
            .and_then(|d| dpt::decode(d, &telegram.payload).ok())
            .map(dpt::render)
            .unwrap_or_else(|| hex::encode(&telegram.payload));
        // The hub hears its own write on the bus and does not echo it.
        let _ = iot.hub.on_telegram(&telegram);
        self.log.append(
            now,
            BUS,
            "telegram_delivered",
            fields([
                ("src", telegram.src.to_string().into()),
                ("ga", telegram.ga.to_string().into()),
                ("value", value.clone().into()),
                ("delivered", delivered.into()),
            ]),
        );
        match origin {
            Origin::External => {}
            Origin::Sample { sample_id, ts } => self.log.append(
                now,
                HVAC,
                "hvac_command",
                fields([
                    ("ga", telegram.ga.to_string().into()),
                    ("level", value.into()),
                    ("sample_id", sample_id.into()),
                    ("sample_ts", ts.0.into()),
                    ("latency_ms", now.saturating_sub(ts).into()),
                ]),
            ),
            Origin::Command {
                imsi,
                session_id,
                domain,
                service_session_id,
                ts,
            } => {
                let mut f = fields([
                    ("imsi", imsi.as_str().into()),
                    ("session_id", session_id.into()),
                    ("domain", domain.as_str().into()),
                    ("ga", telegram.ga.to_string().into()),
                    ("value", value.into()),
                    ("latency_ms", now.saturating_sub(ts).into()),
                ]);
                if let Some(id) = service_session_id {
                    f.insert("service_session_id".into(), id.into());
                }
                self.log.push(EventLogRecord {
                    ts: now,
                    component: BUS.into(),
                    event: "command_delivered".into(),
                    fields: f,
                });
            }
        }
    }

    /// A subscriber publishes to the broker through its session; the PEP
    /// decides whether it gets there.
    fn command(&mut self, imsi: &Imsi, topic: &str, payload: &str) {
        let Some(broker_service) = self.iot.as_ref().map(|i| i.broker_service.clone()) else {
            return;
        };
        let Some((decision, domain, session_id)) = self.flow_for(imsi, &broker_service) else {
            return;
        };
        if !decision.is_permit() {
            return;
        }
        let now = self.now();
        let service_session_id = self.domains[&domain]
            .gateway
            .session(session_id)
            .map(|g| g.continuity.service_session_id);
        let mut f = fields([
            ("imsi", imsi.as_str().into()),
            ("session_id", session_id.into()),
            ("domain", domain.as_str().into()),
            ("topic", topic.into()),
            ("payload", payload.into()),
        ]);
        if let Some(id) = service_session_id {
            f.insert("service_session_id".into(), id.into());
        }
        self.log.push(EventLogRecord {
            ts: now,
            component: HARNESS.into(),
            event: "command_sent".into(),
            fields: f,
        });
        let iot = self.iot.as_ref().expect("checked above");
        let backhaul = iot.topology.backhaul_hops * iot.topology.hop_latency_ms;
        self.kernel.schedule_in(
            backhaul,
            BROKER,
            "publish",
            Msg::BrokerIn {
                msg: PubSubMessage::text(topic, payload),
                origin: Origin::Command {
                    imsi: imsi.clone(),
                    session_id,
                    domain,
                    service_session_id,
                    ts: now,
                },
            },
        );
    }

    /// Commissioning happens over the installer's active, VPN-flagged
    /// session.
    fn commission(&mut self, imsi: &Imsi, record: CommissioningRecord) {
        let now = self.now();
        let reject = |log: &mut EventLog, reason: String| {
            log.append(
                now,
                BUS,
                "commission_rejected",
                fields([
                    ("device_id", record.device_id.as_str().into()),
                    ("imsi", imsi.as_str().into()),
                    ("reason", reason.into()),
                ]),
            );
        };
        let Some((_, session)) = self.active_session(imsi) else {
            return reject(&mut self.log, "no_session".into());
        };
        if !session.vpn_tunnel {
            return reject(&mut self.log, "no_vpn_tunnel".into());
        }
        let Some(iot) = self.iot.as_mut() else {
            return reject(&mut self.log, "no_iot_domain".into());
        };
        if let Err(e) = iot.bus.commission(record.clone()) {
            return reject(&mut self.log, e.to_string());
        }
        self.log.append(
            now,
            BUS,
            "device_commissioned",
            fields([
                ("device_id", record.device_id.as_str().into()),
                ("individual_address", record.individual_address.to_string().into()),
                ("links", record.links.len().into()),
                ("installer", imsi.as_str().into()),
                ("session_id", session.session_id.into()),
            ]),
        );
    }

    // ---- matrices ----

    /// Every active session with its row label and home-side attributes.
    pub fn matrix_sessions(&self) -> Vec<MatrixSession> {
        let mut out = Vec::new();
        for (d, n) in &self.domains {
            for s in n.core.sessions().filter(|s| s.state == SessionState::Active) {
                let Some(sub) = self.spec.subscriber(&s.imsi) else { continue };
                let Some(ip) = s.ip else { continue };
                let federated = n
                    .gateway
                    .session(s.session_id)
                    .is_some_and(|g| g.assertion_permitted.is_some());
                let context = self
                    .domains
                    .get(&sub.home_domain)
                    .and_then(|h| h.core.query_subscriber_context(&s.imsi).ok())
                    .unwrap_or_else(|| SubscriberContext::from(sub));
                out.push(MatrixSession {
                    label: row_label(sub),
                    session_id: s.session_id,
                    domain: d.clone(),
                    ip,
                    slice_id: s.slice_id.clone().unwrap_or_default(),
                    vpn_tunnel: s.vpn_tunnel,
                    federated,
                    context,
                });
            }
        }
        out
    }

    /// Matrix columns: catalog services then `internet`, each with its
    /// destination.
    pub fn matrix_columns(&self) -> Vec<(String, Ipv4Addr, u16, Proto)> {
        let mut cols: Vec<_> = self
            .sdn
            .canonical()
            .service_catalog
            .iter()
            .map(|(n, s)| (n.clone(), s.ip, s.port, s.proto))
            .collect();
        let p = self.spec.internet_probe;
        cols.push((INTERNET.to_string(), *p.ip(), p.port(), Proto::Tcp));
        cols
    }

    fn empty_matrix(&self) -> FlowMatrix {
        let cols = self.matrix_columns();
        self.spec
            .subscribers
            .iter()
            .map(|s| {
                let row = cols.iter().map(|(c, ..)| (c.clone(), Verdict::Deny)).collect();
                (row_label(s), row)
            })
            .collect()
    }

    /// PEP decisions per (row label, column). A cell permits when any
    /// active session with that label gets through; labels with no active
    /// session are all deny.
    pub fn flow_matrix(&self) -> FlowMatrix {
        let mut m = self.empty_matrix();
        let cols = self.matrix_columns();
        for s in self.matrix_sessions() {
            let pep = &self.domains[&s.domain].pep;
            let row = m.entry(s.label.clone()).or_default();
            for (c, dst, port, proto) in &cols {
                let q = FlowQuery {
                    src: s.ip,
                    dst: *dst,
                    dst_port: *port,
                    proto: *proto,
                };
                if pep.evaluate_flow(&q).is_permit() {
                    row.insert(c.clone(), Verdict::Permit);
                }
            }
        }
        m
    }

    /// The matrix the canonical rules imply, by direct rule evaluation per
    /// (session, permission) with no compiled program involved. A roamed
    /// session needs both the home grant and the visited federated grant.
    pub fn oracle_matrix(&self) -> FlowMatrix {
        use crate::gateway::policy::{Action as Act, Effect};
        let policies = self.sdn.canonical();
        let mut m = self.empty_matrix();
        for s in self.matrix_sessions() {
            let row = m.entry(s.label.clone()).or_default();
            for (c, ..) in self.matrix_columns() {
                let (action, resource) = if c == INTERNET {
                    (Act::Internet, crate::gateway::RED_SIDE.to_string())
                } else {
                    (Act::Access, c.clone())
                };
                let mut req = AccessRequest::attach(s.session_id, s.context.imsi.clone(), s.domain.clone());
                req.requested_action = action;
                req.resource = resource;
                req.vpn_tunnel = s.vpn_tunnel;
                let permit = |req: &AccessRequest, ctx: &SubscriberContext| {
                    crate::gateway::evaluate_access(req, ctx, &policies.rules)
                        .map(|d| d.effect == Effect::Permit)
                        .unwrap_or(false)
                };
                let ok = if s.federated {
                    let mut visited_ctx = s.context.clone();
                    visited_ctx.subscription_active = true;
                    let mut visited = req.clone();
                    visited.via_federation = true;
                    permit(&req, &s.context) && permit(&visited, &visited_ctx)
                } else {
                    permit(&req, &s.context)
                };
                if ok {
                    row.insert(c, Verdict::Permit);
                }
            }
        }
        m
    }
}
