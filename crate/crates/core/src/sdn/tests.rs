use super::*;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use proptest::prelude::*;

use crate::core5g::{Imsi, Slice, Subscriber};
use crate::gateway::{
    AccessRequest, Action, AnyOf, Effect, GatewayConfig, MacKey, Scope, ServiceEndpoint, Subject, RED_SIDE,
};
use crate::pep::{AclAction, FlowQuery, NextHop, Pep, Proto};
use crate::sim::Kernel;

fn dom(s: &str) -> DomainId {
    DomainId::from(s)
}

fn rule(id: &str, priority: u32, roles: &[&str], action: Action, resource: &str) -> AuthorizationPolicy {
    AuthorizationPolicy {
        rule_id: id.into(),
        priority,
        subject: Subject {
            roles: if roles.is_empty() { AnyOf::Any } else { AnyOf::set(roles.iter().copied()) },
            ..Subject::default()
        },
        action,
        resource: resource.into(),
        effect: Effect::Permit,
        scope: Scope::Any,
    }
}

fn catalog() -> ServiceCatalog {
    let svc = |last: u8, port: u16, slice: &str| ServiceEndpoint {
        ip: Ipv4Addr::new(10, 40, 7, last),
        port,
        proto: Proto::Tcp,
        slice_id: slice.into(),
    };
    [
        ("customer-portal", svc(40, 443, "cust")),
        ("mqtt-broker", svc(20, 1883, "iot")),
    ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), s))
    .collect()
}

fn doc() -> PolicyDocument {
    PolicyDocument {
        rules: vec![
            rule("attach", 1, &[], Action::Attach, "*"),
            rule("cust", 10, &["customer"], Action::Access, "customer-portal"),
            rule("net", 10, &["customer"], Action::Internet, RED_SIDE),
        ],
        role_slice_map: [("customer".to_string(), "cust".to_string())].into_iter().collect(),
        service_catalog: catalog(),
    }
}

fn controller() -> (FedSdn, EventLog) {
    let mut sdn = FedSdn::new();
    sdn.register_domain(dom("private"), "gateway:private");
    sdn.register_domain(dom("public"), "gateway:public");
    (sdn, EventLog::new())
}

fn at_version(v: u64) -> (FedSdn, EventLog) {
    let (mut sdn, mut log) = controller();
    sdn.update_policies(PolicyMutation::Replace(doc()), "test", None, &mut log, Timestamp(0))
        .unwrap();
    for i in 2..=v {
        let r = rule(&format!("extra{i}"), 50, &["nobody"], Action::Access, "*");
        sdn.update_policies(PolicyMutation::AddRule { rule: r }, "test", None, &mut log, Timestamp(0))
            .unwrap();
    }
    for d in [dom("private"), dom("public")] {
        sdn.ack(&d, v);
    }
    (sdn, log)
}

#[test]
fn add_rule_bumps_version_and_pushes_to_both_domains() {
    let (mut sdn, mut log) = at_version(7);
    let r = rule("new", 30, &["customer"], Action::Access, "mqtt-broker");
    let (v, pushes) = sdn
        .update_policies(PolicyMutation::AddRule { rule: r }, "alice", Some(7), &mut log, Timestamp(3))
        .unwrap();
    assert_eq!(v, 8);
    assert_eq!(pushes.len(), 2);
    assert!(pushes.iter().all(|p| p.version == 8 && p.attempt == 0));
    let audit = log.iter_event("policy_updated").last().unwrap();
    assert_eq!(audit.str_field("actor"), Some("alice"));
    assert_eq!(audit.field("concurrent"), Some(&Scalar::Bool(false)));
}

#[test]
fn malformed_mutation_keeps_the_version() {
    let (mut sdn, mut log) = at_version(7);
    let r = rule("bad", 30, &[], Action::Access, "a*b");
    let err = sdn
        .update_policies(PolicyMutation::AddRule { rule: r }, "alice", None, &mut log, Timestamp(3))
        .unwrap_err();
    assert!(matches!(err, SdnError::Policy(GatewayError::MalformedPolicy { .. })));
    assert_eq!(sdn.version(), 7);

    let err = sdn
        .update_policies(
            PolicyMutation::RemoveRule { rule_id: "nope".into() },
            "alice",
            None,
            &mut log,
            Timestamp(3),
        )
        .unwrap_err();
    assert_eq!(err, SdnError::UnknownRule("nope".into()));
    assert_eq!(sdn.version(), 7);
}

#[test]
fn sequential_mutations_carry_matching_versions() {
    let (mut sdn, mut log) = at_version(7);
    let (v8, p8) = sdn
        .update_policies(PolicyMutation::RemoveRule { rule_id: "extra7".into() }, "a", None, &mut log, Timestamp(1))
        .unwrap();
    let (v9, p9) = sdn
        .update_policies(PolicyMutation::RemoveRule { rule_id: "extra6".into() }, "b", Some(7), &mut log, Timestamp(2))
        .unwrap();
    assert_eq!((v8, v9), (8, 9));
    assert!(p8.iter().all(|p| p.version == 8));
    assert!(p9.iter().all(|p| p.version == 9));
    let last = log.iter_event("policy_updated").last().unwrap();
    assert_eq!(last.field("concurrent"), Some(&Scalar::Bool(true)));
}

#[test]
fn delivered_push_is_acknowledged() {
    let (mut sdn, mut log) = at_version(7);
    let (_, pushes) = sdn
        .update_policies(PolicyMutation::RemoveRule { rule_id: "extra7".into() }, "a", None, &mut log, Timestamp(1))
        .unwrap();
    assert_eq!(sdn.begin_push(&pushes[0], &mut log, Timestamp(1)).unwrap(), PushPlan::Deliver);
    sdn.ack(&pushes[0].domain, 8);
    assert_eq!(sdn.registry()[&pushes[0].domain].applied_policy_version, 8);
    assert!(!sdn.converged());
}

#[test]
fn push_to_unregistered_domain_is_unreachable() {
    let (mut sdn, mut log) = at_version(1);
    let push = Push {
        domain: dom("mars"),
        version: 1,
        attempt: 0,
        delay_ms: 0,
    };
    assert_eq!(
        sdn.begin_push(&push, &mut log, Timestamp(0)),
        Err(SdnError::DomainUnreachable(dom("mars")))
    );
}

#[test]
fn dropped_push_is_retried_after_backoff() {
    let (mut sdn, mut log) = at_version(7);
    sdn.inject_fault(&dom("public"), Fault::DropPushes { count: 1 }, Timestamp(0))
        .unwrap();
    let (_, pushes) = sdn
        .update_policies(PolicyMutation::RemoveRule { rule_id: "extra7".into() }, "a", None, &mut log, Timestamp(0))
        .unwrap();
    let public = pushes.iter().find(|p| p.domain == dom("public")).unwrap();
    let PushPlan::Failed { retry: Some(retry) } = sdn.begin_push(public, &mut log, Timestamp(0)).unwrap() else {
        panic!("first push should fail");
    };
    assert_eq!(retry.delay_ms, RETRY_BACKOFF_MS);
    assert_eq!(retry.attempt, 1);
    assert_eq!(
        sdn.begin_push(&retry, &mut log, Timestamp(RETRY_BACKOFF_MS)).unwrap(),
        PushPlan::Deliver
    );
    sdn.ack(&retry.domain, retry.version);
    assert_eq!(sdn.registry()[&dom("public")].applied_policy_version, 8);
}

#[test]
fn retries_stop_with_an_alarm() {
    let (mut sdn, mut log) = at_version(1);
    sdn.inject_fault(&dom("public"), Fault::Unreachable { duration_ms: 60_000 }, Timestamp(0))
        .unwrap();
    let mut push = sdn.request_sync(&dom("public")).unwrap();
    let mut t = Timestamp(0);
    let mut failures = 0;
    loop {
        match sdn.begin_push(&push, &mut log, t).unwrap() {
            PushPlan::Failed { retry: Some(next) } => {
                failures += 1;
                t = t + next.delay_ms;
                push = next;
            }
            PushPlan::Failed { retry: None } => {
                failures += 1;
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(failures, 1 + MAX_RETRIES);
    assert_eq!(log.iter_event("push_alarm").count(), 1);
    assert_eq!(t, Timestamp(RETRY_BACKOFF_MS * MAX_RETRIES as u64));
}

#[test]
fn stale_push_is_superseded() {
    let (mut sdn, mut log) = at_version(7);
    let (_, p8) = sdn
        .update_policies(PolicyMutation::RemoveRule { rule_id: "extra7".into() }, "a", None, &mut log, Timestamp(1))
        .unwrap();
    sdn.update_policies(PolicyMutation::RemoveRule { rule_id: "extra6".into() }, "a", None, &mut log, Timestamp(1))
        .unwrap();
    assert_eq!(
        sdn.begin_push(&p8[0], &mut log, Timestamp(1)).unwrap(),
        PushPlan::Superseded { canonical: 9 }
    );
    assert_eq!(log.iter_event("push_superseded").count(), 1);
}

#[test]
fn reconcile_is_idempotent() {
    let (mut sdn, _) = at_version(3);
    assert!(sdn.reconcile().is_empty());
    sdn.register_domain(dom("edge"), "gateway:edge");
    let first = sdn.reconcile();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].domain, dom("edge"));
    assert_eq!(first[0].version, 3);
    assert!(sdn.reconcile().is_empty());
}

#[test]
fn sync_requests_coalesce_with_in_flight_pushes() {
    let (mut sdn, _) = at_version(2);
    let first = sdn.request_sync(&dom("private"));
    assert!(first.is_some());
    assert!(sdn.request_sync(&dom("private")).is_none());
    sdn.ack(&dom("private"), 2);
    assert!(sdn.request_sync(&dom("private")).is_some());
    assert!(sdn.request_sync(&dom("mars")).is_none());
}

// Harness for end-to-end controller tests: two cores, two gateways, two PEPs.

struct Net {
    sdn: FedSdn,
    log: EventLog,
    cores: BTreeMap<DomainId, Core5g>,
    gws: BTreeMap<DomainId, Gateway>,
    peps: BTreeMap<DomainId, Pep>,
}

fn imsi(n: u64) -> Imsi {
    Imsi::parse(&format!("00101{n:010}")).unwrap()
}

fn net() -> Net {
    let (mut sdn, mut log) = controller();
    let (v, _) = sdn
        .update_policies(PolicyMutation::Replace(doc()), "scenario", None, &mut log, Timestamp(0))
        .unwrap();
    let mut cores = BTreeMap::new();
    let mut gws = BTreeMap::new();
    let mut peps = BTreeMap::new();
    for (name, pool) in [("private", "10.42.0.0/16"), ("public", "10.99.0.0/16")] {
        let d = dom(name);
        let mut core = Core5g::new(
            d.clone(),
            pool.parse().unwrap(),
            [Slice {
                slice_id: "cust".into(),
                qos_class: "be".into(),
                isolation_tag: "cust".into(),
            }],
        );
        for (n, roles) in [(1, vec!["customer"]), (2, vec![])] {
            core.register_subscriber(Subscriber {
                imsi: imsi(n),
                home_domain: dom("private"),
                sim_profiles: vec![dom("private"), dom("public")],
                roles: roles.into_iter().map(String::from).collect::<BTreeSet<_>>(),
                device_type: "ue".into(),
                posture: 2,
                subscription_active: true,
            })
            .unwrap();
        }
        let mut gw = Gateway::new(GatewayConfig {
            domain: d.clone(),
            key: MacKey::new([1; 32]),
            federation_key: MacKey::new([2; 32]),
            peers: BTreeSet::new(),
            token_ttl_ms: 1000,
            assertion_ttl_ms: 1000,
        });
        gw.install_policies(sdn.canonical().clone());
        sdn.ack(&d, v);
        cores.insert(d.clone(), core);
        gws.insert(d.clone(), gw);
        peps.insert(d, Pep::new());
    }
    Net {
        sdn,
        log,
        cores,
        gws,
        peps,
    }
}

impl Net {
    fn attach(&mut self, domain: &str, n: u64, sid: u64) -> bool {
        let d = dom(domain);
        let core = self.cores.get_mut(&d).unwrap();
        core.attach(&imsi(n), sid, false).unwrap();
        let req = AccessRequest::attach(sid, imsi(n), d.clone());
        self.gws
            .get_mut(&d)
            .unwrap()
            .handle_attach(&req, None, core, &mut self.log, Timestamp(0), sid)
            .unwrap()
            .admitted()
    }

    fn view(&mut self, now: Timestamp) -> SessionView {
        let pairs: Vec<_> = self
            .cores
            .iter()
            .map(|(d, c)| (c, &self.gws[d]))
            .collect();
        self.sdn.poll_sessions(pairs, &mut self.log, now)
    }
}

#[test]
fn poll_reports_active_sessions_and_skips_denied() {
    let mut n = net();
    assert!(n.attach("private", 1, 1));
    assert!(!n.attach("private", 2, 2));
    let view = n.view(Timestamp(5));
    assert_eq!(view.entries.len(), 1);
    assert_eq!(view.entries[0].imsi, imsi(1));
    assert_eq!(view.entries[0].ip, Some(Ipv4Addr::new(10, 42, 0, 2)));
    assert_eq!(view.entries[0].service_session_id, Some(1));
    assert_eq!(view.for_imsi(&imsi(2)).count(), 0);
    let polled = n.log.iter_event("sessions_polled").last().unwrap();
    assert_eq!(polled.int_field("entries"), Some(1));
}

#[test]
fn unreachable_domain_is_listed_and_others_still_reported() {
    let mut n = net();
    assert!(n.attach("private", 1, 1));
    assert!(n.attach("public", 1, 2));
    n.sdn
        .inject_fault(&dom("public"), Fault::Unreachable { duration_ms: 100 }, Timestamp(0))
        .unwrap();
    let view = n.view(Timestamp(50));
    assert_eq!(view.unreachable, vec![dom("public")]);
    assert_eq!(view.entries.len(), 1);
    assert_eq!(n.view(Timestamp(100)).entries.len(), 2);
}

#[test]
fn empty_view_compiles_to_static_routes_and_global_deny() {
    let set = CanonicalPolicySet {
        version: 1,
        rules: doc().rules,
        role_slice_map: doc().role_slice_map,
        service_catalog: catalog(),
    };
    let p = compile_enforcement(&SessionView::default(), &set, &dom("private")).unwrap();
    assert_eq!(p.routes.len(), catalog().len());
    assert!(p.routes.iter().all(|r| matches!(r.next_hop, NextHop::Service(_))));
    assert_eq!(p.acls.len(), 1);
    assert_eq!(p.acls[0].priority, GLOBAL_DENY_PRIORITY);
    assert_eq!(p.acls[0].action, AclAction::Deny);
}

#[test]
fn compiled_program_is_byte_stable_and_enforces_grants() {
    let mut n = net();
    assert!(n.attach("private", 1, 1));
    let view = n.view(Timestamp(1));
    let set = n.sdn.canonical().clone();
    let a = serde_json::to_string(&compile_enforcement(&view, &set, &dom("private")).unwrap()).unwrap();
    let b = serde_json::to_string(&compile_enforcement(&view.clone(), &set, &dom("private")).unwrap()).unwrap();
    assert_eq!(a, b);

    let p = compile_enforcement(&view, &set, &dom("private")).unwrap();
    let pep = &n.peps[&dom("private")];
    pep.apply_program(p.routes, p.acls, set.version).unwrap();
    let src = Ipv4Addr::new(10, 42, 0, 2);
    let flow = |dst: Ipv4Addr, port| FlowQuery {
        src,
        dst,
        dst_port: port,
        proto: Proto::Tcp,
    };
    let portal = pep.evaluate_flow(&flow(Ipv4Addr::new(10, 40, 7, 40), 443));
    assert!(portal.is_permit());
    assert_eq!(portal.egress, Some(NextHop::Service("customer-portal".into())));
    assert!(!pep.evaluate_flow(&flow(Ipv4Addr::new(10, 40, 7, 20), 1883)).is_permit());
    let web = pep.evaluate_flow(&flow(Ipv4Addr::new(93, 184, 216, 34), 443));
    assert_eq!(web.egress, Some(NextHop::RedSide));
    // A host without a session falls through to the global deny.
    let stranger = FlowQuery {
        src: Ipv4Addr::new(10, 42, 0, 77),
        ..flow(Ipv4Addr::new(10, 40, 7, 40), 443)
    };
    assert_eq!(pep.evaluate_flow(&stranger).matched_acl, Some(GLOBAL_DENY_PRIORITY));
}

#[derive(Debug, Clone)]
enum Step {
    Mutate,
    Drop(usize, u32),
    Cut(usize, u64),
    Wait(u64),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => Just(Step::Mutate),
        1 => (0usize..2, 1u32..14).prop_map(|(d, n)| Step::Drop(d, n)),
        1 => (0usize..2, 1u64..8000).prop_map(|(d, n)| Step::Cut(d, n)),
        2 => (1u64..3000).prop_map(Step::Wait),
    ]
}

enum Ev {
    Push(Push),
    Reconcile,
}

fn drive(sdn: &mut FedSdn, kernel: &mut Kernel<Ev>, log: &mut EventLog, until: Timestamp, applied: &mut Vec<(DomainId, u64)>) {
    while let Some(ev) = kernel.pop_due(until) {
        let now = kernel.now();
        match ev.payload {
            Ev::Push(p) => match sdn.begin_push(&p, log, now).unwrap() {
                PushPlan::Deliver => {
                    sdn.ack(&p.domain, p.version);
                    applied.push((p.domain.clone(), sdn.registry()[&p.domain].applied_policy_version));
                }
                PushPlan::Failed { retry: Some(r) } => {
                    kernel.schedule_in(r.delay_ms, "fed-sdn", "push", Ev::Push(r));
                }
                PushPlan::Failed { retry: None } | PushPlan::Superseded { .. } => {}
            },
            Ev::Reconcile => {
                for p in sdn.reconcile() {
                    kernel.schedule_in(p.delay_ms, "fed-sdn", "push", Ev::Push(p));
                }
                kernel.schedule_in(RECONCILE_PERIOD_MS, "fed-sdn", "reconcile", Ev::Reconcile);
            }
        }
    }
    kernel.advance_to(until);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn controller_converges_after_quiescence(steps in proptest::collection::vec(step(), 1..25)) {
        let (mut sdn, mut log) = controller();
        let mut kernel: Kernel<Ev> = Kernel::new(1);
        kernel.schedule_in(0, "fed-sdn", "reconcile", Ev::Reconcile);
        let domains = [dom("private"), dom("public")];
        let mut applied = Vec::new();
        let mut counter = 0;
        for s in steps {
            let now = kernel.now();
            match s {
                Step::Mutate => {
                    counter += 1;
                    let m = if counter == 1 {
                        PolicyMutation::Replace(doc())
                    } else {
                        PolicyMutation::AddRule { rule: rule(&format!("r{counter}"), 40, &["x"], Action::Access, "*") }
                    };
                    let (_, pushes) = sdn.update_policies(m, "prop", None, &mut log, now).unwrap();
                    for p in pushes {
                        kernel.schedule_in(p.delay_ms, "fed-sdn", "push", Ev::Push(p));
                    }
                }
                Step::Drop(d, n) => sdn.inject_fault(&domains[d], Fault::DropPushes { count: n }, now).unwrap(),
                Step::Cut(d, ms) => sdn.inject_fault(&domains[d], Fault::Unreachable { duration_ms: ms }, now).unwrap(),
                Step::Wait(ms) => drive(&mut sdn, &mut kernel, &mut log, now + ms, &mut applied),
            }
        }
        // Quiescence: no new mutations or faults; outstanding drop budgets
        // are at most 13 and outages end within 8 s, so 60 s is enough.
        let t = kernel.now() + 60_000;
        drive(&mut sdn, &mut kernel, &mut log, t, &mut applied);
        prop_assert!(sdn.converged());

        for d in &domains {
            let seq: Vec<u64> = applied.iter().filter(|(x, _)| x == d).map(|(_, v)| *v).collect();
            prop_assert!(seq.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(seq.iter().all(|v| *v <= sdn.version()));
        }
        let audits: Vec<i64> = log.iter_event("policy_updated").filter_map(|r| r.int_field("version")).collect();
        let expected: Vec<i64> = (1..=sdn.version() as i64).collect();
        prop_assert_eq!(audits, expected);
    }
}
