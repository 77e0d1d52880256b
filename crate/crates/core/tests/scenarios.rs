//! End-to-end runs of the bundled shed scenario.

use std::path::{Path, PathBuf};

use fediot_core::gateway::{Action, AnyOf, AuthorizationPolicy, Effect, Scope, Subject};
use fediot_core::scenario::{self, ScenarioSpec, World};
use fediot_core::sdn::PolicyMutation;
use proptest::prelude::*;

fn path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> ScenarioSpec {
    scenario::load(path(name)).unwrap()
}

#[test]
fn shed_meets_its_expectations() {
    let (report, _) = scenario::run(&load("shed.json")).unwrap();
    assert!(report.passed, "{}", report.render());
    assert!(report.expectations.len() >= 15);
}

#[test]
fn shed_matrix_matches_its_declaration() {
    let spec = load("shed.json");
    let m = scenario::flow_matrix(&spec).unwrap();
    assert_eq!(scenario::matrix_diff(&m, &spec.access_matrix), vec![]);
}

#[test]
fn event_log_serializes_one_record_per_line() {
    let (_, log) = scenario::run(&load("shed.json")).unwrap();
    let text = log.to_ndjson();
    assert_eq!(text.lines().count(), log.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("ts").is_some() && v.get("event").is_some(), "{line}");
    }
}

fn rule(n: usize, role: &str, service: &str, deny: bool) -> AuthorizationPolicy {
    AuthorizationPolicy {
        rule_id: format!("p{n}"),
        priority: 5,
        subject: Subject {
            roles: AnyOf::set([role]),
            ..Subject::default()
        },
        action: Action::Access,
        resource: service.to_string(),
        effect: if deny { Effect::Deny } else { Effect::Permit },
        scope: Scope::Any,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn expectations_hold_for_any_seed(seed in any::<u64>()) {
        let mut spec = load("shed.json");
        spec.seed = seed;
        let (report, _) = scenario::run(&spec).unwrap();
        prop_assert!(report.passed, "seed {}:\n{}", seed, report.render());
    }

    #[test]
    fn every_domain_settles_on_the_canonical_version(
        edits in prop::collection::vec((0u64..2000, 0usize..4, 0usize..4, any::<bool>()), 1..8)
    ) {
        let mut spec = load("shed.json");
        spec.timeline.retain(|t| t.at_ms < 100);
        spec.expectations.clear();
        let roles = ["shed-manager", "local-user", "customer", "roaming-user"];
        let services: Vec<String> = spec.policy.service_catalog.keys().cloned().collect();
        let mut world = World::new(&spec).unwrap();
        let mut t = 100;
        for (n, (gap, r, s, deny)) in edits.into_iter().enumerate() {
            t += gap;
            world.run_until(t);
            let add = rule(n, roles[r], &services[s % services.len()], deny);
            world.mutate_policies(PolicyMutation::AddRule { rule: add }, "prop", None).unwrap();
        }
        world.settle();
        let target = world.sdn().version();
        prop_assert!(world.sdn().converged());
        for (id, node) in world.domains() {
            prop_assert_eq!(node.pep.installed_version(), target, "{}", id);
        }
    }
}
