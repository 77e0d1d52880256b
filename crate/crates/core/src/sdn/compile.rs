use std::collections::{BTreeMap, BTreeSet};

use ipnet::Ipv4Net;

use super::{CanonicalPolicySet, SessionView};
use crate::core5g::DomainId;
use crate::gateway::policy::{AccessRequest, AuthzDecision, Effect, Permission};
use crate::gateway::routes::{derive_route_program, RouteProgram};
use crate::gateway::{session_permissions, GatewayError};
use crate::pep::{AclAction, AclRule, NextHop, PortMatch, ProtoMatch, RouteEntry};

/// Priority space reserved per session; session k uses `(k + 1) * BLOCK + local`.
pub const SESSION_BLOCK: u32 = 10_000;
/// Priority of the catch-all deny that ends every program.
pub const GLOBAL_DENY_PRIORITY: u32 = u32::MAX;

/// Permissions in force for one view entry under `policies`.
pub fn entry_permissions(
    entry: &super::SessionViewEntry,
    policies: &CanonicalPolicySet,
) -> Result<BTreeSet<Permission>, GatewayError> {
    let Some(ctx) = entry.context.as_ref() else {
        return Ok(BTreeSet::new());
    };
    let mut req = AccessRequest::attach(entry.session_id, entry.imsi.clone(), entry.domain.clone());
    req.vpn_tunnel = entry.vpn_tunnel;
    session_permissions(policies, &req, ctx, entry.assertion_permitted.as_ref())
}

/// Compiles the enforcement program for `domain`: static host routes for
/// every catalog service, the merged per-session programs of the domain's
/// active sessions (ordered by address), and a final global deny.
///
/// Pure: equal inputs give byte-identical output.
pub fn compile_enforcement(
    view: &SessionView,
    policies: &CanonicalPolicySet,
    domain: &DomainId,
) -> Result<RouteProgram, GatewayError> {
    let mut routes: BTreeMap<Ipv4Net, NextHop> = BTreeMap::new();
    for (name, svc) in &policies.service_catalog {
        let prefix = Ipv4Net::new(svc.ip, 32).expect("/32 is valid");
        routes.entry(prefix).or_insert_with(|| NextHop::Service(name.clone()));
    }

    let mut sessions: Vec<_> = view
        .active()
        .filter(|e| &e.domain == domain)
        .filter_map(|e| e.ip.map(|ip| (ip, e)))
        .collect();
    sessions.sort_by_key(|(ip, e)| (*ip, e.session_id));

    let mut acls = Vec::new();
    for (k, (ip, entry)) in sessions.into_iter().enumerate() {
        let permitted = entry_permissions(entry, policies)?;
        let decision = AuthzDecision {
            effect: Effect::Permit,
            matched_rule: "compiled".to_string(),
            slice_id: entry.slice_id.clone(),
            obligations: permitted.into_iter().collect(),
            reason: None,
        };
        let program = derive_route_program(ip, &decision, &policies.service_catalog)?;
        for r in program.routes {
            routes.entry(r.prefix).or_insert(r.next_hop);
        }
        let base = (k as u32 + 1) * SESSION_BLOCK;
        for mut acl in program.acls {
            acl.priority += base;
            acls.push(acl);
        }
    }
    acls.push(AclRule {
        priority: GLOBAL_DENY_PRIORITY,
        src: Ipv4Net::default(),
        dst: Ipv4Net::default(),
        dst_port: PortMatch::Any,
        proto: ProtoMatch::Any,
        action: AclAction::Deny,
    });

    let mut routes: Vec<RouteEntry> = routes.into_iter().map(|(p, h)| RouteEntry::new(p, h)).collect();
    routes.sort_by(|a, b| {
        b.prefix
            .prefix_len()
            .cmp(&a.prefix.prefix_len())
            .then(a.prefix.network().cmp(&b.prefix.network()))
    });
    Ok(RouteProgram { routes, acls })
}
