//! Identity-aware route programs: host routes and source-pinned ACLs for
//! the services one session may reach.

use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use super::catalog::{ServiceCatalog, RED_SIDE};
use super::policy::{Action, AuthzDecision};
use super::GatewayError;
use crate::pep::{AclAction, AclRule, NextHop, PortMatch, ProtoMatch, RouteEntry};

/// Address space that is never treated as red side. An internet grant does
/// not open these; only explicit service permits do.
pub const INTERNAL_PREFIXES: [&str; 3] = ["10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16"];

/// Local priority spacing inside one session's ACL block.
pub const ACL_STEP: u32 = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteProgram {
    pub routes: Vec<RouteEntry>,
    pub acls: Vec<AclRule>,
}

fn host(ip: Ipv4Addr) -> Ipv4Net {
    Ipv4Net::new(ip, 32).expect("/32 is valid")
}

fn any_net() -> Ipv4Net {
    Ipv4Net::default()
}

/// Builds the program for one permitted session. ACL priorities are local
/// (10, 20, ...) and get rebased when programs are merged.
///
/// Order: one permit per granted service, then (with an internet grant)
/// denies for internal space followed by a permit to anywhere, then a final
/// deny-all for the source.
pub fn derive_route_program(
    session_ip: Ipv4Addr,
    decision: &AuthzDecision,
    catalog: &ServiceCatalog,
) -> Result<RouteProgram, GatewayError> {
    if !decision.is_permit() {
        return Err(GatewayError::NotPermitted);
    }
    let src = host(session_ip);
    let mut program = RouteProgram::default();
    let mut next = ACL_STEP;
    let mut push_acl = |acls: &mut Vec<AclRule>, dst, dst_port, proto, action| {
        acls.push(AclRule {
            priority: next,
            src,
            dst,
            dst_port,
            proto,
            action,
        });
        next += ACL_STEP;
    };

    let mut internet = false;
    for p in &decision.obligations {
        match p.action {
            Action::Access => {
                let svc = catalog
                    .get(&p.resource)
                    .ok_or_else(|| GatewayError::UnknownService(p.resource.clone()))?;
                program
                    .routes
                    .push(RouteEntry::new(host(svc.ip), NextHop::Service(p.resource.clone())));
                push_acl(
                    &mut program.acls,
                    host(svc.ip),
                    PortMatch::Port(svc.port),
                    ProtoMatch::Only(svc.proto),
                    AclAction::Permit,
                );
            }
            Action::Internet if p.resource == RED_SIDE => internet = true,
            Action::Internet => return Err(GatewayError::UnknownService(p.resource.clone())),
            Action::Attach | Action::Manage => {}
        }
    }
    if internet {
        for prefix in INTERNAL_PREFIXES {
            push_acl(
                &mut program.acls,
                prefix.parse().expect("constant prefix"),
                PortMatch::Any,
                ProtoMatch::Any,
                AclAction::Deny,
            );
        }
        push_acl(&mut program.acls, any_net(), PortMatch::Any, ProtoMatch::Any, AclAction::Permit);
        program.routes.push(RouteEntry::new(any_net(), NextHop::RedSide));
    }
    push_acl(&mut program.acls, any_net(), PortMatch::Any, ProtoMatch::Any, AclAction::Deny);
    Ok(program)
}
