//! Policy enforcement point: an IPv4 routing table with longest-prefix
//! match, a priority-ordered ACL, and flow admission that separates the
//! protected service segment from the untrusted red side.
//!
//! Tables are immutable once built. `Pep::apply_program` validates a new
//! set and swaps the shared pointer, so a lookup sees either the old or the
//! new tables in full.

mod acl;
mod route;
mod types;

pub use acl::AclTable;
pub use route::RoutingTable;
pub use types::{
    AclAction, AclRule, FlowDecision, FlowQuery, NextHop, PortMatch, Proto, ProtoMatch, RouteEntry,
};

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::sync::{Arc, RwLock};

use ipnet::Ipv4Net;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PepError {
    #[error("duplicate route prefix {0}")]
    DuplicatePrefix(Ipv4Net),
    #[error("duplicate ACL priority {0}")]
    DuplicatePriority(u32),
}

/// One consistent generation of routes and ACLs.
#[derive(Debug, Clone, Default)]
pub struct PepTables {
    pub version: u64,
    pub routes: RoutingTable,
    pub acls: AclTable,
}

impl PepTables {
    pub fn build(routes: Vec<RouteEntry>, acls: Vec<AclRule>, version: u64) -> Result<Self, PepError> {
        Ok(PepTables {
            version,
            routes: RoutingTable::from_entries(routes)?,
            acls: AclTable::from_rules(acls)?,
        })
    }

    pub fn lookup(&self, dst: Ipv4Addr) -> NextHop {
        self.routes.lookup(dst)
    }

    pub fn evaluate_flow(&self, q: &FlowQuery) -> FlowDecision {
        match self.acls.first_match(q) {
            Some(rule) if rule.action == AclAction::Permit => FlowDecision {
                action: AclAction::Permit,
                matched_acl: Some(rule.priority),
                egress: Some(self.lookup(q.dst)),
            },
            Some(rule) => FlowDecision::deny(Some(rule.priority)),
            None => FlowDecision::deny(None),
        }
    }

    /// Deterministic text rendering: routes by (prefix length desc, prefix),
    /// then ACLs by priority.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "version {}", self.version).unwrap();
        for r in self.routes.sorted_entries() {
            writeln!(out, "route {} {}", r.prefix, r.next_hop).unwrap();
        }
        for a in self.acls.rules() {
            writeln!(
                out,
                "acl {} {} src {} dst {} port {} proto {}",
                a.priority, a.action, a.src, a.dst, a.dst_port, a.proto
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct Pep {
    tables: RwLock<Arc<PepTables>>,
}

impl Pep {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces both tables at once. On error the installed tables are untouched.
    pub fn apply_program(&self, routes: Vec<RouteEntry>, acls: Vec<AclRule>, version: u64) -> Result<(), PepError> {
        let next = Arc::new(PepTables::build(routes, acls, version)?);
        *self.tables.write().expect("pep lock poisoned") = next;
        Ok(())
    }

    pub fn snapshot(&self) -> Arc<PepTables> {
        Arc::clone(&self.tables.read().expect("pep lock poisoned"))
    }

    pub fn installed_version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn lookup(&self, dst: Ipv4Addr) -> NextHop {
        self.snapshot().lookup(dst)
    }

    pub fn evaluate_flow(&self, q: &FlowQuery) -> FlowDecision {
        self.snapshot().evaluate_flow(q)
    }

    pub fn dump(&self) -> String {
        self.snapshot().dump()
    }
}
