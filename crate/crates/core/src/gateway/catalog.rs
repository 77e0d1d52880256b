use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::policy::{Action, Permission};
use crate::pep::Proto;

/// Resource name for internet (red side) egress.
pub const RED_SIDE: &str = "red-side";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
    #[serde(default = "tcp")]
    pub proto: Proto,
    pub slice_id: String,
}

fn tcp() -> Proto {
    Proto::Tcp
}

pub type ServiceCatalog = BTreeMap<String, ServiceEndpoint>;

/// Every (action, resource) pair the catalog exposes: access and manage per
/// service, plus internet egress.
pub fn catalog_pairs(catalog: &ServiceCatalog) -> Vec<Permission> {
    let mut pairs = Vec::with_capacity(catalog.len() * 2 + 1);
    for name in catalog.keys() {
        pairs.push(Permission::new(Action::Access, name.clone()));
        pairs.push(Permission::new(Action::Manage, name.clone()));
    }
    pairs.push(Permission::new(Action::Internet, RED_SIDE));
    pairs.sort();
    pairs
}
