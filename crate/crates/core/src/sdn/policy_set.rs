use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core5g::SubscriberContext;
use crate::gateway::policy::{resource_matches, validate_rules, Action, AuthorizationPolicy, Permission};
use crate::gateway::{catalog_pairs, GatewayError, ServiceCatalog, RED_SIDE};

/// The controller's authoritative rule set plus the scenario data the
/// gateways need to act on a decision.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalPolicySet {
    #[serde(default)]
    pub version: u64,
    #[serde(default)]
    pub rules: Vec<AuthorizationPolicy>,
    /// Keys are role names, device types, or prefix patterns such as `iot-*`.
    #[serde(default)]
    pub role_slice_map: BTreeMap<String, String>,
    #[serde(default)]
    pub service_catalog: ServiceCatalog,
}

impl CanonicalPolicySet {
    /// Rules must be well formed, ids unique, and exact resources must name
    /// a catalog service (or the red side for internet rules).
    pub fn validate(&self) -> Result<(), GatewayError> {
        validate_rules(&self.rules)?;
        let mut seen = std::collections::BTreeMap::new();
        for (name, svc) in &self.service_catalog {
            if let Some(other) = seen.insert(svc.ip, name) {
                return Err(GatewayError::MalformedPolicy {
                    rule_id: name.clone(),
                    reason: format!("service address {} already used by {other}", svc.ip),
                });
            }
        }
        for r in &self.rules {
            if r.resource.ends_with('*') {
                continue;
            }
            let known = match r.action {
                Action::Attach => false,
                Action::Internet => r.resource == RED_SIDE,
                Action::Access | Action::Manage => self.service_catalog.contains_key(&r.resource),
            };
            if !known {
                return Err(GatewayError::MalformedPolicy {
                    rule_id: r.rule_id.clone(),
                    reason: format!("unknown resource {:?} for action {}", r.resource, r.action),
                });
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<Permission> {
        catalog_pairs(&self.service_catalog)
    }

    /// Slice for a subscriber: exact role keys first, then the device type,
    /// then prefix patterns in the same order.
    pub fn slice_for(&self, ctx: &SubscriberContext) -> Option<String> {
        let candidates: Vec<&str> = ctx
            .roles
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(ctx.device_type.as_str()))
            .collect();
        for c in &candidates {
            if let Some(slice) = self.role_slice_map.get(*c) {
                return Some(slice.clone());
            }
        }
        for c in &candidates {
            for (key, slice) in &self.role_slice_map {
                if key.ends_with('*') && resource_matches(key, c) {
                    return Some(slice.clone());
                }
            }
        }
        None
    }

    pub fn rule(&self, rule_id: &str) -> Option<&AuthorizationPolicy> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }
}
