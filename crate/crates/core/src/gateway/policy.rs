//! Attribute-based authorization rules and their evaluation.
//!
//! Matching rules are ranked by priority (lower wins), then deny over
//! manual over permit, then by rule id. No match is a deny under the
//! synthetic rule id `"default"`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::core5g::{DomainId, Imsi, SessionId, SubscriberContext};

use super::GatewayError;

pub const DEFAULT_RULE: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Attach,
    Access,
    Internet,
    Manage,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Attach, Action::Access, Action::Internet, Action::Manage];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Attach => "attach",
            Action::Access => "access",
            Action::Internet => "internet",
            Action::Manage => "manage",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// `manual` parks an attach for operator approval; it is an extension used
/// by the control API and never appears in conformance scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Permit,
    Deny,
    Manual,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::Permit => "permit",
            Effect::Deny => "deny",
            Effect::Manual => "manual",
        }
    }

    fn strength(self) -> u8 {
        match self {
            Effect::Deny => 0,
            Effect::Manual => 1,
            Effect::Permit => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Local,
    Federated,
    Any,
}

impl Scope {
    pub fn admits(self, via_federation: bool) -> bool {
        match self {
            Scope::Any => true,
            Scope::Local => !via_federation,
            Scope::Federated => via_federation,
        }
    }
}

/// Either the wildcard `"*"` or an explicit set of values.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum AnyOf {
    #[default]
    Any,
    Set(BTreeSet<String>),
}

impl AnyOf {
    pub fn set<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnyOf::Set(values.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, value: &str) -> bool {
        match self {
            AnyOf::Any => true,
            AnyOf::Set(s) => s.contains(value),
        }
    }

    pub fn intersects(&self, values: &BTreeSet<String>) -> bool {
        match self {
            AnyOf::Any => true,
            AnyOf::Set(s) => !s.is_disjoint(values),
        }
    }
}

impl Serialize for AnyOf {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AnyOf::Any => s.serialize_str("*"),
            AnyOf::Set(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for AnyOf {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Star(String),
            Set(BTreeSet<String>),
        }
        match Raw::deserialize(d)? {
            Raw::Star(s) if s == "*" => Ok(AnyOf::Any),
            Raw::Star(s) => Err(serde::de::Error::custom(format!(
                "expected \"*\" or a list, got {s:?}"
            ))),
            Raw::Set(s) => Ok(AnyOf::Set(s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subject {
    #[serde(default)]
    pub roles: AnyOf,
    #[serde(default)]
    pub device_types: AnyOf,
    #[serde(default)]
    pub min_posture: u8,
    /// Matched against the subscriber's home domain.
    #[serde(default)]
    pub domains: AnyOf,
    /// Match only subscribers whose subscription is active.
    #[serde(default, skip_serializing_if = "is_false")]
    pub require_active: bool,
    /// Match only requests arriving over a VPN-flagged session.
    #[serde(default, skip_serializing_if = "is_false")]
    pub require_vpn: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl Subject {
    pub fn matches(&self, ctx: &SubscriberContext, vpn_tunnel: bool) -> bool {
        self.roles.intersects(&ctx.roles)
            && self.device_types.contains(&ctx.device_type)
            && ctx.posture >= self.min_posture
            && self.domains.contains(ctx.home_domain.as_str())
            && (!self.require_active || ctx.subscription_active)
            && (!self.require_vpn || vpn_tunnel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationPolicy {
    pub rule_id: String,
    /// Lower is stronger. Must be below 2^16.
    pub priority: u32,
    #[serde(default)]
    pub subject: Subject,
    pub action: Action,
    pub resource: String,
    pub effect: Effect,
    #[serde(default = "any_scope")]
    pub scope: Scope,
}

fn any_scope() -> Scope {
    Scope::Any
}

impl AuthorizationPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |why: String| GatewayError::MalformedPolicy {
            rule_id: self.rule_id.clone(),
            reason: why,
        };
        if self.rule_id.is_empty() || self.rule_id == DEFAULT_RULE {
            return Err(bad(format!("reserved or empty rule id {:?}", self.rule_id)));
        }
        if self.priority >= 1 << 16 {
            return Err(bad(format!("priority {} is not below 65536", self.priority)));
        }
        validate_pattern(&self.resource).map_err(bad)?;
        if self.subject.min_posture > 3 {
            return Err(bad(format!("min_posture {} outside 0..=3", self.subject.min_posture)));
        }
        Ok(())
    }

    pub fn matches(&self, req: &AccessRequest, ctx: &SubscriberContext) -> bool {
        self.action == req.requested_action
            && resource_matches(&self.resource, &req.resource)
            && self.scope.admits(req.via_federation)
            && self.subject.matches(ctx, req.vpn_tunnel)
    }

    fn rank(&self) -> (u32, u8, &str) {
        (self.priority, self.effect.strength(), self.rule_id.as_str())
    }
}

/// A resource pattern is an exact name or a prefix ending in a single `*`.
pub fn validate_pattern(pattern: &str) -> Result<(), String> {
    if pattern.is_empty() {
        return Err("empty resource pattern".to_string());
    }
    match pattern.find('*') {
        None => Ok(()),
        Some(i) if i == pattern.len() - 1 => Ok(()),
        Some(_) => Err(format!("resource pattern {pattern:?} has a '*' that is not final")),
    }
}

pub fn resource_matches(pattern: &str, resource: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => resource.starts_with(prefix),
        None => pattern == resource,
    }
}

pub fn validate_rules(rules: &[AuthorizationPolicy]) -> Result<(), GatewayError> {
    let mut ids = BTreeSet::new();
    for r in rules {
        r.validate()?;
        if !ids.insert(r.rule_id.as_str()) {
            return Err(GatewayError::MalformedPolicy {
                rule_id: r.rule_id.clone(),
                reason: "duplicate rule id".to_string(),
            });
        }
    }
    Ok(())
}

/// An (action, resource) pair a subscriber may exercise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Permission {
    pub action: Action,
    pub resource: String,
}

impl Permission {
    pub fn new(action: Action, resource: impl Into<String>) -> Self {
        Permission {
            action,
            resource: resource.into(),
        }
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.action, self.resource)
    }
}

impl FromStr for Permission {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, r) = s
            .split_once(':')
            .ok_or_else(|| format!("permission {s:?} is not action:resource"))?;
        Ok(Permission::new(a.parse()?, r))
    }
}

impl Serialize for Permission {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Permission {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub session_id: SessionId,
    pub imsi: Imsi,
    pub domain: DomainId,
    pub requested_action: Action,
    /// `"*"` for attach, otherwise a service name (or `red-side`).
    pub resource: String,
    #[serde(default)]
    pub via_federation: bool,
    #[serde(default)]
    pub vpn_tunnel: bool,
}

impl AccessRequest {
    pub fn attach(session_id: SessionId, imsi: Imsi, domain: DomainId) -> Self {
        AccessRequest {
            session_id,
            imsi,
            domain,
            requested_action: Action::Attach,
            resource: "*".to_string(),
            via_federation: false,
            vpn_tunnel: false,
        }
    }

    pub fn for_permission(&self, p: &Permission) -> Self {
        AccessRequest {
            requested_action: p.action,
            resource: p.resource.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthzDecision {
    pub effect: Effect,
    pub matched_rule: String,
    /// Present only on a permitted attach.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_id: Option<String>,
    /// The permissions the route program is derived from. Empty on deny.
    #[serde(default)]
    pub obligations: Vec<Permission>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl AuthzDecision {
    pub fn deny(matched_rule: impl Into<String>, reason: Option<String>) -> Self {
        AuthzDecision {
            effect: Effect::Deny,
            matched_rule: matched_rule.into(),
            slice_id: None,
            obligations: Vec::new(),
            reason,
        }
    }

    pub fn is_permit(&self) -> bool {
        self.effect == Effect::Permit
    }
}

/// Evaluates one request against a rule list.
pub fn evaluate_access(
    req: &AccessRequest,
    ctx: &SubscriberContext,
    policies: &[AuthorizationPolicy],
) -> Result<AuthzDecision, GatewayError> {
    let mut best: Option<&AuthorizationPolicy> = None;
    for rule in policies {
        rule.validate()?;
        if !rule.matches(req, ctx) {
            continue;
        }
        best = match best {
            Some(b) if b.rank().cmp(&rule.rank()) != Ordering::Greater => Some(b),
            _ => Some(rule),
        };
    }
    Ok(match best {
        None => AuthzDecision::deny(DEFAULT_RULE, Some("no matching rule".to_string())),
        Some(rule) if rule.effect == Effect::Deny => AuthzDecision::deny(rule.rule_id.clone(), None),
        Some(rule) => AuthzDecision {
            effect: rule.effect,
            matched_rule: rule.rule_id.clone(),
            slice_id: None,
            obligations: Vec::new(),
            reason: None,
        },
    })
}

/// Every catalog permission that evaluates to permit for `ctx`.
pub fn permitted_set<'a>(
    base: &AccessRequest,
    ctx: &SubscriberContext,
    policies: &[AuthorizationPolicy],
    pairs: impl IntoIterator<Item = &'a Permission>,
) -> Result<BTreeSet<Permission>, GatewayError> {
    let mut out = BTreeSet::new();
    for p in pairs {
        if evaluate_access(&base.for_permission(p), ctx, policies)?.effect == Effect::Permit {
            out.insert(p.clone());
        }
    }
    Ok(out)
}
