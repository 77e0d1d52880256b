//! Cross-domain identity assertions and the visited-side acceptance rule.
//!
//! The home gateway signs the subscriber's home permissions with the
//! pre-shared federation key. The visited gateway grants the intersection of
//! those permissions with what its own federated-scope rules allow, so a
//! roam can never widen access.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::policy::{permitted_set, AccessRequest, AuthorizationPolicy, AuthzDecision, Effect, Permission};
use super::wire::{CanonicalWriter, MacKey, Tag};
use super::GatewayError;
use crate::core5g::{DomainId, Imsi, SessionId, SubscriberContext};
use crate::sim::Timestamp;

const ASSERTION_TAG: &str = "fediot/federation-assertion/v1";

/// Identifies one logical user session across roams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuityToken {
    pub service_session_id: u64,
    pub issued_in: DomainId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationAssertion {
    pub imsi: Imsi,
    pub home_domain: DomainId,
    pub device_type: String,
    pub roles: BTreeSet<String>,
    pub posture: u8,
    pub permitted: BTreeSet<Permission>,
    pub continuity: ContinuityToken,
    pub expires_at: Timestamp,
    pub mac: Tag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssertionReject {
    BadMac,
    Expired,
}

impl AssertionReject {
    pub fn reason(self) -> &'static str {
        match self {
            AssertionReject::BadMac => "bad_mac",
            AssertionReject::Expired => "expired",
        }
    }
}

impl FederationAssertion {
    #[allow(clippy::too_many_arguments)]
    pub fn seal(
        key: &MacKey,
        ctx: &SubscriberContext,
        permitted: BTreeSet<Permission>,
        continuity: ContinuityToken,
        expires_at: Timestamp,
    ) -> Self {
        let mut a = FederationAssertion {
            imsi: ctx.imsi.clone(),
            home_domain: ctx.home_domain.clone(),
            device_type: ctx.device_type.clone(),
            roles: ctx.roles.clone(),
            posture: ctx.posture,
            permitted,
            continuity,
            expires_at,
            mac: Tag([0; 32]),
        };
        a.mac = key.sign(&a.canonical_bytes());
        a
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.str(ASSERTION_TAG)
            .str(self.imsi.as_str())
            .str(self.home_domain.as_str())
            .str(&self.device_type)
            .list(&self.roles, |e, r| {
                e.str(r);
            })
            .u8(self.posture)
            .list(&self.permitted, |e, p| {
                e.str(p.action.as_str()).str(&p.resource);
            })
            .u64(self.continuity.service_session_id)
            .str(self.continuity.issued_in.as_str())
            .u64(self.expires_at.0);
        w.finish()
    }

    pub fn verify(&self, key: &MacKey, now: Timestamp) -> Result<(), AssertionReject> {
        if !key.verify(&self.canonical_bytes(), &self.mac) {
            return Err(AssertionReject::BadMac);
        }
        if now >= self.expires_at {
            return Err(AssertionReject::Expired);
        }
        Ok(())
    }

    /// The subscriber context the visited domain evaluates its rules against.
    pub fn visited_context(&self) -> SubscriberContext {
        SubscriberContext {
            imsi: self.imsi.clone(),
            subscription_active: true,
            device_type: self.device_type.clone(),
            posture: self.posture,
            roles: self.roles.clone(),
            home_domain: self.home_domain.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederationOutcome {
    pub decision: AuthzDecision,
    /// Assertion permissions intersected with the visited federated grants.
    pub effective: BTreeSet<Permission>,
}

/// Visited-side acceptance. Failures are deny decisions, never errors,
/// except for malformed visited policies.
pub fn federate_in(
    assertion: &FederationAssertion,
    key: &MacKey,
    now: Timestamp,
    session_id: SessionId,
    visited: &DomainId,
    visited_policies: &[AuthorizationPolicy],
    pairs: &[Permission],
) -> Result<FederationOutcome, GatewayError> {
    if let Err(reject) = assertion.verify(key, now) {
        return Ok(FederationOutcome {
            decision: AuthzDecision::deny("federation", Some(reject.reason().to_string())),
            effective: BTreeSet::new(),
        });
    }
    let ctx = assertion.visited_context();
    let mut base = AccessRequest::attach(session_id, assertion.imsi.clone(), visited.clone());
    base.via_federation = true;
    let visited_ok = permitted_set(&base, &ctx, visited_policies, pairs)?;
    let effective: BTreeSet<Permission> = assertion.permitted.intersection(&visited_ok).cloned().collect();
    let decision = if effective.is_empty() {
        AuthzDecision::deny("federation", Some("empty_intersection".to_string()))
    } else {
        AuthzDecision {
            effect: Effect::Permit,
            matched_rule: "federation".to_string(),
            slice_id: None,
            obligations: effective.iter().cloned().collect(),
            reason: None,
        }
    };
    Ok(FederationOutcome { decision, effective })
}
