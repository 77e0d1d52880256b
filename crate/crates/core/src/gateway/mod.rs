//! Open gateway for one domain.
//!
//! Mediates attach admission between a subscriber and the domain's core,
//! issues access tokens, derives identity-aware route programs, and speaks
//! the federation protocol with peer gateways.

pub mod catalog;
pub mod federation;
pub mod policy;
pub mod routes;
pub mod token;
pub mod wire;

pub use catalog::{catalog_pairs, ServiceCatalog, ServiceEndpoint, RED_SIDE};
pub use federation::{federate_in, AssertionReject, ContinuityToken, FederationAssertion, FederationOutcome};
pub use policy::{
    evaluate_access, permitted_set, AccessRequest, Action, AnyOf, AuthorizationPolicy, AuthzDecision, Effect,
    Permission, Scope, Subject, DEFAULT_RULE,
};
pub use routes::{derive_route_program, RouteProgram};
pub use token::AccessToken;
pub use wire::{MacKey, Tag};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::core5g::{Core5g, DomainId, Imsi, PduSession, SessionId, SubscriberContext};
use crate::sdn::CanonicalPolicySet;
use crate::sim::{EventLog, Fields, Scalar, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("malformed policy {rule_id}: {reason}")]
    MalformedPolicy { rule_id: String, reason: String },
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("decision is not a permit")]
    NotPermitted,
    #[error("imsi {0} has no active session")]
    NoActiveSession(Imsi),
    #[error("no federation peer {0}")]
    NoFederationPeer(DomainId),
    #[error("session {0} is not awaiting approval")]
    NotAwaitingApproval(SessionId),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub domain: DomainId,
    pub key: MacKey,
    pub federation_key: MacKey,
    pub peers: BTreeSet<DomainId>,
    pub token_ttl_ms: u64,
    pub assertion_ttl_ms: u64,
}

/// What the gateway remembers about a session it decided on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewaySession {
    pub imsi: Imsi,
    pub continuity: ContinuityToken,
    /// For federated sessions: the permissions granted by the assertion.
    /// Re-intersected with visited rules whenever the program is rebuilt.
    pub assertion_permitted: Option<BTreeSet<Permission>>,
    pub vpn_tunnel: bool,
    pub token: Option<AccessToken>,
}

#[derive(Debug, Clone)]
pub struct AttachOutcome {
    pub decision: AuthzDecision,
    pub session: Option<PduSession>,
}

impl AttachOutcome {
    pub fn admitted(&self) -> bool {
        self.decision.is_permit() && self.session.is_some()
    }
}

/// Pending manual-approval attach.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingApproval {
    pub request: AccessRequest,
    pub matched_rule: String,
    pub continuity: Option<ContinuityToken>,
}

#[derive(Debug)]
pub struct Gateway {
    cfg: GatewayConfig,
    component: String,
    store: Arc<CanonicalPolicySet>,
    sessions: BTreeMap<SessionId, GatewaySession>,
    awaiting: BTreeMap<SessionId, PendingApproval>,
    next_service_session: u64,
}

/// Permissions of a session under `store`. Local sessions get their
/// local-scope grants; federated sessions get the assertion's grants
/// intersected with the federated-scope grants of `store`.
pub fn session_permissions(
    store: &CanonicalPolicySet,
    req: &AccessRequest,
    ctx: &SubscriberContext,
    assertion_permitted: Option<&BTreeSet<Permission>>,
) -> Result<BTreeSet<Permission>, GatewayError> {
    let mut base = req.clone();
    match assertion_permitted {
        None => {
            base.via_federation = false;
            permitted_set(&base, ctx, &store.rules, &store.pairs())
        }
        Some(granted) => {
            base.via_federation = true;
            let mut visited_ctx = ctx.clone();
            visited_ctx.subscription_active = true;
            let visited = permitted_set(&base, &visited_ctx, &store.rules, &store.pairs())?;
            Ok(granted.intersection(&visited).cloned().collect())
        }
    }
}

fn fields<const N: usize>(pairs: [(&str, Scalar); N]) -> Fields {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Self {
        Gateway {
            component: format!("gateway:{}", cfg.domain),
            cfg,
            store: Arc::new(CanonicalPolicySet::default()),
            sessions: BTreeMap::new(),
            awaiting: BTreeMap::new(),
            next_service_session: 1,
        }
    }

    pub fn domain(&self) -> &DomainId {
        &self.cfg.domain
    }

    pub fn component(&self) -> &str {
        &self.component
    }

    pub fn policies(&self) -> &Arc<CanonicalPolicySet> {
        &self.store
    }

    /// Replaces the whole policy store at once.
    pub fn install_policies(&mut self, set: Arc<CanonicalPolicySet>) {
        self.store = set;
    }

    pub fn session(&self, id: SessionId) -> Option<&GatewaySession> {
        self.sessions.get(&id)
    }

    pub fn awaiting_approval(&self) -> impl Iterator<Item = (&SessionId, &PendingApproval)> {
        self.awaiting.iter()
    }

    pub fn forget_session(&mut self, id: SessionId) {
        self.sessions.remove(&id);
        self.awaiting.remove(&id);
    }

    /// The attach decision under the installed store, without side effects.
    /// A permit carries the slice and every catalog permission as obligations.
    pub fn decide_attach(&self, req: &AccessRequest, ctx: &SubscriberContext) -> Result<AuthzDecision, GatewayError> {
        let mut decision = evaluate_access(req, ctx, &self.store.rules)?;
        if decision.effect == Effect::Deny {
            return Ok(decision);
        }
        let Some(slice) = self.store.slice_for(ctx) else {
            return Ok(AuthzDecision::deny(decision.matched_rule, Some("no_slice".to_string())));
        };
        if decision.effect == Effect::Permit {
            decision.slice_id = Some(slice);
            decision.obligations = self.local_permissions(req, ctx)?.into_iter().collect();
        }
        Ok(decision)
    }

    /// Catalog permissions granted to a locally attached subscriber.
    pub fn local_permissions(&self, req: &AccessRequest, ctx: &SubscriberContext) -> Result<BTreeSet<Permission>, GatewayError> {
        session_permissions(&self.store, req, ctx, None)
    }

    /// Mediates a local attach: queries the core, decides, then admits or
    /// rejects the pending session. Every outcome is logged.
    pub fn handle_attach(
        &mut self,
        req: &AccessRequest,
        continuity: Option<ContinuityToken>,
        core: &mut Core5g,
        log: &mut EventLog,
        now: Timestamp,
        token_entropy: u64,
    ) -> Result<AttachOutcome, GatewayError> {
        let decision = match core.query_subscriber_context(&req.imsi) {
            Ok(ctx) => self.decide_attach(req, &ctx)?,
            Err(e) => AuthzDecision::deny(DEFAULT_RULE, Some(e.to_string())),
        };
        self.log_decision(log, now, req, &decision);
        match decision.effect {
            Effect::Permit => Ok(self.admit(req, decision, continuity, None, core, log, now, token_entropy)),
            Effect::Manual => {
                self.awaiting.insert(
                    req.session_id,
                    PendingApproval {
                        request: req.clone(),
                        matched_rule: decision.matched_rule.clone(),
                        continuity,
                    },
                );
                log.append(
                    now,
                    &self.component,
                    "attach_awaiting_approval",
                    fields([
                        ("session_id", req.session_id.into()),
                        ("imsi", req.imsi.as_str().into()),
                    ]),
                );
                Ok(AttachOutcome { decision, session: None })
            }
            Effect::Deny => {
                self.reject(req, &decision, core, log, now);
                Ok(AttachOutcome { decision, session: None })
            }
        }
    }

    /// Resolves a manual-approval attach. Approval re-derives obligations
    /// under the current store.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve_approval(
        &mut self,
        session_id: SessionId,
        approve: bool,
        actor: &str,
        core: &mut Core5g,
        log: &mut EventLog,
        now: Timestamp,
        token_entropy: u64,
    ) -> Result<AttachOutcome, GatewayError> {
        let pending = self
            .awaiting
            .remove(&session_id)
            .ok_or(GatewayError::NotAwaitingApproval(session_id))?;
        let req = pending.request;
        let rule = format!("manual:{actor}");
        let decision = if approve {
            match core.query_subscriber_context(&req.imsi) {
                Ok(ctx) => match self.store.slice_for(&ctx) {
                    Some(slice) => AuthzDecision {
                        effect: Effect::Permit,
                        matched_rule: rule,
                        slice_id: Some(slice),
                        obligations: self.local_permissions(&req, &ctx)?.into_iter().collect(),
                        reason: None,
                    },
                    None => AuthzDecision::deny(rule, Some("no_slice".into())),
                },
                Err(e) => AuthzDecision::deny(rule, Some(e.to_string())),
            }
        } else {
            AuthzDecision::deny(rule, Some("operator_denied".into()))
        };
        self.log_decision(log, now, &req, &decision);
        if decision.is_permit() {
            Ok(self.admit(&req, decision, pending.continuity, None, core, log, now, token_entropy))
        } else {
            self.reject(&req, &decision, core, log, now);
            Ok(AttachOutcome { decision, session: None })
        }
    }

    /// Home side of a roam: signs the subscriber's home permissions.
    pub fn federate_out(
        &self,
        imsi: &Imsi,
        to: &DomainId,
        core: &Core5g,
        now: Timestamp,
    ) -> Result<FederationAssertion, GatewayError> {
        if !self.cfg.peers.contains(to) {
            return Err(GatewayError::NoFederationPeer(to.clone()));
        }
        let session = core
            .active_session(imsi)
            .ok_or_else(|| GatewayError::NoActiveSession(imsi.clone()))?;
        let gw_session = self
            .sessions
            .get(&session.session_id)
            .ok_or_else(|| GatewayError::NoActiveSession(imsi.clone()))?;
        let ctx = core
            .query_subscriber_context(imsi)
            .map_err(|_| GatewayError::NoActiveSession(imsi.clone()))?;
        let mut req = AccessRequest::attach(session.session_id, imsi.clone(), self.cfg.domain.clone());
        req.vpn_tunnel = session.vpn_tunnel;
        let permitted = self.effective_permissions(gw_session, &req, &ctx)?;
        Ok(FederationAssertion::seal(
            &self.cfg.federation_key,
            &ctx,
            permitted,
            gw_session.continuity.clone(),
            now + self.cfg.assertion_ttl_ms,
        ))
    }

    /// Visited side of a roam: verifies the assertion and admits or rejects
    /// the pending session opened for it.
    pub fn handle_federated_attach(
        &mut self,
        req: &AccessRequest,
        assertion: &FederationAssertion,
        core: &mut Core5g,
        log: &mut EventLog,
        now: Timestamp,
        token_entropy: u64,
    ) -> Result<AttachOutcome, GatewayError> {
        let outcome = federate_in(
            assertion,
            &self.cfg.federation_key,
            now,
            req.session_id,
            &self.cfg.domain,
            &self.store.rules,
            &self.store.pairs(),
        )?;
        let mut decision = outcome.decision;
        if decision.is_permit() {
            match self.store.slice_for(&assertion.visited_context()) {
                Some(slice) => decision.slice_id = Some(slice),
                None => decision = AuthzDecision::deny("federation", Some("no_slice".to_string())),
            }
        }
        self.log_decision(log, now, req, &decision);
        if decision.is_permit() {
            Ok(self.admit(
                req,
                decision,
                Some(assertion.continuity.clone()),
                Some(assertion.permitted.clone()),
                core,
                log,
                now,
                token_entropy,
            ))
        } else {
            self.reject(req, &decision, core, log, now);
            Ok(AttachOutcome { decision, session: None })
        }
    }

    /// Permissions in force for a session under the installed store.
    pub fn effective_permissions(
        &self,
        session: &GatewaySession,
        req: &AccessRequest,
        ctx: &SubscriberContext,
    ) -> Result<BTreeSet<Permission>, GatewayError> {
        session_permissions(&self.store, req, ctx, session.assertion_permitted.as_ref())
    }

    pub fn verify_token(&self, token: &AccessToken, now: Timestamp) -> bool {
        token.verify(&self.cfg.key, now)
    }

    pub fn issue_token(
        &self,
        token_id: String,
        imsi: &Imsi,
        roles: BTreeSet<String>,
        permitted: BTreeSet<Permission>,
        now: Timestamp,
    ) -> AccessToken {
        AccessToken::issue(
            &self.cfg.key,
            token_id,
            imsi.clone(),
            self.cfg.domain.clone(),
            roles,
            permitted,
            now,
            self.cfg.token_ttl_ms,
        )
    }

    fn mint_continuity(&mut self) -> ContinuityToken {
        let id = self.next_service_session;
        self.next_service_session += 1;
        ContinuityToken {
            service_session_id: id,
            issued_in: self.cfg.domain.clone(),
        }
    }

    fn log_decision(&self, log: &mut EventLog, now: Timestamp, req: &AccessRequest, d: &AuthzDecision) {
        let mut f = fields([
            ("session_id", req.session_id.into()),
            ("imsi", req.imsi.as_str().into()),
            ("domain", req.domain.as_str().into()),
            ("effect", d.effect.as_str().into()),
            ("matched_rule", d.matched_rule.as_str().into()),
            ("via_federation", req.via_federation.into()),
        ]);
        if let Some(r) = &d.reason {
            f.insert("reason".into(), r.as_str().into());
        }
        if !d.obligations.is_empty() {
            let joined = d.obligations.iter().map(Permission::to_string).collect::<Vec<_>>().join(",");
            f.insert("permitted".into(), joined.into());
        }
        log.push(crate::sim::EventLogRecord {
            ts: now,
            component: self.component.clone(),
            event: "attach_decision".into(),
            fields: f,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn admit(
        &mut self,
        req: &AccessRequest,
        decision: AuthzDecision,
        continuity: Option<ContinuityToken>,
        assertion_permitted: Option<BTreeSet<Permission>>,
        core: &mut Core5g,
        log: &mut EventLog,
        now: Timestamp,
        token_entropy: u64,
    ) -> AttachOutcome {
        let slice = decision.slice_id.clone().expect("permit carries a slice");
        let core_component = format!("core5g:{}", core.domain());
        match core.admit_session(req.session_id, &slice) {
            Ok(adm) => {
                if adm.slice_instantiated {
                    log.append(
                        now,
                        &core_component,
                        "slice_instantiated",
                        fields([("slice_id", slice.as_str().into())]),
                    );
                }
                let continuity = continuity.unwrap_or_else(|| self.mint_continuity());
                let ip = adm.session.ip.expect("active session has an address");
                log.append(
                    now,
                    &core_component,
                    "attach_admitted",
                    fields([
                        ("session_id", req.session_id.into()),
                        ("imsi", req.imsi.as_str().into()),
                        ("ip", ip.to_string().into()),
                        ("slice_id", slice.as_str().into()),
                        ("service_session_id", continuity.service_session_id.into()),
                        ("via_federation", req.via_federation.into()),
                    ]),
                );
                let roles = core
                    .subscriber(&req.imsi)
                    .map(|s| s.roles.clone())
                    .unwrap_or_default();
                let token = self.issue_token(
                    format!("{}-{:016x}", self.cfg.domain, token_entropy),
                    &req.imsi,
                    roles,
                    decision.obligations.iter().cloned().collect(),
                    now,
                );
                log.append(
                    now,
                    &self.component,
                    "token_issued",
                    fields([
                        ("session_id", req.session_id.into()),
                        ("token_id", token.token_id.as_str().into()),
                        ("expires_at", token.expires_at.0.into()),
                    ]),
                );
                self.sessions.insert(
                    req.session_id,
                    GatewaySession {
                        imsi: req.imsi.clone(),
                        continuity,
                        assertion_permitted,
                        vpn_tunnel: req.vpn_tunnel,
                        token: Some(token),
                    },
                );
                AttachOutcome {
                    decision,
                    session: Some(adm.session),
                }
            }
            Err(e) => {
                // The gateway permitted but the core could not serve the
                // session; it is released without an address.
                let denied = AuthzDecision::deny(decision.matched_rule.clone(), Some(e.to_string()));
                self.reject(req, &denied, core, log, now);
                AttachOutcome {
                    decision: denied,
                    session: None,
                }
            }
        }
    }

    fn reject(&mut self, req: &AccessRequest, decision: &AuthzDecision, core: &mut Core5g, log: &mut EventLog, now: Timestamp) {
        let released = core.reject_session(req.session_id).is_ok();
        log.append(
            now,
            &format!("core5g:{}", core.domain()),
            "attach_denied",
            fields([
                ("session_id", req.session_id.into()),
                ("imsi", req.imsi.as_str().into()),
                ("matched_rule", decision.matched_rule.as_str().into()),
                ("reason", decision.reason.clone().unwrap_or_else(|| "policy".into()).into()),
                ("released", released.into()),
            ]),
        );
    }
}
