//! Simulated 5G core for a single domain: subscriber registry, PDU session
//! lifecycle, slice instantiation and address-pool management.
//!
//! Admission is never decided here. `attach` only opens a pending session;
//! the domain's gateway later calls `admit_session` or `reject_session`.

mod types;

pub use types::{DomainId, Imsi, PduSession, SessionId, SessionState, Slice, Subscriber, SubscriberContext};

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Core5gError {
    #[error("imsi {0} is already registered")]
    DuplicateImsi(Imsi),
    #[error("imsi {0} is not registered")]
    UnknownImsi(Imsi),
    #[error("imsi {imsi} has no SIM profile for domain {domain}")]
    NoSimProfile { imsi: Imsi, domain: DomainId },
    #[error("imsi {0} already has a session in this domain")]
    AlreadyAttached(Imsi),
    #[error("imsi {0} has no active session")]
    NoActiveSession(Imsi),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session id {0} is already in use")]
    DuplicateSession(SessionId),
    #[error("session {0} is not pending")]
    NotPending(SessionId),
    #[error("address pool {0} is exhausted")]
    PoolExhausted(Ipv4Net),
    #[error("slice {0} is not in the slice catalog")]
    UnknownSlice(String),
    #[error("invalid subscriber: {0}")]
    InvalidSubscriber(String),
}

pub type Result<T> = std::result::Result<T, Core5gError>;

/// Result of a successful admission.
#[derive(Debug, Clone)]
pub struct Admission {
    pub session: PduSession,
    /// True when this admission caused the slice to be instantiated.
    pub slice_instantiated: bool,
}

#[derive(Debug, Clone)]
pub struct Core5g {
    domain: DomainId,
    pool: Ipv4Net,
    slice_catalog: BTreeMap<String, Slice>,
    slices: BTreeMap<String, Slice>,
    subscribers: BTreeMap<Imsi, Subscriber>,
    sessions: BTreeMap<SessionId, PduSession>,
    leased: BTreeSet<Ipv4Addr>,
}

impl Core5g {
    pub fn new(domain: DomainId, pool: Ipv4Net, slice_catalog: impl IntoIterator<Item = Slice>) -> Self {
        Core5g {
            domain,
            pool: pool.trunc(),
            slice_catalog: slice_catalog
                .into_iter()
                .map(|s| (s.slice_id.clone(), s))
                .collect(),
            slices: BTreeMap::new(),
            subscribers: BTreeMap::new(),
            sessions: BTreeMap::new(),
            leased: BTreeSet::new(),
        }
    }

    pub fn domain(&self) -> &DomainId {
        &self.domain
    }

    pub fn pool(&self) -> Ipv4Net {
        self.pool
    }

    pub fn register_subscriber(&mut self, s: Subscriber) -> Result<()> {
        s.validate().map_err(Core5gError::InvalidSubscriber)?;
        if self.subscribers.contains_key(&s.imsi) {
            return Err(Core5gError::DuplicateImsi(s.imsi));
        }
        self.subscribers.insert(s.imsi.clone(), s);
        Ok(())
    }

    pub fn subscriber(&self, imsi: &Imsi) -> Option<&Subscriber> {
        self.subscribers.get(imsi)
    }

    pub fn subscribers(&self) -> impl Iterator<Item = &Subscriber> {
        self.subscribers.values()
    }

    pub fn set_subscription_active(&mut self, imsi: &Imsi, active: bool) -> Result<()> {
        let s = self
            .subscribers
            .get_mut(imsi)
            .ok_or_else(|| Core5gError::UnknownImsi(imsi.clone()))?;
        s.subscription_active = active;
        Ok(())
    }

    pub fn query_subscriber_context(&self, imsi: &Imsi) -> Result<SubscriberContext> {
        self.subscribers
            .get(imsi)
            .map(SubscriberContext::from)
            .ok_or_else(|| Core5gError::UnknownImsi(imsi.clone()))
    }

    /// Opens a pending session. The caller supplies the session id so ids
    /// stay unique across every core in a run.
    pub fn attach(&mut self, imsi: &Imsi, session_id: SessionId, vpn_tunnel: bool) -> Result<PduSession> {
        let sub = self
            .subscribers
            .get(imsi)
            .ok_or_else(|| Core5gError::UnknownImsi(imsi.clone()))?;
        if !sub.sim_profiles.contains(&self.domain) {
            return Err(Core5gError::NoSimProfile {
                imsi: imsi.clone(),
                domain: self.domain.clone(),
            });
        }
        if self.live_session(imsi).is_some() {
            return Err(Core5gError::AlreadyAttached(imsi.clone()));
        }
        if self.sessions.contains_key(&session_id) {
            return Err(Core5gError::DuplicateSession(session_id));
        }
        let session = PduSession {
            session_id,
            imsi: imsi.clone(),
            domain: self.domain.clone(),
            ip: None,
            slice_id: None,
            state: SessionState::Pending,
            vpn_tunnel,
        };
        self.sessions.insert(session_id, session.clone());
        Ok(session)
    }

    pub fn admit_session(&mut self, session_id: SessionId, slice_id: &str) -> Result<Admission> {
        let state = self
            .sessions
            .get(&session_id)
            .ok_or(Core5gError::UnknownSession(session_id))?
            .state;
        if state != SessionState::Pending {
            return Err(Core5gError::NotPending(session_id));
        }
        let slice = self
            .slice_catalog
            .get(slice_id)
            .cloned()
            .ok_or_else(|| Core5gError::UnknownSlice(slice_id.to_string()))?;
        let ip = self.lowest_free()?;

        let slice_instantiated = !self.slices.contains_key(slice_id);
        if slice_instantiated {
            self.slices.insert(slice_id.to_string(), slice);
        }
        self.leased.insert(ip);
        let session = self.sessions.get_mut(&session_id).expect("checked above");
        session.ip = Some(ip);
        session.slice_id = Some(slice_id.to_string());
        session.state = SessionState::Active;
        Ok(Admission {
            session: session.clone(),
            slice_instantiated,
        })
    }

    pub fn reject_session(&mut self, session_id: SessionId) -> Result<PduSession> {
        let session = self
            .sessions
            .get_mut(&session_id)
            .ok_or(Core5gError::UnknownSession(session_id))?;
        if session.state != SessionState::Pending {
            return Err(Core5gError::NotPending(session_id));
        }
        session.state = SessionState::Released;
        Ok(session.clone())
    }

    /// Releases a pending or active session and returns its address to the pool.
    pub fn release_session(&mut self, session_id: SessionId) -> Result<PduSession> {
        let session = self
            .sessions
            .get_mut(&session_id)
            .ok_or(Core5gError::UnknownSession(session_id))?;
        if session.state == SessionState::Released {
            return Err(Core5gError::UnknownSession(session_id));
        }
        session.state = SessionState::Released;
        if let Some(ip) = session.ip {
            self.leased.remove(&ip);
        }
        Ok(session.clone())
    }

    pub fn session(&self, session_id: SessionId) -> Option<&PduSession> {
        self.sessions.get(&session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &PduSession> {
        self.sessions.values()
    }

    /// The non-released session for `imsi`, if any.
    pub fn live_session(&self, imsi: &Imsi) -> Option<&PduSession> {
        self.sessions
            .values()
            .find(|s| &s.imsi == imsi && s.state != SessionState::Released)
    }

    pub fn active_session(&self, imsi: &Imsi) -> Option<&PduSession> {
        self.sessions
            .values()
            .find(|s| &s.imsi == imsi && s.state == SessionState::Active)
    }

    pub fn instantiated_slices(&self) -> impl Iterator<Item = &Slice> {
        self.slices.values()
    }

    // Host addresses start at network + 2; network, network + 1 and the
    // broadcast address are never leased.
    fn lowest_free(&self) -> Result<Ipv4Addr> {
        let first = u32::from(self.pool.network()).saturating_add(2);
        let last = u32::from(self.pool.broadcast()).saturating_sub(1);
        let mut candidate = first;
        for leased in self.leased.range(Ipv4Addr::from(first)..) {
            let leased = u32::from(*leased);
            if leased != candidate {
                break;
            }
            candidate += 1;
        }
        if candidate > last || self.pool.prefix_len() > 30 {
            return Err(Core5gError::PoolExhausted(self.pool));
        }
        Ok(Ipv4Addr::from(candidate))
    }
}
