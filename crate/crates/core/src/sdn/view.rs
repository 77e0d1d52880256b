use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::core5g::{Core5g, DomainId, Imsi, SessionId, SessionState, SubscriberContext};
use crate::gateway::{Gateway, Permission};
use crate::sim::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionViewEntry {
    pub session_id: SessionId,
    pub imsi: Imsi,
    pub domain: DomainId,
    pub ip: Option<Ipv4Addr>,
    pub slice_id: Option<String>,
    pub service_session_id: Option<u64>,
    pub state: SessionState,
    pub vpn_tunnel: bool,
    /// Subscriber attributes as the domain's core reports them.
    pub context: Option<SubscriberContext>,
    /// Present for sessions admitted through federation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assertion_permitted: Option<BTreeSet<Permission>>,
}

/// Aggregated non-released sessions across domains at `as_of`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub entries: Vec<SessionViewEntry>,
    pub as_of: Timestamp,
    /// Domains that could not be polled.
    #[serde(default)]
    pub unreachable: Vec<DomainId>,
}

impl SessionView {
    pub fn active(&self) -> impl Iterator<Item = &SessionViewEntry> {
        self.entries.iter().filter(|e| e.state == SessionState::Active)
    }

    pub fn for_imsi<'a>(&'a self, imsi: &'a Imsi) -> impl Iterator<Item = &'a SessionViewEntry> {
        self.entries.iter().filter(move |e| &e.imsi == imsi)
    }
}

/// Reads one domain's live sessions through its gateway.
pub fn poll_domain(core: &Core5g, gateway: &Gateway) -> Vec<SessionViewEntry> {
    core.sessions()
        .filter(|s| s.state != SessionState::Released)
        .map(|s| {
            let gw = gateway.session(s.session_id);
            SessionViewEntry {
                session_id: s.session_id,
                imsi: s.imsi.clone(),
                domain: s.domain.clone(),
                ip: s.ip,
                slice_id: s.slice_id.clone(),
                service_session_id: gw.map(|g| g.continuity.service_session_id),
                state: s.state,
                vpn_tunnel: s.vpn_tunnel,
                context: core.query_subscriber_context(&s.imsi).ok(),
                assertion_permitted: gw.and_then(|g| g.assertion_permitted.clone()),
            }
        })
        .collect()
}
