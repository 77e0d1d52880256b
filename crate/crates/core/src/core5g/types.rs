use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

pub type SessionId = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(pub String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Self {
        DomainId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DomainId {
    fn from(s: &str) -> Self {
        DomainId(s.to_string())
    }
}

/// A 15-digit subscriber identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Imsi(String);

impl Imsi {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s.len() == 15 && s.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Imsi(s.to_string()))
        } else {
            Err(format!("imsi must be 15 decimal digits, got {s:?}"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Imsi {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Imsi::parse(&s)
    }
}

impl From<Imsi> for String {
    fn from(i: Imsi) -> String {
        i.0
    }
}

impl fmt::Display for Imsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscriber {
    pub imsi: Imsi,
    pub home_domain: DomainId,
    pub sim_profiles: Vec<DomainId>,
    #[serde(default)]
    pub roles: BTreeSet<String>,
    pub device_type: String,
    /// 0 = unknown, 3 = hardened.
    #[serde(default)]
    pub posture: u8,
    #[serde(default = "yes")]
    pub subscription_active: bool,
}

fn yes() -> bool {
    true
}

impl Subscriber {
    pub fn validate(&self) -> Result<(), String> {
        if self.sim_profiles.is_empty() {
            return Err(format!("{}: sim_profiles is empty", self.imsi));
        }
        let unique: BTreeSet<_> = self.sim_profiles.iter().collect();
        if unique.len() != self.sim_profiles.len() {
            return Err(format!("{}: duplicate domain in sim_profiles", self.imsi));
        }
        if self.posture > 3 {
            return Err(format!("{}: posture {} outside 0..=3", self.imsi, self.posture));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub slice_id: String,
    pub qos_class: String,
    pub isolation_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Pending,
    Active,
    Released,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Pending => "pending",
            SessionState::Active => "active",
            SessionState::Released => "released",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PduSession {
    pub session_id: SessionId,
    pub imsi: Imsi,
    pub domain: DomainId,
    pub ip: Option<Ipv4Addr>,
    pub slice_id: Option<String>,
    pub state: SessionState,
    pub vpn_tunnel: bool,
}

/// Read-only projection of a [`Subscriber`] handed to the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberContext {
    pub imsi: Imsi,
    pub subscription_active: bool,
    pub device_type: String,
    pub posture: u8,
    pub roles: BTreeSet<String>,
    pub home_domain: DomainId,
}

impl From<&Subscriber> for SubscriberContext {
    fn from(s: &Subscriber) -> Self {
        SubscriberContext {
            imsi: s.imsi.clone(),
            subscription_active: s.subscription_active,
            device_type: s.device_type.clone(),
            posture: s.posture,
            roles: s.roles.clone(),
            home_domain: s.home_domain.clone(),
        }
    }
}
