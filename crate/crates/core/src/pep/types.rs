use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

/// Next-hop label: `svc:<name>`, `red-side` or `drop`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NextHop {
    Service(String),
    RedSide,
    Drop,
}

impl fmt::Display for NextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NextHop::Service(name) => write!(f, "svc:{name}"),
            NextHop::RedSide => f.write_str("red-side"),
            NextHop::Drop => f.write_str("drop"),
        }
    }
}

impl FromStr for NextHop {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "red-side" => Ok(NextHop::RedSide),
            "drop" => Ok(NextHop::Drop),
            _ => match s.strip_prefix("svc:") {
                Some(name) if !name.is_empty() => Ok(NextHop::Service(name.to_string())),
                _ => Err(format!("bad next hop {s:?}")),
            },
        }
    }
}

impl TryFrom<String> for NextHop {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<NextHop> for String {
    fn from(n: NextHop) -> String {
        n.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub prefix: Ipv4Net,
    pub next_hop: NextHop,
}

impl RouteEntry {
    pub fn new(prefix: Ipv4Net, next_hop: NextHop) -> Self {
        RouteEntry { prefix, next_hop }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProtoMatch {
    Any,
    Only(Proto),
}

impl ProtoMatch {
    pub fn matches(self, p: Proto) -> bool {
        match self {
            ProtoMatch::Any => true,
            ProtoMatch::Only(q) => q == p,
        }
    }
}

impl fmt::Display for ProtoMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtoMatch::Any => f.write_str("*"),
            ProtoMatch::Only(p) => p.fmt(f),
        }
    }
}

impl TryFrom<String> for ProtoMatch {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "*" => Ok(ProtoMatch::Any),
            "tcp" => Ok(ProtoMatch::Only(Proto::Tcp)),
            "udp" => Ok(ProtoMatch::Only(Proto::Udp)),
            _ => Err(format!("bad proto {s:?}")),
        }
    }
}

impl From<ProtoMatch> for String {
    fn from(p: ProtoMatch) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PortMatch {
    Any,
    Port(u16),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawPort {
    Port(u16),
    Text(String),
}

impl Serialize for PortMatch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PortMatch::Any => RawPort::Text("*".into()).serialize(s),
            PortMatch::Port(p) => RawPort::Port(*p).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PortMatch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match RawPort::deserialize(d)? {
            RawPort::Port(p) => Ok(PortMatch::Port(p)),
            RawPort::Text(t) if t == "*" => Ok(PortMatch::Any),
            RawPort::Text(t) => Err(serde::de::Error::custom(format!("bad port {t:?}"))),
        }
    }
}

impl PortMatch {
    pub fn matches(self, port: u16) -> bool {
        match self {
            PortMatch::Any => true,
            PortMatch::Port(p) => p == port,
        }
    }
}

impl fmt::Display for PortMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortMatch::Any => f.write_str("*"),
            PortMatch::Port(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AclAction {
    Permit,
    Deny,
}

impl fmt::Display for AclAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AclAction::Permit => "permit",
            AclAction::Deny => "deny",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclRule {
    pub priority: u32,
    pub src: Ipv4Net,
    pub dst: Ipv4Net,
    pub dst_port: PortMatch,
    pub proto: ProtoMatch,
    pub action: AclAction,
}

impl AclRule {
    pub fn matches(&self, q: &FlowQuery) -> bool {
        self.src.contains(&q.src)
            && self.dst.contains(&q.dst)
            && self.dst_port.matches(q.dst_port)
            && self.proto.matches(q.proto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowQuery {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Proto,
}

/// `matched_acl = None` means no ACL matched and the default deny applied.
/// A denied flow never has an egress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDecision {
    pub action: AclAction,
    pub matched_acl: Option<u32>,
    pub egress: Option<NextHop>,
}

impl FlowDecision {
    pub fn deny(matched_acl: Option<u32>) -> Self {
        FlowDecision {
            action: AclAction::Deny,
            matched_acl,
            egress: None,
        }
    }

    pub fn is_permit(&self) -> bool {
        self.action == AclAction::Permit
    }

    pub fn matched_label(&self) -> String {
        self.matched_acl
            .map(|p| p.to_string())
            .unwrap_or_else(|| "default".to_string())
    }

    pub fn egress_label(&self) -> String {
        self.egress
            .as_ref()
            .map(NextHop::to_string)
            .unwrap_or_else(|| "none".to_string())
    }
}
