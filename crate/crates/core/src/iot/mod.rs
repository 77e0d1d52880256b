//! Building automation domain: group-addressed devices on a telegram bus,
//! datapoint codecs, a pub/sub broker, the hub bridging the two, and the
//! ventilation controller.

pub mod address;
pub mod bridge;
pub mod bus;
pub mod dpt;
pub mod hvac;
pub mod pubsub;

pub use address::{GroupAddress, IndividualAddress};
pub use bridge::{BridgeDirection, BridgeMapping, BridgeOutcome, Hub};
pub use bus::{Bus, CommissioningRecord, Device, Direction, GroupLink, Service, Telegram};
pub use dpt::{dpt9_decode, dpt9_encode, DpValue, Dpt};
pub use hvac::{HvacController, HvacThresholds};
pub use pubsub::{topic_matches, validate_filter, Broker, PubSubMessage, Subscription};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IotError {
    #[error("{0}")]
    Range(String),
    #[error("value {0} not representable as a 2-byte float")]
    OutOfRange(f64),
    #[error("reserved invalid 2-byte float encoding")]
    InvalidEncoding,
    #[error("unknown dpt {0:?}")]
    UnknownDpt(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error("individual address {0} already in use")]
    AddressInUse(IndividualAddress),
    #[error("bad link on {device}: {reason}")]
    BadLink { device: String, reason: String },
    #[error("no device answers reads on {0}")]
    NoResponder(GroupAddress),
    #[error("bad subscription filter {0:?}")]
    BadFilter(String),
    #[error("bad topic {0:?}")]
    BadTopic(String),
}

/// Hop counts between the building bus and the controller. Every hop costs
/// `hop_latency_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default = "default_hop")]
    pub hop_latency_ms: u64,
    /// Device to hub across the mesh.
    pub mesh_hops: u64,
    /// Hub to broker across the 5G backhaul.
    pub backhaul_hops: u64,
}

fn default_hop() -> u64 {
    5
}

impl Topology {
    /// Sensor to hub to broker.
    pub fn uplink_ms(&self) -> u64 {
        (self.mesh_hops + self.backhaul_hops) * self.hop_latency_ms
    }

    /// Broker to hub to actuator.
    pub fn downlink_ms(&self) -> u64 {
        self.uplink_ms()
    }

    /// Sample to actuator command, controller processing being instant.
    pub fn loop_latency_ms(&self) -> u64 {
        self.uplink_ms() + self.downlink_ms()
    }
}

#[cfg(test)]
mod tests;
