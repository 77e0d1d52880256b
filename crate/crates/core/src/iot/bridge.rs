//! IoT hub: relays bus telegrams to pub/sub topics and command topics back
//! onto the bus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::address::{GroupAddress, IndividualAddress};
use super::bus::{Service, Telegram};
use super::dpt::{self, Dpt};
use super::pubsub::{validate_topic, PubSubMessage};
use super::IotError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeDirection {
    /// Bus to topic.
    Telemetry,
    /// Topic to bus.
    Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeMapping {
    pub ga: GroupAddress,
    pub topic: String,
    pub dpt: Dpt,
    pub direction: BridgeDirection,
}

/// Why a frame crossed or did not cross the bridge.
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeOutcome<T> {
    Forwarded(T),
    /// Originated by the hub itself; not echoed.
    Suppressed,
    /// No mapping for the group or topic.
    Unmapped,
}

#[derive(Debug, Clone)]
pub struct Hub {
    address: IndividualAddress,
    telemetry: BTreeMap<GroupAddress, (String, Dpt)>,
    commands: BTreeMap<String, (GroupAddress, Dpt)>,
}

impl Hub {
    pub fn new(address: IndividualAddress, mappings: &[BridgeMapping]) -> Result<Self, IotError> {
        let mut hub = Hub {
            address,
            telemetry: BTreeMap::new(),
            commands: BTreeMap::new(),
        };
        for m in mappings {
            validate_topic(&m.topic)?;
            let dup = match m.direction {
                BridgeDirection::Telemetry => hub.telemetry.insert(m.ga, (m.topic.clone(), m.dpt)).is_some(),
                BridgeDirection::Command => hub.commands.insert(m.topic.clone(), (m.ga, m.dpt)).is_some(),
            };
            if dup {
                return Err(IotError::BadLink {
                    device: "hub".into(),
                    reason: format!("duplicate bridge mapping for {} / {}", m.ga, m.topic),
                });
            }
        }
        Ok(hub)
    }

    pub fn address(&self) -> IndividualAddress {
        self.address
    }

    pub fn command_topics(&self) -> impl Iterator<Item = &String> {
        self.commands.keys()
    }

    /// Bus side: a write on a telemetry group becomes a message carrying the
    /// decoded value in the fixed text schema.
    pub fn on_telegram(&self, t: &Telegram) -> Result<BridgeOutcome<PubSubMessage>, IotError> {
        if t.src == self.address {
            return Ok(BridgeOutcome::Suppressed);
        }
        if t.service != Service::Write {
            return Ok(BridgeOutcome::Unmapped);
        }
        let Some((topic, dpt)) = self.telemetry.get(&t.ga) else {
            return Ok(BridgeOutcome::Unmapped);
        };
        let value = dpt::decode(*dpt, &t.payload)?;
        Ok(BridgeOutcome::Forwarded(PubSubMessage::text(topic.clone(), &dpt::render(value))))
    }

    /// Topic side: a message on a command topic becomes a write telegram
    /// sent by the hub.
    pub fn on_message(&self, msg: &PubSubMessage) -> Result<BridgeOutcome<Telegram>, IotError> {
        let Some((ga, dpt)) = self.commands.get(&msg.topic) else {
            return Ok(BridgeOutcome::Unmapped);
        };
        let value = dpt::parse_text(*dpt, &msg.payload_text())?;
        Ok(BridgeOutcome::Forwarded(Telegram {
            src: self.address,
            ga: *ga,
            service: Service::Write,
            payload: dpt::encode(*dpt, value)?,
        }))
    }
}
