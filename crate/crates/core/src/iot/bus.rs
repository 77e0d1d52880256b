//! Reliable, ordered group-telegram bus and the commissioning registry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::address::{GroupAddress, IndividualAddress};
use super::dpt::Dpt;
use super::IotError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The object takes its value from telegrams on the group.
    In,
    /// The object sends on the group and answers reads.
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLink {
    pub object: String,
    pub ga: GroupAddress,
    pub dpt: Dpt,
    pub direction: Direction,
}

/// What an installer configures for one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommissioningRecord {
    pub device_id: String,
    pub individual_address: IndividualAddress,
    #[serde(default)]
    pub objects: Vec<String>,
    #[serde(default)]
    pub links: Vec<GroupLink>,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl CommissioningRecord {
    /// Links must name declared objects, an object keeps one dpt, and a
    /// (object, group) pair appears once.
    pub fn validate(&self) -> Result<(), IotError> {
        let bad = |why: String| IotError::BadLink {
            device: self.device_id.clone(),
            reason: why,
        };
        if self.device_id.is_empty() {
            return Err(bad("empty device id".into()));
        }
        let mut dpts: BTreeMap<&str, Dpt> = BTreeMap::new();
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.links {
            if !self.objects.iter().any(|o| o == &l.object) {
                return Err(bad(format!("link to undeclared object {:?}", l.object)));
            }
            if let Some(prev) = dpts.insert(&l.object, l.dpt) {
                if prev != l.dpt {
                    return Err(bad(format!("object {:?} linked with dpts {prev} and {}", l.object, l.dpt)));
                }
            }
            if !seen.insert((&l.object, l.ga)) {
                return Err(bad(format!("object {:?} linked twice to {}", l.object, l.ga)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Write,
    Read,
    Response,
}

impl Service {
    pub fn as_str(self) -> &'static str {
        match self {
            Service::Write => "write",
            Service::Read => "read",
            Service::Response => "response",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Telegram {
    pub src: IndividualAddress,
    pub ga: GroupAddress,
    pub service: Service,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Device {
    pub record: CommissioningRecord,
    /// Current encoded value per object.
    pub state: BTreeMap<String, Vec<u8>>,
}

impl Device {
    pub fn object_value(&self, object: &str) -> Option<&[u8]> {
        self.state.get(object).map(Vec::as_slice)
    }
}

#[derive(Debug, Default)]
pub struct Bus {
    devices: BTreeMap<IndividualAddress, Device>,
    ids: BTreeMap<String, IndividualAddress>,
    group_dpt: BTreeMap<GroupAddress, Dpt>,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn commission(&mut self, rec: CommissioningRecord) -> Result<(), IotError> {
        if self.devices.contains_key(&rec.individual_address) {
            return Err(IotError::AddressInUse(rec.individual_address));
        }
        if self.ids.contains_key(&rec.device_id) {
            return Err(IotError::BadLink {
                device: rec.device_id.clone(),
                reason: "device id already commissioned".into(),
            });
        }
        rec.validate()?;
        for l in &rec.links {
            if let Some(d) = self.group_dpt.get(&l.ga) {
                if *d != l.dpt {
                    return Err(IotError::BadLink {
                        device: rec.device_id.clone(),
                        reason: format!("group {} carries dpt {d}, not {}", l.ga, l.dpt),
                    });
                }
            }
        }
        for l in &rec.links {
            self.group_dpt.insert(l.ga, l.dpt);
        }
        let state = rec
            .links
            .iter()
            .map(|l| (l.object.clone(), l.dpt.zero()))
            .collect();
        self.ids.insert(rec.device_id.clone(), rec.individual_address);
        self.devices.insert(rec.individual_address, Device { record: rec, state });
        Ok(())
    }

    pub fn device(&self, id: &str) -> Option<&Device> {
        self.ids.get(id).and_then(|a| self.devices.get(a))
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn group_dpt(&self, ga: GroupAddress) -> Option<Dpt> {
        self.group_dpt.get(&ga).copied()
    }

    /// Writes `payload` to every object linked to `ga`. Returns the number
    /// of devices (other than the sender) linked in-direction.
    pub fn group_write(&mut self, src: IndividualAddress, ga: GroupAddress, payload: &[u8]) -> Result<usize, IotError> {
        if let Some(dpt) = self.group_dpt(ga) {
            if payload.len() != dpt.payload_len() {
                return Err(IotError::BadPayload(format!(
                    "group {ga} carries dpt {dpt}, payload has {} byte(s)",
                    payload.len()
                )));
            }
        }
        let mut delivered = 0;
        for (addr, dev) in &mut self.devices {
            let mut listens = false;
            for l in dev.record.links.iter().filter(|l| l.ga == ga) {
                dev.state.insert(l.object.clone(), payload.to_vec());
                listens |= l.direction == Direction::In;
            }
            if listens && *addr != src {
                delivered += 1;
            }
        }
        Ok(delivered)
    }

    /// Answer from the lowest-addressed device linked out-direction.
    pub fn group_read(&self, ga: GroupAddress) -> Result<Telegram, IotError> {
        for (addr, dev) in &self.devices {
            if let Some(l) = dev
                .record
                .links
                .iter()
                .find(|l| l.ga == ga && l.direction == Direction::Out)
            {
                return Ok(Telegram {
                    src: *addr,
                    ga,
                    service: Service::Response,
                    payload: dev.state[&l.object].clone(),
                });
            }
        }
        Err(IotError::NoResponder(ga))
    }
}
