use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IotError;

/// Three-level group address `main/middle/sub`, packed 5/3/8 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroupAddress {
    main: u8,
    middle: u8,
    sub: u8,
}

impl GroupAddress {
    pub fn new(main: u8, middle: u8, sub: u8) -> Result<Self, IotError> {
        if main > 31 {
            return Err(IotError::Range(format!("group main {main} outside 0..=31")));
        }
        if middle > 7 {
            return Err(IotError::Range(format!("group middle {middle} outside 0..=7")));
        }
        Ok(GroupAddress { main, middle, sub })
    }

    pub fn main(self) -> u8 {
        self.main
    }

    pub fn middle(self) -> u8 {
        self.middle
    }

    pub fn sub(self) -> u8 {
        self.sub
    }

    pub fn encode(self) -> u16 {
        (u16::from(self.main) << 11) | (u16::from(self.middle) << 8) | u16::from(self.sub)
    }

    pub fn decode(raw: u16) -> Self {
        GroupAddress {
            main: (raw >> 11) as u8,
            middle: ((raw >> 8) & 0x7) as u8,
            sub: (raw & 0xff) as u8,
        }
    }
}

impl fmt::Display for GroupAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.main, self.middle, self.sub)
    }
}

fn parts<const N: usize>(s: &str, sep: char, what: &str) -> Result<[u8; N], IotError> {
    let raw: Vec<&str> = s.split(sep).collect();
    if raw.len() != N {
        return Err(IotError::Range(format!("{what} {s:?} needs {N} parts")));
    }
    let mut out = [0u8; N];
    for (slot, p) in out.iter_mut().zip(raw) {
        *slot = p
            .parse()
            .map_err(|_| IotError::Range(format!("{what} {s:?}: bad part {p:?}")))?;
    }
    Ok(out)
}

impl FromStr for GroupAddress {
    type Err = IotError;

    fn from_str(s: &str) -> Result<Self, IotError> {
        let [a, b, c] = parts::<3>(s, '/', "group address")?;
        GroupAddress::new(a, b, c)
    }
}

impl TryFrom<String> for GroupAddress {
    type Error = IotError;

    fn try_from(s: String) -> Result<Self, IotError> {
        s.parse()
    }
}

impl From<GroupAddress> for String {
    fn from(g: GroupAddress) -> String {
        g.to_string()
    }
}

/// Device address `area.line.device`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IndividualAddress {
    area: u8,
    line: u8,
    device: u8,
}

impl IndividualAddress {
    pub fn new(area: u8, line: u8, device: u8) -> Result<Self, IotError> {
        if area > 15 || line > 15 {
            return Err(IotError::Range(format!(
                "individual address {area}.{line}.{device}: area and line must be 0..=15"
            )));
        }
        Ok(IndividualAddress { area, line, device })
    }
}

impl fmt::Display for IndividualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.area, self.line, self.device)
    }
}

impl FromStr for IndividualAddress {
    type Err = IotError;

    fn from_str(s: &str) -> Result<Self, IotError> {
        let [a, l, d] = parts::<3>(s, '.', "individual address")?;
        IndividualAddress::new(a, l, d)
    }
}

impl TryFrom<String> for IndividualAddress {
    type Error = IotError;

    fn try_from(s: String) -> Result<Self, IotError> {
        s.parse()
    }
}

impl From<IndividualAddress> for String {
    fn from(a: IndividualAddress) -> String {
        a.to_string()
    }
}
