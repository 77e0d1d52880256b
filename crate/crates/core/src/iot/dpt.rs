//! Datapoint types and their bus encodings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IotError;

/// Reserved 2-byte float code meaning "invalid data".
pub const DPT9_INVALID: u16 = 0x7FFF;
pub const DPT9_MIN: f64 = -671_088.64;
pub const DPT9_MAX: f64 = 670_433.28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dpt {
    /// 1.001 boolean switch.
    #[serde(rename = "1.001")]
    Switch,
    /// 5.010 unsigned 8-bit count; carries the ventilation level.
    #[serde(rename = "5.010")]
    Count,
    /// 9.001 temperature in degrees Celsius.
    #[serde(rename = "9.001")]
    Temperature,
    /// 9.008 air quality in ppm.
    #[serde(rename = "9.008")]
    Ppm,
}

impl Dpt {
    pub fn as_str(self) -> &'static str {
        match self {
            Dpt::Switch => "1.001",
            Dpt::Count => "5.010",
            Dpt::Temperature => "9.001",
            Dpt::Ppm => "9.008",
        }
    }

    pub fn payload_len(self) -> usize {
        match self {
            Dpt::Switch | Dpt::Count => 1,
            Dpt::Temperature | Dpt::Ppm => 2,
        }
    }

    /// Encoding of the value a freshly commissioned object holds.
    pub fn zero(self) -> Vec<u8> {
        vec![0; self.payload_len()]
    }
}

impl fmt::Display for Dpt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dpt {
    type Err = IotError;

    fn from_str(s: &str) -> Result<Self, IotError> {
        [Dpt::Switch, Dpt::Count, Dpt::Temperature, Dpt::Ppm]
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| IotError::UnknownDpt(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DpValue {
    Bool(bool),
    Count(u8),
    Float(f64),
}

/// Encodes a 2-byte float: value = 0.01 * M * 2^E, with a sign bit, a
/// 4-bit exponent and an 11-bit mantissa (M is 12-bit two's complement
/// including the sign). The smallest exponent whose mantissa fits is used.
pub fn dpt9_encode(value: f64) -> Result<[u8; 2], IotError> {
    if !value.is_finite() || !(DPT9_MIN..=DPT9_MAX).contains(&value) {
        return Err(IotError::OutOfRange(value));
    }
    let scaled = value * 100.0;
    for e in 0..16u32 {
        let m = (scaled / f64::from(1u32 << e)).round();
        if (-2048.0..=2047.0).contains(&m) {
            let m = m as i32;
            let raw = if m < 0 { 0x8000 } else { 0 } | ((e as u16) << 11) | ((m as u16) & 0x07FF);
            if raw == DPT9_INVALID {
                return Err(IotError::OutOfRange(value));
            }
            return Ok(raw.to_be_bytes());
        }
    }
    Err(IotError::OutOfRange(value))
}

fn dpt9_fields(raw: u16) -> (i32, u32) {
    let e = u32::from((raw >> 11) & 0xF);
    let low = i32::from(raw & 0x07FF);
    let m = if raw & 0x8000 != 0 { low - 2048 } else { low };
    (m, e)
}

pub fn dpt9_decode(bytes: [u8; 2]) -> Result<f64, IotError> {
    let raw = u16::from_be_bytes(bytes);
    if raw == DPT9_INVALID {
        return Err(IotError::InvalidEncoding);
    }
    let (m, e) = dpt9_fields(raw);
    Ok(f64::from(m * (1 << e)) / 100.0)
}

/// The exponent of an encoded 2-byte float.
pub fn dpt9_exponent(bytes: [u8; 2]) -> u32 {
    dpt9_fields(u16::from_be_bytes(bytes)).1
}

/// True when `dpt9_encode` would produce this code for its own value.
pub fn dpt9_is_canonical(bytes: [u8; 2]) -> bool {
    let raw = u16::from_be_bytes(bytes);
    let (m, e) = dpt9_fields(raw);
    raw != DPT9_INVALID && (e == 0 || !(-1024..=1023).contains(&m))
}

pub fn encode(dpt: Dpt, value: DpValue) -> Result<Vec<u8>, IotError> {
    match (dpt, value) {
        (Dpt::Switch, DpValue::Bool(b)) => Ok(vec![u8::from(b)]),
        (Dpt::Count, DpValue::Count(n)) => Ok(vec![n]),
        (Dpt::Temperature | Dpt::Ppm, DpValue::Float(v)) => Ok(dpt9_encode(v)?.to_vec()),
        (dpt, value) => Err(IotError::BadPayload(format!("{value:?} does not fit dpt {dpt}"))),
    }
}

pub fn decode(dpt: Dpt, payload: &[u8]) -> Result<DpValue, IotError> {
    if payload.len() != dpt.payload_len() {
        return Err(IotError::BadPayload(format!(
            "dpt {dpt} needs {} byte(s), got {}",
            dpt.payload_len(),
            payload.len()
        )));
    }
    Ok(match dpt {
        Dpt::Switch => DpValue::Bool(payload[0] & 1 == 1),
        Dpt::Count => DpValue::Count(payload[0]),
        Dpt::Temperature | Dpt::Ppm => DpValue::Float(dpt9_decode([payload[0], payload[1]])?),
    })
}

/// Fixed text schema used on pub/sub topics.
pub fn render(value: DpValue) -> String {
    match value {
        DpValue::Bool(b) => if b { "1" } else { "0" }.to_string(),
        DpValue::Count(n) => n.to_string(),
        DpValue::Float(v) => format!("{v:.2}"),
    }
}

/// Parses a command payload written in the topic text schema.
pub fn parse_text(dpt: Dpt, text: &str) -> Result<DpValue, IotError> {
    let bad = || IotError::BadPayload(format!("{text:?} is not a {dpt} value"));
    let t = text.trim();
    match dpt {
        Dpt::Switch => match t {
            "1" | "on" | "true" => Ok(DpValue::Bool(true)),
            "0" | "off" | "false" => Ok(DpValue::Bool(false)),
            _ => Err(bad()),
        },
        Dpt::Count => t.parse().map(DpValue::Count).map_err(|_| bad()),
        Dpt::Temperature | Dpt::Ppm => t.parse().map(DpValue::Float).map_err(|_| bad()),
    }
}
