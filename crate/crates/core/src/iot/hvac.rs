//! CO2-driven ventilation controller with a hysteresis band.

use serde::{Deserialize, Serialize};

pub const MAX_LEVEL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvacThresholds {
    /// Raise one level when a sample is above this.
    pub raise_above_ppm: f64,
    /// Lower one level when a sample is below this.
    pub lower_below_ppm: f64,
}

impl Default for HvacThresholds {
    fn default() -> Self {
        HvacThresholds {
            raise_above_ppm: 1000.0,
            lower_below_ppm: 800.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HvacController {
    thresholds: HvacThresholds,
    level: u8,
}

impl HvacController {
    pub fn new(thresholds: HvacThresholds) -> Self {
        HvacController { thresholds, level: 0 }
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Feeds one sample; returns the new level when it changed.
    pub fn on_sample(&mut self, ppm: f64) -> Option<u8> {
        let next = if ppm > self.thresholds.raise_above_ppm {
            (self.level + 1).min(MAX_LEVEL)
        } else if ppm < self.thresholds.lower_below_ppm {
            self.level.saturating_sub(1)
        } else {
            self.level
        };
        (next != self.level).then(|| {
            self.level = next;
            next
        })
    }
}
