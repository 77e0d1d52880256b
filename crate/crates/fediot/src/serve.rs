//! Live mode: advances virtual time against the wall clock while the
//! control API serves requests against the same world.

use std::time::Duration;

use crate::api::SharedWorld;

/// Wall-clock interval between virtual-time steps.
pub const TICK: Duration = Duration::from_millis(50);

/// Advances the world by `speed` virtual milliseconds per real millisecond,
/// forever. Each step holds the lock only while processing due events.
pub async fn drive(world: SharedWorld, speed: f64) {
    let mut interval = tokio::time::interval(TICK);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let step = TICK.as_millis() as f64 * speed;
    let mut carry = 0.0;
    loop {
        interval.tick().await;
        carry += step;
        let whole = carry.floor();
        carry -= whole;
        if whole >= 1.0 {
            let mut w = world.lock().unwrap_or_else(|p| p.into_inner());
            let target = w.now().0 + whole as u64;
            w.run_until(target);
        }
    }
}
