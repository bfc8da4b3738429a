//! Wall-clock timestamps in seconds since the Unix epoch.
//!
//! Within a process, timestamps come from a monotonic clock offset by the
//! epoch time sampled once at startup, so they never run backwards.

use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

struct Anchor {
    epoch: f64,
    instant: Instant,
}

fn anchor() -> &'static Anchor {
    static ANCHOR: OnceLock<Anchor> = OnceLock::new();
    ANCHOR.get_or_init(|| Anchor {
        epoch: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        instant: Instant::now(),
    })
}

pub fn now() -> f64 {
    let a = anchor();
    a.epoch + a.instant.elapsed().as_secs_f64()
}

/// Epoch time at which this process's monotonic clock was anchored.
pub fn epoch_offset() -> f64 {
    anchor().epoch
}
