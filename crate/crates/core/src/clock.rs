//! Time primitives. All governance math runs on millisecond timestamps so the
//! simulator can drive a logical clock and get bit-identical logs.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

/// A non-negative span of milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Millis(pub i64);

pub const SECOND: Millis = Millis(1_000);
pub const MINUTE: Millis = Millis(60_000);
pub const HOUR: Millis = Millis(3_600_000);
pub const DAY: Millis = Millis(86_400_000);

impl Timestamp {
    pub fn as_millis(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Millis {
    pub fn days(n: i64) -> Self {
        Millis(n * DAY.0)
    }

    pub fn hours(n: i64) -> Self {
        Millis(n * HOUR.0)
    }

    pub fn minutes(n: i64) -> Self {
        Millis(n * MINUTE.0)
    }

    pub fn seconds(n: i64) -> Self {
        Millis(n * SECOND.0)
    }

    /// Parses human durations such as `90d`, `12h`, `30s` or a bare millisecond count.
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if let Ok(ms) = text.parse::<i64>() {
            return if ms >= 0 { Ok(Millis(ms)) } else { Err(format!("negative duration `{text}`")) };
        }
        let d = humantime::parse_duration(text).map_err(|e| format!("invalid duration `{text}`: {e}"))?;
        i64::try_from(d.as_millis())
            .map(Millis)
            .map_err(|_| format!("duration `{text}` out of range"))
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

impl Add<Millis> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Millis) -> Timestamp {
        Timestamp(self.0.saturating_add(rhs.0))
    }
}

impl Sub<Millis> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Millis) -> Timestamp {
        Timestamp(self.0.saturating_sub(rhs.0))
    }
}

impl Sub for Timestamp {
    type Output = Millis;
    fn sub(self, rhs: Timestamp) -> Millis {
        Millis(self.0 - rhs.0)
    }
}

impl Add for Millis {
    type Output = Millis;
    fn add(self, rhs: Millis) -> Millis {
        Millis(self.0 + rhs.0)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Timestamp(ms)
    }
}

/// Manually driven clock shared between a driver and the control plane.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock {
    now: Arc<AtomicI64>,
}

impl LogicalClock {
    pub fn new(start: Timestamp) -> Self {
        Self { now: Arc::new(AtomicI64::new(start.0)) }
    }

    pub fn set(&self, t: Timestamp) {
        self.now.store(t.0, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Millis) -> Timestamp {
        Timestamp(self.now.fetch_add(by.0, Ordering::SeqCst) + by.0)
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now.load(Ordering::SeqCst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_durations() {
        assert_eq!(Millis::parse("365d").unwrap(), Millis::days(365));
        assert_eq!(Millis::parse("60s").unwrap(), Millis::seconds(60));
        assert_eq!(Millis::parse("1500").unwrap(), Millis(1500));
        assert!(Millis::parse("-5").is_err());
        assert!(Millis::parse("soon").is_err());
    }

    #[test]
    fn logical_clock_is_shared() {
        let c = LogicalClock::new(Timestamp(10));
        let c2 = c.clone();
        c.advance(Millis(5));
        assert_eq!(c2.now(), Timestamp(15));
    }
}
