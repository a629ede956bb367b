//! Timestamps and validity ranges.

use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

pub type Timestamp = DateTime<Utc>;

/// Parse an RFC 3339 timestamp and truncate it to whole seconds.
pub fn parse_timestamp(s: &str) -> Result<Timestamp, chrono::ParseError> {
    let t = DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc);
    Ok(t.with_nanosecond(0).unwrap_or(t))
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Closed interval `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub t_min: Timestamp,
    pub t_max: Timestamp,
}

impl TimeRange {
    pub fn new(t_min: Timestamp, t_max: Timestamp) -> Self {
        debug_assert!(t_min <= t_max);
        Self { t_min, t_max }
    }

    pub fn instant(t: Timestamp) -> Self {
        Self { t_min: t, t_max: t }
    }

    pub fn contains(&self, at: Timestamp) -> bool {
        self.t_min <= at && at <= self.t_max
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.t_min <= other.t_max && other.t_min <= self.t_max
    }

    /// Smallest envelope covering both ranges; gaps between them are absorbed.
    pub fn envelope(&self, other: &TimeRange) -> TimeRange {
        TimeRange {
            t_min: self.t_min.min(other.t_min),
            t_max: self.t_max.max(other.t_max),
        }
    }

    /// `t_min - window <= at <= t_max + window`
    pub fn within_window(&self, at: Timestamp, window: Duration) -> bool {
        self.t_min - window <= at && at <= self.t_max + window
    }

    /// Seconds between `at` and the nearest point of the range (0 when inside).
    pub fn distance_secs(&self, at: Timestamp) -> i64 {
        if at < self.t_min {
            (self.t_min - at).num_seconds()
        } else if at > self.t_max {
            (at - self.t_max).num_seconds()
        } else {
            0
        }
    }
}
