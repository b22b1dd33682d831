//! Episode metrics: travel/waiting time means and queue statistics.

use serde::{Deserialize, Serialize};

/// Aggregated metrics of one run (or one run prefix).
///
/// Travel and waiting times are means over all spawned vehicles; vehicles
/// still in the network (or still held at their source arm) are censored at
/// the current time. The emergency variants restrict the mean to
/// emergency-flagged vehicles. `avg_queue` is the time average of the
/// stop-line-buffered vehicle count per intersection and `max_queue` the
/// largest buffered count observed at any single intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub att_s: f64,
    pub awt_s: f64,
    pub aett_s: f64,
    pub aewt_s: f64,
    pub avg_queue: f64,
    pub max_queue: u32,
    pub vehicles_entered: u32,
    pub vehicles_exited: u32,
}

impl MetricsReport {
    pub fn zero() -> Self {
        MetricsReport {
            att_s: 0.0,
            awt_s: 0.0,
            aett_s: 0.0,
            aewt_s: 0.0,
            avg_queue: 0.0,
            max_queue: 0,
            vehicles_entered: 0,
            vehicles_exited: 0,
        }
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0u32;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
