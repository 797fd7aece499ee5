//! Re-publishing an archive with its original order and inter-message timing.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::archive::{CaptureRecord, ExperimentArchive};
use crate::broker::{Broker, RoundRobin};
use crate::wire::now_ns;
use crate::{Error, Result};

/// Header marking digital-twin traffic with the experiment it reproduces.
pub const REPLAY_OF: &str = "replay.of";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// 1.0 is real time, 2.0 twice as fast, 0 means no delays at all.
    pub speed: f64,
    /// Original topic → topic to publish to. Unmapped topics replay onto themselves.
    #[serde(default)]
    pub target: BTreeMap<String, String>,
}

impl ReplayOptions {
    pub fn at_speed(speed: f64) -> Self {
        ReplayOptions { speed, target: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTiming {
    pub topic: String,
    pub offset: u64,
    pub scheduled_ns: i64,
    pub actual_ns: i64,
}

impl RecordTiming {
    pub fn error_ns(&self) -> i64 {
        self.actual_ns - self.scheduled_ns
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    pub experiment_id: String,
    pub speed: f64,
    pub records: usize,
    pub scheduled_span_ns: i64,
    pub actual_span_ns: i64,
    pub max_abs_error_ns: i64,
    pub timings: Vec<RecordTiming>,
}

/// Global replay order: capture time, then topic name, then offset.
pub fn merge_order(archive: &ExperimentArchive) -> Vec<&CaptureRecord> {
    let mut all: Vec<&CaptureRecord> = archive.records.values().flatten().collect();
    all.sort_by(|a, b| {
        (a.ts_capture, &a.topic, a.offset, a.partition).cmp(&(b.ts_capture, &b.topic, b.offset, b.partition))
    });
    all
}

/// Offsets from replay start at which each record is due.
pub fn schedule(capture_ts: &[i64], speed: f64) -> Vec<Duration> {
    let Some(&first) = capture_ts.first() else { return Vec::new() };
    capture_ts
        .iter()
        .map(|&ts| {
            if speed == 0.0 {
                Duration::ZERO
            } else {
                Duration::from_nanos(((ts - first).max(0) as f64 / speed) as u64)
            }
        })
        .collect()
}

fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > Duration::from_millis(2) {
            std::thread::sleep(left - Duration::from_millis(1));
        } else {
            std::thread::yield_now();
        }
    }
}

pub fn replay(broker: &Broker, archive: &ExperimentArchive, opts: &ReplayOptions) -> Result<ReplayReport> {
    if !(opts.speed.is_finite() && opts.speed >= 0.0) {
        return Err(Error::InvalidArgument(format!("replay speed {} must be a nonnegative number", opts.speed)));
    }
    let target = |t: &str| opts.target.get(t).cloned().unwrap_or_else(|| t.to_string());
    for t in &archive.manifest.topics {
        broker.topic(&target(t))?;
    }
    let order = merge_order(archive);
    let due = schedule(&order.iter().map(|r| r.ts_capture).collect::<Vec<_>>(), opts.speed);
    let id = archive.manifest.experiment_id.clone();
    let mut cursor = RoundRobin::default();
    let mut timings = Vec::with_capacity(order.len());
    let start = Instant::now();
    for (rec, due) in order.iter().zip(&due) {
        sleep_until(start + *due);
        let mut msg = rec.to_message();
        msg.topic = target(&rec.topic);
        msg.ts_pub = now_ns();
        msg.headers.insert(REPLAY_OF.into(), id.clone());
        broker.append(&msg, &mut cursor)?;
        timings.push(RecordTiming {
            topic: rec.topic.clone(),
            offset: rec.offset,
            scheduled_ns: due.as_nanos() as i64,
            actual_ns: start.elapsed().as_nanos() as i64,
        });
    }
    log::info!("replayed {} records of {id} at speed {}", timings.len(), opts.speed);
    Ok(ReplayReport {
        experiment_id: id,
        speed: opts.speed,
        records: timings.len(),
        scheduled_span_ns: due.last().map_or(0, |d| d.as_nanos() as i64),
        actual_span_ns: timings.last().map_or(0, |t| t.actual_ns),
        max_abs_error_ns: timings.iter().map(|t| t.error_ns().abs()).max().unwrap_or(0),
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: i64 = 1_000_000;

    #[test]
    fn double_speed_halves_gaps() {
        let s = schedule(&[5 * MS, 105 * MS, 255 * MS], 2.0);
        assert_eq!(s, vec![Duration::ZERO, Duration::from_millis(50), Duration::from_millis(125)]);
    }

    #[test]
    fn speed_zero_means_back_to_back() {
        assert_eq!(schedule(&[0, 10 * MS, 20 * MS], 0.0), vec![Duration::ZERO; 3]);
        assert!(schedule(&[], 1.0).is_empty());
    }
}
