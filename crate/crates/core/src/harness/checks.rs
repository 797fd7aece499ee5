//! Pass/fail thresholds applied to benchmark reports and demo transcripts.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::bench::{nondecreasing_within, speedups, spread, BenchReport};
use super::steering::{in_band, Transcript};

/// Allowed dip between neighbouring chunk sizes.
pub const CHUNK_NOISE_BAND: f64 = 0.10;
/// Required gain of the largest chunk size over the smallest.
pub const MIN_CHUNK_GAIN: f64 = 1.2;
/// Allowed spread across chunk sizes when no payload was chunked.
pub const MAX_FLAT_SPREAD: f64 = 0.15;
/// Required speedups over one worker, by worker count.
pub const MIN_SPEEDUP: [(usize, f64); 2] = [(2, 1.7), (4, 2.8)];
pub const MAX_RECOVERY: Duration = Duration::from_secs(3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check { name: name.into(), passed, detail }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn medians(reports: &[BenchReport]) -> Vec<f64> {
    reports.iter().map(|r| r.median_mb_s).collect()
}

/// Chunk-size reports in increasing chunk order. Unchunked payloads must be flat;
/// chunked payloads must grow with chunk size.
pub fn chunk_shape(reports: &[BenchReport]) -> Vec<Check> {
    let m = medians(reports);
    let shown = m.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(" / ");
    if reports.iter().all(|r| r.params.parts == Some(1)) {
        let s = spread(&m);
        return vec![Check::new("unchunked payload flat across chunk sizes", s < MAX_FLAT_SPREAD, format!("medians {shown} MB/s, spread {:.1}%", s * 100.0))];
    }
    let (first, last) = (m.first().copied().unwrap_or(0.0), m.last().copied().unwrap_or(0.0));
    let gain = if first > 0.0 { last / first } else { 0.0 };
    vec![
        Check::new(
            "median throughput nondecreasing in chunk size",
            nondecreasing_within(&m, CHUNK_NOISE_BAND),
            format!("medians {shown} MB/s, {:.0}% noise band", CHUNK_NOISE_BAND * 100.0),
        ),
        Check::new("largest chunk beats smallest", gain >= MIN_CHUNK_GAIN, format!("{gain:.2}x (need {MIN_CHUNK_GAIN}x)")),
    ]
}

/// Scaling reports in increasing worker order, the first being the baseline.
pub fn scaling(reports: &[BenchReport]) -> Vec<Check> {
    let ups = speedups(reports);
    let mut checks = Vec::new();
    for (workers, need) in MIN_SPEEDUP {
        if let Some(i) = reports.iter().position(|r| r.params.workers == Some(workers)) {
            checks.push(Check::new(&format!("speedup at {workers} workers"), ups[i] >= need, format!("{:.2}x (need {need}x)", ups[i])));
        }
    }
    for r in reports {
        let c = r.conservation.as_ref();
        checks.push(Check::new(
            &format!("exactly-once with {} workers", r.params.workers.unwrap_or(0)),
            c.is_some_and(|c| c.holds()),
            c.map_or("no conservation data".into(), |c| format!("produced {} consumed {} duplicates {} missing {}", c.produced, c.consumed, c.duplicates, c.missing)),
        ));
    }
    checks
}

pub fn rate_floor(report: &BenchReport, min_mb_s: f64) -> Check {
    Check::new(
        &format!("{} B messages sustain {min_mb_s} MB/s", report.params.payload_size),
        report.throughput_mb_s >= min_mb_s,
        format!("{:.1} MB/s over {:.1} s ({} messages)", report.throughput_mb_s, report.elapsed_secs, report.messages),
    )
}

/// A run with a step disturbance: corrected, and back in band quickly.
pub fn steering_disturbed(t: &Transcript) -> Vec<Check> {
    let corrections = t.corrections();
    let excursions = t.excursions();
    let worst = excursions.iter().map(|x| x.recovery_secs().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let after = t.value_at(Duration::from_secs(8));
    vec![
        Check::new("disturbance produces a correction", !corrections.is_empty(), format!("{} corrections", corrections.len())),
        Check::new(
            "rolling mean re-enters band",
            !excursions.is_empty() && t.settles_within(MAX_RECOVERY),
            format!("{} excursions, slowest recovery {worst:.2} s (limit {} s)", excursions.len(), MAX_RECOVERY.as_secs()),
        ),
        Check::new("value in band at t=8 s", after.is_some_and(in_band), format!("{after:?}")),
    ]
}

pub fn steering_quiet(t: &Transcript) -> Check {
    let n = t.corrections().len();
    Check::new("no disturbance, no corrections", n == 0 && !t.entries.is_empty(), format!("{n} corrections over {} samples", t.entries.len()))
}
