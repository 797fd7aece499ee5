//! Throughput benchmarks: chunk size, consumer-group scaling, sustained streaming.
//!
//! Throughput is reported in MB/s with MB = 10^6 bytes. Chunk and payload sizes
//! are plain byte counts.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::synthetic::{SourceKind, SyntheticSource, SEQ_HEADER};
use crate::agent::{Agent, AgentConfig, SubscribeOptions};
use crate::{Error, Result};

pub const MB: f64 = 1e6;
pub const UNITS: &str = "MB/s (MB = 10^6 bytes); sizes in bytes (KiB = 1024, MiB = 1048576)";
const DELIVERY_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub payload_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    /// Wire messages each payload travelled as.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partitions: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub work_factor_ms_per_mb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_secs: Option<f64>,
}

/// Messages produced against messages handled, checked on every scaling run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub produced: u64,
    pub consumed: u64,
    pub duplicates: u64,
    pub missing: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.duplicates == 0 && self.missing == 0 && self.produced == self.consumed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scenario: String,
    pub units: String,
    pub params: BenchParams,
    /// The headline figure: median for repeated runs, aggregate for scaling runs.
    pub throughput_mb_s: f64,
    pub median_mb_s: f64,
    pub min_mb_s: f64,
    pub max_mb_s: f64,
    pub messages: u64,
    pub bytes: u64,
    pub elapsed_secs: f64,
    pub samples: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conservation: Option<Conservation>,
    pub flags: Vec<String>,
    pub notes: Vec<String>,
}

impl BenchReport {
    fn new(scenario: &str, params: BenchParams, samples: Vec<f64>) -> Self {
        let (median, min, max) = summarize(&samples);
        BenchReport {
            scenario: scenario.into(),
            units: UNITS.into(),
            params,
            throughput_mb_s: median,
            median_mb_s: median,
            min_mb_s: min,
            max_mb_s: max,
            messages: 0,
            bytes: 0,
            elapsed_secs: 0.0,
            samples,
            conservation: None,
            flags: Vec::new(),
            notes: Vec::new(),
        }
    }

    #[cfg(test)]
    pub(crate) fn new_for_test(params: BenchParams, throughput: f64) -> Self {
        let mut r = BenchReport::new("test", params, vec![throughput]);
        r.throughput_mb_s = throughput;
        r
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// One line for a plain-text table.
    pub fn row(&self) -> String {
        let p = &self.params;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        format!(
            "{:<8} payload={:<10} chunk={:<9} workers={:<3} {:>9.2} MB/s (min {:.2}, max {:.2}) msgs={}{}",
            self.scenario,
            p.payload_size,
            opt(p.chunk_size.map(|c| c.to_string())),
            opt(p.workers.map(|w| w.to_string())),
            self.throughput_mb_s,
            self.min_mb_s,
            self.max_mb_s,
            self.messages,
            if self.flags.is_empty() { String::new() } else { format!(" [{}]", self.flags.join(",")) }
        )
    }
}

/// Median, minimum and maximum; zeros for an empty set.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    (median, s[0], s[n - 1])
}

pub fn mb_per_s(bytes: u64, elapsed: Duration) -> f64 {
    let secs = elapsed.as_secs_f64();
    if secs == 0.0 {
        return 0.0;
    }
    bytes as f64 / MB / secs
}

fn scratch_topic(agent: &Agent, kind: &str, partitions: u32) -> Result<String> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let topic = format!("mdml.bench.{kind}-{}", &id[..12]);
    agent.create_topic(&topic, Some(partitions))?;
    Ok(topic)
}

fn no_delivery(what: &str) -> Error {
    Error::Timeout(format!("{what} was not delivered within {DELIVERY_TIMEOUT:?}"))
}

/// Streams `repetitions` payloads end to end (publish, consume, reassemble) per
/// chunk size and reports the median throughput of each.
///
/// Repetitions are interleaved across chunk sizes so slow drift in the host
/// affects every size alike. One unmeasured warm-up pass runs first. Payloads
/// that fit one frame are sent whole whatever the chunk size.
pub fn bench_chunks(
    config: &AgentConfig,
    payload_size: usize,
    chunk_sizes: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchReport>> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    if chunk_sizes.is_empty() || chunk_sizes.contains(&0) {
        return Err(Error::InvalidArgument("chunk sizes must be non-empty and positive".into()));
    }
    if payload_size == 0 {
        return Err(Error::InvalidArgument("payload size must be positive".into()));
    }
    let mut agent = Agent::connect(config.clone())?;
    let topic = scratch_topic(&agent, "chunks", 1)?;
    let mut consumer = agent.subscribe(&[&topic], SubscribeOptions::default())?;
    let source = SyntheticSource::new(SourceKind::Plif, seed, 0.0).with_size(payload_size);
    let payload = source.payload(0);
    let mut samples = vec![Vec::with_capacity(repetitions); chunk_sizes.len()];
    let mut effective = vec![0; chunk_sizes.len()];
    let mut parts = vec![0; chunk_sizes.len()];
    for rep in 0..=repetitions {
        for k in 0..chunk_sizes.len() {
            // Rotating the starting size keeps position effects out of the comparison.
            let i = (k + rep) % chunk_sizes.len();
            effective[i] = agent.set_chunk_size(chunk_sizes[i]);
            let msg = crate::wire::DataMessage::new(topic.as_str(), payload.clone());
            let t0 = Instant::now();
            parts[i] = agent.produce(msg)?.parts;
            let got = consumer.recv(Some(DELIVERY_TIMEOUT))?.ok_or_else(|| no_delivery("benchmark payload"))?;
            let elapsed = t0.elapsed();
            if got.message.payload.len() != payload_size {
                return Err(Error::Protocol(format!(
                    "benchmark payload came back with {} bytes instead of {payload_size}",
                    got.message.payload.len()
                )));
            }
            if rep > 0 {
                samples[i].push(mb_per_s(payload_size as u64, elapsed));
            }
        }
    }
    Ok(chunk_sizes
        .iter()
        .zip(samples)
        .zip(effective)
        .zip(parts)
        .map(|(((&cs, s), eff), n)| {
            let params = BenchParams {
                payload_size,
                chunk_size: Some(eff),
                parts: Some(n),
                repetitions: Some(repetitions),
                ..Default::default()
            };
            let mut r = BenchReport::new("chunks", params, s);
            r.messages = repetitions as u64;
            r.bytes = (payload_size * repetitions) as u64;
            r.elapsed_secs = r.samples.iter().map(|mbps| payload_size as f64 / MB / mbps).sum();
            if eff != cs {
                r.notes.push(format!("requested chunk size {cs} clamped to the service limit {eff}"));
            }
            if n == 1 {
                r.notes.push("payload fits one frame; sent unchunked".into());
            }
            r
        })
        .collect())
}

/// True when medians never drop by more than `noise` going to the next larger chunk size.
pub fn nondecreasing_within(medians: &[f64], noise: f64) -> bool {
    medians.windows(2).all(|w| w[1] >= w[0] * (1.0 - noise))
}

/// (max − min) / max over the medians.
pub fn spread(medians: &[f64]) -> f64 {
    let max = medians.iter().copied().fold(f64::MIN, f64::max);
    let min = medians.iter().copied().fold(f64::MAX, f64::min);
    if max <= 0.0 {
        return 0.0;
    }
    (max - min) / max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOptions {
    pub workers: usize,
    pub payload_size: usize,
    /// Emulated handler cost in milliseconds per 10^6 payload bytes.
    pub work_factor_ms_per_mb: f64,
    pub duration: Duration,
    pub partitions: u32,
    pub seed: u64,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        ScaleOptions {
            workers: 1,
            payload_size: 1_000_000,
            work_factor_ms_per_mb: 80.0,
            duration: Duration::from_secs(10),
            partitions: 4,
            seed: 7,
        }
    }
}

#[derive(Default)]
struct ScaleState {
    handled: AtomicU64,
    window_bytes: AtomicU64,
    measuring: AtomicBool,
    stop: AtomicBool,
    seqs: Mutex<Vec<u64>>,
}

fn scale_worker(
    config: AgentConfig,
    topic: String,
    group: String,
    work_ms_per_mb: f64,
    state: Arc<ScaleState>,
    ready: Arc<Barrier>,
) -> Result<u64> {
    let joined = Agent::connect(config).and_then(|agent| {
        let consumer = agent.subscribe(&[&topic], SubscribeOptions::earliest().group(group))?;
        Ok((agent, consumer))
    });
    ready.wait();
    let (_agent, mut consumer) = joined?;
    let mut mine = 0u64;
    while !state.stop.load(Ordering::SeqCst) {
        let Some(d) = consumer.recv(Some(Duration::from_millis(50)))? else { continue };
        let size = d.message.payload.len();
        std::thread::sleep(Duration::from_secs_f64(work_ms_per_mb * size as f64 / MB / 1e3));
        let seq = d.message.header(SEQ_HEADER).and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
        state.seqs.lock().unwrap().push(seq);
        if state.measuring.load(Ordering::SeqCst) {
            state.window_bytes.fetch_add(size as u64, Ordering::SeqCst);
            mine += size as u64;
        }
        consumer.commit(&d)?;
        state.handled.fetch_add(1, Ordering::SeqCst);
    }
    Ok(mine)
}

/// Runs `workers` consumers in one group against a saturated topic.
///
/// Each handler sleeps for the configured work per MB, standing in for an
/// accelerator-bound classifier so several workers overlap even on one core.
/// The producer keeps a bounded backlog ahead of the group. After the window
/// closes, the backlog is drained and every sequence number is checked to have
/// been handled exactly once.
pub fn bench_scale(config: &AgentConfig, opts: &ScaleOptions) -> Result<BenchReport> {
    if opts.workers == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    if opts.payload_size == 0 || opts.partitions == 0 {
        return Err(Error::InvalidArgument("payload size and partitions must be positive".into()));
    }
    if !(opts.work_factor_ms_per_mb >= 0.0 && opts.work_factor_ms_per_mb.is_finite()) {
        return Err(Error::InvalidArgument("work factor must be a finite, non-negative number".into()));
    }
    let producer = Agent::connect(config.clone())?;
    let topic = scratch_topic(&producer, "scale", opts.partitions)?;
    let group = format!("bench.{}", topic.rsplit('.').next().unwrap_or("scale"));
    let state = Arc::new(ScaleState::default());
    let ready = Arc::new(Barrier::new(opts.workers + 1));
    let handles: Vec<_> = (0..opts.workers)
        .map(|i| {
            let (cfg, t, g, s, r) = (config.clone(), topic.clone(), group.clone(), state.clone(), ready.clone());
            let work = opts.work_factor_ms_per_mb;
            std::thread::Builder::new()
                .name(format!("bench-worker-{i}"))
                .spawn(move || scale_worker(cfg, t, g, work, s, r))
                .map_err(Error::from)
        })
        .collect::<Result<_>>()?;
    ready.wait();
    // Let the last join's rebalance settle before any data exists.
    std::thread::sleep(Duration::from_millis(300));

    let source = SyntheticSource::new(SourceKind::Sem, opts.seed, 0.0).with_size(opts.payload_size);
    let max_lag = (opts.workers as u64 * 2).max(opts.partitions as u64 * 2) + 4;
    let mut produced = 0u64;
    let start = Instant::now();
    state.measuring.store(true, Ordering::SeqCst);
    let mut produce_err = None;
    while start.elapsed() < opts.duration {
        if produced - state.handled.load(Ordering::SeqCst) >= max_lag {
            std::thread::sleep(Duration::from_millis(1));
            continue;
        }
        if let Err(e) = producer.produce(source.message(&topic, produced)) {
            produce_err = Some(e);
            break;
        }
        produced += 1;
    }
    state.measuring.store(false, Ordering::SeqCst);
    let window = start.elapsed();

    let drain_deadline = Instant::now() + DELIVERY_TIMEOUT;
    while state.handled.load(Ordering::SeqCst) < produced && Instant::now() < drain_deadline {
        if handles.iter().all(|h| h.is_finished()) {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    // Anything still in flight would surface as a duplicate, so give it a moment.
    std::thread::sleep(Duration::from_millis(200));
    state.stop.store(true, Ordering::SeqCst);
    let mut per_worker = Vec::with_capacity(opts.workers);
    for h in handles {
        per_worker.push(h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))?);
    }
    if let Some(e) = produce_err {
        return Err(e);
    }

    let seqs = std::mem::take(&mut *state.seqs.lock().unwrap());
    let unique: BTreeSet<u64> = seqs.iter().copied().collect();
    let conservation = Conservation {
        produced,
        consumed: seqs.len() as u64,
        duplicates: (seqs.len() - unique.len()) as u64,
        missing: (0..produced).filter(|s| !unique.contains(s)).count() as u64,
    };
    let window_bytes = state.window_bytes.load(Ordering::SeqCst);
    let params = BenchParams {
        payload_size: opts.payload_size,
        workers: Some(opts.workers),
        partitions: Some(opts.partitions),
        work_factor_ms_per_mb: Some(opts.work_factor_ms_per_mb),
        duration_secs: Some(opts.duration.as_secs_f64()),
        ..Default::default()
    };
    let mut report = BenchReport::new("scale", params, per_worker.iter().map(|&b| mb_per_s(b, window)).collect());
    report.throughput_mb_s = mb_per_s(window_bytes, window);
    report.messages = produced;
    report.bytes = window_bytes;
    report.elapsed_secs = window.as_secs_f64();

    let idle = per_worker.iter().filter(|&&b| b == 0).count();
    if opts.workers > opts.partitions as usize {
        report.flags.push("idle-workers".into());
        report.notes.push(format!(
            "{} workers share {} partitions; {} received no assignment",
            opts.workers,
            opts.partitions,
            opts.workers - opts.partitions as usize
        ));
    } else if idle > 0 {
        report.notes.push(format!("{idle} workers handled nothing during the window"));
    }
    let busy = opts.workers.min(opts.partitions as usize) as f64;
    let compute_ceiling = if opts.work_factor_ms_per_mb > 0.0 { busy * 1e3 / opts.work_factor_ms_per_mb } else { f64::INFINITY };
    if report.throughput_mb_s < 0.8 * compute_ceiling {
        report.flags.push("transport-bound".into());
        report.notes.push(format!(
            "measured {:.2} MB/s against a handler ceiling of {compute_ceiling:.2} MB/s",
            report.throughput_mb_s
        ));
    }
    if !conservation.holds() {
        report.flags.push("conservation-violated".into());
    }
    report.conservation = Some(conservation);
    Ok(report)
}

/// Ratio of each report's throughput to the first one's.
pub fn speedups(reports: &[BenchReport]) -> Vec<f64> {
    let base = reports.first().map_or(0.0, |r| r.throughput_mb_s);
    reports.iter().map(|r| if base > 0.0 { r.throughput_mb_s / base } else { 0.0 }).collect()
}

/// Publishes `payload_size` messages as fast as the path allows for `duration`
/// and measures what a consumer receives fully reassembled.
///
/// Samples are per-second received throughput. The headline figure is total
/// bytes received over the time from the first publish to the last delivery.
pub fn bench_stream(config: &AgentConfig, payload_size: usize, duration: Duration, seed: u64) -> Result<BenchReport> {
    if payload_size == 0 || duration.is_zero() {
        return Err(Error::InvalidArgument("payload size and duration must be positive".into()));
    }
    let producer = Agent::connect(config.clone())?;
    let topic = scratch_topic(&producer, "stream", 1)?;
    let reader = Agent::connect(config.clone())?;
    let mut consumer = reader.subscribe(&[&topic], SubscribeOptions::default())?;
    let source = SyntheticSource::new(SourceKind::Plif, seed, 0.0).with_size(payload_size);
    let payload = source.payload(0);
    let done = Arc::new(AtomicBool::new(false));
    let sent = Arc::new(AtomicU64::new(0));
    let start = Instant::now();
    let pub_thread = {
        let (done, sent, topic) = (done.clone(), sent.clone(), topic.clone());
        std::thread::Builder::new().name("bench-stream-producer".into()).spawn(move || -> Result<()> {
            while start.elapsed() < duration && !done.load(Ordering::SeqCst) {
                producer.produce(crate::wire::DataMessage::new(topic.as_str(), payload.clone()))?;
                sent.fetch_add(1, Ordering::SeqCst);
            }
            Ok(())
        })?
    };
    let mut received = 0u64;
    let mut per_second = vec![0u64; duration.as_secs().max(1) as usize + 1];
    let mut last = start;
    let result = loop {
        let finished = pub_thread.is_finished();
        if finished && received >= sent.load(Ordering::SeqCst) {
            break Ok(());
        }
        match consumer.recv(Some(Duration::from_millis(200))) {
            Ok(Some(d)) => {
                if d.message.payload.len() != payload_size {
                    break Err(Error::Protocol("streamed payload changed size in transit".into()));
                }
                received += 1;
                last = Instant::now();
                let slot = (last - start).as_secs() as usize;
                if let Some(b) = per_second.get_mut(slot) {
                    *b += payload_size as u64;
                }
            }
            Ok(None) if last.elapsed() > DELIVERY_TIMEOUT => break Err(no_delivery("streamed payload")),
            Ok(None) => {}
            Err(e) => break Err(e),
        }
    };
    done.store(true, Ordering::SeqCst);
    pub_thread.join().unwrap_or_else(|p| std::panic::resume_unwind(p))?;
    result?;
    let whole_secs = duration.as_secs() as usize;
    let samples: Vec<f64> = per_second.iter().take(whole_secs.max(1)).map(|&b| b as f64 / MB).collect();
    let params = BenchParams { payload_size, duration_secs: Some(duration.as_secs_f64()), ..Default::default() };
    let mut report = BenchReport::new("stream", params, samples);
    let elapsed = last - start;
    report.bytes = received * payload_size as u64;
    report.messages = received;
    report.elapsed_secs = elapsed.as_secs_f64();
    report.throughput_mb_s = mb_per_s(report.bytes, elapsed);
    report.notes.push(format!("{:.2} messages/s", received as f64 / elapsed.as_secs_f64().max(1e-9)));
    Ok(report)
}
