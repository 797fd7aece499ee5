//! Consume, handle, optionally publish a result, then commit.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::consumer::{Consumer, Delivery};
use super::Agent;
use crate::wire::message::DLQ_SUFFIX;
use crate::wire::DataMessage;
use crate::{Error, Result};

pub const DLQ_ERROR: &str = "dlq.error";
pub const DLQ_ATTEMPTS: &str = "dlq.attempts";
pub const DLQ_PARTITION: &str = "dlq.partition";
pub const DLQ_OFFSET: &str = "dlq.offset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first failure before a message is dead-lettered.
    pub retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopStats {
    pub handled: u64,
    pub results: u64,
    pub dead_lettered: u64,
    pub failed_attempts: u64,
    pub delivery_errors: u64,
}

pub fn dead_letter_topic(topic: &str) -> String {
    format!("{topic}{DLQ_SUFFIX}")
}

fn attempt<F>(handler: &mut F, msg: &DataMessage) -> std::result::Result<Option<DataMessage>, String>
where
    F: FnMut(&DataMessage) -> std::result::Result<Option<DataMessage>, String>,
{
    match catch_unwind(AssertUnwindSafe(|| handler(msg))) {
        Ok(r) => r,
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "handler panicked".into())),
    }
}

/// Runs `handler` over every message until the subscription ends or `stop` is set.
///
/// A result returned by the handler is published to `result_topic` when one is
/// given. Offsets are committed only after the handler (and result publish) finish,
/// so delivery is at-least-once. A message whose handler fails `1 + retries` times
/// is published to `<topic>.dlq` with the last error in its headers, then committed.
pub fn run_analysis_loop<F>(
    agent: &Agent,
    consumer: &mut Consumer,
    mut handler: F,
    result_topic: Option<&str>,
    policy: RetryPolicy,
    stop: &AtomicBool,
) -> Result<LoopStats>
where
    F: FnMut(&DataMessage) -> std::result::Result<Option<DataMessage>, String>,
{
    let mut stats = LoopStats::default();
    let poll = std::time::Duration::from_millis(200);
    while !stop.load(Ordering::Relaxed) {
        let d: Delivery = match consumer.recv(Some(poll)) {
            Ok(Some(d)) => d,
            Ok(None) if consumer.ended().is_some() => break,
            Ok(None) => continue,
            Err(e @ Error::NotConnected(_)) => return Err(e),
            Err(e) => {
                log::warn!("skipping undeliverable message: {e}");
                stats.delivery_errors += 1;
                continue;
            }
        };
        let mut failures = 0;
        loop {
            match attempt(&mut handler, &d.message) {
                Ok(result) => {
                    if let (Some(mut r), Some(t)) = (result, result_topic) {
                        r.topic = t.to_string();
                        agent.produce(r)?;
                        stats.results += 1;
                    }
                    stats.handled += 1;
                    break;
                }
                Err(why) => {
                    failures += 1;
                    stats.failed_attempts += 1;
                    log::warn!("handler failed on {}/{}@{} (attempt {failures}): {why}", d.message.topic, d.partition, d.offset);
                    if failures > policy.retries {
                        let dlq = dead_letter_topic(&d.message.topic);
                        agent.ensure_topic(&dlq, None)?;
                        let mut dead = d.message.clone();
                        dead.topic = dlq;
                        dead.headers.insert(DLQ_ERROR.into(), why);
                        dead.headers.insert(DLQ_ATTEMPTS.into(), failures.to_string());
                        dead.headers.insert(DLQ_PARTITION.into(), d.partition.to_string());
                        dead.headers.insert(DLQ_OFFSET.into(), d.offset.to_string());
                        agent.produce(dead)?;
                        stats.dead_lettered += 1;
                        break;
                    }
                }
            }
        }
        if d.generation.is_some() {
            if let Err(e) = consumer.commit(&d) {
                log::warn!("commit after {}/{}@{} failed: {e}", d.message.topic, d.partition, d.offset);
            }
        }
    }
    Ok(stats)
}
