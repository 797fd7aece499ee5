//! Subscriptions seen as a stream of whole, verified messages.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::connection::{Connection, SubEvent};
use crate::broker::StartPosition;
use crate::connectors::{ClaimTicket, ObjectStore};
use crate::service::protocol::{Request, SubscribeMode, SubscribeSpec, DEFAULT_WINDOW};
use crate::wire::chunk::DEFAULT_REASSEMBLY_TIMEOUT;
use crate::wire::{ChunkInfo, DataMessage, Reassembler};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SubscribeOptions {
    pub group: Option<String>,
    pub start: StartPosition,
    /// Stop after this many whole messages.
    pub max_count: Option<u64>,
    /// Stop after this long without traffic.
    pub idle_timeout: Option<Duration>,
    /// Flow-control window in bytes.
    pub window: Option<u64>,
    /// Hand out chunk parts and claim tickets as they are on the wire.
    pub raw: bool,
    pub reassembly_timeout: Duration,
}

impl Default for SubscribeOptions {
    fn default() -> Self {
        SubscribeOptions {
            group: None,
            start: StartPosition::Latest,
            max_count: None,
            idle_timeout: None,
            window: None,
            raw: false,
            reassembly_timeout: DEFAULT_REASSEMBLY_TIMEOUT,
        }
    }
}

impl SubscribeOptions {
    pub fn earliest() -> Self {
        SubscribeOptions { start: StartPosition::Earliest, ..Default::default() }
    }

    pub fn group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn max_count(mut self, n: u64) -> Self {
        self.max_count = Some(n);
        self
    }

    pub fn idle_timeout(mut self, d: Duration) -> Self {
        self.idle_timeout = Some(d);
        self
    }
}

/// A whole message and where it sits in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub message: DataMessage,
    pub partition: u32,
    /// Offset of the first wire message this delivery was built from.
    pub first_offset: u64,
    /// Offset of the last wire message this delivery was built from.
    pub offset: u64,
    pub generation: Option<u64>,
}

pub struct Consumer {
    conn: Arc<Connection>,
    store: Option<Arc<dyn ObjectStore>>,
    sub: u64,
    rx: Receiver<SubEvent>,
    opts: SubscribeOptions,
    reassembler: Reassembler,
    /// Chunk sets in progress: id → (partition, first offset). Commits never pass them.
    open_sets: HashMap<String, (u32, u64)>,
    generation: Option<u64>,
    newest_generation: Arc<AtomicU64>,
    delivered: u64,
    ended: Option<String>,
    owed_credit: u64,
    window: u64,
}

impl Consumer {
    pub(crate) fn subscribe(
        conn: Arc<Connection>,
        store: Option<Arc<dyn ObjectStore>>,
        topics: Vec<String>,
        opts: SubscribeOptions,
    ) -> Result<Consumer> {
        let (sub, rx, newest_generation) = conn.register_subscription();
        let window = opts.window.unwrap_or(DEFAULT_WINDOW);
        let mode = match opts.idle_timeout {
            Some(d) => SubscribeMode::IdleTimeout { ms: d.as_millis() as u64 },
            None => SubscribeMode::Indefinite,
        };
        let spec = SubscribeSpec {
            topics,
            group: opts.group.clone(),
            start: opts.start,
            mode,
            window: Some(window),
            sub: Some(sub),
        };
        let reply = match conn.request(&Request::Subscribe(spec)) {
            Ok(r) => r,
            Err(e) => {
                conn.drop_subscription(sub);
                return Err(e);
            }
        };
        let generation = reply["generation"].as_u64();
        newest_generation.fetch_max(generation.unwrap_or_default(), Ordering::SeqCst);
        Ok(Consumer {
            conn,
            store,
            sub,
            rx,
            reassembler: Reassembler::new(opts.reassembly_timeout),
            opts,
            open_sets: HashMap::new(),
            generation,
            newest_generation,
            delivered: 0,
            ended: None,
            owed_credit: 0,
            window,
        })
    }

    pub fn sub_id(&self) -> u64 {
        self.sub
    }

    pub fn generation(&self) -> Option<u64> {
        self.generation
    }

    /// Why the subscription ended, once it has.
    pub fn ended(&self) -> Option<&str> {
        self.ended.as_deref()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    fn owe(&mut self, bytes: usize) {
        self.owed_credit += bytes as u64;
        if self.owed_credit >= (self.window / 4).max(1) {
            let grant = Request::Credit { sub: self.sub, bytes: self.owed_credit };
            if self.conn.notify(&grant).is_ok() {
                self.owed_credit = 0;
            }
        }
    }

    fn resolve(&self, mut msg: DataMessage) -> Result<DataMessage> {
        if self.opts.raw {
            return Ok(msg);
        }
        let Some(ticket) = ClaimTicket::from_message(&msg)? else { return Ok(msg) };
        let store = self.store.as_ref().ok_or_else(|| Error::StoreUnavailable("no object store configured".into()))?;
        msg.payload = store.get(&ticket)?;
        ClaimTicket::strip(&mut msg);
        Ok(msg)
    }

    fn finish(&mut self, reason: &str) {
        if self.ended.is_none() {
            self.ended = Some(reason.to_string());
            let _ = self.conn.notify(&Request::Unsubscribe { sub: self.sub });
            self.conn.drop_subscription(self.sub);
        }
    }

    /// Next whole message. `Ok(None)` means the wait timed out or the subscription
    /// ended (see [`Consumer::ended`]). Errors concern a single message; the stream
    /// continues after them unless the connection is gone.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Delivery>> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if self.ended.is_some() {
                return Ok(None);
            }
            if self.opts.max_count.is_some_and(|n| self.delivered >= n) {
                self.finish("max_count");
                return Ok(None);
            }
            let mut expired = self.reassembler.expire(Instant::now());
            if !expired.is_empty() {
                self.forget_expired();
                for extra in expired.drain(1..) {
                    log::warn!("{extra}");
                }
                return Err(expired.remove(0).into());
            }
            let wait = match deadline {
                Some(d) => d.saturating_duration_since(Instant::now()),
                None => Duration::from_millis(500),
            };
            let ev = match self.rx.recv_timeout(wait) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) if deadline.is_some() => return Ok(None),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => SubEvent::Disconnected,
            };
            match ev {
                SubEvent::Data { message, routing, frame_len } => {
                    self.owe(frame_len);
                    if routing.generation.is_some_and(|g| g < self.newest_generation.load(Ordering::SeqCst)) {
                        // Sent before a rebalance; the service re-reads from committed offsets.
                        continue;
                    }
                    if routing.generation.is_some() {
                        self.generation = routing.generation;
                    }
                    let partition = routing.partition.unwrap_or_default();
                    let offset = routing.offset.unwrap_or_default();
                    let mut first_offset = offset;
                    let whole = if self.opts.raw {
                        message
                    } else {
                        match ChunkInfo::from_message(&message)? {
                            None => message,
                            Some(info) => {
                                self.open_sets.entry(info.id.clone()).or_insert((partition, offset));
                                match self.reassembler.push(message) {
                                    Ok(None) => continue,
                                    Ok(Some(m)) => {
                                        first_offset = self.open_sets.remove(&info.id).map_or(offset, |(_, o)| o);
                                        m
                                    }
                                    Err(e) => {
                                        self.open_sets.remove(&info.id);
                                        return Err(e.into());
                                    }
                                }
                            }
                        }
                    };
                    self.delivered += 1;
                    let message = self.resolve(whole)?;
                    return Ok(Some(Delivery { message, partition, first_offset, offset, generation: routing.generation }));
                }
                SubEvent::Rebalance { generation } => {
                    self.generation = Some(generation);
                    self.reassembler.clear();
                    self.open_sets.clear();
                }
                SubEvent::End { reason } => {
                    self.ended = Some(reason);
                    self.conn.drop_subscription(self.sub);
                    return Ok(None);
                }
                SubEvent::Disconnected => {
                    self.ended = Some("disconnected".into());
                    return Err(Error::NotConnected("connection to the service was lost".into()));
                }
            }
        }
    }

    fn forget_expired(&mut self) {
        let live: std::collections::HashSet<String> = self.reassembler.pending_ids().into_iter().collect();
        self.open_sets.retain(|id, _| live.contains(id));
    }

    /// Highest offset that can be committed for `partition` after handling everything
    /// up to `d` without skipping an unfinished chunk set.
    pub fn safe_commit_offset(&self, d: &Delivery) -> u64 {
        self.open_sets
            .values()
            .filter(|(p, _)| *p == d.partition)
            .map(|(_, first)| *first)
            .fold(d.offset + 1, u64::min)
    }

    /// Commits the group position past `d`. Returns the committed offset.
    pub fn commit(&self, d: &Delivery) -> Result<u64> {
        if self.opts.group.is_none() {
            return Err(Error::InvalidArgument("commit needs a consumer group".into()));
        }
        let generation = d.generation.or(self.generation).unwrap_or_default();
        let reply = self.conn.request(&Request::Commit {
            sub: self.sub,
            topic: d.message.topic.clone(),
            partition: d.partition,
            offset: self.safe_commit_offset(d),
            generation,
        })?;
        Ok(reply["committed"].as_u64().unwrap_or_default())
    }

    pub fn close(&mut self) {
        self.finish("closed");
    }
}

impl Iterator for Consumer {
    type Item = Result<Delivery>;

    /// Blocks for the next message; ends with the subscription.
    fn next(&mut self) -> Option<Result<Delivery>> {
        match self.recv(None) {
            Ok(Some(d)) => Some(Ok(d)),
            Ok(None) => None,
            Err(e) => Some(Err(e)),
        }
    }
}

impl Drop for Consumer {
    fn drop(&mut self) {
        self.finish("closed");
    }
}
