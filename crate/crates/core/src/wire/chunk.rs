//! Splitting oversized payloads into checksummed parts and putting them back together.
//!
//! Chunk metadata rides in ordinary message headers so that any consumer can inspect
//! the parts. A reassembled message carries the original headers with the chunk keys
//! removed.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::checksum::{crc32, Crc32};
use super::message::DataMessage;

pub const CHUNK_ID: &str = "chunk.id";
pub const CHUNK_IDX: &str = "chunk.idx";
pub const CHUNK_CNT: &str = "chunk.cnt";
pub const CHUNK_TOTAL: &str = "chunk.total";
pub const CHUNK_CRC: &str = "chunk.crc32";

pub const DEFAULT_CHUNK_SIZE: usize = 1_048_576;
pub const DEFAULT_REASSEMBLY_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("chunk set {chunk_id}: checksum {actual} does not match {expected}")]
    ChecksumMismatch { chunk_id: String, expected: String, actual: String },
    #[error("chunk set {chunk_id}: part {index} received twice with different bytes")]
    ChunkConflict { chunk_id: String, index: usize },
    #[error("chunk set {chunk_id}: {received}/{count} parts before timeout")]
    IncompleteTimeout { chunk_id: String, received: usize, count: usize },
    #[error("malformed chunk headers: {0}")]
    Malformed(String),
}

/// Metadata parsed from a part's headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkInfo {
    pub id: String,
    pub index: usize,
    pub count: usize,
    pub total: usize,
    pub crc32: String,
}

impl ChunkInfo {
    /// `Ok(None)` for unchunked messages.
    pub fn from_message(msg: &DataMessage) -> Result<Option<ChunkInfo>, ChunkError> {
        let Some(id) = msg.header(CHUNK_ID) else { return Ok(None) };
        let num = |k: &str| -> Result<usize, ChunkError> {
            msg.header(k)
                .ok_or_else(|| ChunkError::Malformed(format!("missing {k}")))?
                .parse()
                .map_err(|_| ChunkError::Malformed(format!("{k} is not an integer")))
        };
        let info = ChunkInfo {
            id: id.to_string(),
            index: num(CHUNK_IDX)?,
            count: num(CHUNK_CNT)?,
            total: num(CHUNK_TOTAL)?,
            crc32: msg.header(CHUNK_CRC).ok_or_else(|| ChunkError::Malformed(format!("missing {CHUNK_CRC}")))?.to_string(),
        };
        if info.count == 0 || info.index >= info.count {
            return Err(ChunkError::Malformed(format!("index {} of {}", info.index, info.count)));
        }
        Ok(Some(info))
    }
}

pub fn chunk_count(total: usize, chunk_size: usize) -> usize {
    total.div_ceil(chunk_size)
}

/// Splits `msg` into parts of at most `chunk_size` bytes.
///
/// Payloads that already fit are returned untouched, without chunk headers.
pub fn chunk_message(msg: DataMessage, chunk_size: usize) -> Vec<DataMessage> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    if msg.payload.len() <= chunk_size {
        return vec![msg];
    }
    let id = uuid::Uuid::new_v4().to_string();
    let total = msg.payload.len();
    let count = chunk_count(total, chunk_size);
    let crc = crc32(&msg.payload);
    msg.payload
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, slice)| {
            let mut headers = msg.headers.clone();
            headers.insert(CHUNK_ID.into(), id.clone());
            headers.insert(CHUNK_IDX.into(), index.to_string());
            headers.insert(CHUNK_CNT.into(), count.to_string());
            headers.insert(CHUNK_TOTAL.into(), total.to_string());
            headers.insert(CHUNK_CRC.into(), crc.clone());
            DataMessage { topic: msg.topic.clone(), key: msg.key.clone(), ts_pub: msg.ts_pub, headers, payload: slice.to_vec() }
        })
        .collect()
}

pub fn strip_chunk_headers(msg: &mut DataMessage) {
    for k in [CHUNK_ID, CHUNK_IDX, CHUNK_CNT, CHUNK_TOTAL, CHUNK_CRC] {
        msg.headers.remove(k);
    }
}

struct PendingSet {
    info: ChunkInfo,
    template: DataMessage,
    parts: Vec<Option<Vec<u8>>>,
    received: usize,
    first_seen: Instant,
}

/// Per-consumer reassembly buffer. Not shared across threads.
pub struct Reassembler {
    pending: HashMap<String, PendingSet>,
    timeout: Duration,
}

impl Default for Reassembler {
    fn default() -> Self {
        Reassembler::new(DEFAULT_REASSEMBLY_TIMEOUT)
    }
}

impl Reassembler {
    pub fn new(timeout: Duration) -> Self {
        Reassembler { pending: HashMap::new(), timeout }
    }

    pub fn pending_sets(&self) -> usize {
        self.pending.len()
    }

    pub fn pending_ids(&self) -> Vec<String> {
        self.pending.keys().cloned().collect()
    }

    /// Feeds one message. Returns the complete message when `msg` finishes a set
    /// (or is unchunked), `Ok(None)` while parts are still missing.
    /// Forgets every incomplete set.
    pub fn clear(&mut self) {
        self.pending.clear();
    }

    pub fn push(&mut self, msg: DataMessage) -> Result<Option<DataMessage>, ChunkError> {
        self.push_at(msg, Instant::now())
    }

    pub fn push_at(&mut self, mut msg: DataMessage, now: Instant) -> Result<Option<DataMessage>, ChunkError> {
        let Some(info) = ChunkInfo::from_message(&msg)? else { return Ok(Some(msg)) };
        let payload = std::mem::take(&mut msg.payload);
        let set = self.pending.entry(info.id.clone()).or_insert_with(|| {
            let mut template = msg.clone();
            strip_chunk_headers(&mut template);
            PendingSet { info: info.clone(), template, parts: vec![None; info.count], received: 0, first_seen: now }
        });
        if set.info.count != info.count || set.info.total != info.total || set.info.crc32 != info.crc32 {
            return Err(ChunkError::Malformed(format!("chunk set {} has inconsistent part headers", info.id)));
        }
        match &set.parts[info.index] {
            Some(existing) if *existing == payload => return Ok(None),
            Some(_) => return Err(ChunkError::ChunkConflict { chunk_id: info.id, index: info.index }),
            None => {}
        }
        set.parts[info.index] = Some(payload);
        set.received += 1;
        if set.received < set.info.count {
            return Ok(None);
        }
        let set = self.pending.remove(&info.id).expect("set present");
        let mut out = set.template;
        let mut payload = Vec::with_capacity(set.info.total);
        let mut hasher = Crc32::new();
        for part in set.parts.into_iter().flatten() {
            hasher.update(&part);
            payload.extend_from_slice(&part);
        }
        let actual = hasher.finish_hex();
        if actual != set.info.crc32 || payload.len() != set.info.total {
            return Err(ChunkError::ChecksumMismatch { chunk_id: set.info.id, expected: set.info.crc32, actual });
        }
        out.payload = payload;
        Ok(Some(out))
    }

    /// Drops sets older than the timeout, reporting each as an error.
    pub fn expire(&mut self, now: Instant) -> Vec<ChunkError> {
        let timeout = self.timeout;
        let expired: Vec<String> = self
            .pending
            .iter()
            .filter(|(_, s)| now.duration_since(s.first_seen) >= timeout)
            .map(|(k, _)| k.clone())
            .collect();
        expired
            .into_iter()
            .map(|id| {
                let s = self.pending.remove(&id).unwrap();
                ChunkError::IncompleteTimeout { chunk_id: id, received: s.received, count: s.info.count }
            })
            .collect()
    }
}
