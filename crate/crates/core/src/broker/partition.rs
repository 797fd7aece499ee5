use std::fs;
use std::path::{Path, PathBuf};

use super::retention::RetentionPolicy;
use super::segment::{encode_record, list_segments, Segment, StoredRecord};
use crate::wire::DataMessage;
use crate::{Error, Result};

pub const DEFAULT_SEGMENT_MAX_BYTES: u64 = 64 * 1024 * 1024;
pub const DEFAULT_SEGMENT_MAX_RECORDS: usize = 100_000;

#[derive(Debug, Clone, Copy)]
pub struct RollPolicy {
    pub max_bytes: u64,
    pub max_records: usize,
}

impl Default for RollPolicy {
    fn default() -> Self {
        RollPolicy { max_bytes: DEFAULT_SEGMENT_MAX_BYTES, max_records: DEFAULT_SEGMENT_MAX_RECORDS }
    }
}

/// Append-only log of one partition, split into segment files.
pub struct PartitionLog {
    dir: PathBuf,
    segments: Vec<Segment>,
    roll: RollPolicy,
    last_ts: i64,
}

impl PartitionLog {
    pub fn open(dir: &Path, roll: RollPolicy) -> Result<PartitionLog> {
        fs::create_dir_all(dir)?;
        let mut segments = Vec::new();
        for (base, path) in list_segments(dir)? {
            let seg = Segment::open(&path, base)?;
            if let Some(prev) = segments.last().map(Segment::next_offset) {
                if prev != base {
                    return Err(Error::Io(std::io::Error::other(format!(
                        "gap in {}: expected segment at {prev}, found {base}",
                        dir.display()
                    ))));
                }
            }
            segments.push(seg);
        }
        if segments.is_empty() {
            segments.push(Segment::create(dir, 0)?);
        }
        let last_ts = segments.iter().rev().find_map(Segment::last_ts).unwrap_or(i64::MIN);
        Ok(PartitionLog { dir: dir.to_path_buf(), segments, roll, last_ts })
    }

    pub fn next_offset(&self) -> u64 {
        self.active().next_offset()
    }

    /// Oldest offset still retained.
    pub fn earliest(&self) -> u64 {
        self.segments[0].base_offset
    }

    pub fn size_bytes(&self) -> u64 {
        self.segments.iter().map(Segment::size_bytes).sum()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn active(&self) -> &Segment {
        self.segments.last().expect("at least one segment")
    }

    /// Appends and returns `(offset, ts_append)`. `ts_append` never goes backwards.
    pub fn append(&mut self, msg: &DataMessage, now: i64) -> Result<(u64, i64)> {
        let active = self.active();
        if !active.is_empty() && (active.size_bytes() >= self.roll.max_bytes || active.len() >= self.roll.max_records) {
            let next = active.next_offset();
            self.segments.push(Segment::create(&self.dir, next)?);
        }
        let offset = self.next_offset();
        let ts = now.max(self.last_ts);
        let record = encode_record(offset, ts, msg);
        self.segments.last_mut().unwrap().append(&record, ts)?;
        self.last_ts = ts;
        Ok((offset, ts))
    }

    /// Locates up to `max` records starting at `from`. The returned reader does the I/O
    /// so the caller can release the partition lock first.
    pub fn locate(&self, from: u64, max: usize) -> Result<PendingRead> {
        let next = self.next_offset();
        if from > next {
            return Err(Error::OffsetOutOfRange(format!("{from} > next offset {next}")));
        }
        let from = from.max(self.earliest());
        let mut parts = Vec::new();
        let mut remaining = max;
        let mut at = from;
        for seg in &self.segments {
            if remaining == 0 {
                break;
            }
            if seg.next_offset() <= at {
                continue;
            }
            let (file, entries) = seg.locate(at, remaining);
            remaining -= entries.len();
            at += entries.len() as u64;
            if !entries.is_empty() {
                parts.push((file, entries));
            }
        }
        Ok(PendingRead { parts })
    }

    pub fn read(&self, from: u64, max: usize) -> Result<Vec<StoredRecord>> {
        self.locate(from, max)?.execute()
    }

    /// Deletes whole oldest segments that violate `policy`; the active segment stays.
    pub fn sweep(&mut self, policy: &RetentionPolicy, now: i64) -> Result<usize> {
        let sizes: Vec<u64> = self.segments.iter().map(Segment::size_bytes).collect();
        let last_ts: Vec<Option<i64>> = self.segments.iter().map(Segment::last_ts).collect();
        let doomed = policy.expired_prefix(&sizes, &last_ts, now);
        for seg in self.segments.drain(..doomed) {
            seg.remove()?;
        }
        Ok(doomed)
    }

    pub fn sync(&self) -> Result<()> {
        self.active().sync()
    }
}

pub struct PendingRead {
    parts: Vec<(std::sync::Arc<fs::File>, Vec<super::segment::IndexEntry>)>,
}

impl PendingRead {
    pub fn execute(self) -> Result<Vec<StoredRecord>> {
        let mut out = Vec::new();
        for (file, entries) in &self.parts {
            out.extend(Segment::read_located(file, entries)?);
        }
        Ok(out)
    }
}
