//! One on-disk segment file of a partition log.
//!
//! Record layout: `offset: u64 BE | ts_append: i64 BE | DATA frame`. A segment is
//! named after the offset of its first record.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::wire::frame::PREFIX_LEN;
use crate::wire::{DataMessage, Frame, FrameCodec, FrameType, Routing};
use crate::{Error, Result};

pub const RECORD_PREFIX_LEN: usize = 16;

/// Disk frames are written by this process; the wire limit does not apply to re-reads.
const DISK_CODEC: FrameCodec = FrameCodec { max_payload: u32::MAX as usize };

#[derive(Debug, Clone, Copy)]
pub struct IndexEntry {
    pub pos: u64,
    pub len: u32,
    pub ts_append: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub offset: u64,
    pub ts_append: i64,
    pub message: DataMessage,
}

pub struct Segment {
    pub base_offset: u64,
    path: PathBuf,
    file: Arc<File>,
    index: Vec<IndexEntry>,
    size: u64,
}

pub fn segment_path(dir: &Path, base_offset: u64) -> PathBuf {
    dir.join(format!("{base_offset}.seg"))
}

/// Serializes a record exactly as it is laid out on disk.
pub fn encode_record(offset: u64, ts_append: i64, msg: &DataMessage) -> Vec<u8> {
    let header = msg.frame_header(Routing::default());
    let mut out = Vec::with_capacity(RECORD_PREFIX_LEN + PREFIX_LEN + header.len() + msg.payload.len());
    out.extend_from_slice(&offset.to_be_bytes());
    out.extend_from_slice(&ts_append.to_be_bytes());
    DISK_CODEC.write_parts(&mut out, FrameType::Data, &header, &msg.payload).expect("vec write");
    out
}

fn decode_record(bytes: &[u8]) -> Result<StoredRecord> {
    let offset = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
    let ts_append = i64::from_be_bytes(bytes[8..16].try_into().unwrap());
    let frame = match DISK_CODEC.decode(&bytes[RECORD_PREFIX_LEN..])? {
        crate::wire::Decoded::Frame(f, _) => f,
        crate::wire::Decoded::NeedMoreBytes => return Err(Error::Io(io::ErrorKind::UnexpectedEof.into())),
    };
    let (message, _) = DataMessage::from_frame(frame)?;
    Ok(StoredRecord { offset, ts_append, message })
}

/// Records at least this large are read in pieces so the payload lands in its own buffer.
const SPLIT_READ_MIN: usize = 64 * 1024;

fn read_large_record(file: &File, e: &IndexEntry) -> Result<StoredRecord> {
    let mut head = [0u8; RECORD_PREFIX_LEN + PREFIX_LEN];
    file.read_exact_at(&mut head, e.pos)?;
    let offset = u64::from_be_bytes(head[0..8].try_into().unwrap());
    let ts_append = i64::from_be_bytes(head[8..16].try_into().unwrap());
    let (frame_type, flags, header_len, payload_len) = DISK_CODEC.parse_prefix(head[RECORD_PREFIX_LEN..].try_into().unwrap())?;
    if head.len() + header_len + payload_len != e.len as usize {
        return Err(Error::Io(io::Error::new(io::ErrorKind::InvalidData, "record length disagrees with its index entry")));
    }
    let mut header = vec![0u8; header_len];
    file.read_exact_at(&mut header, e.pos + head.len() as u64)?;
    let mut payload = vec![0u8; payload_len];
    file.read_exact_at(&mut payload, e.pos + (head.len() + header_len) as u64)?;
    let (message, _) = DataMessage::from_frame(Frame { frame_type, flags, header, payload })?;
    Ok(StoredRecord { offset, ts_append, message })
}

impl Segment {
    pub fn create(dir: &Path, base_offset: u64) -> Result<Segment> {
        let path = segment_path(dir, base_offset);
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        Ok(Segment { base_offset, path, file: Arc::new(file), index: Vec::new(), size: 0 })
    }

    /// Opens an existing segment, rebuilding its index. A torn trailing record is cut off.
    pub fn open(path: &Path, base_offset: u64) -> Result<Segment> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut index = Vec::new();
        let mut pos = 0usize;
        let mut expected = base_offset;
        while bytes.len() - pos >= RECORD_PREFIX_LEN + PREFIX_LEN {
            let rec = &bytes[pos..];
            let offset = u64::from_be_bytes(rec[0..8].try_into().unwrap());
            let ts_append = i64::from_be_bytes(rec[8..16].try_into().unwrap());
            let frame = &rec[RECORD_PREFIX_LEN..];
            if frame[0..4] != crate::wire::frame::MAGIC || frame[5] != FrameType::Data as u8 || offset != expected {
                break;
            }
            let header_len = u32::from_be_bytes(frame[8..12].try_into().unwrap()) as usize;
            let payload_len = u32::from_be_bytes(frame[12..16].try_into().unwrap()) as usize;
            let len = RECORD_PREFIX_LEN + PREFIX_LEN + header_len + payload_len;
            if rec.len() < len {
                break;
            }
            index.push(IndexEntry { pos: pos as u64, len: len as u32, ts_append });
            pos += len;
            expected += 1;
        }
        if pos < bytes.len() {
            log::warn!("truncating {} torn bytes from {}", bytes.len() - pos, path.display());
            OpenOptions::new().write(true).open(path)?.set_len(pos as u64)?;
        }
        let file = OpenOptions::new().read(true).append(true).open(path)?;
        Ok(Segment { base_offset, path: path.to_path_buf(), file: Arc::new(file), index, size: pos as u64 })
    }

    pub fn append(&mut self, record: &[u8], ts_append: i64) -> Result<()> {
        (&*self.file).write_all(record)?;
        self.index.push(IndexEntry { pos: self.size, len: record.len() as u32, ts_append });
        self.size += record.len() as u64;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn size_bytes(&self) -> u64 {
        self.size
    }

    pub fn next_offset(&self) -> u64 {
        self.base_offset + self.index.len() as u64
    }

    pub fn last_ts(&self) -> Option<i64> {
        self.index.last().map(|e| e.ts_append)
    }

    /// Handles for reading `[from, from+max)` without holding any lock.
    pub fn locate(&self, from: u64, max: usize) -> (Arc<File>, Vec<IndexEntry>) {
        let start = from.saturating_sub(self.base_offset) as usize;
        let end = (start + max).min(self.index.len());
        (self.file.clone(), self.index[start.min(end)..end].to_vec())
    }

    pub fn read_located(file: &File, entries: &[IndexEntry]) -> Result<Vec<StoredRecord>> {
        let mut out = Vec::with_capacity(entries.len());
        let mut buf = Vec::new();
        for e in entries {
            if e.len as usize >= SPLIT_READ_MIN {
                out.push(read_large_record(file, e)?);
                continue;
            }
            buf.resize(e.len as usize, 0);
            file.read_exact_at(&mut buf, e.pos)?;
            out.push(decode_record(&buf)?);
        }
        Ok(out)
    }

    pub fn sync(&self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }

    pub fn remove(self) -> Result<()> {
        fs::remove_file(&self.path)?;
        Ok(())
    }
}

/// Lists `<base>.seg` files of a partition directory in offset order.
pub fn list_segments(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("seg") {
            continue;
        }
        if let Some(base) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            out.push((base, path));
        }
    }
    out.sort_by_key(|(b, _)| *b);
    Ok(out)
}
