//! Portable experiment archives.
//!
//! ```text
//! <archive_dir>/<experiment_id>/manifest.json
//! <archive_dir>/<experiment_id>/<topic with '.' replaced by '_'>.ndjson
//! ```
//!
//! Each event file holds one JSON object per line with base64 payloads, so an archive
//! written by one deployment loads unchanged on any other.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::broker::StoredRecord;
use crate::wire::checksum::crc32;
use crate::wire::{DataMessage, Headers};
use crate::{Error, Result};

pub const ARCHIVE_FORMAT: &str = "mdml-archive/1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One captured message. The same shape is used by file sinks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub ts_pub: i64,
    pub ts_capture: i64,
    #[serde(default, with = "b64_opt")]
    pub key: Option<Vec<u8>>,
    #[serde(default)]
    pub headers: Headers,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

impl CaptureRecord {
    pub fn from_stored(partition: u32, rec: &StoredRecord) -> Self {
        CaptureRecord {
            topic: rec.message.topic.clone(),
            partition,
            offset: rec.offset,
            ts_pub: rec.message.ts_pub,
            ts_capture: rec.ts_append,
            key: rec.message.key.clone(),
            headers: rec.message.headers.clone(),
            payload: rec.message.payload.clone(),
        }
    }

    pub fn to_message(&self) -> DataMessage {
        DataMessage {
            topic: self.topic.clone(),
            key: self.key.clone(),
            ts_pub: self.ts_pub,
            headers: self.headers.clone(),
            payload: self.payload.clone(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s).map_err(serde::de::Error::custom)
    }
}

mod b64_opt {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&B64.encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<u8>>, D::Error> {
        match Option::<String>::deserialize(d)? {
            Some(s) => B64.decode(s).map(Some).map_err(serde::de::Error::custom),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub count: u64,
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub experiment_id: String,
    pub topics: Vec<String>,
    pub started_at: i64,
    pub stopped_at: i64,
    pub files: BTreeMap<String, FileEntry>,
}

impl Manifest {
    pub fn counts(&self) -> BTreeMap<String, u64> {
        self.files.iter().map(|(t, f)| (t.clone(), f.count)).collect()
    }
}

pub fn event_file_name(topic: &str) -> String {
    format!("{}.ndjson", topic.replace('.', "_"))
}

/// Streams captured records into per-topic event files.
pub struct ArchiveWriter {
    dir: PathBuf,
    files: BTreeMap<String, (BufWriter<File>, u64)>,
}

impl ArchiveWriter {
    pub fn create(dir: &Path, topics: &[String]) -> Result<ArchiveWriter> {
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for t in topics {
            let f = File::create(dir.join(event_file_name(t)))?;
            files.insert(t.clone(), (BufWriter::new(f), 0));
        }
        Ok(ArchiveWriter { dir: dir.to_path_buf(), files })
    }

    pub fn write(&mut self, rec: &CaptureRecord) -> Result<()> {
        let (w, n) = self
            .files
            .get_mut(&rec.topic)
            .ok_or_else(|| Error::UnknownTopic(format!("{} is not part of this archive", rec.topic)))?;
        w.write_all(rec.to_line().as_bytes())?;
        w.write_all(b"\n")?;
        *n += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        for (w, _) in self.files.values_mut() {
            w.flush()?;
        }
        Ok(())
    }

    /// Flushes, checksums the event files and writes the manifest.
    pub fn finish(mut self, experiment_id: &str, started_at: i64, stopped_at: i64) -> Result<Manifest> {
        self.flush()?;
        let mut entries = BTreeMap::new();
        for (topic, (w, count)) in std::mem::take(&mut self.files) {
            let file = w.into_inner().map_err(|e| e.into_error())?;
            file.sync_all()?;
            let name = event_file_name(&topic);
            let bytes = fs::read(self.dir.join(&name))?;
            entries.insert(topic, FileEntry { file: name, count, crc32: crc32(&bytes) });
        }
        let manifest = Manifest {
            format: ARCHIVE_FORMAT.into(),
            experiment_id: experiment_id.into(),
            topics: entries.keys().cloned().collect(),
            started_at,
            stopped_at,
            files: entries,
        };
        fs::write(self.dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentArchive {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub records: BTreeMap<String, Vec<CaptureRecord>>,
}

impl ExperimentArchive {
    /// Loads and verifies an archive directory: format version, per-file CRC and
    /// per-file record counts.
    pub fn load(dir: &Path) -> Result<ExperimentArchive> {
        let raw = fs::read(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::ArchiveCorrupt(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let value: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| Error::ArchiveCorrupt(format!("manifest: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(ARCHIVE_FORMAT) => {}
            Some(other) => return Err(Error::UnsupportedVersion(other.to_string())),
            None => return Err(Error::ArchiveCorrupt("manifest has no format".into())),
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| Error::ArchiveCorrupt(format!("manifest: {e}")))?;
        let mut records = BTreeMap::new();
        for topic in &manifest.topics {
            let entry = manifest
                .files
                .get(topic)
                .ok_or_else(|| Error::ArchiveCorrupt(format!("no file entry for {topic}")))?;
            let bytes = fs::read(dir.join(&entry.file)).map_err(|e| Error::ArchiveCorrupt(format!("{}: {e}", entry.file)))?;
            let actual = crc32(&bytes);
            if actual != entry.crc32 {
                return Err(Error::ArchiveCorrupt(format!("{}: crc {actual}, manifest says {}", entry.file, entry.crc32)));
            }
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::ArchiveCorrupt(format!("{}: {e}", entry.file)))?;
            let recs = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str::<CaptureRecord>(l))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::ArchiveCorrupt(format!("{}: {e}", entry.file)))?;
            if recs.len() as u64 != entry.count {
                return Err(Error::ArchiveCorrupt(format!("{}: {} lines, manifest says {}", entry.file, recs.len(), entry.count)));
            }
            if let Some(bad) = recs.iter().find(|r| &r.topic != topic) {
                return Err(Error::ArchiveCorrupt(format!("{}: record for {}", entry.file, bad.topic)));
            }
            records.insert(topic.clone(), recs);
        }
        Ok(ExperimentArchive { dir: dir.to_path_buf(), manifest, records })
    }

    /// Per-topic payload sequences in capture order.
    pub fn payloads(&self, topic: &str) -> Vec<&[u8]> {
        let mut recs: Vec<&CaptureRecord> = self.records.get(topic).map(|v| v.iter().collect()).unwrap_or_default();
        recs.sort_by_key(|r| (r.ts_capture, r.partition, r.offset));
        recs.into_iter().map(|r| r.payload.as_slice()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
