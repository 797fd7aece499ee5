//! Experiment lifecycle: capture every message on a topic set between start and
//! stop into a portable archive, and replay archives with their original timing.

pub mod archive;
pub mod replay;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use archive::{ArchiveWriter, CaptureRecord, ExperimentArchive, Manifest, ARCHIVE_FORMAT};
pub use replay::{replay, ReplayOptions, ReplayReport, REPLAY_OF};

use crate::broker::{Broker, TopicPartition};
use crate::wire::now_ns;
use crate::{Error, Result};

const CAPTURE_BATCH: usize = 256;
const CAPTURE_IDLE_WAIT: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExperimentState {
    Defined,
    Running,
    Stopped,
    Archived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentDef {
    pub experiment_id: String,
    pub topics: Vec<String>,
    pub created_at: i64,
    pub state: ExperimentState,
}

type StopAt = Arc<Mutex<Option<BTreeMap<TopicPartition, u64>>>>;

struct Capture {
    stop_at: StopAt,
    thread: JoinHandle<Result<ArchiveWriter>>,
}

struct Entry {
    def: ExperimentDef,
    capture: Option<Capture>,
}

/// Owns running captures and the archive directory.
pub struct ExperimentManager {
    broker: Arc<Broker>,
    archive_dir: PathBuf,
    entries: Mutex<BTreeMap<String, Entry>>,
    replaying: Mutex<HashSet<String>>,
}

fn end_offsets(broker: &Broker, topics: &[String]) -> Result<BTreeMap<TopicPartition, u64>> {
    let mut out = BTreeMap::new();
    for t in topics {
        for p in 0..broker.partition_count(t)? {
            out.insert(TopicPartition::new(t, p), broker.next_offset(t, p)?);
        }
    }
    Ok(out)
}

/// Reads forward from `positions` until told where to stop and everything up to
/// there has been written.
fn capture_loop(
    broker: Arc<Broker>,
    mut positions: BTreeMap<TopicPartition, u64>,
    mut writer: ArchiveWriter,
    stop_at: StopAt,
) -> Result<ArchiveWriter> {
    loop {
        let seen = broker.notifier().current();
        let limits = stop_at.lock().unwrap().clone();
        let mut progressed = false;
        for (tp, pos) in positions.iter_mut() {
            let limit = limits.as_ref().and_then(|l| l.get(tp).copied()).unwrap_or(u64::MAX);
            if *pos >= limit {
                continue;
            }
            for rec in broker.read(&tp.topic, tp.partition, *pos, CAPTURE_BATCH)? {
                if rec.offset >= limit {
                    break;
                }
                writer.write(&CaptureRecord::from_stored(tp.partition, &rec))?;
                *pos = rec.offset + 1;
                progressed = true;
            }
        }
        if let Some(limits) = &limits {
            if positions.iter().all(|(tp, pos)| *pos >= limits.get(tp).copied().unwrap_or(0)) {
                return Ok(writer);
            }
        }
        if !progressed {
            writer.flush()?;
            broker.notifier().wait_past(seen, CAPTURE_IDLE_WAIT);
        }
    }
}

impl ExperimentManager {
    pub fn new(broker: Arc<Broker>, archive_dir: impl Into<PathBuf>) -> Result<ExperimentManager> {
        let archive_dir = archive_dir.into();
        std::fs::create_dir_all(&archive_dir)?;
        Ok(ExperimentManager { broker, archive_dir, entries: Mutex::default(), replaying: Mutex::default() })
    }

    pub fn archive_dir(&self) -> &Path {
        &self.archive_dir
    }

    pub fn archive_path(&self, experiment_id: &str) -> PathBuf {
        self.archive_dir.join(experiment_id)
    }

    /// Starts capturing. Only messages appended after this call returns are recorded.
    pub fn start(&self, topics: &[String]) -> Result<ExperimentDef> {
        if topics.is_empty() {
            return Err(Error::InvalidArgument("an experiment needs at least one topic".into()));
        }
        let mut topics: Vec<String> = topics.to_vec();
        topics.sort();
        topics.dedup();
        for t in &topics {
            self.broker.topic(t)?;
        }
        let mut entries = self.entries.lock().unwrap();
        for e in entries.values().filter(|e| e.def.state == ExperimentState::Running) {
            if let Some(t) = e.def.topics.iter().find(|t| topics.contains(t)) {
                return Err(Error::TopicBusy(format!("{t} is captured by experiment {}", e.def.experiment_id)));
            }
        }
        let id = uuid::Uuid::new_v4().to_string();
        let mut def = ExperimentDef { experiment_id: id.clone(), topics, created_at: now_ns(), state: ExperimentState::Defined };
        let writer = ArchiveWriter::create(&self.archive_path(&id), &def.topics)?;
        let positions = end_offsets(&self.broker, &def.topics)?;
        let stop_at: StopAt = Arc::default();
        let broker = self.broker.clone();
        let stop = stop_at.clone();
        let thread = std::thread::Builder::new()
            .name(format!("capture-{id}"))
            .spawn(move || capture_loop(broker, positions, writer, stop))?;
        def.state = ExperimentState::Running;
        log::info!("experiment {id} capturing {:?}", def.topics);
        entries.insert(id, Entry { def: def.clone(), capture: Some(Capture { stop_at, thread }) });
        Ok(def)
    }

    /// Drains the capture up to the current end of every topic and seals the archive.
    pub fn stop(&self, experiment_id: &str) -> Result<ExperimentArchive> {
        let (capture, topics, started_at) = {
            let mut entries = self.entries.lock().unwrap();
            let entry = entries
                .get_mut(experiment_id)
                .ok_or_else(|| Error::UnknownExperiment(experiment_id.to_string()))?;
            let capture = match (entry.def.state, entry.capture.take()) {
                (ExperimentState::Running, Some(c)) => c,
                _ => return Err(Error::NotRunning(format!("experiment {experiment_id} is not running"))),
            };
            entry.def.state = ExperimentState::Stopped;
            (capture, entry.def.topics.clone(), entry.def.created_at)
        };
        let result = (|| {
            *capture.stop_at.lock().unwrap() = Some(end_offsets(&self.broker, &topics)?);
            self.broker.notifier().bump();
            let writer = capture.thread.join().map_err(|_| Error::Protocol("capture thread panicked".into()))??;
            writer.finish(experiment_id, started_at, now_ns())?;
            ExperimentArchive::load(&self.archive_path(experiment_id))
        })();
        if let Some(e) = self.entries.lock().unwrap().get_mut(experiment_id) {
            if result.is_ok() {
                e.def.state = ExperimentState::Archived;
            }
        }
        let archive = result?;
        log::info!("experiment {experiment_id} archived with counts {:?}", archive.manifest.counts());
        Ok(archive)
    }

    pub fn get(&self, experiment_id: &str) -> Option<ExperimentDef> {
        self.entries.lock().unwrap().get(experiment_id).map(|e| e.def.clone())
    }

    /// Experiments of this process plus archives found on disk from earlier runs.
    pub fn list(&self) -> Vec<ExperimentDef> {
        let entries = self.entries.lock().unwrap();
        let mut out: Vec<ExperimentDef> = entries.values().map(|e| e.def.clone()).collect();
        if let Ok(dir) = std::fs::read_dir(&self.archive_dir) {
            for d in dir.flatten() {
                let id = d.file_name().to_string_lossy().into_owned();
                if entries.contains_key(&id) {
                    continue;
                }
                let Ok(raw) = std::fs::read(d.path().join(archive::MANIFEST_FILE)) else { continue };
                if let Ok(m) = serde_json::from_slice::<Manifest>(&raw) {
                    out.push(ExperimentDef {
                        experiment_id: m.experiment_id,
                        topics: m.topics,
                        created_at: m.started_at,
                        state: ExperimentState::Archived,
                    });
                }
            }
        }
        out.sort_by_key(|d| d.created_at);
        out
    }

    /// Loads an archive by experiment id, or by path when the argument names a directory.
    pub fn load(&self, id_or_path: &str) -> Result<ExperimentArchive> {
        let by_id = self.archive_path(id_or_path);
        if by_id.join(archive::MANIFEST_FILE).is_file() {
            return ExperimentArchive::load(&by_id);
        }
        let path = Path::new(id_or_path);
        if path.is_dir() {
            return ExperimentArchive::load(path);
        }
        Err(Error::UnknownExperiment(id_or_path.to_string()))
    }

    /// Replays one archive; a second concurrent replay of the same archive is `TopicBusy`.
    pub fn replay(&self, archive: &ExperimentArchive, opts: &ReplayOptions) -> Result<ReplayReport> {
        let id = archive.manifest.experiment_id.clone();
        if !self.replaying.lock().unwrap().insert(id.clone()) {
            return Err(Error::TopicBusy(format!("archive {id} is already being replayed")));
        }
        let out = replay::replay(&self.broker, archive, opts);
        self.replaying.lock().unwrap().remove(&id);
        out
    }
}
