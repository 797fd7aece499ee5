//! Hosted loops that move data between topics and external storage.
//!
//! A sink consumes a topic through its own consumer group and appends each record
//! to a backend. A source watches a backend and publishes each new item once. The
//! manager supervises both, restarting crashed connectors with exponential backoff.

pub mod object_store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use object_store::{ClaimTicket, FsObjectStore, ObjectStore};

use crate::broker::{Broker, RoundRobin, StartPosition};
use crate::experiment::CaptureRecord;
use crate::wire::{chunk_message, DataMessage, DEFAULT_CHUNK_SIZE};
use crate::{Error, Result};

pub const SOURCE_JOURNAL: &str = ".mdml-source-journal";
pub const SOURCE_PATH: &str = "source.path";
const CONFIG_FILE: &str = "_connectors.json";
const SINK_BATCH: usize = 256;
const IDLE_WAIT: Duration = Duration::from_millis(100);
const DEFAULT_POLL_MS: u64 = 200;
const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sink,
    Source,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    /// NDJSON file of capture records (sink).
    File { path: PathBuf },
    /// Directory polled for new files (source).
    DirWatch {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        poll_ms: Option<u64>,
    },
    /// Filesystem object store; each payload becomes one object (sink).
    ObjectFs { root: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub name: String,
    pub direction: Direction,
    pub topic: String,
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
}

impl ConnectorConfig {
    pub fn group(&self) -> String {
        self.group_id.clone().unwrap_or_else(|| format!("connector.{}", self.name))
    }

    fn validate(&self) -> Result<()> {
        let name_ok = !self.name.is_empty()
            && self.name.len() <= 100
            && self.name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if !name_ok {
            return Err(Error::InvalidName(format!("connector name {:?}", self.name)));
        }
        match (&self.backend, self.direction) {
            (BackendConfig::File { .. } | BackendConfig::ObjectFs { .. }, Direction::Sink) => Ok(()),
            (BackendConfig::DirWatch { .. }, Direction::Source) => Ok(()),
            (b, d) => Err(Error::InvalidArgument(format!("backend {b:?} cannot be used as a {d:?}"))),
        }
    }

    /// Directory this connector writes into (sinks) or reads from (sources).
    fn location(&self) -> PathBuf {
        let p = match &self.backend {
            BackendConfig::File { path } => path.parent().map(Path::to_path_buf).unwrap_or_default(),
            BackendConfig::DirWatch { path, .. } => path.clone(),
            BackendConfig::ObjectFs { root } => root.clone(),
        };
        let p = if p.as_os_str().is_empty() { PathBuf::from(".") } else { p };
        fs::canonicalize(&p).unwrap_or(p)
    }
}

/// Destination of a sink connector.
pub trait SinkBackend: Send {
    fn write(&mut self, rec: &CaptureRecord) -> Result<()>;
    /// Makes everything written so far durable; called before offsets are committed.
    fn flush(&mut self) -> Result<()>;
}

/// One unit of data discovered by a source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceItem {
    /// Identity used for exactly-once publication.
    pub id: String,
    pub path: String,
    pub bytes: Vec<u8>,
}

/// Origin of a source connector.
pub trait SourceBackend: Send {
    /// Items not yet acknowledged, oldest first.
    fn poll(&mut self) -> Result<Vec<SourceItem>>;
    /// Records that `item` has been published.
    fn acknowledge(&mut self, item: &SourceItem) -> Result<()>;
}

fn unreachable_err(what: &Path, e: impl std::fmt::Display) -> Error {
    Error::BackendUnreachable(format!("{}: {e}", what.display()))
}

pub struct FileSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl FileSink {
    pub fn open(path: &Path) -> Result<FileSink> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| unreachable_err(path, e))?;
        Ok(FileSink { path: path.to_path_buf(), out: BufWriter::new(f) })
    }
}

impl SinkBackend for FileSink {
    fn write(&mut self, rec: &CaptureRecord) -> Result<()> {
        self.out.write_all(rec.to_line().as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data().map_err(|e| unreachable_err(&self.path, e))
    }
}

pub const OBJECT_INDEX: &str = "_index.ndjson";

/// Stores each payload as an object and logs where it came from in an index file.
pub struct ObjectSink {
    store: FsObjectStore,
    index: FileSink,
}

#[derive(Serialize)]
struct IndexLine<'a> {
    topic: &'a str,
    partition: u32,
    offset: u64,
    key: &'a str,
    size: u64,
    crc32: &'a str,
}

impl ObjectSink {
    pub fn open(root: &Path) -> Result<ObjectSink> {
        let store = FsObjectStore::open(root).map_err(|e| unreachable_err(root, e))?;
        let index = FileSink::open(&root.join(OBJECT_INDEX))?;
        Ok(ObjectSink { store, index })
    }
}

impl SinkBackend for ObjectSink {
    fn write(&mut self, rec: &CaptureRecord) -> Result<()> {
        let t = self.store.put(&rec.payload)?;
        let line = IndexLine {
            topic: &rec.topic,
            partition: rec.partition,
            offset: rec.offset,
            key: &t.key,
            size: t.size,
            crc32: &t.crc32,
        };
        self.index.out.write_all(serde_json::to_string(&line)?.as_bytes())?;
        self.index.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.index.flush()
    }
}

/// Publishes files dropped into a directory. A file is picked up once its size and
/// modification time are unchanged across two polls. Published identities
/// (path, size, mtime) are journaled inside the directory, and dotfiles are ignored.
pub struct DirWatchSource {
    dir: PathBuf,
    journal: File,
    done: HashSet<String>,
    last_seen: HashMap<PathBuf, String>,
}

impl DirWatchSource {
    pub fn open(dir: &Path) -> Result<DirWatchSource> {
        if !dir.is_dir() {
            return Err(unreachable_err(dir, "not a directory"));
        }
        let journal_path = dir.join(SOURCE_JOURNAL);
        let done = match fs::read_to_string(&journal_path) {
            Ok(text) => text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashSet::new(),
            Err(e) => return Err(unreachable_err(&journal_path, e)),
        };
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| unreachable_err(&journal_path, e))?;
        Ok(DirWatchSource { dir: dir.to_path_buf(), journal, done, last_seen: HashMap::new() })
    }
}

fn identity(name: &str, meta: &fs::Metadata) -> String {
    let mtime = meta.modified().ok().and_then(|t| t.duration_since(UNIX_EPOCH).ok()).map_or(0, |d| d.as_nanos());
    format!("{name}\t{}\t{mtime}", meta.len())
}

impl SourceBackend for DirWatchSource {
    fn poll(&mut self) -> Result<Vec<SourceItem>> {
        let mut files: Vec<(String, PathBuf, fs::Metadata)> = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| unreachable_err(&self.dir, e))? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let meta = entry.metadata()?;
            if name.starts_with('.') || !meta.is_file() {
                continue;
            }
            files.push((name, entry.path(), meta));
        }
        files.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ready = Vec::new();
        let mut seen_now = HashMap::new();
        for (name, path, meta) in files {
            let id = identity(&name, &meta);
            if self.done.contains(&id) {
                continue;
            }
            if self.last_seen.get(&path) == Some(&id) {
                let bytes = fs::read(&path)?;
                if bytes.len() as u64 == meta.len() {
                    ready.push(SourceItem { id: id.clone(), path: path.to_string_lossy().into_owned(), bytes });
                }
            }
            seen_now.insert(path, id);
        }
        self.last_seen = seen_now;
        Ok(ready)
    }

    fn acknowledge(&mut self, item: &SourceItem) -> Result<()> {
        writeln!(self.journal, "{}", item.id)?;
        self.journal.sync_data()?;
        self.done.insert(item.id.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConnectorStatus {
    pub records: u64,
    pub restarts: u64,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectorInfo {
    pub config: ConnectorConfig,
    pub status: ConnectorStatus,
}

#[derive(Default)]
struct Shared {
    stop: AtomicBool,
    records: AtomicU64,
    restarts: AtomicU64,
    last_error: Mutex<Option<String>>,
}

impl Shared {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    /// Sleeps for `d` unless asked to stop first; returns whether it was stopped.
    fn sleep(&self, d: Duration) -> bool {
        let step = Duration::from_millis(50);
        let mut left = d;
        while !self.stopped() && !left.is_zero() {
            let s = left.min(step);
            std::thread::sleep(s);
            left -= s;
        }
        self.stopped()
    }
}

fn open_sink(cfg: &ConnectorConfig) -> Result<Box<dyn SinkBackend>> {
    match &cfg.backend {
        BackendConfig::File { path } => Ok(Box::new(FileSink::open(path)?)),
        BackendConfig::ObjectFs { root } => Ok(Box::new(ObjectSink::open(root)?)),
        other => Err(Error::InvalidArgument(format!("{other:?} is not a sink backend"))),
    }
}

fn open_source(cfg: &ConnectorConfig) -> Result<(Box<dyn SourceBackend>, Duration)> {
    match &cfg.backend {
        BackendConfig::DirWatch { path, poll_ms } => {
            Ok((Box::new(DirWatchSource::open(path)?), Duration::from_millis(poll_ms.unwrap_or(DEFAULT_POLL_MS))))
        }
        other => Err(Error::InvalidArgument(format!("{other:?} is not a source backend"))),
    }
}

fn run_sink(broker: &Broker, cfg: &ConnectorConfig, shared: &Shared) -> Result<()> {
    let mut backend = open_sink(cfg)?;
    let group = cfg.group();
    let member = cfg.name.clone();
    let topics = vec![cfg.topic.clone()];
    let out = (|| {
        let mut membership = broker.join_group(&group, &member, &topics)?;
        let mut positions = BTreeMap::new();
        while !shared.stopped() {
            if broker.group_generation(&group) != Some(membership.generation) {
                membership = match broker.membership(&group, &member) {
                    Some(m) => m,
                    None => broker.join_group(&group, &member, &topics)?,
                };
                positions.clear();
            }
            let seen = broker.notifier().current();
            let mut progressed = false;
            for tp in &membership.assignment {
                let pos = match positions.get(tp) {
                    Some(&p) => p,
                    None => broker.resolve_start(Some(&group), &tp.topic, tp.partition, StartPosition::Earliest)?,
                };
                let recs =
                    broker.fetch(&group, &member, membership.generation, &tp.topic, tp.partition, pos, SINK_BATCH)?;
                let Some(last) = recs.last().map(|r| r.offset) else {
                    positions.insert(tp.clone(), pos);
                    continue;
                };
                for rec in &recs {
                    backend.write(&CaptureRecord::from_stored(tp.partition, rec))?;
                }
                backend.flush()?;
                broker.commit_offset(&group, &member, membership.generation, &tp.topic, tp.partition, last + 1)?;
                shared.records.fetch_add(recs.len() as u64, Ordering::Relaxed);
                positions.insert(tp.clone(), last + 1);
                progressed = true;
            }
            if !progressed {
                broker.notifier().wait_past(seen, IDLE_WAIT);
            }
        }
        Ok(())
    })();
    let _ = broker.leave_group(&group, &member);
    out
}

fn run_source(broker: &Broker, cfg: &ConnectorConfig, shared: &Shared) -> Result<()> {
    let (mut backend, poll) = open_source(cfg)?;
    let chunk_size = DEFAULT_CHUNK_SIZE.min(broker.config().max_frame_payload);
    let mut cursor = RoundRobin::default();
    while !shared.stopped() {
        for item in backend.poll()? {
            let msg = DataMessage::new(cfg.topic.clone(), item.bytes.clone()).with_header(SOURCE_PATH, item.path.clone());
            for part in chunk_message(msg, chunk_size) {
                broker.append(&part, &mut cursor)?;
            }
            backend.acknowledge(&item)?;
            shared.records.fetch_add(1, Ordering::Relaxed);
        }
        shared.sleep(poll);
    }
    Ok(())
}

struct Running {
    config: ConnectorConfig,
    shared: Arc<Shared>,
    thread: JoinHandle<()>,
}

fn supervise(broker: Arc<Broker>, cfg: ConnectorConfig, shared: Arc<Shared>) {
    let mut backoff = Duration::from_secs(1);
    loop {
        let out = match cfg.direction {
            Direction::Sink => run_sink(&broker, &cfg, &shared),
            Direction::Source => run_source(&broker, &cfg, &shared),
        };
        let Err(e) = out else { return };
        log::warn!("connector {} failed: {e}; restarting in {backoff:?}", cfg.name);
        *shared.last_error.lock().unwrap() = Some(e.to_string());
        shared.restarts.fetch_add(1, Ordering::Relaxed);
        if shared.sleep(backoff) {
            return;
        }
        backoff = (backoff * 2).min(MAX_BACKOFF);
    }
}

/// Creates, persists and supervises connectors.
pub struct ConnectorManager {
    broker: Arc<Broker>,
    config_path: PathBuf,
    running: Mutex<BTreeMap<String, Running>>,
}

impl ConnectorManager {
    /// Restarts every connector persisted in the broker's data directory.
    pub fn open(broker: Arc<Broker>) -> Result<ConnectorManager> {
        let config_path = broker.config().data_dir.join(CONFIG_FILE);
        let saved: Vec<ConnectorConfig> =
            if config_path.is_file() { serde_json::from_slice(&fs::read(&config_path)?)? } else { Vec::new() };
        let mgr = ConnectorManager { broker, config_path, running: Mutex::default() };
        {
            let mut running = mgr.running.lock().unwrap();
            for cfg in saved {
                log::info!("resuming connector {}", cfg.name);
                running.insert(cfg.name.clone(), mgr.spawn(cfg)?);
            }
        }
        Ok(mgr)
    }

    fn spawn(&self, cfg: ConnectorConfig) -> Result<Running> {
        let shared = Arc::new(Shared::default());
        let (b, c, s) = (self.broker.clone(), cfg.clone(), shared.clone());
        let thread = std::thread::Builder::new().name(format!("connector-{}", cfg.name)).spawn(move || supervise(b, c, s))?;
        Ok(Running { config: cfg, shared, thread })
    }

    fn save(&self, running: &BTreeMap<String, Running>) -> Result<()> {
        let configs: Vec<&ConnectorConfig> = running.values().map(|r| &r.config).collect();
        let tmp = self.config_path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&configs)?)?;
        fs::rename(&tmp, &self.config_path)?;
        Ok(())
    }

    pub fn create(&self, cfg: ConnectorConfig) -> Result<ConnectorInfo> {
        cfg.validate()?;
        let mut running = self.running.lock().unwrap();
        if running.contains_key(&cfg.name) {
            return Err(Error::DuplicateName(format!("connector {} already exists", cfg.name)));
        }
        self.broker.topic(&cfg.topic)?;
        // Open once up front so an unreachable backend fails the call instead of the loop.
        match cfg.direction {
            Direction::Sink => drop(open_sink(&cfg)?),
            Direction::Source => drop(open_source(&cfg)?),
        }
        let here = cfg.location();
        for other in running.values().map(|r| &r.config).filter(|o| o.direction != cfg.direction) {
            let there = other.location();
            if here.starts_with(&there) || there.starts_with(&here) {
                return Err(Error::InvalidArgument(format!(
                    "connector {} would read the output of {} ({})",
                    cfg.name,
                    other.name,
                    there.display()
                )));
            }
        }
        let r = self.spawn(cfg.clone())?;
        running.insert(cfg.name.clone(), r);
        self.save(&running)?;
        log::info!("connector {} created", cfg.name);
        Ok(ConnectorInfo { config: cfg, status: ConnectorStatus::default() })
    }

    /// Stops a connector after its in-flight record; a sink's committed offsets are kept.
    pub fn delete(&self, name: &str) -> Result<()> {
        let r = {
            let mut running = self.running.lock().unwrap();
            let r = running.remove(name).ok_or_else(|| Error::UnknownConnector(name.to_string()))?;
            self.save(&running)?;
            r
        };
        r.shared.stop.store(true, Ordering::Relaxed);
        let _ = r.thread.join();
        log::info!("connector {name} deleted");
        Ok(())
    }

    pub fn list(&self) -> Vec<ConnectorInfo> {
        self.running
            .lock()
            .unwrap()
            .values()
            .map(|r| ConnectorInfo {
                config: r.config.clone(),
                status: ConnectorStatus {
                    records: r.shared.records.load(Ordering::Relaxed),
                    restarts: r.shared.restarts.load(Ordering::Relaxed),
                    last_error: r.shared.last_error.lock().unwrap().clone(),
                },
            })
            .collect()
    }

    /// Stops every loop without forgetting the configurations.
    pub fn shutdown(&self) {
        let drained: Vec<Running> = std::mem::take(&mut *self.running.lock().unwrap()).into_values().collect();
        for r in &drained {
            r.shared.stop.store(true, Ordering::Relaxed);
        }
        for r in drained {
            let _ = r.thread.join();
        }
    }
}

impl Drop for ConnectorManager {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::BrokerConfig;
    use std::time::Instant;

    fn setup() -> (tempfile::TempDir, Arc<Broker>, ConnectorManager) {
        let dir = tempfile::tempdir().unwrap();
        let broker = Arc::new(Broker::open(BrokerConfig::new(dir.path().join("data"))).unwrap());
        broker.create_topic("mdml.lab.cam", Some(2)).unwrap();
        let mgr = ConnectorManager::open(broker.clone()).unwrap();
        (dir, broker, mgr)
    }

    fn wait_for(what: &str, mut f: impl FnMut() -> bool) {
        let t = Instant::now();
        while !f() {
            assert!(t.elapsed() < Duration::from_secs(10), "timed out waiting for {what}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn lines(path: &Path) -> Vec<CaptureRecord> {
        fs::read_to_string(path)
            .unwrap_or_default()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn file_sink(name: &str, path: &Path) -> ConnectorConfig {
        ConnectorConfig {
            name: name.into(),
            direction: Direction::Sink,
            topic: "mdml.lab.cam".into(),
            backend: BackendConfig::File { path: path.to_path_buf() },
            group_id: None,
        }
    }

    #[test]
    fn config_json_shape() {
        let cfg: ConnectorConfig = serde_json::from_str(
            r#"{"name":"w","direction":"source","topic":"mdml.a.b","backend":{"kind":"dir-watch","path":"/tmp/in"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.direction, Direction::Source);
        assert_eq!(cfg.group(), "connector.w");
        assert!(matches!(cfg.backend, BackendConfig::DirWatch { poll_ms: None, .. }));
    }

    #[test]
    fn file_sink_writes_every_record_and_resumes() {
        let (d, b, mgr) = setup();
        let out = d.path().join("sink.ndjson");
        for i in 0..4 {
            b.append(&DataMessage::new("mdml.lab.cam", vec![i]), &mut RoundRobin::default()).unwrap();
        }
        mgr.create(file_sink("s1", &out)).unwrap();
        wait_for("4 lines", || lines(&out).len() == 4);
        let mut got: Vec<u8> = lines(&out).iter().map(|r| r.payload[0]).collect();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3]);
        assert!(matches!(mgr.create(file_sink("s1", &out)), Err(Error::DuplicateName(_))));

        mgr.delete("s1").unwrap();
        assert!(matches!(mgr.delete("s1"), Err(Error::UnknownConnector(_))));
        mgr.create(file_sink("s1", &out)).unwrap();
        b.append(&DataMessage::new("mdml.lab.cam", vec![9]), &mut RoundRobin::default()).unwrap();
        wait_for("5 lines", || lines(&out).len() == 5);
        std::thread::sleep(Duration::from_millis(300));
        assert_eq!(lines(&out).len(), 5, "resumed sink must not duplicate");
    }

    #[test]
    fn dir_source_publishes_each_file_once() {
        let (d, b, mgr) = setup();
        let watched = d.path().join("incoming");
        fs::create_dir(&watched).unwrap();
        fs::write(watched.join("a.bin"), b"alpha").unwrap();
        fs::write(watched.join("b.bin"), vec![7u8; 3_000_000]).unwrap();
        let cfg = ConnectorConfig {
            name: "w".into(),
            direction: Direction::Source,
            topic: "mdml.lab.cam".into(),
            backend: BackendConfig::DirWatch { path: watched.clone(), poll_ms: Some(30) },
            group_id: None,
        };
        mgr.create(cfg.clone()).unwrap();
        let total = |b: &Broker| (0..2).map(|p| b.next_offset("mdml.lab.cam", p).unwrap()).sum::<u64>();
        // one plain message plus three chunks
        wait_for("2 files published", || total(&b) == 4);
        mgr.delete("w").unwrap();
        mgr.create(cfg).unwrap();
        std::thread::sleep(Duration::from_millis(300));
        assert_eq!(total(&b), 4, "restart must not republish");
        let recs: Vec<_> = (0..2).flat_map(|p| b.read("mdml.lab.cam", p, 0, 10).unwrap()).collect();
        let alpha = recs.iter().find(|r| r.message.payload == b"alpha").unwrap();
        assert!(alpha.message.header(SOURCE_PATH).unwrap().ends_with("a.bin"));
    }

    #[test]
    fn creation_errors() {
        let (d, _b, mgr) = setup();
        let mut cfg = file_sink("x", &d.path().join("no/such/dir/out.ndjson"));
        assert!(matches!(mgr.create(cfg.clone()), Err(Error::BackendUnreachable(_))));
        cfg.topic = "mdml.lab.none".into();
        assert!(matches!(mgr.create(cfg), Err(Error::UnknownTopic(_))));
        let src = ConnectorConfig {
            name: "y".into(),
            direction: Direction::Source,
            topic: "mdml.lab.cam".into(),
            backend: BackendConfig::DirWatch { path: d.path().join("missing"), poll_ms: None },
            group_id: None,
        };
        assert!(matches!(mgr.create(src), Err(Error::BackendUnreachable(_))));
        assert!(matches!(mgr.create(file_sink("bad name", &d.path().join("o"))), Err(Error::InvalidName(_))));
    }

    #[test]
    fn source_cannot_watch_a_sink_output() {
        let (d, _b, mgr) = setup();
        let out_dir = d.path().join("out");
        fs::create_dir(&out_dir).unwrap();
        mgr.create(file_sink("s", &out_dir.join("sink.ndjson"))).unwrap();
        let src = ConnectorConfig {
            name: "loop".into(),
            direction: Direction::Source,
            topic: "mdml.lab.cam".into(),
            backend: BackendConfig::DirWatch { path: out_dir, poll_ms: None },
            group_id: None,
        };
        assert!(matches!(mgr.create(src), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn connectors_survive_manager_restart() {
        let (d, b, mgr) = setup();
        let out = d.path().join("sink.ndjson");
        mgr.create(file_sink("keep", &out)).unwrap();
        drop(mgr);
        let mgr = ConnectorManager::open(b.clone()).unwrap();
        assert_eq!(mgr.list().len(), 1);
        b.append(&DataMessage::new("mdml.lab.cam", vec![1]), &mut RoundRobin::default()).unwrap();
        wait_for("line after restart", || lines(&out).len() == 1);
    }

    #[test]
    fn object_sink_stores_payloads() {
        let (d, b, mgr) = setup();
        let root = d.path().join("objects");
        mgr.create(ConnectorConfig {
            name: "o".into(),
            direction: Direction::Sink,
            topic: "mdml.lab.cam".into(),
            backend: BackendConfig::ObjectFs { root: root.clone() },
            group_id: None,
        })
        .unwrap();
        b.append(&DataMessage::new("mdml.lab.cam", b"payload".to_vec()), &mut RoundRobin::default()).unwrap();
        wait_for("index line", || fs::read_to_string(root.join(OBJECT_INDEX)).unwrap_or_default().lines().count() == 1);
        let line: serde_json::Value =
            serde_json::from_str(fs::read_to_string(root.join(OBJECT_INDEX)).unwrap().trim()).unwrap();
        assert_eq!(fs::read(root.join(line["key"].as_str().unwrap())).unwrap(), b"payload");
    }
}
