//! In-process storage and dispatch engine.
//!
//! Topics are split into partitions, each an append-only log on disk. Consumer
//! groups share partitions between members with generation fencing. The engine is
//! shared across connection handlers behind an `Arc`; appends to one partition are
//! serialized by that partition's lock, and reads do their file I/O after releasing it.

pub mod group;
pub mod partition;
pub mod retention;
pub mod segment;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use group::{Group, Membership, TopicPartition};
pub use partition::{PartitionLog, RollPolicy};
pub use retention::RetentionPolicy;
pub use segment::StoredRecord;

use crate::wire::chunk::{CHUNK_CNT, CHUNK_ID};
use crate::wire::{is_valid_topic, now_ns, DataMessage, DEFAULT_MAX_FRAME_PAYLOAD};
use crate::{Error, Result};

pub const DEFAULT_PARTITIONS: u32 = 8;
const GROUPS_DIR: &str = "_groups";
const CHUNK_ROUTE_TTL: Duration = Duration::from_secs(60);

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Where a consumer begins when its group has no committed offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPosition {
    Earliest,
    Latest,
    At(u64),
}

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    pub data_dir: PathBuf,
    pub default_partitions: u32,
    pub max_frame_payload: usize,
    pub roll: RollPolicy,
}

impl BrokerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        BrokerConfig {
            data_dir: data_dir.into(),
            default_partitions: DEFAULT_PARTITIONS,
            max_frame_payload: DEFAULT_MAX_FRAME_PAYLOAD,
            roll: RollPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TopicMeta {
    pub partition_count: u32,
    pub created_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TopicInfo {
    pub name: String,
    pub partition_count: u32,
    pub created_at: i64,
    pub next_offsets: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GroupInfo {
    pub group_id: String,
    pub generation: u64,
    pub members: Vec<String>,
    pub committed: Vec<(TopicPartition, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendAck {
    pub partition: u32,
    pub offset: u64,
    pub ts_append: i64,
}

/// Keyless-publish cursor owned by one producer session.
#[derive(Debug, Default, Clone)]
pub struct RoundRobin(u64);

impl RoundRobin {
    pub fn starting_at(n: u64) -> Self {
        RoundRobin(n)
    }

    fn next(&mut self, partitions: u32) -> u32 {
        let p = (self.0 % partitions as u64) as u32;
        self.0 = self.0.wrapping_add(1);
        p
    }
}

struct ChunkRoute {
    partition: u32,
    seen: usize,
    count: usize,
    at: Instant,
}

pub struct Topic {
    pub name: String,
    pub meta: TopicMeta,
    partitions: Vec<Mutex<PartitionLog>>,
    chunk_routes: Mutex<HashMap<String, ChunkRoute>>,
}

impl Topic {
    fn partition(&self, p: u32) -> Result<&Mutex<PartitionLog>> {
        self.partitions
            .get(p as usize)
            .ok_or_else(|| Error::UnknownPartition(format!("{}/{p} (topic has {})", self.name, self.partitions.len())))
    }

    fn route(&self, msg: &DataMessage, cursor: &mut RoundRobin) -> u32 {
        let n = self.meta.partition_count;
        let pick = |cursor: &mut RoundRobin| match &msg.key {
            Some(k) => (fnv1a64(k) % n as u64) as u32,
            None => cursor.next(n),
        };
        let Some(chunk_id) = msg.header(CHUNK_ID) else { return pick(cursor) };
        let count = msg.header(CHUNK_CNT).and_then(|c| c.parse().ok()).unwrap_or(1);
        let mut routes = self.chunk_routes.lock().unwrap();
        let now = Instant::now();
        routes.retain(|_, r| now.duration_since(r.at) < CHUNK_ROUTE_TTL);
        let route = routes
            .entry(chunk_id.to_string())
            .or_insert_with(|| ChunkRoute { partition: pick(cursor), seen: 0, count, at: now });
        route.seen += 1;
        let p = route.partition;
        if route.seen >= route.count {
            routes.remove(chunk_id);
        }
        p
    }

    pub fn info(&self) -> TopicInfo {
        TopicInfo {
            name: self.name.clone(),
            partition_count: self.meta.partition_count,
            created_at: self.meta.created_at,
            next_offsets: self.partitions.iter().map(|p| p.lock().unwrap().next_offset()).collect(),
        }
    }
}

/// Wakes waiters whenever something a consumer might care about changes.
#[derive(Default)]
pub struct Notifier {
    seq: Mutex<u64>,
    cv: Condvar,
}

impl Notifier {
    pub fn bump(&self) {
        *self.seq.lock().unwrap() += 1;
        self.cv.notify_all();
    }

    pub fn current(&self) -> u64 {
        *self.seq.lock().unwrap()
    }

    /// Blocks until the sequence moves past `seen` or `timeout` elapses.
    pub fn wait_past(&self, seen: u64, timeout: Duration) -> u64 {
        let guard = self.seq.lock().unwrap();
        let (guard, _) = self.cv.wait_timeout_while(guard, timeout, |s| *s == seen).unwrap();
        *guard
    }
}

pub struct Broker {
    config: BrokerConfig,
    topics: RwLock<BTreeMap<String, Arc<Topic>>>,
    groups: Mutex<HashMap<String, Arc<Mutex<Group>>>>,
    notifier: Notifier,
}

fn valid_group_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Broker {
    /// Opens (or initializes) the data directory, recovering every topic and group.
    pub fn open(config: BrokerConfig) -> Result<Broker> {
        fs::create_dir_all(config.data_dir.join(GROUPS_DIR))?;
        let mut topics = BTreeMap::new();
        for entry in fs::read_dir(&config.data_dir)? {
            let path = entry?.path();
            let meta_path = path.join("meta.json");
            let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            if !meta_path.is_file() || !is_valid_topic(&name) {
                continue;
            }
            let meta: TopicMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
            let topic = Self::load_topic(&config, &name, meta)?;
            topics.insert(name, Arc::new(topic));
        }
        let mut groups = HashMap::new();
        for entry in fs::read_dir(config.data_dir.join(GROUPS_DIR))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let state: group::PersistedGroup = serde_json::from_slice(&fs::read(&path)?)?;
            groups.insert(state.group_id.clone(), Arc::new(Mutex::new(Group::restore(state))));
        }
        log::info!("broker opened {} with {} topics, {} groups", config.data_dir.display(), topics.len(), groups.len());
        Ok(Broker { config, topics: RwLock::new(topics), groups: Mutex::new(groups), notifier: Notifier::default() })
    }

    fn load_topic(config: &BrokerConfig, name: &str, meta: TopicMeta) -> Result<Topic> {
        let dir = config.data_dir.join(name);
        let partitions = (0..meta.partition_count)
            .map(|p| PartitionLog::open(&dir.join(p.to_string()), config.roll).map(Mutex::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Topic { name: name.to_string(), meta, partitions, chunk_routes: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn create_topic(&self, name: &str, partition_count: Option<u32>) -> Result<TopicInfo> {
        if !is_valid_topic(name) {
            return Err(Error::InvalidName(name.to_string()));
        }
        let partition_count = partition_count.unwrap_or(self.config.default_partitions);
        if partition_count == 0 {
            return Err(Error::InvalidArgument("partition_count must be at least 1".into()));
        }
        let mut topics = self.topics.write().unwrap();
        if topics.contains_key(name) {
            return Err(Error::TopicExists(name.to_string()));
        }
        let dir = self.config.data_dir.join(name);
        fs::create_dir_all(&dir)?;
        let meta = TopicMeta { partition_count, created_at: now_ns() };
        let topic = Self::load_topic(&self.config, name, meta.clone())?;
        write_json_atomic(&dir.join("meta.json"), &meta)?;
        let info = topic.info();
        topics.insert(name.to_string(), Arc::new(topic));
        Ok(info)
    }

    /// Creates the topic with default partitioning if absent. Returns true when created.
    pub fn ensure_topic(&self, name: &str) -> Result<bool> {
        match self.create_topic(name, None) {
            Ok(_) => Ok(true),
            Err(Error::TopicExists(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    pub fn topic(&self, name: &str) -> Result<Arc<Topic>> {
        self.topics.read().unwrap().get(name).cloned().ok_or_else(|| Error::UnknownTopic(name.to_string()))
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics.read().unwrap().contains_key(name)
    }

    pub fn topics(&self) -> Vec<TopicInfo> {
        let topics: Vec<Arc<Topic>> = self.topics.read().unwrap().values().cloned().collect();
        topics.iter().map(|t| t.info()).collect()
    }

    pub fn partition_count(&self, topic: &str) -> Result<u32> {
        Ok(self.topic(topic)?.meta.partition_count)
    }

    /// Appends `msg` to its topic. Keyed messages hash to a partition, keyless ones
    /// follow `cursor`, and every part of a chunk set follows its first part.
    pub fn append(&self, msg: &DataMessage, cursor: &mut RoundRobin) -> Result<AppendAck> {
        if msg.payload.len() > self.config.max_frame_payload {
            return Err(Error::OversizedPayload(format!(
                "{} bytes exceeds {}",
                msg.payload.len(),
                self.config.max_frame_payload
            )));
        }
        let topic = self.topic(&msg.topic)?;
        let partition = topic.route(msg, cursor);
        let (offset, ts_append) = topic.partition(partition)?.lock().unwrap().append(msg, now_ns())?;
        self.notifier.bump();
        Ok(AppendAck { partition, offset, ts_append })
    }

    pub fn read(&self, topic: &str, partition: u32, from: u64, max: usize) -> Result<Vec<StoredRecord>> {
        let t = self.topic(topic)?;
        let pending = t.partition(partition)?.lock().unwrap().locate(from, max)?;
        pending.execute()
    }

    pub fn next_offset(&self, topic: &str, partition: u32) -> Result<u64> {
        Ok(self.topic(topic)?.partition(partition)?.lock().unwrap().next_offset())
    }

    pub fn earliest(&self, topic: &str, partition: u32) -> Result<u64> {
        Ok(self.topic(topic)?.partition(partition)?.lock().unwrap().earliest())
    }

    fn group(&self, group_id: &str) -> Result<Arc<Mutex<Group>>> {
        if !valid_group_id(group_id) {
            return Err(Error::InvalidName(format!("group id {group_id:?}")));
        }
        Ok(self
            .groups
            .lock()
            .unwrap()
            .entry(group_id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(Group::new(group_id))))
            .clone())
    }

    fn existing_group(&self, group_id: &str) -> Option<Arc<Mutex<Group>>> {
        self.groups.lock().unwrap().get(group_id).cloned()
    }

    fn persist_group(&self, group: &Group) -> Result<()> {
        let path = self.config.data_dir.join(GROUPS_DIR).join(format!("{}.json", group.id));
        write_json_atomic(&path, &group.persisted())
    }

    fn partitions_fn(&self) -> impl Fn(&str) -> u32 + '_ {
        move |t: &str| self.partition_count(t).unwrap_or(0)
    }

    /// Adds `member` to the group (creating it if needed) and rebalances.
    pub fn join_group(&self, group_id: &str, member: &str, topics: &[String]) -> Result<Membership> {
        for t in topics {
            self.topic(t)?;
        }
        let group = self.group(group_id)?;
        let membership = {
            let mut g = group.lock().unwrap();
            let m = g.join(member, topics.to_vec(), &self.partitions_fn());
            self.persist_group(&g)?;
            m
        };
        self.notifier.bump();
        Ok(membership)
    }

    pub fn leave_group(&self, group_id: &str, member: &str) -> Result<bool> {
        let Some(group) = self.existing_group(group_id) else { return Ok(false) };
        let left = {
            let mut g = group.lock().unwrap();
            let left = g.leave(member, &self.partitions_fn());
            if left {
                self.persist_group(&g)?;
            }
            left
        };
        if left {
            log::info!("member {member} left group {group_id}");
            self.notifier.bump();
        }
        Ok(left)
    }

    pub fn membership(&self, group_id: &str, member: &str) -> Option<Membership> {
        self.existing_group(group_id)?.lock().unwrap().membership(member)
    }

    pub fn group_generation(&self, group_id: &str) -> Option<u64> {
        self.existing_group(group_id).map(|g| g.lock().unwrap().generation())
    }

    pub fn commit_offset(
        &self,
        group_id: &str,
        member: &str,
        generation: u64,
        topic: &str,
        partition: u32,
        offset: u64,
    ) -> Result<u64> {
        let group = self
            .existing_group(group_id)
            .ok_or_else(|| Error::StaleGeneration(format!("group {group_id} has no members")))?;
        let mut g = group.lock().unwrap();
        let committed = g.commit(member, generation, TopicPartition::new(topic, partition), offset)?;
        self.persist_group(&g)?;
        Ok(committed)
    }

    pub fn committed(&self, group_id: &str, topic: &str, partition: u32) -> Option<u64> {
        self.existing_group(group_id)?.lock().unwrap().committed(&TopicPartition::new(topic, partition))
    }

    /// Generation-fenced read on behalf of a group member.
    #[allow(clippy::too_many_arguments)]
    pub fn fetch(
        &self,
        group_id: &str,
        member: &str,
        generation: u64,
        topic: &str,
        partition: u32,
        from: u64,
        max: usize,
    ) -> Result<Vec<StoredRecord>> {
        {
            let group = self
                .existing_group(group_id)
                .ok_or_else(|| Error::StaleGeneration(format!("group {group_id} has no members")))?;
            group.lock().unwrap().check(member, generation, &TopicPartition::new(topic, partition))?;
        }
        self.read(topic, partition, from, max)
    }

    /// Turns a start position into a concrete offset. A committed group offset wins
    /// over `Earliest`/`Latest`.
    pub fn resolve_start(&self, group_id: Option<&str>, topic: &str, partition: u32, sp: StartPosition) -> Result<u64> {
        let t = self.topic(topic)?;
        let (earliest, next) = {
            let log = t.partition(partition)?.lock().unwrap();
            (log.earliest(), log.next_offset())
        };
        if let StartPosition::At(o) = sp {
            if o > next {
                return Err(Error::OffsetOutOfRange(format!("{o} > next offset {next}")));
            }
        }
        if let Some(c) = group_id.and_then(|g| self.committed(g, topic, partition)) {
            if !matches!(sp, StartPosition::At(_)) {
                return Ok(c.clamp(earliest, next));
            }
        }
        Ok(match sp {
            StartPosition::Earliest => earliest,
            StartPosition::Latest => next,
            StartPosition::At(o) => o.max(earliest),
        })
    }

    pub fn retention_sweep(&self, topic: &str, policy: &RetentionPolicy) -> Result<usize> {
        let t = self.topic(topic)?;
        let now = now_ns();
        let mut removed = 0;
        for p in &t.partitions {
            removed += p.lock().unwrap().sweep(policy, now)?;
        }
        Ok(removed)
    }

    pub fn groups(&self) -> Vec<GroupInfo> {
        let groups: Vec<Arc<Mutex<Group>>> = self.groups.lock().unwrap().values().cloned().collect();
        let mut out: Vec<GroupInfo> = groups
            .iter()
            .map(|g| {
                let g = g.lock().unwrap();
                GroupInfo {
                    group_id: g.id.clone(),
                    generation: g.generation(),
                    members: g.members().cloned().collect(),
                    committed: g.committed_all().iter().map(|(k, v)| (k.clone(), *v)).collect(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.group_id.cmp(&b.group_id));
        out
    }

    /// Flushes active segments to stable storage.
    pub fn sync(&self) -> Result<()> {
        let topics: Vec<Arc<Topic>> = self.topics.read().unwrap().values().cloned().collect();
        for t in topics {
            for p in &t.partitions {
                p.lock().unwrap().sync()?;
            }
        }
        Ok(())
    }
}
