//! Client toolkit for instruments and analysis code.
//!
//! An [`Agent`] owns one connection. Producing picks a path by payload size: plain
//! up to the chunk size, chunked up to the claim-check threshold, and above that
//! the payload goes to the object store with only a ticket on the wire. Consumers
//! undo all of this transparently.

pub mod analysis;
pub mod connection;
pub mod consumer;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use analysis::{run_analysis_loop, LoopStats, RetryPolicy};
pub use connection::{Connection, SubEvent};
pub use consumer::{Consumer, Delivery, SubscribeOptions};

use crate::broker::TopicInfo;
use crate::connectors::{ConnectorConfig, FsObjectStore, ObjectStore};
use crate::experiment::{ExperimentDef, Manifest, ReplayReport};
use crate::service::protocol::{ListKind, Request};
use crate::service::registry::{DeviceRegistration, SchemaDoc};
use crate::service::schema;
use crate::wire::{chunk_message, DataMessage, DEFAULT_CHUNK_SIZE};
use crate::{Error, Result};

pub const DEFAULT_COAT_CHECK_THRESHOLD: usize = 32 * 1024 * 1024;
pub const DEFAULT_ADDR: &str = crate::service::config::DEFAULT_LISTEN_ADDR;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub addr: String,
    pub chunk_size: usize,
    pub coat_check_threshold: usize,
    /// Where claim-checked objects live; defaults to the directory the service reports.
    pub object_store_dir: Option<PathBuf>,
    pub auth_token: Option<String>,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            addr: DEFAULT_ADDR.into(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            coat_check_threshold: DEFAULT_COAT_CHECK_THRESHOLD,
            object_store_dir: None,
            auth_token: None,
            request_timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

impl AgentConfig {
    pub fn new(addr: impl Into<String>) -> Self {
        AgentConfig { addr: addr.into(), ..Default::default() }
    }

    /// Defaults overridden by `MDML_ADDR`, `MDML_CHUNK_SIZE`, `MDML_COATCHECK_THRESHOLD`
    /// and `MDML_TOKEN`.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg = AgentConfig::default();
        let num = |k: &str, v: String| -> Result<usize> {
            v.trim().parse().map_err(|_| Error::InvalidArgument(format!("{k}={v:?} is not a byte count")))
        };
        if let Some(a) = get("MDML_ADDR") {
            cfg.addr = a;
        }
        if let Some(v) = get("MDML_CHUNK_SIZE") {
            cfg.chunk_size = num("MDML_CHUNK_SIZE", v)?;
        }
        if let Some(v) = get("MDML_COATCHECK_THRESHOLD") {
            cfg.coat_check_threshold = num("MDML_COATCHECK_THRESHOLD", v)?;
        }
        cfg.auth_token = get("MDML_TOKEN");
        if cfg.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk size must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublishPath {
    Plain,
    Chunked,
    ClaimCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishReceipt {
    pub topic: String,
    pub partition: u32,
    /// Offset of the last wire message written.
    pub offset: u64,
    pub parts: usize,
    pub bytes: usize,
    pub path: PublishPath,
}

pub struct Agent {
    conn: Arc<Connection>,
    config: AgentConfig,
    /// Largest payload the service accepts in one frame; larger ones are chunked.
    frame_limit: usize,
    chunk_size: usize,
    store: Option<Arc<dyn ObjectStore>>,
}

fn field<T: serde::de::DeserializeOwned>(reply: &Value, key: &str) -> Result<T> {
    serde_json::from_value(reply.get(key).cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Protocol(format!("reply field {key}: {e}")))
}

impl Agent {
    pub fn connect(config: AgentConfig) -> Result<Agent> {
        let conn = Connection::open(&config.addr, config.auth_token.as_deref(), config.request_timeout)?;
        let limit = conn.hello()["max_frame_payload"].as_u64().map_or(usize::MAX, |v| v as usize);
        let chunk_size = config.chunk_size.min(limit).max(1);
        if chunk_size < config.chunk_size {
            log::warn!("chunk size {} exceeds the service limit, using {chunk_size}", config.chunk_size);
        }
        let dir = config
            .object_store_dir
            .clone()
            .or_else(|| conn.hello()["object_store_dir"].as_str().map(PathBuf::from));
        let store = match dir.map(FsObjectStore::open) {
            Some(Ok(s)) => Some(Arc::new(s) as Arc<dyn ObjectStore>),
            Some(Err(e)) => {
                log::warn!("object store unavailable: {e}");
                None
            }
            None => None,
        };
        Ok(Agent { conn: Arc::new(conn), config, frame_limit: limit, chunk_size, store })
    }

    pub fn from_env() -> Result<Agent> {
        Agent::connect(AgentConfig::from_env()?)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn connection(&self) -> &Arc<Connection> {
        &self.conn
    }

    pub fn object_store(&self) -> Option<&Arc<dyn ObjectStore>> {
        self.store.as_ref()
    }

    /// Replaces the object store used for claim checks.
    pub fn set_object_store(&mut self, store: Option<Arc<dyn ObjectStore>>) {
        self.store = store;
    }

    /// Chunk size in effect after clamping to the service's frame limit.
    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.set_chunk_size(chunk_size);
        self
    }

    /// Sets the chunk size, clamped to the service's frame limit. Returns the size in effect.
    pub fn set_chunk_size(&mut self, chunk_size: usize) -> usize {
        self.chunk_size = chunk_size.clamp(1, self.frame_limit);
        self.chunk_size
    }

    fn publish_one(&self, msg: &DataMessage) -> Result<(u32, u64)> {
        let ack = self.conn.publish(msg)?;
        Ok((field(&ack, "partition")?, field(&ack, "offset")?))
    }

    /// Publishes a message, choosing plain, chunked or claim-check transport by size.
    ///
    /// Payloads above the coat-check threshold go to the object store. Payloads that
    /// fit the service's frame limit go as one message. Anything in between is split
    /// into parts of the configured chunk size.
    pub fn produce(&self, msg: DataMessage) -> Result<PublishReceipt> {
        if self.conn.is_closed() {
            return Err(Error::NotConnected("connection closed".into()));
        }
        let topic = msg.topic.clone();
        let bytes = msg.payload.len();
        if bytes > self.config.coat_check_threshold {
            let store = self.store.as_ref().ok_or_else(|| Error::StoreUnavailable("no object store configured".into()))?;
            let ticket = store.put(&msg.payload)?;
            let (partition, offset) = self.publish_one(&ticket.to_message(msg))?;
            return Ok(PublishReceipt { topic, partition, offset, parts: 1, bytes, path: PublishPath::ClaimCheck });
        }
        let parts = if bytes > self.frame_limit { chunk_message(msg, self.chunk_size) } else { vec![msg] };
        let path = if parts.len() > 1 { PublishPath::Chunked } else { PublishPath::Plain };
        let mut last = (0, 0);
        for p in &parts {
            last = self.publish_one(p)?;
        }
        Ok(PublishReceipt { topic, partition: last.0, offset: last.1, parts: parts.len(), bytes, path })
    }

    pub fn publish(&self, topic: &str, payload: Vec<u8>) -> Result<PublishReceipt> {
        self.produce(DataMessage::new(topic, payload))
    }

    pub fn subscribe(&self, topics: &[&str], opts: SubscribeOptions) -> Result<Consumer> {
        Consumer::subscribe(self.conn.clone(), self.store.clone(), topics.iter().map(|t| t.to_string()).collect(), opts)
    }

    pub fn register(&self, namespace: &str, device_id: &str, schema: Option<Value>) -> Result<DeviceRegistration> {
        let reply = self.conn.request(&Request::Register {
            namespace: namespace.into(),
            device_id: device_id.into(),
            schema,
        })?;
        field(&reply, "registration")
    }

    pub fn create_topic(&self, topic: &str, partitions: Option<u32>) -> Result<TopicInfo> {
        field(&self.conn.request(&Request::TopicCreate { topic: topic.into(), partitions })?, "topic")
    }

    /// Creates the topic unless it already exists.
    pub fn ensure_topic(&self, topic: &str, partitions: Option<u32>) -> Result<()> {
        match self.create_topic(topic, partitions) {
            Ok(_) | Err(Error::TopicExists(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    /// Infers a schema from a JSON sample and registers it for `topic`.
    pub fn attach_schema(&self, topic: &str, sample: &[u8], validate: bool) -> Result<SchemaDoc> {
        let schema = schema::infer_from_bytes(sample)?;
        field(&self.conn.request(&Request::SchemaAttach { topic: topic.into(), schema, validate })?, "schema")
    }

    pub fn list(&self, kind: ListKind) -> Result<Value> {
        Ok(self.conn.request(&Request::List { kind })?["items"].take())
    }

    pub fn topics(&self) -> Result<Vec<TopicInfo>> {
        serde_json::from_value(self.list(ListKind::Topics)?).map_err(|e| Error::Protocol(e.to_string()))
    }

    pub fn experiment_start(&self, topics: &[&str]) -> Result<ExperimentDef> {
        let topics = topics.iter().map(|t| t.to_string()).collect();
        field(&self.conn.request(&Request::ExperimentStart { topics })?, "experiment")
    }

    /// Returns the archive directory and its manifest.
    pub fn experiment_stop(&self, id: &str) -> Result<(PathBuf, Manifest)> {
        let reply = self.conn.request_with_timeout(&Request::ExperimentStop { id: id.into() }, None)?;
        Ok((field(&reply, "path")?, field(&reply, "manifest")?))
    }

    pub fn replay(&self, id_or_path: &str, speed: f64, target: BTreeMap<String, String>) -> Result<ReplayReport> {
        let req = Request::ExperimentReplay { id: id_or_path.into(), speed, target };
        field(&self.conn.request_with_timeout(&req, None)?, "report")
    }

    pub fn connector_create(&self, config: ConnectorConfig) -> Result<Value> {
        Ok(self.conn.request(&Request::ConnectorCreate { config })?["connector"].take())
    }

    pub fn connector_delete(&self, name: &str) -> Result<()> {
        self.conn.request(&Request::ConnectorDelete { name: name.into() }).map(drop)
    }

    pub fn close(&self) {
        self.conn.close();
    }
}
