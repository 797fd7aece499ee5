//! Service configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::broker::{BrokerConfig, RetentionPolicy, DEFAULT_PARTITIONS};
use crate::wire::DEFAULT_MAX_FRAME_PAYLOAD;
use crate::{Error, Result};

pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:7470";
pub const DEFAULT_HEARTBEAT_SECS: f64 = 5.0;
/// Consecutive missed heartbeats after which a session is considered dead.
pub const MISSED_HEARTBEATS: u32 = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    pub max_frame_payload: usize,
    pub default_partitions: u32,
    pub heartbeat_secs: f64,
    /// Defaults to `<data_dir>/archives`.
    pub archive_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/objects`.
    pub object_store_dir: Option<PathBuf>,
    pub auth_token: Option<String>,
    /// Applied to every topic on a timer when set.
    pub retention: Option<RetentionPolicy>,
    pub retention_interval_secs: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_addr: DEFAULT_LISTEN_ADDR.into(),
            data_dir: PathBuf::from("mdml-data"),
            max_frame_payload: DEFAULT_MAX_FRAME_PAYLOAD,
            default_partitions: DEFAULT_PARTITIONS,
            heartbeat_secs: DEFAULT_HEARTBEAT_SECS,
            archive_dir: None,
            object_store_dir: None,
            auth_token: None,
            retention: None,
            retention_interval_secs: 10.0,
        }
    }
}

impl ServiceConfig {
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig { data_dir: data_dir.into(), ..Default::default() }
    }

    pub fn load(path: &Path) -> Result<ServiceConfig> {
        let raw = std::fs::read(path)?;
        let cfg: ServiceConfig =
            serde_json::from_slice(&raw).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.max_frame_payload == 0 || self.max_frame_payload > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("max_frame_payload {} out of range", self.max_frame_payload)));
        }
        if self.default_partitions == 0 {
            return Err(Error::InvalidArgument("default_partitions must be at least 1".into()));
        }
        if !(self.heartbeat_secs > 0.0) || !(self.retention_interval_secs > 0.0) {
            return Err(Error::InvalidArgument("intervals must be positive".into()));
        }
        Ok(())
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.archive_dir.clone().unwrap_or_else(|| self.data_dir.join("archives"))
    }

    pub fn object_store_dir(&self) -> PathBuf {
        self.object_store_dir.clone().unwrap_or_else(|| self.data_dir.join("objects"))
    }

    pub fn heartbeat(&self) -> Duration {
        Duration::from_secs_f64(self.heartbeat_secs)
    }

    pub fn liveness_timeout(&self) -> Duration {
        self.heartbeat() * MISSED_HEARTBEATS
    }

    pub fn broker_config(&self) -> BrokerConfig {
        let mut b = BrokerConfig::new(&self.data_dir);
        b.default_partitions = self.default_partitions;
        b.max_frame_payload = self.max_frame_payload;
        b
    }
}
