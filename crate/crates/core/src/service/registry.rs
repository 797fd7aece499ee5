//! Devices and schemas known to the service, persisted beside the topic logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema;
use crate::wire::message::is_valid_identifier;
use crate::wire::{now_ns, topic_for};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub device_id: String,
    pub namespace: String,
    pub topic: String,
    pub schema_id: Option<String>,
    pub registered_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub schema_id: String,
    pub topic: String,
    pub body: Value,
    pub version: u32,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryState {
    devices: BTreeMap<String, DeviceRegistration>,
    schemas: BTreeMap<String, Vec<SchemaDoc>>,
    validate: BTreeMap<String, bool>,
}

pub struct Registry {
    path: PathBuf,
    state: Mutex<RegistryState>,
}

impl Registry {
    pub fn open(path: PathBuf) -> Result<Registry> {
        let state = if path.is_file() { serde_json::from_slice(&fs::read(&path)?)? } else { RegistryState::default() };
        Ok(Registry { path, state: Mutex::new(state) })
    }

    fn save(&self, state: &RegistryState) -> Result<()> {
        let tmp = self.path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(state)?)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    /// Records a device. Re-registering with an identical schema returns the existing
    /// registration; a different schema is `AlreadyRegistered`.
    pub fn register(&self, namespace: &str, device_id: &str, schema: Option<&Value>) -> Result<DeviceRegistration> {
        if !is_valid_identifier(namespace) || !is_valid_identifier(device_id) {
            return Err(Error::InvalidName(format!("{namespace}.{device_id}")));
        }
        let parsed = schema.map(schema::parse_schema).transpose()?;
        let topic = topic_for(namespace, device_id);
        let key = format!("{namespace}.{device_id}");
        let mut st = self.state.lock().unwrap();
        if let Some(existing) = st.devices.get(&key) {
            let current = st.schemas.get(&topic).and_then(|v| v.last()).map(|d| &d.body);
            if parsed.is_none() || parsed.as_ref() == current {
                return Ok(existing.clone());
            }
            return Err(Error::AlreadyRegistered(format!("{key} is registered with a different schema")));
        }
        let schema_id = match parsed {
            Some(body) => Some(Self::push_schema(&mut st, &topic, body).schema_id),
            None => None,
        };
        let reg = DeviceRegistration {
            device_id: device_id.into(),
            namespace: namespace.into(),
            topic,
            schema_id,
            registered_at: now_ns(),
        };
        st.devices.insert(key, reg.clone());
        self.save(&st)?;
        Ok(reg)
    }

    fn push_schema(st: &mut RegistryState, topic: &str, body: Value) -> SchemaDoc {
        let versions = st.schemas.entry(topic.to_string()).or_default();
        let version = versions.last().map_or(1, |d| d.version + 1);
        let doc = SchemaDoc { schema_id: format!("{topic}/v{version}"), topic: topic.into(), body, version };
        versions.push(doc.clone());
        doc
    }

    /// Stores a new schema version for `topic`; `validate` turns publish-time checks on or off.
    pub fn attach_schema(&self, topic: &str, body: &Value, validate: bool) -> Result<SchemaDoc> {
        let body = schema::parse_schema(body)?;
        let mut st = self.state.lock().unwrap();
        let doc = Self::push_schema(&mut st, topic, body);
        st.validate.insert(topic.to_string(), validate);
        for dev in st.devices.values_mut().filter(|d| d.topic == topic) {
            dev.schema_id = Some(doc.schema_id.clone());
        }
        self.save(&st)?;
        Ok(doc)
    }

    pub fn set_validation(&self, topic: &str, on: bool) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        st.validate.insert(topic.to_string(), on);
        self.save(&st)
    }

    /// The schema to enforce for `topic`, if validation is on.
    pub fn enforced_schema(&self, topic: &str) -> Option<Value> {
        let st = self.state.lock().unwrap();
        if !st.validate.get(topic).copied().unwrap_or(false) {
            return None;
        }
        st.schemas.get(topic).and_then(|v| v.last()).map(|d| d.body.clone())
    }

    pub fn latest_schema(&self, topic: &str) -> Option<SchemaDoc> {
        self.state.lock().unwrap().schemas.get(topic).and_then(|v| v.last()).cloned()
    }

    pub fn devices(&self) -> Vec<DeviceRegistration> {
        self.state.lock().unwrap().devices.values().cloned().collect()
    }
}
