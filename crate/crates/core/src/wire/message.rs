use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameError, FrameType};

/// Suffix reserved for dead-letter topics.
pub const DLQ_SUFFIX: &str = ".dlq";

pub type Headers = BTreeMap<String, String>;

/// One timestamped, headered payload bound to a topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataMessage {
    pub topic: String,
    pub key: Option<Vec<u8>>,
    /// Nanoseconds since the Unix epoch, assigned at publish time.
    pub ts_pub: i64,
    pub headers: Headers,
    pub payload: Vec<u8>,
}

impl DataMessage {
    pub fn new(topic: impl Into<String>, payload: Vec<u8>) -> Self {
        DataMessage { topic: topic.into(), key: None, ts_pub: now_ns(), headers: Headers::new(), payload }
    }

    pub fn with_key(mut self, key: impl Into<Vec<u8>>) -> Self {
        self.key = Some(key.into());
        self
    }

    pub fn with_header(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.headers.insert(k.into(), v.into());
        self
    }

    pub fn header(&self, k: &str) -> Option<&str> {
        self.headers.get(k).map(String::as_str)
    }

    /// Builds a DATA frame; `routing` adds the delivery fields the service attaches.
    pub fn to_frame(&self, routing: Routing) -> Frame {
        Frame { frame_type: FrameType::Data, flags: 0, header: self.frame_header(routing), payload: self.payload.clone() }
    }

    pub fn into_frame(self, routing: Routing) -> Frame {
        let header = self.frame_header(routing);
        Frame { frame_type: FrameType::Data, flags: 0, header, payload: self.payload }
    }

    /// The JSON header of this message's DATA frame.
    pub fn frame_header(&self, routing: Routing) -> Vec<u8> {
        let env = EnvelopeRef {
            topic: &self.topic,
            key: self.key.as_ref().map(|k| B64.encode(k)),
            ts: self.ts_pub,
            hdr: &self.headers,
            cid: routing.cid,
            sub: routing.sub,
            part: routing.partition,
            off: routing.offset,
            generation: routing.generation,
        };
        serde_json::to_vec(&env).expect("data header serializes")
    }

    pub fn from_frame(frame: Frame) -> Result<(DataMessage, Routing), FrameError> {
        if frame.frame_type != FrameType::Data {
            return Err(FrameError::MalformedHeader("expected a DATA frame".into()));
        }
        let env: Envelope =
            serde_json::from_slice(&frame.header).map_err(|e| FrameError::MalformedHeader(e.to_string()))?;
        let key = match env.key {
            Some(k) => Some(B64.decode(k).map_err(|e| FrameError::MalformedHeader(format!("key: {e}")))?),
            None => None,
        };
        let routing = Routing {
            cid: env.cid,
            sub: env.sub,
            partition: env.part,
            offset: env.off,
            generation: env.generation,
        };
        let msg = DataMessage { topic: env.topic, key, ts_pub: env.ts, headers: env.hdr, payload: frame.payload };
        Ok((msg, routing))
    }
}

/// Delivery metadata carried next to a message on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Routing {
    pub cid: Option<u64>,
    pub sub: Option<u64>,
    pub partition: Option<u32>,
    pub offset: Option<u64>,
    pub generation: Option<u64>,
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    topic: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    ts: i64,
    hdr: &'a Headers,
    #[serde(skip_serializing_if = "Option::is_none")]
    cid: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sub: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    part: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    off: Option<u64>,
    #[serde(rename = "gen", skip_serializing_if = "Option::is_none")]
    generation: Option<u64>,
}

#[derive(Deserialize)]
struct Envelope {
    topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    ts: i64,
    #[serde(default)]
    hdr: Headers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cid: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sub: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    part: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    off: Option<u64>,
    #[serde(default, rename = "gen", skip_serializing_if = "Option::is_none")]
    generation: Option<u64>,
}

pub fn now_ns() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as i64).unwrap_or(1)
}

fn is_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// `mdml.<namespace>.<device>`, optionally followed by the dead-letter suffix.
pub fn is_valid_topic(name: &str) -> bool {
    let base = name.strip_suffix(DLQ_SUFFIX).unwrap_or(name);
    let mut parts = base.split('.');
    matches!(
        (parts.next(), parts.next(), parts.next(), parts.next()),
        (Some("mdml"), Some(ns), Some(dev), None) if is_segment(ns) && is_segment(dev)
    )
}

pub fn is_valid_identifier(s: &str) -> bool {
    is_segment(s)
}

pub fn topic_for(namespace: &str, device_id: &str) -> String {
    format!("mdml.{namespace}.{device_id}")
}
