//! Control-plane messages exchanged as CONTROL frame headers.
//!
//! Every request carries an `op` and usually a `cid` correlation id; the reply
//! echoes the `cid` with `op` set to `ok` or `error`. A DATA frame sent by a client
//! is a publish and is answered with an `ack` (or `error`) carrying the same `cid`.
//! The service pushes subscription data as DATA frames tagged with `sub`, `part`,
//! `off` and `gen`, and signals the end of a subscription with `sub.end`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::broker::StartPosition;
use crate::connectors::ConnectorConfig;
use crate::wire::Frame;
use crate::Error;

pub const OP_OK: &str = "ok";
pub const OP_ERROR: &str = "error";
pub const OP_ACK: &str = "ack";
pub const OP_SUB_END: &str = "sub.end";
pub const OP_REBALANCE: &str = "rebalance";

/// Bytes a subscription may have in flight before the client grants more credit.
pub const DEFAULT_WINDOW: u64 = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubscribeMode {
    #[default]
    Indefinite,
    /// Close after this many delivered records.
    MaxCount { n: u64 },
    /// Close after this long without a delivery.
    IdleTimeout { ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscribeSpec {
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default = "latest")]
    pub start: StartPosition,
    #[serde(default)]
    pub mode: SubscribeMode,
    /// Initial flow-control credit in bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    /// Subscription id chosen by the client; assigned by the service when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<u64>,
}

fn latest() -> StartPosition {
    StartPosition::Latest
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListKind {
    Devices,
    Topics,
    Groups,
    Experiments,
    Connectors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Request {
    #[serde(rename = "hello")]
    Hello {
        #[serde(default)]
        token: Option<String>,
    },
    #[serde(rename = "ping")]
    Ping {},
    #[serde(rename = "register")]
    Register {
        namespace: String,
        device_id: String,
        #[serde(default)]
        schema: Option<Value>,
    },
    #[serde(rename = "topic.create")]
    TopicCreate {
        topic: String,
        #[serde(default)]
        partitions: Option<u32>,
    },
    #[serde(rename = "subscribe")]
    Subscribe(SubscribeSpec),
    #[serde(rename = "unsubscribe")]
    Unsubscribe { sub: u64 },
    #[serde(rename = "commit")]
    Commit { sub: u64, topic: String, partition: u32, offset: u64, generation: u64 },
    #[serde(rename = "heartbeat")]
    Heartbeat {},
    /// Grants a subscription more flow-control credit. Never answered.
    #[serde(rename = "credit")]
    Credit { sub: u64, bytes: u64 },
    #[serde(rename = "list")]
    List { kind: ListKind },
    #[serde(rename = "schema.attach")]
    SchemaAttach {
        topic: String,
        schema: Value,
        #[serde(default)]
        validate: bool,
    },
    #[serde(rename = "experiment.start")]
    ExperimentStart { topics: Vec<String> },
    #[serde(rename = "experiment.stop")]
    ExperimentStop { id: String },
    /// `id` is an experiment id known to the service or an archive directory path.
    #[serde(rename = "experiment.replay")]
    ExperimentReplay {
        id: String,
        #[serde(default = "real_time")]
        speed: f64,
        #[serde(default)]
        target: BTreeMap<String, String>,
    },
    #[serde(rename = "connector.create")]
    ConnectorCreate { config: ConnectorConfig },
    #[serde(rename = "connector.delete")]
    ConnectorDelete { name: String },
}

fn real_time() -> f64 {
    1.0
}

impl Request {
    /// Header object for this request with `cid` attached.
    pub fn to_header(&self, cid: u64) -> Value {
        let mut v = serde_json::to_value(self).expect("request serializes");
        v["cid"] = json!(cid);
        v
    }

    pub fn to_frame(&self, cid: u64) -> Frame {
        Frame::control(&self.to_header(cid))
    }
}

/// Parses a CONTROL header into its correlation id and request.
pub fn parse_request(header: &Value) -> (Option<u64>, std::result::Result<Request, Error>) {
    let cid = header.get("cid").and_then(Value::as_u64);
    let req = serde_json::from_value::<Request>(header.clone()).map_err(|e| {
        let op = header.get("op").and_then(Value::as_str).unwrap_or("?");
        Error::InvalidArgument(format!("bad {op} request: {e}"))
    });
    (cid, req)
}

pub fn ok_reply(cid: Option<u64>, mut body: Value) -> Value {
    if !body.is_object() {
        body = json!({ "result": body });
    }
    body["op"] = json!(OP_OK);
    if let Some(c) = cid {
        body["cid"] = json!(c);
    }
    body
}

pub fn error_reply(cid: Option<u64>, err: &Error) -> Value {
    let mut v = json!({"op": OP_ERROR, "code": err.code(), "message": err.to_string()});
    if let Some(c) = cid {
        v["cid"] = json!(c);
    }
    v
}

/// Turns an `error` reply back into an [`Error`].
pub fn reply_error(reply: &Value) -> Option<Error> {
    if reply.get("op").and_then(Value::as_str) != Some(OP_ERROR) {
        return None;
    }
    let code = reply.get("code").and_then(Value::as_str).unwrap_or("Protocol");
    let message = reply.get("message").and_then(Value::as_str).unwrap_or_default();
    // The message is the error's display text; drop the kind prefix it will get again.
    let prefix = Error::from_wire(code, String::new()).to_string();
    Some(Error::from_wire(code, message.strip_prefix(prefix.as_str()).unwrap_or(message).to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_replies_keep_kind_and_text() {
        let e = Error::UnknownTopic("mdml.a.b".into());
        let back = reply_error(&error_reply(Some(3), &e)).unwrap();
        assert!(matches!(&back, Error::UnknownTopic(m) if m == "mdml.a.b"));
        assert_eq!(back.to_string(), e.to_string());
    }

    #[test]
    fn requests_round_trip_through_headers() {
        let reqs = vec![
            Request::Hello { token: None },
            Request::Heartbeat {},
            Request::Subscribe(SubscribeSpec {
                topics: vec!["mdml.a.b".into()],
                group: Some("g".into()),
                start: StartPosition::At(4),
                mode: SubscribeMode::MaxCount { n: 5 },
                window: None,
                sub: Some(3),
            }),
            Request::Credit { sub: 1, bytes: 1 << 20 },
            Request::List { kind: ListKind::Topics },
            Request::ExperimentReplay { id: "x".into(), speed: 0.0, target: BTreeMap::new() },
        ];
        for r in reqs {
            let (cid, back) = parse_request(&r.to_header(9));
            assert_eq!(cid, Some(9));
            assert_eq!(back.unwrap(), r);
        }
    }

    #[test]
    fn subscribe_defaults() {
        let (_, r) = parse_request(&json!({"op": "subscribe", "cid": 1, "topics": ["mdml.a.b"]}));
        let Request::Subscribe(s) = r.unwrap() else { panic!() };
        assert_eq!(s.start, StartPosition::Latest);
        assert_eq!(s.mode, SubscribeMode::Indefinite);
        let (_, r) = parse_request(&json!({"op": "subscribe", "topics": ["t"], "start": "earliest",
            "mode": {"kind": "idle_timeout", "ms": 250}}));
        let Request::Subscribe(s) = r.unwrap() else { panic!() };
        assert_eq!((s.start, s.mode), (StartPosition::Earliest, SubscribeMode::IdleTimeout { ms: 250 }));
    }

    #[test]
    fn unknown_op_and_errors() {
        let (cid, r) = parse_request(&json!({"op": "explode", "cid": 2}));
        assert_eq!(cid, Some(2));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let reply = error_reply(Some(2), &Error::UnknownTopic("mdml.x.y".into()));
        assert_eq!(reply["cid"], 2);
        assert!(matches!(reply_error(&reply), Some(Error::UnknownTopic(m)) if m.contains("mdml.x.y")));
        assert!(reply_error(&ok_reply(Some(1), json!({}))).is_none());
    }
}
