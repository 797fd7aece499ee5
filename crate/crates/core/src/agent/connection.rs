//! One TCP session with the service, shared by everything an agent does.
//!
//! A reader thread routes replies to the callers waiting on their correlation ids
//! and subscription traffic to per-subscription channels; it never blocks on a
//! slow consumer. A heartbeat thread keeps the session alive.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use crate::service::protocol::{reply_error, Request, OP_ACK, OP_ERROR, OP_OK, OP_REBALANCE, OP_SUB_END};
use crate::wire::{DataMessage, Frame, FrameCodec, FrameType, Routing};
use crate::{Error, Result};

const SOCKET_BUFFER: usize = 256 * 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// Traffic for one subscription.
#[derive(Debug)]
pub enum SubEvent {
    Data { message: DataMessage, routing: Routing, frame_len: usize },
    Rebalance { generation: u64 },
    End { reason: String },
    Disconnected,
}

struct SubSlot {
    tx: Sender<SubEvent>,
    /// Newest group generation announced for this subscription.
    generation: Arc<AtomicU64>,
}

struct Shared {
    writer: Mutex<BufWriter<TcpStream>>,
    pending: Mutex<HashMap<u64, Sender<Value>>>,
    subs: Mutex<HashMap<u64, SubSlot>>,
    closed: AtomicBool,
}

impl Shared {
    fn send(&self, frame: &Frame) -> Result<()> {
        self.send_parts(frame.frame_type, &frame.header, &frame.payload)
    }

    fn send_parts(&self, frame_type: FrameType, header: &[u8], payload: &[u8]) -> Result<()> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(Error::NotConnected("connection closed".into()));
        }
        let mut w = self.writer.lock().unwrap();
        FrameCodec::new(u32::MAX as usize).write_parts(&mut *w, frame_type, header, payload)?;
        w.flush().map_err(|e| Error::NotConnected(e.to_string()))
    }

    fn disconnect(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.pending.lock().unwrap().clear();
        for (_, slot) in self.subs.lock().unwrap().drain() {
            let _ = slot.tx.send(SubEvent::Disconnected);
        }
    }
}

pub struct Connection {
    shared: Arc<Shared>,
    stream: TcpStream,
    next_cid: AtomicU64,
    next_sub: AtomicU64,
    hello: Value,
    request_timeout: Duration,
    reader: Mutex<Option<JoinHandle<()>>>,
    heartbeat: Mutex<Option<JoinHandle<()>>>,
}

fn reader_loop(shared: Arc<Shared>, stream: TcpStream) {
    let codec = FrameCodec::new(u32::MAX as usize);
    let mut r = BufReader::with_capacity(SOCKET_BUFFER, stream);
    loop {
        let frame = match codec.read_from(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                if !shared.closed.load(Ordering::SeqCst) {
                    log::debug!("connection lost: {e}");
                }
                break;
            }
        };
        match frame.frame_type {
            FrameType::Data => {
                let frame_len = frame.encoded_len();
                let (message, routing) = match DataMessage::from_frame(frame) {
                    Ok(m) => m,
                    Err(e) => {
                        log::warn!("dropping malformed data frame: {e}");
                        continue;
                    }
                };
                let Some(sub) = routing.sub else { continue };
                if let Some(slot) = shared.subs.lock().unwrap().get(&sub) {
                    let _ = slot.tx.send(SubEvent::Data { message, routing, frame_len });
                }
            }
            FrameType::Control => {
                let Ok(v) = frame.header_value() else { continue };
                let op = v.get("op").and_then(Value::as_str).unwrap_or_default();
                match op {
                    OP_OK | OP_ERROR | OP_ACK => match v.get("cid").and_then(Value::as_u64) {
                        Some(cid) => {
                            if let Some(tx) = shared.pending.lock().unwrap().remove(&cid) {
                                let _ = tx.send(v);
                            }
                        }
                        None if op == OP_ERROR => log::warn!("service error: {}", v["message"]),
                        None => {}
                    },
                    OP_SUB_END => {
                        let sub = v["sub"].as_u64().unwrap_or_default();
                        if let Some(slot) = shared.subs.lock().unwrap().remove(&sub) {
                            let reason = v["reason"].as_str().unwrap_or_default().to_string();
                            let _ = slot.tx.send(SubEvent::End { reason });
                        }
                    }
                    OP_REBALANCE => {
                        let sub = v["sub"].as_u64().unwrap_or_default();
                        let generation = v["generation"].as_u64().unwrap_or_default();
                        if let Some(slot) = shared.subs.lock().unwrap().get(&sub) {
                            slot.generation.fetch_max(generation, Ordering::SeqCst);
                            let _ = slot.tx.send(SubEvent::Rebalance { generation });
                        }
                    }
                    other => log::debug!("ignoring control op {other:?}"),
                }
            }
        }
    }
    shared.disconnect();
}

fn heartbeat_loop(shared: Arc<Shared>, every: Duration) {
    let step = Duration::from_millis(50);
    let mut waited = Duration::ZERO;
    while !shared.closed.load(Ordering::SeqCst) {
        std::thread::sleep(step);
        waited += step;
        if waited >= every {
            waited = Duration::ZERO;
            if shared.send(&Frame::control(&json!({"op": "heartbeat"}))).is_err() {
                return;
            }
        }
    }
}

impl Connection {
    /// Connects and says hello. Any failure to reach the service is `BrokerUnreachable`.
    pub fn open(addr: &str, token: Option<&str>, request_timeout: Duration) -> Result<Connection> {
        let unreachable = |e: &dyn std::fmt::Display| Error::BrokerUnreachable(format!("{addr}: {e}"));
        let target = addr.to_socket_addrs().map_err(|e| unreachable(&e))?.next().ok_or_else(|| unreachable(&"no address"))?;
        let stream = TcpStream::connect_timeout(&target, CONNECT_TIMEOUT).map_err(|e| unreachable(&e))?;
        stream.set_nodelay(true)?;
        let shared = Arc::new(Shared {
            writer: Mutex::new(BufWriter::with_capacity(SOCKET_BUFFER, stream.try_clone()?)),
            pending: Mutex::default(),
            subs: Mutex::default(),
            closed: AtomicBool::new(false),
        });
        let (s, rs) = (shared.clone(), stream.try_clone()?);
        let reader = std::thread::Builder::new().name("agent-reader".into()).spawn(move || reader_loop(s, rs))?;
        let mut conn = Connection {
            shared,
            stream,
            next_cid: AtomicU64::new(1),
            next_sub: AtomicU64::new(1),
            hello: Value::Null,
            request_timeout,
            reader: Mutex::new(Some(reader)),
            heartbeat: Mutex::new(None),
        };
        conn.hello = conn.request(&Request::Hello { token: token.map(str::to_string) })?;
        let every = Duration::from_secs_f64(conn.hello["heartbeat_secs"].as_f64().unwrap_or(5.0));
        let s = conn.shared.clone();
        *conn.heartbeat.lock().unwrap() =
            Some(std::thread::Builder::new().name("agent-heartbeat".into()).spawn(move || heartbeat_loop(s, every))?);
        Ok(conn)
    }

    /// The service's reply to hello: limits, heartbeat interval, object store location.
    pub fn hello(&self) -> &Value {
        &self.hello
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }

    fn next_cid(&self) -> u64 {
        self.next_cid.fetch_add(1, Ordering::SeqCst)
    }

    fn await_reply(&self, cid: u64, rx: Receiver<Value>, timeout: Option<Duration>) -> Result<Value> {
        let reply = match timeout {
            Some(t) => rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => {
                    self.shared.pending.lock().unwrap().remove(&cid);
                    Error::Timeout(format!("no reply to request {cid} within {t:?}"))
                }
                RecvTimeoutError::Disconnected => Error::NotConnected("connection closed".into()),
            })?,
            None => rx.recv().map_err(|_| Error::NotConnected("connection closed".into()))?,
        };
        match reply_error(&reply) {
            Some(e) => Err(e),
            None => Ok(reply),
        }
    }

    fn send_tracked(&self, send: impl FnOnce(u64) -> Result<()>) -> Result<(u64, Receiver<Value>)> {
        let cid = self.next_cid();
        let (tx, rx) = channel();
        self.shared.pending.lock().unwrap().insert(cid, tx);
        if let Err(e) = send(cid) {
            self.shared.pending.lock().unwrap().remove(&cid);
            return Err(e);
        }
        Ok((cid, rx))
    }

    pub fn request(&self, req: &Request) -> Result<Value> {
        self.request_with_timeout(req, Some(self.request_timeout))
    }

    /// `None` waits indefinitely; used for replays, which last as long as the archive.
    pub fn request_with_timeout(&self, req: &Request, timeout: Option<Duration>) -> Result<Value> {
        let (cid, rx) = self.send_tracked(|cid| self.shared.send(&req.to_frame(cid)))?;
        self.await_reply(cid, rx, timeout)
    }

    /// Sends a request that the service never answers.
    pub fn notify(&self, req: &Request) -> Result<()> {
        self.shared.send(&Frame::control(&serde_json::to_value(req)?))
    }

    /// Publishes one wire message and waits for its acknowledgement.
    pub fn publish(&self, msg: &DataMessage) -> Result<Value> {
        let (cid, rx) = self.send_tracked(|cid| {
            let header = msg.frame_header(Routing { cid: Some(cid), ..Routing::default() });
            self.shared.send_parts(FrameType::Data, &header, &msg.payload)
        })?;
        self.await_reply(cid, rx, Some(self.request_timeout))
    }

    /// Subscription ids are chosen here so the channel exists before any data arrives.
    ///
    /// The returned counter tracks the newest group generation announced for the
    /// subscription; it moves as soon as the announcement is read off the socket.
    pub fn register_subscription(&self) -> (u64, Receiver<SubEvent>, Arc<AtomicU64>) {
        let id = self.next_sub.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = channel();
        let generation = Arc::new(AtomicU64::new(0));
        self.shared.subs.lock().unwrap().insert(id, SubSlot { tx, generation: generation.clone() });
        (id, rx, generation)
    }

    pub fn drop_subscription(&self, id: u64) {
        self.shared.subs.lock().unwrap().remove(&id);
    }

    pub fn close(&self) {
        if !self.shared.closed.swap(true, Ordering::SeqCst) {
            let _ = self.stream.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.reader.lock().unwrap().take() {
            let _ = h.join();
        }
        if let Some(h) = self.heartbeat.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
    }
}
