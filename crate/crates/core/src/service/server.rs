//! TCP front end: one reader thread per connection, one delivery thread per
//! subscription, a reaper for silent sessions and an optional retention timer.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::config::ServiceConfig;
use super::protocol::{
    error_reply, ok_reply, parse_request, ListKind, Request, SubscribeMode, SubscribeSpec, DEFAULT_WINDOW, OP_ACK,
    OP_REBALANCE, OP_SUB_END,
};
use super::registry::Registry;
use super::schema;
use crate::broker::{Broker, RoundRobin, TopicPartition};
use crate::connectors::ConnectorManager;
use crate::experiment::{ExperimentManager, ReplayOptions};
use crate::wire::chunk::CHUNK_ID;
use crate::wire::{DataMessage, Frame, FrameCodec, FrameType, Routing};
use crate::{Error, Result};

pub const CONTENT_TYPE: &str = "content-type";
pub const JSON_CONTENT: &str = "application/json";
const REGISTRY_FILE: &str = "_registry.json";
const FETCH_BATCH: usize = 16;
const IDLE_POLL: Duration = Duration::from_millis(100);
const SOCKET_BUFFER: usize = 256 * 1024;

struct Subscription {
    id: u64,
    member: String,
    spec: SubscribeSpec,
    credit: Mutex<i64>,
    credit_cv: Condvar,
    closed: AtomicBool,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Subscription {
    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.credit_cv.notify_all();
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn grant(&self, bytes: u64) {
        *self.credit.lock().unwrap() += bytes.min(i64::MAX as u64 / 2) as i64;
        self.credit_cv.notify_all();
    }

    /// Blocks until there is credit for at least one more frame. `false` once closed.
    fn await_credit(&self) -> bool {
        let mut c = self.credit.lock().unwrap();
        while *c <= 0 {
            if self.is_closed() {
                return false;
            }
            c = self.credit_cv.wait_timeout(c, IDLE_POLL).unwrap().0;
        }
        !self.is_closed()
    }

    fn spend(&self, bytes: usize) {
        *self.credit.lock().unwrap() -= bytes as i64;
    }
}

struct Session {
    id: u64,
    peer: String,
    stream: TcpStream,
    writer: Mutex<BufWriter<TcpStream>>,
    last_seen: Mutex<Instant>,
    subs: Mutex<HashMap<u64, Arc<Subscription>>>,
    next_sub: AtomicU64,
    closed: AtomicBool,
}

impl Session {
    fn touch(&self) {
        *self.last_seen.lock().unwrap() = Instant::now();
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn kill(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let _ = self.stream.shutdown(Shutdown::Both);
        for s in self.subs.lock().unwrap().values() {
            s.close();
        }
    }

    fn send(&self, frame: &Frame) -> Result<()> {
        if self.is_closed() {
            return Err(Error::NotConnected(format!("session {} closed", self.id)));
        }
        let mut w = self.writer.lock().unwrap();
        let out = FrameCodec::new(u32::MAX as usize).write_to(&mut *w, frame).map_err(Error::from).and_then(|_| {
            w.flush()?;
            Ok(())
        });
        if out.is_err() {
            drop(w);
            self.kill();
        }
        out
    }

    fn send_control(&self, header: &Value) {
        if let Err(e) = self.send(&Frame::control(header)) {
            log::debug!("session {}: dropping reply: {e}", self.id);
        }
    }
}

/// Shared state behind a running server.
pub struct Service {
    config: ServiceConfig,
    broker: Arc<Broker>,
    registry: Registry,
    experiments: ExperimentManager,
    connectors: ConnectorManager,
    sessions: Mutex<HashMap<u64, Arc<Session>>>,
    session_threads: Mutex<Vec<JoinHandle<()>>>,
    next_session: AtomicU64,
    stopping: AtomicBool,
}

/// A listening service. Dropping it shuts the service down.
pub struct Server {
    service: Arc<Service>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn start(config: ServiceConfig) -> Result<Server> {
        config.check()?;
        let broker = Arc::new(Broker::open(config.broker_config())?);
        let registry = Registry::open(config.data_dir.join(REGISTRY_FILE))?;
        let experiments = ExperimentManager::new(broker.clone(), config.archive_dir())?;
        std::fs::create_dir_all(config.object_store_dir())?;
        let connectors = ConnectorManager::open(broker.clone())?;
        let listener = TcpListener::bind(&config.listen_addr)
            .map_err(|e| Error::BrokerUnreachable(format!("cannot listen on {}: {e}", config.listen_addr)))?;
        let addr = listener.local_addr()?;
        let service = Arc::new(Service {
            config,
            broker,
            registry,
            experiments,
            connectors,
            sessions: Mutex::default(),
            session_threads: Mutex::default(),
            next_session: AtomicU64::new(1),
            stopping: AtomicBool::new(false),
        });
        let mut threads = Vec::new();
        let svc = service.clone();
        threads.push(std::thread::Builder::new().name("accept".into()).spawn(move || svc.accept_loop(listener))?);
        let svc = service.clone();
        threads.push(std::thread::Builder::new().name("reaper".into()).spawn(move || svc.reaper_loop())?);
        if let Some(policy) = service.config.retention {
            let svc = service.clone();
            threads.push(
                std::thread::Builder::new().name("retention".into()).spawn(move || svc.retention_loop(policy))?,
            );
        }
        log::info!("listening on {addr}, data in {}", service.config.data_dir.display());
        Ok(Server { service, addr, threads })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(accept) = self.threads.drain(..1).next() {
            let _ = accept.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.service.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let sessions: Vec<Arc<Session>> = self.service.sessions.lock().unwrap().values().cloned().collect();
        for s in sessions {
            s.kill();
        }
        let handles = std::mem::take(&mut *self.service.session_threads.lock().unwrap());
        for h in handles {
            let _ = h.join();
        }
        self.service.connectors.shutdown();
        if let Err(e) = self.service.broker.sync() {
            log::error!("sync on shutdown failed: {e}");
        }
        log::info!("service on {} stopped", self.addr);
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

impl Service {
    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn experiments(&self) -> &ExperimentManager {
        &self.experiments
    }

    pub fn connectors(&self) -> &ConnectorManager {
        &self.connectors
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn stopping(&self) -> bool {
        self.stopping.load(Ordering::SeqCst)
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        for conn in listener.incoming() {
            if self.stopping() {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let svc = self.clone();
            match std::thread::Builder::new().name("session".into()).spawn(move || svc.run_session(stream)) {
                Ok(h) => {
                    let mut threads = self.session_threads.lock().unwrap();
                    threads.retain(|t| !t.is_finished());
                    threads.push(h);
                }
                Err(e) => log::error!("cannot spawn session thread: {e}"),
            }
        }
    }

    fn reaper_loop(self: Arc<Self>) {
        let timeout = self.config.liveness_timeout();
        let tick = (self.config.heartbeat() / 2).min(Duration::from_millis(500));
        while !self.stopping() {
            std::thread::sleep(tick);
            let sessions: Vec<Arc<Session>> = self.sessions.lock().unwrap().values().cloned().collect();
            for s in sessions {
                if s.last_seen.lock().unwrap().elapsed() > timeout {
                    log::warn!("session {} ({}) missed heartbeats, closing", s.id, s.peer);
                    s.kill();
                }
            }
        }
    }

    fn retention_loop(self: Arc<Self>, policy: crate::broker::RetentionPolicy) {
        let interval = Duration::from_secs_f64(self.config.retention_interval_secs);
        let mut last = Instant::now();
        while !self.stopping() {
            std::thread::sleep(Duration::from_millis(100));
            if last.elapsed() < interval {
                continue;
            }
            last = Instant::now();
            for t in self.broker.topics() {
                match self.broker.retention_sweep(&t.name, &policy) {
                    Ok(0) => {}
                    Ok(n) => log::info!("retention removed {n} segments from {}", t.name),
                    Err(e) => log::warn!("retention sweep of {} failed: {e}", t.name),
                }
            }
        }
    }

    fn run_session(self: Arc<Self>, stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let id = self.next_session.fetch_add(1, Ordering::SeqCst);
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        let (write_half, read_half) = match (stream.try_clone(), stream.try_clone()) {
            (Ok(w), Ok(r)) => (w, r),
            _ => return,
        };
        let session = Arc::new(Session {
            id,
            peer,
            stream,
            writer: Mutex::new(BufWriter::with_capacity(SOCKET_BUFFER, write_half)),
            last_seen: Mutex::new(Instant::now()),
            subs: Mutex::default(),
            next_sub: AtomicU64::new(1 << 32),
            closed: AtomicBool::new(false),
        });
        self.sessions.lock().unwrap().insert(id, session.clone());
        log::debug!("session {id} opened from {}", session.peer);
        let max = self.config.max_frame_payload;
        let codec = FrameCodec::new(max.saturating_mul(2).max(max + (1 << 20)));
        let mut reader = BufReader::with_capacity(SOCKET_BUFFER, read_half);
        let mut cursor = RoundRobin::starting_at(id);
        let mut authed = self.config.auth_token.is_none();
        while !session.is_closed() {
            let frame = match codec.read_from(&mut reader) {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    if !session.is_closed() {
                        log::debug!("session {id}: {e}");
                        session.send_control(&error_reply(None, &Error::from(e)));
                    }
                    break;
                }
            };
            session.touch();
            match frame.frame_type {
                FrameType::Data if !authed => {
                    session.send_control(&error_reply(None, &Error::Unauthorized("send hello with a token first".into())));
                    break;
                }
                FrameType::Data => self.publish(&session, frame, &mut cursor),
                FrameType::Control => {
                    let header = match frame.header_value() {
                        Ok(h) => h,
                        Err(e) => {
                            session.send_control(&error_reply(None, &Error::from(e)));
                            continue;
                        }
                    };
                    let (cid, req) = parse_request(&header);
                    let req = match req {
                        Ok(r) => r,
                        Err(e) => {
                            session.send_control(&error_reply(cid, &e));
                            continue;
                        }
                    };
                    if let Request::Hello { token } = &req {
                        if let Some(expected) = &self.config.auth_token {
                            if token.as_deref() != Some(expected.as_str()) {
                                session.send_control(&error_reply(cid, &Error::Unauthorized("bad token".into())));
                                break;
                            }
                        }
                        authed = true;
                    } else if !authed {
                        session.send_control(&error_reply(cid, &Error::Unauthorized("send hello with a token first".into())));
                        break;
                    }
                    match self.handle(&session, cid, req) {
                        Ok(Some(body)) => session.send_control(&ok_reply(cid, body)),
                        Ok(None) => {}
                        Err(e) => session.send_control(&error_reply(cid, &e)),
                    }
                }
            }
        }
        self.close_session(&session);
    }

    fn close_session(&self, session: &Arc<Session>) {
        session.kill();
        let subs: Vec<Arc<Subscription>> = session.subs.lock().unwrap().drain().map(|(_, s)| s).collect();
        for s in &subs {
            if let Some(g) = &s.spec.group {
                let _ = self.broker.leave_group(g, &s.member);
            }
        }
        for s in subs {
            if let Some(t) = s.thread.lock().unwrap().take() {
                let _ = t.join();
            }
        }
        self.sessions.lock().unwrap().remove(&session.id);
        log::debug!("session {} closed", session.id);
    }

    fn check_schema(&self, msg: &DataMessage) -> Result<()> {
        if msg.header(CONTENT_TYPE) != Some(JSON_CONTENT) || msg.header(CHUNK_ID).is_some() {
            return Ok(());
        }
        let Some(s) = self.registry.enforced_schema(&msg.topic) else { return Ok(()) };
        let doc: Value = serde_json::from_slice(&msg.payload)
            .map_err(|e| Error::SchemaViolation(format!("payload declared as JSON does not parse: {e}")))?;
        schema::validate(&s, &doc)
    }

    fn publish(&self, session: &Session, frame: Frame, cursor: &mut RoundRobin) {
        let (msg, routing) = match DataMessage::from_frame(frame) {
            Ok(m) => m,
            Err(e) => {
                session.send_control(&error_reply(None, &Error::from(e)));
                return;
            }
        };
        let out = self.check_schema(&msg).and_then(|_| self.broker.append(&msg, cursor));
        match (out, routing.cid) {
            (Ok(ack), Some(cid)) => session.send_control(&json!({
                "op": OP_ACK, "cid": cid, "partition": ack.partition, "offset": ack.offset, "ts": ack.ts_append,
            })),
            (Ok(_), None) => {}
            (Err(e), cid) => session.send_control(&error_reply(cid, &e)),
        }
    }

    fn handle(self: &Arc<Self>, session: &Arc<Session>, cid: Option<u64>, req: Request) -> Result<Option<Value>> {
        Ok(Some(match req {
            Request::Hello { .. } => json!({
                "session": session.id,
                "version": crate::wire::frame::VERSION,
                "max_frame_payload": self.config.max_frame_payload,
                "heartbeat_secs": self.config.heartbeat_secs,
                "default_partitions": self.config.default_partitions,
                "object_store_dir": self.config.object_store_dir(),
            }),
            Request::Ping {} | Request::Heartbeat {} => json!({}),
            Request::Register { namespace, device_id, schema } => {
                let reg = self.registry.register(&namespace, &device_id, schema.as_ref())?;
                let created = self.broker.ensure_topic(&reg.topic)?;
                json!({"registration": reg, "created": created})
            }
            Request::TopicCreate { topic, partitions } => json!({"topic": self.broker.create_topic(&topic, partitions)?}),
            Request::Subscribe(spec) => {
                self.subscribe(session, cid, spec)?;
                return Ok(None);
            }
            Request::Unsubscribe { sub } => {
                let s = session.subs.lock().unwrap().get(&sub).cloned();
                let s = s.ok_or_else(|| Error::InvalidArgument(format!("no subscription {sub}")))?;
                s.close();
                json!({"sub": sub})
            }
            Request::Commit { sub, topic, partition, offset, generation } => {
                let s = session.subs.lock().unwrap().get(&sub).cloned();
                let s = s.ok_or_else(|| Error::InvalidArgument(format!("no subscription {sub}")))?;
                let group = s.spec.group.as_deref().ok_or_else(|| Error::InvalidArgument("subscription has no group".into()))?;
                let committed = self.broker.commit_offset(group, &s.member, generation, &topic, partition, offset)?;
                json!({"committed": committed})
            }
            Request::Credit { sub, bytes } => {
                if let Some(s) = session.subs.lock().unwrap().get(&sub) {
                    s.grant(bytes);
                }
                return Ok(None);
            }
            Request::List { kind } => json!({"items": match kind {
                ListKind::Devices => serde_json::to_value(self.registry.devices())?,
                ListKind::Topics => serde_json::to_value(self.broker.topics())?,
                ListKind::Groups => serde_json::to_value(self.broker.groups())?,
                ListKind::Experiments => serde_json::to_value(self.experiments.list())?,
                ListKind::Connectors => serde_json::to_value(self.connectors.list())?,
            }}),
            Request::SchemaAttach { topic, schema, validate } => {
                self.broker.topic(&topic)?;
                json!({"schema": self.registry.attach_schema(&topic, &schema, validate)?})
            }
            Request::ExperimentStart { topics } => json!({"experiment": self.experiments.start(&topics)?}),
            Request::ExperimentStop { id } => {
                self.in_background(session, cid, move |svc| {
                    let archive = svc.experiments.stop(&id)?;
                    Ok(json!({"path": archive.dir, "manifest": archive.manifest}))
                });
                return Ok(None);
            }
            Request::ExperimentReplay { id, speed, target } => {
                self.in_background(session, cid, move |svc| {
                    let archive = svc.experiments.load(&id)?;
                    let report = svc.experiments.replay(&archive, &ReplayOptions { speed, target })?;
                    Ok(json!({"report": report}))
                });
                return Ok(None);
            }
            Request::ConnectorCreate { config } => json!({"connector": self.connectors.create(config)?}),
            Request::ConnectorDelete { name } => {
                self.connectors.delete(&name)?;
                json!({"name": name})
            }
        }))
    }

    /// Runs a slow request off the reader thread so the session keeps serving frames.
    fn in_background(
        self: &Arc<Self>,
        session: &Arc<Session>,
        cid: Option<u64>,
        work: impl FnOnce(&Service) -> Result<Value> + Send + 'static,
    ) {
        let (svc, s) = (self.clone(), session.clone());
        let spawned = std::thread::Builder::new().name("control".into()).spawn(move || match work(&svc) {
            Ok(body) => s.send_control(&ok_reply(cid, body)),
            Err(e) => s.send_control(&error_reply(cid, &e)),
        });
        if let Err(e) = spawned {
            session.send_control(&error_reply(cid, &Error::Io(e)));
        }
    }

    fn subscribe(self: &Arc<Self>, session: &Arc<Session>, cid: Option<u64>, spec: SubscribeSpec) -> Result<()> {
        if spec.topics.is_empty() {
            return Err(Error::InvalidArgument("subscribe needs at least one topic".into()));
        }
        for t in &spec.topics {
            self.broker.topic(t)?;
        }
        let id = spec.sub.unwrap_or_else(|| session.next_sub.fetch_add(1, Ordering::SeqCst));
        if session.subs.lock().unwrap().contains_key(&id) {
            return Err(Error::InvalidArgument(format!("subscription {id} already exists")));
        }
        let member = format!("m{:06}-{id:010}", session.id);
        let (generation, assignment) = match &spec.group {
            Some(g) => {
                let m = self.broker.join_group(g, &member, &spec.topics)?;
                (Some(m.generation), m.assignment)
            }
            None => {
                let mut all = Vec::new();
                for t in &spec.topics {
                    all.extend((0..self.broker.partition_count(t)?).map(|p| TopicPartition::new(t, p)));
                }
                (None, all)
            }
        };
        // Resolve positions before replying so that a LATEST subscriber sees everything
        // published after the reply.
        let mut positions = BTreeMap::new();
        for tp in &assignment {
            positions.insert(tp.clone(), self.broker.resolve_start(spec.group.as_deref(), &tp.topic, tp.partition, spec.start)?);
        }
        let window = spec.window.unwrap_or(DEFAULT_WINDOW);
        let sub = Arc::new(Subscription {
            id,
            member,
            spec,
            credit: Mutex::new(window.min(i64::MAX as u64) as i64),
            credit_cv: Condvar::new(),
            closed: AtomicBool::new(false),
            thread: Mutex::new(None),
        });
        session.subs.lock().unwrap().insert(id, sub.clone());
        session.send_control(&ok_reply(cid, json!({"sub": id, "generation": generation, "assignment": assignment})));
        let (svc, s, sb) = (self.clone(), session.clone(), sub.clone());
        let state = Delivery { generation, assignment, positions };
        let handle = std::thread::Builder::new()
            .name(format!("sub-{id}"))
            .spawn(move || svc.run_subscription(&s, &sb, state))?;
        *sub.thread.lock().unwrap() = Some(handle);
        Ok(())
    }

    fn run_subscription(&self, session: &Session, sub: &Subscription, state: Delivery) {
        let mut delivered = 0;
        let reason = match self.deliver(session, sub, state, &mut delivered) {
            Ok(r) => r.to_string(),
            Err(e) => {
                log::warn!("subscription {} of session {} failed: {e}", sub.id, session.id);
                format!("error: {e}")
            }
        };
        if let Some(g) = &sub.spec.group {
            let _ = self.broker.leave_group(g, &sub.member);
        }
        session.subs.lock().unwrap().remove(&sub.id);
        if !session.is_closed() {
            session.send_control(&json!({"op": OP_SUB_END, "sub": sub.id, "reason": reason, "delivered": delivered}));
        }
    }

    fn deliver(&self, session: &Session, sub: &Subscription, mut st: Delivery, delivered: &mut u64) -> Result<&'static str> {
        let group = sub.spec.group.as_deref();
        let mut last_delivery = Instant::now();
        if sub.spec.mode == (SubscribeMode::MaxCount { n: 0 }) {
            return Ok("max_count");
        }
        loop {
            if sub.is_closed() || session.is_closed() || self.stopping() {
                return Ok("unsubscribed");
            }
            if let Some(g) = group {
                let current = match self.broker.membership(g, &sub.member) {
                    Some(m) => m,
                    None => self.broker.join_group(g, &sub.member, &sub.spec.topics)?,
                };
                if Some(current.generation) != st.generation {
                    st.generation = Some(current.generation);
                    st.assignment = current.assignment;
                    // Records pushed under the old generation are dropped by the client,
                    // so every partition restarts from its committed offset.
                    st.positions.clear();
                    session.send_control(&json!({
                        "op": OP_REBALANCE, "sub": sub.id, "generation": current.generation, "assignment": st.assignment,
                    }));
                }
            }
            let seen = self.broker.notifier().current();
            let mut progressed = false;
            'partitions: for tp in &st.assignment {
                let pos = match st.positions.get(tp) {
                    Some(&p) => p,
                    None => self.broker.resolve_start(group, &tp.topic, tp.partition, sub.spec.start)?,
                };
                let recs = match (group, st.generation) {
                    (Some(g), Some(gen)) => {
                        match self.broker.fetch(g, &sub.member, gen, &tp.topic, tp.partition, pos, FETCH_BATCH) {
                            Err(Error::StaleGeneration(_) | Error::NotAssigned(_)) => {
                                st.generation = None;
                                break 'partitions;
                            }
                            other => other?,
                        }
                    }
                    _ => self.broker.read(&tp.topic, tp.partition, pos, FETCH_BATCH)?,
                };
                let mut next = pos;
                for rec in recs {
                    if !sub.await_credit() {
                        return Ok("unsubscribed");
                    }
                    let routing = Routing {
                        cid: None,
                        sub: Some(sub.id),
                        partition: Some(tp.partition),
                        offset: Some(rec.offset),
                        generation: st.generation,
                    };
                    next = rec.offset + 1;
                    let frame = rec.message.into_frame(routing);
                    let len = frame.encoded_len();
                    if session.send(&frame).is_err() {
                        return Ok("disconnected");
                    }
                    sub.spend(len);
                    *delivered += 1;
                    progressed = true;
                    if let SubscribeMode::MaxCount { n } = sub.spec.mode {
                        if *delivered >= n {
                            return Ok("max_count");
                        }
                    }
                }
                st.positions.insert(tp.clone(), next);
            }
            if progressed {
                last_delivery = Instant::now();
                continue;
            }
            let mut wait = IDLE_POLL;
            if let SubscribeMode::IdleTimeout { ms } = sub.spec.mode {
                let limit = Duration::from_millis(ms);
                let idle = last_delivery.elapsed();
                if idle >= limit {
                    return Ok("idle_timeout");
                }
                wait = wait.min(limit - idle);
            }
            self.broker.notifier().wait_past(seen, wait);
        }
    }
}

struct Delivery {
    generation: Option<u64>,
    assignment: Vec<TopicPartition>,
    positions: BTreeMap<TopicPartition, u64>,
}
