//! End-to-end behavior of the service as seen through the agent toolkit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use mdml_core::agent::analysis::{dead_letter_topic, DLQ_ATTEMPTS};
use mdml_core::agent::{run_analysis_loop, Agent, AgentConfig, PublishPath, RetryPolicy, SubscribeOptions};
use mdml_core::broker::StartPosition;
use mdml_core::service::protocol::{ListKind, Request, SubscribeMode, SubscribeSpec};
use mdml_core::service::server::{CONTENT_TYPE, JSON_CONTENT};
use mdml_core::service::{Server, ServiceConfig};
use mdml_core::wire::{DataMessage, FrameCodec, FrameSplitter, FrameType};
use mdml_core::Error;
use serde_json::json;

struct Fixture {
    _dir: tempfile::TempDir,
    server: Server,
}

impl Fixture {
    fn new() -> Fixture {
        Fixture::with(|_| {})
    }

    fn with(tweak: impl FnOnce(&mut ServiceConfig)) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ServiceConfig::with_data_dir(dir.path().join("data"));
        cfg.listen_addr = "127.0.0.1:0".into();
        cfg.default_partitions = 4;
        tweak(&mut cfg);
        let server = Server::start(cfg).unwrap();
        Fixture { _dir: dir, server }
    }

    fn addr(&self) -> String {
        self.server.addr().to_string()
    }

    fn agent(&self) -> Agent {
        Agent::connect(AgentConfig::new(self.addr())).unwrap()
    }
}

fn payload(seed: u64, len: usize) -> Vec<u8> {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as u8
        })
        .collect()
}

fn drain(c: &mut mdml_core::agent::Consumer, quiet: Duration) -> Vec<DataMessage> {
    let mut out = Vec::new();
    while let Ok(Some(d)) = c.recv(Some(quiet)) {
        out.push(d.message);
    }
    out
}

#[test]
fn register_provisions_topic_and_is_idempotent() {
    let f = Fixture::new();
    let a = f.agent();
    assert_eq!(a.list(ListKind::Devices).unwrap(), json!([]));
    let reg = a.register("merf", "fsp_plif", None).unwrap();
    assert_eq!(reg.topic, "mdml.merf.fsp_plif");
    assert!(a.topics().unwrap().iter().any(|t| t.name == "mdml.merf.fsp_plif"));
    assert_eq!(a.register("merf", "fsp_plif", None).unwrap(), reg);
    assert_eq!(a.list(ListKind::Devices).unwrap().as_array().unwrap().len(), 1);
    assert!(matches!(a.register("merf", "x", Some(json!("{bad"))), Err(Error::InvalidSchema(_))));
    assert!(matches!(a.register("MERF", "x", None), Err(Error::InvalidName(_))));
}

#[test]
fn publish_acks_and_errors() {
    let f = Fixture::new();
    let a = f.agent();
    a.register("lab", "dev", None).unwrap();
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    for i in 0..12 {
        let r = a.publish("mdml.lab.dev", vec![i]).unwrap();
        assert_eq!(r.path, PublishPath::Plain);
        if let Some(prev) = last.insert(r.partition, r.offset) {
            assert!(r.offset > prev);
        }
    }
    assert_eq!(last.len(), 4, "keyless publishes spread over every partition");
    assert!(matches!(a.publish("mdml.lab.nothing", vec![1]), Err(Error::UnknownTopic(_))));
    let big = DataMessage::new("mdml.lab.dev", vec![0; 2_000_000]);
    assert!(matches!(a.connection().publish(&big), Err(Error::OversizedPayload(_))));
}

#[test]
fn schema_validation_is_opt_in() {
    let f = Fixture::new();
    let a = f.agent();
    a.register("lab", "therm", None).unwrap();
    let json_msg = |body: &str| DataMessage::new("mdml.lab.therm", body.as_bytes().to_vec()).with_header(CONTENT_TYPE, JSON_CONTENT);
    a.produce(json_msg(r#"{"unit":"C"}"#)).unwrap();
    let doc = a.attach_schema("mdml.lab.therm", br#"{"temp": 21.5, "unit": "C"}"#, true).unwrap();
    assert_eq!(doc.body["properties"]["temp"]["type"], "number");
    assert!(matches!(a.produce(json_msg(r#"{"unit":"C"}"#)), Err(Error::SchemaViolation(_))));
    a.produce(json_msg(r#"{"temp": 3, "unit":"K"}"#)).unwrap();
    a.publish("mdml.lab.therm", vec![0xff, 0x00]).unwrap();
    assert!(matches!(a.attach_schema("mdml.lab.therm", &[0xff, 0x13], false), Err(Error::NotJson(_))));
}

#[test]
fn max_count_latest_and_aggregate() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.a", Some(2)).unwrap();
    a.create_topic("mdml.lab.b", Some(1)).unwrap();
    for i in 0..5u8 {
        a.publish("mdml.lab.a", vec![i]).unwrap();
    }
    let mut c = a.subscribe(&["mdml.lab.a"], SubscribeOptions::earliest().max_count(5)).unwrap();
    let got = drain(&mut c, Duration::from_secs(2));
    assert_eq!(got.len(), 5);
    assert_eq!(c.ended(), Some("max_count"));

    let mut latest = a.subscribe(&["mdml.lab.a"], SubscribeOptions::default()).unwrap();
    a.publish("mdml.lab.a", vec![100]).unwrap();
    a.publish("mdml.lab.a", vec![101]).unwrap();
    let mut got: Vec<u8> = drain(&mut latest, Duration::from_millis(500)).iter().map(|m| m.payload[0]).collect();
    got.sort();
    assert_eq!(got, vec![100, 101]);

    for i in 0..3u8 {
        a.publish("mdml.lab.b", vec![i]).unwrap();
    }
    let mut agg = a.subscribe(&["mdml.lab.a", "mdml.lab.b"], SubscribeOptions::earliest()).unwrap();
    let all = drain(&mut agg, Duration::from_millis(500));
    assert_eq!(all.len(), 10);
    let b_seq: Vec<u8> = all.iter().filter(|m| m.topic == "mdml.lab.b").map(|m| m.payload[0]).collect();
    assert_eq!(b_seq, vec![0, 1, 2], "per-partition order is preserved");
    assert!(matches!(a.subscribe(&[], SubscribeOptions::default()), Err(Error::InvalidArgument(_))));
    assert!(matches!(a.subscribe(&["mdml.lab.a", "mdml.lab.zz"], SubscribeOptions::default()), Err(Error::UnknownTopic(_))));
}

#[test]
fn idle_timeout_closes_subscription() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.idle", None).unwrap();
    let mut c = a.subscribe(&["mdml.lab.idle"], SubscribeOptions::default().idle_timeout(Duration::from_millis(200))).unwrap();
    let t = Instant::now();
    assert!(c.recv(Some(Duration::from_secs(5))).unwrap().is_none());
    assert_eq!(c.ended(), Some("idle_timeout"));
    assert!(t.elapsed() < Duration::from_secs(3));
}

#[test]
fn chunked_and_claim_checked_payloads_round_trip() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.img", Some(2)).unwrap();
    let mut c = a.subscribe(&["mdml.lab.img"], SubscribeOptions::default()).unwrap();
    let ten_mb = payload(1, 10_000_000);
    let r = a.publish("mdml.lab.img", ten_mb.clone()).unwrap();
    assert_eq!((r.path, r.parts), (PublishPath::Chunked, 10));
    let big = payload(2, 40 * 1024 * 1024);
    let r = a.publish("mdml.lab.img", big.clone()).unwrap();
    assert_eq!((r.path, r.parts), (PublishPath::ClaimCheck, 1));
    let got = drain(&mut c, Duration::from_secs(2));
    assert_eq!(got.len(), 2);
    assert!(got[0].payload == ten_mb, "10 MB payload differs after reassembly");
    assert!(got[1].payload == big, "claim-checked payload differs");
    assert!(got[1].headers.keys().all(|k| !k.starts_with("claim.")));
}

#[test]
fn missing_claim_is_reported_and_stream_continues() {
    let f = Fixture::new();
    let mut cfg = AgentConfig::new(f.addr());
    cfg.coat_check_threshold = 1000;
    let a = Agent::connect(cfg).unwrap();
    a.create_topic("mdml.lab.cc", Some(1)).unwrap();
    let mut c = a.subscribe(&["mdml.lab.cc"], SubscribeOptions::default()).unwrap();
    a.publish("mdml.lab.cc", vec![1; 5000]).unwrap();
    let mut raw = a.subscribe(&["mdml.lab.cc"], SubscribeOptions { raw: true, ..SubscribeOptions::earliest() }).unwrap();
    let ticket_msg = raw.recv(Some(Duration::from_secs(2))).unwrap().unwrap().message;
    let key = ticket_msg.header("claim.key").unwrap();
    assert!(a.object_store().unwrap().delete(key).unwrap());
    a.publish("mdml.lab.cc", vec![2; 10]).unwrap();
    assert!(matches!(c.recv(Some(Duration::from_secs(2))), Err(Error::ClaimNotFound(_))));
    assert_eq!(c.recv(Some(Duration::from_secs(2))).unwrap().unwrap().message.payload, vec![2; 10]);
}

#[test]
fn group_members_split_partitions_and_rebalance_on_disconnect() {
    let f = Fixture::new();
    let admin = f.agent();
    admin.create_topic("mdml.lab.work", Some(4)).unwrap();
    let (a1, a2) = (f.agent(), f.agent());
    let mut c1 = a1.subscribe(&["mdml.lab.work"], SubscribeOptions::earliest().group("g")).unwrap();
    let mut c2 = a2.subscribe(&["mdml.lab.work"], SubscribeOptions::earliest().group("g")).unwrap();
    for i in 0..400u32 {
        admin.publish("mdml.lab.work", i.to_be_bytes().to_vec()).unwrap();
    }
    let mut seen1 = BTreeSet::new();
    let mut seen2 = BTreeSet::new();
    let mut total = 0;
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut quiet_rounds = 0;
    while quiet_rounds < 3 {
        assert!(Instant::now() < deadline, "stalled after {total} deliveries");
        let mut any = false;
        for (seen, c) in [(&mut seen1, &mut c1), (&mut seen2, &mut c2)] {
            if let Some(d) = c.recv(Some(Duration::from_millis(100))).unwrap() {
                seen.insert(u32::from_be_bytes(d.message.payload[..4].try_into().unwrap()));
                c.commit(&d).unwrap();
                total += 1;
                any = true;
            }
        }
        quiet_rounds = if any || total < 400 { 0 } else { quiet_rounds + 1 };
    }
    assert_eq!(total, 400, "no message is delivered twice");
    assert!(seen1.is_disjoint(&seen2));
    assert_eq!(seen1.union(&seen2).count(), 400);
    assert!(!seen1.is_empty() && !seen2.is_empty());

    drop(c2);
    a2.close();
    for i in 400..440u32 {
        admin.publish("mdml.lab.work", i.to_be_bytes().to_vec()).unwrap();
    }
    let rest: BTreeSet<u32> =
        drain(&mut c1, Duration::from_secs(1)).iter().map(|m| u32::from_be_bytes(m.payload[..4].try_into().unwrap())).collect();
    assert!((400..440).all(|i| rest.contains(&i)), "survivor takes over every partition");
}

#[test]
fn silent_sessions_are_reaped() {
    let f = Fixture::with(|c| c.heartbeat_secs = 0.2);
    let admin = f.agent();
    admin.create_topic("mdml.lab.live", Some(2)).unwrap();
    // A bare client that joins a group and then never speaks again.
    let mut s = TcpStream::connect(f.addr()).unwrap();
    let sub = Request::Subscribe(SubscribeSpec {
        topics: vec!["mdml.lab.live".into()],
        group: Some("lg".into()),
        start: StartPosition::Earliest,
        mode: SubscribeMode::Indefinite,
        window: None,
        sub: Some(1),
    });
    s.write_all(&FrameCodec::default().encode(&sub.to_frame(1)).unwrap()).unwrap();
    let has_member = |a: &Agent| {
        a.list(ListKind::Groups).unwrap().as_array().unwrap().iter().any(|g| g["members"].as_array().is_some_and(|m| !m.is_empty()))
    };
    let t = Instant::now();
    while !has_member(&admin) {
        assert!(t.elapsed() < Duration::from_secs(2));
        std::thread::sleep(Duration::from_millis(20));
    }
    while has_member(&admin) {
        assert!(t.elapsed() < Duration::from_secs(5), "silent member was never removed");
        std::thread::sleep(Duration::from_millis(50));
    }
    let mut buf = Vec::new();
    let _ = s.read_to_end(&mut buf);
}

#[test]
fn pushed_frames_split_cleanly() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.raw", Some(1)).unwrap();
    for i in 0..20usize {
        a.publish("mdml.lab.raw", vec![i as u8; 1000 * i]).unwrap();
    }
    let mut s = TcpStream::connect(f.addr()).unwrap();
    let sub = Request::Subscribe(SubscribeSpec {
        topics: vec!["mdml.lab.raw".into()],
        group: None,
        start: StartPosition::Earliest,
        mode: SubscribeMode::MaxCount { n: 20 },
        window: None,
        sub: Some(7),
    });
    s.write_all(&FrameCodec::default().encode(&sub.to_frame(1)).unwrap()).unwrap();
    let mut splitter = FrameSplitter::new(FrameCodec::default());
    let mut data = 0;
    let mut ended = false;
    let mut buf = [0u8; 7919];
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    while !ended {
        let n = s.read(&mut buf).unwrap();
        assert!(n > 0);
        for frame in splitter.push(&buf[..n]).unwrap() {
            match frame.frame_type {
                FrameType::Data => {
                    let (m, routing) = DataMessage::from_frame(frame).unwrap();
                    assert_eq!(m.payload.len(), 1000 * data);
                    assert_eq!(routing.offset, Some(data as u64));
                    data += 1;
                }
                FrameType::Control => ended |= frame.header_value().unwrap()["op"] == "sub.end",
            }
        }
    }
    assert_eq!(data, 20);
}

#[test]
fn analysis_loop_results_and_dead_letters() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.in", Some(2)).unwrap();
    a.create_topic("mdml.lab.out", Some(1)).unwrap();
    for i in 0..5u8 {
        a.publish("mdml.lab.in", vec![i]).unwrap();
    }
    let stop = AtomicBool::new(false);
    let mut c = a.subscribe(&["mdml.lab.in"], SubscribeOptions::earliest().group("ident").idle_timeout(Duration::from_millis(400))).unwrap();
    let stats = run_analysis_loop(&a, &mut c, |m| Ok(Some(m.clone())), Some("mdml.lab.out"), RetryPolicy::default(), &stop).unwrap();
    assert_eq!((stats.handled, stats.results), (5, 5));
    let mut out = a.subscribe(&["mdml.lab.out"], SubscribeOptions::earliest()).unwrap();
    let mut got: Vec<u8> = drain(&mut out, Duration::from_millis(300)).iter().map(|m| m.payload[0]).collect();
    got.sort();
    assert_eq!(got, vec![0, 1, 2, 3, 4]);

    a.publish("mdml.lab.in", vec![99]).unwrap();
    let mut c = a.subscribe(&["mdml.lab.in"], SubscribeOptions::earliest().group("ident").idle_timeout(Duration::from_millis(400))).unwrap();
    let mut calls = 0;
    let stats = run_analysis_loop(
        &a,
        &mut c,
        |_| {
            calls += 1;
            Err("bad frame".to_string())
        },
        None,
        RetryPolicy { retries: 3 },
        &stop,
    )
    .unwrap();
    assert_eq!(calls, 4, "committed offsets mean only the new message is seen");
    assert_eq!(stats.dead_lettered, 1);
    let mut dlq = a.subscribe(&[&dead_letter_topic("mdml.lab.in")], SubscribeOptions::earliest()).unwrap();
    let dead = drain(&mut dlq, Duration::from_millis(300));
    assert_eq!(dead.len(), 1);
    assert_eq!(dead[0].payload, vec![99]);
    assert_eq!(dead[0].header(DLQ_ATTEMPTS), Some("4"));
}

#[test]
fn experiment_control_over_the_wire() {
    let f = Fixture::new();
    let a = f.agent();
    a.create_topic("mdml.lab.e1", Some(1)).unwrap();
    let def = a.experiment_start(&["mdml.lab.e1"]).unwrap();
    for i in 0..3u8 {
        a.publish("mdml.lab.e1", vec![i]).unwrap();
    }
    let (_path, manifest) = a.experiment_stop(&def.experiment_id).unwrap();
    assert_eq!(manifest.counts()["mdml.lab.e1"], 3);
    assert!(matches!(a.experiment_stop(&def.experiment_id), Err(Error::NotRunning(_))));
    let mut c = a.subscribe(&["mdml.lab.e1"], SubscribeOptions::default()).unwrap();
    let report = a.replay(&def.experiment_id, 0.0, BTreeMap::new()).unwrap();
    assert_eq!(report.records, 3);
    let replayed = drain(&mut c, Duration::from_millis(300));
    assert_eq!(replayed.iter().map(|m| m.payload[0]).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(replayed[0].header("replay.of"), Some(def.experiment_id.as_str()));
    assert_eq!(a.list(ListKind::Experiments).unwrap().as_array().unwrap().len(), 1);
}

#[test]
fn token_is_enforced_when_configured() {
    let f = Fixture::with(|c| c.auth_token = Some("letmein".into()));
    let bad = AgentConfig { auth_token: Some("nope".into()), ..AgentConfig::new(f.addr()) };
    assert!(matches!(Agent::connect(bad), Err(Error::Unauthorized(_))));
    let good = AgentConfig { auth_token: Some("letmein".into()), ..AgentConfig::new(f.addr()) };
    Agent::connect(good).unwrap().list(ListKind::Topics).unwrap();
}
