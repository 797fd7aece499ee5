//! The golden corpus in `tests/fixtures/golden` is written by an independent
//! generator (`tests/fixtures/generate.py`). These tests hold the Rust
//! implementation to it in both directions.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use mdml_core::broker::fnv1a64;
use mdml_core::experiment::replay::merge_order;
use mdml_core::experiment::{ArchiveWriter, ExperimentArchive};
use mdml_core::service::protocol::{parse_request, reply_error};
use mdml_core::wire::{crc32, decode_frame, encode_frame, Decoded, DataMessage, Frame, FrameCodec, FrameError, FrameType, Reassembler};
use serde_json::Value;

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn load(name: &str) -> Value {
    serde_json::from_slice(&fs::read(golden().join(name)).unwrap()).unwrap()
}

/// The generator's byte pattern: 32-bit LCG, byte taken from bits 16..23.
fn pattern(seed: u64, len: usize) -> Vec<u8> {
    let mut x = seed as u32;
    (0..len)
        .map(|_| {
            x = x.wrapping_mul(1_103_515_245).wrapping_add(12_345);
            (x >> 16) as u8
        })
        .collect()
}

fn frame_type(v: &Value) -> FrameType {
    match v.as_u64() {
        Some(1) => FrameType::Control,
        Some(2) => FrameType::Data,
        other => panic!("unexpected frame type {other:?}"),
    }
}

fn decode_whole(bytes: &[u8]) -> Frame {
    match decode_frame(bytes).unwrap() {
        Decoded::Frame(f, used) => {
            assert_eq!(used, bytes.len());
            f
        }
        Decoded::NeedMoreBytes => panic!("frame incomplete"),
    }
}

#[test]
fn every_golden_frame_decodes_to_its_description() {
    let index = load("frames.json");
    for case in index["frames"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        let bytes = fs::read(golden().join(case["file"].as_str().unwrap())).unwrap();
        let frame = decode_whole(&bytes);
        assert_eq!(frame.frame_type, frame_type(&case["frame_type"]), "{name}");
        assert_eq!(frame.flags as u64, case["flags"].as_u64().unwrap(), "{name}");
        assert_eq!(frame.header_value().unwrap(), case["header"], "{name}");
        assert_eq!(frame.payload.len() as u64, case["payload_len"].as_u64().unwrap(), "{name}");
        assert_eq!(crc32(&frame.payload), case["payload_crc32"].as_str().unwrap(), "{name}");
    }
}

#[test]
fn encoding_the_described_frames_reproduces_the_bytes() {
    let index = load("frames.json");
    for case in index["frames"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        let bytes = fs::read(golden().join(case["file"].as_str().unwrap())).unwrap();
        let decoded = decode_whole(&bytes);
        let rebuilt = Frame {
            frame_type: frame_type(&case["frame_type"]),
            flags: case["flags"].as_u64().unwrap() as u16,
            header: case["header_text"].as_str().unwrap().as_bytes().to_vec(),
            payload: decoded.payload,
        };
        assert_eq!(encode_frame(&rebuilt).unwrap(), bytes, "{name}");
    }
}

#[test]
fn control_requests_round_trip_through_the_request_type() {
    let index = load("frames.json");
    for case in index["frames"].as_array().unwrap() {
        if case["frame_type"] != 1 || case.get("reply").is_some() {
            continue;
        }
        let name = case["name"].as_str().unwrap();
        let (cid, req) = parse_request(&case["header"]);
        let req = req.unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(req.to_header(cid.unwrap()), case["header"], "{name}");
    }
    let err = load("frames.json")["frames"].as_array().unwrap().iter().find(|c| c["name"] == "reply_error").unwrap()["header"].clone();
    let e = reply_error(&err).unwrap();
    assert_eq!(e.to_string(), "unknown topic: mdml.merf.nope");
}

#[test]
fn data_frames_carry_the_described_messages() {
    let index = load("frames.json");
    for case in index["frames"].as_array().unwrap() {
        let Some(expected) = case.get("message") else { continue };
        let name = case["name"].as_str().unwrap();
        let bytes = fs::read(golden().join(case["file"].as_str().unwrap())).unwrap();
        let (msg, routing) = DataMessage::from_frame(decode_whole(&bytes)).unwrap();
        assert_eq!(msg.topic, expected["topic"].as_str().unwrap(), "{name}");
        assert_eq!(msg.ts_pub, expected["ts"].as_i64().unwrap(), "{name}");
        if let Some(text) = expected.get("payload_text") {
            assert_eq!(msg.payload, text.as_str().unwrap().as_bytes(), "{name}");
        }
        if let Some(seed) = expected.get("payload_seed") {
            assert_eq!(msg.payload, pattern(seed.as_u64().unwrap(), msg.payload.len()), "{name}");
        }
        if let Some(key) = expected.get("key_b64") {
            assert_eq!(msg.key, Some(B64.decode(key.as_str().unwrap()).unwrap()), "{name}");
        }
        if let Some(claim) = expected.get("claim") {
            for (k, v) in claim.as_object().unwrap() {
                assert_eq!(msg.header(k), v.as_str(), "{name}");
            }
        }
        // What Rust emits for the same message and routing parses to the same header.
        let again = msg.to_frame(routing);
        assert_eq!(again.header_value().unwrap(), case["header"], "{name}");
    }
}

#[test]
fn golden_chunk_parts_reassemble() {
    let index = load("frames.json");
    let set = &index["chunk_sets"]["plif"];
    let mut reassembler = Reassembler::new(std::time::Duration::from_secs(5));
    let mut parts: Vec<DataMessage> = index["frames"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["chunk_set"] == "plif")
        .map(|c| DataMessage::from_frame(decode_whole(&fs::read(golden().join(c["file"].as_str().unwrap())).unwrap())).unwrap().0)
        .collect();
    parts.reverse();
    let mut whole = None;
    for p in parts {
        whole = reassembler.push(p).unwrap().or(whole);
    }
    let whole = whole.expect("set completes");
    let len = set["payload_len"].as_u64().unwrap() as usize;
    assert_eq!(whole.payload, pattern(set["payload_seed"].as_u64().unwrap(), len));
    assert_eq!(crc32(&whole.payload), set["crc32"].as_str().unwrap());
    assert_eq!(whole.header("run"), Some("a"));
    assert!(whole.header("chunk.id").is_none());
}

#[test]
fn invalid_golden_frames_are_rejected_for_the_stated_reason() {
    let index = load("frames.json");
    for case in index["invalid"].as_array().unwrap() {
        let name = case["name"].as_str().unwrap();
        let bytes = fs::read(golden().join(case["file"].as_str().unwrap())).unwrap();
        let codec = case["max_payload"].as_u64().map_or_else(FrameCodec::default, |m| FrameCodec::new(m as usize));
        let outcome = codec.decode(&bytes);
        let kind = match &outcome {
            Ok(Decoded::NeedMoreBytes) => "NeedMoreBytes",
            Ok(Decoded::Frame(..)) => "Frame",
            Err(FrameError::BadMagic(_)) => "BadMagic",
            Err(FrameError::UnsupportedVersion(_)) => "UnsupportedVersion",
            Err(FrameError::UnknownFrameType(_)) => "UnknownFrameType",
            Err(FrameError::MalformedHeader(_)) => "MalformedHeader",
            Err(FrameError::OversizedPayload { .. }) => "OversizedPayload",
            Err(FrameError::ControlPayload(_)) => "ControlPayload",
            Err(FrameError::Io(_)) => "Io",
        };
        assert_eq!(kind, case["error"].as_str().unwrap(), "{name}: {outcome:?}");
    }
}

#[test]
fn checksum_and_partition_table_matches() {
    for case in load("checksums.json")["cases"].as_array().unwrap() {
        let data = match case.get("text") {
            Some(t) => t.as_str().unwrap().as_bytes().to_vec(),
            None => pattern(case["seed"].as_u64().unwrap(), case["len"].as_u64().unwrap() as usize),
        };
        assert_eq!(crc32(&data), case["crc32"].as_str().unwrap(), "{case}");
        let h = fnv1a64(&data);
        assert_eq!(format!("{h:016x}"), case["fnv1a64"].as_str().unwrap(), "{case}");
        assert_eq!(h % 8, case["partition_of_8"].as_u64().unwrap(), "{case}");
    }
}

#[test]
fn foreign_archive_loads_and_rewrites_identically() {
    let dir = golden().join("archive");
    let archive = ExperimentArchive::load(&dir).unwrap();
    assert_eq!(archive.manifest.experiment_id, "exp-fixture");
    let expected = load("archive.json");
    let expected = expected["merge_order"].as_array().unwrap();
    let merged = merge_order(&archive);
    assert_eq!(merged.len(), expected.len());
    for (rec, want) in merged.iter().zip(expected) {
        assert_eq!(rec.topic, want["topic"].as_str().unwrap());
        assert_eq!(rec.offset, want["offset"].as_u64().unwrap());
        assert_eq!(rec.ts_capture, want["ts_capture"].as_i64().unwrap());
        let len = want["payload_len"].as_u64().unwrap() as usize;
        assert_eq!(rec.payload, pattern(want["payload_seed"].as_u64().unwrap(), len));
    }

    let out = tempfile::tempdir().unwrap();
    let m = &archive.manifest;
    let mut writer = ArchiveWriter::create(out.path(), &m.topics).unwrap();
    for rec in archive.records.values().flatten() {
        writer.write(rec).unwrap();
    }
    let rewritten = writer.finish(&m.experiment_id, m.started_at, m.stopped_at).unwrap();
    assert_eq!(&rewritten, m);
    for entry in m.files.values() {
        assert_eq!(fs::read(out.path().join(&entry.file)).unwrap(), fs::read(dir.join(&entry.file)).unwrap());
    }
}
