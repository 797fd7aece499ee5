#!/usr/bin/env python3
"""Writes the golden fixture corpus shared with other client implementations.

Uses only the standard library and implements the wire format, CRC-32, FNV-1a
and the archive layout from their definitions, without reference to the Rust
code. Run from this directory: ``python3 generate.py``.
"""

import base64
import json
import os
import shutil
import struct
import zlib

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "golden")

MAGIC = b"MDML"
VERSION = 1
CONTROL, DATA = 1, 2
MAX_PAYLOAD = 1_048_576


def pattern(seed, length):
    """Deterministic bytes: 32-bit LCG, byte = bits 16..23 of the state."""
    x = seed & 0xFFFFFFFF
    out = bytearray(length)
    for i in range(length):
        x = (x * 1103515245 + 12345) & 0xFFFFFFFF
        out[i] = (x >> 16) & 0xFF
    return bytes(out)


def crc32_hex(data):
    return "%08x" % (zlib.crc32(data) & 0xFFFFFFFF)


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def compact(value):
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def frame(frame_type, header_bytes, payload=b"", flags=0, version=VERSION, magic=MAGIC):
    prefix = magic + struct.pack(">BBHII", version, frame_type, flags, len(header_bytes), len(payload))
    return prefix + header_bytes + payload


def data_header(topic, ts, hdr, key=None, cid=None, sub=None, part=None, off=None, gen=None):
    h = {"topic": topic}
    if key is not None:
        h["key"] = base64.b64encode(key).decode()
    h["ts"] = ts
    h["hdr"] = dict(sorted(hdr.items()))
    for name, value in (("cid", cid), ("sub", sub), ("part", part), ("off", off), ("gen", gen)):
        if value is not None:
            h[name] = value
    return h


def chunk_parts(topic, ts, payload, chunk_size, chunk_id, headers):
    count = (len(payload) + chunk_size - 1) // chunk_size
    crc = crc32_hex(payload)
    parts = []
    for i in range(count):
        hdr = dict(headers)
        hdr.update({
            "chunk.id": chunk_id,
            "chunk.idx": str(i),
            "chunk.cnt": str(count),
            "chunk.total": str(len(payload)),
            "chunk.crc32": crc,
        })
        parts.append((data_header(topic, ts, hdr, cid=100 + i), payload[i * chunk_size:(i + 1) * chunk_size]))
    return parts


def write_frames():
    d = os.path.join(OUT, "frames")
    os.makedirs(d)
    cases = []

    def add(name, frame_type, header, payload=b"", flags=0, **extra):
        text = compact(header)
        raw = frame(frame_type, text.encode(), payload, flags)
        with open(os.path.join(d, name + ".bin"), "wb") as f:
            f.write(raw)
        case = {
            "name": name,
            "file": "frames/%s.bin" % name,
            "frame_type": frame_type,
            "flags": flags,
            "header": header,
            "header_text": text,
            "payload_len": len(payload),
            "payload_crc32": crc32_hex(payload),
        }
        case.update(extra)
        cases.append(case)

    add("hello", CONTROL, {"op": "hello", "token": "s3cret", "cid": 1})
    add("ping", CONTROL, {"op": "ping", "cid": 2})
    add("topic_create", CONTROL, {"op": "topic.create", "topic": "mdml.merf.fsp_plif", "partitions": 4, "cid": 3})
    add("subscribe_group", CONTROL, {
        "op": "subscribe", "topics": ["mdml.merf.fsp_plif", "mdml.merf.sem"], "group": "analysts",
        "start": "earliest", "mode": {"kind": "max_count", "n": 5}, "window": 16777216, "sub": 7, "cid": 4,
    })
    add("subscribe_at_offset", CONTROL, {
        "op": "subscribe", "topics": ["mdml.merf.sem"], "start": {"at": 42},
        "mode": {"kind": "idle_timeout", "ms": 1500}, "cid": 5,
    })
    add("commit", CONTROL, {"op": "commit", "sub": 7, "topic": "mdml.merf.sem", "partition": 2, "offset": 43, "generation": 3, "cid": 6})
    add("credit", CONTROL, {"op": "credit", "sub": 7, "bytes": 4194304, "cid": 7})
    add("experiment_start", CONTROL, {"op": "experiment.start", "topics": ["mdml.merf.fsp_plif"], "cid": 8})
    add("experiment_replay", CONTROL, {
        "op": "experiment.replay", "id": "exp-1", "speed": 2.0,
        "target": {"mdml.merf.fsp_plif": "mdml.merf.twin"}, "cid": 9,
    })
    add("reply_ok", CONTROL, {"op": "ok", "cid": 3, "topic": "mdml.merf.fsp_plif", "partitions": 4}, reply=True)
    add("reply_error", CONTROL, {"op": "error", "cid": 4, "code": "UnknownTopic", "message": "unknown topic: mdml.merf.nope"}, reply=True)
    add("ack", CONTROL, {"op": "ack", "cid": 10, "partition": 1, "offset": 99}, reply=True)

    scalar = compact({"seq": 1, "temperature_c": 21.5}).encode()
    add("publish_scalar", DATA, data_header("mdml.merf.scalar", 1618000000000000000, {"content-type": "application/json"}, cid=10), scalar,
        message={"topic": "mdml.merf.scalar", "ts": 1618000000000000000, "payload_text": scalar.decode()})
    keyed = pattern(7, 300)
    add("publish_binary_key", DATA, data_header("mdml.merf.sem", 1618000000000000001, {}, key=b"\x00\xffsensor-7", cid=11), keyed,
        message={"topic": "mdml.merf.sem", "ts": 1618000000000000001, "key_b64": base64.b64encode(b"\x00\xffsensor-7").decode(), "payload_seed": 7})
    pushed = pattern(8, 4096)
    add("push_routed", DATA, data_header("mdml.merf.sem", 1618000000000000002, {"origin": "fixture"}, sub=7, part=2, off=42, gen=3), pushed,
        message={"topic": "mdml.merf.sem", "ts": 1618000000000000002, "payload_seed": 8})
    add("empty_payload", DATA, data_header("mdml.merf.sem", 1618000000000000003, {}, cid=12), b"",
        message={"topic": "mdml.merf.sem", "ts": 1618000000000000003})
    add("flagged", DATA, data_header("mdml.merf.sem", 1618000000000000004, {}, cid=13), b"x", flags=0x8001,
        message={"topic": "mdml.merf.sem", "ts": 1618000000000000004, "payload_text": "x"})
    ticket = {"claim.store": "fs", "claim.key": "mdml.merf.fsp_plif/0f3c2a", "claim.size": "41943040", "claim.crc32": "1c291ca3"}
    add("claim_ticket", DATA, data_header("mdml.merf.fsp_plif", 1618000000000000005, ticket, cid=14), b"",
        message={"topic": "mdml.merf.fsp_plif", "ts": 1618000000000000005, "claim": ticket})

    chunked = pattern(9, 2500)
    for i, (hdr, part) in enumerate(chunk_parts("mdml.merf.fsp_plif", 1618000000000000006, chunked, 1000,
                                                "3f1e8a52-6c0d-4d9b-9a51-2d7f0c4b8e11", {"run": "a"})):
        add("chunk_part_%d" % i, DATA, hdr, part, chunk_set="plif", message={"topic": "mdml.merf.fsp_plif", "ts": 1618000000000000006})

    invalid = []

    def bad(name, raw, error, limit=None):
        with open(os.path.join(d, name + ".bin"), "wb") as f:
            f.write(raw)
        entry = {"name": name, "file": "frames/%s.bin" % name, "error": error}
        if limit is not None:
            entry["max_payload"] = limit
        invalid.append(entry)

    ping = compact({"op": "ping", "cid": 1}).encode()
    bad("bad_magic", frame(CONTROL, ping, magic=b"MDMX"), "BadMagic")
    bad("bad_version", frame(CONTROL, ping, version=2), "UnsupportedVersion")
    bad("unknown_type", frame(3, ping), "UnknownFrameType")
    bad("control_with_payload", frame(CONTROL, ping, b"abc"), "ControlPayload")
    bad("header_not_json", frame(CONTROL, b"{not json"), "MalformedHeader")
    bad("oversized", frame(DATA, compact(data_header("mdml.a.b", 1, {})).encode(), b"\0" * 1025), "OversizedPayload", limit=1024)
    bad("truncated", frame(DATA, compact(data_header("mdml.a.b", 1, {})).encode(), b"abcdef")[:-2], "NeedMoreBytes")

    with open(os.path.join(OUT, "frames.json"), "w") as f:
        json.dump({"max_payload": MAX_PAYLOAD, "frames": cases, "invalid": invalid,
                   "chunk_sets": {"plif": {"payload_seed": 9, "payload_len": len(chunked), "crc32": crc32_hex(chunked)}}},
                  f, indent=2)
        f.write("\n")


def write_checksums():
    rows = []
    for text in ["", "a", "foobar", "123456789", "sensor-7", "mdml.merf.fsp_plif"]:
        data = text.encode()
        rows.append({"text": text, "crc32": crc32_hex(data), "fnv1a64": "%016x" % fnv1a64(data), "partition_of_8": fnv1a64(data) % 8})
    for seed, length in [(0, 1), (1, 64), (2, 1000), (3, 65536), (4, 1_000_000)]:
        data = pattern(seed, length)
        rows.append({"seed": seed, "len": length, "crc32": crc32_hex(data), "fnv1a64": "%016x" % fnv1a64(data), "partition_of_8": fnv1a64(data) % 8})
    with open(os.path.join(OUT, "checksums.json"), "w") as f:
        json.dump({"pattern": "lcg32: x = x*1103515245 + 12345 mod 2^32, byte = (x >> 16) & 0xff", "cases": rows}, f, indent=2)
        f.write("\n")


def archive_line(rec):
    ordered = {
        "topic": rec["topic"],
        "partition": rec["partition"],
        "offset": rec["offset"],
        "ts_pub": rec["ts_pub"],
        "ts_capture": rec["ts_capture"],
        "key": base64.b64encode(rec["key"]).decode() if rec["key"] is not None else None,
        "headers": dict(sorted(rec["headers"].items())),
        "payload": base64.b64encode(rec["payload"]).decode(),
    }
    return compact(ordered)


def write_archive():
    d = os.path.join(OUT, "archive")
    os.makedirs(d)
    base = 1618000000000000000
    records = {"mdml.merf.fsp_plif": [], "mdml.merf.sem": []}
    gaps = [0, 120, 35, 200, 10, 80, 150, 60]
    t = base
    for i, gap in enumerate(gaps):
        t += gap * 1_000_000
        topic = "mdml.merf.fsp_plif" if i % 3 != 1 else "mdml.merf.sem"
        offset = len(records[topic])
        records[topic].append({
            "topic": topic,
            "partition": i % 2,
            "offset": offset,
            "ts_pub": t - 250_000,
            "ts_capture": t,
            "key": b"dev-%d" % (i % 2) if i % 4 == 0 else None,
            "headers": {"seq": str(i)} if i % 2 == 0 else {},
            "payload": pattern(100 + i, 64 + 32 * i),
        })
    files = {}
    for topic, recs in sorted(records.items()):
        name = topic.replace(".", "_") + ".ndjson"
        body = "".join(archive_line(r) + "\n" for r in recs).encode()
        with open(os.path.join(d, name), "wb") as f:
            f.write(body)
        files[topic] = {"file": name, "count": len(recs), "crc32": crc32_hex(body)}
    manifest = {
        "format": "mdml-archive/1",
        "experiment_id": "exp-fixture",
        "topics": sorted(records),
        "started_at": base - 1_000_000_000,
        "stopped_at": t + 1_000_000_000,
        "files": files,
    }
    with open(os.path.join(d, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    expected = [{"topic": r["topic"], "offset": r["offset"], "ts_capture": r["ts_capture"], "payload_seed": 100 + i,
                 "payload_len": 64 + 32 * i} for i, r in enumerate(sorted((r for rs in records.values() for r in rs),
                                                                        key=lambda r: r["ts_capture"]))]
    with open(os.path.join(OUT, "archive.json"), "w") as f:
        json.dump({"dir": "archive", "merge_order": expected}, f, indent=2)
        f.write("\n")


def main():
    shutil.rmtree(OUT, ignore_errors=True)
    os.makedirs(OUT)
    write_frames()
    write_checksums()
    write_archive()


if __name__ == "__main__":
    main()
