//! Binary frame layout shared by clients, the service and on-disk segments.
//!
//! ```text
//! 0      4        5          6       8            12            16
//! | MDML | version | frame_type | flags | header_len | payload_len | header JSON | payload |
//! ```
//!
//! All integers are big-endian. The header is a UTF-8 JSON object; the payload is raw bytes.

use std::io::{self, Read, Write};

use serde::Serialize;
use serde_json::Value;

pub const MAGIC: [u8; 4] = [0x4D, 0x44, 0x4D, 0x4C];
pub const VERSION: u8 = 1;
pub const PREFIX_LEN: usize = 16;
pub const DEFAULT_MAX_FRAME_PAYLOAD: usize = 1_048_576;

/// Upper bound on header JSON; protects readers from absurd allocations.
const MAX_HEADER_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown frame type {0}")]
    UnknownFrameType(u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload of {len} bytes exceeds limit of {max}")]
    OversizedPayload { len: usize, max: usize },
    #[error("control frame carries a {0}-byte payload")]
    ControlPayload(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Control = 1,
    Data = 2,
}

impl FrameType {
    fn from_u8(v: u8) -> Result<Self, FrameError> {
        match v {
            1 => Ok(FrameType::Control),
            2 => Ok(FrameType::Data),
            other => Err(FrameError::UnknownFrameType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub flags: u16,
    pub header: Vec<u8>,
    pub payload: Vec<u8>,
}

/// Outcome of decoding from a byte buffer.
#[derive(Debug, PartialEq, Eq)]
pub enum Decoded {
    /// A full frame and the number of bytes it occupied.
    Frame(Frame, usize),
    /// The buffer holds a partial frame; nothing was consumed.
    NeedMoreBytes,
}

impl Frame {
    pub fn control<T: Serialize>(header: &T) -> Frame {
        Frame {
            frame_type: FrameType::Control,
            flags: 0,
            header: serde_json::to_vec(header).expect("control header serializes"),
            payload: Vec::new(),
        }
    }

    pub fn data<T: Serialize>(header: &T, payload: Vec<u8>) -> Frame {
        Frame {
            frame_type: FrameType::Data,
            flags: 0,
            header: serde_json::to_vec(header).expect("data header serializes"),
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        PREFIX_LEN + self.header.len() + self.payload.len()
    }

    pub fn header_value(&self) -> Result<Value, FrameError> {
        parse_header(&self.header)
    }

    fn prefix(&self) -> [u8; PREFIX_LEN] {
        encode_prefix(self.frame_type, self.flags, self.header.len(), self.payload.len())
    }
}

fn encode_prefix(frame_type: FrameType, flags: u16, header_len: usize, payload_len: usize) -> [u8; PREFIX_LEN] {
    let mut p = [0u8; PREFIX_LEN];
    p[0..4].copy_from_slice(&MAGIC);
    p[4] = VERSION;
    p[5] = frame_type as u8;
    p[6..8].copy_from_slice(&flags.to_be_bytes());
    p[8..12].copy_from_slice(&(header_len as u32).to_be_bytes());
    p[12..16].copy_from_slice(&(payload_len as u32).to_be_bytes());
    p
}

/// Frame encoder/decoder with a configurable payload ceiling.
#[derive(Debug, Clone, Copy)]
pub struct FrameCodec {
    pub max_payload: usize,
}

impl Default for FrameCodec {
    fn default() -> Self {
        FrameCodec { max_payload: DEFAULT_MAX_FRAME_PAYLOAD }
    }
}

impl FrameCodec {
    pub fn new(max_payload: usize) -> Self {
        FrameCodec { max_payload }
    }

    fn check(&self, frame: &Frame) -> Result<(), FrameError> {
        self.check_parts(frame.frame_type, frame.payload.len())
    }

    fn check_parts(&self, frame_type: FrameType, payload_len: usize) -> Result<(), FrameError> {
        if payload_len > self.max_payload {
            return Err(FrameError::OversizedPayload { len: payload_len, max: self.max_payload });
        }
        if frame_type == FrameType::Control && payload_len != 0 {
            return Err(FrameError::ControlPayload(payload_len));
        }
        Ok(())
    }

    pub fn encode(&self, frame: &Frame) -> Result<Vec<u8>, FrameError> {
        self.check(frame)?;
        let mut out = Vec::with_capacity(frame.encoded_len());
        out.extend_from_slice(&frame.prefix());
        out.extend_from_slice(&frame.header);
        out.extend_from_slice(&frame.payload);
        Ok(out)
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Decoded, FrameError> {
        if bytes.len() < PREFIX_LEN {
            // Reject garbage as early as the magic is visible.
            let seen = bytes.len().min(4);
            if bytes[..seen] != MAGIC[..seen] {
                let mut m = [0u8; 4];
                m[..seen].copy_from_slice(&bytes[..seen]);
                return Err(FrameError::BadMagic(m));
            }
            return Ok(Decoded::NeedMoreBytes);
        }
        let prefix: [u8; PREFIX_LEN] = bytes[..PREFIX_LEN].try_into().unwrap();
        let (frame_type, flags, header_len, payload_len) = self.parse_prefix(&prefix)?;
        let total = PREFIX_LEN + header_len + payload_len;
        if bytes.len() < total {
            return Ok(Decoded::NeedMoreBytes);
        }
        let header = bytes[PREFIX_LEN..PREFIX_LEN + header_len].to_vec();
        parse_header(&header)?;
        let payload = bytes[PREFIX_LEN + header_len..total].to_vec();
        Ok(Decoded::Frame(Frame { frame_type, flags, header, payload }, total))
    }

    pub(crate) fn parse_prefix(&self, p: &[u8; PREFIX_LEN]) -> Result<(FrameType, u16, usize, usize), FrameError> {
        let magic: [u8; 4] = p[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if p[4] != VERSION {
            return Err(FrameError::UnsupportedVersion(p[4]));
        }
        let frame_type = FrameType::from_u8(p[5])?;
        let flags = u16::from_be_bytes([p[6], p[7]]);
        let header_len = u32::from_be_bytes(p[8..12].try_into().unwrap()) as usize;
        let payload_len = u32::from_be_bytes(p[12..16].try_into().unwrap()) as usize;
        if header_len > MAX_HEADER_LEN {
            return Err(FrameError::MalformedHeader(format!("header length {header_len} too large")));
        }
        if payload_len > self.max_payload {
            return Err(FrameError::OversizedPayload { len: payload_len, max: self.max_payload });
        }
        if frame_type == FrameType::Control && payload_len != 0 {
            return Err(FrameError::ControlPayload(payload_len));
        }
        Ok((frame_type, flags, header_len, payload_len))
    }

    /// Reads one frame from a stream. `Ok(None)` means clean EOF at a frame boundary.
    pub fn read_from<R: Read>(&self, r: &mut R) -> Result<Option<Frame>, FrameError> {
        let mut prefix = [0u8; PREFIX_LEN];
        let mut filled = 0;
        while filled < PREFIX_LEN {
            match r.read(&mut prefix[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (frame_type, flags, header_len, payload_len) = self.parse_prefix(&prefix)?;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        parse_header(&header)?;
        let mut payload = Vec::with_capacity(payload_len);
        r.take(payload_len as u64).read_to_end(&mut payload)?;
        if payload.len() < payload_len {
            return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into()));
        }
        Ok(Some(Frame { frame_type, flags, header, payload }))
    }

    /// Writes one frame; the caller flushes.
    pub fn write_to<W: Write>(&self, w: &mut W, frame: &Frame) -> Result<(), FrameError> {
        self.write_parts(w, frame.frame_type, &frame.header, &frame.payload)
    }

    /// Writes a flag-less frame from borrowed parts, so large payloads need no copy.
    pub fn write_parts<W: Write>(&self, w: &mut W, frame_type: FrameType, header: &[u8], payload: &[u8]) -> Result<(), FrameError> {
        self.check_parts(frame_type, payload.len())?;
        let mut head = Vec::with_capacity(PREFIX_LEN + header.len());
        head.extend_from_slice(&encode_prefix(frame_type, 0, header.len(), payload.len()));
        head.extend_from_slice(header);
        w.write_all(&head)?;
        w.write_all(payload)?;
        Ok(())
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    FrameCodec::default().encode(frame)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, FrameError> {
    FrameCodec::default().decode(bytes)
}

fn parse_header(bytes: &[u8]) -> Result<Value, FrameError> {
    let text = std::str::from_utf8(bytes).map_err(|e| FrameError::MalformedHeader(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| FrameError::MalformedHeader(e.to_string()))?;
    if !value.is_object() {
        return Err(FrameError::MalformedHeader("header is not a JSON object".into()));
    }
    Ok(value)
}

/// Splits a byte stream into frames as they become complete.
#[derive(Debug, Default)]
pub struct FrameSplitter {
    codec: FrameCodec,
    buf: Vec<u8>,
}

impl FrameSplitter {
    pub fn new(codec: FrameCodec) -> Self {
        FrameSplitter { codec, buf: Vec::new() }
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut start = 0;
        while let Decoded::Frame(f, used) = self.codec.decode(&self.buf[start..])? {
            out.push(f);
            start += used;
        }
        self.buf.drain(..start);
        Ok(out)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(frame_type: FrameType, header: &str, payload: &[u8]) -> Frame {
        Frame { frame_type, flags: 0, header: header.as_bytes().to_vec(), payload: payload.to_vec() }
    }

    #[test]
    fn control_ping_layout() {
        let bytes = encode_frame(&raw(FrameType::Control, r#"{"op":"ping"}"#, b"")).unwrap();
        assert_eq!(bytes.len(), 16 + 13);
        assert_eq!(&bytes[0..4], &[0x4D, 0x44, 0x4D, 0x4C]);
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..8], &[0, 0]);
        assert_eq!(&bytes[8..12], &13u32.to_be_bytes());
        assert_eq!(&bytes[12..16], &0u32.to_be_bytes());
    }

    #[test]
    fn data_frame_with_empty_header() {
        let bytes = encode_frame(&raw(FrameType::Data, "{}", b"hello")).unwrap();
        assert_eq!(bytes.len(), 23);
        assert_eq!(bytes[5], 2);
    }

    #[test]
    fn oversized_payload_rejected() {
        let f = raw(FrameType::Data, "{}", &vec![0u8; 2_000_000]);
        assert!(matches!(encode_frame(&f), Err(FrameError::OversizedPayload { len: 2_000_000, .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_frame(&raw(FrameType::Control, "{}", b"")).unwrap();
        bytes[3] = 0x4D;
        assert!(matches!(decode_frame(&bytes), Err(FrameError::BadMagic(_))));
    }

    #[test]
    fn fifteen_bytes_need_more() {
        let bytes = encode_frame(&raw(FrameType::Control, r#"{"op":"ping"}"#, b"")).unwrap();
        assert_eq!(decode_frame(&bytes[..15]).unwrap(), Decoded::NeedMoreBytes);
        assert_eq!(decode_frame(&bytes[..20]).unwrap(), Decoded::NeedMoreBytes);
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_frame(&raw(FrameType::Control, "{}", b"")).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_frame(&bytes), Err(FrameError::UnsupportedVersion(2))));
    }

    #[test]
    fn malformed_header_json_and_utf8() {
        let bytes = encode_frame(&raw(FrameType::Control, "{nope", b"")).unwrap();
        assert!(matches!(decode_frame(&bytes), Err(FrameError::MalformedHeader(_))));
        let mut f = raw(FrameType::Data, "{}", b"");
        f.header = vec![0xff, 0xfe];
        let bytes = encode_frame(&f).unwrap();
        assert!(matches!(decode_frame(&bytes), Err(FrameError::MalformedHeader(_))));
    }

    #[test]
    fn control_frames_carry_no_payload() {
        let f = raw(FrameType::Control, "{}", b"x");
        assert!(matches!(encode_frame(&f), Err(FrameError::ControlPayload(1))));
    }

    #[test]
    fn stream_read_write() {
        let codec = FrameCodec::default();
        let frames = vec![raw(FrameType::Control, r#"{"op":"a"}"#, b""), raw(FrameType::Data, "{}", b"xyz")];
        let mut buf = Vec::new();
        for f in &frames {
            codec.write_to(&mut buf, f).unwrap();
        }
        let mut cursor = io::Cursor::new(buf);
        assert_eq!(codec.read_from(&mut cursor).unwrap().unwrap(), frames[0]);
        assert_eq!(codec.read_from(&mut cursor).unwrap().unwrap(), frames[1]);
        assert!(codec.read_from(&mut cursor).unwrap().is_none());
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        let header = proptest::collection::btree_map("[a-z]{1,6}", "[ -~]{0,12}", 0..5)
            .prop_map(|m| serde_json::to_vec(&m).unwrap());
        (any::<bool>(), header, proptest::collection::vec(any::<u8>(), 0..3000)).prop_map(|(ctl, header, payload)| {
            if ctl {
                Frame { frame_type: FrameType::Control, flags: 0, header, payload: Vec::new() }
            } else {
                Frame { frame_type: FrameType::Data, flags: 0, header, payload }
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip(frame in arb_frame()) {
            let bytes = encode_frame(&frame).unwrap();
            prop_assert_eq!(bytes.len(), 16 + frame.header.len() + frame.payload.len());
            match decode_frame(&bytes).unwrap() {
                Decoded::Frame(back, used) => {
                    prop_assert_eq!(used, bytes.len());
                    prop_assert_eq!(back, frame);
                }
                Decoded::NeedMoreBytes => prop_assert!(false, "complete frame reported partial"),
            }
        }

        #[test]
        fn splitter_recovers_back_to_back_frames(
            frames in proptest::collection::vec(arb_frame(), 1..8),
            cut in 1usize..97,
        ) {
            let mut stream = Vec::new();
            for f in &frames {
                stream.extend(encode_frame(f).unwrap());
            }
            let mut splitter = FrameSplitter::default();
            let mut got = Vec::new();
            for piece in stream.chunks(cut) {
                got.extend(splitter.push(piece).unwrap());
            }
            prop_assert_eq!(got, frames);
            prop_assert_eq!(splitter.buffered(), 0);
        }
    }
}
