//! Frame format, message envelope, chunking and checksums.

pub mod checksum;
pub mod chunk;
pub mod frame;
pub mod message;

pub use checksum::crc32;
pub use chunk::{chunk_message, ChunkError, ChunkInfo, Reassembler, DEFAULT_CHUNK_SIZE};
pub use frame::{decode_frame, encode_frame, Decoded, Frame, FrameCodec, FrameError, FrameSplitter, FrameType, DEFAULT_MAX_FRAME_PAYLOAD};
pub use message::{is_valid_topic, now_ns, topic_for, DataMessage, Headers, Routing};

/// Headers describing a claim-check ticket.
pub mod claim {
    pub const STORE: &str = "claim.store";
    pub const KEY: &str = "claim.key";
    pub const SIZE: &str = "claim.size";
    pub const CRC: &str = "claim.crc32";
}
