use std::io;

use crate::wire::{ChunkError, FrameError};

/// Every failure the service, the agents and the tools can report.
///
/// Errors cross the wire as a `(code, message)` pair; [`Error::from_wire`] rebuilds
/// the variant on the client side.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown topic: {0}")]
    UnknownTopic(String),
    #[error("topic already exists: {0}")]
    TopicExists(String),
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("unknown partition: {0}")]
    UnknownPartition(String),
    #[error("offset out of range: {0}")]
    OffsetOutOfRange(String),
    #[error("oversized payload: {0}")]
    OversizedPayload(String),
    #[error("stale generation: {0}")]
    StaleGeneration(String),
    #[error("partition not assigned: {0}")]
    NotAssigned(String),
    #[error("already registered: {0}")]
    AlreadyRegistered(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("payload is not JSON: {0}")]
    NotJson(String),
    #[error("not connected: {0}")]
    NotConnected(String),
    #[error("object store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("claim not found: {0}")]
    ClaimNotFound(String),
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("topic busy: {0}")]
    TopicBusy(String),
    #[error("experiment not running: {0}")]
    NotRunning(String),
    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),
    #[error("archive corrupt: {0}")]
    ArchiveCorrupt(String),
    #[error("unsupported version: {0}")]
    UnsupportedVersion(String),
    #[error("duplicate connector name: {0}")]
    DuplicateName(String),
    #[error("unknown connector: {0}")]
    UnknownConnector(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("broker unreachable: {0}")]
    BrokerUnreachable(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable identifier used in error responses.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownTopic(_) => "UnknownTopic",
            Error::TopicExists(_) => "TopicExists",
            Error::InvalidName(_) => "InvalidName",
            Error::UnknownPartition(_) => "UnknownPartition",
            Error::OffsetOutOfRange(_) => "OffsetOutOfRange",
            Error::OversizedPayload(_) => "OversizedPayload",
            Error::StaleGeneration(_) => "StaleGeneration",
            Error::NotAssigned(_) => "NotAssigned",
            Error::AlreadyRegistered(_) => "AlreadyRegistered",
            Error::InvalidSchema(_) => "InvalidSchema",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::NotJson(_) => "NotJson",
            Error::NotConnected(_) => "NotConnected",
            Error::StoreUnavailable(_) => "StoreUnavailable",
            Error::ClaimNotFound(_) => "ClaimNotFound",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::TopicBusy(_) => "TopicBusy",
            Error::NotRunning(_) => "NotRunning",
            Error::UnknownExperiment(_) => "UnknownExperiment",
            Error::ArchiveCorrupt(_) => "ArchiveCorrupt",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::DuplicateName(_) => "DuplicateName",
            Error::UnknownConnector(_) => "UnknownConnector",
            Error::BackendUnreachable(_) => "BackendUnreachable",
            Error::BrokerUnreachable(_) => "BrokerUnreachable",
            Error::Unauthorized(_) => "Unauthorized",
            Error::Timeout(_) => "Timeout",
            Error::Protocol(_) => "Protocol",
            Error::Chunk(ChunkError::ChecksumMismatch { .. }) => "ChecksumMismatch",
            Error::Chunk(ChunkError::ChunkConflict { .. }) => "ChunkConflict",
            Error::Chunk(ChunkError::IncompleteTimeout { .. }) => "IncompleteTimeout",
            Error::Chunk(ChunkError::Malformed(_)) => "MalformedChunk",
            Error::Frame(FrameError::OversizedPayload { .. }) => "OversizedPayload",
            Error::Frame(_) => "MalformedFrame",
            Error::Io(_) => "Io",
            Error::Json(_) => "InvalidArgument",
        }
    }

    pub fn from_wire(code: &str, message: String) -> Error {
        match code {
            "UnknownTopic" => Error::UnknownTopic(message),
            "TopicExists" => Error::TopicExists(message),
            "InvalidName" => Error::InvalidName(message),
            "UnknownPartition" => Error::UnknownPartition(message),
            "OffsetOutOfRange" => Error::OffsetOutOfRange(message),
            "OversizedPayload" => Error::OversizedPayload(message),
            "StaleGeneration" => Error::StaleGeneration(message),
            "NotAssigned" => Error::NotAssigned(message),
            "AlreadyRegistered" => Error::AlreadyRegistered(message),
            "InvalidSchema" => Error::InvalidSchema(message),
            "SchemaViolation" => Error::SchemaViolation(message),
            "InvalidArgument" => Error::InvalidArgument(message),
            "NotJson" => Error::NotJson(message),
            "StoreUnavailable" => Error::StoreUnavailable(message),
            "ClaimNotFound" => Error::ClaimNotFound(message),
            "ChecksumMismatch" => Error::ChecksumMismatch(message),
            "TopicBusy" => Error::TopicBusy(message),
            "NotRunning" => Error::NotRunning(message),
            "UnknownExperiment" => Error::UnknownExperiment(message),
            "ArchiveCorrupt" => Error::ArchiveCorrupt(message),
            "UnsupportedVersion" => Error::UnsupportedVersion(message),
            "DuplicateName" => Error::DuplicateName(message),
            "UnknownConnector" => Error::UnknownConnector(message),
            "BackendUnreachable" => Error::BackendUnreachable(message),
            "Unauthorized" => Error::Unauthorized(message),
            "Timeout" => Error::Timeout(message),
            _ => Error::Protocol(format!("{code}: {message}")),
        }
    }
}
