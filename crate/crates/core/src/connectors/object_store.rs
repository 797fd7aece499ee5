//! Out-of-band storage for payloads too large to stream, redeemed by claim tickets.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::wire::checksum::Crc32;
use crate::wire::{claim, DataMessage};
use crate::{Error, Result};

/// Reference to a stored object, carried in message headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTicket {
    pub store: String,
    pub key: String,
    pub size: u64,
    pub crc32: String,
}

impl ClaimTicket {
    /// Builds the ticket message that stands in for the stored payload.
    pub fn to_message(&self, mut msg: DataMessage) -> DataMessage {
        msg.payload.clear();
        msg.headers.insert(claim::STORE.into(), self.store.clone());
        msg.headers.insert(claim::KEY.into(), self.key.clone());
        msg.headers.insert(claim::SIZE.into(), self.size.to_string());
        msg.headers.insert(claim::CRC.into(), self.crc32.clone());
        msg
    }

    /// `Ok(None)` when `msg` is not a claim ticket.
    pub fn from_message(msg: &DataMessage) -> Result<Option<ClaimTicket>> {
        let Some(key) = msg.header(claim::KEY) else { return Ok(None) };
        let get = |k: &str| msg.header(k).ok_or_else(|| Error::Protocol(format!("claim ticket without {k}")));
        Ok(Some(ClaimTicket {
            store: get(claim::STORE)?.to_string(),
            key: key.to_string(),
            size: get(claim::SIZE)?.parse().map_err(|_| Error::Protocol(format!("bad {}", claim::SIZE)))?,
            crc32: get(claim::CRC)?.to_string(),
        }))
    }

    /// Removes the ticket headers after the payload has been substituted back in.
    pub fn strip(msg: &mut DataMessage) {
        for k in [claim::STORE, claim::KEY, claim::SIZE, claim::CRC] {
            msg.headers.remove(k);
        }
    }
}

pub trait ObjectStore: Send + Sync {
    fn name(&self) -> &str;
    fn put(&self, bytes: &[u8]) -> Result<ClaimTicket>;
    /// Returns the stored bytes after checking them against the ticket.
    fn get(&self, ticket: &ClaimTicket) -> Result<Vec<u8>>;
    /// `Ok(false)` if the key was not present.
    fn delete(&self, key: &str) -> Result<bool>;
}

pub const FS_STORE: &str = "fs";

/// Objects as files under one directory.
#[derive(Debug, Clone)]
pub struct FsObjectStore {
    root: PathBuf,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty() && key.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

impl FsObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<FsObjectStore> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::StoreUnavailable(format!("{}: {e}", root.display())))?;
        Ok(FsObjectStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, key: &str) -> Result<PathBuf> {
        if !valid_key(key) {
            return Err(Error::ClaimNotFound(format!("malformed key {key:?}")));
        }
        Ok(self.root.join(key))
    }
}

impl ObjectStore for FsObjectStore {
    fn name(&self) -> &str {
        FS_STORE
    }

    fn put(&self, bytes: &[u8]) -> Result<ClaimTicket> {
        let unavailable = |e: std::io::Error| Error::StoreUnavailable(format!("{}: {e}", self.root.display()));
        let mut crc = Crc32::new();
        crc.update(bytes);
        let crc32 = crc.finish_hex();
        let key = format!("{crc32}-{}-{}", bytes.len(), uuid::Uuid::new_v4().simple());
        let tmp = self.root.join(format!(".{key}.tmp"));
        let mut f = fs::File::create(&tmp).map_err(unavailable)?;
        f.write_all(bytes).map_err(unavailable)?;
        f.sync_all().map_err(unavailable)?;
        fs::rename(&tmp, self.root.join(&key)).map_err(unavailable)?;
        Ok(ClaimTicket { store: FS_STORE.into(), key, size: bytes.len() as u64, crc32 })
    }

    fn get(&self, ticket: &ClaimTicket) -> Result<Vec<u8>> {
        if ticket.store != FS_STORE {
            return Err(Error::StoreUnavailable(format!("no access to store {:?}", ticket.store)));
        }
        let bytes = match fs::read(self.path_of(&ticket.key)?) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(Error::ClaimNotFound(ticket.key.clone())),
            Err(e) => return Err(Error::StoreUnavailable(e.to_string())),
        };
        let actual = crate::wire::crc32(&bytes);
        if actual != ticket.crc32 || bytes.len() as u64 != ticket.size {
            return Err(Error::ChecksumMismatch(format!(
                "object {}: {} bytes crc {actual}, ticket says {} bytes crc {}",
                ticket.key,
                bytes.len(),
                ticket.size,
                ticket.crc32
            )));
        }
        Ok(bytes)
    }

    fn delete(&self, key: &str) -> Result<bool> {
        match fs::remove_file(self.path_of(key)?) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
            Err(e) => Err(Error::StoreUnavailable(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::reference_crc32_hex;

    fn store() -> (tempfile::TempDir, FsObjectStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = FsObjectStore::open(dir.path().join("objects")).unwrap();
        (dir, s)
    }

    #[test]
    fn round_trip_and_repeatable_get() {
        let (_d, s) = store();
        let data: Vec<u8> = (0..100_000u32).map(|i| (i % 253) as u8).collect();
        let t = s.put(&data).unwrap();
        assert_eq!(t.size, 100_000);
        assert_eq!(t.crc32, reference_crc32_hex(&data));
        assert!(t.key.starts_with(&format!("{}-100000-", t.crc32)));
        assert_eq!(s.get(&t).unwrap(), data);
        assert_eq!(s.get(&t).unwrap(), data);
    }

    #[test]
    fn empty_object() {
        let (_d, s) = store();
        let t = s.put(b"").unwrap();
        assert_eq!((t.size, t.crc32.as_str()), (0, "00000000"));
        assert!(s.get(&t).unwrap().is_empty());
    }

    #[test]
    fn deleted_and_corrupt_objects() {
        let (_d, s) = store();
        let t = s.put(b"hello world").unwrap();
        let path = s.root().join(&t.key);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(s.get(&t), Err(Error::ChecksumMismatch(_))));
        assert!(s.delete(&t.key).unwrap());
        assert!(!s.delete(&t.key).unwrap());
        assert!(matches!(s.get(&t), Err(Error::ClaimNotFound(_))));
        let traversal = ClaimTicket { key: "../etc/passwd".into(), ..t };
        assert!(matches!(s.get(&traversal), Err(Error::ClaimNotFound(_))));
    }

    #[test]
    fn ticket_headers_round_trip() {
        let t = ClaimTicket { store: "fs".into(), key: "abc-1-2".into(), size: 7, crc32: "00000001".into() };
        let msg = t.to_message(DataMessage::new("mdml.a.b", vec![1, 2, 3]).with_header("x", "y"));
        assert!(msg.payload.is_empty());
        assert_eq!(ClaimTicket::from_message(&msg).unwrap(), Some(t));
        let mut plain = msg.clone();
        ClaimTicket::strip(&mut plain);
        assert_eq!(plain.headers.len(), 1);
        assert_eq!(ClaimTicket::from_message(&plain).unwrap(), None);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn get_after_put_is_identity(data in proptest::collection::vec(proptest::num::u8::ANY, 0..65536)) {
            let (_d, s) = store();
            let t = s.put(&data).unwrap();
            proptest::prop_assert_eq!(s.get(&t).unwrap(), data);
        }
    }
}
