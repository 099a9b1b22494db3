use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{codec, AuditError};

/// Durable byte sink for sealed records. Implementations must be
/// all-or-nothing per call and must refuse to write a sequence number that is
/// not exactly the next one.
pub trait AuditStore: Send + Sync {
    fn append(&mut self, first_seq: u64, count: u64, records: &[u8]) -> Result<(), AuditError>;
    fn read_all(&self) -> Result<Vec<u8>, AuditError>;
    fn flush(&mut self) -> Result<(), AuditError> {
        Ok(())
    }
    /// Makes the next append fail with `StorageFailure` (fault injection).
    fn fail_next_append(&mut self);
}

#[derive(Debug, Default)]
pub struct MemoryLogStore {
    bytes: Vec<u8>,
    next_seq: u64,
    fail_next: bool,
}

impl AuditStore for MemoryLogStore {
    fn append(&mut self, first_seq: u64, count: u64, records: &[u8]) -> Result<(), AuditError> {
        if std::mem::take(&mut self.fail_next) {
            return Err(AuditError::StorageFailure("injected".into()));
        }
        let next = self.next_seq.max(1);
        if first_seq != next {
            return Err(AuditError::Overwrite(first_seq));
        }
        self.bytes.extend_from_slice(records);
        self.next_seq = next + count;
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<u8>, AuditError> {
        Ok(self.bytes.clone())
    }

    fn fail_next_append(&mut self) {
        self.fail_next = true;
    }
}

/// Append-only file. Each batch is written with one `write_all` and, when
/// `fsync` is set, synced before returning; a failed write is truncated away.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
    len: u64,
    next_seq: u64,
    fsync: bool,
    fail_next: bool,
}

fn io_err(e: std::io::Error) -> AuditError {
    AuditError::StorageFailure(e.to_string())
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;
        let count = codec::record_offsets(&bytes).len() as u64;
        Ok(Self { path, file, len: bytes.len() as u64, next_seq: count + 1, fsync, fail_next: false })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AuditStore for FileStore {
    fn append(&mut self, first_seq: u64, count: u64, records: &[u8]) -> Result<(), AuditError> {
        if std::mem::take(&mut self.fail_next) {
            return Err(AuditError::StorageFailure("injected".into()));
        }
        if first_seq != self.next_seq {
            return Err(AuditError::Overwrite(first_seq));
        }
        let result = self.file.write_all(records).and_then(|_| {
            if self.fsync {
                self.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = result {
            let _ = self.file.set_len(self.len);
            return Err(io_err(e));
        }
        self.len += records.len() as u64;
        self.next_seq += count;
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<u8>, AuditError> {
        std::fs::read(&self.path).map_err(io_err)
    }

    fn flush(&mut self) -> Result<(), AuditError> {
        self.file.flush().and_then(|_| self.file.sync_all()).map_err(io_err)
    }

    fn fail_next_append(&mut self) {
        self.fail_next = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditLog, ChainStatus, EventKind};
    use crate::clock::Timestamp;

    #[test]
    fn rejects_out_of_order_sequence() {
        let mut s = MemoryLogStore::default();
        s.append(1, 1, b"x").unwrap();
        assert_eq!(s.append(1, 1, b"y"), Err(AuditError::Overwrite(1)));
        assert_eq!(s.append(3, 1, b"y"), Err(AuditError::Overwrite(3)));
    }

    #[test]
    fn file_log_reopens_and_detects_disk_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        {
            let mut log = AuditLog::open(Box::new(FileStore::open(&path, true).unwrap())).unwrap();
            for i in 0..10 {
                log.append(EventKind::Incident, "system", format!("{{\"n\":{i}}}").as_bytes(), Timestamp(i)).unwrap();
            }
        }
        let log = AuditLog::open(Box::new(FileStore::open(&path, false).unwrap())).unwrap();
        assert_eq!(log.len(), 10);

        let mut bytes = std::fs::read(&path).unwrap();
        let offsets = codec::record_offsets(&bytes);
        bytes[offsets[7] - 96] ^= 0x80; // payload_digest of event 7
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(log.verify_chain(1, 10).unwrap(), ChainStatus::Corrupt { seq: 7 });
        assert!(matches!(
            AuditLog::open(Box::new(FileStore::open(&path, false).unwrap())),
            Err(AuditError::Corrupt(7))
        ));
    }
}
