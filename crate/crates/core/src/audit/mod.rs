//! Append-only, hash-chained audit log.
//!
//! One totally ordered log records every governance event. Each record
//! commits to its predecessor's hash, so any changed byte in events `1..=n`
//! makes [`verify_bytes`] report the first affected sequence number.

pub mod bundle;
pub mod codec;
mod store;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::digest::Digest32;

pub use store::{AuditStore, FileStore, MemoryLogStore};

macro_rules! event_kinds {
    ($($variant:ident => $tag:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum EventKind {
            $($variant),*
        }

        impl EventKind {
            pub const ALL: &'static [EventKind] = &[$(EventKind::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(EventKind::$variant => $tag),*
                }
            }

            pub fn parse(s: &str) -> Option<EventKind> {
                match s {
                    $($tag => Some(EventKind::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

event_kinds! {
    Registration => "registration",
    Approval => "approval",
    OwnerReassigned => "owner_reassigned",
    OwnerDeparted => "owner_departed",
    BaselineApproved => "baseline_approved",
    CredentialIssued => "credential_issued",
    CredentialRevoked => "credential_revoked",
    Decision => "decision",
    DecisionAmendment => "decision_amendment",
    ToolCall => "tool_call",
    Message => "message",
    Conflict => "conflict",
    KillSwitch => "kill_switch",
    MemoryWrite => "memory_write",
    MemoryRead => "memory_read",
    MemoryPurge => "memory_purge",
    MemoryFreeze => "memory_freeze",
    Transition => "transition",
    Drift => "drift",
    DriftCleared => "drift_cleared",
    Incident => "incident",
    Termination => "termination",
    PolicyLoaded => "policy_loaded",
    KpiSnapshot => "kpi_snapshot",
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    pub actor: String,
    #[serde(with = "crate::hexbytes")]
    pub payload: Vec<u8>,
    pub payload_digest: Digest32,
    pub prev_hash: Digest32,
    pub hash: Digest32,
}

impl AuditEvent {
    /// Recomputes digest and hash from the event's own fields.
    pub fn is_self_consistent(&self) -> bool {
        Digest32::of(&self.payload) == self.payload_digest
            && codec::chain_hash(&self.prev_hash, self.seq, self.timestamp, self.kind.as_str(), &self.actor, &self.payload_digest)
                == self.hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    StorageFailure(String),
    #[error("range {from}..={to} outside log of {len} events")]
    RangeOutOfBounds { from: u64, to: u64, len: u64 },
    #[error("refusing to overwrite seq {0}")]
    Overwrite(u64),
    #[error("audit log is corrupt at seq {0}")]
    Corrupt(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok { terminal_seq: u64, terminal_hash: Digest32 },
    Corrupt { seq: u64 },
}

/// Verifies records `from..=to` of a raw log image. Records before `from` are
/// only parsed; `from`'s link is checked against the stored hash of `from - 1`.
pub fn verify_bytes(buf: &[u8], from: u64, to: u64) -> ChainStatus {
    let mut pos = 0usize;
    let mut prev = Digest32::ZERO;
    let mut expected = 1u64;
    while expected <= to {
        let Ok((ev, next)) = codec::decode(buf, pos) else {
            return ChainStatus::Corrupt { seq: expected };
        };
        if expected >= from {
            let ok = ev.seq == expected && ev.prev_hash == prev && ev.is_self_consistent();
            if !ok {
                return ChainStatus::Corrupt { seq: expected };
            }
        } else if ev.seq != expected {
            return ChainStatus::Corrupt { seq: expected };
        }
        prev = ev.hash;
        pos = next;
        expected += 1;
    }
    ChainStatus::Ok { terminal_seq: to, terminal_hash: prev }
}

/// Decodes and fully verifies a raw log image.
pub fn decode_verified(buf: &[u8]) -> Result<Vec<AuditEvent>, AuditError> {
    let mut events = Vec::new();
    let mut pos = 0;
    let mut prev = Digest32::ZERO;
    while pos < buf.len() {
        let seq = events.len() as u64 + 1;
        let (ev, next) = codec::decode(buf, pos).map_err(|_| AuditError::Corrupt(seq))?;
        if ev.seq != seq || ev.prev_hash != prev || !ev.is_self_consistent() {
            return Err(AuditError::Corrupt(seq));
        }
        prev = ev.hash;
        pos = next;
        events.push(ev);
    }
    Ok(events)
}

/// An entry waiting to be sequenced.
#[derive(Debug, Clone)]
pub struct PendingEvent {
    pub kind: EventKind,
    pub actor: String,
    pub payload: Vec<u8>,
}

pub struct AuditLog {
    store: Box<dyn AuditStore>,
    events: Vec<AuditEvent>,
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog").field("len", &self.events.len()).finish()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self { store: Box::new(MemoryLogStore::default()), events: Vec::new() }
    }

    /// Opens a log over `store`, verifying whatever it already holds.
    pub fn open(store: Box<dyn AuditStore>) -> Result<Self, AuditError> {
        let bytes = store.read_all()?;
        let events = decode_verified(&bytes)?;
        Ok(Self { store, events })
    }

    pub fn len(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn head(&self) -> Digest32 {
        self.events.last().map_or(Digest32::ZERO, |e| e.hash)
    }

    pub fn append(&mut self, kind: EventKind, actor: &str, payload: &[u8], at: Timestamp) -> Result<AuditEvent, AuditError> {
        let mut out = self.append_batch(vec![PendingEvent { kind, actor: actor.to_owned(), payload: payload.to_vec() }], at)?;
        Ok(out.remove(0))
    }

    /// Sequences and durably writes a batch; either every event lands or none.
    pub fn append_batch(&mut self, batch: Vec<PendingEvent>, at: Timestamp) -> Result<Vec<AuditEvent>, AuditError> {
        let mut prev = self.head();
        let first_seq = self.len() + 1;
        let mut sealed = Vec::with_capacity(batch.len());
        let mut bytes = Vec::new();
        for (i, p) in batch.into_iter().enumerate() {
            let seq = first_seq + i as u64;
            let payload_digest = Digest32::of(&p.payload);
            let hash = codec::chain_hash(&prev, seq, at, p.kind.as_str(), &p.actor, &payload_digest);
            let ev = AuditEvent {
                seq,
                timestamp: at,
                kind: p.kind,
                actor: p.actor,
                payload: p.payload,
                payload_digest,
                prev_hash: prev,
                hash,
            };
            codec::encode(&ev, &mut bytes);
            prev = hash;
            sealed.push(ev);
        }
        if sealed.is_empty() {
            return Ok(sealed);
        }
        self.store.append(first_seq, sealed.len() as u64, &bytes)?;
        self.events.extend(sealed.iter().cloned());
        Ok(sealed)
    }

    pub fn verify_chain(&self, from: u64, to: u64) -> Result<ChainStatus, AuditError> {
        let len = self.len();
        if from == 0 || from > to || to > len {
            return Err(AuditError::RangeOutOfBounds { from, to, len });
        }
        Ok(verify_bytes(&self.store.read_all()?, from, to))
    }

    /// Verifies the whole stored log; an empty log is trivially intact.
    pub fn verify_all(&self) -> Result<ChainStatus, AuditError> {
        if self.is_empty() {
            return Ok(ChainStatus::Ok { terminal_seq: 0, terminal_hash: Digest32::ZERO });
        }
        self.verify_chain(1, self.len())
    }

    pub fn raw_bytes(&self) -> Result<Vec<u8>, AuditError> {
        self.store.read_all()
    }

    pub fn flush(&mut self) -> Result<(), AuditError> {
        self.store.flush()
    }

    /// Arms a one-shot storage failure on the next append (fault injection).
    pub fn fail_next_append(&mut self) {
        self.store.fail_next_append();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(n: usize) -> AuditLog {
        let mut log = AuditLog::in_memory();
        for i in 0..n {
            log.append(EventKind::Transition, "system", format!("{{\"i\":{i}}}").as_bytes(), Timestamp(i as i64))
                .unwrap();
        }
        log
    }

    #[test]
    fn genesis_and_chain() {
        let log = log_with(3);
        let ev = log.events();
        assert_eq!(ev[0].seq, 1);
        assert_eq!(ev[0].prev_hash, Digest32::ZERO);
        assert_eq!(ev[1].prev_hash, ev[0].hash);
        assert_eq!(ev[2].prev_hash, ev[1].hash);
        assert_eq!(
            log.verify_chain(1, 3).unwrap(),
            ChainStatus::Ok { terminal_seq: 3, terminal_hash: ev[2].hash }
        );
    }

    #[test]
    fn range_checks() {
        let log = log_with(3);
        assert!(matches!(log.verify_chain(0, 2), Err(AuditError::RangeOutOfBounds { .. })));
        assert!(matches!(log.verify_chain(2, 4), Err(AuditError::RangeOutOfBounds { .. })));
        assert!(matches!(log.verify_chain(3, 2), Err(AuditError::RangeOutOfBounds { .. })));
        assert!(matches!(log_with(0).verify_all(), Ok(ChainStatus::Ok { terminal_seq: 0, .. })));
    }

    #[test]
    fn flipped_payload_digest_byte_is_located() {
        let log = log_with(10);
        let mut bytes = log.raw_bytes().unwrap();
        let offsets = codec::record_offsets(&bytes);
        // payload_digest sits 96 bytes before the end of record 7
        let end_of_7 = offsets[7];
        bytes[end_of_7 - 96] ^= 0x01;
        assert_eq!(verify_bytes(&bytes, 1, 10), ChainStatus::Corrupt { seq: 7 });
        // a corruption before the range still blocks parsing only when framing breaks
        assert!(matches!(verify_bytes(&bytes, 8, 10), ChainStatus::Ok { .. }));
    }

    #[test]
    fn failed_append_leaves_log_unchanged() {
        let mut log = log_with(2);
        log.fail_next_append();
        let err = log.append(EventKind::Drift, "system", b"{}", Timestamp(9)).unwrap_err();
        assert!(matches!(err, AuditError::StorageFailure(_)));
        assert_eq!(log.len(), 2);
        assert!(matches!(log.verify_all().unwrap(), ChainStatus::Ok { terminal_seq: 2, .. }));
        log.append(EventKind::Drift, "system", b"{}", Timestamp(9)).unwrap();
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn kinds_roundtrip() {
        for k in EventKind::ALL {
            assert_eq!(EventKind::parse(k.as_str()), Some(*k));
        }
    }
}
