//! Evidence bundles: a filtered, canonical excerpt of the log that a reviewer
//! can verify without access to the full log.
//!
//! ```text
//! bundle := "UALMBNDL" ‖ u32be version(=1) ‖ lp(filter_json)
//!           ‖ u64be terminal_seq ‖ terminal_hash[32] ‖ u64be count
//!           ‖ header_digest[32] ‖ record*
//! header_digest := SHA-256(every header byte before it)
//! ```
//!
//! Records use the log framing unchanged. [`verify_bundle`] re-implements the
//! parsing and hashing on its own so it stays an independent check of the
//! log code.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::digest::Digest32;
use crate::ids::AgentId;

use super::{codec, AuditEvent, EventKind};

pub const MAGIC: &[u8; 8] = b"UALMBNDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleFilter {
    pub agent_id: Option<AgentId>,
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
    pub kinds: Option<BTreeSet<EventKind>>,
}

impl BundleFilter {
    /// Time and kind criteria; agent matching needs the payload and is done
    /// by the caller.
    pub fn admits(&self, ev: &AuditEvent) -> bool {
        self.from.is_none_or(|f| ev.timestamp >= f)
            && self.to.is_none_or(|t| ev.timestamp <= t)
            && self.kinds.as_ref().is_none_or(|k| k.contains(&ev.kind))
    }
}

/// Serializes the events selected by `keep` into a bundle.
pub fn export<'a>(
    events: &'a [AuditEvent],
    filter: &BundleFilter,
    mut keep: impl FnMut(&'a AuditEvent) -> bool,
) -> Vec<u8> {
    let selected: Vec<&AuditEvent> = events.iter().filter(|e| filter.admits(e) && keep(e)).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    let filter_json = serde_json::to_vec(filter).expect("filter serializes");
    out.extend_from_slice(&(filter_json.len() as u32).to_be_bytes());
    out.extend_from_slice(&filter_json);
    let (terminal_seq, terminal_hash) = events.last().map_or((0, Digest32::ZERO), |e| (e.seq, e.hash));
    out.extend_from_slice(&terminal_seq.to_be_bytes());
    out.extend_from_slice(terminal_hash.as_bytes());
    out.extend_from_slice(&(selected.len() as u64).to_be_bytes());
    let header_digest = sha256(&[&out]);
    out.extend_from_slice(&header_digest);
    for ev in selected {
        codec::encode(ev, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleReport {
    pub filter: BundleFilter,
    pub events: u64,
    pub first_seq: Option<u64>,
    pub last_seq: Option<u64>,
    pub terminal_seq: u64,
    pub terminal_hash: Digest32,
    /// Maximal runs of consecutive sequence numbers whose links were checked.
    pub linked_runs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("not an evidence bundle")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    BadVersion(u32),
    #[error("bundle truncated at byte {0}")]
    Truncated(usize),
    #[error("bundle header is malformed: {0}")]
    BadHeader(String),
    #[error("event {index} (seq {seq}) fails verification: {why}")]
    BadEvent { index: u64, seq: u64, why: &'static str },
    #[error("declared {declared} events, found {found}")]
    CountMismatch { declared: u64, found: u64 },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or(BundleError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn be_u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_be_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn be_u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_be_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn arr32(&mut self) -> Result<[u8; 32], BundleError> {
        Ok(self.bytes(32)?.try_into().unwrap())
    }
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Standalone verifier: checks framing, every payload digest and event hash,
/// the links between consecutive sequence numbers, genesis, and the terminal
/// anchor when the terminal event is included.
pub fn verify_bundle(buf: &[u8]) -> Result<BundleReport, BundleError> {
    let mut r = Reader { buf, pos: 0 };
    if r.bytes(8).map_err(|_| BundleError::BadMagic)? != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = r.be_u32()?;
    if version != VERSION {
        return Err(BundleError::BadVersion(version));
    }
    let flen = r.be_u32()? as usize;
    let filter_json = r.bytes(flen)?;
    let terminal_seq = r.be_u64()?;
    let terminal_hash = r.arr32()?;
    let declared = r.be_u64()?;
    let header_end = r.pos;
    if r.arr32()? != sha256(&[&buf[..header_end]]) {
        return Err(BundleError::BadHeader("header digest mismatch".into()));
    }

    let filter: BundleFilter =
        serde_json::from_slice(filter_json).map_err(|e| BundleError::BadHeader(e.to_string()))?;

    let mut found = 0u64;
    let mut first_seq = None;
    let mut last: Option<(u64, [u8; 32])> = None;
    let mut linked_runs = 0u64;
    while r.pos < buf.len() {
        let bad = |why| BundleError::BadEvent { index: found, seq: last.map_or(0, |l| l.0 + 1), why };
        let body_len = r.be_u32()? as usize;
        let mut b = Reader { buf: r.bytes(body_len)?, pos: 0 };
        let seq_bytes = b.bytes(8).map_err(|_| bad("framing"))?;
        let ts_bytes = b.bytes(8).map_err(|_| bad("framing"))?;
        let kind_start = b.pos;
        let klen = b.be_u32().map_err(|_| bad("framing"))? as usize;
        b.bytes(klen).map_err(|_| bad("framing"))?;
        let actor_start = b.pos;
        let alen = b.be_u32().map_err(|_| bad("framing"))? as usize;
        b.bytes(alen).map_err(|_| bad("framing"))?;
        let actor_end = b.pos;
        let plen = b.be_u32().map_err(|_| bad("framing"))? as usize;
        let payload = b.bytes(plen).map_err(|_| bad("framing"))?;
        let pdigest = b.arr32().map_err(|_| bad("framing"))?;
        let prev = b.arr32().map_err(|_| bad("framing"))?;
        let hash = b.arr32().map_err(|_| bad("framing"))?;
        if b.pos != body_len {
            return Err(bad("framing"));
        }
        let seq = u64::from_be_bytes(seq_bytes.try_into().unwrap());
        let bad = |why| BundleError::BadEvent { index: found, seq, why };
        if sha256(&[payload]) != pdigest {
            return Err(bad("payload digest"));
        }
        let body = b.buf;
        let recomputed = sha256(&[&prev, seq_bytes, ts_bytes, &body[kind_start..actor_start], &body[actor_start..actor_end], &pdigest]);
        if recomputed != hash {
            return Err(bad("event hash"));
        }
        if seq == 1 && prev != [0u8; 32] {
            return Err(bad("genesis link"));
        }
        if seq == 0 || seq > terminal_seq {
            return Err(bad("sequence outside log"));
        }
        if seq == terminal_seq && hash != terminal_hash {
            return Err(bad("terminal anchor"));
        }
        match last {
            Some((ls, lh)) if seq == ls + 1 => {
                if prev != lh {
                    return Err(bad("chain link"));
                }
            }
            Some((ls, _)) if seq <= ls => return Err(bad("sequence order")),
            _ => linked_runs += 1,
        }
        first_seq.get_or_insert(seq);
        last = Some((seq, hash));
        found += 1;
    }
    if found != declared {
        return Err(BundleError::CountMismatch { declared, found });
    }
    Ok(BundleReport {
        filter,
        events: found,
        first_seq,
        last_seq: last.map(|l| l.0),
        terminal_seq,
        terminal_hash: Digest32(terminal_hash),
        linked_runs,
    })
}
