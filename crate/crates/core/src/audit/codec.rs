//! Bit-exact record framing for the on-disk log (see `docs/formats.md`).
//!
//! ```text
//! record  := u32be body_len ‖ body
//! body    := u64be seq ‖ i64be timestamp_ms ‖ lp(kind) ‖ lp(actor) ‖ lp(payload)
//!            ‖ payload_digest[32] ‖ prev_hash[32] ‖ hash[32]
//! lp(x)   := u32be len(x) ‖ x
//! hash    := SHA-256(prev_hash ‖ u64be seq ‖ i64be timestamp ‖ lp(kind) ‖ lp(actor) ‖ payload_digest)
//! ```

use crate::clock::Timestamp;
use crate::digest::{Digest32, Hasher};

use super::{AuditEvent, EventKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Truncated,
    LengthMismatch,
    BadUtf8,
    UnknownKind(String),
}

fn put_lp(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

pub fn chain_hash(prev: &Digest32, seq: u64, ts: Timestamp, kind: &str, actor: &str, payload_digest: &Digest32) -> Digest32 {
    let mut lp_kind = Vec::with_capacity(kind.len() + 4);
    put_lp(&mut lp_kind, kind.as_bytes());
    let mut lp_actor = Vec::with_capacity(actor.len() + 4);
    put_lp(&mut lp_actor, actor.as_bytes());
    let mut h = Hasher::new();
    h.update(prev.as_bytes())
        .update(&seq.to_be_bytes())
        .update(&ts.0.to_be_bytes())
        .update(&lp_kind)
        .update(&lp_actor)
        .update(payload_digest.as_bytes());
    h.finish()
}

pub fn encode(event: &AuditEvent, out: &mut Vec<u8>) {
    let mut body = Vec::with_capacity(128 + event.payload.len());
    body.extend_from_slice(&event.seq.to_be_bytes());
    body.extend_from_slice(&event.timestamp.0.to_be_bytes());
    put_lp(&mut body, event.kind.as_str().as_bytes());
    put_lp(&mut body, event.actor.as_bytes());
    put_lp(&mut body, &event.payload);
    body.extend_from_slice(event.payload_digest.as_bytes());
    body.extend_from_slice(event.prev_hash.as_bytes());
    body.extend_from_slice(event.hash.as_bytes());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn lp(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn digest(&mut self) -> Result<Digest32, DecodeError> {
        Ok(Digest32(self.take(32)?.try_into().expect("32 bytes")))
    }
}

/// Decodes the record starting at `offset`; returns it and the next offset.
/// Performs no integrity checks beyond framing.
pub fn decode(buf: &[u8], offset: usize) -> Result<(AuditEvent, usize), DecodeError> {
    let mut outer = Cursor { buf, pos: offset };
    let body_len = outer.u32()? as usize;
    let body = outer.take(body_len)?;
    let mut c = Cursor { buf: body, pos: 0 };
    let seq = c.u64()?;
    let timestamp = Timestamp(c.u64()? as i64);
    let kind_s = std::str::from_utf8(c.lp()?).map_err(|_| DecodeError::BadUtf8)?;
    let kind = EventKind::parse(kind_s).ok_or_else(|| DecodeError::UnknownKind(kind_s.to_owned()))?;
    let actor = std::str::from_utf8(c.lp()?).map_err(|_| DecodeError::BadUtf8)?.to_owned();
    let payload = c.lp()?.to_vec();
    let payload_digest = c.digest()?;
    let prev_hash = c.digest()?;
    let hash = c.digest()?;
    if c.pos != body.len() {
        return Err(DecodeError::LengthMismatch);
    }
    Ok((AuditEvent { seq, timestamp, kind, actor, payload, payload_digest, prev_hash, hash }, outer.pos))
}

/// Byte offset at which each record begins (stops at the first framing error).
pub fn record_offsets(buf: &[u8]) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        match decode(buf, pos) {
            Ok((_, next)) => {
                offsets.push(pos);
                pos = next;
            }
            Err(_) => break,
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_identity() {
        let payload = b"{\"x\":1}".to_vec();
        let payload_digest = Digest32::of(&payload);
        let hash = chain_hash(&Digest32::ZERO, 1, Timestamp(5), "registration", "system", &payload_digest);
        let ev = AuditEvent {
            seq: 1,
            timestamp: Timestamp(5),
            kind: EventKind::Registration,
            actor: "system".into(),
            payload,
            payload_digest,
            prev_hash: Digest32::ZERO,
            hash,
        };
        let mut buf = Vec::new();
        encode(&ev, &mut buf);
        let (back, next) = decode(&buf, 0).unwrap();
        assert_eq!(back, ev);
        assert_eq!(next, buf.len());
        assert_eq!(decode(&buf[..buf.len() - 1], 0).unwrap_err(), DecodeError::Truncated);
    }

    // Pins the exact byte layout of the hash input.
    #[test]
    fn chain_hash_layout() {
        let pd = Digest32::of(b"p");
        let mut manual = Vec::new();
        manual.extend_from_slice(&[0u8; 32]);
        manual.extend_from_slice(&7u64.to_be_bytes());
        manual.extend_from_slice(&(-3i64).to_be_bytes());
        manual.extend_from_slice(&[0, 0, 0, 4]);
        manual.extend_from_slice(b"kind");
        manual.extend_from_slice(&[0, 0, 0, 1]);
        manual.extend_from_slice(b"a");
        manual.extend_from_slice(pd.as_bytes());
        assert_eq!(chain_hash(&Digest32::ZERO, 7, Timestamp(-3), "kind", "a", &pd), Digest32::of(&manual));
    }
}
