//! Request and response bodies of the HTTP API. Field names here are the
//! wire contract documented in `docs/api.md`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use ualm_core::audit::{AuditEvent, EventKind};
use ualm_core::clock::{Millis, Timestamp};
use ualm_core::digest::Digest32;
use ualm_core::events::Payload;
use ualm_core::ids::{AgentId, CredentialId, EntryId, OrgUnitId, PersonId, TriggerId};
use ualm_core::lifecycle::LifecycleEvent;
use ualm_core::mediation::{ConflictCase, HumanVerdict, ToolCallRequest, VerdictTarget};
use ualm_core::memory::{MemoryDraft, MemoryQuery};
use ualm_core::metrics::{Features, Thresholds, Window};
use ualm_core::policy::triggers::IncidentKind;
use ualm_core::registry::ApprovedBaseline;
use ualm_core::state::PendingRequest;

pub const OPERATOR_HEADER: &str = "x-operator-id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproveBody {
    pub owner: Option<PersonId>,
    #[serde(default)]
    pub liability_owner: Option<OrgUnitId>,
    pub expiration: Timestamp,
    #[serde(default)]
    pub baseline: Option<ApprovedBaseline>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerBody {
    pub owner: PersonId,
    #[serde(default)]
    pub liability_owner: Option<OrgUnitId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialBody {
    pub scope: BTreeSet<String>,
    pub ttl_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonBody {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionBody {
    pub event: LifecycleEvent,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillBody {
    pub reason: String,
    #[serde(default)]
    pub trigger_id: Option<TriggerId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentBody {
    pub kind: IncidentKind,
    pub severity: u8,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyBody {
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyInfo {
    pub version: u64,
    pub rule_count: u64,
    pub source_digest: Digest32,
    pub loaded_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluateBody {
    pub request: ToolCallRequest,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageBody {
    pub from: AgentId,
    pub to: AgentId,
    pub credential_id: CredentialId,
    pub payload_digest: Digest32,
    #[serde(default)]
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryWriteBody {
    pub agent_id: AgentId,
    pub credential_id: CredentialId,
    pub draft: MemoryDraft,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReadBody {
    pub agent_id: AgentId,
    pub credential_id: CredentialId,
    pub query: MemoryQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryUpdateBody {
    pub agent_id: AgentId,
    pub credential_id: CredentialId,
    pub entry_id: EntryId,
    /// Hex-encoded payload bytes.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryCreated {
    pub entry_id: EntryId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictBody {
    pub target: VerdictTarget,
    pub verdict: HumanVerdict,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingList {
    pub requests: Vec<PendingRequest>,
    pub conflicts: Vec<ConflictCase>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockBody {
    pub now: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaturityBody {
    pub features: Features,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default)]
    pub window: Option<String>,
}

/// An audit event with its payload decoded for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventView {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    pub actor: String,
    pub payload: serde_json::Value,
    pub payload_digest: Digest32,
    pub prev_hash: Digest32,
    pub hash: Digest32,
}

impl EventView {
    pub fn of(ev: &AuditEvent) -> Self {
        let payload = serde_json::from_slice(&ev.payload).unwrap_or(serde_json::Value::Null);
        EventView {
            seq: ev.seq,
            timestamp: ev.timestamp,
            kind: ev.kind,
            actor: ev.actor.clone(),
            payload,
            payload_digest: ev.payload_digest,
            prev_hash: ev.prev_hash,
            hash: ev.hash,
        }
    }

    /// Agents the event concerns, for filtering.
    pub fn mentions(ev: &AuditEvent, agent: &AgentId) -> bool {
        Payload::decode(ev).is_ok_and(|p| p.agents().contains(&agent))
    }
}

/// KPI window: `full`, a trailing duration such as `30d` ending at
/// `now`, or `<start_ms>,<end_ms>`.
pub fn parse_window(text: &str, now: Timestamp) -> Result<Option<Window>, String> {
    let text = text.trim();
    if text.is_empty() || text == "full" {
        return Ok(None);
    }
    if let Some((a, b)) = text.split_once(',') {
        let start = a.trim().parse().map_err(|_| format!("bad window start `{a}`"))?;
        let end = b.trim().parse().map_err(|_| format!("bad window end `{b}`"))?;
        if end < start {
            return Err("window end precedes start".into());
        }
        return Ok(Some(Window { start: Timestamp(start), end: Timestamp(end) }));
    }
    let span = Millis::parse(text)?;
    Ok(Some(Window { start: now - span, end: now }))
}
