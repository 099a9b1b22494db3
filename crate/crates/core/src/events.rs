//! Typed audit payloads, one per event kind. The audit record stores the
//! canonical JSON of the inner value; the kind tag lives in the record itself.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, EventKind};
use crate::clock::Timestamp;
use crate::digest::Digest32;
use crate::ids::{AgentId, CredentialId, EntryId, OrgUnitId, PersonId, RequestId, TriggerId, WorkflowId};
use crate::lifecycle::{DriftFinding, LifecycleEvent, LifecycleState, TerminationReport};
use crate::mediation::{
    ConflictCase, DecisionAmendment, DecisionRecord, Disposition, MessageReceipt, ToolCallRequest,
};
use crate::memory::MemoryEntry;
use crate::metrics::KpiSnapshot;
use crate::policy::triggers::IncidentKind;
use crate::registry::{AgentRecord, ApprovedBaseline, NhiCredential};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Approval {
    pub agent_id: AgentId,
    pub accountable_owner: PersonId,
    pub liability_owner: Option<OrgUnitId>,
    pub expiration: Timestamp,
    pub baseline: Option<ApprovedBaseline>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerReassigned {
    pub agent_id: AgentId,
    pub previous: Option<PersonId>,
    pub accountable_owner: PersonId,
    pub liability_owner: Option<OrgUnitId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerDeparted {
    pub person: PersonId,
    /// Non-decommissioned agents left without an active owner.
    pub affected: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineApproved {
    pub agent_id: AgentId,
    pub baseline: ApprovedBaseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialsRevoked {
    pub agent_id: AgentId,
    pub credential_ids: Vec<CredentialId>,
    pub reason: String,
    pub revoked_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decided {
    pub request: ToolCallRequest,
    pub decision: DecisionRecord,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Amended {
    pub agent_id: AgentId,
    pub amendment: DecisionAmendment,
    pub disposition: Disposition,
}

/// A tool call that bypassed mediation (ungoverned baseline runs only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UngovernedCall {
    pub request: ToolCallRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillSwitchFired {
    pub agent_id: AgentId,
    pub trigger_id: TriggerId,
    pub reason: String,
    pub revoked_credentials: u64,
    pub denied_requests: Vec<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryWritten {
    pub entry: MemoryEntry,
    /// An existing entry's payload was replaced.
    pub update: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRead {
    pub agent_id: AgentId,
    pub shard_key: String,
    pub workflow_id: Option<WorkflowId>,
    pub requested_categories: Option<BTreeSet<String>>,
    pub entry_ids: Vec<EntryId>,
    pub returned_categories: BTreeSet<String>,
    pub phi_returned: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryPurged {
    pub entry_ids: Vec<EntryId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFrozen {
    pub agent_id: AgentId,
    pub entry_ids: Vec<EntryId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transitioned {
    pub agent_id: AgentId,
    pub from: LifecycleState,
    pub to: LifecycleState,
    pub event: LifecycleEvent,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftCleared {
    pub agent_id: AgentId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentReported {
    pub agent_id: AgentId,
    pub kind: IncidentKind,
    pub severity: u8,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLoaded {
    pub version: u64,
    pub source_digest: Digest32,
    pub rule_count: u64,
    /// Full document text, so replay can recompile the version.
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Registration(AgentRecord),
    Approval(Approval),
    OwnerReassigned(OwnerReassigned),
    OwnerDeparted(OwnerDeparted),
    BaselineApproved(BaselineApproved),
    CredentialIssued(NhiCredential),
    CredentialRevoked(CredentialsRevoked),
    Decision(Box<Decided>),
    DecisionAmendment(Amended),
    ToolCall(UngovernedCall),
    Message(MessageReceipt),
    Conflict(ConflictCase),
    KillSwitch(KillSwitchFired),
    MemoryWrite(MemoryWritten),
    MemoryRead(MemoryRead),
    MemoryPurge(MemoryPurged),
    MemoryFreeze(MemoryFrozen),
    Transition(Transitioned),
    Drift(DriftFinding),
    DriftCleared(DriftCleared),
    Incident(IncidentReported),
    Termination(TerminationReport),
    PolicyLoaded(PolicyLoaded),
    KpiSnapshot(KpiSnapshot),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {seq} ({kind}) has an unreadable payload: {message}")]
pub struct PayloadError {
    pub seq: u64,
    pub kind: EventKind,
    pub message: String,
}

macro_rules! payload_table {
    ($($variant:ident),* $(,)?) => {
        impl Payload {
            pub fn kind(&self) -> EventKind {
                match self {
                    $(Payload::$variant(_) => EventKind::$variant),*
                }
            }

            pub fn to_bytes(&self) -> Vec<u8> {
                let r = match self {
                    $(Payload::$variant(p) => serde_json::to_vec(p)),*
                };
                r.expect("payload serializes")
            }

            pub fn decode(event: &AuditEvent) -> Result<Payload, PayloadError> {
                let err = |e: serde_json::Error| PayloadError { seq: event.seq, kind: event.kind, message: e.to_string() };
                Ok(match event.kind {
                    $(EventKind::$variant => Payload::$variant(serde_json::from_slice(&event.payload).map_err(err)?)),*
                })
            }
        }
    };
}

payload_table!(
    Registration,
    Approval,
    OwnerReassigned,
    OwnerDeparted,
    BaselineApproved,
    CredentialIssued,
    CredentialRevoked,
    Decision,
    DecisionAmendment,
    ToolCall,
    Message,
    Conflict,
    KillSwitch,
    MemoryWrite,
    MemoryRead,
    MemoryPurge,
    MemoryFreeze,
    Transition,
    Drift,
    DriftCleared,
    Incident,
    Termination,
    PolicyLoaded,
    KpiSnapshot,
);

impl Payload {
    /// Agents this event is about, for per-agent evidence bundles.
    pub fn agents(&self) -> Vec<&AgentId> {
        match self {
            Payload::Registration(a) => vec![&a.agent_id],
            Payload::Approval(p) => vec![&p.agent_id],
            Payload::OwnerReassigned(p) => vec![&p.agent_id],
            Payload::OwnerDeparted(p) => p.affected.iter().collect(),
            Payload::BaselineApproved(p) => vec![&p.agent_id],
            Payload::CredentialIssued(c) => vec![&c.agent_id],
            Payload::CredentialRevoked(p) => vec![&p.agent_id],
            Payload::Decision(d) => vec![&d.decision.agent_id],
            Payload::DecisionAmendment(p) => vec![&p.agent_id],
            Payload::ToolCall(p) => vec![&p.request.agent_id],
            Payload::Message(m) => vec![&m.from_agent, &m.to_agent],
            Payload::Conflict(c) => vec![&c.claims[0].agent_id, &c.claims[1].agent_id],
            Payload::KillSwitch(p) => vec![&p.agent_id],
            Payload::MemoryWrite(p) => vec![&p.entry.agent_id],
            Payload::MemoryRead(p) => vec![&p.agent_id],
            Payload::MemoryPurge(_) => vec![],
            Payload::MemoryFreeze(p) => vec![&p.agent_id],
            Payload::Transition(p) => vec![&p.agent_id],
            Payload::Drift(f) => vec![&f.agent_id],
            Payload::DriftCleared(p) => vec![&p.agent_id],
            Payload::Incident(p) => vec![&p.agent_id],
            Payload::Termination(r) => vec![&r.agent_id],
            Payload::PolicyLoaded(_) | Payload::KpiSnapshot(_) => vec![],
        }
    }
}
