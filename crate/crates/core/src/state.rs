//! The fleet projection: everything the control plane knows, rebuilt by
//! folding audit payloads. Live operations and replay share [`FleetState::apply`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::AuditEvent;
use crate::clock::Timestamp;
use crate::digest::{Digest32, Hasher};
use crate::events::{Payload, PayloadError};
use crate::ids::{AgentId, CaseId, DecisionId, RequestId};
use crate::lifecycle::{DriftFinding, LifecycleState, TerminationReport};
use crate::mediation::{
    ConflictCase, DecisionAmendment, DecisionRecord, Disposition, MediationOutcome, RequestVerdict, ToolCallRequest,
};
use crate::memory::MemoryStore;
use crate::policy::triggers::{Signal, TelemetryEvent};
use crate::policy::{PolicyStore, PolicyVersion};
use crate::registry::{CredentialStatus, Registry};

/// A request parked in the human-approval queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub request: ToolCallRequest,
    pub decision_id: DecisionId,
    pub queued_at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FleetState {
    pub registry: Registry,
    pub memory: MemoryStore,
    pub policies: PolicyStore,
    pub decisions: BTreeMap<DecisionId, DecisionRecord>,
    pub outcomes: BTreeMap<RequestId, MediationOutcome>,
    pub amendments: Vec<DecisionAmendment>,
    pub pending: BTreeMap<RequestId, PendingRequest>,
    pub conflicts: BTreeMap<CaseId, ConflictCase>,
    pub reports: BTreeMap<AgentId, TerminationReport>,
    /// Unresolved drift, latest finding per agent.
    pub drift: BTreeMap<AgentId, DriftFinding>,
    /// Supervision signals since the agent last became Active.
    pub telemetry: BTreeMap<AgentId, Vec<TelemetryEvent>>,
    /// Digests of each agent's decision records and amendments, in log order.
    pub decision_log: BTreeMap<AgentId, Vec<Digest32>>,
    pub ungoverned_calls: u64,
    pub messages: u64,
    pub incidents: u64,
    /// Largest generated identifier seen, so a restored generator stays above it.
    pub last_id: Option<String>,
    pub last_seq: u64,
    pub head: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

impl FleetState {
    /// Folds a verified event list into a fresh state.
    pub fn replay(events: &[AuditEvent]) -> Result<FleetState, ReplayError> {
        let mut state = FleetState::default();
        let mut prev = Digest32::ZERO;
        for (i, ev) in events.iter().enumerate() {
            if ev.seq != i as u64 + 1 || ev.prev_hash != prev || !ev.is_self_consistent() {
                return Err(ReplayError::CorruptLog(format!("chain breaks at seq {}", i + 1)));
            }
            prev = ev.hash;
            let payload = Payload::decode(ev)?;
            state.apply(ev, &payload).map_err(ReplayError::CorruptLog)?;
        }
        Ok(state)
    }

    /// Digest over the agent's decision history, as carried by its
    /// termination report.
    pub fn decision_log_digest(&self, agent: &AgentId) -> Digest32 {
        let mut h = Hasher::new();
        for d in self.decision_log.get(agent).into_iter().flatten() {
            h.update(d.as_bytes());
        }
        h.finish()
    }

    fn note_id(&mut self, id: &str) {
        if self.last_id.as_deref().is_none_or(|l| id > l) {
            self.last_id = Some(id.to_owned());
        }
    }

    fn signal(&mut self, agent: &AgentId, at: Timestamp, signal: Signal) {
        self.telemetry
            .entry(agent.clone())
            .or_default()
            .push(TelemetryEvent { agent_id: agent.clone(), at, signal });
    }

    /// Applies one event. Errors mean the payload contradicts the state it
    /// claims to follow, which only a forged or foreign log can produce.
    pub fn apply(&mut self, ev: &AuditEvent, payload: &Payload) -> Result<(), String> {
        let at = ev.timestamp;
        match payload {
            Payload::Registration(rec) => {
                if self.registry.agents.contains_key(&rec.agent_id) {
                    return Err(format!("agent {} registered twice", rec.agent_id));
                }
                self.note_id(rec.agent_id.as_str());
                self.registry.agents.insert(rec.agent_id.clone(), rec.clone());
            }
            Payload::Approval(p) => {
                let a = self.agent_mut(&p.agent_id)?;
                a.accountable_owner = Some(p.accountable_owner.clone());
                a.liability_owner = p.liability_owner.clone();
                a.expiration = Some(p.expiration);
                a.baseline = p.baseline.clone();
                a.state = LifecycleState::Approved;
            }
            Payload::OwnerReassigned(p) => {
                let a = self.agent_mut(&p.agent_id)?;
                a.accountable_owner = Some(p.accountable_owner.clone());
                a.liability_owner = p.liability_owner.clone();
            }
            Payload::OwnerDeparted(p) => {
                self.registry.departed_owners.insert(p.person.clone());
                for a in &p.affected {
                    self.signal(a, at, Signal::OwnerRevoked);
                }
            }
            Payload::BaselineApproved(p) => {
                self.agent_mut(&p.agent_id)?.baseline = Some(p.baseline.clone());
                self.drift.remove(&p.agent_id);
            }
            Payload::CredentialIssued(c) => {
                self.note_id(c.credential_id.as_str());
                self.registry.credentials.insert(c.credential_id.clone(), c.clone());
            }
            Payload::CredentialRevoked(p) => {
                for id in &p.credential_ids {
                    match self.registry.credentials.get(id) {
                        Some(c) if c.status == CredentialStatus::Active && c.agent_id == p.agent_id => {}
                        _ => return Err(format!("credential {id} is not an active credential of {}", p.agent_id)),
                    }
                }
                self.registry.revoke(&p.credential_ids, p.revoked_at);
            }
            Payload::Decision(d) => {
                let rec = &d.decision;
                self.note_id(rec.decision_id.as_str());
                self.decisions.insert(rec.decision_id.clone(), rec.clone());
                self.decision_log.entry(rec.agent_id.clone()).or_default().push(rec.digest());
                // A duplicate request keeps the outcome of its first decision.
                self.outcomes.entry(rec.request_id.clone()).or_insert(
                    MediationOutcome {
                        request_id: rec.request_id.clone(),
                        decision_id: rec.decision_id.clone(),
                        effect: rec.effect,
                        disposition: d.disposition,
                        completed_at: at,
                    },
                );
                if d.disposition == Disposition::PendingHuman {
                    self.pending.insert(
                        rec.request_id.clone(),
                        PendingRequest { request: d.request.clone(), decision_id: rec.decision_id.clone(), queued_at: at },
                    );
                }
                if self.registry.agents.contains_key(&rec.agent_id) {
                    self.signal(&rec.agent_id, at, Signal::Decision { effect: rec.effect });
                }
            }
            Payload::DecisionAmendment(p) => {
                let am = &p.amendment;
                if self.pending.remove(&am.request_id).is_none() {
                    return Err(format!("amendment for request {} that is not pending", am.request_id));
                }
                self.note_id(am.amendment_id.as_str());
                let digest = Digest32::of(&serde_json::to_vec(am).expect("amendment serializes"));
                self.decision_log.entry(p.agent_id.clone()).or_default().push(digest);
                if let Some(o) = self.outcomes.get_mut(&am.request_id) {
                    o.disposition = p.disposition;
                    o.completed_at = at;
                }
                debug_assert_eq!(p.disposition == Disposition::Executed, am.verdict == RequestVerdict::Allow);
                self.amendments.push(am.clone());
            }
            Payload::ToolCall(_) => self.ungoverned_calls += 1,
            Payload::Message(m) => {
                self.note_id(m.message_id.as_str());
                self.messages += 1;
            }
            Payload::Conflict(c) => {
                self.note_id(c.case_id.as_str());
                self.conflicts.insert(c.case_id.clone(), c.clone());
            }
            Payload::KillSwitch(_) => {}
            Payload::MemoryWrite(p) => {
                let e = &p.entry;
                if p.update != self.memory.entries.contains_key(&e.entry_id) {
                    return Err(format!("memory write/update mismatch for {}", e.entry_id));
                }
                self.note_id(e.entry_id.as_str());
                self.memory.entries.insert(e.entry_id.clone(), e.clone());
            }
            Payload::MemoryRead(_) => {}
            Payload::MemoryPurge(p) => {
                for id in &p.entry_ids {
                    let e = self.memory.entries.get_mut(id).ok_or_else(|| format!("purge of unknown entry {id}"))?;
                    e.tombstone = true;
                }
            }
            Payload::MemoryFreeze(p) => {
                for id in &p.entry_ids {
                    let e = self.memory.entries.get_mut(id).ok_or_else(|| format!("freeze of unknown entry {id}"))?;
                    e.frozen = true;
                }
            }
            Payload::Transition(t) => {
                let a = self.agent_mut(&t.agent_id)?;
                if a.state != t.from || a.state.apply(t.event) != Ok(t.to) {
                    return Err(format!("transition {:?} from {} is not in the table", t.event, a.state));
                }
                a.state = t.to;
                if t.to == LifecycleState::Active {
                    self.telemetry.remove(&t.agent_id);
                }
                if t.to == LifecycleState::Decommissioned {
                    self.drift.remove(&t.agent_id);
                    self.telemetry.remove(&t.agent_id);
                }
            }
            Payload::Drift(f) => {
                self.drift.insert(f.agent_id.clone(), f.clone());
                self.signal(&f.agent_id, at, Signal::Drift);
            }
            Payload::DriftCleared(p) => {
                self.drift.remove(&p.agent_id);
            }
            Payload::Incident(p) => {
                self.incidents += 1;
                self.signal(&p.agent_id, at, Signal::Incident { kind: p.kind, severity: p.severity });
            }
            Payload::Termination(r) => {
                if self.reports.insert(r.agent_id.clone(), r.clone()).is_some() {
                    return Err(format!("second termination report for {}", r.agent_id));
                }
            }
            Payload::PolicyLoaded(p) => {
                let v = PolicyVersion::compile(p.version, &p.document, at).map_err(|e| e.to_string())?;
                if v.version != self.policies.next_version() || v.source_digest != p.source_digest {
                    return Err(format!("policy version {} out of order or digest mismatch", p.version));
                }
                self.policies.insert(v);
            }
            Payload::KpiSnapshot(_) => {}
        }
        self.last_seq = ev.seq;
        self.head = ev.hash;
        Ok(())
    }

    fn agent_mut(&mut self, id: &AgentId) -> Result<&mut crate::registry::AgentRecord, String> {
        self.registry.agents.get_mut(id).ok_or_else(|| format!("event references unknown agent {id}"))
    }
}
