//! Orchestration and mediation: the gateway types for tool calls, inter-agent
//! messages, conflict cases and human verdicts.
//!
//! The pipeline itself (`ControlPlane::mediate`) is: credential check, scope
//! check against the credential's claims, policy evaluation against the latest
//! version, then one persisted [`DecisionRecord`] per request no matter how
//! the request ends.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::digest::Digest32;
use crate::domain::DomainClass;
use crate::ids::{AgentId, AmendmentId, CaseId, CredentialId, DecisionId, MessageId, PersonId, RequestId, WorkflowId};
use crate::policy::{Effect, MatchedRule, TraceStep, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceRef {
    pub category: String,
    pub phi: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub request_id: RequestId,
    pub agent_id: AgentId,
    pub credential_id: CredentialId,
    pub tool: String,
    #[serde(default)]
    pub resources: BTreeSet<ResourceRef>,
    pub workflow_id: WorkflowId,
    #[serde(default)]
    pub intent: String,
    /// Asserted context predicates, e.g. `human_approval_present`.
    #[serde(default)]
    pub conditions: BTreeSet<String>,
    pub submitted_at: Timestamp,
}

impl ToolCallRequest {
    pub fn touches_phi(&self) -> bool {
        self.resources.iter().any(|r| r.phi)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.resources.iter().map(|r| r.category.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Executed,
    Denied,
    PendingHuman,
}

impl Disposition {
    pub fn for_effect(effect: Effect) -> Self {
        match effect {
            Effect::Allow => Disposition::Executed,
            Effect::Deny => Disposition::Denied,
            Effect::RequireHuman => Disposition::PendingHuman,
        }
    }
}

/// Immutable per-request authorization record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision_id: DecisionId,
    pub request_id: RequestId,
    pub agent_id: AgentId,
    pub credential_id: CredentialId,
    pub timestamp: Timestamp,
    pub effect: Effect,
    pub matched_rules: Vec<MatchedRule>,
    pub winning_rule: String,
    pub policy_version: u64,
    pub precedence_trace: Vec<TraceStep>,
    /// Set when the request never reached policy evaluation.
    pub deny_reason: Option<String>,
}

impl DecisionRecord {
    pub fn from_verdict(decision_id: DecisionId, request: &ToolCallRequest, at: Timestamp, v: Verdict) -> Self {
        Self {
            decision_id,
            request_id: request.request_id.clone(),
            agent_id: request.agent_id.clone(),
            credential_id: request.credential_id.clone(),
            timestamp: at,
            effect: v.effect,
            matched_rules: v.matched_rules,
            winning_rule: v.winning_rule,
            policy_version: v.policy_version,
            precedence_trace: v.precedence_trace,
            deny_reason: None,
        }
    }

    /// A deny that short-circuited before policy evaluation.
    pub fn synthetic_deny(
        decision_id: DecisionId,
        request: &ToolCallRequest,
        at: Timestamp,
        policy_version: u64,
        reason: &str,
    ) -> Self {
        Self {
            decision_id,
            request_id: request.request_id.clone(),
            agent_id: request.agent_id.clone(),
            credential_id: request.credential_id.clone(),
            timestamp: at,
            effect: Effect::Deny,
            matched_rules: Vec::new(),
            winning_rule: format!("precheck:{reason}"),
            policy_version,
            precedence_trace: vec![TraceStep::Precheck { reason: reason.to_owned() }],
            deny_reason: Some(reason.to_owned()),
        }
    }

    pub fn digest(&self) -> Digest32 {
        Digest32::of(&serde_json::to_vec(self).expect("decision record serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestVerdict {
    Allow,
    Deny,
}

/// Appended after a human (or the kill switch) settles a pending request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAmendment {
    pub amendment_id: AmendmentId,
    pub decision_id: DecisionId,
    pub request_id: RequestId,
    pub decided_by: String,
    pub verdict: RequestVerdict,
    pub note: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediationOutcome {
    pub request_id: RequestId,
    pub decision_id: DecisionId,
    pub effect: Effect,
    pub disposition: Disposition,
    pub completed_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiptStatus {
    Delivered,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageReceipt {
    pub message_id: MessageId,
    pub from_agent: AgentId,
    pub to_agent: AgentId,
    pub payload_digest: Digest32,
    pub declared_intent: String,
    pub status: ReceiptStatus,
    pub reason: Option<String>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictClaim {
    pub agent_id: AgentId,
    pub domain_class: DomainClass,
    pub objective: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictStatus {
    Open,
    Resolved,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCase {
    pub case_id: CaseId,
    pub claims: [ConflictClaim; 2],
    pub contested: String,
    pub status: ConflictStatus,
    pub resolution: Option<AgentId>,
    pub reasoning: String,
}

impl ConflictCase {
    pub fn agents(&self) -> (&AgentId, &AgentId) {
        (&self.claims[0].agent_id, &self.claims[1].agent_id)
    }
}

/// Which side of a two-party conflict wins on domain precedence; `None` on a tie.
pub fn precedence_winner(a: DomainClass, b: DomainClass) -> Option<usize> {
    if a.outranks(b) {
        Some(0)
    } else if b.outranks(a) {
        Some(1)
    } else {
        None
    }
}

/// Resolves an open case by the precedence lattice, escalating ties.
pub fn resolve_case(mut case: ConflictCase) -> ConflictCase {
    let [a, b] = &case.claims;
    match precedence_winner(a.domain_class, b.domain_class) {
        Some(i) => {
            let (w, l) = (&case.claims[i], &case.claims[1 - i]);
            case.reasoning = format!(
                "{} ({}) outranks {} ({}) on `{}`",
                w.agent_id, w.domain_class, l.agent_id, l.domain_class, case.contested
            );
            case.resolution = Some(w.agent_id.clone());
            case.status = ConflictStatus::Resolved;
        }
        None => {
            case.reasoning = format!(
                "equal precedence ({}) on `{}`; escalated to a human operator",
                a.domain_class, case.contested
            );
            case.status = ConflictStatus::Escalated;
        }
    }
    case
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum VerdictTarget {
    Request(RequestId),
    Conflict(CaseId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "agent_id", rename_all = "snake_case")]
pub enum HumanVerdict {
    Allow,
    Deny,
    /// Award an escalated conflict to one of its agents.
    Award(AgentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum VerdictOutcome {
    Request { outcome: MediationOutcome, amendment: DecisionAmendment },
    Conflict { case: ConflictCase, operator: PersonId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediationError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("conflict case {case} is {status:?}, expected {expected:?}")]
    InvalidState { case: CaseId, status: ConflictStatus, expected: ConflictStatus },
    #[error("conflict parties must be distinct agents")]
    SameAgent,
    #[error("unknown verdict target {0:?}")]
    UnknownTarget(VerdictTarget),
    #[error("target {0:?} is already resolved")]
    AlreadyResolved(VerdictTarget),
    #[error("verdict {verdict:?} does not apply to {target:?}")]
    InvalidVerdict { target: VerdictTarget, verdict: HumanVerdict },
    #[error("operator identity is required")]
    MissingOperator,
}

/// Boundary where an allowed tool call is actually carried out.
pub trait ToolExecutor: Send + Sync {
    fn execute(&self, request: &ToolCallRequest);
}

/// Counts executions and does nothing else.
#[derive(Debug, Default)]
pub struct SimulatedExecutor {
    executed: AtomicU64,
}

impl SimulatedExecutor {
    pub fn executed(&self) -> u64 {
        self.executed.load(Ordering::Relaxed)
    }
}

impl ToolExecutor for SimulatedExecutor {
    fn execute(&self, _request: &ToolCallRequest) {
        self.executed.fetch_add(1, Ordering::Relaxed);
    }
}
