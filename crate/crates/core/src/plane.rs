//! The control plane: every public governance operation.
//!
//! Each mutating operation validates against the current projection, builds
//! its payload batch, appends the batch to the audit log in one all-or-nothing
//! write, and only then applies the payloads to the projection. A failed check
//! or a failed append therefore leaves state untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::bundle::{self, BundleFilter};
use crate::audit::{AuditError, AuditEvent, AuditLog, ChainStatus, PendingEvent};
use crate::clock::{Clock, Millis, Timestamp};
use crate::digest::Digest32;
use crate::domain::Actor;
use crate::events::*;
use crate::ids::{AgentId, CaseId, CredentialId, EntryId, IdGenerator, PersonId, OrgUnitId, RequestId, TriggerId};
use crate::lifecycle::{
    drift_dimensions, DriftFinding, LifecycleError, LifecycleEvent, LifecycleState, ObservedConfig, TerminationReport,
};
use crate::mediation::*;
use crate::memory::{MemoryDraft, MemoryError, MemoryItem, MemoryQuery, RetentionClasses};
use crate::metrics::{self, KpiSnapshot, MetricsError, Window};
use crate::policy::triggers::{check_triggers, IncidentKind, KillSwitchTrigger};
use crate::policy::{PolicyError, PolicyVersion, Verdict};
use crate::registry::{
    AgentDraft, AgentRecord, ApprovedBaseline, CapabilityCatalog, CredentialStatus, NhiCredential, RegistryError,
    Validity,
};
use crate::state::{FleetState, PendingRequest, ReplayError};

#[derive(Debug, Clone, Default)]
pub struct PlaneConfig {
    pub catalog: CapabilityCatalog,
    pub retention: RetentionClasses,
    pub triggers: Vec<KillSwitchTrigger>,
    pub id_seed: u64,
    /// Run trigger supervision after every decision, incident, drift
    /// finding and owner departure.
    pub auto_supervise: bool,
}

/// Steps of the staged decommission (plus the log append) that tests can
/// force to fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPoint {
    RevokeCredentials,
    FreezeMemory,
    DecisionDigest,
    AuditAppend,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Mediation(#[from] MediationError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("authentication failed: {0}")]
    Unauthenticated(String),
}

impl ControlError {
    /// Stable machine-readable error code (used by the wire API and CLI).
    pub fn code(&self) -> &'static str {
        match self {
            ControlError::Registry(e) => match e {
                RegistryError::DuplicatePersonaInDomain { .. } => "duplicate_persona_in_domain",
                RegistryError::LeastPrivilegeViolation { .. } => "least_privilege_violation",
                RegistryError::UnknownCapability(_) => "unknown_capability",
                RegistryError::EmptyPersona | RegistryError::EmptyScope => "invalid_draft",
                RegistryError::MissingOwner => "missing_owner",
                RegistryError::OwnerDeparted(_) => "owner_departed",
                RegistryError::InvalidState { .. } => "invalid_state",
                RegistryError::ExpirationInPast => "expiration_in_past",
                RegistryError::BaselineFromFuture => "baseline_from_future",
                RegistryError::UnknownAgent(_) => "unknown_agent",
                RegistryError::AgentNotActive(_) => "agent_not_active",
                RegistryError::ScopeEscalation(_) => "scope_escalation",
                RegistryError::TtlBeyondExpiration => "ttl_beyond_expiration",
                RegistryError::InvalidTtl => "invalid_ttl",
                RegistryError::InvalidThreshold(_) => "invalid_threshold",
            },
            ControlError::Policy(e) => match e {
                PolicyError::Parse(_) => "parse_error",
                PolicyError::DuplicateRuleId { .. } => "duplicate_rule_id",
                PolicyError::UnknownDomainClass { .. } => "unknown_domain_class",
                PolicyError::UnknownPolicyVersion(_) => "unknown_policy_version",
            },
            ControlError::Lifecycle(e) => match e {
                LifecycleError::InvalidTransition { .. } => "invalid_transition",
                LifecycleError::InvalidState { .. } => "invalid_state",
                LifecycleError::ApprovalRequired => "approval_required",
                LifecycleError::NoBaseline => "no_baseline",
                LifecycleError::InjectedFault(_) => "injected_fault",
            },
            ControlError::Mediation(e) => match e {
                MediationError::UnknownAgent(_) => "unknown_agent",
                MediationError::InvalidState { .. } => "invalid_state",
                MediationError::SameAgent => "invalid_argument",
                MediationError::UnknownTarget(_) => "unknown_target",
                MediationError::AlreadyResolved(_) => "already_resolved",
                MediationError::InvalidVerdict { .. } => "invalid_verdict",
                MediationError::MissingOperator => "missing_operator",
            },
            ControlError::Memory(e) => match e {
                MemoryError::ScopeViolation(_) => "scope_violation",
                MemoryError::AgentNotActive(_) => "agent_not_active",
                MemoryError::TtlExceedsRetentionClass { .. } => "ttl_exceeds_retention_class",
                MemoryError::NoRetentionClass(_) => "no_retention_class",
                MemoryError::InvalidTtl => "invalid_ttl",
                MemoryError::MissingShardKey => "missing_shard_key",
                MemoryError::Frozen(_) => "frozen",
                MemoryError::UnknownEntry(_) => "unknown_entry",
                MemoryError::NotOwner(_) => "not_owner",
                MemoryError::InvalidState(_) => "invalid_state",
            },
            ControlError::Audit(e) => match e {
                AuditError::StorageFailure(_) => "storage_failure",
                AuditError::RangeOutOfBounds { .. } => "range_out_of_bounds",
                AuditError::Overwrite(_) => "storage_failure",
                AuditError::Corrupt(_) => "corrupt_log",
            },
            ControlError::Metrics(e) => match e {
                MetricsError::WindowOutsideLog { .. } => "window_outside_log",
                _ => "corrupt_log",
            },
            ControlError::Replay(_) => "corrupt_log",
            ControlError::InvalidArgument(_) => "invalid_argument",
            ControlError::Unauthenticated(_) => "unauthenticated",
        }
    }
}

pub type Result<T, E = ControlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillReport {
    pub agent_id: AgentId,
    pub trigger_id: TriggerId,
    pub reason: String,
    pub revoked_credentials: u64,
    pub denied_requests: Vec<RequestId>,
    pub at: Timestamp,
}

struct Inner {
    log: AuditLog,
    state: FleetState,
    ids: IdGenerator,
    /// Memory payload bytes; never logged.
    payloads: BTreeMap<EntryId, Vec<u8>>,
    faults: BTreeSet<FaultPoint>,
}

impl Inner {
    fn fault(&mut self, point: FaultPoint) -> Result<()> {
        if self.faults.remove(&point) {
            let name = match point {
                FaultPoint::RevokeCredentials => "revoke_credentials",
                FaultPoint::FreezeMemory => "freeze_memories",
                FaultPoint::DecisionDigest => "decision_digest",
                FaultPoint::AuditAppend => "audit_append",
            };
            return Err(LifecycleError::InjectedFault(name).into());
        }
        Ok(())
    }

    fn commit(&mut self, actor: &Actor, payloads: Vec<Payload>, at: Timestamp) -> Result<Vec<AuditEvent>> {
        if self.faults.remove(&FaultPoint::AuditAppend) {
            self.log.fail_next_append();
        }
        let actor = actor.canonical();
        let batch = payloads
            .iter()
            .map(|p| PendingEvent { kind: p.kind(), actor: actor.clone(), payload: p.to_bytes() })
            .collect();
        let events = self.log.append_batch(batch, at)?;
        for (ev, p) in events.iter().zip(&payloads) {
            if let Err(e) = self.state.apply(ev, p) {
                panic!("validated payload failed to apply at seq {}: {e}", ev.seq);
            }
        }
        Ok(events)
    }

    fn agent(&self, id: &AgentId) -> Result<&AgentRecord> {
        Ok(self.state.registry.agent(id)?)
    }

    /// Transition out of Active/Suspended plus everything that goes with it:
    /// revoking credentials and denying queued human approvals.
    fn retirement(
        &mut self,
        agent_id: &AgentId,
        event: LifecycleEvent,
        reason: &str,
        decided_by: &str,
        now: Timestamp,
    ) -> Result<(Vec<Payload>, u64, Vec<RequestId>)> {
        let from = self.agent(agent_id)?.state;
        let to = from.apply(event)?;
        let mut out = vec![Payload::Transition(Transitioned {
            agent_id: agent_id.clone(),
            from,
            to,
            event,
            reason: reason.to_owned(),
        })];
        let creds = self.state.registry.active_credentials(agent_id);
        let revoked = creds.len() as u64;
        out.push(Payload::CredentialRevoked(CredentialsRevoked {
            agent_id: agent_id.clone(),
            credential_ids: creds,
            reason: reason.to_owned(),
            revoked_at: now,
        }));
        let pending: Vec<(RequestId, DecisionId)> = self
            .state
            .pending
            .values()
            .filter(|p| p.request.agent_id == *agent_id)
            .map(|p| (p.request.request_id.clone(), p.decision_id.clone()))
            .collect();
        let mut denied = Vec::new();
        for (request_id, decision_id) in pending {
            let amendment = DecisionAmendment {
                amendment_id: self.ids.next(now).into(),
                decision_id,
                request_id: request_id.clone(),
                decided_by: decided_by.to_owned(),
                verdict: RequestVerdict::Deny,
                note: format!("agent left Active: {reason}"),
                timestamp: now,
            };
            out.push(Payload::DecisionAmendment(Amended {
                agent_id: agent_id.clone(),
                amendment,
                disposition: Disposition::Denied,
            }));
            denied.push(request_id);
        }
        Ok((out, revoked, denied))
    }

    fn fire_kill_switch(
        &mut self,
        actor: &Actor,
        agent_id: &AgentId,
        trigger_id: &TriggerId,
        reason: &str,
        now: Timestamp,
    ) -> Result<KillReport> {
        let state = self.agent(agent_id)?.state;
        if state != LifecycleState::Active {
            return Err(LifecycleError::InvalidState { state, expected: "Active" }.into());
        }
        let why = format!("kill_switch:{trigger_id}: {reason}");
        let (mut payloads, revoked, denied) =
            self.retirement(agent_id, LifecycleEvent::Suspend, &why, &actor.canonical(), now)?;
        payloads.push(Payload::KillSwitch(KillSwitchFired {
            agent_id: agent_id.clone(),
            trigger_id: trigger_id.clone(),
            reason: reason.to_owned(),
            revoked_credentials: revoked,
            denied_requests: denied.clone(),
        }));
        self.commit(actor, payloads, now)?;
        Ok(KillReport {
            agent_id: agent_id.clone(),
            trigger_id: trigger_id.clone(),
            reason: reason.to_owned(),
            revoked_credentials: revoked,
            denied_requests: denied,
            at: now,
        })
    }

    fn supervise(&mut self, triggers: &[KillSwitchTrigger], agent_id: &AgentId, now: Timestamp) -> Result<Option<KillReport>> {
        let Some(agent) = self.state.registry.agents.get(agent_id) else { return Ok(None) };
        if agent.state != LifecycleState::Active {
            return Ok(None);
        }
        let window = self.state.telemetry.get(agent_id).map(Vec::as_slice).unwrap_or_default();
        let Some(t) = check_triggers(triggers, agent_id, window).into_iter().next() else { return Ok(None) };
        let reason = format!("{:?} threshold met", t.kind);
        let actor = Actor::Trigger(t.trigger_id.to_string());
        self.fire_kill_switch(&actor, agent_id, &t.trigger_id, &reason, now).map(Some)
    }
}

use crate::ids::DecisionId;

fn amendment_digest(am: &DecisionAmendment) -> Digest32 {
    Digest32::of(&serde_json::to_vec(am).expect("amendment serializes"))
}

pub struct ControlPlane {
    config: PlaneConfig,
    clock: Arc<dyn Clock>,
    executor: Arc<dyn ToolExecutor>,
    inner: RwLock<Inner>,
}

impl ControlPlane {
    pub fn new(config: PlaneConfig, clock: Arc<dyn Clock>, executor: Arc<dyn ToolExecutor>) -> Self {
        Self::with_log(config, clock, executor, AuditLog::in_memory()).expect("empty log replays")
    }

    /// Restores a plane from an existing (already verified) log.
    pub fn with_log(
        config: PlaneConfig,
        clock: Arc<dyn Clock>,
        executor: Arc<dyn ToolExecutor>,
        log: AuditLog,
    ) -> Result<Self> {
        let state = FleetState::replay(log.events())?;
        let ids = IdGenerator::resume(config.id_seed, state.last_id.as_deref());
        Ok(Self {
            config,
            clock,
            executor,
            inner: RwLock::new(Inner { log, state, ids, payloads: BTreeMap::new(), faults: BTreeSet::new() }),
        })
    }

    pub fn config(&self) -> &PlaneConfig {
        &self.config
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Arms a one-shot failure at `point`.
    pub fn inject_fault(&self, point: FaultPoint) {
        self.inner.write().faults.insert(point);
    }

    /// Runs `f` against a consistent snapshot of the projection.
    pub fn with_state<R>(&self, f: impl FnOnce(&FleetState) -> R) -> R {
        f(&self.inner.read().state)
    }

    pub fn fleet_state(&self) -> FleetState {
        self.inner.read().state.clone()
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.inner.read().log.events().to_vec()
    }

    pub fn event_count(&self) -> u64 {
        self.inner.read().log.len()
    }

    pub fn head(&self) -> Digest32 {
        self.inner.read().log.head()
    }

    pub fn flush(&self) -> Result<()> {
        Ok(self.inner.write().log.flush()?)
    }

    // ---- registry ----

    pub fn register_agent(&self, actor: &Actor, draft: AgentDraft) -> Result<AgentRecord> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        inner.state.registry.check_register(&draft, &self.config.catalog)?;
        let record = AgentRecord {
            agent_id: inner.ids.next(now).into(),
            persona: draft.persona,
            accountable_owner: None,
            liability_owner: None,
            domain_class: draft.domain_class,
            scope_of_practice: draft.scope_of_practice,
            allowed_tools: draft.allowed_tools,
            data_scopes: draft.data_scopes,
            baseline: None,
            state: LifecycleState::Requested,
            expiration: None,
            registered_at: now,
        };
        inner.commit(actor, vec![Payload::Registration(record.clone())], now)?;
        Ok(record)
    }

    fn check_owner(inner: &Inner, owner: Option<&PersonId>) -> Result<()> {
        if let Some(o) = owner {
            if inner.state.registry.departed_owners.contains(o) {
                return Err(RegistryError::OwnerDeparted(o.clone()).into());
            }
        }
        Ok(())
    }

    pub fn approve_agent(
        &self,
        actor: &Actor,
        agent_id: &AgentId,
        owner: Option<PersonId>,
        liability_owner: Option<OrgUnitId>,
        expiration: Timestamp,
        baseline: Option<ApprovedBaseline>,
    ) -> Result<AgentRecord> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        inner.state.registry.check_approve(agent_id, owner.as_ref(), expiration, baseline.as_ref(), now)?;
        Self::check_owner(&inner, owner.as_ref())?;
        let payload = Approval {
            agent_id: agent_id.clone(),
            accountable_owner: owner.expect("checked"),
            liability_owner,
            expiration,
            baseline,
        };
        inner.commit(actor, vec![Payload::Approval(payload)], now)?;
        Ok(inner.agent(agent_id)?.clone())
    }

    pub fn reassign_owner(
        &self,
        actor: &Actor,
        agent_id: &AgentId,
        owner: PersonId,
        liability_owner: Option<OrgUnitId>,
    ) -> Result<AgentRecord> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let agent = inner.agent(agent_id)?;
        if matches!(agent.state, LifecycleState::Requested | LifecycleState::Decommissioned) {
            return Err(RegistryError::InvalidState {
                agent: agent_id.clone(),
                state: agent.state,
                op: "reassign_owner",
                expected: "Approved, Provisioned, Active or Suspended",
            }
            .into());
        }
        if owner.as_str().trim().is_empty() {
            return Err(RegistryError::MissingOwner.into());
        }
        Self::check_owner(&inner, Some(&owner))?;
        let payload = OwnerReassigned {
            agent_id: agent_id.clone(),
            previous: agent.accountable_owner.clone(),
            accountable_owner: owner,
            liability_owner,
        };
        inner.commit(actor, vec![Payload::OwnerReassigned(payload)], now)?;
        Ok(inner.agent(agent_id)?.clone())
    }

    /// Records that `person` no longer holds ownership; returns the agents
    /// left without an active owner.
    pub fn deactivate_owner(&self, actor: &Actor, person: &PersonId) -> Result<Vec<AgentId>> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let affected: Vec<AgentId> = inner
            .state
            .registry
            .agents
            .values()
            .filter(|a| a.state != LifecycleState::Decommissioned && a.accountable_owner.as_ref() == Some(person))
            .map(|a| a.agent_id.clone())
            .collect();
        let payload = OwnerDeparted { person: person.clone(), affected: affected.clone() };
        inner.commit(actor, vec![Payload::OwnerDeparted(payload)], now)?;
        if self.config.auto_supervise {
            for a in &affected {
                inner.supervise(&self.config.triggers, a, now)?;
            }
        }
        Ok(affected)
    }

    pub fn update_baseline(&self, actor: &Actor, agent_id: &AgentId, baseline: ApprovedBaseline) -> Result<AgentRecord> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let state = inner.agent(agent_id)?.state;
        if matches!(state, LifecycleState::Requested | LifecycleState::Decommissioned) {
            return Err(RegistryError::InvalidState {
                agent: agent_id.clone(),
                state,
                op: "update_baseline",
                expected: "an approved, non-decommissioned agent",
            }
            .into());
        }
        if baseline.approved_at > now {
            return Err(RegistryError::BaselineFromFuture.into());
        }
        let payload = BaselineApproved { agent_id: agent_id.clone(), baseline };
        inner.commit(actor, vec![Payload::BaselineApproved(payload)], now)?;
        Ok(inner.agent(agent_id)?.clone())
    }

    pub fn agent(&self, agent_id: &AgentId) -> Result<AgentRecord> {
        Ok(self.inner.read().agent(agent_id)?.clone())
    }

    pub fn agents(&self) -> Vec<AgentRecord> {
        self.inner.read().state.registry.agents.values().cloned().collect()
    }

    pub fn find_overlapping(&self, agent_id: &AgentId, threshold: f64) -> Result<Vec<(AgentId, f64)>> {
        Ok(self.inner.read().state.registry.find_overlapping(agent_id, threshold)?)
    }

    pub fn issue_credential(
        &self,
        actor: &Actor,
        agent_id: &AgentId,
        requested_scope: BTreeSet<String>,
        ttl: Millis,
    ) -> Result<NhiCredential> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let expires_at = inner.state.registry.check_issue(agent_id, &requested_scope, ttl, now)?;
        let cred = NhiCredential {
            credential_id: inner.ids.next(now).into(),
            agent_id: agent_id.clone(),
            issued_at: now,
            expires_at,
            status: CredentialStatus::Active,
            revoked_at: None,
            scope_claims: requested_scope,
        };
        inner.commit(actor, vec![Payload::CredentialIssued(cred.clone())], now)?;
        Ok(cred)
    }

    /// Revokes every active credential of the agent; returns how many changed.
    pub fn revoke_credentials(&self, actor: &Actor, agent_id: &AgentId, reason: &str) -> Result<u64> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        inner.agent(agent_id)?;
        let ids = inner.state.registry.active_credentials(agent_id);
        let n = ids.len() as u64;
        let payload = CredentialsRevoked {
            agent_id: agent_id.clone(),
            credential_ids: ids,
            reason: reason.to_owned(),
            revoked_at: now,
        };
        inner.commit(actor, vec![Payload::CredentialRevoked(payload)], now)?;
        Ok(n)
    }

    pub fn validate_credential(&self, credential_id: &CredentialId, now: Timestamp) -> Validity {
        self.inner.read().state.registry.validate_credential(credential_id, now)
    }

    /// Agent-runtime authentication: the credential must be valid now and
    /// belong to `agent_id`.
    pub fn authenticate(&self, credential_id: &CredentialId, agent_id: &AgentId) -> Result<()> {
        let now = self.clock.now();
        let inner = self.inner.read();
        match inner.state.registry.validate_credential(credential_id, now) {
            Validity::Valid if inner.state.registry.credentials[credential_id].agent_id == *agent_id => Ok(()),
            Validity::Valid => Err(ControlError::Unauthenticated(format!("{credential_id} belongs to another agent"))),
            Validity::Invalid(r) => Err(ControlError::Unauthenticated(format!("{credential_id}: {r:?}"))),
        }
    }

    pub fn credentials_of(&self, agent_id: &AgentId) -> Vec<NhiCredential> {
        self.inner.read().state.registry.credentials_of(agent_id).cloned().collect()
    }

    // ---- policy ----

    pub fn load_policy(&self, actor: &Actor, document: &str) -> Result<Arc<PolicyVersion>> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let version = inner.state.policies.next_version();
        let compiled = PolicyVersion::compile(version, document, now)?;
        let payload = PolicyLoaded {
            version,
            source_digest: compiled.source_digest,
            rule_count: compiled.rules.len() as u64,
            document: document.to_owned(),
        };
        inner.commit(actor, vec![Payload::PolicyLoaded(payload)], now)?;
        Ok(inner.state.policies.get(version)?)
    }

    pub fn policy(&self, version: Option<u64>) -> Result<Arc<PolicyVersion>> {
        let inner = self.inner.read();
        match version {
            Some(v) => Ok(inner.state.policies.get(v)?),
            None => inner.state.policies.latest().ok_or(PolicyError::UnknownPolicyVersion(0).into()),
        }
    }

    /// Dry-run evaluation; records nothing.
    pub fn evaluate(&self, request: &ToolCallRequest, version: u64) -> Result<Verdict> {
        let inner = self.inner.read();
        let agent = inner.agent(&request.agent_id)?;
        Ok(inner.state.policies.evaluate(request, agent, version)?)
    }

    // ---- mediation ----

    fn precheck(inner: &Inner, req: &ToolCallRequest, now: Timestamp) -> Option<String> {
        let st = &inner.state;
        if req.request_id.as_str().trim().is_empty() || req.tool.trim().is_empty() {
            return Some("malformed".into());
        }
        if st.outcomes.contains_key(&req.request_id) {
            return Some("duplicate_request".into());
        }
        if !st.registry.agents.contains_key(&req.agent_id) {
            return Some("unknown_agent".into());
        }
        if let Validity::Invalid(reason) = st.registry.validate_credential(&req.credential_id, now) {
            let r = serde_json::to_value(reason).expect("reason serializes");
            return Some(format!("invalid({})", r.as_str().unwrap_or("unknown")));
        }
        let cred = &st.registry.credentials[&req.credential_id];
        if cred.agent_id != req.agent_id {
            return Some("credential_mismatch".into());
        }
        if !cred.scope_claims.contains(&req.tool) || req.categories().any(|c| !cred.scope_claims.contains(c)) {
            return Some("out_of_scope".into());
        }
        if st.policies.is_empty() {
            return Some("no_policy".into());
        }
        None
    }

    /// The mandatory gateway: every request yields exactly one decision record.
    pub fn mediate(&self, request: ToolCallRequest) -> Result<MediationOutcome> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let latest = inner.state.policies.latest();
        let version = latest.as_ref().map_or(0, |p| p.version);
        let decision_id: DecisionId = inner.ids.next(now).into();
        let record = match Self::precheck(&inner, &request, now) {
            Some(reason) => DecisionRecord::synthetic_deny(decision_id, &request, now, version, &reason),
            None => {
                let policy = latest.expect("prechecked");
                let verdict = policy.evaluate(&request, inner.agent(&request.agent_id)?);
                DecisionRecord::from_verdict(decision_id, &request, now, verdict)
            }
        };
        let disposition = Disposition::for_effect(record.effect);
        let outcome = MediationOutcome {
            request_id: request.request_id.clone(),
            decision_id: record.decision_id.clone(),
            effect: record.effect,
            disposition,
            completed_at: now,
        };
        let agent_id = request.agent_id.clone();
        let actor = Actor::Agent(agent_id.to_string());
        let payload = Decided { request, decision: record, disposition };
        inner.commit(&actor, vec![Payload::Decision(Box::new(payload.clone()))], now)?;
        if disposition == Disposition::Executed {
            self.executor.execute(&payload.request);
        }
        if self.config.auto_supervise {
            inner.supervise(&self.config.triggers, &agent_id, now)?;
        }
        Ok(outcome)
    }

    /// Ungoverned baseline: the call is recorded and executed without mediation.
    pub fn record_ungoverned_call(&self, request: ToolCallRequest) -> Result<()> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let actor = Actor::Agent(request.agent_id.to_string());
        let payload = UngovernedCall { request };
        inner.commit(&actor, vec![Payload::ToolCall(payload.clone())], now)?;
        self.executor.execute(&payload.request);
        Ok(())
    }

    pub fn decision(&self, decision_id: &DecisionId) -> Option<DecisionRecord> {
        self.inner.read().state.decisions.get(decision_id).cloned()
    }

    pub fn outcome(&self, request_id: &RequestId) -> Option<MediationOutcome> {
        self.inner.read().state.outcomes.get(request_id).cloned()
    }

    pub fn route_message(
        &self,
        from: &AgentId,
        to: &AgentId,
        credential_id: &CredentialId,
        payload_digest: Digest32,
        declared_intent: &str,
    ) -> Result<MessageReceipt> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let reg = &inner.state.registry;
        let sender = reg.agents.get(from).ok_or_else(|| MediationError::UnknownAgent(from.clone()))?;
        let recipient = reg.agents.get(to).ok_or_else(|| MediationError::UnknownAgent(to.clone()))?;
        let refusal = if sender.state != LifecycleState::Active {
            Some(format!("sender is {}", sender.state))
        } else if recipient.state != LifecycleState::Active {
            Some(format!("recipient is {}", recipient.state))
        } else {
            match reg.validate_credential(credential_id, now) {
                Validity::Valid if reg.credentials[credential_id].agent_id == *from => None,
                Validity::Valid => Some("credential belongs to another agent".into()),
                Validity::Invalid(r) => Some(format!("sender credential invalid: {r:?}")),
            }
        };
        let receipt = MessageReceipt {
            message_id: inner.ids.next(now).into(),
            from_agent: from.clone(),
            to_agent: to.clone(),
            payload_digest,
            declared_intent: declared_intent.to_owned(),
            status: if refusal.is_some() { ReceiptStatus::Refused } else { ReceiptStatus::Delivered },
            reason: refusal,
            at: now,
        };
        inner.commit(&Actor::Agent(from.to_string()), vec![Payload::Message(receipt.clone())], now)?;
        Ok(receipt)
    }

    /// Resolves a conflict by domain precedence; ties are escalated to a human.
    /// An empty `case_id` is replaced by a fresh one.
    pub fn resolve_conflict(&self, actor: &Actor, mut case: ConflictCase) -> Result<ConflictCase> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let (a, b) = case.agents();
        if a == b {
            return Err(MediationError::SameAgent.into());
        }
        for id in [a, b] {
            if !inner.state.registry.agents.contains_key(id) {
                return Err(MediationError::UnknownAgent(id.clone()).into());
            }
        }
        let known = inner.state.conflicts.get(&case.case_id).map(|c| c.status);
        let status = known.unwrap_or(case.status);
        if status != ConflictStatus::Open {
            return Err(MediationError::InvalidState {
                case: case.case_id.clone(),
                status,
                expected: ConflictStatus::Open,
            }
            .into());
        }
        if case.case_id.as_str().is_empty() {
            case.case_id = inner.ids.next(now).into();
        }
        let resolved = resolve_case(case);
        inner.commit(actor, vec![Payload::Conflict(resolved.clone())], now)?;
        Ok(resolved)
    }

    pub fn conflict(&self, case_id: &CaseId) -> Option<ConflictCase> {
        self.inner.read().state.conflicts.get(case_id).cloned()
    }

    pub fn pending_requests(&self) -> Vec<PendingRequest> {
        self.inner.read().state.pending.values().cloned().collect()
    }

    pub fn escalated_conflicts(&self) -> Vec<ConflictCase> {
        let inner = self.inner.read();
        inner.state.conflicts.values().filter(|c| c.status == ConflictStatus::Escalated).cloned().collect()
    }

    pub fn submit_human_verdict(
        &self,
        operator: &str,
        target: VerdictTarget,
        verdict: HumanVerdict,
        note: &str,
    ) -> Result<VerdictOutcome> {
        if operator.trim().is_empty() {
            return Err(MediationError::MissingOperator.into());
        }
        let now = self.clock.now();
        let actor = Actor::operator(operator);
        let mut inner = self.inner.write();
        match &target {
            VerdictTarget::Request(rid) => {
                let Some(p) = inner.state.pending.get(rid).cloned() else {
                    return Err(if inner.state.outcomes.contains_key(rid) {
                        MediationError::AlreadyResolved(target)
                    } else {
                        MediationError::UnknownTarget(target)
                    }
                    .into());
                };
                let (rv, disposition) = match verdict {
                    HumanVerdict::Allow => (RequestVerdict::Allow, Disposition::Executed),
                    HumanVerdict::Deny => (RequestVerdict::Deny, Disposition::Denied),
                    HumanVerdict::Award(_) => return Err(MediationError::InvalidVerdict { target, verdict }.into()),
                };
                let amendment = DecisionAmendment {
                    amendment_id: inner.ids.next(now).into(),
                    decision_id: p.decision_id.clone(),
                    request_id: rid.clone(),
                    decided_by: actor.canonical(),
                    verdict: rv,
                    note: note.to_owned(),
                    timestamp: now,
                };
                let payload = Amended { agent_id: p.request.agent_id.clone(), amendment: amendment.clone(), disposition };
                inner.commit(&actor, vec![Payload::DecisionAmendment(payload)], now)?;
                if disposition == Disposition::Executed {
                    self.executor.execute(&p.request);
                }
                let outcome = inner.state.outcomes[rid].clone();
                Ok(VerdictOutcome::Request { outcome, amendment })
            }
            VerdictTarget::Conflict(cid) => {
                let Some(case) = inner.state.conflicts.get(cid).cloned() else {
                    return Err(MediationError::UnknownTarget(target).into());
                };
                if case.status != ConflictStatus::Escalated {
                    return Err(MediationError::AlreadyResolved(target).into());
                }
                let HumanVerdict::Award(winner) = &verdict else {
                    return Err(MediationError::InvalidVerdict { target, verdict }.into());
                };
                if !case.claims.iter().any(|c| &c.agent_id == winner) {
                    return Err(MediationError::InvalidVerdict { target, verdict }.into());
                }
                let mut case = case;
                case.status = ConflictStatus::Resolved;
                case.resolution = Some(winner.clone());
                case.reasoning = format!("{}; awarded to {winner} by {}: {note}", case.reasoning, actor.canonical());
                inner.commit(&actor, vec![Payload::Conflict(case.clone())], now)?;
                Ok(VerdictOutcome::Conflict { case, operator: PersonId::from(operator) })
            }
        }
    }

    // ---- context memory ----

    fn active_agent<'a>(inner: &'a Inner, agent_id: &AgentId) -> Result<&'a AgentRecord> {
        let agent = inner.agent(agent_id)?;
        if agent.state != LifecycleState::Active {
            return Err(MemoryError::AgentNotActive(agent_id.clone()).into());
        }
        Ok(agent)
    }

    pub fn write_memory(&self, agent_id: &AgentId, draft: MemoryDraft) -> Result<EntryId> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let agent = Self::active_agent(&inner, agent_id)?;
        inner.state.memory.check_write(&agent.data_scopes, &draft, &self.config.retention)?;
        let entry = crate::memory::MemoryEntry {
            entry_id: inner.ids.next(now).into(),
            agent_id: agent_id.clone(),
            shard_key: draft.shard_key,
            data_category: draft.data_category,
            phi: draft.phi,
            payload_digest: Digest32::of(&draft.payload),
            created_at: now,
            ttl: draft.ttl,
            frozen: false,
            tombstone: false,
        };
        let id = entry.entry_id.clone();
        let actor = Actor::Agent(agent_id.to_string());
        inner.commit(&actor, vec![Payload::MemoryWrite(MemoryWritten { entry, update: false })], now)?;
        inner.payloads.insert(id.clone(), draft.payload);
        Ok(id)
    }

    pub fn update_memory(&self, agent_id: &AgentId, entry_id: &EntryId, payload: Vec<u8>) -> Result<()> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let entry = match inner.state.memory.entries.get(entry_id) {
            Some(e) if !e.tombstone => e.clone(),
            _ => return Err(MemoryError::UnknownEntry(entry_id.clone()).into()),
        };
        if entry.frozen {
            return Err(MemoryError::Frozen(entry_id.clone()).into());
        }
        if entry.agent_id != *agent_id {
            return Err(MemoryError::NotOwner(entry_id.clone()).into());
        }
        Self::active_agent(&inner, agent_id)?;
        if entry.is_expired(now) {
            return Err(MemoryError::UnknownEntry(entry_id.clone()).into());
        }
        let entry = crate::memory::MemoryEntry { payload_digest: Digest32::of(&payload), ..entry };
        let actor = Actor::Agent(agent_id.to_string());
        inner.commit(&actor, vec![Payload::MemoryWrite(MemoryWritten { entry, update: true })], now)?;
        inner.payloads.insert(entry_id.clone(), payload);
        Ok(())
    }

    pub fn read_memory(&self, agent_id: &AgentId, query: MemoryQuery) -> Result<Vec<MemoryItem>> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let agent = Self::active_agent(&inner, agent_id)?;
        let found: Vec<crate::memory::MemoryEntry> =
            inner.state.memory.visible(&agent.data_scopes, &query, now).cloned().collect();
        let payload = MemoryRead {
            agent_id: agent_id.clone(),
            shard_key: query.shard_key.clone(),
            workflow_id: query.workflow_id.clone(),
            requested_categories: query.categories.clone(),
            entry_ids: found.iter().map(|e| e.entry_id.clone()).collect(),
            returned_categories: found.iter().map(|e| e.data_category.clone()).collect(),
            phi_returned: found.iter().filter(|e| e.phi).count() as u64,
        };
        inner.commit(&Actor::Agent(agent_id.to_string()), vec![Payload::MemoryRead(payload)], now)?;
        Ok(found
            .into_iter()
            .map(|entry| MemoryItem { payload: inner.payloads.get(&entry.entry_id).cloned(), entry })
            .collect())
    }

    /// Purges every entry at or past its ttl; tombstones keep the digest.
    pub fn expire_memories(&self, actor: &Actor) -> Result<u64> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let ids = inner.state.memory.expired_ids(now);
        if ids.is_empty() {
            return Ok(0);
        }
        let n = ids.len() as u64;
        inner.commit(actor, vec![Payload::MemoryPurge(MemoryPurged { entry_ids: ids.clone() })], now)?;
        for id in ids {
            inner.payloads.remove(&id);
        }
        Ok(n)
    }

    pub fn freeze_memories(&self, actor: &Actor, agent_id: &AgentId) -> Result<u64> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let state = inner.agent(agent_id)?.state;
        if !matches!(state, LifecycleState::Suspended | LifecycleState::Decommissioned) {
            return Err(MemoryError::InvalidState(state).into());
        }
        let ids = inner.state.memory.unfrozen_of(agent_id);
        let n = ids.len() as u64;
        let payload = MemoryFrozen { agent_id: agent_id.clone(), entry_ids: ids };
        inner.commit(actor, vec![Payload::MemoryFreeze(payload)], now)?;
        Ok(n)
    }

    /// Audit-export path: frozen entries of an agent, with payloads.
    pub fn export_frozen(&self, agent_id: &AgentId) -> Vec<MemoryItem> {
        let inner = self.inner.read();
        inner
            .state
            .memory
            .entries
            .values()
            .filter(|e| e.agent_id == *agent_id && e.frozen)
            .map(|e| MemoryItem { entry: e.clone(), payload: inner.payloads.get(&e.entry_id).cloned() })
            .collect()
    }

    // ---- lifecycle ----

    pub fn transition(&self, actor: &Actor, agent_id: &AgentId, event: LifecycleEvent, reason: &str) -> Result<LifecycleState> {
        match event {
            LifecycleEvent::Approve => return Err(LifecycleError::ApprovalRequired.into()),
            LifecycleEvent::Decommission => return self.decommission(actor, agent_id, reason).map(|_| LifecycleState::Decommissioned),
            _ => {}
        }
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let agent = inner.agent(agent_id)?;
        let from = agent.state;
        let to = from.apply(event)?;
        if event == LifecycleEvent::Reactivate {
            if !inner.state.registry.has_active_owner(agent) {
                return Err(RegistryError::MissingOwner.into());
            }
            if agent.expiration.is_none_or(|e| e <= now) {
                return Err(RegistryError::ExpirationInPast.into());
            }
        }
        let payloads = if event == LifecycleEvent::Suspend {
            inner.retirement(agent_id, event, reason, &actor.canonical(), now)?.0
        } else {
            vec![Payload::Transition(Transitioned {
                agent_id: agent_id.clone(),
                from,
                to,
                event,
                reason: reason.to_owned(),
            })]
        };
        inner.commit(actor, payloads, now)?;
        Ok(to)
    }

    /// Staged, all-or-nothing decommission: transition, credential revocation,
    /// memory freeze and termination report land in one audit batch.
    pub fn decommission(&self, actor: &Actor, agent_id: &AgentId, reason: &str) -> Result<TerminationReport> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let state = inner.agent(agent_id)?.state;
        if !matches!(state, LifecycleState::Active | LifecycleState::Suspended) {
            return Err(LifecycleError::InvalidState { state, expected: "Active or Suspended" }.into());
        }
        let ids_before = inner.ids.clone();
        let staged = (|| {
            inner.fault(FaultPoint::RevokeCredentials)?;
            let (mut payloads, revoked, _) =
                inner.retirement(agent_id, LifecycleEvent::Decommission, reason, &actor.canonical(), now)?;
            inner.fault(FaultPoint::FreezeMemory)?;
            let frozen = inner.state.memory.unfrozen_of(agent_id);
            let frozen_entries = frozen.len() as u64;
            payloads.push(Payload::MemoryFreeze(MemoryFrozen { agent_id: agent_id.clone(), entry_ids: frozen }));
            inner.fault(FaultPoint::DecisionDigest)?;
            let mut log = inner.state.decision_log.get(agent_id).cloned().unwrap_or_default();
            for p in &payloads {
                if let Payload::DecisionAmendment(a) = p {
                    log.push(amendment_digest(&a.amendment));
                }
            }
            let mut h = crate::digest::Hasher::new();
            for d in &log {
                h.update(d.as_bytes());
            }
            let report = TerminationReport {
                agent_id: agent_id.clone(),
                reason: reason.to_owned(),
                initiated_by: actor.canonical(),
                revoked_credentials: revoked,
                frozen_entries,
                final_decision_log_digest: h.finish(),
                completed_at: now,
            };
            payloads.push(Payload::Termination(report.clone()));
            inner.commit(actor, payloads, now)?;
            Ok(report)
        })();
        if staged.is_err() {
            inner.ids = ids_before;
        }
        staged
    }

    pub fn termination_report(&self, agent_id: &AgentId) -> Option<TerminationReport> {
        self.inner.read().state.reports.get(agent_id).cloned()
    }

    /// Suspends every Active agent whose expiration has passed.
    pub fn sweep_expired(&self, actor: &Actor) -> Result<Vec<AgentId>> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let due: Vec<AgentId> = inner
            .state
            .registry
            .agents
            .values()
            .filter(|a| a.state == LifecycleState::Active && a.expiration.is_some_and(|e| e <= now))
            .map(|a| a.agent_id.clone())
            .collect();
        if due.is_empty() {
            return Ok(due);
        }
        let mut payloads = Vec::new();
        for id in &due {
            payloads.extend(inner.retirement(id, LifecycleEvent::Suspend, "expired", &actor.canonical(), now)?.0);
        }
        inner.commit(actor, payloads, now)?;
        Ok(due)
    }

    pub fn detect_drift(&self, actor: &Actor, agent_id: &AgentId, observed: ObservedConfig) -> Result<Option<DriftFinding>> {
        let now = self.clock.now();
        let mut inner = self.inner.write();
        let agent = inner.agent(agent_id)?;
        let baseline = agent.baseline.clone().ok_or(LifecycleError::NoBaseline)?;
        let dimensions = drift_dimensions(&baseline, &observed);
        if dimensions.is_empty() {
            if inner.state.drift.contains_key(agent_id) {
                let payload = DriftCleared { agent_id: agent_id.clone(), reason: "observed matches baseline".into() };
                inner.commit(actor, vec![Payload::DriftCleared(payload)], now)?;
            }
            return Ok(None);
        }
        let finding = DriftFinding { agent_id: agent_id.clone(), detected_at: now, dimensions, observed, baseline };
        inner.commit(actor, vec![Payload::Drift(finding.clone())], now)?;
        if self.config.auto_supervise {
            inner.supervise(&self.config.triggers, agent_id, now)?;
        }
        Ok(Some(finding))
    }

    pub fn report_incident(
        &self,
        actor: &Actor,
        agent_id: &AgentId,
        kind: IncidentKind,
        severity: u8,
        note: &str,
    ) -> Result<()> {
        if !(1..=5).contains(&severity) {
            return Err(ControlError::InvalidArgument(format!("severity {severity} outside 1..=5")));
        }
        let now = self.clock.now();
        let mut inner = self.inner.write();
        inner.agent(agent_id)?;
        let payload = IncidentReported { agent_id: agent_id.clone(), kind, severity, note: note.to_owned() };
        inner.commit(actor, vec![Payload::Incident(payload)], now)?;
        if self.config.auto_supervise {
            inner.supervise(&self.config.triggers, agent_id, now)?;
        }
        Ok(())
    }

    /// Evaluates the configured triggers over the agent's telemetry and fires
    /// the kill switch for the first one met.
    pub fn supervise(&self, agent_id: &AgentId) -> Result<Option<KillReport>> {
        let now = self.clock.now();
        self.inner.write().supervise(&self.config.triggers, agent_id, now)
    }

    pub fn fire_kill_switch(&self, actor: &Actor, agent_id: &AgentId, trigger_id: &TriggerId, reason: &str) -> Result<KillReport> {
        let now = self.clock.now();
        self.inner.write().fire_kill_switch(actor, agent_id, trigger_id, reason, now)
    }

    // ---- audit and metrics ----

    pub fn verify_chain(&self, from: u64, to: u64) -> Result<ChainStatus> {
        Ok(self.inner.read().log.verify_chain(from, to)?)
    }

    pub fn verify_all(&self) -> Result<ChainStatus> {
        Ok(self.inner.read().log.verify_all()?)
    }

    pub fn raw_log(&self) -> Result<Vec<u8>> {
        Ok(self.inner.read().log.raw_bytes()?)
    }

    pub fn export_bundle(&self, filter: &BundleFilter) -> Vec<u8> {
        let inner = self.inner.read();
        bundle::export(inner.log.events(), filter, |ev| match &filter.agent_id {
            None => true,
            Some(agent) => Payload::decode(ev).is_ok_and(|p| p.agents().contains(&agent)),
        })
    }

    pub fn compute_snapshot(&self, window: Option<Window>) -> Result<KpiSnapshot> {
        let now = self.clock.now();
        let inner = self.inner.read();
        let events = inner.log.events();
        let window = match window {
            Some(w) => w,
            None => Window::full(events).ok_or(MetricsError::WindowOutsideLog { start: now, end: now })?,
        };
        Ok(metrics::compute_snapshot(events, window, now)?)
    }

    /// Computes a snapshot and records it in the log.
    pub fn record_kpi_snapshot(&self, actor: &Actor, window: Option<Window>) -> Result<KpiSnapshot> {
        let snapshot = self.compute_snapshot(window)?;
        let mut inner = self.inner.write();
        inner.commit(actor, vec![Payload::KpiSnapshot(snapshot.clone())], snapshot.computed_at)?;
        Ok(snapshot)
    }
}
