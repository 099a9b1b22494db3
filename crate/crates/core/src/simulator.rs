//! Deterministic fleet simulator.
//!
//! A scenario plans every agent's narrative up front from a seeded ChaCha8
//! stream (onboarding, optional duplication, orphaning, drift, incidents and
//! decommission), then runs a discrete-event loop under a logical clock.
//! Tool-call traffic is a Poisson process per agent. The loop talks to the
//! control plane only through [`GovernanceApi`], so the same scenario can be
//! driven in process or over the wire and must produce the same log.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEvent, ChainStatus};
use crate::clock::{LogicalClock, Millis, Timestamp, HOUR, MINUTE};
use crate::config::{line_of_key, parse_toml, ParseError};
use crate::digest::Digest32;
use crate::domain::{Actor, DomainClass};
use crate::ids::{AgentId, CaseId, CredentialId, EntryId, PersonId, RequestId, WorkflowId};
use crate::lifecycle::{DriftFinding, LifecycleEvent, LifecycleState, ObservedConfig, TerminationReport};
use crate::mediation::{
    ConflictCase, ConflictClaim, ConflictStatus, Disposition, HumanVerdict, MediationOutcome, MessageReceipt,
    ResourceRef, SimulatedExecutor, ToolCallRequest, VerdictOutcome, VerdictTarget,
};
use crate::memory::{MemoryDraft, MemoryItem, MemoryQuery, RetentionClasses};
use crate::metrics::{KpiSnapshot, Window};
use crate::plane::{ControlError, ControlPlane, KillReport, PlaneConfig};
use crate::policy::triggers::{parse_triggers, IncidentKind};
use crate::registry::{AgentDraft, AgentRecord, ApprovedBaseline, CapabilityCatalog, NhiCredential};
use crate::state::{FleetState, ReplayError};

/// Start of simulated time: 2026-01-01T00:00:00Z.
pub const EPOCH: Timestamp = Timestamp(1_767_225_600_000);

/// Operator identity the simulator acts as.
pub const SIM_OPERATOR: &str = "sim-operator";

pub const SIM_CATALOG: &str = r#"[capabilities]
medication_review = ["read_med_list", "propose_med_change"]
discharge_planning = ["read_chart", "schedule_followup"]
claims = ["read_coverage", "submit_claim"]
privacy_audit = ["read_access_log", "redact_record"]
"#;

pub const SIM_RETENTION: &str = r#"[retention]
medications = "30d"
allergies = "30d"
encounters = "30d"
care_plan = "30d"
coverage = "90d"
billing = "90d"
access_logs = "365d"
demographics = "30d"
"#;

pub const SIM_TRIGGERS: &str = r#"[[trigger]]
trigger_id = "t-denials"
kind = "repeated_denials"
threshold = 5
window = "1h"

[[trigger]]
trigger_id = "t-drift"
kind = "drift_detected"

[[trigger]]
trigger_id = "t-incident"
kind = "incident_threshold"
min_severity = 4

[[trigger]]
trigger_id = "t-owner"
kind = "owner_revoked"
"#;

pub const SIM_POLICY: &str = r#"[[rule]]
rule_id = "ps-allergy-change-deny"
class = "patient_safety"
subject = ["*"]
action = ["propose_med_change"]
resource = ["allergies"]
effect = "deny"

[[rule]]
rule_id = "ps-med-change-human"
class = "patient_safety"
subject = ["capability:medication_review"]
action = ["propose_med_change"]
resource = ["medications"]
phi = true
effect = "require_human"
conditions = ["human_approval_present"]

[[rule]]
rule_id = "ps-med-change-allow"
class = "patient_safety"
subject = ["capability:medication_review"]
action = ["propose_med_change"]
resource = ["medications"]
effect = "allow"

[[rule]]
rule_id = "pr-claims-demographics-deny"
class = "privacy"
subject = ["capability:claims"]
action = ["*"]
resource = ["demographics"]
effect = "deny"

[[rule]]
rule_id = "pr-redact-allow"
class = "privacy"
subject = ["capability:privacy_audit"]
action = ["redact_record", "read_access_log"]
resource = ["*"]
effect = "allow"

[[rule]]
rule_id = "co-read-allow"
class = "clinical_outcome"
subject = ["*"]
action = ["read_*"]
resource = ["*"]
effect = "allow"

[[rule]]
rule_id = "co-followup-allow"
class = "clinical_outcome"
subject = ["capability:discharge_planning"]
action = ["schedule_followup"]
resource = ["*"]
effect = "allow"

[[rule]]
rule_id = "adm-claims-allow"
class = "administrative"
subject = ["capability:claims"]
action = ["submit_claim"]
resource = ["coverage", "billing"]
effect = "allow"
"#;

/// Plane configuration matching the simulator's documents.
pub fn scenario_plane_config(seed: u64) -> PlaneConfig {
    PlaneConfig {
        catalog: CapabilityCatalog::parse(SIM_CATALOG).expect("built-in catalog parses"),
        retention: RetentionClasses::parse(SIM_RETENTION).expect("built-in retention parses"),
        triggers: parse_triggers(SIM_TRIGGERS).expect("built-in triggers parse"),
        id_seed: seed,
        auto_supervise: false,
    }
}

struct Template {
    persona: &'static str,
    domain: DomainClass,
    capability: &'static str,
    tools: [&'static str; 2],
    /// (category, carries PHI)
    scopes: [(&'static str, bool); 2],
}

const TEMPLATES: [Template; 4] = [
    Template {
        persona: "med-reconciler",
        domain: DomainClass::PatientSafety,
        capability: "medication_review",
        tools: ["read_med_list", "propose_med_change"],
        scopes: [("medications", true), ("allergies", true)],
    },
    Template {
        persona: "discharge-planner",
        domain: DomainClass::ClinicalOutcome,
        capability: "discharge_planning",
        tools: ["read_chart", "schedule_followup"],
        scopes: [("encounters", true), ("care_plan", true)],
    },
    Template {
        persona: "prior-auth",
        domain: DomainClass::Administrative,
        capability: "claims",
        tools: ["read_coverage", "submit_claim"],
        scopes: [("coverage", false), ("billing", false)],
    },
    Template {
        persona: "privacy-monitor",
        domain: DomainClass::Privacy,
        capability: "privacy_audit",
        tools: ["read_access_log", "redact_record"],
        scopes: [("access_logs", false), ("demographics", true)],
    },
];

fn category_phi(category: &str) -> bool {
    TEMPLATES.iter().flat_map(|t| t.scopes).any(|(c, phi)| c == category && phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_agents: u32,
    pub duration: Millis,
    pub duplication_prob: f64,
    pub orphan_prob: f64,
    pub drift_prob: f64,
    pub incident_prob: f64,
    pub decommission_prob: f64,
    /// Tool calls per agent per simulated hour.
    pub tool_call_rate: f64,
    pub governed: bool,
    /// Stop generating traffic after this many tool calls in total.
    pub max_tool_calls: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_agents: 20,
            duration: Millis::days(7),
            duplication_prob: 0.1,
            orphan_prob: 0.1,
            drift_prob: 0.1,
            incident_prob: 0.1,
            decommission_prob: 0.2,
            tool_call_rate: 0.5,
            governed: true,
            max_tool_calls: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    seed: u64,
    n_agents: i64,
    duration: String,
    #[serde(default)]
    duplication_prob: f64,
    #[serde(default)]
    orphan_prob: f64,
    #[serde(default)]
    drift_prob: f64,
    #[serde(default)]
    incident_prob: f64,
    #[serde(default)]
    decommission_prob: f64,
    tool_call_rate: f64,
    #[serde(default = "governed_default")]
    governed: bool,
    max_tool_calls: Option<i64>,
}

fn governed_default() -> bool {
    true
}

impl ScenarioConfig {
    /// Parses a scenario TOML document; see `docs/formats.md`.
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let doc: ScenarioDoc = parse_toml(src)?;
        let at = |field: &str| line_of_key(src, field, 1);
        let duration = Millis::parse(&doc.duration).map_err(|m| ParseError::new(at("duration"), "duration", m))?;
        let n_agents = u32::try_from(doc.n_agents).map_err(|_| ParseError::new(at("n_agents"), "n_agents", "must be ≥ 1"))?;
        let max_tool_calls = match doc.max_tool_calls {
            Some(n) => Some(u64::try_from(n).map_err(|_| ParseError::new(at("max_tool_calls"), "max_tool_calls", "must be ≥ 0"))?),
            None => None,
        };
        let config = ScenarioConfig {
            seed: doc.seed,
            n_agents,
            duration,
            duplication_prob: doc.duplication_prob,
            orphan_prob: doc.orphan_prob,
            drift_prob: doc.drift_prob,
            incident_prob: doc.incident_prob,
            decommission_prob: doc.decommission_prob,
            tool_call_rate: doc.tool_call_rate,
            governed: doc.governed,
            max_tool_calls,
        };
        config.validate().map_err(|mut e| {
            e.line = at(&e.field);
            e
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        let probs = [
            ("duplication_prob", self.duplication_prob),
            ("orphan_prob", self.orphan_prob),
            ("drift_prob", self.drift_prob),
            ("incident_prob", self.incident_prob),
            ("decommission_prob", self.decommission_prob),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ParseError::new(None, field, format!("{p} is not a probability")));
            }
        }
        if self.n_agents < 1 {
            return Err(ParseError::new(None, "n_agents", "must be ≥ 1"));
        }
        if !(self.tool_call_rate >= 0.0 && self.tool_call_rate.is_finite()) {
            return Err(ParseError::new(None, "tool_call_rate", "must be a finite rate ≥ 0"));
        }
        if self.duration.0 < HOUR.0 {
            return Err(ParseError::new(None, "duration", "must be at least 1h"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub event_count: u64,
    pub snapshot: KpiSnapshot,
    pub log_digest: Digest32,
    pub tool_calls: u64,
    /// Operations the control plane refused (expected: acting on retired agents).
    pub rejected_ops: u64,
}

/// An error as it crosses the API boundary: a stable code and a message.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl From<ControlError> for ApiError {
    fn from(e: ControlError) -> Self {
        ApiError { code: e.code().to_owned(), message: e.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(#[from] ParseError),
    #[error("control plane call failed: {0}")]
    Api(#[from] ApiError),
}

pub type ApiResult<T> = Result<T, ApiError>;

/// Every control-plane operation the simulator uses. Operator operations are
/// attributed to the implementation's operator identity; agent-runtime
/// operations authenticate with the agent's credential.
pub trait GovernanceApi {
    fn set_time(&self, t: Timestamp) -> ApiResult<()>;
    fn load_policy(&self, document: &str) -> ApiResult<u64>;
    fn register_agent(&self, draft: &AgentDraft) -> ApiResult<AgentRecord>;
    fn approve_agent(
        &self,
        agent_id: &AgentId,
        owner: &PersonId,
        expiration: Timestamp,
        baseline: &ApprovedBaseline,
    ) -> ApiResult<AgentRecord>;
    fn transition(&self, agent_id: &AgentId, event: LifecycleEvent, reason: &str) -> ApiResult<LifecycleState>;
    fn issue_credential(&self, agent_id: &AgentId, scope: &BTreeSet<String>, ttl: Millis) -> ApiResult<NhiCredential>;
    fn mediate(&self, request: &ToolCallRequest) -> ApiResult<MediationOutcome>;
    fn record_ungoverned_call(&self, request: &ToolCallRequest) -> ApiResult<()>;
    fn submit_verdict(&self, target: &VerdictTarget, verdict: &HumanVerdict, note: &str) -> ApiResult<VerdictOutcome>;
    fn deactivate_owner(&self, person: &PersonId) -> ApiResult<Vec<AgentId>>;
    fn detect_drift(&self, agent_id: &AgentId, observed: &ObservedConfig) -> ApiResult<Option<DriftFinding>>;
    fn report_incident(&self, agent_id: &AgentId, kind: IncidentKind, severity: u8, note: &str) -> ApiResult<()>;
    fn supervise(&self, agent_id: &AgentId) -> ApiResult<Option<KillReport>>;
    fn sweep_expired(&self) -> ApiResult<Vec<AgentId>>;
    fn expire_memories(&self) -> ApiResult<u64>;
    fn decommission(&self, agent_id: &AgentId, reason: &str) -> ApiResult<TerminationReport>;
    fn write_memory(&self, agent_id: &AgentId, credential: &CredentialId, draft: &MemoryDraft) -> ApiResult<EntryId>;
    fn read_memory(&self, agent_id: &AgentId, credential: &CredentialId, query: &MemoryQuery) -> ApiResult<Vec<MemoryItem>>;
    fn route_message(
        &self,
        from: &AgentId,
        to: &AgentId,
        credential: &CredentialId,
        payload_digest: Digest32,
        intent: &str,
    ) -> ApiResult<MessageReceipt>;
    fn resolve_conflict(&self, case: &ConflictCase) -> ApiResult<ConflictCase>;
    fn snapshot(&self, window: Option<Window>) -> ApiResult<KpiSnapshot>;
    fn chain_status(&self) -> ApiResult<ChainStatus>;
}

/// Drives a [`ControlPlane`] directly, setting time on a shared logical clock.
pub struct InProcess {
    pub plane: Arc<ControlPlane>,
    pub clock: Arc<LogicalClock>,
    pub operator: Actor,
}

impl InProcess {
    /// A fresh plane configured for scenarios with the given seed.
    pub fn new(seed: u64) -> Self {
        let clock = Arc::new(LogicalClock::new(EPOCH));
        let plane = ControlPlane::new(scenario_plane_config(seed), clock.clone(), Arc::new(SimulatedExecutor::default()));
        Self { plane: Arc::new(plane), clock, operator: Actor::operator(SIM_OPERATOR) }
    }
}

impl GovernanceApi for InProcess {
    fn set_time(&self, t: Timestamp) -> ApiResult<()> {
        self.clock.set(t);
        Ok(())
    }

    fn load_policy(&self, document: &str) -> ApiResult<u64> {
        Ok(self.plane.load_policy(&self.operator, document)?.version)
    }

    fn register_agent(&self, draft: &AgentDraft) -> ApiResult<AgentRecord> {
        Ok(self.plane.register_agent(&self.operator, draft.clone())?)
    }

    fn approve_agent(
        &self,
        agent_id: &AgentId,
        owner: &PersonId,
        expiration: Timestamp,
        baseline: &ApprovedBaseline,
    ) -> ApiResult<AgentRecord> {
        Ok(self.plane.approve_agent(&self.operator, agent_id, Some(owner.clone()), None, expiration, Some(baseline.clone()))?)
    }

    fn transition(&self, agent_id: &AgentId, event: LifecycleEvent, reason: &str) -> ApiResult<LifecycleState> {
        Ok(self.plane.transition(&self.operator, agent_id, event, reason)?)
    }

    fn issue_credential(&self, agent_id: &AgentId, scope: &BTreeSet<String>, ttl: Millis) -> ApiResult<NhiCredential> {
        Ok(self.plane.issue_credential(&self.operator, agent_id, scope.clone(), ttl)?)
    }

    fn mediate(&self, request: &ToolCallRequest) -> ApiResult<MediationOutcome> {
        Ok(self.plane.mediate(request.clone())?)
    }

    fn record_ungoverned_call(&self, request: &ToolCallRequest) -> ApiResult<()> {
        Ok(self.plane.record_ungoverned_call(request.clone())?)
    }

    fn submit_verdict(&self, target: &VerdictTarget, verdict: &HumanVerdict, note: &str) -> ApiResult<VerdictOutcome> {
        let Actor::Operator(op) = &self.operator else { unreachable!("simulator acts as an operator") };
        Ok(self.plane.submit_human_verdict(op, target.clone(), verdict.clone(), note)?)
    }

    fn deactivate_owner(&self, person: &PersonId) -> ApiResult<Vec<AgentId>> {
        Ok(self.plane.deactivate_owner(&self.operator, person)?)
    }

    fn detect_drift(&self, agent_id: &AgentId, observed: &ObservedConfig) -> ApiResult<Option<DriftFinding>> {
        Ok(self.plane.detect_drift(&self.operator, agent_id, observed.clone())?)
    }

    fn report_incident(&self, agent_id: &AgentId, kind: IncidentKind, severity: u8, note: &str) -> ApiResult<()> {
        Ok(self.plane.report_incident(&self.operator, agent_id, kind, severity, note)?)
    }

    fn supervise(&self, agent_id: &AgentId) -> ApiResult<Option<KillReport>> {
        Ok(self.plane.supervise(agent_id)?)
    }

    fn sweep_expired(&self) -> ApiResult<Vec<AgentId>> {
        Ok(self.plane.sweep_expired(&self.operator)?)
    }

    fn expire_memories(&self) -> ApiResult<u64> {
        Ok(self.plane.expire_memories(&self.operator)?)
    }

    fn decommission(&self, agent_id: &AgentId, reason: &str) -> ApiResult<TerminationReport> {
        Ok(self.plane.decommission(&self.operator, agent_id, reason)?)
    }

    fn write_memory(&self, agent_id: &AgentId, credential: &CredentialId, draft: &MemoryDraft) -> ApiResult<EntryId> {
        self.plane.authenticate(credential, agent_id)?;
        Ok(self.plane.write_memory(agent_id, draft.clone())?)
    }

    fn read_memory(&self, agent_id: &AgentId, credential: &CredentialId, query: &MemoryQuery) -> ApiResult<Vec<MemoryItem>> {
        self.plane.authenticate(credential, agent_id)?;
        Ok(self.plane.read_memory(agent_id, query.clone())?)
    }

    fn route_message(
        &self,
        from: &AgentId,
        to: &AgentId,
        credential: &CredentialId,
        payload_digest: Digest32,
        intent: &str,
    ) -> ApiResult<MessageReceipt> {
        Ok(self.plane.route_message(from, to, credential, payload_digest, intent)?)
    }

    fn resolve_conflict(&self, case: &ConflictCase) -> ApiResult<ConflictCase> {
        Ok(self.plane.resolve_conflict(&self.operator, case.clone())?)
    }

    fn snapshot(&self, window: Option<Window>) -> ApiResult<KpiSnapshot> {
        Ok(self.plane.compute_snapshot(window)?)
    }

    fn chain_status(&self) -> ApiResult<ChainStatus> {
        Ok(self.plane.verify_all()?)
    }
}

/// The scenario PRNG: ChaCha8 seeded with the 64-bit scenario seed.
struct Stream(ChaCha8Rng);

impl Stream {
    /// Uniform in [0, 1) from the top 53 bits.
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }

    /// Uniform timestamp in [lo, hi).
    fn between(&mut self, lo: Timestamp, hi: Timestamp) -> Timestamp {
        let span = (hi.0 - lo.0).max(1) as u64;
        Timestamp(lo.0 + self.below(span) as i64)
    }

    /// Exponential inter-arrival in ms for `rate_per_hour`, at least 1 ms.
    fn exp_gap(&mut self, rate_per_hour: f64) -> Millis {
        let u = self.unit();
        let hours = -(1.0 - u).ln() / rate_per_hour;
        Millis(((hours * HOUR.0 as f64) as i64).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Onboard(usize),
    ToolCall(usize),
    Verdict { request: RequestId, allow: bool },
    Award { case: CaseId, winner: AgentId },
    Depart(usize),
    Drift(usize),
    Incident { agent: usize, kind: u8, severity: u8 },
    Decommission(usize),
    Sweep,
}

struct SimAgent {
    template: &'static Template,
    persona: String,
    duplicate: bool,
    onboard: Timestamp,
    expiration: Timestamp,
    id: Option<AgentId>,
    credential: Option<CredentialId>,
    baseline: Option<ApprovedBaseline>,
    calls: u64,
    retired: bool,
}

struct Sim<'a, A: GovernanceApi + ?Sized> {
    api: &'a A,
    config: &'a ScenarioConfig,
    rng: Stream,
    queue: BinaryHeap<Reverse<(Timestamp, u64, Action)>>,
    seq: u64,
    agents: Vec<SimAgent>,
    tool_calls: u64,
    rejected: u64,
    horizon: Timestamp,
}

impl<A: GovernanceApi + ?Sized> Sim<'_, A> {
    fn schedule(&mut self, at: Timestamp, action: Action) {
        if at <= self.horizon {
            self.seq += 1;
            self.queue.push(Reverse((at, self.seq, action)));
        }
    }

    /// Expected refusals are counted, not propagated.
    fn tolerate<T>(&mut self, r: ApiResult<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(_) => {
                self.rejected += 1;
                None
            }
        }
    }

    fn plan(&mut self) {
        let start = EPOCH;
        let d = self.config.duration;
        for i in 0..self.config.n_agents as usize {
            let mut template = &TEMPLATES[self.rng.below(TEMPLATES.len() as u64) as usize];
            let mut persona = format!("{}-{i:02}", template.persona);
            let duplicate = i > 0 && self.rng.chance(self.config.duplication_prob);
            let mut earliest = start;
            if duplicate {
                let j = self.rng.below(i as u64) as usize;
                template = self.agents[j].template;
                persona = self.agents[j].persona.clone();
                earliest = self.agents[j].onboard + MINUTE;
            }
            let onboard = self.rng.between(earliest, earliest.max(start + Millis(d.0 / 4)) + MINUTE);
            let mut expiration = start + Millis(d.0 * 2);
            if self.rng.chance(self.config.orphan_prob) {
                if self.rng.chance(0.5) {
                    let at = self.rng.between(onboard, self.horizon);
                    self.schedule(at, Action::Depart(i));
                } else {
                    expiration = self.rng.between(onboard + HOUR, self.horizon);
                }
            }
            if self.rng.chance(self.config.drift_prob) {
                let at = self.rng.between(onboard, self.horizon);
                self.schedule(at, Action::Drift(i));
            }
            if self.rng.chance(self.config.incident_prob) {
                let at = self.rng.between(onboard, self.horizon);
                let kind = self.rng.below(3) as u8;
                let severity = 1 + self.rng.below(5) as u8;
                self.schedule(at, Action::Incident { agent: i, kind, severity });
            }
            if self.rng.chance(self.config.decommission_prob) {
                let at = self.rng.between(onboard + Millis(d.0 / 4), self.horizon);
                self.schedule(at, Action::Decommission(i));
            }
            self.schedule(onboard, Action::Onboard(i));
            self.agents.push(SimAgent {
                template,
                persona,
                duplicate,
                onboard,
                expiration,
                id: None,
                credential: None,
                baseline: None,
                calls: 0,
                retired: false,
            });
        }
        if self.config.governed {
            let mut t = start + HOUR;
            while t <= self.horizon {
                self.schedule(t, Action::Sweep);
                t = t + HOUR;
            }
        }
    }

    fn supervise(&mut self, i: usize) -> Result<(), SimError> {
        if let (true, Some(id)) = (self.config.governed, self.agents[i].id.clone()) {
            self.api.supervise(&id)?;
        }
        Ok(())
    }

    fn onboard(&mut self, i: usize, now: Timestamp) -> Result<(), SimError> {
        let a = &self.agents[i];
        let t = a.template;
        let draft = AgentDraft {
            persona: a.persona.clone(),
            domain_class: t.domain,
            scope_of_practice: BTreeSet::from([t.capability.to_owned()]),
            allowed_tools: t.tools.iter().map(|s| s.to_string()).collect(),
            data_scopes: t.scopes.iter().map(|(c, _)| c.to_string()).collect(),
            allow_duplicate: a.duplicate,
        };
        let baseline = ApprovedBaseline {
            policy_version: 1,
            model_id: "model-a".into(),
            prompt_hash: Digest32::of(a.persona.as_bytes()),
            config_hash: Digest32::of(t.capability.as_bytes()),
            approved_at: now,
        };
        let expiration = a.expiration;
        let Some(rec) = self.tolerate(self.api.register_agent(&draft)) else { return Ok(()) };
        let id = rec.agent_id;
        self.api.approve_agent(&id, &PersonId::from(format!("owner-{i:02}")), expiration, &baseline)?;
        self.api.transition(&id, LifecycleEvent::Provision, "onboarding")?;
        self.api.transition(&id, LifecycleEvent::Activate, "onboarding")?;
        let scope: BTreeSet<String> =
            t.tools.iter().chain(t.scopes.iter().map(|(c, _)| c)).map(|s| s.to_string()).collect();
        let cred = self.api.issue_credential(&id, &scope, expiration - now)?;
        let a = &mut self.agents[i];
        a.id = Some(id);
        a.credential = Some(cred.credential_id);
        a.baseline = Some(baseline);
        self.next_call(i, now);
        Ok(())
    }

    fn next_call(&mut self, i: usize, now: Timestamp) {
        if self.config.tool_call_rate > 0.0 {
            let gap = self.rng.exp_gap(self.config.tool_call_rate);
            self.schedule(now + gap, Action::ToolCall(i));
        }
    }

    fn random_other(&mut self, i: usize) -> Option<usize> {
        let live: Vec<usize> = (0..self.agents.len()).filter(|&j| j != i && self.agents[j].id.is_some()).collect();
        (!live.is_empty()).then(|| live[self.rng.below(live.len() as u64) as usize])
    }

    fn tool_call(&mut self, i: usize, now: Timestamp) -> Result<(), SimError> {
        if self.agents[i].retired || self.config.max_tool_calls.is_some_and(|m| self.tool_calls >= m) {
            return Ok(());
        }
        let (Some(id), Some(cred)) = (self.agents[i].id.clone(), self.agents[i].credential.clone()) else {
            return Ok(());
        };
        let t = self.agents[i].template;
        self.tool_calls += 1;
        self.agents[i].calls += 1;
        let tool = if self.rng.chance(0.05) {
            let other = &TEMPLATES[self.rng.below(TEMPLATES.len() as u64) as usize];
            other.tools[self.rng.below(2) as usize]
        } else {
            t.tools[self.rng.below(2) as usize]
        };
        let category = if self.rng.chance(0.1) {
            let other = &TEMPLATES[self.rng.below(TEMPLATES.len() as u64) as usize];
            other.scopes[self.rng.below(2) as usize].0
        } else {
            t.scopes[self.rng.below(2) as usize].0
        };
        let workflow = WorkflowId::from(format!("wf-{i:02}-{:04}", self.agents[i].calls / 5));
        let mut conditions = BTreeSet::new();
        if self.rng.chance(0.5) {
            conditions.insert("human_approval_present".to_owned());
        }
        let request = ToolCallRequest {
            request_id: RequestId::from(format!("req-{:06}", self.tool_calls)),
            agent_id: id.clone(),
            credential_id: cred.clone(),
            tool: tool.to_owned(),
            resources: BTreeSet::from([ResourceRef { category: category.to_owned(), phi: category_phi(category) }]),
            workflow_id: workflow.clone(),
            intent: format!("{tool} for {category}"),
            conditions,
            submitted_at: now,
        };
        if self.config.governed {
            let outcome = self.api.mediate(&request)?;
            if outcome.disposition == Disposition::PendingHuman {
                let allow = self.rng.chance(0.7);
                self.schedule(now + Millis(15 * MINUTE.0), Action::Verdict { request: request.request_id, allow });
            }
        } else {
            self.api.record_ungoverned_call(&request)?;
        }

        if self.rng.chance(0.3) {
            let (category, phi) = t.scopes[self.rng.below(2) as usize];
            let draft = MemoryDraft {
                shard_key: Some(format!("patient-{}", self.rng.below(8))),
                data_category: category.to_owned(),
                phi,
                payload: format!("note {} by {id}", self.tool_calls).into_bytes(),
                ttl: Millis(HOUR.0 * (1 + self.rng.below(72) as i64)),
            };
            let r = self.api.write_memory(&id, &cred, &draft);
            self.tolerate(r);
        }
        if self.rng.chance(0.3) {
            let categories = match self.rng.below(3) {
                0 => None,
                1 => Some(BTreeSet::from([t.scopes[self.rng.below(2) as usize].0.to_owned()])),
                _ => {
                    let other = &TEMPLATES[self.rng.below(TEMPLATES.len() as u64) as usize];
                    Some(BTreeSet::from([other.scopes[self.rng.below(2) as usize].0.to_owned()]))
                }
            };
            let query = MemoryQuery {
                shard_key: format!("patient-{}", self.rng.below(8)),
                categories,
                workflow_id: Some(workflow),
            };
            let r = self.api.read_memory(&id, &cred, &query);
            self.tolerate(r);
        }
        if self.rng.chance(0.1) {
            if let Some(j) = self.random_other(i) {
                let to = self.agents[j].id.clone().expect("live agent");
                let digest = Digest32::of(format!("msg {}", self.tool_calls).as_bytes());
                let r = self.api.route_message(&id, &to, &cred, digest, "handoff");
                self.tolerate(r);
            }
        }
        if self.rng.chance(0.03) {
            if let Some(j) = self.random_other(i) {
                let other = &self.agents[j];
                let case = ConflictCase {
                    case_id: CaseId::from(String::new()),
                    claims: [
                        ConflictClaim { agent_id: id.clone(), domain_class: t.domain, objective: format!("{} plan", t.persona) },
                        ConflictClaim {
                            agent_id: other.id.clone().expect("live agent"),
                            domain_class: other.template.domain,
                            objective: format!("{} plan", other.template.persona),
                        },
                    ],
                    contested: format!("patient-{}/care-plan", self.rng.below(8)),
                    status: ConflictStatus::Open,
                    resolution: None,
                    reasoning: String::new(),
                };
                if let Some(resolved) = self.tolerate(self.api.resolve_conflict(&case)) {
                    if resolved.status == ConflictStatus::Escalated {
                        let winner = resolved.claims[self.rng.below(2) as usize].agent_id.clone();
                        self.schedule(now + Millis(30 * MINUTE.0), Action::Award { case: resolved.case_id, winner });
                    }
                }
            }
        }
        self.supervise(i)?;
        self.next_call(i, now);
        Ok(())
    }

    fn step(&mut self, now: Timestamp, action: Action) -> Result<(), SimError> {
        self.api.set_time(now)?;
        match action {
            Action::Onboard(i) => self.onboard(i, now)?,
            Action::ToolCall(i) => self.tool_call(i, now)?,
            Action::Verdict { request, allow } => {
                let verdict = if allow { HumanVerdict::Allow } else { HumanVerdict::Deny };
                let r = self.api.submit_verdict(&VerdictTarget::Request(request), &verdict, "reviewed");
                self.tolerate(r);
            }
            Action::Award { case, winner } => {
                let r = self.api.submit_verdict(&VerdictTarget::Conflict(case), &HumanVerdict::Award(winner), "reviewed");
                self.tolerate(r);
            }
            Action::Depart(i) => {
                if self.agents[i].id.is_some() {
                    self.api.deactivate_owner(&PersonId::from(format!("owner-{i:02}")))?;
                    self.supervise(i)?;
                }
            }
            Action::Drift(i) => {
                if let (Some(id), Some(b)) = (self.agents[i].id.clone(), self.agents[i].baseline.clone()) {
                    let observed = ObservedConfig { model_id: "model-b".into(), ..ObservedConfig::of(&b) };
                    self.api.detect_drift(&id, &observed)?;
                    self.supervise(i)?;
                }
            }
            Action::Incident { agent, kind, severity } => {
                if let Some(id) = self.agents[agent].id.clone() {
                    let kind = [IncidentKind::ToolMisuse, IncidentKind::PhiExposure, IncidentKind::UnauthorizedAction]
                        [kind as usize];
                    self.api.report_incident(&id, kind, severity, "observed in traffic")?;
                    self.supervise(agent)?;
                }
            }
            Action::Decommission(i) => {
                if let Some(id) = self.agents[i].id.clone() {
                    if self.tolerate(self.api.decommission(&id, "retired by operator")).is_some() {
                        self.agents[i].retired = true;
                    }
                }
            }
            Action::Sweep => {
                self.api.sweep_expired()?;
                self.api.expire_memories()?;
            }
        }
        Ok(())
    }
}

/// Runs a scenario against any transport.
pub fn run_on<A: GovernanceApi + ?Sized>(api: &A, config: &ScenarioConfig) -> Result<ScenarioResult, SimError> {
    config.validate()?;
    let mut sim = Sim {
        api,
        config,
        rng: Stream(ChaCha8Rng::seed_from_u64(config.seed)),
        queue: BinaryHeap::new(),
        seq: 0,
        agents: Vec::new(),
        tool_calls: 0,
        rejected: 0,
        horizon: EPOCH + config.duration,
    };
    api.set_time(EPOCH)?;
    api.load_policy(SIM_POLICY)?;
    sim.plan();
    while let Some(Reverse((at, _, action))) = sim.queue.pop() {
        sim.step(at, action)?;
    }
    let snapshot = api.snapshot(None)?;
    let (event_count, log_digest) = match api.chain_status()? {
        ChainStatus::Ok { terminal_seq, terminal_hash } => (terminal_seq, terminal_hash),
        ChainStatus::Corrupt { seq } => {
            return Err(ApiError { code: "corrupt_log".into(), message: format!("chain breaks at seq {seq}") }.into())
        }
    };
    Ok(ScenarioResult { event_count, snapshot, log_digest, tool_calls: sim.tool_calls, rejected_ops: sim.rejected })
}

/// Runs a scenario in process and hands back the plane for inspection.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(ScenarioResult, Arc<ControlPlane>), SimError> {
    let api = InProcess::new(config.seed);
    let result = run_on(&api, config)?;
    Ok((result, api.plane))
}

/// Rebuilds fleet state from log events alone.
pub fn replay(events: &[AuditEvent]) -> Result<FleetState, ReplayError> {
    FleetState::replay(events)
}
