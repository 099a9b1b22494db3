#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use ualm_core::audit::AuditLog;
use ualm_core::clock::{Clock, LogicalClock, Millis, Timestamp};
use ualm_core::digest::Digest32;
use ualm_core::domain::{Actor, DomainClass};
use ualm_core::ids::{AgentId, CredentialId, PersonId, RequestId, WorkflowId};
use ualm_core::lifecycle::LifecycleEvent;
use ualm_core::mediation::{ResourceRef, SimulatedExecutor, ToolCallRequest};
use ualm_core::registry::{AgentDraft, ApprovedBaseline};
use ualm_core::simulator::{scenario_plane_config, EPOCH, SIM_POLICY};
use ualm_core::ControlPlane;

pub struct Kit {
    pub plane: ControlPlane,
    pub clock: Arc<LogicalClock>,
    pub op: Actor,
    pub executor: Arc<SimulatedExecutor>,
    n: u32,
}

/// A plane on a logical clock with the simulator's catalog, retention,
/// triggers and policy.
pub fn kit() -> Kit {
    let kit = bare();
    kit.plane.load_policy(&kit.op, SIM_POLICY).unwrap();
    kit
}

/// Like [`kit`] but with no policy loaded.
pub fn bare() -> Kit {
    on_log(AuditLog::in_memory())
}

/// A policy-loaded kit writing to `log`.
pub fn on_log(log: AuditLog) -> Kit {
    let clock = Arc::new(LogicalClock::new(EPOCH));
    let executor = Arc::new(SimulatedExecutor::default());
    let plane = ControlPlane::with_log(scenario_plane_config(7), clock.clone(), executor.clone(), log).unwrap();
    Kit { plane, clock, op: Actor::operator("ops"), executor, n: 0 }
}

pub fn restore(log: AuditLog, clock: Arc<LogicalClock>) -> ControlPlane {
    ControlPlane::with_log(scenario_plane_config(7), clock, Arc::new(SimulatedExecutor::default()), log).unwrap()
}

pub fn med_draft(persona: &str) -> AgentDraft {
    AgentDraft {
        persona: persona.into(),
        domain_class: DomainClass::PatientSafety,
        scope_of_practice: BTreeSet::from(["medication_review".to_owned()]),
        allowed_tools: BTreeSet::from(["read_med_list".to_owned(), "propose_med_change".to_owned()]),
        data_scopes: BTreeSet::from(["medications".to_owned(), "allergies".to_owned()]),
        allow_duplicate: false,
    }
}

pub fn claims_draft(persona: &str) -> AgentDraft {
    AgentDraft {
        persona: persona.into(),
        domain_class: DomainClass::Administrative,
        scope_of_practice: BTreeSet::from(["claims".to_owned()]),
        allowed_tools: BTreeSet::from(["read_coverage".to_owned(), "submit_claim".to_owned()]),
        data_scopes: BTreeSet::from(["coverage".to_owned(), "billing".to_owned()]),
        allow_duplicate: false,
    }
}

pub fn baseline(at: Timestamp) -> ApprovedBaseline {
    ApprovedBaseline {
        policy_version: 1,
        model_id: "model-a".into(),
        prompt_hash: Digest32::of(b"prompt"),
        config_hash: Digest32::of(b"config"),
        approved_at: at,
    }
}

impl Kit {
    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Registers, approves, provisions and activates `draft`, then issues a
    /// credential over its tools and scopes.
    pub fn active(&mut self, draft: AgentDraft) -> (AgentId, CredentialId) {
        self.n += 1;
        let scope: BTreeSet<String> = draft.allowed_tools.iter().chain(draft.data_scopes.iter()).cloned().collect();
        let p = &self.plane;
        let id = p.register_agent(&self.op, draft).unwrap().agent_id;
        let owner = PersonId::from(format!("owner-{}", self.n));
        p.approve_agent(&self.op, &id, Some(owner), None, self.now() + Millis::days(90), Some(baseline(self.now())))
            .unwrap();
        p.transition(&self.op, &id, LifecycleEvent::Provision, "").unwrap();
        p.transition(&self.op, &id, LifecycleEvent::Activate, "").unwrap();
        let cred = p.issue_credential(&self.op, &id, scope, Millis::days(30)).unwrap().credential_id;
        (id, cred)
    }

    pub fn request(&self, id: &str, agent: &AgentId, cred: &CredentialId, tool: &str, category: &str, phi: bool) -> ToolCallRequest {
        ToolCallRequest {
            request_id: RequestId::from(id),
            agent_id: agent.clone(),
            credential_id: cred.clone(),
            tool: tool.into(),
            resources: BTreeSet::from([ResourceRef { category: category.into(), phi }]),
            workflow_id: WorkflowId::from(format!("wf-{id}")),
            intent: String::new(),
            conditions: BTreeSet::new(),
            submitted_at: self.now(),
        }
    }
}
