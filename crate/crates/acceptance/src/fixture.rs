//! A control plane on a logical clock, loaded with the simulator's documents,
//! plus agent onboarding shortcuts.

use std::collections::BTreeSet;
use std::sync::Arc;

use ualm_core::clock::{Clock, LogicalClock, Millis, Timestamp};
use ualm_core::digest::Digest32;
use ualm_core::domain::{Actor, DomainClass};
use ualm_core::ids::{AgentId, CredentialId, PersonId};
use ualm_core::lifecycle::LifecycleEvent;
use ualm_core::mediation::SimulatedExecutor;
use ualm_core::registry::{AgentDraft, ApprovedBaseline};
use ualm_core::simulator::{scenario_plane_config, EPOCH, SIM_POLICY};
use ualm_core::ControlPlane;

pub struct Role {
    pub persona: &'static str,
    pub domain: DomainClass,
    pub capability: &'static str,
    pub tools: [&'static str; 2],
    pub scopes: [&'static str; 2],
}

pub const ROLES: [Role; 4] = [
    Role {
        persona: "med",
        domain: DomainClass::PatientSafety,
        capability: "medication_review",
        tools: ["read_med_list", "propose_med_change"],
        scopes: ["medications", "allergies"],
    },
    Role {
        persona: "discharge",
        domain: DomainClass::ClinicalOutcome,
        capability: "discharge_planning",
        tools: ["read_chart", "schedule_followup"],
        scopes: ["encounters", "care_plan"],
    },
    Role {
        persona: "claims",
        domain: DomainClass::Administrative,
        capability: "claims",
        tools: ["read_coverage", "submit_claim"],
        scopes: ["coverage", "billing"],
    },
    Role {
        persona: "privacy",
        domain: DomainClass::Privacy,
        capability: "privacy_audit",
        tools: ["read_access_log", "redact_record"],
        scopes: ["access_logs", "demographics"],
    },
];

/// Every category in the retention document.
pub const CATEGORIES: [&str; 8] =
    ["medications", "allergies", "encounters", "care_plan", "coverage", "billing", "access_logs", "demographics"];

pub fn phi_category(c: &str) -> bool {
    matches!(c, "medications" | "allergies" | "encounters" | "care_plan" | "demographics")
}

pub struct Fleet {
    pub plane: Arc<ControlPlane>,
    pub clock: Arc<LogicalClock>,
    pub op: Actor,
    count: usize,
}

impl Fleet {
    pub fn new(seed: u64) -> Self {
        let clock = Arc::new(LogicalClock::new(EPOCH));
        let plane = ControlPlane::new(scenario_plane_config(seed), clock.clone(), Arc::new(SimulatedExecutor::default()));
        let op = Actor::operator("acceptance");
        plane.load_policy(&op, SIM_POLICY).expect("policy loads");
        Fleet { plane: Arc::new(plane), clock, op, count: 0 }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn advance(&self, by: Millis) -> Timestamp {
        self.clock.advance(by)
    }

    /// Registers, approves and activates an agent in `role` and issues it one
    /// credential covering its tools and scopes.
    pub fn onboard(&mut self, role: &Role) -> (AgentId, CredentialId) {
        self.count += 1;
        let draft = AgentDraft {
            persona: format!("{}-{}", role.persona, self.count),
            domain_class: role.domain,
            scope_of_practice: BTreeSet::from([role.capability.to_owned()]),
            allowed_tools: role.tools.iter().map(|s| s.to_string()).collect(),
            data_scopes: role.scopes.iter().map(|s| s.to_string()).collect(),
            allow_duplicate: false,
        };
        let p = &self.plane;
        let id = p.register_agent(&self.op, draft).expect("register").agent_id;
        let now = self.now();
        let baseline = ApprovedBaseline {
            policy_version: 1,
            model_id: "model-a".into(),
            prompt_hash: Digest32::of(role.persona.as_bytes()),
            config_hash: Digest32::of(role.capability.as_bytes()),
            approved_at: now,
        };
        let owner = PersonId::from(format!("owner-{}", self.count));
        p.approve_agent(&self.op, &id, Some(owner), None, now + Millis::days(365), Some(baseline)).expect("approve");
        p.transition(&self.op, &id, LifecycleEvent::Provision, "onboarding").expect("provision");
        p.transition(&self.op, &id, LifecycleEvent::Activate, "onboarding").expect("activate");
        let cred = self.issue(role, &id);
        (id, cred)
    }

    pub fn issue(&self, role: &Role, id: &AgentId) -> CredentialId {
        let scope: BTreeSet<String> = role.tools.iter().chain(role.scopes.iter()).map(|s| s.to_string()).collect();
        self.plane.issue_credential(&self.op, id, scope, Millis::days(30)).expect("issue").credential_id
    }
}
