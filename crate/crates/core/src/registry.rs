//! Identity and persona registry: the system of record for agents, their
//! ownership and scope, redundancy detection, and NHI credentials.
//!
//! The [`Registry`] type holds state and the pure precondition checks. The
//! mutating operations themselves live on [`crate::ControlPlane`], which checks,
//! appends the audit event, then applies the change here.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Millis, Timestamp};
use crate::config::{line_of_key, parse_toml, ParseError};
use crate::digest::Digest32;
use crate::domain::DomainClass;
use crate::ids::{AgentId, CredentialId, OrgUnitId, PersonId};
use crate::lifecycle::LifecycleState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovedBaseline {
    pub policy_version: u64,
    pub model_id: String,
    pub prompt_hash: Digest32,
    pub config_hash: Digest32,
    pub approved_at: Timestamp,
}

/// One row of the registry. Field order is the export order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent_id: AgentId,
    pub persona: String,
    pub accountable_owner: Option<PersonId>,
    pub liability_owner: Option<OrgUnitId>,
    pub domain_class: DomainClass,
    pub scope_of_practice: BTreeSet<String>,
    pub allowed_tools: BTreeSet<String>,
    pub data_scopes: BTreeSet<String>,
    pub baseline: Option<ApprovedBaseline>,
    pub state: LifecycleState,
    pub expiration: Option<Timestamp>,
    pub registered_at: Timestamp,
}

impl AgentRecord {
    /// Everything a credential for this agent may claim.
    pub fn claimable_scope(&self) -> BTreeSet<String> {
        self.allowed_tools.union(&self.data_scopes).cloned().collect()
    }

    fn overlap_set(&self) -> BTreeSet<String> {
        self.scope_of_practice
            .iter()
            .map(|c| format!("cap:{c}"))
            .chain(self.allowed_tools.iter().map(|t| format!("tool:{t}")))
            .collect()
    }
}

/// Registration request: an agent record minus ids and lifecycle fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDraft {
    pub persona: String,
    pub domain_class: DomainClass,
    pub scope_of_practice: BTreeSet<String>,
    pub allowed_tools: BTreeSet<String>,
    #[serde(default)]
    pub data_scopes: BTreeSet<String>,
    /// Register even if an Active agent with the same persona and domain exists.
    #[serde(default)]
    pub allow_duplicate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NhiCredential {
    pub credential_id: CredentialId,
    pub agent_id: AgentId,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub status: CredentialStatus,
    pub revoked_at: Option<Timestamp>,
    pub scope_claims: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Unknown,
    Revoked,
    Expired,
    AgentNotActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("persona `{persona}` already active in domain {domain} as {existing}")]
    DuplicatePersonaInDomain { persona: String, domain: DomainClass, existing: AgentId },
    #[error("tool `{tool}` is not granted by any declared capability")]
    LeastPrivilegeViolation { tool: String },
    #[error("capability `{0}` is not in the capability catalog")]
    UnknownCapability(String),
    #[error("persona must be non-empty")]
    EmptyPersona,
    #[error("scope_of_practice must be non-empty")]
    EmptyScope,
    #[error("an accountable owner is required")]
    MissingOwner,
    #[error("owner {0} has left the organization")]
    OwnerDeparted(PersonId),
    #[error("agent {agent} is {state}; {op} requires {expected}")]
    InvalidState { agent: AgentId, state: LifecycleState, op: &'static str, expected: &'static str },
    #[error("expiration must be in the future")]
    ExpirationInPast,
    #[error("baseline approval time is in the future")]
    BaselineFromFuture,
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("agent {0} is not Active")]
    AgentNotActive(AgentId),
    #[error("requested claim `{0}` exceeds the agent's scope")]
    ScopeEscalation(String),
    #[error("credential would outlive its agent's expiration")]
    TtlBeyondExpiration,
    #[error("credential ttl must be positive")]
    InvalidTtl,
    #[error("overlap threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// Capability tag → tools that capability permits.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityCatalog {
    capabilities: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    capabilities: BTreeMap<String, Vec<String>>,
}

impl CapabilityCatalog {
    pub fn new(entries: impl IntoIterator<Item = (String, BTreeSet<String>)>) -> Self {
        Self { capabilities: entries.into_iter().collect() }
    }

    /// Parses the `[capabilities]` TOML document; see `docs/formats.md`.
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let doc: CatalogDoc = parse_toml(src)?;
        let mut capabilities = BTreeMap::new();
        for (tag, tools) in doc.capabilities {
            let line = line_of_key(src, &tag, 1);
            if tools.is_empty() {
                return Err(ParseError::new(line, tag, "capability grants no tools"));
            }
            let mut set = BTreeSet::new();
            for tool in tools {
                if tool.trim().is_empty() || tool.contains(char::is_whitespace) {
                    return Err(ParseError::new(line, tag, format!("invalid tool id `{tool}`")));
                }
                if !set.insert(tool.clone()) {
                    return Err(ParseError::new(line, tag, format!("tool `{tool}` listed twice")));
                }
            }
            capabilities.insert(tag, set);
        }
        Ok(Self { capabilities })
    }

    pub fn contains(&self, capability: &str) -> bool {
        self.capabilities.contains_key(capability)
    }

    pub fn tools_for<'a>(&'a self, scope: impl IntoIterator<Item = &'a String>) -> BTreeSet<&'a str> {
        scope
            .into_iter()
            .filter_map(|c| self.capabilities.get(c))
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.capabilities.iter()
    }
}

/// Jaccard similarity of the agents' capability tags ∪ tool ids.
pub fn overlap_score(a: &AgentRecord, b: &AgentRecord) -> f64 {
    let sa = a.overlap_set();
    let sb = b.overlap_set();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub agents: BTreeMap<AgentId, AgentRecord>,
    pub credentials: BTreeMap<CredentialId, NhiCredential>,
    /// People recorded as no longer holding ownership (left, reassigned).
    pub departed_owners: BTreeSet<PersonId>,
}

impl Registry {
    pub fn agent(&self, id: &AgentId) -> Result<&AgentRecord, RegistryError> {
        self.agents.get(id).ok_or_else(|| RegistryError::UnknownAgent(id.clone()))
    }

    pub fn check_register(&self, draft: &AgentDraft, catalog: &CapabilityCatalog) -> Result<(), RegistryError> {
        if draft.persona.trim().is_empty() {
            return Err(RegistryError::EmptyPersona);
        }
        if draft.scope_of_practice.is_empty() {
            return Err(RegistryError::EmptyScope);
        }
        if let Some(c) = draft.scope_of_practice.iter().find(|c| !catalog.contains(c)) {
            return Err(RegistryError::UnknownCapability(c.clone()));
        }
        let granted = catalog.tools_for(&draft.scope_of_practice);
        if let Some(tool) = draft.allowed_tools.iter().find(|t| !granted.contains(t.as_str())) {
            return Err(RegistryError::LeastPrivilegeViolation { tool: tool.clone() });
        }
        if !draft.allow_duplicate {
            if let Some(existing) = self.agents.values().find(|a| {
                a.state == LifecycleState::Active && a.persona == draft.persona && a.domain_class == draft.domain_class
            }) {
                return Err(RegistryError::DuplicatePersonaInDomain {
                    persona: draft.persona.clone(),
                    domain: draft.domain_class,
                    existing: existing.agent_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn check_approve(
        &self,
        agent_id: &AgentId,
        owner: Option<&PersonId>,
        expiration: Timestamp,
        baseline: Option<&ApprovedBaseline>,
        now: Timestamp,
    ) -> Result<(), RegistryError> {
        let agent = self.agent(agent_id)?;
        if agent.state != LifecycleState::Requested {
            return Err(RegistryError::InvalidState {
                agent: agent_id.clone(),
                state: agent.state,
                op: "approve",
                expected: "Requested",
            });
        }
        match owner {
            Some(o) if !o.as_str().trim().is_empty() => {}
            _ => return Err(RegistryError::MissingOwner),
        }
        if expiration <= now {
            return Err(RegistryError::ExpirationInPast);
        }
        if baseline.is_some_and(|b| b.approved_at > now) {
            return Err(RegistryError::BaselineFromFuture);
        }
        Ok(())
    }

    pub fn check_issue(
        &self,
        agent_id: &AgentId,
        requested: &BTreeSet<String>,
        ttl: Millis,
        now: Timestamp,
    ) -> Result<Timestamp, RegistryError> {
        let agent = self.agent(agent_id)?;
        if agent.state != LifecycleState::Active {
            return Err(RegistryError::AgentNotActive(agent_id.clone()));
        }
        if ttl.0 <= 0 {
            return Err(RegistryError::InvalidTtl);
        }
        let claimable = agent.claimable_scope();
        if let Some(claim) = requested.iter().find(|c| !claimable.contains(*c)) {
            return Err(RegistryError::ScopeEscalation(claim.clone()));
        }
        let expires_at = now + ttl;
        match agent.expiration {
            Some(exp) if expires_at <= exp => Ok(expires_at),
            _ => Err(RegistryError::TtlBeyondExpiration),
        }
    }

    pub fn find_overlapping(&self, agent_id: &AgentId, threshold: f64) -> Result<Vec<(AgentId, f64)>, RegistryError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(RegistryError::InvalidThreshold(threshold));
        }
        let subject = self.agent(agent_id)?;
        let mut hits: Vec<(AgentId, f64)> = self
            .agents
            .values()
            .filter(|a| a.agent_id != *agent_id && a.state != LifecycleState::Decommissioned)
            .map(|a| (a.agent_id.clone(), overlap_score(subject, a)))
            .filter(|(_, s)| *s >= threshold)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(hits)
    }

    pub fn validate_credential(&self, credential_id: &CredentialId, now: Timestamp) -> Validity {
        let Some(cred) = self.credentials.get(credential_id) else {
            return Validity::Invalid(InvalidReason::Unknown);
        };
        if cred.status == CredentialStatus::Revoked {
            return Validity::Invalid(InvalidReason::Revoked);
        }
        if now >= cred.expires_at {
            return Validity::Invalid(InvalidReason::Expired);
        }
        match self.agents.get(&cred.agent_id) {
            Some(a) if a.state == LifecycleState::Active => Validity::Valid,
            _ => Validity::Invalid(InvalidReason::AgentNotActive),
        }
    }

    pub fn credentials_of<'a>(&'a self, agent_id: &'a AgentId) -> impl Iterator<Item = &'a NhiCredential> + 'a {
        self.credentials.values().filter(move |c| c.agent_id == *agent_id)
    }

    pub fn active_credentials(&self, agent_id: &AgentId) -> Vec<CredentialId> {
        self.credentials_of(agent_id)
            .filter(|c| c.status == CredentialStatus::Active)
            .map(|c| c.credential_id.clone())
            .collect()
    }

    /// Owner recorded and still holding ownership.
    pub fn has_active_owner(&self, agent: &AgentRecord) -> bool {
        agent.accountable_owner.as_ref().is_some_and(|o| !self.departed_owners.contains(o))
    }

    pub(crate) fn revoke(&mut self, ids: &[CredentialId], at: Timestamp) {
        for id in ids {
            if let Some(c) = self.credentials.get_mut(id) {
                if c.status == CredentialStatus::Active {
                    c.status = CredentialStatus::Revoked;
                    c.revoked_at = Some(at);
                }
            }
        }
    }

    /// Newline-delimited snapshot, one agent per line in id order.
    pub fn export_snapshot(&self) -> String {
        let mut out = String::new();
        for a in self.agents.values() {
            out.push_str(&serde_json::to_string(a).expect("agent record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn catalog() -> CapabilityCatalog {
        CapabilityCatalog::parse(
            "[capabilities]\nvitals_monitoring = [\"read_vitals\", \"page_care_team\"]\nmedication_management = [\"order_medication\", \"read_medications\"]\n",
        )
        .unwrap()
    }

    fn record(id: &str, caps: &[&str], tools: &[&str]) -> AgentRecord {
        AgentRecord {
            agent_id: AgentId::from(id),
            persona: id.into(),
            accountable_owner: None,
            liability_owner: None,
            domain_class: DomainClass::ClinicalOutcome,
            scope_of_practice: set(caps),
            allowed_tools: set(tools),
            data_scopes: BTreeSet::new(),
            baseline: None,
            state: LifecycleState::Active,
            expiration: None,
            registered_at: Timestamp(0),
        }
    }

    #[test]
    fn least_privilege_is_checked_against_catalog() {
        let reg = Registry::default();
        let draft = AgentDraft {
            persona: "sepsis-watch".into(),
            domain_class: DomainClass::PatientSafety,
            scope_of_practice: set(&["vitals_monitoring"]),
            allowed_tools: set(&["order_medication"]),
            data_scopes: BTreeSet::new(),
            allow_duplicate: false,
        };
        assert_eq!(
            reg.check_register(&draft, &catalog()),
            Err(RegistryError::LeastPrivilegeViolation { tool: "order_medication".into() })
        );
        let ok = AgentDraft { allowed_tools: set(&["read_vitals"]), ..draft.clone() };
        assert_eq!(reg.check_register(&ok, &catalog()), Ok(()));
        let unknown = AgentDraft { scope_of_practice: set(&["telepathy"]), ..draft };
        assert!(matches!(reg.check_register(&unknown, &catalog()), Err(RegistryError::UnknownCapability(_))));
    }

    #[test]
    fn jaccard_edge_cases() {
        let a = record("a", &["vitals_monitoring"], &["read_vitals"]);
        let b = record("b", &["vitals_monitoring"], &["read_vitals"]);
        let c = record("c", &["medication_management"], &["order_medication"]);
        assert_eq!(overlap_score(&a, &b), 1.0);
        assert_eq!(overlap_score(&a, &c), 0.0);
        let d = record("d", &["vitals_monitoring"], &["read_vitals", "page_care_team"]);
        assert!((overlap_score(&a, &d) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_threshold_bounds() {
        let mut reg = Registry::default();
        let a = record("a", &["vitals_monitoring"], &[]);
        reg.agents.insert(a.agent_id.clone(), a);
        assert!(reg.find_overlapping(&"a".into(), 0.0).is_err());
        assert!(reg.find_overlapping(&"a".into(), 1.5).is_err());
        assert!(reg.find_overlapping(&"a".into(), 1.0).unwrap().is_empty());
        assert!(matches!(reg.find_overlapping(&"zz".into(), 0.5), Err(RegistryError::UnknownAgent(_))));
    }

    #[test]
    fn catalog_errors_name_line_and_field() {
        let err = CapabilityCatalog::parse("[capabilities]\nok = [\"t\"]\nempty = []\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.field, "empty");
        let err = CapabilityCatalog::parse("[capabilities]\nx = [\"a b\"]\n").unwrap_err();
        assert_eq!(err.field, "x");
        let err = CapabilityCatalog::parse("[capabilities]\nx = 3\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }
}
