//! Agent lifecycle: the six-state machine, baseline drift comparison and
//! termination evidence.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::digest::Digest32;
use crate::ids::AgentId;
use crate::registry::ApprovedBaseline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LifecycleState {
    Requested,
    Approved,
    Provisioned,
    Active,
    Suspended,
    Decommissioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    Approve,
    Provision,
    Activate,
    Suspend,
    Reactivate,
    Decommission,
}

/// The complete transition table. Anything not listed is invalid.
pub const TRANSITIONS: [(LifecycleState, LifecycleEvent, LifecycleState); 7] = [
    (LifecycleState::Requested, LifecycleEvent::Approve, LifecycleState::Approved),
    (LifecycleState::Approved, LifecycleEvent::Provision, LifecycleState::Provisioned),
    (LifecycleState::Provisioned, LifecycleEvent::Activate, LifecycleState::Active),
    (LifecycleState::Active, LifecycleEvent::Suspend, LifecycleState::Suspended),
    (LifecycleState::Active, LifecycleEvent::Decommission, LifecycleState::Decommissioned),
    (LifecycleState::Suspended, LifecycleEvent::Reactivate, LifecycleState::Active),
    (LifecycleState::Suspended, LifecycleEvent::Decommission, LifecycleState::Decommissioned),
];

impl LifecycleState {
    pub const ALL: [LifecycleState; 6] = [
        LifecycleState::Requested,
        LifecycleState::Approved,
        LifecycleState::Provisioned,
        LifecycleState::Active,
        LifecycleState::Suspended,
        LifecycleState::Decommissioned,
    ];

    pub fn apply(self, event: LifecycleEvent) -> Result<LifecycleState, LifecycleError> {
        TRANSITIONS
            .iter()
            .find(|(from, ev, _)| *from == self && *ev == event)
            .map(|(_, _, to)| *to)
            .ok_or(LifecycleError::InvalidTransition { state: self, event })
    }

    pub fn is_terminal(self) -> bool {
        self == LifecycleState::Decommissioned
    }

    /// Active and Suspended agents must carry an owner and an expiration.
    pub fn requires_custody(self) -> bool {
        matches!(self, LifecycleState::Active | LifecycleState::Suspended)
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for LifecycleEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "approve" => LifecycleEvent::Approve,
            "provision" => LifecycleEvent::Provision,
            "activate" => LifecycleEvent::Activate,
            "suspend" => LifecycleEvent::Suspend,
            "reactivate" => LifecycleEvent::Reactivate,
            "decommission" => LifecycleEvent::Decommission,
            other => return Err(format!("unknown lifecycle event `{other}`")),
        })
    }
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LifecycleEvent::Approve => "approve",
            LifecycleEvent::Provision => "provision",
            LifecycleEvent::Activate => "activate",
            LifecycleEvent::Suspend => "suspend",
            LifecycleEvent::Reactivate => "reactivate",
            LifecycleEvent::Decommission => "decommission",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("invalid transition: {event} from {state}")]
    InvalidTransition { state: LifecycleState, event: LifecycleEvent },
    #[error("agent is {state}; operation requires {expected}")]
    InvalidState { state: LifecycleState, expected: &'static str },
    #[error("approval must go through approve_agent")]
    ApprovalRequired,
    #[error("agent has no approved baseline")]
    NoBaseline,
    #[error("injected fault at {0}")]
    InjectedFault(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineDimension {
    PolicyVersion,
    ModelId,
    PromptHash,
    ConfigHash,
}

/// What an agent is observed to be running, in baseline shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedConfig {
    pub policy_version: u64,
    pub model_id: String,
    pub prompt_hash: Digest32,
    pub config_hash: Digest32,
}

impl ObservedConfig {
    pub fn of(baseline: &ApprovedBaseline) -> Self {
        Self {
            policy_version: baseline.policy_version,
            model_id: baseline.model_id.clone(),
            prompt_hash: baseline.prompt_hash,
            config_hash: baseline.config_hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftFinding {
    pub agent_id: AgentId,
    pub detected_at: Timestamp,
    pub dimensions: BTreeSet<BaselineDimension>,
    pub observed: ObservedConfig,
    pub baseline: ApprovedBaseline,
}

/// Lists exactly the dimensions on which `observed` departs from `baseline`.
pub fn drift_dimensions(baseline: &ApprovedBaseline, observed: &ObservedConfig) -> BTreeSet<BaselineDimension> {
    let mut dims = BTreeSet::new();
    if baseline.policy_version != observed.policy_version {
        dims.insert(BaselineDimension::PolicyVersion);
    }
    if baseline.model_id != observed.model_id {
        dims.insert(BaselineDimension::ModelId);
    }
    if baseline.prompt_hash != observed.prompt_hash {
        dims.insert(BaselineDimension::PromptHash);
    }
    if baseline.config_hash != observed.config_hash {
        dims.insert(BaselineDimension::ConfigHash);
    }
    dims
}

/// Compliance-grade record of an agent's termination. Fields are serialized in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub agent_id: AgentId,
    pub reason: String,
    pub initiated_by: String,
    pub revoked_credentials: u64,
    pub frozen_entries: u64,
    pub final_decision_log_digest: Digest32,
    pub completed_at: Timestamp,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeSet, VecDeque};

    const EVENTS: [LifecycleEvent; 6] = [
        LifecycleEvent::Approve,
        LifecycleEvent::Provision,
        LifecycleEvent::Activate,
        LifecycleEvent::Suspend,
        LifecycleEvent::Reactivate,
        LifecycleEvent::Decommission,
    ];

    #[test]
    fn table_rows() {
        assert_eq!(LifecycleState::Active.apply(LifecycleEvent::Suspend), Ok(LifecycleState::Suspended));
        assert_eq!(
            LifecycleState::Decommissioned.apply(LifecycleEvent::Activate),
            Err(LifecycleError::InvalidTransition {
                state: LifecycleState::Decommissioned,
                event: LifecycleEvent::Activate
            })
        );
    }

    #[test]
    fn decommissioned_is_absorbing() {
        for ev in EVENTS {
            assert!(LifecycleState::Decommissioned.apply(ev).is_err());
        }
    }

    // BFS over the explicit 6x6 event matrix reaches every state from Requested.
    #[test]
    fn every_state_reachable_from_requested() {
        let mut seen = BTreeSet::from([LifecycleState::Requested]);
        let mut queue = VecDeque::from([LifecycleState::Requested]);
        while let Some(s) = queue.pop_front() {
            for ev in EVENTS {
                if let Ok(next) = s.apply(ev) {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn drift_over_all_sixteen_masks() {
        let base = ApprovedBaseline {
            policy_version: 3,
            model_id: "m-1".into(),
            prompt_hash: Digest32::of(b"prompt"),
            config_hash: Digest32::of(b"config"),
            approved_at: Timestamp(0),
        };
        for mask in 0u8..16 {
            let mut obs = ObservedConfig::of(&base);
            let mut expected = BTreeSet::new();
            if mask & 1 != 0 {
                obs.policy_version += 1;
                expected.insert(BaselineDimension::PolicyVersion);
            }
            if mask & 2 != 0 {
                obs.model_id.push('x');
                expected.insert(BaselineDimension::ModelId);
            }
            if mask & 4 != 0 {
                obs.prompt_hash = Digest32::of(b"other prompt");
                expected.insert(BaselineDimension::PromptHash);
            }
            if mask & 8 != 0 {
                obs.config_hash = Digest32::of(b"other config");
                expected.insert(BaselineDimension::ConfigHash);
            }
            assert_eq!(drift_dimensions(&base, &obs), expected, "mask {mask:04b}");
        }
    }
}
