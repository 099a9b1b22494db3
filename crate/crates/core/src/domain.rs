use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Governance domain of a rule, agent or claim. The declaration order is the
/// precedence lattice, highest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainClass {
    PatientSafety,
    Privacy,
    ClinicalOutcome,
    Administrative,
}

impl DomainClass {
    pub const ALL: [DomainClass; 4] = [
        DomainClass::PatientSafety,
        DomainClass::Privacy,
        DomainClass::ClinicalOutcome,
        DomainClass::Administrative,
    ];

    /// Larger is stronger: patient_safety = 3 … administrative = 0.
    pub fn rank(self) -> u8 {
        match self {
            DomainClass::PatientSafety => 3,
            DomainClass::Privacy => 2,
            DomainClass::ClinicalOutcome => 1,
            DomainClass::Administrative => 0,
        }
    }

    pub fn outranks(self, other: DomainClass) -> bool {
        self.rank() > other.rank()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainClass::PatientSafety => "patient_safety",
            DomainClass::Privacy => "privacy",
            DomainClass::ClinicalOutcome => "clinical_outcome",
            DomainClass::Administrative => "administrative",
        }
    }
}

impl fmt::Display for DomainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown domain class `{s}`"))
    }
}

/// Who performed a governance action; recorded on every audit event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Actor {
    System,
    Operator(String),
    Agent(String),
    Trigger(String),
}

impl Actor {
    pub fn operator(id: impl Into<String>) -> Self {
        Actor::Operator(id.into())
    }

    /// Canonical text form written into the audit record.
    pub fn canonical(&self) -> String {
        match self {
            Actor::System => "system".to_owned(),
            Actor::Operator(id) => format!("operator:{id}"),
            Actor::Agent(id) => format!("agent:{id}"),
            Actor::Trigger(id) => format!("trigger:{id}"),
        }
    }

    pub fn parse(s: &str) -> Option<Actor> {
        if s == "system" {
            return Some(Actor::System);
        }
        let (kind, id) = s.split_once(':')?;
        let id = id.to_owned();
        match kind {
            "operator" => Some(Actor::Operator(id)),
            "agent" => Some(Actor::Agent(id)),
            "trigger" => Some(Actor::Trigger(id)),
            _ => None,
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_is_total_and_ordered() {
        for (i, a) in DomainClass::ALL.iter().enumerate() {
            for (j, b) in DomainClass::ALL.iter().enumerate() {
                assert_eq!(a.outranks(*b), i < j);
            }
        }
        assert!(DomainClass::ClinicalOutcome.outranks(DomainClass::Administrative));
        assert!(DomainClass::PatientSafety.outranks(DomainClass::Privacy));
    }

    #[test]
    fn actor_canonical_roundtrip() {
        for a in [Actor::System, Actor::operator("dr.a"), Actor::Agent("X".into()), Actor::Trigger("t:1".into())] {
            assert_eq!(Actor::parse(&a.canonical()), Some(a));
        }
        assert_eq!(Actor::parse("robot:1"), None);
    }
}
