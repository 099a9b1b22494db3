use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mediation::ResourceRef;
use crate::registry::AgentRecord;

/// Exact text, or a prefix followed by a single trailing `*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern {
    prefix: String,
    wildcard: bool,
}

impl Pattern {
    pub fn matches(&self, value: &str) -> bool {
        if self.wildcard {
            value.starts_with(&self.prefix)
        } else {
            value == self.prefix
        }
    }

    pub fn is_universal(&self) -> bool {
        self.wildcard && self.prefix.is_empty()
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty pattern".into());
        }
        let (prefix, wildcard) = match s.strip_suffix('*') {
            Some(p) => (p, true),
            None => (s, false),
        };
        if prefix.contains('*') {
            return Err(format!("pattern `{s}`: only a single trailing `*` is supported"));
        }
        Ok(Pattern { prefix: prefix.to_owned(), wildcard })
    }
}

impl TryFrom<String> for Pattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.to_string()
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.prefix, if self.wildcard { "*" } else { "" })
    }
}

/// `*`, `agent:<pattern>`, `persona:<pattern>` or `capability:<pattern>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SubjectPattern {
    Any,
    Agent(Pattern),
    Persona(Pattern),
    Capability(Pattern),
}

impl SubjectPattern {
    pub fn matches(&self, agent: &AgentRecord) -> bool {
        match self {
            SubjectPattern::Any => true,
            SubjectPattern::Agent(p) => p.matches(agent.agent_id.as_str()),
            SubjectPattern::Persona(p) => p.matches(&agent.persona),
            SubjectPattern::Capability(p) => agent.scope_of_practice.iter().any(|c| p.matches(c)),
        }
    }
}

impl FromStr for SubjectPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "*" {
            return Ok(SubjectPattern::Any);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("subject `{s}` must be `*` or agent:/persona:/capability: prefixed"))?;
        let p = rest.parse()?;
        match kind {
            "agent" => Ok(SubjectPattern::Agent(p)),
            "persona" => Ok(SubjectPattern::Persona(p)),
            "capability" => Ok(SubjectPattern::Capability(p)),
            other => Err(format!("unknown subject kind `{other}`")),
        }
    }
}

impl TryFrom<String> for SubjectPattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SubjectPattern> for String {
    fn from(p: SubjectPattern) -> String {
        p.to_string()
    }
}

impl fmt::Display for SubjectPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubjectPattern::Any => f.write_str("*"),
            SubjectPattern::Agent(p) => write!(f, "agent:{p}"),
            SubjectPattern::Persona(p) => write!(f, "persona:{p}"),
            SubjectPattern::Capability(p) => write!(f, "capability:{p}"),
        }
    }
}

/// Data-category patterns plus an optional PHI constraint. Matches when any
/// requested resource satisfies both; the bare universal matcher also matches
/// requests that touch no data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceMatcher {
    pub categories: Vec<Pattern>,
    pub phi: Option<bool>,
}

impl ResourceMatcher {
    pub fn matches(&self, resources: &BTreeSet<ResourceRef>) -> bool {
        if self.phi.is_none() && self.categories.iter().any(Pattern::is_universal) {
            return true;
        }
        resources.iter().any(|r| {
            self.phi.is_none_or(|phi| phi == r.phi) && self.categories.iter().any(|p| p.matches(&r.category))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_wildcard_only() {
        let p: Pattern = "med*".parse().unwrap();
        assert!(p.matches("medications"));
        assert!(!p.matches("vitals"));
        let exact: Pattern = "med".parse().unwrap();
        assert!(!exact.matches("medications"));
        assert!("m*d".parse::<Pattern>().is_err());
        assert!("**".parse::<Pattern>().is_err());
        assert!("".parse::<Pattern>().is_err());
    }

    #[test]
    fn subject_forms() {
        assert_eq!("*".parse::<SubjectPattern>().unwrap(), SubjectPattern::Any);
        assert!("persona:sepsis-*".parse::<SubjectPattern>().is_ok());
        assert!("sepsis".parse::<SubjectPattern>().is_err());
        assert!("team:x".parse::<SubjectPattern>().is_err());
        let s = "capability:vitals_*".parse::<SubjectPattern>().unwrap();
        assert_eq!(s.to_string(), "capability:vitals_*");
    }

    #[test]
    fn resource_phi_constraint() {
        let m = ResourceMatcher { categories: vec!["*".parse().unwrap()], phi: Some(true) };
        let phi = BTreeSet::from([ResourceRef { category: "labs".into(), phi: true }]);
        let plain = BTreeSet::from([ResourceRef { category: "labs".into(), phi: false }]);
        assert!(m.matches(&phi));
        assert!(!m.matches(&plain));
        assert!(!m.matches(&BTreeSet::new()));
        let any = ResourceMatcher { categories: vec!["*".parse().unwrap()], phi: None };
        assert!(any.matches(&BTreeSet::new()));
    }
}
