//! Policy-as-code: versioned rule documents and deterministic evaluation with
//! domain-class precedence.
//!
//! Evaluation of a request against a version:
//!
//! 1. collect the rules whose subject, action and resource matchers match and
//!    whose guard conditions hold (require_human rules with a non-empty
//!    condition set that is fully present are *discharged* instead);
//! 2. keep only rules of the strongest domain class present
//!    (patient_safety > privacy > clinical_outcome > administrative);
//! 3. within that class deny > require_human > allow;
//! 4. with nothing left, deny with `default_deny`.
//!
//! Every elimination is written to the precedence trace, canonicalized by
//! rule id so that the document order never shows through.

mod matcher;
pub mod triggers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::config::{array_table_lines, line_of_key, parse_toml, ParseError};
use crate::digest::Digest32;
use crate::domain::DomainClass;
use crate::mediation::ToolCallRequest;
use crate::registry::AgentRecord;

pub use matcher::{Pattern, ResourceMatcher, SubjectPattern};

pub const DEFAULT_DENY: &str = "default_deny";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Allow,
    Deny,
    RequireHuman,
}

impl Effect {
    /// Within-class strength: deny > require_human > allow.
    pub fn strength(self) -> u8 {
        match self {
            Effect::Deny => 2,
            Effect::RequireHuman => 1,
            Effect::Allow => 0,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Effect::Allow => "allow",
            Effect::Deny => "deny",
            Effect::RequireHuman => "require_human",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub domain_class: DomainClass,
    pub subject: Vec<SubjectPattern>,
    pub action: Vec<Pattern>,
    pub resource: ResourceMatcher,
    pub effect: Effect,
    pub conditions: BTreeSet<String>,
}

impl PolicyRule {
    fn subject_matches(&self, agent: &AgentRecord) -> bool {
        self.subject.iter().any(|p| p.matches(agent))
    }

    fn action_matches(&self, tool: &str) -> bool {
        self.action.iter().any(|p| p.matches(tool))
    }

    /// Subject, action and resource matchers all hold.
    pub fn matches(&self, request: &ToolCallRequest, agent: &AgentRecord) -> bool {
        self.subject_matches(agent) && self.action_matches(&request.tool) && self.resource.matches(&request.resources)
    }

    fn conditions_hold(&self, request: &ToolCallRequest) -> bool {
        self.conditions.is_subset(&request.conditions)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyVersion {
    pub version: u64,
    pub rules: Vec<PolicyRule>,
    pub loaded_at: Timestamp,
    pub source_digest: Digest32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedRule {
    pub rule_id: String,
    pub domain_class: DomainClass,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum TraceStep {
    Matched { rules: Vec<String> },
    Discharged { rules: Vec<String> },
    ClassFilter { kept: DomainClass, eliminated: Vec<String> },
    EffectFilter { kept: Effect, eliminated: Vec<String> },
    Winner { rule_id: String },
    DefaultDeny,
    Precheck { reason: String },
}

/// The outcome of evaluating one request against one policy version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub effect: Effect,
    pub matched_rules: Vec<MatchedRule>,
    pub winning_rule: String,
    pub policy_version: u64,
    pub precedence_trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("duplicate rule_id `{rule_id}` (line {line:?})")]
    DuplicateRuleId { rule_id: String, line: Option<usize> },
    #[error("unknown domain class `{class}` (line {line:?})")]
    UnknownDomainClass { class: String, line: Option<usize> },
    #[error("unknown policy version {0}")]
    UnknownPolicyVersion(u64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    #[serde(default)]
    rule: Vec<RuleDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    rule_id: String,
    class: String,
    subject: Vec<String>,
    action: Vec<String>,
    resource: Vec<String>,
    #[serde(default)]
    phi: Option<bool>,
    effect: Effect,
    #[serde(default)]
    conditions: Vec<String>,
}

/// Parses a policy document into its rules (no version assigned yet).
pub fn parse_rules(src: &str) -> Result<Vec<PolicyRule>, PolicyError> {
    let doc: PolicyDoc = parse_toml(src)?;
    let headers = array_table_lines(src, "rule");
    let mut seen = BTreeSet::new();
    let mut rules = Vec::with_capacity(doc.rule.len());
    for (i, r) in doc.rule.into_iter().enumerate() {
        let start = headers.get(i).copied().unwrap_or(1);
        let at = |field: &str| line_of_key(src, field, start).or(Some(start));
        if r.rule_id.trim().is_empty() {
            return Err(ParseError::new(at("rule_id"), "rule_id", "must be non-empty").into());
        }
        if !seen.insert(r.rule_id.clone()) {
            return Err(PolicyError::DuplicateRuleId { rule_id: r.rule_id, line: at("rule_id") });
        }
        let domain_class = r
            .class
            .parse::<DomainClass>()
            .map_err(|_| PolicyError::UnknownDomainClass { class: r.class.clone(), line: at("class") })?;
        let subject = parse_list(&r.subject, "subject", at("subject"), |s| s.parse::<SubjectPattern>())?;
        let action = parse_list(&r.action, "action", at("action"), |s| s.parse::<Pattern>())?;
        let categories = parse_list(&r.resource, "resource", at("resource"), |s| s.parse::<Pattern>())?;
        let conditions: BTreeSet<String> = r.conditions.into_iter().collect();
        if conditions.iter().any(|c| c.trim().is_empty()) {
            return Err(ParseError::new(at("conditions"), "conditions", "empty condition tag").into());
        }
        rules.push(PolicyRule {
            rule_id: r.rule_id,
            domain_class,
            subject,
            action,
            resource: ResourceMatcher { categories, phi: r.phi },
            effect: r.effect,
            conditions,
        });
    }
    Ok(rules)
}

fn parse_list<T>(
    items: &[String],
    field: &str,
    line: Option<usize>,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Vec<T>, ParseError> {
    if items.is_empty() {
        return Err(ParseError::new(line, field, "matcher must be non-empty"));
    }
    items.iter().map(|s| parse(s).map_err(|m| ParseError::new(line, field, m))).collect()
}

impl PolicyVersion {
    pub fn compile(version: u64, src: &str, loaded_at: Timestamp) -> Result<Self, PolicyError> {
        Ok(Self { version, rules: parse_rules(src)?, loaded_at, source_digest: Digest32::of(src.as_bytes()) })
    }

    pub fn evaluate(&self, request: &ToolCallRequest, agent: &AgentRecord) -> Verdict {
        evaluate_rules(&self.rules, self.version, request, agent)
    }
}

fn sorted_ids<'a>(rules: impl IntoIterator<Item = &'a PolicyRule>) -> Vec<String> {
    let mut ids: Vec<String> = rules.into_iter().map(|r| r.rule_id.clone()).collect();
    ids.sort();
    ids
}

pub fn evaluate_rules(rules: &[PolicyRule], version: u64, request: &ToolCallRequest, agent: &AgentRecord) -> Verdict {
    let mut trace = Vec::new();
    let mut candidates: Vec<&PolicyRule> = rules
        .iter()
        .filter(|r| r.matches(request, agent))
        .filter(|r| r.effect == Effect::RequireHuman || r.conditions_hold(request))
        .collect();
    candidates.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));

    let matched_rules = candidates
        .iter()
        .map(|r| MatchedRule { rule_id: r.rule_id.clone(), domain_class: r.domain_class, effect: r.effect })
        .collect();
    trace.push(TraceStep::Matched { rules: sorted_ids(candidates.iter().copied()) });

    let (discharged, live): (Vec<&PolicyRule>, Vec<&PolicyRule>) = candidates
        .into_iter()
        .partition(|r| r.effect == Effect::RequireHuman && !r.conditions.is_empty() && r.conditions_hold(request));
    if !discharged.is_empty() {
        trace.push(TraceStep::Discharged { rules: sorted_ids(discharged) });
    }

    let Some(top_class) = live.iter().map(|r| r.domain_class).max_by_key(|c| c.rank()) else {
        trace.push(TraceStep::DefaultDeny);
        return Verdict {
            effect: Effect::Deny,
            matched_rules,
            winning_rule: DEFAULT_DENY.to_owned(),
            policy_version: version,
            precedence_trace: trace,
        };
    };
    let (kept, dropped): (Vec<&PolicyRule>, Vec<&PolicyRule>) =
        live.into_iter().partition(|r| r.domain_class == top_class);
    trace.push(TraceStep::ClassFilter { kept: top_class, eliminated: sorted_ids(dropped) });

    let top_effect = kept.iter().map(|r| r.effect).max_by_key(|e| e.strength()).expect("non-empty");
    let (winners, dropped): (Vec<&PolicyRule>, Vec<&PolicyRule>) =
        kept.into_iter().partition(|r| r.effect == top_effect);
    trace.push(TraceStep::EffectFilter { kept: top_effect, eliminated: sorted_ids(dropped) });

    let winning_rule = sorted_ids(winners).swap_remove(0);
    trace.push(TraceStep::Winner { rule_id: winning_rule.clone() });
    Verdict { effect: top_effect, matched_rules, winning_rule, policy_version: version, precedence_trace: trace }
}

/// Every loaded version, oldest first. Versions are immutable once stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyStore {
    versions: BTreeMap<u64, Arc<PolicyVersion>>,
}

impl PolicyStore {
    pub fn next_version(&self) -> u64 {
        self.latest().map_or(1, |v| v.version + 1)
    }

    pub(crate) fn insert(&mut self, v: PolicyVersion) {
        self.versions.insert(v.version, Arc::new(v));
    }

    pub fn get(&self, version: u64) -> Result<Arc<PolicyVersion>, PolicyError> {
        self.versions.get(&version).cloned().ok_or(PolicyError::UnknownPolicyVersion(version))
    }

    pub fn latest(&self) -> Option<Arc<PolicyVersion>> {
        self.versions.values().next_back().cloned()
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn evaluate(&self, request: &ToolCallRequest, agent: &AgentRecord, version: u64) -> Result<Verdict, PolicyError> {
        Ok(self.get(version)?.evaluate(request, agent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{AgentId, CredentialId, RequestId, WorkflowId};
    use crate::lifecycle::LifecycleState;
    use crate::mediation::ResourceRef;

    fn agent() -> AgentRecord {
        AgentRecord {
            agent_id: AgentId::from("A1"),
            persona: "lab-router".into(),
            accountable_owner: None,
            liability_owner: None,
            domain_class: DomainClass::Administrative,
            scope_of_practice: ["lab_ordering".to_string()].into(),
            allowed_tools: BTreeSet::new(),
            data_scopes: BTreeSet::new(),
            baseline: None,
            state: LifecycleState::Active,
            expiration: None,
            registered_at: Timestamp(0),
        }
    }

    fn request(tool: &str, resources: &[(&str, bool)], conditions: &[&str]) -> ToolCallRequest {
        ToolCallRequest {
            request_id: RequestId::from("r"),
            agent_id: AgentId::from("A1"),
            credential_id: CredentialId::from("c"),
            tool: tool.into(),
            resources: resources.iter().map(|(c, p)| ResourceRef { category: c.to_string(), phi: *p }).collect(),
            workflow_id: WorkflowId::from("w"),
            intent: String::new(),
            conditions: conditions.iter().map(|s| s.to_string()).collect(),
            submitted_at: Timestamp(0),
        }
    }

    const DOC: &str = r#"
[[rule]]
rule_id = "adm-cheap-lab"
class = "administrative"
subject = ["*"]
action = ["use_cheap_lab"]
resource = ["*"]
effect = "allow"

[[rule]]
rule_id = "ps-lab-block"
class = "patient_safety"
subject = ["capability:lab_*"]
action = ["use_cheap_lab"]
resource = ["*"]
effect = "deny"

[[rule]]
rule_id = "co-med-human"
class = "clinical_outcome"
subject = ["*"]
action = ["order_medication"]
resource = ["medications"]
phi = true
effect = "require_human"
conditions = ["human_approval_present"]

[[rule]]
rule_id = "co-med-allow"
class = "clinical_outcome"
subject = ["*"]
action = ["order_medication"]
resource = ["*"]
effect = "allow"
"#;

    #[test]
    fn safety_deny_beats_administrative_allow() {
        let v = PolicyVersion::compile(1, DOC, Timestamp(0)).unwrap();
        let verdict = v.evaluate(&request("use_cheap_lab", &[], &[]), &agent());
        assert_eq!(verdict.effect, Effect::Deny);
        assert_eq!(verdict.winning_rule, "ps-lab-block");
        assert!(verdict.precedence_trace.contains(&TraceStep::ClassFilter {
            kept: DomainClass::PatientSafety,
            eliminated: vec!["adm-cheap-lab".into()]
        }));
    }

    #[test]
    fn medication_change_requires_human_until_approved() {
        let v = PolicyVersion::compile(1, DOC, Timestamp(0)).unwrap();
        let blocked = v.evaluate(&request("order_medication", &[("medications", true)], &[]), &agent());
        assert_eq!(blocked.effect, Effect::RequireHuman);
        assert_eq!(blocked.winning_rule, "co-med-human");
        let approved = v.evaluate(
            &request("order_medication", &[("medications", true)], &["human_approval_present"]),
            &agent(),
        );
        assert_eq!(approved.effect, Effect::Allow);
        assert_eq!(approved.precedence_trace[1], TraceStep::Discharged { rules: vec!["co-med-human".into()] });
    }

    #[test]
    fn no_match_is_default_deny() {
        let v = PolicyVersion::compile(1, DOC, Timestamp(0)).unwrap();
        let verdict = v.evaluate(&request("launch_rocket", &[], &[]), &agent());
        assert_eq!(verdict.effect, Effect::Deny);
        assert_eq!(verdict.winning_rule, DEFAULT_DENY);
        assert_eq!(verdict.precedence_trace.last(), Some(&TraceStep::DefaultDeny));
    }

    #[test]
    fn single_match_survives() {
        let v = PolicyVersion::compile(1, DOC, Timestamp(0)).unwrap();
        let verdict = v.evaluate(&request("order_medication", &[("labs", false)], &[]), &agent());
        assert_eq!(verdict.effect, Effect::Allow);
        assert_eq!(verdict.winning_rule, "co-med-allow");
        assert_eq!(verdict.matched_rules.len(), 1);
    }

    #[test]
    fn loader_errors() {
        let dup = "[[rule]]\nrule_id = \"r1\"\nclass = \"privacy\"\nsubject=[\"*\"]\naction=[\"*\"]\nresource=[\"*\"]\neffect=\"allow\"\n\n[[rule]]\nrule_id = \"r1\"\nclass = \"privacy\"\nsubject=[\"*\"]\naction=[\"*\"]\nresource=[\"*\"]\neffect=\"deny\"\n";
        assert_eq!(
            parse_rules(dup),
            Err(PolicyError::DuplicateRuleId { rule_id: "r1".into(), line: Some(10) })
        );
        let bad_class = dup.replacen("privacy", "finance", 1);
        assert_eq!(
            parse_rules(&bad_class),
            Err(PolicyError::UnknownDomainClass { class: "finance".into(), line: Some(3) })
        );
        let bad_matcher = dup.replacen("action=[\"*\"]", "action=[\"a*b\"]", 1);
        match parse_rules(&bad_matcher) {
            Err(PolicyError::Parse(e)) => {
                assert_eq!(e.field, "action");
                assert_eq!(e.line, Some(5));
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty_matcher = dup.replacen("subject=[\"*\"]", "subject=[]", 1);
        assert!(matches!(parse_rules(&empty_matcher), Err(PolicyError::Parse(_))));
        assert!(matches!(parse_rules("[[rule]]\nrule_id = 3\n"), Err(PolicyError::Parse(_))));
    }

    #[test]
    fn identical_documents_share_digest() {
        let a = PolicyVersion::compile(1, DOC, Timestamp(0)).unwrap();
        let b = PolicyVersion::compile(2, DOC, Timestamp(5)).unwrap();
        assert_eq!(a.source_digest, b.source_digest);
        let mut store = PolicyStore::default();
        assert_eq!(store.next_version(), 1);
        store.insert(a);
        store.insert(b);
        assert_eq!(store.next_version(), 3);
        assert_eq!(store.get(9), Err(PolicyError::UnknownPolicyVersion(9)));
    }
}
