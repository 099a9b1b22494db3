//! Kill-switch triggers: deterministic threshold rules over an agent's
//! telemetry window (decisions, incidents, drift findings, owner changes).

use serde::{Deserialize, Serialize};

use crate::clock::{Millis, Timestamp};
use crate::config::{array_table_lines, line_of_key, parse_toml, ParseError};
use crate::ids::{AgentId, TriggerId};
use crate::policy::Effect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    IncidentThreshold,
    DriftDetected,
    RepeatedDenials,
    OwnerRevoked,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    ToolMisuse,
    PhiExposure,
    UnauthorizedAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillSwitchTrigger {
    pub trigger_id: TriggerId,
    pub kind: TriggerKind,
    /// Number of matching signals needed.
    pub threshold: u32,
    /// Signals must fall within one window of this length; `None` means the
    /// whole supplied telemetry window.
    pub window: Option<Millis>,
    /// Incident triggers only: minimum severity (1–5) counted.
    pub min_severity: Option<u8>,
    pub armed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "signal", rename_all = "snake_case")]
pub enum Signal {
    Decision { effect: Effect },
    Incident { kind: IncidentKind, severity: u8 },
    Drift,
    OwnerRevoked,
    ManualRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub agent_id: AgentId,
    pub at: Timestamp,
    pub signal: Signal,
}

impl KillSwitchTrigger {
    fn counts(&self, signal: &Signal) -> bool {
        match (self.kind, signal) {
            (TriggerKind::RepeatedDenials, Signal::Decision { effect }) => *effect == Effect::Deny,
            (TriggerKind::IncidentThreshold, Signal::Incident { severity, .. }) => {
                *severity >= self.min_severity.unwrap_or(1)
            }
            (TriggerKind::DriftDetected, Signal::Drift) => true,
            (TriggerKind::OwnerRevoked, Signal::OwnerRevoked) => true,
            (TriggerKind::Manual, Signal::ManualRequest) => true,
            _ => false,
        }
    }

    /// Whether `threshold` counted signals for `agent` fit inside one window.
    pub fn is_met(&self, agent: &AgentId, window: &[TelemetryEvent]) -> bool {
        let mut times: Vec<Timestamp> = window
            .iter()
            .filter(|e| e.agent_id == *agent && self.counts(&e.signal))
            .map(|e| e.at)
            .collect();
        let need = self.threshold.max(1) as usize;
        if times.len() < need {
            return false;
        }
        let Some(span) = self.window else { return true };
        times.sort();
        times.windows(need).any(|w| w[need - 1] - w[0] <= span)
    }
}

/// Every armed trigger whose threshold is met, in trigger_id order.
pub fn check_triggers(triggers: &[KillSwitchTrigger], agent: &AgentId, window: &[TelemetryEvent]) -> Vec<KillSwitchTrigger> {
    let mut fired: Vec<KillSwitchTrigger> =
        triggers.iter().filter(|t| t.armed && t.is_met(agent, window)).cloned().collect();
    fired.sort_by(|a, b| a.trigger_id.cmp(&b.trigger_id));
    fired
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerDoc {
    #[serde(default)]
    trigger: Vec<TriggerEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TriggerEntry {
    trigger_id: String,
    kind: TriggerKind,
    #[serde(default = "one")]
    threshold: i64,
    window: Option<String>,
    min_severity: Option<i64>,
    #[serde(default = "yes")]
    armed: bool,
}

fn one() -> i64 {
    1
}

fn yes() -> bool {
    true
}

/// Parses `[[trigger]]` tables; see `docs/formats.md`.
pub fn parse_triggers(src: &str) -> Result<Vec<KillSwitchTrigger>, ParseError> {
    let doc: TriggerDoc = parse_toml(src)?;
    let headers = array_table_lines(src, "trigger");
    let mut out: Vec<KillSwitchTrigger> = Vec::new();
    for (i, t) in doc.trigger.into_iter().enumerate() {
        let start = headers.get(i).copied().unwrap_or(1);
        let at = |field: &str| line_of_key(src, field, start).or(Some(start));
        if t.trigger_id.trim().is_empty() || out.iter().any(|o| o.trigger_id.as_str() == t.trigger_id) {
            return Err(ParseError::new(at("trigger_id"), "trigger_id", "must be non-empty and unique"));
        }
        if t.threshold <= 0 || t.threshold > i64::from(u32::MAX) {
            return Err(ParseError::new(at("threshold"), "threshold", "must be positive"));
        }
        let window = match t.window {
            Some(w) => {
                let ms = Millis::parse(&w).map_err(|m| ParseError::new(at("window"), "window", m))?;
                if ms.0 <= 0 {
                    return Err(ParseError::new(at("window"), "window", "must be positive"));
                }
                Some(ms)
            }
            None => None,
        };
        let min_severity = match t.min_severity {
            Some(s) if (1..=5).contains(&s) => Some(s as u8),
            Some(_) => return Err(ParseError::new(at("min_severity"), "min_severity", "must be 1..=5")),
            None => None,
        };
        out.push(KillSwitchTrigger {
            trigger_id: TriggerId::new(t.trigger_id),
            kind: t.kind,
            threshold: t.threshold as u32,
            window,
            min_severity,
            armed: t.armed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn denials(agent: &str, times_s: &[i64]) -> Vec<TelemetryEvent> {
        times_s
            .iter()
            .map(|s| TelemetryEvent {
                agent_id: agent.into(),
                at: Timestamp(s * 1000),
                signal: Signal::Decision { effect: Effect::Deny },
            })
            .collect()
    }

    fn repeated(n: u32, w: i64) -> KillSwitchTrigger {
        KillSwitchTrigger {
            trigger_id: "denials".into(),
            kind: TriggerKind::RepeatedDenials,
            threshold: n,
            window: Some(Millis::seconds(w)),
            min_severity: None,
            armed: true,
        }
    }

    #[test]
    fn three_denials_in_ten_seconds_fire() {
        let t = [repeated(3, 60)];
        assert_eq!(check_triggers(&t, &"a".into(), &denials("a", &[0, 4, 10])).len(), 1);
        assert!(check_triggers(&t, &"a".into(), &denials("a", &[0, 4])).is_empty());
        // spread over more than the window
        assert!(check_triggers(&t, &"a".into(), &denials("a", &[0, 40, 80, 120])).is_empty());
        // other agents do not count
        assert!(check_triggers(&t, &"b".into(), &denials("a", &[0, 1, 2])).is_empty());
    }

    #[test]
    fn disarmed_never_fires() {
        let mut t = repeated(1, 60);
        t.armed = false;
        assert!(check_triggers(&[t], &"a".into(), &denials("a", &[0, 1, 2])).is_empty());
    }

    #[test]
    fn incident_severity_floor() {
        let t = KillSwitchTrigger {
            trigger_id: "inc".into(),
            kind: TriggerKind::IncidentThreshold,
            threshold: 1,
            window: None,
            min_severity: Some(4),
            armed: true,
        };
        let ev = |sev| TelemetryEvent {
            agent_id: "a".into(),
            at: Timestamp(0),
            signal: Signal::Incident { kind: IncidentKind::PhiExposure, severity: sev },
        };
        assert!(!t.is_met(&"a".into(), &[ev(3)]));
        assert!(t.is_met(&"a".into(), &[ev(3), ev(4)]));
    }

    #[test]
    fn parses_and_validates_trigger_docs() {
        let src = "[[trigger]]\ntrigger_id = \"d\"\nkind = \"repeated_denials\"\nthreshold = 3\nwindow = \"60s\"\n";
        let t = parse_triggers(src).unwrap();
        assert_eq!(t[0].window, Some(Millis::seconds(60)));
        assert!(t[0].armed);
        let bad = src.replace("threshold = 3", "threshold = 0");
        assert_eq!(parse_triggers(&bad).unwrap_err().line, Some(4));
        let bad = src.replace("60s", "0s");
        assert_eq!(parse_triggers(&bad).unwrap_err().field, "window");
    }
}
