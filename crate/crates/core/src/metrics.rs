//! Governance KPIs computed from audit events alone, and the maturity
//! assessor that maps them (plus enabled controls) to levels 1–4.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditEvent;
use crate::clock::{Millis, Timestamp, DAY};
use crate::events::{Payload, PayloadError};
use crate::ids::{AgentId, CredentialId, RequestId, WorkflowId};
use crate::lifecycle::LifecycleState;
use crate::mediation::{Disposition, ToolCallRequest};
use crate::registry::CredentialStatus;
use crate::state::FleetState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    /// From the first to the last event (widened to 1 ms when they coincide).
    pub fn full(events: &[AuditEvent]) -> Option<Window> {
        let start = events.first()?.timestamp;
        let end = events.last()?.timestamp.max(Timestamp(start.0 + 1));
        Some(Window { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn days(&self) -> f64 {
        (self.end - self.start).0 as f64 / DAY.0 as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSnapshot {
    pub window: Window,
    pub ownership_coverage: f64,
    pub median_revocation_latency: Option<Millis>,
    pub decision_coverage: f64,
    pub orphan_count: u64,
    pub phi_minimization_rate: f64,
    pub control_drift_rate: f64,
    /// Incidents per agent-day.
    pub incident_rate: f64,
    pub computed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("window {start:?}..{end:?} is outside the audit log")]
    WindowOutsideLog { start: Timestamp, end: Timestamp },
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("log does not replay: {0}")]
    Replay(String),
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Median in milliseconds; an even count takes the floor of the two middle values' mean.
pub fn median(values: &mut [i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]).div_euclid(2) })
}

#[derive(Default)]
struct WorkflowTally {
    phi: bool,
    violated: bool,
}

/// Computes the seven KPIs over `window` from the event list.
pub fn compute_snapshot(events: &[AuditEvent], window: Window, computed_at: Timestamp) -> Result<KpiSnapshot, MetricsError> {
    let outside = MetricsError::WindowOutsideLog { start: window.start, end: window.end };
    let (Some(first), Some(last)) = (events.first(), events.last()) else { return Err(outside) };
    if window.start >= window.end || window.end < first.timestamp || window.start > last.timestamp {
        return Err(outside);
    }

    let mut state = FleetState::default();
    // Agents retired in the window that held active credentials at that moment.
    let mut retirements: BTreeMap<AgentId, (Timestamp, BTreeSet<CredentialId>)> = BTreeMap::new();
    let mut decommissioned_at: BTreeMap<AgentId, Timestamp> = BTreeMap::new();
    let mut requests: BTreeMap<RequestId, ToolCallRequest> = BTreeMap::new();
    let mut workflows: BTreeMap<WorkflowId, WorkflowTally> = BTreeMap::new();
    let (mut governed, mut ungoverned, mut incidents) = (0u64, 0u64, 0u64);

    for ev in events.iter().take_while(|e| e.timestamp <= window.end) {
        let payload = Payload::decode(ev)?;
        let in_window = window.contains(ev.timestamp);
        let out_of_scope = |state: &FleetState, req: &ToolCallRequest| {
            let scopes = state.registry.agents.get(&req.agent_id).map(|a| &a.data_scopes);
            req.categories().any(|c| scopes.is_none_or(|s| !s.contains(c)))
        };
        match &payload {
            Payload::Transition(t) if matches!(t.to, LifecycleState::Suspended | LifecycleState::Decommissioned) => {
                if t.to == LifecycleState::Decommissioned {
                    decommissioned_at.insert(t.agent_id.clone(), ev.timestamp);
                }
                let active: BTreeSet<CredentialId> = state.registry.active_credentials(&t.agent_id).into_iter().collect();
                if in_window && !active.is_empty() && !retirements.contains_key(&t.agent_id) {
                    retirements.insert(t.agent_id.clone(), (ev.timestamp, active));
                }
            }
            Payload::Decision(d) if in_window => {
                governed += 1;
                requests.insert(d.request.request_id.clone(), d.request.clone());
                let w = workflows.entry(d.request.workflow_id.clone()).or_default();
                w.phi |= d.request.touches_phi();
                w.violated |= d.disposition == Disposition::Executed && out_of_scope(&state, &d.request);
            }
            Payload::DecisionAmendment(a) if in_window && a.disposition == Disposition::Executed => {
                if let Some(req) = requests.get(&a.amendment.request_id) {
                    let v = out_of_scope(&state, req);
                    workflows.entry(req.workflow_id.clone()).or_default().violated |= v;
                }
            }
            Payload::ToolCall(c) if in_window => {
                ungoverned += 1;
                let w = workflows.entry(c.request.workflow_id.clone()).or_default();
                w.phi |= c.request.touches_phi();
                w.violated |= out_of_scope(&state, &c.request);
            }
            Payload::MemoryRead(r) if in_window => {
                if let Some(wf) = &r.workflow_id {
                    let scopes = state.registry.agents.get(&r.agent_id).map(|a| &a.data_scopes);
                    let w = workflows.entry(wf.clone()).or_default();
                    w.phi |= r.phi_returned > 0;
                    w.violated |= r.returned_categories.iter().any(|c| scopes.is_none_or(|s| !s.contains(c)));
                }
            }
            Payload::Incident(_) if in_window => incidents += 1,
            _ => {}
        }
        state.apply(ev, &payload).map_err(MetricsError::Replay)?;
    }

    let live: Vec<_> =
        state.registry.agents.values().filter(|a| a.state != LifecycleState::Decommissioned).collect();
    let owned = live.iter().filter(|a| state.registry.has_active_owner(a)).count() as u64;
    let drifting = live.iter().filter(|a| state.drift.contains_key(&a.agent_id)).count() as u64;
    let orphan_count = live
        .iter()
        .filter(|a| {
            a.state == LifecycleState::Active
                && (!state.registry.has_active_owner(a) || a.expiration.is_none_or(|e| e <= window.end))
        })
        .count() as u64;

    let mut latencies: Vec<i64> = retirements
        .iter()
        .map(|(_, (retired_at, creds))| {
            let done = creds
                .iter()
                .map(|id| match state.registry.credentials.get(id) {
                    Some(c) if c.status == CredentialStatus::Revoked => c.revoked_at.unwrap_or(window.end),
                    _ => window.end,
                })
                .max()
                .unwrap_or(*retired_at);
            (done - *retired_at).0.max(0)
        })
        .collect();

    let phi_workflows = workflows.values().filter(|w| w.phi).count() as u64;
    let clean_phi = workflows.values().filter(|w| w.phi && !w.violated).count() as u64;

    let agent_pool = state
        .registry
        .agents
        .keys()
        .filter(|id| decommissioned_at.get(*id).is_none_or(|t| *t >= window.start))
        .count() as f64;
    let exposure = agent_pool * window.days();
    let incident_rate = if exposure > 0.0 { incidents as f64 / exposure } else { 0.0 };

    Ok(KpiSnapshot {
        window,
        ownership_coverage: ratio(owned, live.len() as u64, 1.0),
        median_revocation_latency: median(&mut latencies).map(Millis),
        decision_coverage: ratio(governed, governed + ungoverned, 1.0),
        orphan_count,
        phi_minimization_rate: ratio(clean_phi, phi_workflows, 1.0),
        control_drift_rate: ratio(drifting, live.len() as u64, 0.0),
        incident_rate,
        computed_at,
    })
}

impl KpiSnapshot {
    /// One KPI per row: `(name, value)`.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("window_start", self.window.start.0.to_string()),
            ("window_end", self.window.end.0.to_string()),
            ("ownership_coverage", self.ownership_coverage.to_string()),
            (
                "median_revocation_latency_ms",
                self.median_revocation_latency.map_or_else(|| "none".to_owned(), |m| m.0.to_string()),
            ),
            ("decision_coverage", self.decision_coverage.to_string()),
            ("orphan_count", self.orphan_count.to_string()),
            ("phi_minimization_rate", self.phi_minimization_rate.to_string()),
            ("control_drift_rate", self.control_drift_rate.to_string()),
            ("incident_rate", self.incident_rate.to_string()),
        ]
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("kpi                            value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k:<30} {v}");
        }
        out
    }
}

/// Control-plane features that the KPIs alone cannot show.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub managed_identity: bool,
    pub policy_enforcement: bool,
    pub shared_context_controls: bool,
    pub conflict_resolution: bool,
}

impl Features {
    pub const ALL: Features = Features { managed_identity: true, policy_enforcement: true, shared_context_controls: true, conflict_resolution: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub decision_coverage_min: f64,
    pub phi_minimization_min: f64,
    pub control_drift_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { decision_coverage_min: 0.95, phi_minimization_min: 0.9, control_drift_max: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub level: u8,
    pub name: String,
    pub measured: String,
    pub required: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaturityAssessment {
    pub level: u8,
    pub evidence: Vec<Criterion>,
    pub assessed_at: Timestamp,
}

pub const LEVEL_NAMES: [&str; 4] = ["Ad-hoc", "Managed", "Integrated", "Optimized"];

pub fn assess_maturity(s: &KpiSnapshot, f: Features, t: Thresholds, assessed_at: Timestamp) -> MaturityAssessment {
    let crit = |level, name: &str, measured: String, required: String, pass| Criterion {
        level,
        name: name.to_owned(),
        measured,
        required,
        pass,
    };
    let flag = |b: bool| if b { "enabled" } else { "disabled" }.to_owned();
    let evidence = vec![
        crit(2, "managed_identity", flag(f.managed_identity), "enabled".into(), f.managed_identity),
        crit(2, "ownership_coverage", s.ownership_coverage.to_string(), "= 1".into(), s.ownership_coverage == 1.0),
        crit(
            2,
            "decision_coverage",
            s.decision_coverage.to_string(),
            format!(">= {}", t.decision_coverage_min),
            s.decision_coverage >= t.decision_coverage_min,
        ),
        crit(3, "policy_enforcement", flag(f.policy_enforcement), "enabled".into(), f.policy_enforcement),
        crit(3, "shared_context_controls", flag(f.shared_context_controls), "enabled".into(), f.shared_context_controls),
        crit(
            3,
            "phi_minimization_rate",
            s.phi_minimization_rate.to_string(),
            format!(">= {}", t.phi_minimization_min),
            s.phi_minimization_rate >= t.phi_minimization_min,
        ),
        crit(4, "conflict_resolution", flag(f.conflict_resolution), "enabled".into(), f.conflict_resolution),
        crit(4, "orphan_count", s.orphan_count.to_string(), "= 0".into(), s.orphan_count == 0),
        crit(
            4,
            "control_drift_rate",
            s.control_drift_rate.to_string(),
            format!("<= {}", t.control_drift_max),
            s.control_drift_rate <= t.control_drift_max,
        ),
    ];
    let mut level = 1;
    for k in 2..=4 {
        if evidence.iter().filter(|c| c.level == k).all(|c| c.pass) {
            level = k;
        } else {
            break;
        }
    }
    MaturityAssessment { level, evidence, assessed_at }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot() -> KpiSnapshot {
        KpiSnapshot {
            window: Window { start: Timestamp(0), end: Timestamp(DAY.0) },
            ownership_coverage: 1.0,
            median_revocation_latency: Some(Millis(0)),
            decision_coverage: 1.0,
            orphan_count: 0,
            phi_minimization_rate: 1.0,
            control_drift_rate: 0.0,
            incident_rate: 0.0,
            computed_at: Timestamp(DAY.0),
        }
    }

    #[test]
    fn median_definition() {
        let m = |v: &[i64]| median(&mut v.to_vec());
        assert_eq!(m(&[]), None);
        assert_eq!(m(&[11 * 60_000, 2 * 60_000, 5 * 60_000]), Some(5 * 60_000));
        assert_eq!(m(&[1, 4]), Some(2));
    }

    #[test]
    fn floor_and_ceiling() {
        let none = assess_maturity(&snapshot(), Features::default(), Thresholds::default(), Timestamp(0));
        assert_eq!(none.level, 1);
        let managed = Features { managed_identity: true, ..Features::default() };
        assert_eq!(assess_maturity(&snapshot(), managed, Thresholds::default(), Timestamp(0)).level, 2);
        let mut bad = snapshot();
        bad.ownership_coverage = 0.5;
        assert_eq!(assess_maturity(&bad, Features::ALL, Thresholds::default(), Timestamp(0)).level, 1);
        assert_eq!(assess_maturity(&snapshot(), Features::ALL, Thresholds::default(), Timestamp(0)).level, 4);
    }

    #[test]
    fn level_needs_every_lower_level() {
        let mut s = snapshot();
        s.decision_coverage = 0.5;
        let a = assess_maturity(&s, Features::ALL, Thresholds::default(), Timestamp(0));
        assert_eq!(a.level, 1);
        assert!(a.evidence.iter().filter(|c| c.level == 4).all(|c| c.pass));
    }

    #[test]
    fn window_checks() {
        assert!(matches!(
            compute_snapshot(&[], Window { start: Timestamp(0), end: Timestamp(1) }, Timestamp(0)),
            Err(MetricsError::WindowOutsideLog { .. })
        ));
    }
}
