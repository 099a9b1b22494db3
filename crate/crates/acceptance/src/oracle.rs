//! Brute-force KPI oracle. Reads payloads as untyped JSON and recomputes every
//! KPI from the formulas, sharing nothing with the metrics engine beyond the
//! event record itself.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;
use ualm_core::audit::AuditEvent;

const DAY_MS: f64 = 86_400_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleKpis {
    pub ownership_coverage: f64,
    pub median_revocation_latency: Option<i64>,
    pub decision_coverage: f64,
    pub orphan_count: u64,
    pub phi_minimization_rate: f64,
    pub control_drift_rate: f64,
    pub incident_rate: f64,
}

#[derive(Default)]
struct Agent {
    state: String,
    owner: Option<String>,
    expiration: Option<i64>,
    scopes: BTreeSet<String>,
    drifting: bool,
    decommissioned_at: Option<i64>,
}

struct Cred {
    agent: String,
    active: bool,
    revoked_at: Option<i64>,
}

fn s(v: &Value) -> String {
    v.as_str().expect("string field").to_owned()
}

fn strings(v: &Value) -> BTreeSet<String> {
    v.as_array().map(|a| a.iter().map(s).collect()).unwrap_or_default()
}

fn touches_phi(request: &Value) -> bool {
    request["resources"].as_array().unwrap().iter().any(|r| r["phi"].as_bool().unwrap())
}

fn categories(request: &Value) -> Vec<String> {
    request["resources"].as_array().unwrap().iter().map(|r| s(&r["category"])).collect()
}

fn out_of_scope(agents: &BTreeMap<String, Agent>, agent: &str, cats: &[String]) -> bool {
    match agents.get(agent) {
        Some(a) => cats.iter().any(|c| !a.scopes.contains(c)),
        None => !cats.is_empty(),
    }
}

fn frac(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// KPIs over `[start, end]` (inclusive), replaying every event up to `end`.
pub fn kpis(events: &[AuditEvent], start: i64, end: i64) -> OracleKpis {
    let mut agents: BTreeMap<String, Agent> = BTreeMap::new();
    let mut creds: BTreeMap<String, Cred> = BTreeMap::new();
    let mut departed: BTreeSet<String> = BTreeSet::new();
    let mut requests: BTreeMap<String, Value> = BTreeMap::new();
    // workflow -> (touches phi, violated scope)
    let mut workflows: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    let mut retired: BTreeMap<String, (i64, Vec<String>)> = BTreeMap::new();
    let (mut decided, mut bypassed, mut incidents) = (0usize, 0usize, 0usize);

    for ev in events {
        let t = ev.timestamp.0;
        if t > end {
            break;
        }
        let inside = t >= start;
        let p: Value = serde_json::from_slice(&ev.payload).expect("payload is json");
        match ev.kind.as_str() {
            "registration" => {
                let a = Agent { state: s(&p["state"]), scopes: strings(&p["data_scopes"]), ..Default::default() };
                agents.insert(s(&p["agent_id"]), a);
            }
            "approval" => {
                let a = agents.get_mut(p["agent_id"].as_str().unwrap()).unwrap();
                a.owner = Some(s(&p["accountable_owner"]));
                a.expiration = p["expiration"].as_i64();
                a.state = "Approved".into();
            }
            "owner_reassigned" => {
                agents.get_mut(p["agent_id"].as_str().unwrap()).unwrap().owner = Some(s(&p["accountable_owner"]));
            }
            "owner_departed" => {
                departed.insert(s(&p["person"]));
            }
            "baseline_approved" | "drift_cleared" => {
                agents.get_mut(p["agent_id"].as_str().unwrap()).unwrap().drifting = false;
            }
            "drift" => {
                agents.get_mut(p["agent_id"].as_str().unwrap()).unwrap().drifting = true;
            }
            "credential_issued" => {
                creds.insert(
                    s(&p["credential_id"]),
                    Cred { agent: s(&p["agent_id"]), active: p["status"] == "active", revoked_at: None },
                );
            }
            "credential_revoked" => {
                for id in p["credential_ids"].as_array().unwrap() {
                    let c = creds.get_mut(id.as_str().unwrap()).unwrap();
                    c.active = false;
                    c.revoked_at = p["revoked_at"].as_i64();
                }
            }
            "transition" => {
                let id = s(&p["agent_id"]);
                let to = s(&p["to"]);
                if to == "Suspended" || to == "Decommissioned" {
                    let held: Vec<String> =
                        creds.iter().filter(|(_, c)| c.active && c.agent == id).map(|(k, _)| k.clone()).collect();
                    if inside && !held.is_empty() {
                        retired.entry(id.clone()).or_insert((t, held));
                    }
                }
                let a = agents.get_mut(&id).unwrap();
                if to == "Decommissioned" {
                    a.decommissioned_at = Some(t);
                    a.drifting = false;
                }
                a.state = to;
            }
            "decision" if inside => {
                decided += 1;
                let req = &p["request"];
                let wf = workflows.entry(s(&req["workflow_id"])).or_default();
                wf.0 |= touches_phi(req);
                if p["disposition"] == "executed" {
                    wf.1 |= out_of_scope(&agents, req["agent_id"].as_str().unwrap(), &categories(req));
                }
                requests.insert(s(&req["request_id"]), req.clone());
            }
            "decision_amendment" if inside => {
                if p["disposition"] == "executed" {
                    if let Some(req) = requests.get(p["amendment"]["request_id"].as_str().unwrap()) {
                        let v = out_of_scope(&agents, req["agent_id"].as_str().unwrap(), &categories(req));
                        workflows.entry(s(&req["workflow_id"])).or_default().1 |= v;
                    }
                }
            }
            "tool_call" if inside => {
                bypassed += 1;
                let req = &p["request"];
                let wf = workflows.entry(s(&req["workflow_id"])).or_default();
                wf.0 |= touches_phi(req);
                wf.1 |= out_of_scope(&agents, req["agent_id"].as_str().unwrap(), &categories(req));
            }
            "memory_read" if inside => {
                if let Some(wf) = p["workflow_id"].as_str() {
                    let returned: Vec<String> = strings(&p["returned_categories"]).into_iter().collect();
                    let v = out_of_scope(&agents, p["agent_id"].as_str().unwrap(), &returned);
                    let w = workflows.entry(wf.to_owned()).or_default();
                    w.0 |= p["phi_returned"].as_u64().unwrap() > 0;
                    w.1 |= v;
                }
            }
            "incident" if inside => incidents += 1,
            _ => {}
        }
    }

    let owned = |a: &Agent| a.owner.as_ref().is_some_and(|o| !departed.contains(o));
    let live: Vec<&Agent> = agents.values().filter(|a| a.state != "Decommissioned").collect();

    let orphan_count = live
        .iter()
        .filter(|a| a.state == "Active" && (!owned(a) || a.expiration.is_none_or(|e| e <= end)))
        .count() as u64;

    let mut latencies: Vec<i64> = retired
        .values()
        .map(|(at, held)| {
            let last = held
                .iter()
                .map(|id| {
                    let c = &creds[id];
                    if c.active {
                        end
                    } else {
                        c.revoked_at.unwrap_or(end)
                    }
                })
                .max()
                .unwrap();
            (last - at).max(0)
        })
        .collect();
    latencies.sort();
    let median_revocation_latency = match latencies.len() {
        0 => None,
        n if n % 2 == 1 => Some(latencies[n / 2]),
        n => Some((latencies[n / 2 - 1] + latencies[n / 2]).div_euclid(2)),
    };

    let phi_flows = workflows.values().filter(|w| w.0).count();
    let clean = workflows.values().filter(|w| w.0 && !w.1).count();
    let pool = agents.values().filter(|a| a.decommissioned_at.is_none_or(|d| d >= start)).count() as f64;
    let agent_days = pool * (end - start) as f64 / DAY_MS;

    OracleKpis {
        ownership_coverage: frac(live.iter().filter(|a| owned(a)).count(), live.len(), 1.0),
        median_revocation_latency,
        decision_coverage: frac(decided, decided + bypassed, 1.0),
        orphan_count,
        phi_minimization_rate: frac(clean, phi_flows, 1.0),
        control_drift_rate: frac(live.iter().filter(|a| a.drifting).count(), live.len(), 0.0),
        incident_rate: if agent_days > 0.0 { incidents as f64 / agent_days } else { 0.0 },
    }
}
