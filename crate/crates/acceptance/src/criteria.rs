//! One check per acceptance criterion. Each returns a one-line summary of what
//! it measured, or the first violation found.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ualm_core::audit::bundle::{verify_bundle, BundleFilter};
use ualm_core::audit::{codec, verify_bytes, AuditEvent, ChainStatus, EventKind};
use ualm_core::clock::{Millis, Timestamp};
use ualm_core::domain::DomainClass;
use ualm_core::ids::{AgentId, CaseId, EntryId, RequestId, WorkflowId};
use ualm_core::lifecycle::{LifecycleEvent, LifecycleState};
use ualm_core::mediation::{resolve_case, ConflictCase, ConflictClaim, ConflictStatus, Disposition, ResourceRef, ToolCallRequest};
use ualm_core::memory::{MemoryDraft, MemoryQuery};
use ualm_core::metrics::{assess_maturity, Features, KpiSnapshot, Thresholds, Window};
use ualm_core::policy::{Effect, PolicyVersion};
use ualm_core::registry::AgentRecord;
use ualm_core::simulator::{self, run_scenario, ScenarioConfig, SIM_OPERATOR};
use ualm_core::ControlPlane;
use ualm_service::client::Client;

use crate::fixture::{phi_category, Fleet, CATEGORIES, ROLES};
use crate::oracle;

pub type Check = Result<String, String>;
pub type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

pub const CRITERIA: [Criterion; 9] = [
    ("decision coverage", decision_coverage),
    ("decommission completeness", decommission_completeness),
    ("precedence dominance", precedence_dominance),
    ("lifecycle safety", lifecycle_safety),
    ("audit chain", audit_chain),
    ("kpi oracle equivalence", kpi_oracle_equivalence),
    ("memory bounds", memory_bounds),
    ("determinism", determinism),
    ("maturity monotonicity", maturity_monotonicity),
];

fn sim(r: Result<(simulator::ScenarioResult, Arc<ControlPlane>), simulator::SimError>) -> Result<(simulator::ScenarioResult, Arc<ControlPlane>), String> {
    r.map_err(|e| format!("scenario failed: {e}"))
}

fn count(events: &[AuditEvent], kind: EventKind) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

pub fn decision_coverage() -> Check {
    let config = ScenarioConfig { seed: 1, max_tool_calls: Some(1000), ..Default::default() };
    let (run, plane) = sim(run_scenario(&config))?;
    let events = plane.events();
    let decisions = count(&events, EventKind::Decision);
    ensure!(run.tool_calls == 1000, "governed run made {} tool calls, expected 1000", run.tool_calls);
    ensure!(decisions == 1000, "governed run recorded {decisions} decisions for 1000 tool calls");
    ensure!(count(&events, EventKind::ToolCall) == 0, "governed run recorded ungoverned calls");
    ensure!(run.snapshot.decision_coverage == 1.0, "governed decision_coverage = {}", run.snapshot.decision_coverage);

    let baseline = ScenarioConfig { governed: false, ..config };
    let (open, plane) = sim(run_scenario(&baseline))?;
    let calls = count(&plane.events(), EventKind::ToolCall);
    ensure!(open.snapshot.decision_coverage < 1.0, "ungoverned decision_coverage = {}", open.snapshot.decision_coverage);
    Ok(format!(
        "governed: 1000 calls, {decisions} decisions, coverage {}; ungoverned: {calls} calls, coverage {}",
        run.snapshot.decision_coverage, open.snapshot.decision_coverage
    ))
}

pub fn decommission_completeness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fleet = Fleet::new(2);
    let mut agents = Vec::new();
    for i in 0..100 {
        let role = &ROLES[rng.random_range(0..ROLES.len())];
        let (id, cred) = fleet.onboard(role);
        for _ in 0..rng.random_range(0..3) {
            fleet.issue(role, &id);
        }
        for _ in 0..rng.random_range(0..5) {
            let category = role.scopes[rng.random_range(0..2)];
            let draft = MemoryDraft {
                shard_key: Some(format!("patient-{}", rng.random_range(0..6))),
                data_category: category.into(),
                phi: phi_category(category),
                payload: vec![i as u8; 8],
                ttl: Millis::days(rng.random_range(1..30)),
            };
            fleet.plane.write_memory(&id, draft).map_err(|e| format!("memory write: {e}"))?;
        }
        if role.persona == "med" && rng.random_bool(0.5) {
            // Leaves a request waiting for a human.
            let req = request(&id, &cred, "propose_med_change", "medications", i, fleet.now());
            let out = fleet.plane.mediate(req).map_err(|e| e.to_string())?;
            ensure!(out.disposition == Disposition::PendingHuman, "expected a pending request, got {:?}", out.disposition);
        }
        if rng.random_bool(0.3) {
            fleet.plane.transition(&fleet.op, &id, LifecycleEvent::Suspend, "review").map_err(|e| e.to_string())?;
        }
        fleet.advance(Millis(rng.random_range(1..3_600_000)));
        agents.push(id);
    }
    agents.shuffle(&mut rng);
    for id in &agents {
        fleet.advance(Millis(rng.random_range(0..600_000)));
        fleet.plane.decommission(&fleet.op, id, "retired").map_err(|e| format!("decommission {id}: {e}"))?;
    }

    let events = fleet.plane.events();
    let state = fleet.plane.fleet_state();
    let mut reports: BTreeMap<String, usize> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.kind == EventKind::Termination) {
        let v: serde_json::Value = serde_json::from_slice(&ev.payload).map_err(|e| e.to_string())?;
        *reports.entry(v["agent_id"].as_str().unwrap_or_default().to_owned()).or_default() += 1;
    }
    for id in &agents {
        let active = fleet.plane.credentials_of(id).iter().filter(|c| c.status == ualm_core::registry::CredentialStatus::Active).count();
        ensure!(active == 0, "{id} keeps {active} active credentials");
        let unfrozen = state.memory.unfrozen_of(id).len();
        ensure!(unfrozen == 0, "{id} keeps {unfrozen} unfrozen entries");
        ensure!(reports.get(id.as_str()) == Some(&1), "{id} has {:?} termination reports", reports.get(id.as_str()));
        ensure!(fleet.plane.termination_report(id).is_some(), "{id} has no stored termination report");
        ensure!(fleet.plane.agent(id).map(|a| a.state) == Ok(LifecycleState::Decommissioned), "{id} not decommissioned");
    }
    ensure!(fleet.plane.pending_requests().is_empty(), "pending requests survive decommissioning");
    let snap = fleet.plane.compute_snapshot(None).map_err(|e| e.to_string())?;
    ensure!(snap.median_revocation_latency == Some(Millis(0)), "median revocation latency {:?}", snap.median_revocation_latency);
    Ok(format!(
        "100 decommissions: 0 active credentials, 0 unfrozen entries, {} reports; median revocation latency 0 ms",
        reports.values().sum::<usize>()
    ))
}

pub fn request(agent: &AgentId, cred: &ualm_core::ids::CredentialId, tool: &str, category: &str, n: usize, at: Timestamp) -> ToolCallRequest {
    ToolCallRequest {
        request_id: RequestId::from(format!("req-{n}")),
        agent_id: agent.clone(),
        credential_id: cred.clone(),
        tool: tool.into(),
        resources: BTreeSet::from([ResourceRef { category: category.into(), phi: phi_category(category) }]),
        workflow_id: WorkflowId::from(format!("wf-{n}")),
        intent: String::new(),
        conditions: BTreeSet::new(),
        submitted_at: at,
    }
}

/// Precedence ranks, highest first, written out independently of the library.
const CLASS_ORDER: [(DomainClass, &str); 4] = [
    (DomainClass::PatientSafety, "patient_safety"),
    (DomainClass::Privacy, "privacy"),
    (DomainClass::ClinicalOutcome, "clinical_outcome"),
    (DomainClass::Administrative, "administrative"),
];
const EFFECTS: [(Effect, &str, u8); 3] = [(Effect::Allow, "allow", 0), (Effect::RequireHuman, "require_human", 1), (Effect::Deny, "deny", 2)];

fn probe_agent() -> AgentRecord {
    AgentRecord {
        agent_id: AgentId::from("probe"),
        persona: "probe".into(),
        accountable_owner: None,
        liability_owner: None,
        domain_class: DomainClass::Administrative,
        scope_of_practice: BTreeSet::from(["claims".to_owned()]),
        allowed_tools: BTreeSet::from(["act".to_owned()]),
        data_scopes: BTreeSet::from(["billing".to_owned()]),
        baseline: None,
        state: LifecycleState::Active,
        expiration: None,
        registered_at: Timestamp(0),
    }
}

/// (class index, effect index) per rule.
fn policy_doc(rules: &[(usize, usize, String)]) -> String {
    rules
        .iter()
        .map(|(c, e, id)| {
            format!(
                "[[rule]]\nrule_id = \"{id}\"\nclass = \"{}\"\nsubject = [\"*\"]\naction = [\"act\"]\nresource = [\"*\"]\neffect = \"{}\"\n\n",
                CLASS_ORDER[*c].1, EFFECTS[*e].1
            )
        })
        .collect()
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn expected_effect(rules: &[(usize, usize, String)]) -> (Effect, String) {
    let top = rules.iter().map(|r| r.0).min().expect("non-empty");
    let best = rules.iter().filter(|r| r.0 == top).map(|r| EFFECTS[r.1].2).max().expect("non-empty");
    let mut ids: Vec<&String> = rules.iter().filter(|r| r.0 == top && EFFECTS[r.1].2 == best).map(|r| &r.2).collect();
    ids.sort();
    (EFFECTS.iter().find(|e| e.2 == best).expect("known").0, ids[0].clone())
}

pub fn precedence_dominance() -> Check {
    let agent = probe_agent();
    let req = ToolCallRequest {
        request_id: RequestId::from("r"),
        agent_id: agent.agent_id.clone(),
        credential_id: "c".into(),
        tool: "act".into(),
        resources: BTreeSet::from([ResourceRef { category: "billing".into(), phi: false }]),
        workflow_id: WorkflowId::from("w"),
        intent: String::new(),
        conditions: BTreeSet::new(),
        submitted_at: Timestamp(0),
    };
    let mut rule_sets: Vec<Vec<(usize, usize, String)>> = Vec::new();
    // One rule per class for every subset of classes and every effect assignment.
    for mask in 1u32..16 {
        let classes: Vec<usize> = (0..4).filter(|c| mask & (1 << c) != 0).collect();
        for code in 0..3usize.pow(classes.len() as u32) {
            let mut c = code;
            let rules = classes
                .iter()
                .map(|&cls| {
                    let e = c % 3;
                    c /= 3;
                    (cls, e, format!("r-{cls}-{e}"))
                })
                .collect();
            rule_sets.push(rules);
        }
    }
    // Two rules in the same class.
    for cls in 0..4 {
        for a in 0..3 {
            for b in 0..3 {
                rule_sets.push(vec![(cls, a, format!("a-{cls}-{a}")), (cls, b, format!("b-{cls}-{b}"))]);
            }
        }
    }
    let mut evaluations = 0;
    let mut safety_over_lower = 0;
    for rules in &rule_sets {
        let (want, winner) = expected_effect(rules);
        for order in permutations(rules) {
            let v = PolicyVersion::compile(1, &policy_doc(&order), Timestamp(0)).map_err(|e| e.to_string())?;
            let got = v.evaluate(&req, &agent);
            evaluations += 1;
            ensure!(got.effect == want && got.winning_rule == winner, "rules {order:?}: got {:?} via {}, expected {want:?} via {winner}", got.effect, got.winning_rule);
            if order.iter().any(|r| r.0 == 0 && r.1 == 2) && order.iter().any(|r| r.0 > 0 && r.1 == 0) {
                ensure!(got.effect == Effect::Deny, "patient_safety deny lost to a lower class allow in {order:?}");
                safety_over_lower += 1;
            }
        }
    }

    let mut cases = 0;
    for (i, (a, _)) in CLASS_ORDER.iter().enumerate() {
        for (j, (b, _)) in CLASS_ORDER.iter().enumerate() {
            let claim = |id: &str, c: DomainClass| ConflictClaim { agent_id: AgentId::from(id), domain_class: c, objective: String::new() };
            let case = ConflictCase {
                case_id: CaseId::from(format!("case-{i}-{j}")),
                claims: [claim("x", *a), claim("y", *b)],
                contested: "plan".into(),
                status: ConflictStatus::Open,
                resolution: None,
                reasoning: String::new(),
            };
            let r = resolve_case(case);
            cases += 1;
            match i.cmp(&j) {
                std::cmp::Ordering::Less => ensure!(r.resolution == Some(AgentId::from("x")) && r.status == ConflictStatus::Resolved, "{a:?} vs {b:?}: {r:?}"),
                std::cmp::Ordering::Greater => ensure!(r.resolution == Some(AgentId::from("y")) && r.status == ConflictStatus::Resolved, "{a:?} vs {b:?}: {r:?}"),
                std::cmp::Ordering::Equal => ensure!(r.resolution.is_none() && r.status == ConflictStatus::Escalated, "{a:?} tie: {r:?}"),
            }
        }
    }
    Ok(format!(
        "{} rule sets, {evaluations} orderings evaluated ({safety_over_lower} with patient_safety deny vs lower allow); {cases}/16 conflict class pairs",
        rule_sets.len()
    ))
}

/// The transition table, written out by hand.
fn table(s: LifecycleState, e: LifecycleEvent) -> Option<LifecycleState> {
    use LifecycleEvent as E;
    use LifecycleState as S;
    match (s, e) {
        (S::Requested, E::Approve) => Some(S::Approved),
        (S::Approved, E::Provision) => Some(S::Provisioned),
        (S::Provisioned, E::Activate) => Some(S::Active),
        (S::Active, E::Suspend) => Some(S::Suspended),
        (S::Suspended, E::Reactivate) => Some(S::Active),
        (S::Active | S::Suspended, E::Decommission) => Some(S::Decommissioned),
        _ => None,
    }
}

const EVENTS: [LifecycleEvent; 6] = [
    LifecycleEvent::Approve,
    LifecycleEvent::Provision,
    LifecycleEvent::Activate,
    LifecycleEvent::Suspend,
    LifecycleEvent::Reactivate,
    LifecycleEvent::Decommission,
];

pub fn lifecycle_safety() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut steps, mut absorbed, mut reached) = (0u64, 0u64, 0u64);
    for _ in 0..10_000 {
        let mut s = LifecycleState::ALL[rng.random_range(0..6)];
        let mut dead = s == LifecycleState::Decommissioned;
        for _ in 0..rng.random_range(1..60) {
            let e = EVENTS[rng.random_range(0..6)];
            let next = s.apply(e);
            steps += 1;
            match table(s, e) {
                Some(t) => ensure!(next == Ok(t), "{s:?} --{e:?}--> {next:?}, table says {t:?}"),
                None => ensure!(next.is_err(), "{s:?} --{e:?}--> {next:?} is not in the table"),
            }
            if let Ok(t) = next {
                s = t;
            }
            if dead {
                ensure!(s == LifecycleState::Decommissioned, "left Decommissioned via {e:?}");
                absorbed += 1;
            } else if s == LifecycleState::Decommissioned {
                dead = true;
                reached += 1;
            }
        }
    }

    // The same walks against a live plane: the log never records an off-table move.
    let mut fleet = Fleet::new(4);
    for w in 0..200 {
        let role = &ROLES[w % 4];
        let (id, _) = fleet.onboard(role);
        let mut s = LifecycleState::Active;
        for _ in 0..20 {
            let e = EVENTS[rng.random_range(0..6)];
            let before = fleet.plane.event_count();
            let r = fleet.plane.transition(&fleet.op, &id, e, "walk");
            // Reactivation also needs custody; Approve needs the approval operation.
            match (table(s, e), r) {
                (Some(t), Ok(got)) => {
                    ensure!(got == t, "plane moved {s:?} --{e:?}--> {got:?}, table says {t:?}");
                    s = t;
                }
                (None, Ok(got)) => return Err(format!("plane accepted {s:?} --{e:?}--> {got:?}")),
                (_, Err(_)) => ensure!(fleet.plane.event_count() == before, "a refused transition appended events"),
            }
            ensure!(fleet.plane.agent(&id).map(|a| a.state) == Ok(s), "plane state diverged from the walk");
        }
    }
    let replayed = simulator::replay(&fleet.plane.events()).map_err(|e| e.to_string())?;
    ensure!(replayed == fleet.plane.fleet_state(), "replayed state differs from live state");
    Ok(format!(
        "10000 random walks ({steps} steps, {reached} reached Decommissioned, {absorbed} steps absorbed); 200 plane walks replay cleanly"
    ))
}

/// Byte ranges of each record: `ranges[i]` holds seq `i + 1`.
fn record_ranges(buf: &[u8]) -> Result<Vec<(usize, usize)>, String> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let (_, next) = codec::decode(buf, pos).map_err(|e| format!("decode at {pos}: {e:?}"))?;
        out.push((pos, next));
        pos = next;
    }
    Ok(out)
}

pub fn audit_chain() -> Check {
    let (run, plane) = sim(run_scenario(&ScenarioConfig { seed: 5, ..Default::default() }))?;
    let buf = plane.raw_log().map_err(|e| e.to_string())?;
    let ranges = record_ranges(&buf)?;
    let n = ranges.len() as u64;
    ensure!(n == run.event_count, "decoded {n} records, log has {}", run.event_count);
    let clean = verify_bytes(&buf, 1, n);
    ensure!(clean == ChainStatus::Ok { terminal_seq: n, terminal_hash: run.log_digest }, "untampered log: {clean:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut detected = 0;
    for _ in 0..100 {
        let at = rng.random_range(0..buf.len());
        let mut bad = buf.clone();
        bad[at] ^= rng.random_range(1..=255u8);
        let seq = ranges.iter().position(|(a, b)| (*a..*b).contains(&at)).expect("offset inside a record") as u64 + 1;
        let got = verify_bytes(&bad, 1, n);
        ensure!(got == ChainStatus::Corrupt { seq }, "flip at byte {at} (seq {seq}): {got:?}");
        detected += 1;
    }

    let events = plane.events();
    let agents: Vec<AgentId> = plane.agents().into_iter().map(|a| a.agent_id).collect();
    let mid = events[events.len() / 2].timestamp;
    let mut filters = vec![
        BundleFilter::default(),
        BundleFilter { from: Some(mid), ..Default::default() },
        BundleFilter { to: Some(mid), kinds: Some(BTreeSet::from([EventKind::Decision, EventKind::Transition])), ..Default::default() },
    ];
    filters.extend(agents.iter().take(5).map(|a| BundleFilter { agent_id: Some(a.clone()), ..Default::default() }));
    for f in &filters {
        let bytes = plane.export_bundle(f);
        let report = verify_bundle(&bytes).map_err(|e| format!("bundle {f:?}: {e}"))?;
        ensure!(report.terminal_hash == run.log_digest && report.terminal_seq == n, "bundle {f:?} is not anchored at the log head");
        let mut bad = bytes.clone();
        let at = rng.random_range(0..bad.len());
        bad[at] ^= 0x10;
        ensure!(verify_bundle(&bad).is_err(), "bundle {f:?} with byte {at} flipped still verifies");
    }
    Ok(format!(
        "{detected}/100 single-byte corruptions located at the exact seq in a {n}-event log; {} bundles re-verify",
        filters.len()
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Compares an engine snapshot with the oracle; returns the first mismatch.
pub fn compare(snap: &KpiSnapshot, o: &oracle::OracleKpis) -> Result<(), String> {
    let pairs = [
        ("ownership_coverage", snap.ownership_coverage, o.ownership_coverage),
        ("decision_coverage", snap.decision_coverage, o.decision_coverage),
        ("phi_minimization_rate", snap.phi_minimization_rate, o.phi_minimization_rate),
        ("control_drift_rate", snap.control_drift_rate, o.control_drift_rate),
        ("incident_rate", snap.incident_rate, o.incident_rate),
    ];
    for (name, got, want) in pairs {
        ensure!(close(got, want), "{name}: engine {got}, oracle {want}");
    }
    ensure!(snap.orphan_count == o.orphan_count, "orphan_count: engine {}, oracle {}", snap.orphan_count, o.orphan_count);
    ensure!(
        snap.median_revocation_latency.map(|m| m.0) == o.median_revocation_latency,
        "median_revocation_latency: engine {:?}, oracle {:?}",
        snap.median_revocation_latency,
        o.median_revocation_latency
    );
    Ok(())
}

pub fn random_scenario(rng: &mut ChaCha8Rng) -> ScenarioConfig {
    ScenarioConfig {
        seed: rng.random(),
        n_agents: rng.random_range(2..=20),
        duration: Millis::hours(rng.random_range(24..=96)),
        duplication_prob: rng.random_range(0.0..0.4),
        orphan_prob: rng.random_range(0.0..0.5),
        drift_prob: rng.random_range(0.0..0.5),
        incident_prob: rng.random_range(0.0..0.5),
        decommission_prob: rng.random_range(0.0..0.5),
        tool_call_rate: rng.random_range(0.1..1.0),
        governed: rng.random_bool(0.8),
        max_tool_calls: None,
    }
}

pub fn kpi_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut windows = 0;
    let mut max_events = 0;
    for i in 0..25 {
        let config = random_scenario(&mut rng);
        let (_, plane) = sim(run_scenario(&config))?;
        let events = plane.events();
        max_events = max_events.max(events.len());
        let full = Window::full(&events).ok_or("empty log")?;
        let a = rng.random_range(full.start.0..full.end.0);
        let b = rng.random_range(a + 1..=full.end.0);
        for w in [full, Window { start: Timestamp(a), end: Timestamp(b) }] {
            let snap = plane.compute_snapshot(Some(w)).map_err(|e| e.to_string())?;
            let o = oracle::kpis(&events, w.start.0, w.end.0);
            compare(&snap, &o).map_err(|m| format!("scenario {i} ({config:?}) window {w:?}: {m}"))?;
            windows += 1;
        }
    }
    Ok(format!("25 random scenarios (≤ {max_events} events), {windows} windows: all seven KPIs equal the oracle"))
}

struct Written {
    shard: String,
    category: String,
    created: i64,
    ttl: i64,
}

pub fn memory_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fleet = Fleet::new(7);
    let agents: Vec<(AgentId, BTreeSet<String>)> = (0..8)
        .map(|i| {
            let role = &ROLES[i % 4];
            (fleet.onboard(role).0, role.scopes.iter().map(|s| s.to_string()).collect())
        })
        .collect();
    let shards: Vec<String> = (0..5).map(|i| format!("patient-{i}")).collect();
    let mut written: BTreeMap<EntryId, Written> = BTreeMap::new();
    let (mut refused, mut returned, mut queries) = (0, 0, 0);
    let (mut cross_shard, mut out_of_scope, mut past_ttl) = (0, 0, 0);

    while queries < 10_000 {
        fleet.advance(Millis(rng.random_range(0..1_800_000)));
        let (agent, scopes) = &agents[rng.random_range(0..agents.len())];
        if rng.random_bool(0.25) {
            let category = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
            let shard = shards[rng.random_range(0..shards.len())].clone();
            let ttl = Millis(rng.random_range(60_000..3 * 86_400_000));
            let draft = MemoryDraft {
                shard_key: Some(shard.clone()),
                data_category: category.into(),
                phi: phi_category(category),
                payload: vec![1, 2, 3],
                ttl,
            };
            match fleet.plane.write_memory(agent, draft) {
                Ok(id) => {
                    ensure!(scopes.contains(category), "write outside scope `{category}` was accepted");
                    written.insert(id, Written { shard, category: category.into(), created: fleet.now().0, ttl: ttl.0 });
                }
                Err(_) => {
                    ensure!(!scopes.contains(category), "in-scope write of `{category}` was refused");
                    refused += 1;
                }
            }
            continue;
        }
        if rng.random_bool(0.02) {
            fleet.plane.expire_memories(&fleet.op).map_err(|e| e.to_string())?;
        }
        let shard = shards[rng.random_range(0..shards.len())].clone();
        let filter: Option<BTreeSet<String>> = rng
            .random_bool(0.5)
            .then(|| CATEGORIES.iter().filter(|_| rng.random_bool(0.4)).map(|c| c.to_string()).collect());
        let query = MemoryQuery { shard_key: shard.clone(), categories: filter.clone(), workflow_id: None };
        let items = fleet.plane.read_memory(agent, query).map_err(|e| e.to_string())?;
        queries += 1;
        let now = fleet.now().0;
        let got: BTreeSet<EntryId> = items.iter().map(|i| i.entry.entry_id.clone()).collect();
        for item in &items {
            let w = &written[&item.entry.entry_id];
            cross_shard += usize::from(w.shard != shard);
            out_of_scope += usize::from(!scopes.contains(&w.category) || filter.as_ref().is_some_and(|f| !f.contains(&w.category)));
            past_ttl += usize::from(now >= w.created + w.ttl);
        }
        let want: BTreeSet<EntryId> = written
            .iter()
            .filter(|(_, w)| {
                w.shard == shard
                    && scopes.contains(&w.category)
                    && filter.as_ref().is_none_or(|f| f.contains(&w.category))
                    && now < w.created + w.ttl
            })
            .map(|(id, _)| id.clone())
            .collect();
        ensure!(got == want, "query {queries}: returned {} entries, model expects {}", got.len(), want.len());
        returned += items.len();
    }
    ensure!(cross_shard == 0 && out_of_scope == 0 && past_ttl == 0, "cross-shard {cross_shard}, out-of-scope {out_of_scope}, past-ttl {past_ttl}");
    Ok(format!(
        "{queries} queries over {} entries ({returned} rows returned, {refused} out-of-scope writes refused): 0 cross-shard, 0 out-of-scope, 0 past TTL",
        written.len()
    ))
}

pub fn determinism() -> Check {
    let config = ScenarioConfig { seed: 8, n_agents: 12, duration: Millis::days(3), ..Default::default() };
    let (a, pa) = sim(run_scenario(&config))?;
    let (b, pb) = sim(run_scenario(&config))?;
    ensure!(a.log_digest == b.log_digest, "two in-process runs differ: {} vs {}", a.log_digest.to_hex(), b.log_digest.to_hex());
    ensure!(pa.raw_log().ok() == pb.raw_log().ok(), "raw logs differ");
    ensure!(a.snapshot == b.snapshot, "snapshots differ");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = crate::spawn_sim_server(dir.path(), config.seed).map_err(|e| e.to_string())?;
    let client = Client::new(server.base_url(), Some(SIM_OPERATOR.into()));
    let w = simulator::run_on(&client, &config).map_err(|e| format!("wire run: {e}"))?;
    ensure!(w.log_digest == a.log_digest, "wire run digest {} differs from in-process {}", w.log_digest.to_hex(), a.log_digest.to_hex());
    ensure!(w.snapshot == a.snapshot, "wire snapshot differs");

    let (other, _) = sim(run_scenario(&ScenarioConfig { seed: 9, ..config }))?;
    ensure!(other.log_digest != a.log_digest, "a different seed produced the same digest");
    Ok(format!("{} events, digest {} identical across 2 in-process runs and the wire API", a.event_count, &a.log_digest.to_hex()[..16]))
}

fn lattice() -> Vec<Features> {
    (0..16u8)
        .map(|m| Features {
            managed_identity: m & 1 != 0,
            policy_enforcement: m & 2 != 0,
            shared_context_controls: m & 4 != 0,
            conflict_resolution: m & 8 != 0,
        })
        .collect()
}

fn subset(a: Features, b: Features) -> bool {
    (!a.managed_identity || b.managed_identity)
        && (!a.policy_enforcement || b.policy_enforcement)
        && (!a.shared_context_controls || b.shared_context_controls)
        && (!a.conflict_resolution || b.conflict_resolution)
}

pub fn maturity_monotonicity() -> Check {
    let window = Window { start: Timestamp(0), end: Timestamp(86_400_000) };
    let mut snaps = Vec::new();
    for own in [0.9, 1.0] {
        for dec in [0.9, 0.95, 1.0] {
            for phi in [0.8, 0.9, 1.0] {
                for orphans in [0, 1] {
                    for drift in [0.0, 0.05, 0.1] {
                        snaps.push(KpiSnapshot {
                            window,
                            ownership_coverage: own,
                            median_revocation_latency: None,
                            decision_coverage: dec,
                            orphan_count: orphans,
                            phi_minimization_rate: phi,
                            control_drift_rate: drift,
                            incident_rate: 0.0,
                            computed_at: window.end,
                        });
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let (run, _) = sim(run_scenario(&random_scenario(&mut rng)))?;
        snaps.push(run.snapshot);
    }
    let features = lattice();
    let mut pairs = 0;
    let mut levels = BTreeSet::new();
    for s in &snaps {
        let level: Vec<u8> = features.iter().map(|f| assess_maturity(s, *f, Thresholds::default(), window.end).level).collect();
        for (i, f) in features.iter().enumerate() {
            let a = assess_maturity(s, *f, Thresholds::default(), window.end);
            ensure!(
                a.evidence.iter().filter(|c| c.level <= a.level).all(|c| c.pass),
                "level {} not justified by evidence for {f:?}",
                a.level
            );
            levels.insert(level[i]);
            for (j, g) in features.iter().enumerate() {
                if subset(*f, *g) {
                    pairs += 1;
                    ensure!(level[i] <= level[j], "enabling controls lowered the level: {f:?} → {} but {g:?} → {}", level[i], level[j]);
                }
            }
        }
    }
    ensure!(levels == BTreeSet::from([1, 2, 3, 4]), "sweep reached only levels {levels:?}");
    Ok(format!("{} snapshots × 16 feature sets, {pairs} ordered pairs: never lower; levels 1–4 all reached", snaps.len()))
}
