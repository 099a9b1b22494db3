use proptest::prelude::*;
use ualm_acceptance::criteria::{compare, request};
use ualm_acceptance::fixture::{Fleet, ROLES};
use ualm_acceptance::oracle;
use ualm_core::clock::{Millis, Timestamp};
use ualm_core::ids::PersonId;
use ualm_core::lifecycle::{LifecycleEvent, ObservedConfig};
use ualm_core::metrics::Window;
use ualm_core::policy::triggers::IncidentKind;
use ualm_core::simulator::{run_scenario, ScenarioConfig, EPOCH};

/// Four agents over two days, with every KPI worked out by hand.
#[test]
fn hand_worked_fleet() {
    let mut f = Fleet::new(4);
    let agents: Vec<_> = ROLES.iter().map(|r| f.onboard(r)).collect();
    let (med, discharge, claims, privacy) = (&agents[0], &agents[1], &agents[2], &agents[3]);
    f.advance(Millis::hours(1));

    // Governed: two PHI workflows in scope, one non-PHI. Ungoverned: one PHI
    // read outside the caller's scopes.
    let p = &f.plane;
    p.mediate(request(&med.0, &med.1, "read_med_list", "medications", 1, f.now())).unwrap();
    p.mediate(request(&discharge.0, &discharge.1, "read_chart", "encounters", 2, f.now())).unwrap();
    p.mediate(request(&claims.0, &claims.1, "submit_claim", "billing", 3, f.now())).unwrap();
    p.record_ungoverned_call(request(&discharge.0, &discharge.1, "read_chart", "medications", 4, f.now())).unwrap();

    let baseline = p.agent(&med.0).unwrap().baseline.unwrap();
    let observed = ObservedConfig { model_id: "model-z".into(), ..ObservedConfig::of(&baseline) };
    p.detect_drift(&f.op, &med.0, observed).unwrap().unwrap();

    let owner: PersonId = p.agent(&privacy.0).unwrap().accountable_owner.unwrap();
    p.deactivate_owner(&f.op, &owner).unwrap();
    p.transition(&f.op, &claims.0, LifecycleEvent::Suspend, "review").unwrap();
    f.advance(Millis::hours(20));
    p.report_incident(&f.op, &med.0, IncidentKind::ToolMisuse, 2, "").unwrap();
    p.report_incident(&f.op, &discharge.0, IncidentKind::PhiExposure, 3, "").unwrap();

    let w = Window { start: EPOCH, end: EPOCH + Millis::days(2) };
    let snap = p.compute_snapshot(Some(w)).unwrap();
    assert_eq!(snap.ownership_coverage, 0.75);
    assert_eq!(snap.decision_coverage, 0.75);
    assert_eq!(snap.phi_minimization_rate, 2.0 / 3.0);
    assert_eq!(snap.control_drift_rate, 0.25);
    assert_eq!(snap.orphan_count, 1);
    assert_eq!(snap.incident_rate, 2.0 / 8.0);
    assert_eq!(snap.median_revocation_latency, Some(Millis(0)));
    compare(&snap, &oracle::kpis(&p.events(), w.start.0, w.end.0)).unwrap();

    // A window that starts after the last event is rejected.
    let late = Window { start: f.now() + Millis(1), end: f.now() + Millis::days(1) };
    let err = p.compute_snapshot(Some(late)).unwrap_err();
    assert_eq!(err.code(), "window_outside_log");
}

#[test]
fn empty_window_conventions() {
    let mut f = Fleet::new(2);
    f.onboard(&ROLES[2]);
    let w = Window { start: EPOCH, end: EPOCH + Millis::hours(1) };
    let snap = f.plane.compute_snapshot(Some(w)).unwrap();
    assert_eq!(snap.decision_coverage, 1.0);
    assert_eq!(snap.phi_minimization_rate, 1.0);
    assert_eq!(snap.median_revocation_latency, None);
    assert_eq!(snap.incident_rate, 0.0);
    compare(&snap, &oracle::kpis(&f.plane.events(), w.start.0, w.end.0)).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_agrees_with_engine(
        seed in any::<u64>(),
        n_agents in 2u32..8,
        probs in prop::array::uniform5(0.0f64..0.6),
        governed in any::<bool>(),
        cut in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let config = ScenarioConfig {
            seed,
            n_agents,
            duration: Millis::hours(30),
            duplication_prob: probs[0],
            orphan_prob: probs[1],
            drift_prob: probs[2],
            incident_prob: probs[3],
            decommission_prob: probs[4],
            tool_call_rate: 0.5,
            governed,
            max_tool_calls: None,
        };
        let (_, plane) = run_scenario(&config).unwrap();
        let events = plane.events();
        let full = Window::full(&events).unwrap();
        let span = (full.end - full.start).0 as f64;
        let (a, b) = if cut.0 <= cut.1 { cut } else { (cut.1, cut.0) };
        let start = full.start.0 + (span * a) as i64;
        let end = (full.start.0 + (span * b) as i64).max(start + 1);
        for w in [full, Window { start: Timestamp(start), end: Timestamp(end) }] {
            let snap = plane.compute_snapshot(Some(w)).unwrap();
            let o = oracle::kpis(&events, w.start.0, w.end.0);
            prop_assert!(compare(&snap, &o).is_ok(), "{w:?}: {:?}", compare(&snap, &o));
        }
    }
}
