mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{bare, baseline, claims_draft, kit, med_draft, on_log, restore, Kit};
use ualm_core::audit::{AuditLog, ChainStatus, EventKind, FileStore};
use ualm_core::clock::Millis;
use ualm_core::digest::Digest32;
use ualm_core::domain::DomainClass;
use ualm_core::ids::{AgentId, CaseId, CredentialId, PersonId, RequestId, TriggerId};
use ualm_core::lifecycle::{LifecycleEvent, LifecycleState, ObservedConfig};
use ualm_core::mediation::{
    ConflictCase, ConflictClaim, ConflictStatus, Disposition, HumanVerdict, ReceiptStatus, VerdictTarget,
};
use ualm_core::memory::{MemoryDraft, MemoryQuery};
use ualm_core::plane::FaultPoint;
use ualm_core::policy::Effect;
use ualm_core::registry::{InvalidReason, Validity};
use ualm_core::state::FleetState;

fn deny_reason(k: &Kit, rid: &str) -> Option<String> {
    let outcome = k.plane.outcome(&RequestId::from(rid)).expect("every request is decided");
    k.plane.decision(&outcome.decision_id).unwrap().deny_reason
}

#[test]
fn precheck_denials_are_recorded() {
    let mut k = kit();
    let (med, cred) = k.active(med_draft("med"));
    let (claims, claims_cred) = k.active(claims_draft("claims"));

    let mut r = k.request("", &med, &cred, "read_med_list", "medications", true);
    k.plane.mediate(r.clone()).unwrap();
    r.request_id = RequestId::from("r-ok");
    assert_eq!(k.plane.mediate(r.clone()).unwrap().disposition, Disposition::Executed);
    assert_eq!(deny_reason(&k, "r-ok"), None);
    // The malformed request was still decided, under an empty id.
    assert_eq!(deny_reason(&k, ""), Some("malformed".into()));

    let cases = [
        (k.request("r-ok", &med, &cred, "read_med_list", "medications", true), "duplicate_request"),
        (k.request("r-1", &AgentId::from("ghost"), &cred, "read_med_list", "medications", true), "unknown_agent"),
        (k.request("r-2", &med, &CredentialId::from("forged"), "read_med_list", "medications", true), "invalid(unknown)"),
        (k.request("r-3", &med, &claims_cred, "read_coverage", "coverage", false), "credential_mismatch"),
        (k.request("r-4", &med, &cred, "submit_claim", "medications", true), "out_of_scope"),
        (k.request("r-5", &med, &cred, "read_med_list", "billing", false), "out_of_scope"),
    ];
    let before = k.plane.event_count();
    for (req, reason) in &cases {
        let id = req.request_id.to_string();
        let out = k.plane.mediate(req.clone()).unwrap();
        assert_eq!(out.effect, Effect::Deny, "{reason}");
        assert_eq!(out.disposition, Disposition::Denied);
        if *reason != "duplicate_request" {
            assert_eq!(deny_reason(&k, &id).as_deref(), Some(*reason));
        }
    }
    assert_eq!(k.plane.event_count(), before + cases.len() as u64);

    k.plane.revoke_credentials(&k.op, &claims, "rotate").unwrap();
    k.plane.mediate(k.request("r-6", &claims, &claims_cred, "read_coverage", "coverage", false)).unwrap();
    assert_eq!(deny_reason(&k, "r-6").as_deref(), Some("invalid(revoked)"));

    k.clock.advance(Millis::days(31));
    k.plane.mediate(k.request("r-7", &med, &cred, "read_med_list", "medications", true)).unwrap();
    assert_eq!(deny_reason(&k, "r-7").as_deref(), Some("invalid(expired)"));
    assert_eq!(k.executor.executed(), 1);
}

#[test]
fn no_policy_denies_everything() {
    let mut k = bare();
    let (med, cred) = k.active(med_draft("med"));
    let out = k.plane.mediate(k.request("r-1", &med, &cred, "read_med_list", "medications", true)).unwrap();
    assert_eq!(out.disposition, Disposition::Denied);
    assert_eq!(deny_reason(&k, "r-1").as_deref(), Some("no_policy"));
    assert_eq!(k.plane.decision(&out.decision_id).unwrap().policy_version, 0);
}

#[test]
fn policy_effects_reach_dispositions() {
    let mut k = kit();
    let (med, cred) = k.active(med_draft("med"));

    let out = k.plane.mediate(k.request("r-allergy", &med, &cred, "propose_med_change", "allergies", true)).unwrap();
    assert_eq!(out.disposition, Disposition::Denied);
    assert_eq!(k.plane.decision(&out.decision_id).unwrap().winning_rule, "ps-allergy-change-deny");

    let out = k.plane.mediate(k.request("r-human", &med, &cred, "propose_med_change", "medications", true)).unwrap();
    assert_eq!(out.disposition, Disposition::PendingHuman);
    assert_eq!(k.plane.decision(&out.decision_id).unwrap().winning_rule, "ps-med-change-human");
    assert_eq!(k.plane.pending_requests().len(), 1);

    let mut approved = k.request("r-approved", &med, &cred, "propose_med_change", "medications", true);
    approved.conditions = BTreeSet::from(["human_approval_present".to_owned()]);
    let out = k.plane.mediate(approved).unwrap();
    assert_eq!(out.disposition, Disposition::Executed);
    assert_eq!(k.plane.decision(&out.decision_id).unwrap().winning_rule, "ps-med-change-allow");
    assert_eq!(k.executor.executed(), 1);

    // The human queue: allow executes once, a second verdict is refused.
    let target = VerdictTarget::Request(RequestId::from("r-human"));
    let err = k.plane.submit_human_verdict("", target.clone(), HumanVerdict::Allow, "").unwrap_err();
    assert_eq!(err.code(), "missing_operator");
    k.plane.submit_human_verdict("dr-lee", target.clone(), HumanVerdict::Allow, "ok").unwrap();
    assert_eq!(k.plane.outcome(&RequestId::from("r-human")).unwrap().disposition, Disposition::Executed);
    assert_eq!(k.executor.executed(), 2);
    let err = k.plane.submit_human_verdict("dr-lee", target, HumanVerdict::Deny, "").unwrap_err();
    assert_eq!(err.code(), "already_resolved");
    let err = k
        .plane
        .submit_human_verdict("dr-lee", VerdictTarget::Request(RequestId::from("nope")), HumanVerdict::Deny, "")
        .unwrap_err();
    assert_eq!(err.code(), "unknown_target");
    assert!(k.plane.pending_requests().is_empty());
}

#[test]
fn kill_switch_revokes_and_denies_pending() {
    let mut k = kit();
    let (med, cred) = k.active(med_draft("med"));
    k.plane.mediate(k.request("r-1", &med, &cred, "propose_med_change", "medications", true)).unwrap();
    k.plane.mediate(k.request("r-2", &med, &cred, "propose_med_change", "medications", true)).unwrap();

    let report = k.plane.fire_kill_switch(&k.op, &med, &TriggerId::from("manual"), "operator stop").unwrap();
    assert_eq!(report.revoked_credentials, 1);
    assert_eq!(report.denied_requests, vec![RequestId::from("r-1"), RequestId::from("r-2")]);
    assert!(k.plane.pending_requests().is_empty());
    assert_eq!(k.plane.outcome(&RequestId::from("r-1")).unwrap().disposition, Disposition::Denied);
    assert_eq!(k.plane.agent(&med).unwrap().state, LifecycleState::Suspended);
    assert_eq!(k.plane.validate_credential(&cred, k.now()), Validity::Invalid(InvalidReason::Revoked));

    let err = k.plane.fire_kill_switch(&k.op, &med, &TriggerId::from("manual"), "again").unwrap_err();
    assert_eq!(err.code(), "invalid_state");
    assert_eq!(k.plane.events().iter().filter(|e| e.kind == EventKind::KillSwitch).count(), 1);
}

#[test]
fn repeated_denials_trip_the_trigger() {
    let mut k = kit();
    let (med, cred) = k.active(med_draft("med"));
    for i in 0..4 {
        k.plane.mediate(k.request(&format!("r-{i}"), &med, &cred, "propose_med_change", "allergies", true)).unwrap();
        assert_eq!(k.plane.supervise(&med).unwrap(), None);
    }
    k.plane.mediate(k.request("r-4", &med, &cred, "propose_med_change", "allergies", true)).unwrap();
    let report = k.plane.supervise(&med).unwrap().expect("fifth denial in the hour fires");
    assert_eq!(report.trigger_id, TriggerId::from("t-denials"));
    assert_eq!(k.plane.agent(&med).unwrap().state, LifecycleState::Suspended);
    let ev = k.plane.events().into_iter().find(|e| e.kind == EventKind::KillSwitch).unwrap();
    assert_eq!(ev.actor, "trigger:t-denials");
}

#[test]
fn denials_outside_the_window_do_not_count() {
    let mut k = kit();
    let (med, cred) = k.active(med_draft("med"));
    for i in 0..8 {
        k.plane.mediate(k.request(&format!("r-{i}"), &med, &cred, "propose_med_change", "allergies", true)).unwrap();
        k.clock.advance(Millis::minutes(20));
    }
    assert_eq!(k.plane.supervise(&med).unwrap(), None);
}

#[test]
fn incident_and_owner_triggers() {
    let mut k = kit();
    let (a, _) = k.active(med_draft("med"));
    let (b, _) = k.active(claims_draft("claims"));
    let err = k.plane.report_incident(&k.op, &a, ualm_core::policy::triggers::IncidentKind::ToolMisuse, 6, "").unwrap_err();
    assert_eq!(err.code(), "invalid_argument");
    k.plane.report_incident(&k.op, &a, ualm_core::policy::triggers::IncidentKind::ToolMisuse, 3, "").unwrap();
    assert_eq!(k.plane.supervise(&a).unwrap(), None);
    k.plane.report_incident(&k.op, &a, ualm_core::policy::triggers::IncidentKind::PhiExposure, 4, "").unwrap();
    assert_eq!(k.plane.supervise(&a).unwrap().unwrap().trigger_id, TriggerId::from("t-incident"));

    let owner = k.plane.agent(&b).unwrap().accountable_owner.unwrap();
    assert_eq!(k.plane.deactivate_owner(&k.op, &owner).unwrap(), vec![b.clone()]);
    assert_eq!(k.plane.supervise(&b).unwrap().unwrap().trigger_id, TriggerId::from("t-owner"));
}

fn fleet_with_memory(k: &mut Kit) -> AgentId {
    let (med, cred) = k.active(med_draft("med"));
    k.plane.mediate(k.request("r-1", &med, &cred, "propose_med_change", "medications", true)).unwrap();
    k.plane.mediate(k.request("r-2", &med, &cred, "read_med_list", "medications", true)).unwrap();
    let draft = MemoryDraft {
        shard_key: Some("patient-1".into()),
        data_category: "medications".into(),
        phi: true,
        payload: b"warfarin 5mg".to_vec(),
        ttl: Millis::days(7),
    };
    k.plane.write_memory(&med, draft).unwrap();
    med
}

#[test]
fn decommission_faults_leave_no_trace() {
    let mut reference = kit();
    let med = fleet_with_memory(&mut reference);
    let expected = reference.plane.decommission(&reference.op, &med, "retired").unwrap();
    assert_eq!(expected.revoked_credentials, 1);
    assert_eq!(expected.frozen_entries, 1);

    for point in [FaultPoint::RevokeCredentials, FaultPoint::FreezeMemory, FaultPoint::DecisionDigest, FaultPoint::AuditAppend] {
        let mut k = kit();
        let med = fleet_with_memory(&mut k);
        let state = k.plane.fleet_state();
        let log = k.plane.raw_log().unwrap();
        k.plane.inject_fault(point);
        assert!(k.plane.decommission(&k.op, &med, "retired").is_err(), "{point:?}");
        assert_eq!(k.plane.fleet_state(), state, "{point:?}");
        assert_eq!(k.plane.raw_log().unwrap(), log, "{point:?}");
        assert_eq!(k.plane.agent(&med).unwrap().state, LifecycleState::Active);
        assert_eq!(k.plane.pending_requests().len(), 1);

        let report = k.plane.decommission(&k.op, &med, "retired").unwrap();
        assert_eq!(report, expected, "{point:?}");
        assert_eq!(k.plane.raw_log().unwrap(), reference.plane.raw_log().unwrap(), "{point:?}");
    }
}

#[test]
fn decommission_is_complete() {
    let mut k = kit();
    let med = fleet_with_memory(&mut k);
    let err = k.plane.freeze_memories(&k.op, &med).unwrap_err();
    assert_eq!(err.code(), "invalid_state");

    let report = k.plane.decommission(&k.op, &med, "retired").unwrap();
    assert_eq!(k.plane.termination_report(&med), Some(report.clone()));
    assert_eq!(report.final_decision_log_digest, k.plane.fleet_state().decision_log_digest(&med));
    assert!(k.plane.credentials_of(&med).iter().all(|c| k.plane.validate_credential(&c.credential_id, k.now()) != Validity::Valid));
    assert!(k.plane.pending_requests().is_empty());
    let frozen = k.plane.export_frozen(&med);
    assert_eq!(frozen.len(), 1);
    assert_eq!(frozen[0].payload.as_deref(), Some(&b"warfarin 5mg"[..]));

    let err = k.plane.update_memory(&med, &frozen[0].entry.entry_id, b"x".to_vec()).unwrap_err();
    assert_eq!(err.code(), "frozen");
    for event in [LifecycleEvent::Reactivate, LifecycleEvent::Activate, LifecycleEvent::Suspend] {
        assert_eq!(k.plane.transition(&k.op, &med, event, "").unwrap_err().code(), "invalid_transition", "{event:?}");
    }
    assert_eq!(k.plane.decommission(&k.op, &med, "again").unwrap_err().code(), "invalid_state");
}

#[test]
fn expiry_sweep_and_owner_departure() {
    let mut k = kit();
    let (a, cred) = k.active(med_draft("med"));
    let (b, _) = k.active(claims_draft("claims"));
    assert!(k.plane.sweep_expired(&k.op).unwrap().is_empty());

    let owner = k.plane.agent(&a).unwrap().accountable_owner.unwrap();
    assert_eq!(k.plane.deactivate_owner(&k.op, &owner).unwrap(), vec![a.clone()]);
    let draft = claims_draft("other");
    let c = k.plane.register_agent(&k.op, draft).unwrap().agent_id;
    let err = k.plane.approve_agent(&k.op, &c, Some(owner.clone()), None, k.now() + Millis::days(5), None).unwrap_err();
    assert_eq!(err.code(), "owner_departed");

    k.clock.advance(Millis::days(91));
    let mut swept = k.plane.sweep_expired(&k.op).unwrap();
    swept.sort();
    let mut both = vec![a.clone(), b.clone()];
    both.sort();
    assert_eq!(swept, both);
    assert_eq!(k.plane.agent(&a).unwrap().state, LifecycleState::Suspended);
    assert_ne!(k.plane.validate_credential(&cred, k.now()), Validity::Valid);

    // Reactivation needs a live owner and a future expiration.
    let err = k.plane.transition(&k.op, &a, LifecycleEvent::Reactivate, "").unwrap_err();
    assert_eq!(err.code(), "missing_owner");
    let err = k.plane.transition(&k.op, &b, LifecycleEvent::Reactivate, "").unwrap_err();
    assert_eq!(err.code(), "expiration_in_past");
    k.plane.reassign_owner(&k.op, &a, PersonId::from("dr-new"), None).unwrap();
    assert_eq!(k.plane.transition(&k.op, &a, LifecycleEvent::Reactivate, "").unwrap_err().code(), "expiration_in_past");
}

#[test]
fn approve_goes_through_its_own_call() {
    let mut k = kit();
    let id = k.plane.register_agent(&k.op, claims_draft("pending")).unwrap().agent_id;
    assert_eq!(k.plane.transition(&k.op, &id, LifecycleEvent::Approve, "").unwrap_err().code(), "approval_required");
    assert_eq!(k.plane.transition(&k.op, &id, LifecycleEvent::Activate, "").unwrap_err().code(), "invalid_transition");
    // Duplicates are judged against active agents only.
    k.plane.register_agent(&k.op, claims_draft("pending")).unwrap();
    k.active(claims_draft("claims"));
    let err = k.plane.register_agent(&k.op, claims_draft("claims")).unwrap_err();
    assert_eq!(err.code(), "duplicate_persona_in_domain");
    let mut dup = claims_draft("claims");
    dup.allow_duplicate = true;
    k.plane.register_agent(&k.op, dup).unwrap();
    let mut greedy = claims_draft("greedy");
    greedy.allowed_tools.insert("redact_record".into());
    assert_eq!(k.plane.register_agent(&k.op, greedy).unwrap_err().code(), "least_privilege_violation");
}

#[test]
fn drift_is_detected_and_cleared() {
    let mut k = kit();
    let (med, _) = k.active(med_draft("med"));
    let base = baseline(ualm_core::simulator::EPOCH);
    let same = ObservedConfig::of(&base);
    let n = k.plane.event_count();
    assert_eq!(k.plane.detect_drift(&k.op, &med, same.clone()).unwrap(), None);
    assert_eq!(k.plane.event_count(), n);

    let changed = ObservedConfig { model_id: "model-b".into(), prompt_hash: Digest32::of(b"other"), ..same.clone() };
    let finding = k.plane.detect_drift(&k.op, &med, changed).unwrap().unwrap();
    assert_eq!(finding.dimensions.len(), 2);
    assert!(k.plane.fleet_state().drift.contains_key(&med));

    assert_eq!(k.plane.detect_drift(&k.op, &med, same).unwrap(), None);
    assert!(!k.plane.fleet_state().drift.contains_key(&med));
    assert_eq!(k.plane.events().last().unwrap().kind, EventKind::DriftCleared);

    let unapproved = k.plane.register_agent(&k.op, claims_draft("claims")).unwrap().agent_id;
    let err = k.plane.detect_drift(&k.op, &unapproved, ObservedConfig::of(&base)).unwrap_err();
    assert_eq!(err.code(), "no_baseline");
}

#[test]
fn messages_between_agents() {
    let mut k = kit();
    let (a, cred_a) = k.active(med_draft("med"));
    let (b, cred_b) = k.active(claims_draft("claims"));
    let digest = Digest32::of(b"hello");

    let r = k.plane.route_message(&a, &b, &cred_a, digest, "handoff").unwrap();
    assert_eq!(r.status, ReceiptStatus::Delivered);
    let r = k.plane.route_message(&a, &b, &cred_b, digest, "handoff").unwrap();
    assert_eq!(r.status, ReceiptStatus::Refused);
    k.plane.transition(&k.op, &b, LifecycleEvent::Suspend, "pause").unwrap();
    let r = k.plane.route_message(&a, &b, &cred_a, digest, "handoff").unwrap();
    assert_eq!(r.status, ReceiptStatus::Refused);
    assert!(r.reason.unwrap().starts_with("recipient"));
    assert_eq!(k.plane.fleet_state().messages, 3);
    let err = k.plane.route_message(&a, &AgentId::from("ghost"), &cred_a, digest, "").unwrap_err();
    assert_eq!(err.code(), "unknown_agent");
}

fn case(a: &AgentId, da: DomainClass, b: &AgentId, db: DomainClass) -> ConflictCase {
    ConflictCase {
        case_id: CaseId::from(""),
        claims: [
            ConflictClaim { agent_id: a.clone(), domain_class: da, objective: "hold dose".into() },
            ConflictClaim { agent_id: b.clone(), domain_class: db, objective: "close claim".into() },
        ],
        contested: "order-17".into(),
        status: ConflictStatus::Open,
        resolution: None,
        reasoning: String::new(),
    }
}

#[test]
fn conflicts_resolve_or_escalate() {
    let mut k = kit();
    let (med, _) = k.active(med_draft("med"));
    let (c1, _) = k.active(claims_draft("claims-1"));
    let (c2, _) = k.active(claims_draft("claims-2"));
    let adm = DomainClass::Administrative;

    let done = k.plane.resolve_conflict(&k.op, case(&c1, adm, &med, DomainClass::PatientSafety)).unwrap();
    assert_eq!(done.status, ConflictStatus::Resolved);
    assert_eq!(done.resolution, Some(med.clone()));
    assert!(!done.case_id.as_str().is_empty());
    let err = k.plane.resolve_conflict(&k.op, done.clone()).unwrap_err();
    assert_eq!(err.code(), "invalid_state");

    let tie = k.plane.resolve_conflict(&k.op, case(&c1, adm, &c2, adm)).unwrap();
    assert_eq!(tie.status, ConflictStatus::Escalated);
    assert_eq!(k.plane.escalated_conflicts(), vec![tie.clone()]);
    let target = VerdictTarget::Conflict(tie.case_id.clone());
    let err = k.plane.submit_human_verdict("alice", target.clone(), HumanVerdict::Award(med.clone()), "").unwrap_err();
    assert_eq!(err.code(), "invalid_verdict");
    let err = k.plane.submit_human_verdict("alice", target.clone(), HumanVerdict::Allow, "").unwrap_err();
    assert_eq!(err.code(), "invalid_verdict");
    k.plane.submit_human_verdict("alice", target.clone(), HumanVerdict::Award(c2.clone()), "billing first").unwrap();
    let resolved = k.plane.conflict(&tie.case_id).unwrap();
    assert_eq!(resolved.resolution, Some(c2.clone()));
    assert!(resolved.reasoning.contains("operator:alice"));
    let err = k.plane.submit_human_verdict("alice", target, HumanVerdict::Award(c1.clone()), "").unwrap_err();
    assert_eq!(err.code(), "already_resolved");

    let err = k.plane.resolve_conflict(&k.op, case(&c1, adm, &c1, adm)).unwrap_err();
    assert_eq!(err.code(), "invalid_argument");
}

#[test]
fn memory_rules() {
    let mut k = kit();
    let (med, _) = k.active(med_draft("med"));
    let (claims, _) = k.active(claims_draft("claims"));
    let draft = |category: &str, phi: bool, ttl: Millis| MemoryDraft {
        shard_key: Some("patient-1".into()),
        data_category: category.into(),
        phi,
        payload: category.as_bytes().to_vec(),
        ttl,
    };

    let codes = [
        (draft("billing", false, Millis::days(1)), "scope_violation"),
        (draft("medications", true, Millis::days(31)), "ttl_exceeds_retention_class"),
        (draft("medications", true, Millis(0)), "invalid_ttl"),
        (MemoryDraft { shard_key: None, ..draft("medications", true, Millis::days(1)) }, "missing_shard_key"),
    ];
    for (d, code) in codes {
        assert_eq!(k.plane.write_memory(&med, d).unwrap_err().code(), code);
    }

    let id = k.plane.write_memory(&med, draft("medications", true, Millis::days(2))).unwrap();
    k.plane.write_memory(&med, draft("allergies", true, Millis::days(10))).unwrap();
    k.plane.write_memory(&claims, draft("billing", false, Millis::days(10))).unwrap();
    let query = MemoryQuery { shard_key: "patient-1".into(), categories: None, workflow_id: None };

    let seen = k.plane.read_memory(&med, query.clone()).unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen.iter().all(|m| med_draft("").data_scopes.contains(&m.entry.data_category)));
    let other = MemoryQuery { shard_key: "patient-2".into(), ..query.clone() };
    assert!(k.plane.read_memory(&med, other).unwrap().is_empty());

    assert_eq!(k.plane.update_memory(&claims, &id, b"x".to_vec()).unwrap_err().code(), "not_owner");
    k.plane.update_memory(&med, &id, b"warfarin 2mg".to_vec()).unwrap();
    let item = k.plane.read_memory(&med, query.clone()).unwrap().into_iter().find(|m| m.entry.entry_id == id).unwrap();
    assert_eq!(item.payload.as_deref(), Some(&b"warfarin 2mg"[..]));
    assert_eq!(item.entry.payload_digest, Digest32::of(b"warfarin 2mg"));

    k.clock.advance(Millis::days(3));
    assert_eq!(k.plane.read_memory(&med, query.clone()).unwrap().len(), 1);
    assert_eq!(k.plane.expire_memories(&k.op).unwrap(), 1);
    assert_eq!(k.plane.expire_memories(&k.op).unwrap(), 0);
    let tomb = &k.plane.fleet_state().memory.entries[&id];
    assert!(tomb.tombstone);
    assert_eq!(tomb.payload_digest, Digest32::of(b"warfarin 2mg"));
    assert_eq!(k.plane.update_memory(&med, &id, b"y".to_vec()).unwrap_err().code(), "unknown_entry");

    k.plane.transition(&k.op, &med, LifecycleEvent::Suspend, "pause").unwrap();
    assert_eq!(k.plane.read_memory(&med, query).unwrap_err().code(), "agent_not_active");
}

#[test]
fn replay_matches_live_state() {
    let mut k = kit();
    let med = fleet_with_memory(&mut k);
    let (b, _) = k.active(claims_draft("claims"));
    k.plane.resolve_conflict(&k.op, case(&med, DomainClass::PatientSafety, &b, DomainClass::Administrative)).unwrap();
    k.plane.decommission(&k.op, &med, "done").unwrap();
    k.plane.record_kpi_snapshot(&k.op, None).unwrap();
    assert_eq!(FleetState::replay(&k.plane.events()).unwrap(), k.plane.fleet_state());
    assert!(matches!(k.plane.verify_all().unwrap(), ChainStatus::Ok { .. }));
}

#[test]
fn file_backed_plane_restarts_from_its_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.log");
    let log = AuditLog::open(Box::new(FileStore::open(&path, false).unwrap())).unwrap();
    let mut k = on_log(log);
    k.plane.load_policy(&k.op, ualm_core::simulator::SIM_POLICY).unwrap();
    let med = fleet_with_memory(&mut k);
    k.plane.flush().unwrap();
    let state = k.plane.fleet_state();
    let head = k.plane.head();
    let clock = k.clock.clone();
    drop(k);

    let log = AuditLog::open(Box::new(FileStore::open(&path, false).unwrap())).unwrap();
    let plane = Arc::new(restore(log, clock));
    assert_eq!(plane.fleet_state(), state);
    assert_eq!(plane.head(), head);

    // Fresh identifiers never collide with replayed ones.
    let known: BTreeSet<String> = plane.agents().iter().map(|a| a.agent_id.to_string()).collect();
    let fresh = plane.register_agent(&ualm_core::domain::Actor::operator("ops"), claims_draft("claims")).unwrap();
    assert!(!known.contains(fresh.agent_id.as_str()));
    assert!(fresh.agent_id.as_str() > med.as_str());
    assert_eq!(plane.pending_requests().len(), 1);
}
