mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use common::{sim_config, start};
use ualm_core::audit::ChainStatus;
use ualm_core::clock::Millis;
use ualm_core::domain::DomainClass;
use ualm_core::ids::{PersonId, RequestId, WorkflowId};
use ualm_core::lifecycle::LifecycleEvent;
use ualm_core::mediation::{Disposition, ResourceRef, ToolCallRequest};
use ualm_core::metrics::KpiSnapshot;
use ualm_core::registry::{AgentDraft, AgentRecord};
use ualm_core::simulator::{run_scenario, GovernanceApi, ScenarioConfig, EPOCH, SIM_OPERATOR, SIM_POLICY};
use ualm_service::client::Client;
use ualm_service::wire::PendingList;

const SCENARIO: &str = r#"
seed = 5
n_agents = 6
duration = "2d"
duplication_prob = 0.1
orphan_prob = 0.2
drift_prob = 0.2
incident_prob = 0.2
decommission_prob = 0.2
tool_call_rate = 1.0
"#;

fn ualm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ualm")).args(args).env_remove("UALM_URL").env_remove("UALM_OPERATOR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, SCENARIO).unwrap();
    p
}

#[test]
fn simulate_then_verify_audit_offline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = dir.path().join("run");
    let o = ualm(&["simulate", "--config", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let (expected, _) = run_scenario(&ScenarioConfig::parse(SCENARIO).unwrap()).unwrap();
    let digest = std::fs::read_to_string(out.join("digest.txt")).unwrap();
    assert_eq!(digest.trim(), expected.log_digest.to_hex());

    let log = out.join("audit.log");
    let o = ualm(&["verify-audit", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("ok "), "{line}");
    assert!(line.trim_end().ends_with(&expected.log_digest.to_hex()), "{line}");

    let o = ualm(&["--format", "records", "verify-audit", "--log", log.to_str().unwrap()]);
    let status: ChainStatus = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(status, ChainStatus::Ok { terminal_seq: expected.event_count, terminal_hash: expected.log_digest });

    // Flip one byte deep in the log.
    let mut bytes = std::fs::read(&log).unwrap();
    let at = bytes.len() / 2;
    bytes[at] ^= 0x01;
    std::fs::write(&log, bytes).unwrap();
    let o = ualm(&["verify-audit", "--log", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stdout(&o).starts_with("corrupt at seq "), "{}", stdout(&o));
    assert!(stderr(&o).contains("error[corrupt_log]"));
}

#[test]
fn kill_on_non_active_agent_fails() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(&sim_config(dir.path(), 1));
    let url = server.base_url();
    let o = ualm(&[
        "--url", &url, "--operator", "alice", "--format", "records", "register", "--persona", "claims-bot", "--domain",
        "administrative", "--capability", "claims", "--tool", "submit_claim", "--data-scope", "billing",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: AgentRecord = serde_json::from_str(&stdout(&o)).unwrap();

    let o = ualm(&["--url", &url, "--operator", "alice", "kill", rec.agent_id.as_str()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("error[invalid_state]"), "{}", stderr(&o));

    // Mutations without an operator are refused.
    let o = ualm(&["--url", &url, "kill", rec.agent_id.as_str()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("missing_operator"));
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    let o = ualm(&["kpi", "--windw", "full"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--windw"), "{}", stderr(&o));

    let o = ualm(&["--format", "csv", "kpi"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--format"));

    let o = ualm(&["register", "--persona", "x", "--domain", "finance", "--capability", "c", "--tool", "t"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--domain"));
}

#[test]
fn unreachable_server_is_reported() {
    let o = ualm(&["--url", "http://127.0.0.1:9", "kpi"]);
    assert_eq!(o.status.code(), Some(7));
    assert!(stderr(&o).contains("error[unreachable]"));
}

#[test]
fn remote_simulation_kpi_matches_library() {
    let config = ScenarioConfig::parse(SCENARIO).unwrap();
    let (expected, _) = run_scenario(&config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let server = start(&sim_config(&dir.path().join("data"), config.seed));
    let url = server.base_url();
    let scenario = write_scenario(dir.path());
    let out = dir.path().join("run");
    let o = ualm(&[
        "--url", &url, "--operator", SIM_OPERATOR, "simulate", "--remote", "--config", scenario.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = ualm(&["--url", &url, "--format", "records", "kpi", "--window", "full"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let snap: KpiSnapshot = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(snap, expected.snapshot);

    let o = ualm(&["--url", &url, "kpi"]);
    assert!(stdout(&o).contains("decision_coverage"), "{}", stdout(&o));

    let o = ualm(&["--url", &url, "--format", "records", "verify-audit"]);
    let status: ChainStatus = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(status, ChainStatus::Ok { terminal_seq: expected.event_count, terminal_hash: expected.log_digest });
}

#[test]
fn pending_queue_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(&sim_config(dir.path(), 9));
    let client = Client::new(server.base_url(), Some(SIM_OPERATOR.into()));
    let url = server.base_url();
    client.set_time(EPOCH).unwrap();
    client.load_policy(SIM_POLICY).unwrap();
    let draft = AgentDraft {
        persona: "med-reconciler".into(),
        domain_class: DomainClass::PatientSafety,
        scope_of_practice: BTreeSet::from(["medication_review".to_owned()]),
        allowed_tools: BTreeSet::from(["propose_med_change".to_owned()]),
        data_scopes: BTreeSet::from(["medications".to_owned()]),
        allow_duplicate: false,
    };
    let id = client.register_agent(&draft).unwrap().agent_id;
    client.approve(&id, Some(PersonId::from("dr-lee")), EPOCH + Millis::days(30), None).unwrap();
    client.transition(&id, LifecycleEvent::Provision, "").unwrap();
    client.transition(&id, LifecycleEvent::Activate, "").unwrap();
    let scope = BTreeSet::from(["propose_med_change".to_owned(), "medications".to_owned()]);
    let cred = client.issue_credential(&id, &scope, Millis::days(1)).unwrap();
    let outcome = client
        .mediate(&ToolCallRequest {
            request_id: RequestId::from("req-1"),
            agent_id: id.clone(),
            credential_id: cred.credential_id,
            tool: "propose_med_change".into(),
            resources: BTreeSet::from([ResourceRef { category: "medications".into(), phi: true }]),
            workflow_id: WorkflowId::from("wf-1"),
            intent: "dose change".into(),
            conditions: BTreeSet::new(),
            submitted_at: EPOCH,
        })
        .unwrap();
    assert_eq!(outcome.disposition, Disposition::PendingHuman);

    let o = ualm(&["--url", &url, "--format", "records", "pending", "list"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let list: PendingList = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(list.requests.len(), 1);
    assert!(stdout(&ualm(&["--url", &url, "pending", "list"])).contains("req-1"));

    let o = ualm(&["--url", &url, "--operator", "alice", "pending", "deny", "req-1", "--note", "not now"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ualm(&["--url", &url, "--operator", "alice", "pending", "approve", "req-1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("error[already_resolved]"), "{}", stderr(&o));

    assert!(client.pending().unwrap().requests.is_empty());
    let events = client.events(&[("kind", "decision_amendment".to_owned())]).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].actor, "operator:alice");
}

#[test]
fn bundle_export_and_verify() {
    let config = ScenarioConfig::parse(SCENARIO).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let server = start(&sim_config(&dir.path().join("data"), config.seed));
    let client = Client::new(server.base_url(), Some(SIM_OPERATOR.into()));
    ualm_core::simulator::run_on(&client, &config).unwrap();
    let agent = client.agents().unwrap()[0].agent_id.clone();

    let url = server.base_url();
    let path = dir.path().join("bundle.bin");
    let o = ualm(&["--url", &url, "--operator", "alice", "export-bundle", "--out", path.to_str().unwrap(), "--agent", agent.as_str()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ualm(&["verify-bundle", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok "));

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let o = ualm(&["verify-bundle", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(6), "{}", stdout(&o));
}

#[test]
fn assess_reports_a_level() {
    let config = ScenarioConfig::parse(SCENARIO).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let server = start(&sim_config(dir.path(), config.seed));
    let client = Client::new(server.base_url(), Some(SIM_OPERATOR.into()));
    ualm_core::simulator::run_on(&client, &config).unwrap();
    let url = server.base_url();
    let none = ualm(&["--url", &url, "assess"]);
    assert!(none.status.success(), "{}", stderr(&none));
    assert!(stdout(&none).starts_with("level 1"), "{}", stdout(&none));
    let all = ualm(&["--url", &url, "assess", "--features", "all"]);
    assert!(all.status.success(), "{}", stderr(&all));
    assert!(stdout(&all).starts_with("level "));
}
