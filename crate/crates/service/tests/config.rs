use std::path::{Path, PathBuf};

use ualm_core::clock::Millis;
use ualm_core::simulator::{ScenarioConfig, SIM_POLICY};
use ualm_service::config::{ConfigError, ServiceConfig};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name)
}

#[test]
fn shipped_service_config_loads() {
    let c = ServiceConfig::load(&shipped("service.toml")).unwrap();
    assert_eq!(c.listen.port(), 7878);
    assert!(c.operators.contains("alice"));
    assert_eq!(c.triggers.len(), 4);
    assert_eq!(c.kpi_window, Some(Millis::days(30)));
    assert_eq!(c.retention.max_ttl("access_logs"), Some(Millis::days(365)));
    assert!(c.catalog.contains("medication_review"));
    assert_eq!(c.policy.as_deref().map(str::trim), Some(SIM_POLICY.trim()));
    assert!(c.data_dir.ends_with("data"));
}

#[test]
fn shipped_scenario_parses() {
    let src = std::fs::read_to_string(shipped("scenario.toml")).unwrap();
    let s = ScenarioConfig::parse(&src).unwrap();
    assert_eq!(s.seed, 42);
    assert_eq!(s.duration, Millis::days(7));
}

#[test]
fn bad_documents_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["catalog.toml", "retention.toml", "triggers.toml"] {
        std::fs::copy(shipped(name), dir.path().join(name)).unwrap();
    }
    std::fs::write(dir.path().join("policy.toml"), "[[rule]]\nrule_id = \"a\"\nclass = \"finance\"\nsubject = [\"*\"]\naction = [\"*\"]\nresource = [\"*\"]\neffect = \"allow\"\n").unwrap();
    let service = "listen = \"127.0.0.1:0\"\ndata_dir = \"d\"\ncatalog = \"catalog.toml\"\nretention = \"retention.toml\"\npolicy = \"policy.toml\"\noperators = [\"a\"]\n";
    std::fs::write(dir.path().join("service.toml"), service).unwrap();
    let err = ServiceConfig::load(&dir.path().join("service.toml")).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("policy.toml"), "{text}");
    assert!(text.contains("finance"), "{text}");

    std::fs::write(dir.path().join("service.toml"), service.replace("operators = [\"a\"]", "operators = []")).unwrap();
    std::fs::write(dir.path().join("policy.toml"), SIM_POLICY).unwrap();
    let err = ServiceConfig::load(&dir.path().join("service.toml")).unwrap_err();
    assert!(matches!(err, ConfigError::Invalid(_)), "{err}");

    std::fs::write(dir.path().join("service.toml"), format!("{service}colour = \"blue\"\n")).unwrap();
    let err = ServiceConfig::load(&dir.path().join("service.toml")).unwrap_err();
    assert!(err.to_string().contains("colour"), "{err}");
}
