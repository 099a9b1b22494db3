#![allow(dead_code)]

use std::path::Path;

use ualm_core::memory::RetentionClasses;
use ualm_core::policy::triggers::parse_triggers;
use ualm_core::registry::CapabilityCatalog;
use ualm_core::simulator::{SIM_CATALOG, SIM_OPERATOR, SIM_RETENTION, SIM_TRIGGERS};
use ualm_service::config::ServiceConfig;
use ualm_service::server::{build_state, spawn, ServerHandle};

/// Service configured with the simulator's documents and a logical clock.
pub fn sim_config(dir: &Path, seed: u64) -> ServiceConfig {
    ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        data_dir: dir.to_owned(),
        catalog: CapabilityCatalog::parse(SIM_CATALOG).unwrap(),
        retention: RetentionClasses::parse(SIM_RETENTION).unwrap(),
        policy: None,
        triggers: parse_triggers(SIM_TRIGGERS).unwrap(),
        operators: [SIM_OPERATOR.to_owned(), "alice".to_owned()].into_iter().collect(),
        id_seed: seed,
        auto_supervise: false,
        logical_clock: true,
        fsync: false,
        kpi_window: None,
    }
}

pub fn start(config: &ServiceConfig) -> ServerHandle {
    spawn(build_state(config).unwrap(), config.listen).unwrap()
}
