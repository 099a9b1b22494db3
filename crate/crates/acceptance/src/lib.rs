//! Independent oracles and the acceptance checks for the ualm control plane.

pub mod criteria;
pub mod fixture;
pub mod oracle;

use std::path::Path;

use ualm_core::memory::RetentionClasses;
use ualm_core::policy::triggers::parse_triggers;
use ualm_core::registry::CapabilityCatalog;
use ualm_core::simulator::{SIM_CATALOG, SIM_OPERATOR, SIM_RETENTION, SIM_TRIGGERS};
use ualm_service::config::ServiceConfig;
use ualm_service::server::{build_state, spawn, ServeError, ServerHandle};

/// A wire server configured like the in-process simulator plane.
pub fn spawn_sim_server(data_dir: &Path, seed: u64) -> Result<ServerHandle, ServeError> {
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse().expect("literal address"),
        data_dir: data_dir.to_owned(),
        catalog: CapabilityCatalog::parse(SIM_CATALOG).expect("built-in catalog"),
        retention: RetentionClasses::parse(SIM_RETENTION).expect("built-in retention"),
        policy: None,
        triggers: parse_triggers(SIM_TRIGGERS).expect("built-in triggers"),
        operators: [SIM_OPERATOR.to_owned()].into_iter().collect(),
        id_seed: seed,
        auto_supervise: false,
        logical_clock: true,
        fsync: false,
        kpi_window: None,
    };
    spawn(build_state(&config)?, config.listen)
}
