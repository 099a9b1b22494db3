use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use ualm_core::clock::Millis;
use ualm_core::config::{parse_toml, ParseError};
use ualm_core::memory::RetentionClasses;
use ualm_core::policy::triggers::{parse_triggers, KillSwitchTrigger};
use ualm_core::policy::PolicyVersion;
use ualm_core::registry::CapabilityCatalog;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    listen: String,
    data_dir: PathBuf,
    catalog: PathBuf,
    retention: PathBuf,
    policy: Option<PathBuf>,
    triggers: Option<PathBuf>,
    operators: Vec<String>,
    #[serde(default)]
    id_seed: u64,
    #[serde(default = "yes")]
    auto_supervise: bool,
    #[serde(default)]
    logical_clock: bool,
    #[serde(default = "fsync_default")]
    fsync: bool,
    #[serde(default)]
    kpi: KpiDoc,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct KpiDoc {
    default_window: Option<String>,
}

fn yes() -> bool {
    true
}

fn fsync_default() -> bool {
    true
}

/// Everything `serve` needs, with every referenced document already parsed.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub catalog: CapabilityCatalog,
    pub retention: RetentionClasses,
    /// Policy document loaded at startup when it differs from the latest version.
    pub policy: Option<String>,
    pub triggers: Vec<KillSwitchTrigger>,
    pub operators: BTreeSet<String>,
    pub id_seed: u64,
    pub auto_supervise: bool,
    /// Time moves only through the admin clock endpoint.
    pub logical_clock: bool,
    pub fsync: bool,
    /// Default KPI window: trailing span ending now; `None` means the full log.
    pub kpi_window: Option<Millis>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_owned(), message: e.to_string() })
}

impl ServiceConfig {
    /// Loads the service TOML; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&src, base).map_err(|e| match e {
            ConfigError::Parse { path: p, source } if p.as_os_str().is_empty() => {
                ConfigError::Parse { path: path.to_owned(), source }
            }
            e => e,
        })
    }

    pub fn parse(src: &str, base: &Path) -> Result<Self, ConfigError> {
        let doc: ConfigDoc = parse_toml(src).map_err(|source| ConfigError::Parse { path: PathBuf::new(), source })?;
        let listen = doc
            .listen
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("listen: `{}` is not a socket address", doc.listen)))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_owned() } else { base.join(p) };
        let parse_at = |p: &Path, e: ParseError| ConfigError::Parse { path: resolve(p), source: e };

        let catalog_src = read(&resolve(&doc.catalog))?;
        let catalog = CapabilityCatalog::parse(&catalog_src).map_err(|e| parse_at(&doc.catalog, e))?;
        let retention_src = read(&resolve(&doc.retention))?;
        let retention = RetentionClasses::parse(&retention_src).map_err(|e| parse_at(&doc.retention, e))?;
        let policy = match &doc.policy {
            Some(p) => {
                let text = read(&resolve(p))?;
                PolicyVersion::compile(1, &text, Default::default()).map_err(|e| match e {
                    ualm_core::policy::PolicyError::Parse(pe) => parse_at(p, pe),
                    other => ConfigError::Invalid(format!("{}: {other}", resolve(p).display())),
                })?;
                Some(text)
            }
            None => None,
        };
        let triggers = match &doc.triggers {
            Some(p) => parse_triggers(&read(&resolve(p))?).map_err(|e| parse_at(p, e))?,
            None => Vec::new(),
        };
        if doc.operators.is_empty() || doc.operators.iter().any(|o| o.trim().is_empty()) {
            return Err(ConfigError::Invalid("operators: at least one non-empty operator id is required".into()));
        }
        let kpi_window = match doc.kpi.default_window.as_deref() {
            None | Some("full") => None,
            Some(w) => Some(Millis::parse(w).map_err(|m| ConfigError::Invalid(format!("kpi.default_window: {m}")))?),
        };
        Ok(ServiceConfig {
            listen,
            data_dir: resolve(&doc.data_dir),
            catalog,
            retention,
            policy,
            triggers,
            operators: doc.operators.into_iter().collect(),
            id_seed: doc.id_seed,
            auto_supervise: doc.auto_supervise,
            logical_clock: doc.logical_clock,
            fsync: doc.fsync,
            kpi_window,
        })
    }
}
