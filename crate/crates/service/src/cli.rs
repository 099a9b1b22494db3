//! The `ualm` operator CLI.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ualm_core::audit::bundle::{verify_bundle, BundleFilter};
use ualm_core::audit::{decode_verified, AuditError, ChainStatus, EventKind};
use ualm_core::clock::{Millis, SystemClock, Clock, Timestamp};
use ualm_core::domain::DomainClass;
use ualm_core::ids::{AgentId, CaseId, PersonId, RequestId};
use ualm_core::mediation::{HumanVerdict, VerdictTarget};
use ualm_core::metrics::{Features, LEVEL_NAMES};
use ualm_core::registry::AgentDraft;
use ualm_core::simulator::{self, ApiError, GovernanceApi, ScenarioConfig, ScenarioResult};

use crate::client::Client;
use crate::config::ServiceConfig;
use crate::server;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Records,
}

#[derive(Debug, Parser)]
#[command(name = "ualm", version, about = "Operate a ualm control plane")]
pub struct Cli {
    /// Base URL of the control-plane API.
    #[arg(long, global = true, env = "UALM_URL", default_value = "http://127.0.0.1:7878")]
    pub url: String,
    /// Operator identity sent with mutating requests.
    #[arg(long, global = true, env = "UALM_OPERATOR")]
    pub operator: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "table")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the API server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Register an agent (state Requested).
    Register(RegisterArgs),
    /// Approve a Requested agent.
    Approve {
        agent: String,
        #[arg(long)]
        owner: String,
        /// Expiration: epoch milliseconds or a duration from now such as `90d`.
        #[arg(long)]
        expires: String,
    },
    /// Fire the kill switch on an Active agent.
    Kill {
        agent: String,
        #[arg(long, default_value = "operator kill")]
        reason: String,
    },
    /// Decommission an agent.
    Decommission {
        agent: String,
        #[arg(long, default_value = "decommissioned by operator")]
        reason: String,
    },
    /// Compute the KPI snapshot.
    Kpi {
        /// `full`, a trailing duration (`30d`), or `<start_ms>,<end_ms>`.
        #[arg(long, default_value = "full")]
        window: String,
    },
    /// Assess maturity level from KPIs and enabled controls.
    Assess {
        #[arg(long, default_value = "full")]
        window: String,
        /// Enabled controls, comma separated: managed_identity, policy_enforcement,
        /// shared_context_controls, conflict_resolution, or `all`.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Verify the audit chain, remotely or on a log file.
    VerifyAudit {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
    /// Export an evidence bundle.
    ExportBundle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        from: Option<i64>,
        #[arg(long)]
        to: Option<i64>,
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
    },
    /// Verify an evidence bundle offline.
    VerifyBundle { path: PathBuf },
    /// Run a simulator scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drive the server at --url (which must run a logical clock) instead of in process.
        #[arg(long)]
        remote: bool,
    },
    /// Human-approval queue.
    Pending {
        #[command(subcommand)]
        action: PendingAction,
    },
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub persona: String,
    #[arg(long)]
    pub domain: String,
    #[arg(long = "capability", required = true)]
    pub capabilities: Vec<String>,
    #[arg(long = "tool", required = true)]
    pub tools: Vec<String>,
    #[arg(long = "data-scope")]
    pub data_scopes: Vec<String>,
    #[arg(long)]
    pub allow_duplicate: bool,
}

#[derive(Debug, Subcommand)]
pub enum PendingAction {
    List,
    Approve {
        request: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    Deny {
        request: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Award an escalated conflict to one of its agents.
    Award {
        case: String,
        agent: String,
        #[arg(long, default_value = "")]
        note: String,
    },
}

/// Failure categories and their exit codes.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_owned(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code.as_str() {
            "usage" => 2,
            "not_found" | "unknown_agent" | "unknown_target" | "unknown_entry" | "unknown_policy_version" => 3,
            "invalid_state" | "invalid_transition" | "already_resolved" | "duplicate_persona_in_domain" => 4,
            "missing_operator" | "unknown_operator" | "unauthenticated" => 5,
            "corrupt_log" | "corrupt_bundle" => 6,
            "unreachable" | "io" => 7,
            _ => 1,
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure { code: e.code, message: e.message }
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::new("io", e.to_string())
}

fn emit<T: Serialize>(out: &mut dyn Write, format: Format, value: &T, table: impl FnOnce() -> String) -> Result<(), Failure> {
    let text = match format {
        Format::Records => serde_json::to_string_pretty(value).expect("serializable"),
        Format::Table => table(),
    };
    writeln!(out, "{}", text.trim_end()).map_err(io)
}

fn parse_expiration(text: &str, now: Timestamp) -> Result<Timestamp, Failure> {
    if let Ok(ms) = text.parse::<i64>() {
        return Ok(Timestamp(ms));
    }
    Millis::parse(text).map(|d| now + d).map_err(|m| Failure::new("usage", format!("--expires: {m}")))
}

fn parse_features(list: &[String]) -> Result<Features, Failure> {
    let mut f = Features::default();
    for name in list.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        match name {
            "all" => f = Features::ALL,
            "managed_identity" => f.managed_identity = true,
            "policy_enforcement" => f.policy_enforcement = true,
            "shared_context_controls" => f.shared_context_controls = true,
            "conflict_resolution" => f.conflict_resolution = true,
            other => return Err(Failure::new("usage", format!("--features: unknown control `{other}`"))),
        }
    }
    Ok(f)
}

fn chain_line(status: &ChainStatus) -> String {
    match status {
        ChainStatus::Ok { terminal_seq, terminal_hash } => format!("ok {terminal_seq} {}", terminal_hash.to_hex()),
        ChainStatus::Corrupt { seq } => format!("corrupt at seq {seq}"),
    }
}

fn scenario_table(r: &ScenarioResult) -> String {
    format!(
        "{}events                         {}\ntool_calls                     {}\nlog_digest                     {}\n",
        r.snapshot.to_table(),
        r.event_count,
        r.tool_calls,
        r.log_digest.to_hex()
    )
}

/// Runs one CLI invocation, writing results to `out`; returns the exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match execute(cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error[{}]: {}", f.code, f.message);
            f.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let client = || Client::new(cli.url.clone(), cli.operator.clone());
    let fmt = cli.format;
    match cli.command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(&config).map_err(|e| Failure::new("config", e.to_string()))?;
            let state = server::build_state(&config).map_err(|e| Failure::new("config", e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(config.listen)
                    .await
                    .map_err(|e| Failure::new("bind", format!("{}: {e}", config.listen)))?;
                let _ = writeln!(out, "listening on {}", config.listen);
                server::serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
                .map_err(io)
            })
        }
        Command::Register(a) => {
            let domain: DomainClass = a.domain.parse().map_err(|e: String| Failure::new("usage", format!("--domain: {e}")))?;
            let draft = AgentDraft {
                persona: a.persona,
                domain_class: domain,
                scope_of_practice: a.capabilities.into_iter().collect(),
                allowed_tools: a.tools.into_iter().collect(),
                data_scopes: a.data_scopes.into_iter().collect(),
                allow_duplicate: a.allow_duplicate,
            };
            let rec = client().register_agent(&draft)?;
            emit(out, fmt, &rec, || format!("registered {} ({})", rec.agent_id, rec.state))
        }
        Command::Approve { agent, owner, expires } => {
            let expiration = parse_expiration(&expires, SystemClock.now())?;
            let rec = client().approve(&AgentId::from(agent), Some(PersonId::from(owner)), expiration, None)?;
            emit(out, fmt, &rec, || format!("approved {} ({})", rec.agent_id, rec.state))
        }
        Command::Kill { agent, reason } => {
            let r = client().kill(&AgentId::from(agent), &reason, None)?;
            emit(out, fmt, &r, || {
                format!(
                    "killed {}: revoked {} credential(s), denied {} pending request(s)",
                    r.agent_id,
                    r.revoked_credentials,
                    r.denied_requests.len()
                )
            })
        }
        Command::Decommission { agent, reason } => {
            let r = client().decommission(&AgentId::from(agent), &reason)?;
            emit(out, fmt, &r, || {
                format!(
                    "decommissioned {}: revoked {}, frozen {}, decision log {}",
                    r.agent_id,
                    r.revoked_credentials,
                    r.frozen_entries,
                    r.final_decision_log_digest.to_hex()
                )
            })
        }
        Command::Kpi { window } => {
            let s = client().kpi(&window)?;
            emit(out, fmt, &s, || s.to_table())
        }
        Command::Assess { window, features } => {
            let f = parse_features(&features)?;
            let a = client().maturity(f, None, Some(window))?;
            emit(out, fmt, &a, || {
                let mut t = format!("level {} ({})\n", a.level, LEVEL_NAMES[usize::from(a.level.max(1)) - 1]);
                for c in &a.evidence {
                    let mark = if c.pass { "pass" } else { "fail" };
                    t.push_str(&format!("L{} {:<28} {mark}  measured {} required {}\n", c.level, c.name, c.measured, c.required));
                }
                t
            })
        }
        Command::VerifyAudit { log, from, to } => {
            let status = match log {
                Some(path) => {
                    let bytes = std::fs::read(&path).map_err(io)?;
                    match decode_verified(&bytes) {
                        Ok(events) => {
                            let len = events.len() as u64;
                            let to = to.unwrap_or(len);
                            if from.unwrap_or(1) < 1 || to > len || from.unwrap_or(1) > to.max(1) {
                                return Err(Failure::new("range_out_of_bounds", format!("range outside log of {len} events")));
                            }
                            let hash = events.get(to as usize - 1).map_or(ualm_core::digest::Digest32::ZERO, |e| e.hash);
                            ChainStatus::Ok { terminal_seq: to, terminal_hash: hash }
                        }
                        Err(AuditError::Corrupt(seq)) => ChainStatus::Corrupt { seq },
                        Err(e) => return Err(Failure::new("io", e.to_string())),
                    }
                }
                None => client().verify(from, to)?,
            };
            emit(out, fmt, &status, || chain_line(&status))?;
            match status {
                ChainStatus::Ok { .. } => Ok(()),
                ChainStatus::Corrupt { seq } => Err(Failure::new("corrupt_log", format!("chain breaks at seq {seq}"))),
            }
        }
        Command::ExportBundle { out: path, agent, from, to, kinds } => {
            let kinds = if kinds.is_empty() {
                None
            } else {
                let mut set = BTreeSet::new();
                for k in &kinds {
                    set.insert(EventKind::parse(k).ok_or_else(|| Failure::new("usage", format!("--kinds: unknown kind `{k}`")))?);
                }
                Some(set)
            };
            let filter = BundleFilter { agent_id: agent.map(AgentId::from), from: from.map(Timestamp), to: to.map(Timestamp), kinds };
            let bytes = client().bundle(&filter)?;
            std::fs::write(&path, &bytes).map_err(io)?;
            let report = verify_bundle(&bytes).map_err(|e| Failure::new("corrupt_bundle", e.to_string()))?;
            emit(out, fmt, &report, || format!("wrote {} ({} events, {} bytes)", path.display(), report.events, bytes.len()))
        }
        Command::VerifyBundle { path } => {
            let bytes = std::fs::read(&path).map_err(io)?;
            let report = verify_bundle(&bytes).map_err(|e| Failure::new("corrupt_bundle", e.to_string()))?;
            emit(out, fmt, &report, || {
                format!(
                    "ok {} events, anchored at seq {} {}",
                    report.events,
                    report.terminal_seq,
                    report.terminal_hash.to_hex()
                )
            })
        }
        Command::Simulate { config, out: dir, remote } => {
            let src = std::fs::read_to_string(&config).map_err(io)?;
            let sc = ScenarioConfig::parse(&src).map_err(|e| Failure::new("invalid_config", e.to_string()))?;
            std::fs::create_dir_all(&dir).map_err(io)?;
            let result = if remote {
                simulator::run_on(&client(), &sc).map_err(sim_failure)?
            } else {
                let api = simulator::InProcess::new(sc.seed);
                let r = simulator::run_on(&api, &sc).map_err(sim_failure)?;
                std::fs::write(dir.join("audit.log"), api.plane.raw_log().map_err(|e| Failure::new("io", e.to_string()))?)
                    .map_err(io)?;
                r
            };
            std::fs::write(dir.join("snapshot.txt"), result.snapshot.to_table()).map_err(io)?;
            std::fs::write(dir.join("digest.txt"), format!("{}\n", result.log_digest.to_hex())).map_err(io)?;
            std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&result).expect("serializable"))
                .map_err(io)?;
            emit(out, fmt, &result, || scenario_table(&result))
        }
        Command::Pending { action } => {
            let c = client();
            let decide = |target: VerdictTarget, verdict: HumanVerdict, note: &str| c.submit_verdict(&target, &verdict, note);
            match action {
                PendingAction::List => {
                    let p = c.pending()?;
                    emit(out, fmt, &p, || {
                        let mut t = String::from("kind      id                          agent                       detail\n");
                        for r in &p.requests {
                            t.push_str(&format!(
                                "request   {:<27} {:<27} {}\n",
                                r.request.request_id, r.request.agent_id, r.request.tool
                            ));
                        }
                        for cc in &p.conflicts {
                            let (a, b) = cc.agents();
                            t.push_str(&format!("conflict  {:<27} {a} vs {b} over {}\n", cc.case_id, cc.contested));
                        }
                        t
                    })
                }
                PendingAction::Approve { request, note } => {
                    let v = decide(VerdictTarget::Request(RequestId::from(request)), HumanVerdict::Allow, &note)?;
                    emit(out, fmt, &v, || "approved".to_owned())
                }
                PendingAction::Deny { request, note } => {
                    let v = decide(VerdictTarget::Request(RequestId::from(request)), HumanVerdict::Deny, &note)?;
                    emit(out, fmt, &v, || "denied".to_owned())
                }
                PendingAction::Award { case, agent, note } => {
                    let v = decide(VerdictTarget::Conflict(CaseId::from(case)), HumanVerdict::Award(AgentId::from(agent)), &note)?;
                    emit(out, fmt, &v, || "awarded".to_owned())
                }
            }
        }
    }
}

fn sim_failure(e: simulator::SimError) -> Failure {
    match e {
        simulator::SimError::InvalidConfig(p) => Failure::new("invalid_config", p.to_string()),
        simulator::SimError::Api(a) => a.into(),
    }
}
