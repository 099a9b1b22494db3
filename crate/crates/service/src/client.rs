//! Blocking HTTP client for the API. Also implements [`GovernanceApi`] so the
//! simulator can drive a remote control plane.

use std::collections::BTreeSet;

use reqwest::blocking::{Client as Http, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;
use ualm_core::audit::bundle::BundleFilter;
use ualm_core::audit::ChainStatus;
use ualm_core::clock::{Millis, Timestamp};
use ualm_core::digest::Digest32;
use ualm_core::ids::{AgentId, CredentialId, EntryId, PersonId, TriggerId};
use ualm_core::lifecycle::{DriftFinding, LifecycleEvent, LifecycleState, ObservedConfig, TerminationReport};
use ualm_core::mediation::{
    ConflictCase, HumanVerdict, MediationOutcome, MessageReceipt, ToolCallRequest, VerdictOutcome, VerdictTarget,
};
use ualm_core::memory::{MemoryDraft, MemoryItem, MemoryQuery};
use ualm_core::metrics::{Features, KpiSnapshot, MaturityAssessment, Thresholds, Window};
use ualm_core::plane::KillReport;
use ualm_core::policy::triggers::IncidentKind;
use ualm_core::registry::{AgentDraft, AgentRecord, ApprovedBaseline, NhiCredential};
use ualm_core::simulator::{ApiError, ApiResult, GovernanceApi};

use crate::wire::*;

pub struct Client {
    base: String,
    operator: Option<String>,
    http: Http,
}

fn transport(e: reqwest::Error) -> ApiError {
    ApiError { code: "unreachable".into(), message: e.to_string() }
}

impl Client {
    pub fn new(base: impl Into<String>, operator: Option<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_owned(), operator, http: Http::new() }
    }

    fn with_operator(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.operator {
            Some(op) => rb.header(OPERATOR_HEADER, op),
            None => rb,
        }
    }

    fn send(&self, rb: RequestBuilder) -> ApiResult<reqwest::blocking::Response> {
        let resp = self.with_operator(rb).send().map_err(transport)?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => ApiError { code: b.code, message: b.message },
            Err(_) => ApiError { code: format!("http_{}", status.as_u16()), message: text },
        })
    }

    fn decode<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> ApiResult<T> {
        let text = resp.text().map_err(transport)?;
        serde_json::from_str(&text).map_err(|e| ApiError { code: "bad_response".into(), message: e.to_string() })
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> ApiResult<T> {
        let rb = self.http.get(format!("{}{path}", self.base)).query(query);
        Self::decode(self.send(rb)?)
    }

    pub fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> ApiResult<T> {
        let rb = self.http.post(format!("{}{path}", self.base)).json(body);
        Self::decode(self.send(rb)?)
    }

    fn post_empty<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        self.post(path, &serde_json::json!({}))
    }

    pub fn agent(&self, id: &AgentId) -> ApiResult<AgentRecord> {
        self.get(&format!("/v1/agents/{id}"), &[])
    }

    pub fn agents(&self) -> ApiResult<Vec<AgentRecord>> {
        self.get("/v1/agents", &[])
    }

    pub fn approve(
        &self,
        id: &AgentId,
        owner: Option<PersonId>,
        expiration: Timestamp,
        baseline: Option<ApprovedBaseline>,
    ) -> ApiResult<AgentRecord> {
        let body = ApproveBody { owner, liability_owner: None, expiration, baseline };
        self.post(&format!("/v1/agents/{id}/approve"), &body)
    }

    pub fn kill(&self, id: &AgentId, reason: &str, trigger_id: Option<TriggerId>) -> ApiResult<KillReport> {
        self.post(&format!("/v1/agents/{id}/kill"), &KillBody { reason: reason.into(), trigger_id })
    }

    pub fn pending(&self) -> ApiResult<PendingList> {
        self.get("/v1/pending", &[])
    }

    pub fn kpi(&self, window: &str) -> ApiResult<KpiSnapshot> {
        self.get("/v1/kpi", &[("window", window.to_owned())])
    }

    pub fn maturity(&self, features: Features, thresholds: Option<Thresholds>, window: Option<String>) -> ApiResult<MaturityAssessment> {
        self.post("/v1/maturity", &MaturityBody { features, thresholds, window })
    }

    pub fn verify(&self, from: Option<u64>, to: Option<u64>) -> ApiResult<ChainStatus> {
        let mut q = Vec::new();
        if let Some(f) = from {
            q.push(("from", f.to_string()));
        }
        if let Some(t) = to {
            q.push(("to", t.to_string()));
        }
        self.get("/v1/audit/verify", &q)
    }

    pub fn events(&self, query: &[(&str, String)]) -> ApiResult<Vec<EventView>> {
        self.get("/v1/audit/events", query)
    }

    pub fn bundle(&self, filter: &BundleFilter) -> ApiResult<Vec<u8>> {
        let rb = self.http.post(format!("{}/v1/audit/bundle", self.base)).json(filter);
        let resp = self.send(rb)?;
        Ok(resp.bytes().map_err(transport)?.to_vec())
    }
}

impl GovernanceApi for Client {
    fn set_time(&self, t: Timestamp) -> ApiResult<()> {
        self.post::<_, ClockBody>("/v1/admin/clock", &ClockBody { now: t }).map(drop)
    }

    fn load_policy(&self, document: &str) -> ApiResult<u64> {
        self.post::<_, PolicyInfo>("/v1/policies", &PolicyBody { document: document.into() }).map(|p| p.version)
    }

    fn register_agent(&self, draft: &AgentDraft) -> ApiResult<AgentRecord> {
        self.post("/v1/agents", draft)
    }

    fn approve_agent(
        &self,
        agent_id: &AgentId,
        owner: &PersonId,
        expiration: Timestamp,
        baseline: &ApprovedBaseline,
    ) -> ApiResult<AgentRecord> {
        self.approve(agent_id, Some(owner.clone()), expiration, Some(baseline.clone()))
    }

    fn transition(&self, agent_id: &AgentId, event: LifecycleEvent, reason: &str) -> ApiResult<LifecycleState> {
        self.post(&format!("/v1/agents/{agent_id}/transition"), &TransitionBody { event, reason: reason.into() })
    }

    fn issue_credential(&self, agent_id: &AgentId, scope: &BTreeSet<String>, ttl: Millis) -> ApiResult<NhiCredential> {
        self.post(&format!("/v1/agents/{agent_id}/credentials"), &CredentialBody { scope: scope.clone(), ttl_ms: ttl.0 })
    }

    fn mediate(&self, request: &ToolCallRequest) -> ApiResult<MediationOutcome> {
        self.post("/v1/mediate", request)
    }

    fn record_ungoverned_call(&self, request: &ToolCallRequest) -> ApiResult<()> {
        self.post("/v1/ungoverned", request)
    }

    fn submit_verdict(&self, target: &VerdictTarget, verdict: &HumanVerdict, note: &str) -> ApiResult<VerdictOutcome> {
        let body = VerdictBody { target: target.clone(), verdict: verdict.clone(), note: note.into() };
        self.post("/v1/pending/verdict", &body)
    }

    fn deactivate_owner(&self, person: &PersonId) -> ApiResult<Vec<AgentId>> {
        self.post_empty(&format!("/v1/owners/{person}/deactivate"))
    }

    fn detect_drift(&self, agent_id: &AgentId, observed: &ObservedConfig) -> ApiResult<Option<DriftFinding>> {
        self.post(&format!("/v1/agents/{agent_id}/drift"), observed)
    }

    fn report_incident(&self, agent_id: &AgentId, kind: IncidentKind, severity: u8, note: &str) -> ApiResult<()> {
        self.post(&format!("/v1/agents/{agent_id}/incidents"), &IncidentBody { kind, severity, note: note.into() })
    }

    fn supervise(&self, agent_id: &AgentId) -> ApiResult<Option<KillReport>> {
        self.post_empty(&format!("/v1/agents/{agent_id}/supervise"))
    }

    fn sweep_expired(&self) -> ApiResult<Vec<AgentId>> {
        self.post_empty("/v1/sweeps/expired")
    }

    fn expire_memories(&self) -> ApiResult<u64> {
        self.post_empty::<Count>("/v1/memory/expire").map(|c| c.count)
    }

    fn decommission(&self, agent_id: &AgentId, reason: &str) -> ApiResult<TerminationReport> {
        self.post(&format!("/v1/agents/{agent_id}/decommission"), &ReasonBody { reason: reason.into() })
    }

    fn write_memory(&self, agent_id: &AgentId, credential: &CredentialId, draft: &MemoryDraft) -> ApiResult<EntryId> {
        let body = MemoryWriteBody { agent_id: agent_id.clone(), credential_id: credential.clone(), draft: draft.clone() };
        self.post::<_, EntryCreated>("/v1/memory/write", &body).map(|e| e.entry_id)
    }

    fn read_memory(&self, agent_id: &AgentId, credential: &CredentialId, query: &MemoryQuery) -> ApiResult<Vec<MemoryItem>> {
        let body = MemoryReadBody { agent_id: agent_id.clone(), credential_id: credential.clone(), query: query.clone() };
        self.post("/v1/memory/read", &body)
    }

    fn route_message(
        &self,
        from: &AgentId,
        to: &AgentId,
        credential: &CredentialId,
        payload_digest: Digest32,
        intent: &str,
    ) -> ApiResult<MessageReceipt> {
        let body = MessageBody {
            from: from.clone(),
            to: to.clone(),
            credential_id: credential.clone(),
            payload_digest,
            intent: intent.into(),
        };
        self.post("/v1/messages", &body)
    }

    fn resolve_conflict(&self, case: &ConflictCase) -> ApiResult<ConflictCase> {
        self.post("/v1/conflicts", case)
    }

    fn snapshot(&self, window: Option<Window>) -> ApiResult<KpiSnapshot> {
        let window = window.map_or_else(|| "full".to_owned(), |w| format!("{},{}", w.start.0, w.end.0));
        self.kpi(&window)
    }

    fn chain_status(&self) -> ApiResult<ChainStatus> {
        self.verify(None, None)
    }
}
