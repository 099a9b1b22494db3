//! Context and memory: shard-keyed, scope-checked, TTL-bounded agent memory
//! with digest-only tombstones and freeze-on-termination.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Millis, Timestamp};
use crate::config::{line_of_key, parse_toml, ParseError};
use crate::digest::Digest32;
use crate::ids::{AgentId, EntryId, WorkflowId};
use crate::lifecycle::LifecycleState;

/// Metadata of a stored memory item. The payload bytes are kept beside it by
/// the control plane and never enter the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: EntryId,
    pub agent_id: AgentId,
    pub shard_key: Option<String>,
    pub data_category: String,
    pub phi: bool,
    pub payload_digest: Digest32,
    pub created_at: Timestamp,
    pub ttl: Millis,
    pub frozen: bool,
    /// Purged by retention; only the digest survives.
    pub tombstone: bool,
}

impl MemoryEntry {
    pub fn expires_at(&self) -> Timestamp {
        self.created_at + self.ttl
    }

    pub fn is_expired(&self, now: Timestamp) -> bool {
        self.expires_at() <= now
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDraft {
    pub shard_key: Option<String>,
    pub data_category: String,
    pub phi: bool,
    #[serde(with = "crate::hexbytes")]
    pub payload: Vec<u8>,
    pub ttl: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryQuery {
    pub shard_key: String,
    /// Categories of interest; `None` means all of the agent's scopes.
    pub categories: Option<BTreeSet<String>>,
    pub workflow_id: Option<WorkflowId>,
}

/// A read result: entry metadata plus payload bytes when still held in process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub entry: MemoryEntry,
    #[serde(with = "crate::hexbytes::option")]
    pub payload: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("category `{0}` is outside the agent's data scopes")]
    ScopeViolation(String),
    #[error("agent {0} is not Active")]
    AgentNotActive(AgentId),
    #[error("ttl {ttl} exceeds retention class `{category}` maximum {max}")]
    TtlExceedsRetentionClass { category: String, ttl: Millis, max: Millis },
    #[error("no retention class configured for `{0}`")]
    NoRetentionClass(String),
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("PHI entries require a shard key")]
    MissingShardKey,
    #[error("entry {0} is frozen")]
    Frozen(EntryId),
    #[error("unknown or purged entry {0}")]
    UnknownEntry(EntryId),
    #[error("entry {0} belongs to another agent")]
    NotOwner(EntryId),
    #[error("agent is {0}; freezing requires Suspended or Decommissioned")]
    InvalidState(LifecycleState),
}

/// Data category → maximum TTL.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionClasses {
    classes: BTreeMap<String, Millis>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetentionDoc {
    retention: BTreeMap<String, String>,
}

impl RetentionClasses {
    pub fn new(entries: impl IntoIterator<Item = (String, Millis)>) -> Self {
        Self { classes: entries.into_iter().collect() }
    }

    /// Parses the `[retention]` TOML table (`category = "365d"`).
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let doc: RetentionDoc = parse_toml(src)?;
        let mut classes = BTreeMap::new();
        for (category, text) in doc.retention {
            let line = line_of_key(src, &category, 1);
            let max = Millis::parse(&text).map_err(|m| ParseError::new(line, category.clone(), m))?;
            if max.0 <= 0 {
                return Err(ParseError::new(line, category, "maximum ttl must be positive"));
            }
            classes.insert(category, max);
        }
        Ok(Self { classes })
    }

    pub fn max_ttl(&self, category: &str) -> Option<Millis> {
        self.classes.get(category).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub entries: BTreeMap<EntryId, MemoryEntry>,
}

impl MemoryStore {
    pub fn check_write(
        &self,
        data_scopes: &BTreeSet<String>,
        draft: &MemoryDraft,
        retention: &RetentionClasses,
    ) -> Result<(), MemoryError> {
        if !data_scopes.contains(&draft.data_category) {
            return Err(MemoryError::ScopeViolation(draft.data_category.clone()));
        }
        if draft.phi && draft.shard_key.as_deref().is_none_or(str::is_empty) {
            return Err(MemoryError::MissingShardKey);
        }
        if draft.ttl.0 <= 0 {
            return Err(MemoryError::InvalidTtl);
        }
        let max = retention
            .max_ttl(&draft.data_category)
            .ok_or_else(|| MemoryError::NoRetentionClass(draft.data_category.clone()))?;
        if draft.ttl > max {
            return Err(MemoryError::TtlExceedsRetentionClass {
                category: draft.data_category.clone(),
                ttl: draft.ttl,
                max,
            });
        }
        Ok(())
    }

    /// Live, unfrozen entries in `shard_key`, within `scopes ∩ filter`, not past ttl.
    pub fn visible<'a>(
        &'a self,
        data_scopes: &'a BTreeSet<String>,
        query: &'a MemoryQuery,
        now: Timestamp,
    ) -> impl Iterator<Item = &'a MemoryEntry> + 'a {
        self.entries.values().filter(move |e| {
            !e.tombstone
                && !e.frozen
                && e.shard_key.as_deref() == Some(query.shard_key.as_str())
                && data_scopes.contains(&e.data_category)
                && query.categories.as_ref().is_none_or(|f| f.contains(&e.data_category))
                && !e.is_expired(now)
        })
    }

    pub fn expired_ids(&self, now: Timestamp) -> Vec<EntryId> {
        self.entries
            .values()
            .filter(|e| !e.tombstone && e.is_expired(now))
            .map(|e| e.entry_id.clone())
            .collect()
    }

    pub fn unfrozen_of(&self, agent: &AgentId) -> Vec<EntryId> {
        self.entries
            .values()
            .filter(|e| e.agent_id == *agent && !e.frozen && !e.tombstone)
            .map(|e| e.entry_id.clone())
            .collect()
    }

    pub fn tombstones(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values().filter(|e| e.tombstone)
    }

    /// Newline-delimited tombstone export.
    pub fn export_tombstones(&self) -> String {
        self.tombstones()
            .map(|t| serde_json::to_string(t).expect("entry serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn retention() -> RetentionClasses {
        RetentionClasses::parse("[retention]\nvitals = \"365d\"\nmedications = \"730d\"\n").unwrap()
    }

    fn draft(category: &str, ttl: Millis) -> MemoryDraft {
        MemoryDraft { shard_key: Some("patient-1".into()), data_category: category.into(), phi: true, payload: vec![1], ttl }
    }

    #[test]
    fn write_preconditions() {
        let store = MemoryStore::default();
        let scopes: BTreeSet<String> = ["vitals".to_string()].into();
        assert_eq!(store.check_write(&scopes, &draft("vitals", Millis::days(30)), &retention()), Ok(()));
        assert_eq!(
            store.check_write(&scopes, &draft("medications", Millis::days(30)), &retention()),
            Err(MemoryError::ScopeViolation("medications".into()))
        );
        assert!(matches!(
            store.check_write(&scopes, &draft("vitals", Millis::days(400)), &retention()),
            Err(MemoryError::TtlExceedsRetentionClass { .. })
        ));
        // boundary: exactly the class maximum is allowed
        assert_eq!(store.check_write(&scopes, &draft("vitals", Millis::days(365)), &retention()), Ok(()));
        let mut no_shard = draft("vitals", Millis::days(1));
        no_shard.shard_key = None;
        assert_eq!(store.check_write(&scopes, &no_shard, &retention()), Err(MemoryError::MissingShardKey));
    }

    #[test]
    fn retention_doc_errors() {
        let e = RetentionClasses::parse("[retention]\nvitals = \"forever\"\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (Some(2), "vitals"));
    }
}
