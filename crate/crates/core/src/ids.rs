//! Identifier newtypes and the seeded ULID generator.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use ulid::Ulid;

use crate::clock::Timestamp;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(AgentId);
string_id!(CredentialId);
string_id!(DecisionId);
string_id!(AmendmentId);
string_id!(RequestId);
string_id!(WorkflowId);
string_id!(EntryId);
string_id!(CaseId);
string_id!(MessageId);
string_id!(
    /// A human (person) identifier: owners and operators.
    PersonId
);
string_id!(
    /// An organizational unit carrying liability for an agent.
    OrgUnitId
);
string_id!(TriggerId);

/// Generates ULIDs: 48-bit millisecond timestamp plus 80 bits from a seeded
/// ChaCha8 stream. Output is strictly increasing, so ids never repeat and sort
/// in issuance order.
#[derive(Clone)]
pub struct IdGenerator {
    rng: ChaCha8Rng,
    last: Option<Ulid>,
}

impl IdGenerator {
    pub fn seeded(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), last: None }
    }

    /// Restarts a generator that must stay above every id in `floor`.
    pub fn resume(seed: u64, floor: Option<&str>) -> Self {
        let mut g = Self::seeded(seed);
        g.last = floor.and_then(|s| Ulid::from_string(s).ok());
        g
    }

    pub fn next(&mut self, now: Timestamp) -> String {
        let hi = u128::from(self.rng.next_u64());
        let lo = u128::from(self.rng.next_u64());
        let random = ((hi << 64) | lo) & ((1u128 << 80) - 1);
        let ms = u64::try_from(now.0.max(0)).unwrap_or(0) & ((1u64 << 48) - 1);
        let mut id = Ulid::from_parts(ms, random);
        if let Some(last) = self.last {
            if id <= last {
                id = last.increment().unwrap_or(last);
            }
        }
        self.last = Some(id);
        id.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_deterministic_and_increasing() {
        let mut a = IdGenerator::seeded(7);
        let mut b = IdGenerator::seeded(7);
        let mut prev = String::new();
        for i in 0..1000 {
            // same timestamp for many calls, then time moving backwards
            let t = Timestamp(1_700_000_000_000 + (i / 100) * 5 - (i % 3));
            let x = a.next(t);
            assert_eq!(x, b.next(t));
            assert_eq!(x.len(), 26);
            assert!(x > prev, "{x} <= {prev}");
            prev = x;
        }
    }

    #[test]
    fn embedded_timestamp_orders_ids() {
        let mut g = IdGenerator::seeded(1);
        let early = g.next(Timestamp(1_000));
        let mut g2 = IdGenerator::seeded(99);
        let late = g2.next(Timestamp(2_000));
        assert!(early < late);
    }
}
