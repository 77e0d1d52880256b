use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::policy::Permission;
use super::wire::{CanonicalWriter, MacKey, Tag};
use crate::core5g::{DomainId, Imsi};
use crate::sim::Timestamp;

const TOKEN_TAG: &str = "fediot/access-token/v1";

/// Simplified bearer token carrying the permissions granted at attach.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token_id: String,
    pub imsi: Imsi,
    pub domain: DomainId,
    pub roles: BTreeSet<String>,
    pub permitted: BTreeSet<Permission>,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub mac: Tag,
}

impl AccessToken {
    #[allow(clippy::too_many_arguments)]
    pub fn issue(
        key: &MacKey,
        token_id: String,
        imsi: Imsi,
        domain: DomainId,
        roles: BTreeSet<String>,
        permitted: BTreeSet<Permission>,
        now: Timestamp,
        ttl_ms: u64,
    ) -> Self {
        let mut t = AccessToken {
            token_id,
            imsi,
            domain,
            roles,
            permitted,
            issued_at: now,
            expires_at: now + ttl_ms.max(1),
            mac: Tag([0; 32]),
        };
        t.mac = key.sign(&t.canonical_bytes());
        t
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::new();
        w.str(TOKEN_TAG)
            .str(&self.token_id)
            .str(self.imsi.as_str())
            .str(self.domain.as_str())
            .list(&self.roles, |e, r| {
                e.str(r);
            })
            .list(&self.permitted, |e, p| {
                e.str(p.action.as_str()).str(&p.resource);
            })
            .u64(self.issued_at.0)
            .u64(self.expires_at.0);
        w.finish()
    }

    /// Valid iff the MAC verifies under `key` and `now < expires_at`.
    pub fn verify(&self, key: &MacKey, now: Timestamp) -> bool {
        self.expires_at > self.issued_at && now < self.expires_at && key.verify(&self.canonical_bytes(), &self.mac)
    }
}
