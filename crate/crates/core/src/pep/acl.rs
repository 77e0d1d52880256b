use std::collections::BTreeSet;

use super::{AclRule, FlowQuery, PepError};

/// ACL rules kept sorted by ascending priority; the first match decides.
#[derive(Debug, Clone, Default)]
pub struct AclTable {
    rules: Vec<AclRule>,
}

impl AclTable {
    pub fn from_rules(rules: impl IntoIterator<Item = AclRule>) -> Result<Self, PepError> {
        let mut seen = BTreeSet::new();
        let mut rules: Vec<AclRule> = rules
            .into_iter()
            .map(|mut r| {
                r.src = r.src.trunc();
                r.dst = r.dst.trunc();
                r
            })
            .collect();
        for r in &rules {
            if !seen.insert(r.priority) {
                return Err(PepError::DuplicatePriority(r.priority));
            }
        }
        rules.sort_by_key(|r| r.priority);
        Ok(AclTable { rules })
    }

    pub fn first_match(&self, q: &FlowQuery) -> Option<&AclRule> {
        self.rules.iter().find(|r| r.matches(q))
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}
