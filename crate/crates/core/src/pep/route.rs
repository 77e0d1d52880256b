use std::collections::HashMap;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;

use super::{NextHop, PepError, RouteEntry};

/// Longest-prefix-match table: one exact-match map per prefix length,
/// probed from /32 down to /0.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    by_len: Vec<HashMap<u32, NextHop>>,
    // bit i set => by_len[i] is non-empty
    present: u64,
    len: usize,
}

impl Default for RoutingTable {
    fn default() -> Self {
        RoutingTable {
            by_len: vec![HashMap::new(); 33],
            present: 0,
            len: 0,
        }
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

impl RoutingTable {
    pub fn from_entries(entries: impl IntoIterator<Item = RouteEntry>) -> Result<Self, PepError> {
        let mut table = RoutingTable::default();
        for e in entries {
            table.insert(e)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, entry: RouteEntry) -> Result<(), PepError> {
        let prefix = entry.prefix.trunc();
        let len = prefix.prefix_len();
        let key = u32::from(prefix.network());
        let bucket = &mut self.by_len[len as usize];
        if bucket.contains_key(&key) {
            return Err(PepError::DuplicatePrefix(prefix));
        }
        bucket.insert(key, entry.next_hop);
        self.present |= 1 << len;
        self.len += 1;
        Ok(())
    }

    pub fn lookup(&self, dst: Ipv4Addr) -> NextHop {
        let addr = u32::from(dst);
        for len in (0..=32u8).rev() {
            if self.present & (1 << len) == 0 {
                continue;
            }
            if let Some(hop) = self.by_len[len as usize].get(&(addr & mask(len))) {
                return hop.clone();
            }
        }
        NextHop::Drop
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Entries sorted by (prefix length desc, prefix).
    pub fn sorted_entries(&self) -> Vec<RouteEntry> {
        let mut out = Vec::with_capacity(self.len);
        for len in (0..=32u8).rev() {
            let mut bucket: Vec<_> = self.by_len[len as usize].iter().collect();
            bucket.sort_by_key(|(k, _)| **k);
            for (k, hop) in bucket {
                let prefix = Ipv4Net::new(Ipv4Addr::from(*k), len).expect("len <= 32");
                out.push(RouteEntry::new(prefix, hop.clone()));
            }
        }
        out
    }
}
