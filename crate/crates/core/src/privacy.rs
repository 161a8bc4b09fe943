//! Checks that nothing personal reaches the chain and that shredded
//! identities stay unlinkable.

use std::collections::BTreeMap;

use crate::exchange::identity_commitment;
use crate::ledger::{Block, Digest, PrincipalKind, Registry};

/// A dictionary entry found inside a transaction encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    pub height: u64,
    pub tx_id: Digest,
    pub entry: String,
}

/// A commitment an attacker could tie back to a true identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linkage {
    pub patient: String,
    pub identifier: String,
}

/// Non-empty lines; `#` starts a comment line.
pub fn parse_dictionary(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Every (transaction, entry) pair where the entry's bytes occur in the
/// transaction's canonical body.
pub fn scan_transactions(blocks: &[Block], dictionary: &[String]) -> Vec<Leak> {
    let mut leaks = Vec::new();
    for b in blocks {
        for tx in &b.transactions {
            let bytes = tx.canonical_bytes();
            for entry in dictionary {
                if contains(&bytes, entry.as_bytes()) {
                    leaks.push(Leak {
                        height: b.height(),
                        tx_id: tx.tx_id,
                        entry: entry.clone(),
                    });
                }
            }
        }
    }
    leaks
}

/// Patient identity commitments registered on chain.
pub fn patient_commitments(registry: &Registry) -> BTreeMap<String, Digest> {
    registry
        .principals()
        .filter(|(p, _)| p.kind == PrincipalKind::Patient)
        .filter_map(|(p, r)| r.identity_commitment.map(|c| (p.id.clone(), c)))
        .collect()
}

/// Dictionary attack on `commitments` using every salt still available,
/// plus the empty salt.
pub fn rederive<'a>(
    commitments: &BTreeMap<String, Digest>,
    salts: impl IntoIterator<Item = &'a [u8]>,
    dictionary: &[String],
) -> Vec<Linkage> {
    let mut candidates: Vec<&[u8]> = vec![&[]];
    candidates.extend(salts);
    let mut found = Vec::new();
    for (patient, c) in commitments {
        'search: for salt in &candidates {
            for id in dictionary {
                if identity_commitment(salt, id) == *c {
                    found.push(Linkage {
                        patient: patient.clone(),
                        identifier: id.clone(),
                    });
                    break 'search;
                }
            }
        }
    }
    found
}
