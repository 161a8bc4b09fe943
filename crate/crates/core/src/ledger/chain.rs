use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use super::block::{quorum, tx_root, Block};
use super::tx::{verify_signature, KeyLookup, Payload, SignatureFault, Transaction, VerifyError};
use super::types::{Digest, PrincipalId, PrincipalKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalRecord {
    pub public_key: [u8; 32],
    pub org: Option<String>,
    pub identity_commitment: Option<Digest>,
}

/// Principals and keys registered on chain, plus organization membership in
/// registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    principals: BTreeMap<PrincipalId, PrincipalRecord>,
    orgs: Vec<String>,
}

impl Registry {
    pub fn get(&self, who: &PrincipalId) -> Option<&PrincipalRecord> {
        self.principals.get(who)
    }

    pub fn contains(&self, who: &PrincipalId) -> bool {
        self.principals.contains_key(who)
    }

    pub fn lookup(&self, kind: PrincipalKind, id: &str) -> Option<&PrincipalRecord> {
        self.principals.get(&PrincipalId {
            kind,
            id: id.to_string(),
        })
    }

    pub fn is_org(&self, id: &str) -> bool {
        self.lookup(PrincipalKind::Organization, id).is_some()
    }

    /// Organization ids in registration order.
    pub fn orgs(&self) -> &[String] {
        &self.orgs
    }

    pub fn principals(&self) -> impl Iterator<Item = (&PrincipalId, &PrincipalRecord)> {
        self.principals.iter()
    }

    /// Records a RegisterPrincipal payload. Returns false for a duplicate.
    pub fn record(&mut self, payload: &Payload) -> bool {
        let Payload::RegisterPrincipal {
            principal,
            public_key,
            org,
            identity_commitment,
        } = payload
        else {
            return false;
        };
        if self.principals.contains_key(principal) {
            return false;
        }
        if principal.is_org() {
            self.orgs.push(principal.id.clone());
        }
        self.principals.insert(
            principal.clone(),
            PrincipalRecord {
                public_key: *public_key,
                org: org.clone(),
                identity_commitment: *identity_commitment,
            },
        );
        true
    }
}

impl KeyLookup for Registry {
    fn public_key(&self, who: &PrincipalId) -> Option<[u8; 32]> {
        self.principals.get(who).map(|r| r.public_key)
    }
}

/// Remembers signature checks that already passed, keyed by the exact
/// (key, message, signature) bytes.
#[derive(Debug, Default)]
pub struct SigCache {
    verified: HashSet<Digest>,
}

impl SigCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(&mut self, key: &[u8; 32], msg: &[u8], sig: &[u8; 64]) -> Result<(), SignatureFault> {
        let k = Digest::of_parts(&[key, msg, sig]);
        if self.verified.contains(&k) {
            return Ok(());
        }
        verify_signature(key, msg, sig)?;
        self.verified.insert(k);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Height { expected: u64 },
    PrevHash,
    TxRoot,
    EmptyBlock,
    DuplicateTx(Digest),
    UnknownAuthor(Digest),
    TxSignature(Digest),
    UnknownEndorser(PrincipalId),
    DuplicateEndorser(PrincipalId),
    EndorsementSignature(PrincipalId),
    Quorum { have: usize, need: usize },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Height { expected } => write!(f, "height (expected {expected})"),
            Rule::PrevHash => f.write_str("prev_hash mismatch"),
            Rule::TxRoot => f.write_str("tx_root mismatch"),
            Rule::EmptyBlock => f.write_str("empty block"),
            Rule::DuplicateTx(id) => write!(f, "duplicate tx {}", id.short()),
            Rule::UnknownAuthor(id) => write!(f, "unknown author of tx {}", id.short()),
            Rule::TxSignature(id) => write!(f, "bad signature on tx {}", id.short()),
            Rule::UnknownEndorser(p) => write!(f, "endorser {p} is not a member"),
            Rule::DuplicateEndorser(p) => write!(f, "duplicate endorsement by {p}"),
            Rule::EndorsementSignature(p) => write!(f, "bad endorsement signature by {p}"),
            Rule::Quorum { have, need } => write!(f, "quorum ({have} of {need} endorsements)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("violation at height {height}: {rule}")]
pub struct Violation {
    pub height: u64,
    pub rule: Rule,
}

/// Incremental chain checker: feed blocks in order with [`ChainValidator::check`].
#[derive(Debug, Default, Clone)]
pub struct ChainValidator {
    registry: Registry,
    seen: HashSet<Digest>,
    next_height: u64,
    prev_hash: Digest,
}

impl ChainValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn check(&mut self, block: &Block) -> Result<(), Violation> {
        self.check_with(block, None)
    }

    /// Everything except endorsements: what a peer checks before endorsing.
    pub fn check_proposal(&self, block: &Block, cache: Option<&mut SigCache>) -> Result<(), Violation> {
        self.check_body(block, cache).map(|_| ())
    }

    fn check_body(
        &self,
        block: &Block,
        mut cache: Option<&mut SigCache>,
    ) -> Result<(Registry, HashSet<Digest>), Violation> {
        let height = block.height();
        let fail = |rule| Err(Violation { height, rule });
        if height != self.next_height {
            return fail(Rule::Height {
                expected: self.next_height,
            });
        }
        if block.header.prev_hash != self.prev_hash {
            return fail(Rule::PrevHash);
        }
        if block.transactions.is_empty() {
            return fail(Rule::EmptyBlock);
        }
        if tx_root(block.transactions.iter().map(|t| &t.tx_id)) != block.header.tx_root {
            return fail(Rule::TxRoot);
        }

        let mut registry = self.registry.clone();
        let mut ids = HashSet::new();
        for tx in &block.transactions {
            if self.seen.contains(&tx.tx_id) || !ids.insert(tx.tx_id) {
                return fail(Rule::DuplicateTx(tx.tx_id));
            }
            verify_tx_cached(tx, &registry, cache.as_deref_mut()).map_err(|e| Violation {
                height,
                rule: match e {
                    VerifyError::UnknownAuthor(_) => Rule::UnknownAuthor(tx.tx_id),
                    _ => Rule::TxSignature(tx.tx_id),
                },
            })?;
            registry.record(tx.payload());
        }
        Ok((registry, ids))
    }

    /// Validates `block` as the next block and, if it passes, absorbs its
    /// registrations. On failure the validator is left unchanged.
    pub fn check_with(&mut self, block: &Block, mut cache: Option<&mut SigCache>) -> Result<(), Violation> {
        let height = block.height();
        let fail = |rule| Err(Violation { height, rule });
        let (registry, ids) = self.check_body(block, cache.as_deref_mut())?;

        // Membership in force: organizations registered before this block,
        // or, for genesis, the founding registrations it carries.
        let members: &Registry = if height == 0 { &registry } else { &self.registry };
        let hash = block.hash();
        let mut endorsers = BTreeSet::new();
        for e in &block.endorsements {
            if !e.org.is_org() || !members.orgs().contains(&e.org.id) {
                return fail(Rule::UnknownEndorser(e.org.clone()));
            }
            if !endorsers.insert(&e.org) {
                return fail(Rule::DuplicateEndorser(e.org.clone()));
            }
            let key = members.public_key(&e.org).expect("member orgs have keys");
            let ok = match cache.as_deref_mut() {
                Some(c) => c.check(&key, hash.as_bytes(), &e.signature),
                None => verify_signature(&key, hash.as_bytes(), &e.signature),
            };
            if ok.is_err() {
                return fail(Rule::EndorsementSignature(e.org.clone()));
            }
        }
        let need = quorum(members.orgs().len());
        if endorsers.len() < need {
            return fail(Rule::Quorum {
                have: endorsers.len(),
                need,
            });
        }

        self.registry = registry;
        self.seen.extend(ids);
        self.next_height += 1;
        self.prev_hash = hash;
        Ok(())
    }
}

fn verify_tx_cached(tx: &Transaction, keys: &Registry, cache: Option<&mut SigCache>) -> Result<(), VerifyError> {
    let Some(cache) = cache else {
        return tx.verify(keys);
    };
    if tx.body.tx_hash()? != tx.tx_id {
        return Err(VerifyError::TxIdMismatch);
    }
    let key = tx
        .signer_key(keys)
        .ok_or_else(|| VerifyError::UnknownAuthor(tx.author().clone()))?;
    cache
        .check(&key, tx.tx_id.as_bytes(), &tx.signature)
        .map_err(|_| VerifyError::BadSignature)
}

/// Checks every block in order; reports the first violation.
pub fn validate_chain(blocks: &[Block]) -> Result<Registry, Violation> {
    let mut v = ChainValidator::new();
    for b in blocks {
        v.check(b)?;
    }
    Ok(v.registry)
}

/// Like [`validate_chain`], reusing previously verified signatures.
pub fn validate_chain_cached(blocks: &[Block], cache: &mut SigCache) -> Result<Registry, Violation> {
    let mut v = ChainValidator::new();
    for b in blocks {
        v.check_with(b, Some(cache))?;
    }
    Ok(v.registry)
}

/// [`validate_chain`] plus a check that the chain starts at a trusted genesis.
pub fn validate_chain_anchored(blocks: &[Block], genesis: &Digest) -> Result<Registry, Violation> {
    match blocks.first() {
        Some(b) if b.hash() != *genesis => Err(Violation {
            height: 0,
            rule: Rule::PrevHash,
        }),
        _ => validate_chain(blocks),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppendError {
    #[error("block height {got} does not follow tip {tip:?}")]
    Height { got: u64, tip: Option<u64> },
    #[error("block at height {0} does not link to the tip")]
    PrevHash(u64),
}

/// Where a committed transaction lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
    pub position: u32,
}

/// A node's committed chain. Append-only: nothing removes or rewrites a block.
#[derive(Debug, Clone, Default)]
pub struct LedgerState {
    blocks: Vec<Block>,
    index: BTreeMap<Digest, TxLocation>,
}

impl LedgerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, AppendError> {
        let mut l = Self::new();
        for b in blocks {
            l.append(b)?;
        }
        Ok(l)
    }

    /// Links `block` on the tip. Structural checks only; run a
    /// [`ChainValidator`] first for the full rule set.
    pub fn append(&mut self, block: Block) -> Result<(), AppendError> {
        let tip = self.blocks.last();
        let expected = tip.map_or(0, |t| t.height() + 1);
        if block.height() != expected {
            return Err(AppendError::Height {
                got: block.height(),
                tip: tip.map(Block::height),
            });
        }
        let prev = tip.map_or(Digest::ZERO, Block::hash);
        if block.header.prev_hash != prev {
            return Err(AppendError::PrevHash(block.height()));
        }
        for (i, tx) in block.transactions.iter().enumerate() {
            self.index.insert(
                tx.tx_id,
                TxLocation {
                    height: block.height(),
                    position: i as u32,
                },
            );
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Number of committed blocks.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.index.contains_key(id)
    }

    pub fn locate(&self, id: &Digest) -> Option<TxLocation> {
        self.index.get(id).copied()
    }

    pub fn tx(&self, id: &Digest) -> Option<&Transaction> {
        let loc = self.index.get(id)?;
        self.blocks[loc.height as usize]
            .transactions
            .get(loc.position as usize)
    }

    /// All committed transactions in chain order with their heights.
    pub fn transactions(&self) -> impl Iterator<Item = (u64, &Transaction)> {
        self.blocks
            .iter()
            .flat_map(|b| b.transactions.iter().map(move |t| (b.height(), t)))
    }

    pub fn tx_count(&self) -> usize {
        self.index.len()
    }

    /// True if `self` is a prefix of `other` or vice versa, compared by hash.
    pub fn prefix_comparable(&self, other: &LedgerState) -> bool {
        self.blocks
            .iter()
            .zip(other.blocks.iter())
            .all(|(a, b)| a.hash() == b.hash())
    }
}
