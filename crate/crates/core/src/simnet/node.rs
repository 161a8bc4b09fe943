use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::SigningKey;

use crate::exchange::{OffChainStore, SessionTable};
use crate::ledger::{
    tx_root, Block, BlockHeader, ChainValidator, Digest, Endorsement, LedgerState, PrincipalId, SigCache, Transaction,
    VerifyError,
};
use crate::state::WorldState;

/// Rounds a pending transaction may be passed over before it is dropped.
pub const MAX_DEFERRALS: u32 = 16;

#[derive(Debug, Clone)]
pub struct PendingTx {
    pub tx: Transaction,
    /// Global submission order, carried with the transaction.
    pub seq: u64,
    pub deferrals: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct Round {
    pub block: Block,
    pub endorsements: Vec<Endorsement>,
    pub need: usize,
}

/// One organization's server: ledger replica, contract state, off-chain
/// store and requester sessions.
#[derive(Debug)]
pub struct Node {
    pub org: String,
    pub ledger: LedgerState,
    pub world: WorldState,
    pub store: OffChainStore,
    pub sessions: SessionTable,
    pub online: bool,
    validator: ChainValidator,
    mempool: Vec<PendingTx>,
    key: SigningKey,
    pub(crate) round: Option<Round>,
    pub(crate) future: BTreeMap<u64, Block>,
    pub(crate) handled: BTreeSet<Digest>,
    pub(crate) held: Vec<(String, super::sim::Message)>,
    cache: SigCache,
}

/// Outcome of assembling a proposal from the mempool.
pub(crate) struct Assembly {
    pub block: Option<Block>,
    pub dropped: Vec<Digest>,
}

impl Node {
    /// Builds a node by replaying `blocks`, which must be a valid chain.
    pub fn from_chain(org: &str, key: SigningKey, blocks: &[Block]) -> Result<Self, String> {
        let mut node = Node {
            org: org.to_string(),
            ledger: LedgerState::new(),
            world: WorldState::new(),
            store: OffChainStore::new(org),
            sessions: SessionTable::new(),
            online: true,
            validator: ChainValidator::new(),
            mempool: Vec::new(),
            key,
            round: None,
            future: BTreeMap::new(),
            handled: BTreeSet::new(),
            held: Vec::new(),
            cache: SigCache::new(),
        };
        for b in blocks {
            node.commit(b.clone())?;
        }
        Ok(node)
    }

    pub fn principal(&self) -> PrincipalId {
        PrincipalId::org(self.org.clone()).expect("node org ids are validated at registration")
    }

    pub(crate) fn key(&self) -> &SigningKey {
        &self.key
    }

    /// Height the next block will have.
    pub fn next_height(&self) -> u64 {
        self.ledger.len() as u64
    }

    pub fn mempool(&self) -> impl Iterator<Item = &Transaction> {
        self.mempool.iter().map(|p| &p.tx)
    }

    pub fn pending(&self) -> &[PendingTx] {
        &self.mempool
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Organizations whose endorsements count for the next block.
    pub fn members(&self) -> usize {
        self.validator.registry().orgs().len()
    }

    /// Adds a transaction unless it is already pending or committed.
    pub(crate) fn add_pending(&mut self, tx: Transaction, seq: u64) -> bool {
        if self.ledger.contains_tx(&tx.tx_id) || self.mempool.iter().any(|p| p.tx.tx_id == tx.tx_id) {
            return false;
        }
        let at = self
            .mempool
            .partition_point(|p| (p.tx.timestamp(), p.seq) <= (tx.timestamp(), seq));
        self.mempool.insert(
            at,
            PendingTx {
                tx,
                seq,
                deferrals: 0,
            },
        );
        true
    }

    /// Structural, signature and contract checks short of endorsements.
    pub(crate) fn check_proposal(&mut self, block: &Block) -> Result<(), String> {
        self.validator
            .check_proposal(block, Some(&mut self.cache))
            .map_err(|v| v.rule.to_string())?;
        self.world
            .check_block(block)
            .map_err(|(id, e)| format!("tx {}: {e}", id.short()))
    }

    /// Fully validates and appends a block.
    pub(crate) fn commit(&mut self, block: Block) -> Result<(), String> {
        let mut validator = self.validator.clone();
        validator
            .check_with(&block, Some(&mut self.cache))
            .map_err(|v| v.rule.to_string())?;
        let mut world = self.world.clone();
        world
            .apply_block(&block)
            .map_err(|(id, e)| format!("tx {}: {e}", id.short()))?;
        self.ledger.append(block).map_err(|e| e.to_string())?;
        self.validator = validator;
        self.world = world;
        let ledger = &self.ledger;
        self.mempool.retain(|p| !ledger.contains_tx(&p.tx.tx_id));
        Ok(())
    }

    /// Picks pending transactions, in order, that verify and apply on top of
    /// the committed state. The rest wait; long-waiting ones are dropped.
    pub(crate) fn assemble(&mut self, proposer: PrincipalId, timestamp: u64) -> Assembly {
        let mut world = self.world.clone();
        let mut chosen = Vec::new();
        let mut dropped = Vec::new();
        let mut keep = Vec::new();
        for mut p in std::mem::take(&mut self.mempool) {
            if self.ledger.contains_tx(&p.tx.tx_id) {
                continue;
            }
            let verdict = match p.tx.verify(&world.registry) {
                Ok(()) => world.apply(&p.tx).map_err(|_| ()),
                Err(VerifyError::UnknownAuthor(_)) => Err(()),
                Err(_) => {
                    dropped.push(p.tx.tx_id);
                    continue;
                }
            };
            match verdict {
                Ok(()) => {
                    chosen.push(p.tx.clone());
                    keep.push(p);
                }
                Err(()) => {
                    p.deferrals += 1;
                    if p.deferrals > MAX_DEFERRALS {
                        dropped.push(p.tx.tx_id);
                    } else {
                        keep.push(p);
                    }
                }
            }
        }
        self.mempool = keep;
        let block = (!chosen.is_empty()).then(|| {
            let tip = self.ledger.tip().expect("nodes always hold genesis");
            Block {
                header: BlockHeader {
                    height: tip.height() + 1,
                    prev_hash: tip.hash(),
                    timestamp,
                    proposer,
                    tx_root: tx_root(chosen.iter().map(|t| &t.tx_id)),
                },
                transactions: chosen,
                endorsements: Vec::new(),
            }
        });
        Assembly { block, dropped }
    }
}
