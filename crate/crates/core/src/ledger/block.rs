use ed25519_dalek::{Signer, SigningKey};
use thiserror::Error;

use super::codec::{DecodeError, EncodeError, Reader, Writer};
use super::tx::{KeyLookup, Transaction, VerifyError};
use super::types::{Digest, PrincipalId, SignatureBytes};

/// Endorsements needed to commit with `members` registered organizations.
pub fn quorum(members: usize) -> usize {
    2 * members / 3 + 1
}

/// SHA-256 over the concatenated tx ids, in block order.
pub fn tx_root<'a>(ids: impl IntoIterator<Item = &'a Digest>) -> Digest {
    let mut buf = Vec::new();
    for id in ids {
        buf.extend_from_slice(id.as_bytes());
    }
    Digest::of(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub proposer: PrincipalId,
    pub tx_root: Digest,
}

impl BlockHeader {
    pub fn encode_into(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u64(self.height);
        w.raw(self.prev_hash.as_bytes());
        w.u64(self.timestamp);
        self.proposer.encode(w)?;
        w.raw(self.tx_root.as_bytes());
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w)
            .expect("proposer ids are validated on construction");
        w.into_bytes()
    }

    pub fn hash(&self) -> Digest {
        Digest::of(&self.encode())
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            height: r.u64()?,
            prev_hash: Digest(r.array()?),
            timestamp: r.u64()?,
            proposer: PrincipalId::decode(r)?,
            tx_root: Digest(r.array()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub org: PrincipalId,
    /// Signature over the block hash.
    pub signature: SignatureBytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub endorsements: Vec<Endorsement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("no transactions to include")]
    Empty,
    #[error("transaction {tx_id} rejected: {source}")]
    InvalidTx {
        tx_id: Digest,
        #[source]
        source: VerifyError,
    },
}

impl Block {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Digest over the header only; endorsements are excluded so every
    /// endorser signs the same value.
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn endorse(&self, org: PrincipalId, key: &SigningKey) -> Endorsement {
        Endorsement {
            org,
            signature: key.sign(self.hash().as_bytes()).to_bytes(),
        }
    }

    pub fn endorsed_by(&self, org: &PrincipalId) -> bool {
        self.endorsements.iter().any(|e| &e.org == org)
    }

    /// Height-0 block carrying the founding organizations' registrations.
    pub fn genesis(transactions: Vec<Transaction>, proposer: PrincipalId, timestamp: u64) -> Self {
        let root = tx_root(transactions.iter().map(|t| &t.tx_id));
        Block {
            header: BlockHeader {
                height: 0,
                prev_hash: Digest::ZERO,
                timestamp,
                proposer,
                tx_root: root,
            },
            transactions,
            endorsements: Vec::new(),
        }
    }

    pub fn encode_into(&self, w: &mut Writer) -> Result<(), EncodeError> {
        self.header.encode_into(w)?;
        w.count(self.transactions.len());
        for tx in &self.transactions {
            tx.encode_into(w)?;
        }
        w.count(self.endorsements.len());
        for e in &self.endorsements {
            e.org.encode(w)?;
            w.raw(&e.signature);
        }
        Ok(())
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = BlockHeader::decode(r)?;
        let n = r.count(64 + 8)?;
        let transactions = (0..n)
            .map(|_| Transaction::decode(r))
            .collect::<Result<_, _>>()?;
        let n = r.count(64 + 5)?;
        let endorsements = (0..n)
            .map(|_| {
                Ok(Endorsement {
                    org: PrincipalId::decode(r)?,
                    signature: r.array()?,
                })
            })
            .collect::<Result<_, DecodeError>>()?;
        Ok(Block {
            header,
            transactions,
            endorsements,
        })
    }
}

/// Assembles the next block on top of `prev`. Endorsements are left empty
/// for the consensus round to fill.
pub fn build_block(
    pending: Vec<Transaction>,
    prev: &Block,
    proposer: PrincipalId,
    timestamp: u64,
    keys: &impl KeyLookup,
) -> Result<Block, BlockError> {
    if pending.is_empty() {
        return Err(BlockError::Empty);
    }
    for tx in &pending {
        tx.verify(keys).map_err(|source| BlockError::InvalidTx {
            tx_id: tx.tx_id,
            source,
        })?;
    }
    Ok(Block {
        header: BlockHeader {
            height: prev.height() + 1,
            prev_hash: prev.hash(),
            timestamp,
            proposer,
            tx_root: tx_root(pending.iter().map(|t| &t.tx_id)),
        },
        transactions: pending,
        endorsements: Vec::new(),
    })
}
