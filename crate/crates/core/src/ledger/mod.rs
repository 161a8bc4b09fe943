//! Authenticated append-only chain.
//!
//! Transactions are canonically encoded, hashed with SHA-256 and signed with
//! Ed25519. Blocks link by header hash and carry endorsements from a quorum
//! of member organizations.

pub mod audit;
pub mod block;
pub mod chain;
pub mod codec;
pub mod keys;
pub mod persist;
pub mod tx;
pub mod types;

pub use audit::{query_audit, AuditEntry, AuditError, AuditFilter};
pub use block::{build_block, quorum, tx_root, Block, BlockError, BlockHeader, Endorsement};
pub use chain::{
    validate_chain, validate_chain_anchored, validate_chain_cached, ChainValidator, LedgerState,
    PrincipalRecord, Registry, Rule, SigCache, TxLocation, Violation,
};
pub use codec::{DecodeError, EncodeError};
pub use keys::{generate_key, key_from_seed, Keyring};
pub use persist::{decode_ledger, encode_ledger, write_ledger, PersistError};
pub use tx::{KeyLookup, Payload, Transaction, TxBody, VerifyError};
pub use types::{check_id, Digest, InvalidPrincipal, PrincipalId, PrincipalKind, SignatureBytes};
