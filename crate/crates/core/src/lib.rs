//! Permissioned care ledger: signed transactions in endorsed blocks, patient
//! access grants, cross-organization record exchange, research consent, and a
//! deterministic simulator running it all across organization nodes.

pub mod consent;
pub mod exchange;
pub mod ledger;
pub mod policy;
pub mod privacy;
pub mod state;
pub mod simnet;
