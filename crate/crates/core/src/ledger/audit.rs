//! Audit view over committed transactions: one entry per transaction.

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::chain::LedgerState;
use super::types::{Digest, PrincipalId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub tx_id: Digest,
    pub height: u64,
    #[serde(skip)]
    pub position: u32,
    pub timestamp: u64,
    pub actor: String,
    pub actor_org: String,
    pub action: &'static str,
    pub subject: Option<String>,
    pub detail: Map<String, Value>,
}

impl AuditEntry {
    pub fn is_emergency(&self) -> bool {
        self.detail.get("emergency") == Some(&Value::Bool(true))
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit entries serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditFilter {
    pub subject: Option<String>,
    /// Either `kind:id` or a bare id.
    pub actor: Option<String>,
    pub action: Option<String>,
    /// Inclusive bounds on the transaction timestamp.
    pub from: Option<u64>,
    pub to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("time range end {to} is before start {from}")]
    InvertedRange { from: u64, to: u64 },
}

fn actor_matches(pattern: &str, actor: &PrincipalId) -> bool {
    if pattern.contains(':') {
        actor.to_string() == pattern
    } else {
        actor.id == pattern
    }
}

impl AuditFilter {
    fn validate(&self) -> Result<(), AuditError> {
        match (self.from, self.to) {
            (Some(from), Some(to)) if to < from => Err(AuditError::InvertedRange { from, to }),
            _ => Ok(()),
        }
    }
}

/// Matching entries in (height, position) order.
pub fn query_audit(ledger: &LedgerState, filter: &AuditFilter) -> Result<Vec<AuditEntry>, AuditError> {
    filter.validate()?;
    let mut out = Vec::new();
    for block in ledger.blocks() {
        for (position, tx) in block.transactions.iter().enumerate() {
            let payload = tx.payload();
            let ts = tx.timestamp();
            if filter.subject.as_deref().is_some_and(|s| payload.subject() != Some(s))
                || filter.actor.as_deref().is_some_and(|a| !actor_matches(a, tx.author()))
                || filter.action.as_deref().is_some_and(|a| a != payload.action())
                || filter.from.is_some_and(|f| ts < f)
                || filter.to.is_some_and(|t| ts > t)
            {
                continue;
            }
            out.push(AuditEntry {
                tx_id: tx.tx_id,
                height: block.height(),
                position: position as u32,
                timestamp: ts,
                actor: tx.author().to_string(),
                actor_org: tx.author_org().to_string(),
                action: payload.action(),
                subject: payload.subject().map(str::to_string),
                detail: payload.detail(),
            });
        }
    }
    Ok(out)
}
