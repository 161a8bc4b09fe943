//! Off-chain side of the record exchange: per-organization stores, the
//! pseudonym vault, requester sessions and the merged timeline view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ledger::Digest;
use crate::policy::RecordCategory;

/// Default presentation window for delivered records, in simulated ms.
pub const DEFAULT_SESSION_TTL: u64 = 600_000;

pub const SALT_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("pseudonym {0:?} is not in this organization's vault")]
    UnknownPseudonym(String),
    #[error("pseudonym {0:?} is already enrolled")]
    DuplicatePseudonym(String),
    #[error("session {0} has expired")]
    SessionExpired(String),
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("window end {to} is before start {from}")]
    InvertedWindow { from: u64, to: u64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub record_id: String,
    pub patient: String,
    pub category: RecordCategory,
    pub source_org: String,
    pub measured_at: u64,
    pub value: String,
    pub author: String,
}

/// SHA-256(salt || identifier).
pub fn identity_commitment(salt: &[u8], identifier: &str) -> Digest {
    Digest::of_parts(&[salt, identifier.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaultEntry {
    pub salt: [u8; SALT_LEN],
    pub true_identifier: String,
}

impl VaultEntry {
    pub fn commitment(&self) -> Digest {
        identity_commitment(&self.salt, &self.true_identifier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShredReport {
    pub records_removed: usize,
}

/// One organization's local records plus its salt vault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffChainStore {
    org: String,
    records: BTreeMap<(String, RecordCategory), Vec<RecordEntry>>,
    vault: BTreeMap<String, VaultEntry>,
    next_record: u64,
}

impl OffChainStore {
    pub fn new(org: impl Into<String>) -> Self {
        OffChainStore {
            org: org.into(),
            records: BTreeMap::new(),
            vault: BTreeMap::new(),
            next_record: 0,
        }
    }

    pub fn org(&self) -> &str {
        &self.org
    }

    pub fn add_record(
        &mut self,
        patient: &str,
        category: RecordCategory,
        measured_at: u64,
        value: &str,
        author: &str,
    ) -> &RecordEntry {
        self.next_record += 1;
        let entry = RecordEntry {
            record_id: format!("{}-{:06}", self.org, self.next_record),
            patient: patient.to_string(),
            category,
            source_org: self.org.clone(),
            measured_at,
            value: value.to_string(),
            author: author.to_string(),
        };
        let list = self.records.entry((patient.to_string(), category)).or_default();
        // Stable: equal timestamps keep insertion order.
        let at = list.partition_point(|r| r.measured_at <= measured_at);
        list.insert(at, entry);
        &list[at]
    }

    /// Entries ascending by `measured_at`. Unknown patients yield nothing.
    pub fn fetch_records(&self, patient: &str, category: RecordCategory) -> Vec<RecordEntry> {
        self.records
            .get(&(patient.to_string(), category))
            .cloned()
            .unwrap_or_default()
    }

    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn all_records(&self) -> impl Iterator<Item = &RecordEntry> {
        self.records.values().flatten()
    }

    pub fn enroll(&mut self, pseudonym: &str, salt: [u8; SALT_LEN], true_identifier: &str) -> Result<Digest, ExchangeError> {
        if self.vault.contains_key(pseudonym) {
            return Err(ExchangeError::DuplicatePseudonym(pseudonym.to_string()));
        }
        let entry = VaultEntry {
            salt,
            true_identifier: true_identifier.to_string(),
        };
        let c = entry.commitment();
        self.vault.insert(pseudonym.to_string(), entry);
        Ok(c)
    }

    pub fn vault_entry(&self, pseudonym: &str) -> Option<&VaultEntry> {
        self.vault.get(pseudonym)
    }

    pub fn vault(&self) -> impl Iterator<Item = (&String, &VaultEntry)> {
        self.vault.iter()
    }

    /// Drops the vault row and every local record of the patient. Nothing
    /// else, in particular no ledger state, is touched.
    pub fn shred_patient(&mut self, pseudonym: &str) -> Result<ShredReport, ExchangeError> {
        if self.vault.remove(pseudonym).is_none() {
            return Err(ExchangeError::UnknownPseudonym(pseudonym.to_string()));
        }
        let keys: Vec<_> = self.records.keys().filter(|(p, _)| p == pseudonym).cloned().collect();
        let records_removed = keys
            .iter()
            .filter_map(|k| self.records.remove(k))
            .map(|v| v.len())
            .sum();
        Ok(ShredReport { records_removed })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub request: Digest,
    pub requester: String,
    pub patient: String,
    pub category: RecordCategory,
    pub source_org: String,
    pub records: Vec<RecordEntry>,
    pub opened_at: u64,
    pub ttl: u64,
}

impl Session {
    pub fn expires_at(&self) -> u64 {
        self.opened_at.saturating_add(self.ttl)
    }

    pub fn is_expired(&self, now: u64) -> bool {
        now >= self.expires_at()
    }

    pub fn records_at(&self, now: u64) -> Result<&[RecordEntry], ExchangeError> {
        if self.is_expired(now) {
            return Err(ExchangeError::SessionExpired(self.session_id.clone()));
        }
        Ok(&self.records)
    }
}

/// Sessions held on a requester's node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionTable {
    live: BTreeMap<String, Session>,
    expired: BTreeSet<String>,
    opened: u64,
}

impl SessionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens `session` under a fresh id, ignoring its `session_id`, and
    /// returns that id.
    pub fn open(&mut self, mut session: Session) -> String {
        self.opened += 1;
        let session_id = format!("s{}", self.opened);
        session.session_id = session_id.clone();
        self.live.insert(session_id.clone(), session);
        session_id
    }

    /// Drops sessions with `opened_at + ttl <= now`; returns their ids.
    pub fn expire_sessions(&mut self, now: u64) -> Vec<String> {
        let gone: Vec<String> = self
            .live
            .values()
            .filter(|s| s.is_expired(now))
            .map(|s| s.session_id.clone())
            .collect();
        for id in &gone {
            self.live.remove(id);
            self.expired.insert(id.clone());
        }
        gone
    }

    pub fn get(&self, session_id: &str) -> Result<&Session, ExchangeError> {
        match self.live.get(session_id) {
            Some(s) => Ok(s),
            None if self.expired.contains(session_id) => Err(ExchangeError::SessionExpired(session_id.to_string())),
            None => Err(ExchangeError::UnknownSession(session_id.to_string())),
        }
    }

    pub fn live(&self) -> impl Iterator<Item = &Session> {
        self.live.values()
    }

    pub fn live_for<'a>(&'a self, requester: &'a str) -> impl Iterator<Item = &'a Session> + 'a {
        self.live.values().filter(move |s| s.requester == requester)
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

/// Convenience for the plain counting form of expiry.
pub fn expire_sessions(table: &mut SessionTable, now: u64) -> usize {
    table.expire_sessions(now).len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineRow {
    pub measured_at: u64,
    pub source_org: String,
    pub record_id: String,
    pub category: RecordCategory,
    pub value: String,
}

impl fmt::Display for TimelineRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.measured_at, self.source_org, self.category, self.value)
    }
}

/// Union of the sessions' records, restricted to the inclusive `window`,
/// ordered by (measured_at, source_org, record_id).
pub fn build_timeline<'a>(
    sessions: impl IntoIterator<Item = &'a Session>,
    window: Option<(u64, u64)>,
) -> Result<Vec<TimelineRow>, ExchangeError> {
    if let Some((from, to)) = window {
        if to < from {
            return Err(ExchangeError::InvertedWindow { from, to });
        }
    }
    let mut rows: BTreeMap<(u64, String, String), TimelineRow> = BTreeMap::new();
    for s in sessions {
        for r in &s.records {
            if window.is_some_and(|(from, to)| r.measured_at < from || r.measured_at > to) {
                continue;
            }
            rows.entry((r.measured_at, r.source_org.clone(), r.record_id.clone()))
                .or_insert_with(|| TimelineRow {
                    measured_at: r.measured_at,
                    source_org: r.source_org.clone(),
                    record_id: r.record_id.clone(),
                    category: r.category,
                    value: r.value.clone(),
                });
        }
    }
    Ok(rows.into_values().collect())
}

/// One line of the fixture store format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreLine {
    pub org: String,
    pub patient: String,
    pub category: RecordCategory,
    pub measured_at: u64,
    pub value: String,
    pub author: String,
}

/// Tab-separated: org, patient, category, measured_at, value, author.
/// Blank lines and `#` comments are skipped.
pub fn parse_store(text: &str) -> Result<Vec<StoreLine>, ExchangeError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let err = |msg: String| ExchangeError::Parse { line, msg };
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, found {}", f.len())));
        }
        out.push(StoreLine {
            org: f[0].to_string(),
            patient: f[1].to_string(),
            category: f[2].parse().map_err(|e| err(format!("{e}")))?,
            measured_at: f[3].parse().map_err(|_| err(format!("bad timestamp {:?}", f[3])))?,
            value: f[4].to_string(),
            author: f[5].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RecordCategory::*;

    fn store() -> OffChainStore {
        let mut s = OffChainStore::new("hospital");
        s.add_record("p001", Vitals, 30, "BP 128/80", "doc");
        s.add_record("p001", Vitals, 10, "BP 132/85", "doc");
        s.add_record("p001", Vitals, 20, "BP 130/84", "doc");
        s.add_record("p001", Notes, 5, "stable", "doc");
        s
    }

    #[test]
    fn fetch_is_time_ordered() {
        let s = store();
        let v: Vec<u64> = s.fetch_records("p001", Vitals).iter().map(|r| r.measured_at).collect();
        assert_eq!(v, [10, 20, 30]);
        assert!(s.fetch_records("p404", Vitals).is_empty());
        assert!(s.fetch_records("p001", Medication).is_empty());
    }

    #[test]
    fn unknown_category_is_rejected_when_parsing() {
        assert!("vitals".parse::<RecordCategory>().is_ok());
        assert!("xray".parse::<RecordCategory>().is_err());
    }

    #[test]
    fn shred_is_local() {
        let mut h = store();
        let mut hc = OffChainStore::new("homecare");
        hc.add_record("p001", Vitals, 15, "HR 70", "nurse");
        h.enroll("p001", [7; SALT_LEN], "Jan Jansen").unwrap();
        assert_eq!(h.shred_patient("p001"), Ok(ShredReport { records_removed: 4 }));
        assert!(h.fetch_records("p001", Vitals).is_empty());
        assert_eq!(hc.fetch_records("p001", Vitals).len(), 1);
        assert_eq!(
            h.shred_patient("p001"),
            Err(ExchangeError::UnknownPseudonym("p001".into()))
        );
    }

    fn opened(opened_at: u64) -> Session {
        Session {
            session_id: String::new(),
            request: Digest::ZERO,
            requester: "nurse".into(),
            patient: "p001".into(),
            category: Vitals,
            source_org: "hospital".into(),
            records: vec![],
            opened_at,
            ttl: 600_000,
        }
    }

    #[test]
    fn session_ttl_boundary() {
        let mut t = SessionTable::new();
        let a = t.open(opened(0));
        assert!(!t.get(&a).unwrap().is_expired(599_999));
        assert!(t.get(&a).unwrap().is_expired(600_000));
        t.open(opened(100));
        t.open(opened(900_000));
        assert_eq!(expire_sessions(&mut t, 700_000), 2);
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(&a), Err(ExchangeError::SessionExpired(a.clone())));
        assert_eq!(t.get("s99"), Err(ExchangeError::UnknownSession("s99".into())));
    }

    fn session(org: &str, times: &[u64]) -> Session {
        let mut st = OffChainStore::new(org);
        for &t in times {
            st.add_record("p001", Vitals, t, &format!("v{t}"), "x");
        }
        Session {
            session_id: format!("s-{org}"),
            request: Digest::ZERO,
            requester: "nurse".into(),
            patient: "p001".into(),
            category: Vitals,
            source_org: org.into(),
            records: st.fetch_records("p001", Vitals),
            opened_at: 0,
            ttl: DEFAULT_SESSION_TTL,
        }
    }

    #[test]
    fn timeline_merges_and_breaks_ties_by_org() {
        let h = session("hospital", &[10, 30]);
        let hc = session("homecare", &[20]);
        let rows = build_timeline([&h, &hc], None).unwrap();
        let got: Vec<(u64, &str)> = rows.iter().map(|r| (r.measured_at, r.source_org.as_str())).collect();
        assert_eq!(got, [(10, "hospital"), (20, "homecare"), (30, "hospital")]);

        let a = session("beta", &[5]);
        let b = session("alpha", &[5]);
        let rows = build_timeline([&a, &b], None).unwrap();
        assert_eq!(rows[0].source_org, "alpha");
        assert!(build_timeline([], None).unwrap().is_empty());
        assert_eq!(
            build_timeline([&a], Some((9, 3))),
            Err(ExchangeError::InvertedWindow { from: 9, to: 3 })
        );
        assert_eq!(build_timeline([&h, &hc], Some((20, 30))).unwrap().len(), 2);
        assert_eq!(rows[0].to_string(), "5\talpha\tvitals\tv5");
    }

    #[test]
    fn store_fixture_format() {
        let text = "# org\tpatient\n\nhospital\tp001\tvitals\t10\tBP 132/85\tdoc\n";
        let lines = parse_store(text).unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].value, "BP 132/85");
        assert!(matches!(
            parse_store("hospital\tp001\tvitals\tten\tx\tdoc"),
            Err(ExchangeError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_store("a\tb"), Err(ExchangeError::Parse { line: 1, .. })));
    }
}
