//! Contract state replicated on every node: registry, plans and grants,
//! request bookkeeping and consent.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::consent::{ConsentBook, ConsentError};
use crate::ledger::{Block, Digest, LedgerState, Payload, PrincipalId, PrincipalKind, Registry, Transaction};
use crate::policy::{self, AccessQuery, PolicyError, PolicyState, RecordCategory, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Consent(#[from] ConsentError),
    #[error("author {0} is not registered")]
    UnknownAuthor(PrincipalId),
    #[error("{author} cannot act on behalf of organization {org:?}")]
    BadAuthorOrg { author: PrincipalId, org: String },
    #[error("self-registration is only possible in the genesis block")]
    SelfRegistration,
    #[error("{principal} must be registered by its own organization")]
    SponsorMismatch { principal: PrincipalId },
    #[error("no recorded request {0}")]
    UnknownRequest(Digest),
    #[error("payload does not match request {0}")]
    RequestMismatch(Digest),
    #[error("request {0} is already completed")]
    AlreadyCompleted(Digest),
    #[error("request {0} already has an emergency record")]
    DuplicateEmergency(Digest),
    #[error("request {0} was not marked as an emergency")]
    NotEmergency(Digest),
    #[error("emergency completion of {0} lacks its flagged record")]
    MissingEmergencyRecord(Digest),
    #[error("only the sending organization may complete request {0}")]
    NotSender(Digest),
}

/// A committed DataRequestRecorded and what followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub tx_id: Digest,
    pub at: u64,
    pub requester: String,
    pub requester_org: String,
    pub sender_org: String,
    pub patient: String,
    pub category: RecordCategory,
    pub emergency: bool,
    pub emergency_tx: Option<Digest>,
    pub completion: Option<Digest>,
    pub verdict: Option<Verdict>,
}

impl RequestRecord {
    pub fn query(&self) -> AccessQuery {
        AccessQuery {
            requester: self.requester.clone(),
            requester_org: self.requester_org.clone(),
            sender_org: self.sender_org.clone(),
            patient: self.patient.clone(),
            category: self.category,
            at: self.at,
            emergency: self.emergency,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    pub registry: Registry,
    pub policy: PolicyState,
    pub consent: ConsentBook,
    requests: BTreeMap<Digest, RequestRecord>,
    sealed: bool,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays every committed transaction.
    pub fn from_ledger(ledger: &LedgerState) -> Result<Self, (Digest, ContractError)> {
        let mut w = WorldState::new();
        for b in ledger.blocks() {
            w.apply_block(b)?;
        }
        Ok(w)
    }

    pub fn request(&self, id: &Digest) -> Option<&RequestRecord> {
        self.requests.get(id)
    }

    pub fn requests(&self) -> impl Iterator<Item = &RequestRecord> {
        self.requests.values()
    }

    pub fn evaluate(&self, q: &AccessQuery) -> policy::Decision {
        self.policy.evaluate_request(&self.registry, q)
    }

    /// Applies a block's transactions in order. On error the state may hold
    /// a prefix of the block; callers validate on a clone first.
    pub fn apply_block(&mut self, block: &Block) -> Result<(), (Digest, ContractError)> {
        for tx in &block.transactions {
            self.apply(tx).map_err(|e| (tx.tx_id, e))?;
        }
        if block.height() == 0 {
            self.sealed = true;
        }
        Ok(())
    }

    /// Checks a block against a copy of the state without changing it.
    pub fn check_block(&self, block: &Block) -> Result<(), (Digest, ContractError)> {
        self.clone().apply_block(block)
    }

    /// Contract validity of one transaction. Signatures are checked by the
    /// chain layer; this covers authorship and state preconditions. A failed
    /// apply leaves the state unchanged.
    pub fn apply(&mut self, tx: &Transaction) -> Result<(), ContractError> {
        let author = tx.author();
        let org = tx.author_org();
        let payload = tx.payload();
        let self_reg = matches!(payload, Payload::RegisterPrincipal { principal, .. } if principal == author && author.is_org());
        if self_reg {
            if self.sealed {
                return Err(ContractError::SelfRegistration);
            }
            if org != author {
                return Err(ContractError::BadAuthorOrg {
                    author: author.clone(),
                    org: org.id.clone(),
                });
            }
        } else {
            self.check_author(author, org)?;
        }
        match payload {
            Payload::RegisterPrincipal { principal, org: binding, .. } => {
                if !self_reg {
                    let ok = match principal.kind {
                        PrincipalKind::Organization => author.is_org(),
                        _ => author.is_org() && binding.as_deref() == Some(author.id.as_str()),
                    };
                    if !ok {
                        return Err(ContractError::SponsorMismatch {
                            principal: principal.clone(),
                        });
                    }
                }
                let Payload::RegisterPrincipal {
                    principal,
                    public_key,
                    org,
                    identity_commitment,
                } = payload.clone()
                else {
                    unreachable!()
                };
                let p = policy::register_principal(&self.registry, principal, public_key, org, identity_commitment)?;
                self.registry.record(&p);
            }
            Payload::CreatePlan { .. }
            | Payload::BindPractitioner { .. }
            | Payload::GrantAccess { .. }
            | Payload::RevokeAccess { .. } => {
                self.policy.apply(&self.registry, author, tx.timestamp(), payload)?;
            }
            Payload::DataRequestRecorded {
                requester,
                requester_org,
                sender_org,
                patient,
                category,
                emergency,
            } => {
                if author.kind != PrincipalKind::Practitioner || &author.id != requester || &org.id != requester_org {
                    return Err(PolicyError::NotAuthorized(author.clone()).into());
                }
                for (kind, id) in [(PrincipalKind::Organization, sender_org), (PrincipalKind::Patient, patient)] {
                    if self.registry.lookup(kind, id).is_none() {
                        return Err(PolicyError::UnknownPrincipal { kind, id: id.clone() }.into());
                    }
                }
                self.requests.insert(
                    tx.tx_id,
                    RequestRecord {
                        tx_id: tx.tx_id,
                        at: tx.timestamp(),
                        requester: requester.clone(),
                        requester_org: requester_org.clone(),
                        sender_org: sender_org.clone(),
                        patient: patient.clone(),
                        category: *category,
                        emergency: *emergency,
                        emergency_tx: None,
                        completion: None,
                        verdict: None,
                    },
                );
            }
            Payload::EmergencyAccess {
                request,
                requester,
                patient,
                category,
                flagged,
            } => {
                let r = self.sender_request(author, request)?;
                if !r.emergency {
                    return Err(ContractError::NotEmergency(*request));
                }
                if r.emergency_tx.is_some() {
                    return Err(ContractError::DuplicateEmergency(*request));
                }
                if &r.requester != requester || &r.patient != patient || &r.category != category || !flagged {
                    return Err(ContractError::RequestMismatch(*request));
                }
                self.policy
                    .emergency_access(&self.registry, *request, &r.query())?;
                self.requests.get_mut(request).expect("checked").emergency_tx = Some(tx.tx_id);
            }
            Payload::AccessCompleted {
                request,
                patient,
                requester,
                verdict,
                reason,
                grant_id,
                ..
            } => {
                let r = self.sender_request(author, request)?;
                if r.completion.is_some() {
                    return Err(ContractError::AlreadyCompleted(*request));
                }
                if &r.requester != requester || &r.patient != patient {
                    return Err(ContractError::RequestMismatch(*request));
                }
                let consistent = match verdict {
                    Verdict::Allow => grant_id.is_some() && *reason == policy::Reason::ValidGrant,
                    Verdict::AllowEmergency => grant_id.is_none() && *reason == policy::Reason::EmergencyOverride,
                    Verdict::Deny => grant_id.is_none(),
                };
                if !consistent {
                    return Err(ContractError::RequestMismatch(*request));
                }
                if *verdict == Verdict::AllowEmergency && r.emergency_tx.is_none() {
                    return Err(ContractError::MissingEmergencyRecord(*request));
                }
                let r = self.requests.get_mut(request).expect("checked");
                r.completion = Some(tx.tx_id);
                r.verdict = Some(*verdict);
            }
            Payload::RegisterStudy { .. }
            | Payload::ConsentInvited { .. }
            | Payload::QuizAttemptRecorded { .. }
            | Payload::ConsentSigned { .. }
            | Payload::ConsentWithdrawn { .. }
            | Payload::ProfilePublished { .. } => {
                self.consent
                    .apply(&self.registry, tx.tx_id, author, tx.timestamp(), payload)?;
            }
        }
        Ok(())
    }

    fn check_author(&self, author: &PrincipalId, org: &PrincipalId) -> Result<(), ContractError> {
        let rec = self
            .registry
            .get(author)
            .ok_or_else(|| ContractError::UnknownAuthor(author.clone()))?;
        let acting_for_own = if author.is_org() {
            author == org
        } else {
            org.is_org() && rec.org.as_deref() == Some(org.id.as_str())
        };
        if !acting_for_own || !self.registry.contains(org) {
            return Err(ContractError::BadAuthorOrg {
                author: author.clone(),
                org: org.id.clone(),
            });
        }
        Ok(())
    }

    fn sender_request(&self, author: &PrincipalId, request: &Digest) -> Result<&RequestRecord, ContractError> {
        let r = self
            .requests
            .get(request)
            .ok_or(ContractError::UnknownRequest(*request))?;
        if !author.is_org() || author.id != r.sender_org {
            return Err(ContractError::NotSender(*request));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use ed25519_dalek::SigningKey;

    use super::*;
    use crate::ledger::{key_from_seed, TxBody};
    use crate::policy::{Decision, Reason};

    fn pid(kind: PrincipalKind, id: &str) -> PrincipalId {
        PrincipalId::new(kind, id).unwrap()
    }

    fn org(id: &str) -> PrincipalId {
        PrincipalId::org(id).unwrap()
    }

    struct Net {
        world: WorldState,
        keys: BTreeMap<PrincipalId, SigningKey>,
        clock: u64,
    }

    impl Net {
        fn new(orgs: &[&str]) -> Self {
            let mut n = Net {
                world: WorldState::new(),
                keys: BTreeMap::new(),
                clock: 0,
            };
            let mut txs = Vec::new();
            for (i, o) in orgs.iter().enumerate() {
                let k = key_from_seed(&[i as u8 + 1; 32]);
                let p = Payload::RegisterPrincipal {
                    principal: org(o),
                    public_key: k.verifying_key().to_bytes(),
                    org: None,
                    identity_commitment: None,
                };
                txs.push(TxBody::new(0, org(o), org(o), p).sign(&k).unwrap());
                n.keys.insert(org(o), k);
            }
            n.world.apply_block(&Block::genesis(txs, org(orgs[0]), 0)).unwrap();
            n
        }

        fn tx(&mut self, author: &PrincipalId, via: &str, p: Payload) -> Transaction {
            self.clock += 10;
            TxBody::new(self.clock, author.clone(), org(via), p)
                .sign(&self.keys[author])
                .unwrap()
        }

        fn submit(&mut self, author: &PrincipalId, via: &str, p: Payload) -> Result<Digest, ContractError> {
            let tx = self.tx(author, via, p);
            self.world.apply(&tx).map(|_| tx.tx_id)
        }

        fn register(&mut self, kind: PrincipalKind, id: &str, home: &str, seed: u8) {
            let k = key_from_seed(&[seed; 32]);
            let p = Payload::RegisterPrincipal {
                principal: pid(kind, id),
                public_key: k.verifying_key().to_bytes(),
                org: Some(home.into()),
                identity_commitment: None,
            };
            self.keys.insert(pid(kind, id), k);
            self.submit(&org(home), home, p).unwrap();
        }
    }

    fn case1() -> Net {
        let mut n = Net::new(&["hospital", "homecare", "pharmacy"]);
        n.register(PrincipalKind::Practitioner, "nurse", "homecare", 20);
        n.register(PrincipalKind::Patient, "p001", "hospital", 21);
        let p = n
            .world
            .policy
            .create_plan(&n.world.registry, "plan1", "p001", &["homecare".into(), "hospital".into()], &["nurse".into()])
            .unwrap();
        n.submit(&org("hospital"), "hospital", p).unwrap();
        n
    }

    fn request(n: &mut Net, emergency: bool) -> Digest {
        n.submit(
            &pid(PrincipalKind::Practitioner, "nurse"),
            "homecare",
            Payload::DataRequestRecorded {
                requester: "nurse".into(),
                requester_org: "homecare".into(),
                sender_org: "hospital".into(),
                patient: "p001".into(),
                category: RecordCategory::Vitals,
                emergency,
            },
        )
        .unwrap()
    }

    fn completion(request: Digest, d: &Decision) -> Payload {
        Payload::AccessCompleted {
            request,
            patient: "p001".into(),
            requester: "nurse".into(),
            verdict: d.verdict,
            reason: d.reason,
            grant_id: d.grant_id.clone(),
            record_count: 0,
        }
    }

    #[test]
    fn self_registration_only_in_genesis() {
        let mut n = Net::new(&["hospital"]);
        let k = key_from_seed(&[9; 32]);
        n.keys.insert(org("rogue"), k.clone());
        let p = Payload::RegisterPrincipal {
            principal: org("rogue"),
            public_key: k.verifying_key().to_bytes(),
            org: None,
            identity_commitment: None,
        };
        assert_eq!(n.submit(&org("rogue"), "rogue", p.clone()), Err(ContractError::SelfRegistration));
        n.submit(&org("hospital"), "hospital", p).unwrap();
        assert_eq!(n.world.registry.orgs(), ["hospital", "rogue"]);
    }

    #[test]
    fn practitioner_must_be_registered_by_employer() {
        let mut n = Net::new(&["hospital", "homecare"]);
        let p = Payload::RegisterPrincipal {
            principal: pid(PrincipalKind::Practitioner, "nurse"),
            public_key: [1; 32],
            org: Some("homecare".into()),
            identity_commitment: None,
        };
        assert!(matches!(
            n.submit(&org("hospital"), "hospital", p),
            Err(ContractError::SponsorMismatch { .. })
        ));
    }

    #[test]
    fn request_round_trip_with_deny() {
        let mut n = case1();
        let r = request(&mut n, false);
        let rec = n.world.request(&r).unwrap().clone();
        let d = n.world.evaluate(&rec.query());
        assert_eq!(d, Decision::deny(Reason::NoGrant));
        assert!(matches!(
            n.submit(&org("homecare"), "homecare", completion(r, &d)),
            Err(ContractError::NotSender(_))
        ));
        n.submit(&org("hospital"), "hospital", completion(r, &d)).unwrap();
        assert_eq!(
            n.submit(&org("hospital"), "hospital", completion(r, &d)),
            Err(ContractError::AlreadyCompleted(r))
        );
        assert_eq!(n.world.request(&r).unwrap().verdict, Some(Verdict::Deny));
    }

    #[test]
    fn emergency_completion_needs_flagged_record() {
        let mut n = case1();
        let r = request(&mut n, true);
        let rec = n.world.request(&r).unwrap().clone();
        let d = n.world.evaluate(&rec.query());
        assert_eq!(d, Decision::emergency());
        assert_eq!(
            n.submit(&org("hospital"), "hospital", completion(r, &d)),
            Err(ContractError::MissingEmergencyRecord(r))
        );
        let (_, flagged) = n
            .world
            .policy
            .emergency_access(&n.world.registry, r, &rec.query())
            .unwrap();
        n.submit(&org("hospital"), "hospital", flagged.clone()).unwrap();
        assert_eq!(
            n.submit(&org("hospital"), "hospital", flagged),
            Err(ContractError::DuplicateEmergency(r))
        );
        n.submit(&org("hospital"), "hospital", completion(r, &d)).unwrap();
    }

    #[test]
    fn author_must_act_for_own_org() {
        let mut n = case1();
        let p = Payload::DataRequestRecorded {
            requester: "nurse".into(),
            requester_org: "hospital".into(),
            sender_org: "hospital".into(),
            patient: "p001".into(),
            category: RecordCategory::Vitals,
            emergency: false,
        };
        assert!(matches!(
            n.submit(&pid(PrincipalKind::Practitioner, "nurse"), "hospital", p),
            Err(ContractError::BadAuthorOrg { .. })
        ));
    }

    #[test]
    fn failed_apply_leaves_state_unchanged() {
        let mut n = case1();
        let before = n.world.clone();
        let g = Payload::GrantAccess {
            grant_id: "g1".into(),
            plan_id: "plan1".into(),
            patient: "p001".into(),
            grantee: "nurse".into(),
            scope: vec![RecordCategory::Vitals],
            valid_from: 5,
            valid_until: 5,
        };
        assert!(n.submit(&pid(PrincipalKind::Patient, "p001"), "hospital", g).is_err());
        assert_eq!(n.world, before);
    }
}
