//! Treatment plans, patient-issued access grants, and request evaluation.
//!
//! A patient's plan binds member organizations and their practitioners. The
//! patient grants individual practitioners time-boxed, category-scoped access;
//! the data-holding organization evaluates every incoming request against the
//! committed grants. Emergency requests from practitioners on one of the
//! patient's plans are allowed without a grant and flagged for review.

mod types;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ledger::{Digest, Payload, PrincipalId, PrincipalKind, Registry};
pub use types::{Decision, Reason, RecordCategory, UnknownVariant, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("{0} is already registered")]
    DuplicatePrincipal(PrincipalId),
    #[error("unknown {kind} {id:?}")]
    UnknownPrincipal { kind: PrincipalKind, id: String },
    #[error("practitioner registration needs an organization binding")]
    MissingOrgBinding,
    #[error("organizations cannot be bound to another organization")]
    UnexpectedOrgBinding,
    #[error("plan {0:?} already exists")]
    DuplicatePlan(String),
    #[error("plan {0:?} does not exist")]
    UnknownPlan(String),
    #[error("a plan needs at least one member organization")]
    EmptyPlan,
    #[error("practitioner {practitioner:?} is bound to {org:?}, which is not a member of the plan")]
    PractitionerOutsidePlan { practitioner: String, org: String },
    #[error("{0:?} is not the patient of this plan")]
    NotPlanPatient(String),
    #[error("grantee {0:?} is not bound to a member organization of the plan")]
    GranteeNotInPlan(String),
    #[error("grant scope is empty")]
    EmptyScope,
    #[error("validity window [{from}, {until}) is empty")]
    EmptyWindow { from: u64, until: u64 },
    #[error("grant {0:?} already exists")]
    DuplicateGrant(String),
    #[error("grant {0:?} does not exist")]
    UnknownGrant(String),
    #[error("grant {0:?} is already revoked")]
    AlreadyRevoked(String),
    #[error("practitioner {0:?} is not on any plan of this patient")]
    NotOnAnyPlan(String),
    #[error("plan payload does not match registered practitioner bindings")]
    MismatchedBinding,
    #[error("{0} may not author this transaction")]
    NotAuthorized(PrincipalId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentPlan {
    pub plan_id: String,
    pub patient: String,
    pub member_orgs: BTreeSet<String>,
    /// (practitioner, organization) bindings.
    pub practitioners: BTreeSet<(String, String)>,
    pub created_at: u64,
}

impl TreatmentPlan {
    pub fn has_practitioner(&self, practitioner: &str) -> bool {
        self.practitioners.iter().any(|(p, _)| p == practitioner)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessGrant {
    pub grant_id: String,
    pub plan_id: String,
    pub grantor: String,
    pub grantee: String,
    pub scope: BTreeSet<RecordCategory>,
    /// Half-open validity window `[valid_from, valid_until)`.
    pub valid_from: u64,
    pub valid_until: u64,
    pub revoked_at: Option<u64>,
}

impl AccessGrant {
    pub fn in_window(&self, at: u64) -> bool {
        self.valid_from <= at && at < self.valid_until
    }

    pub fn revoked_by(&self, at: u64) -> bool {
        self.revoked_at.is_some_and(|r| at >= r)
    }
}

/// A data request as seen by the organization holding the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessQuery {
    pub requester: String,
    pub requester_org: String,
    pub sender_org: String,
    pub patient: String,
    pub category: RecordCategory,
    pub at: u64,
    pub emergency: bool,
}

/// Plans and grants derived from committed transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyState {
    plans: BTreeMap<String, TreatmentPlan>,
    /// Grants in commit order.
    grants: Vec<AccessGrant>,
    grant_index: BTreeMap<String, usize>,
}

fn principal_of(registry: &Registry, kind: PrincipalKind, id: &str) -> Result<(), PolicyError> {
    registry
        .lookup(kind, id)
        .map(|_| ())
        .ok_or_else(|| PolicyError::UnknownPrincipal {
            kind,
            id: id.to_string(),
        })
}

fn bound_org<'r>(registry: &'r Registry, practitioner: &str) -> Result<&'r str, PolicyError> {
    registry
        .lookup(PrincipalKind::Practitioner, practitioner)
        .and_then(|r| r.org.as_deref())
        .ok_or_else(|| PolicyError::UnknownPrincipal {
            kind: PrincipalKind::Practitioner,
            id: practitioner.to_string(),
        })
}

/// Validates a principal registration and produces its payload.
pub fn register_principal(
    registry: &Registry,
    principal: PrincipalId,
    public_key: [u8; 32],
    org: Option<String>,
    identity_commitment: Option<Digest>,
) -> Result<Payload, PolicyError> {
    if registry.contains(&principal) {
        return Err(PolicyError::DuplicatePrincipal(principal));
    }
    match (principal.kind, &org) {
        (PrincipalKind::Organization, Some(_)) => return Err(PolicyError::UnexpectedOrgBinding),
        (PrincipalKind::Practitioner, None) => return Err(PolicyError::MissingOrgBinding),
        (_, Some(o)) => principal_of(registry, PrincipalKind::Organization, o)?,
        _ => {}
    }
    Ok(Payload::RegisterPrincipal {
        principal,
        public_key,
        org,
        identity_commitment,
    })
}

impl PolicyState {
    pub fn plan(&self, plan_id: &str) -> Option<&TreatmentPlan> {
        self.plans.get(plan_id)
    }

    pub fn plans(&self) -> impl Iterator<Item = &TreatmentPlan> {
        self.plans.values()
    }

    pub fn grant(&self, grant_id: &str) -> Option<&AccessGrant> {
        self.grant_index.get(grant_id).map(|&i| &self.grants[i])
    }

    /// Grants in commit order.
    pub fn grants(&self) -> &[AccessGrant] {
        &self.grants
    }

    pub fn plans_of<'a>(&'a self, patient: &'a str) -> impl Iterator<Item = &'a TreatmentPlan> + 'a {
        self.plans.values().filter(move |p| p.patient == patient)
    }

    pub fn create_plan(
        &self,
        registry: &Registry,
        plan_id: &str,
        patient: &str,
        member_orgs: &[String],
        practitioners: &[String],
    ) -> Result<Payload, PolicyError> {
        if self.plans.contains_key(plan_id) {
            return Err(PolicyError::DuplicatePlan(plan_id.to_string()));
        }
        if member_orgs.is_empty() {
            return Err(PolicyError::EmptyPlan);
        }
        principal_of(registry, PrincipalKind::Patient, patient)?;
        for o in member_orgs {
            principal_of(registry, PrincipalKind::Organization, o)?;
        }
        let mut bindings = BTreeSet::new();
        for p in practitioners {
            let org = bound_org(registry, p)?;
            if !member_orgs.iter().any(|m| m == org) {
                return Err(PolicyError::PractitionerOutsidePlan {
                    practitioner: p.clone(),
                    org: org.to_string(),
                });
            }
            bindings.insert((p.clone(), org.to_string()));
        }
        let members: BTreeSet<String> = member_orgs.iter().cloned().collect();
        Ok(Payload::CreatePlan {
            plan_id: plan_id.to_string(),
            patient: patient.to_string(),
            member_orgs: members.into_iter().collect(),
            practitioners: bindings.into_iter().collect(),
        })
    }

    pub fn bind_practitioner(&self, registry: &Registry, plan_id: &str, practitioner: &str) -> Result<Payload, PolicyError> {
        let plan = self
            .plans
            .get(plan_id)
            .ok_or_else(|| PolicyError::UnknownPlan(plan_id.to_string()))?;
        let org = bound_org(registry, practitioner)?;
        if !plan.member_orgs.contains(org) {
            return Err(PolicyError::PractitionerOutsidePlan {
                practitioner: practitioner.to_string(),
                org: org.to_string(),
            });
        }
        Ok(Payload::BindPractitioner {
            plan_id: plan_id.to_string(),
            practitioner: practitioner.to_string(),
            org: org.to_string(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grant_access(
        &self,
        registry: &Registry,
        grant_id: &str,
        patient: &str,
        plan_id: &str,
        grantee: &str,
        scope: &[RecordCategory],
        valid_from: u64,
        valid_until: u64,
    ) -> Result<Payload, PolicyError> {
        if self.grant_index.contains_key(grant_id) {
            return Err(PolicyError::DuplicateGrant(grant_id.to_string()));
        }
        let plan = self
            .plans
            .get(plan_id)
            .ok_or_else(|| PolicyError::UnknownPlan(plan_id.to_string()))?;
        if plan.patient != patient {
            return Err(PolicyError::NotPlanPatient(patient.to_string()));
        }
        let org = bound_org(registry, grantee)?;
        if !plan.member_orgs.contains(org) {
            return Err(PolicyError::GranteeNotInPlan(grantee.to_string()));
        }
        if scope.is_empty() {
            return Err(PolicyError::EmptyScope);
        }
        if valid_from >= valid_until {
            return Err(PolicyError::EmptyWindow {
                from: valid_from,
                until: valid_until,
            });
        }
        let scope: BTreeSet<RecordCategory> = scope.iter().copied().collect();
        Ok(Payload::GrantAccess {
            grant_id: grant_id.to_string(),
            plan_id: plan_id.to_string(),
            patient: patient.to_string(),
            grantee: grantee.to_string(),
            scope: scope.into_iter().collect(),
            valid_from,
            valid_until,
        })
    }

    pub fn revoke_access(&self, patient: &str, grant_id: &str) -> Result<Payload, PolicyError> {
        let grant = self
            .grant(grant_id)
            .ok_or_else(|| PolicyError::UnknownGrant(grant_id.to_string()))?;
        if grant.grantor != patient {
            return Err(PolicyError::NotPlanPatient(patient.to_string()));
        }
        if grant.revoked_at.is_some() {
            return Err(PolicyError::AlreadyRevoked(grant_id.to_string()));
        }
        Ok(Payload::RevokeAccess {
            grant_id: grant_id.to_string(),
            patient: patient.to_string(),
        })
    }

    /// Re-validates a committed policy payload authored by `author` at
    /// `timestamp` and folds it into the state. Non-policy payloads are ignored.
    pub fn apply(&mut self, registry: &Registry, author: &PrincipalId, timestamp: u64, payload: &Payload) -> Result<(), PolicyError> {
        let deny = || Err(PolicyError::NotAuthorized(author.clone()));
        match payload {
            Payload::CreatePlan {
                plan_id,
                patient,
                member_orgs,
                practitioners,
            } => {
                if !author.is_org() || !member_orgs.contains(&author.id) {
                    return deny();
                }
                let names: Vec<String> = practitioners.iter().map(|(p, _)| p.clone()).collect();
                let canonical = self.create_plan(registry, plan_id, patient, member_orgs, &names)?;
                if &canonical != payload {
                    return Err(PolicyError::MismatchedBinding);
                }
                self.plans.insert(
                    plan_id.clone(),
                    TreatmentPlan {
                        plan_id: plan_id.clone(),
                        patient: patient.clone(),
                        member_orgs: member_orgs.iter().cloned().collect(),
                        practitioners: practitioners.iter().cloned().collect(),
                        created_at: timestamp,
                    },
                );
            }
            Payload::BindPractitioner {
                plan_id,
                practitioner,
                org,
            } => {
                self.bind_practitioner(registry, plan_id, practitioner)?;
                if !author.is_org() || &author.id != org {
                    return deny();
                }
                let plan = self.plans.get_mut(plan_id).expect("checked above");
                plan.practitioners.insert((practitioner.clone(), org.clone()));
            }
            Payload::GrantAccess {
                grant_id,
                plan_id,
                patient,
                grantee,
                scope,
                valid_from,
                valid_until,
            } => {
                if author.kind != PrincipalKind::Patient || &author.id != patient {
                    return deny();
                }
                self.grant_access(registry, grant_id, patient, plan_id, grantee, scope, *valid_from, *valid_until)?;
                self.grant_index.insert(grant_id.clone(), self.grants.len());
                self.grants.push(AccessGrant {
                    grant_id: grant_id.clone(),
                    plan_id: plan_id.clone(),
                    grantor: patient.clone(),
                    grantee: grantee.clone(),
                    scope: scope.iter().copied().collect(),
                    valid_from: *valid_from,
                    valid_until: *valid_until,
                    revoked_at: None,
                });
            }
            Payload::RevokeAccess { grant_id, patient } => {
                if author.kind != PrincipalKind::Patient || &author.id != patient {
                    return deny();
                }
                self.revoke_access(patient, grant_id)?;
                let i = self.grant_index[grant_id];
                self.grants[i].revoked_at = Some(timestamp);
            }
            _ => {}
        }
        Ok(())
    }

    /// Practitioners on at least one plan of the patient may break the glass.
    pub fn emergency_eligible(&self, requester: &str, patient: &str) -> bool {
        self.plans_of(patient).any(|p| p.has_practitioner(requester))
    }

    /// Pure evaluation over committed state. Checks run in a fixed order and
    /// the first failing one names the deny reason: unknown principal, plan
    /// membership, grant existence, scope, window, revocation.
    pub fn evaluate_request(&self, registry: &Registry, q: &AccessQuery) -> Decision {
        let known = bound_org(registry, &q.requester).ok() == Some(q.requester_org.as_str())
            && registry.is_org(&q.requester_org)
            && registry.is_org(&q.sender_org)
            && registry.lookup(PrincipalKind::Patient, &q.patient).is_some();
        if !known {
            return Decision::deny(Reason::UnknownPrincipal);
        }
        let decision = self.evaluate_grants(q);
        if decision.verdict == Verdict::Deny && q.emergency && self.emergency_eligible(&q.requester, &q.patient) {
            return Decision::emergency();
        }
        decision
    }

    fn evaluate_grants(&self, q: &AccessQuery) -> Decision {
        let plans: BTreeSet<&str> = self
            .plans_of(&q.patient)
            .filter(|p| p.member_orgs.contains(&q.requester_org) && p.member_orgs.contains(&q.sender_org))
            .map(|p| p.plan_id.as_str())
            .collect();
        if plans.is_empty() {
            return Decision::deny(Reason::NotPlanMember);
        }
        let candidates: Vec<&AccessGrant> = self
            .grants
            .iter()
            .filter(|g| plans.contains(g.plan_id.as_str()) && g.grantee == q.requester)
            .collect();
        if candidates.is_empty() {
            return Decision::deny(Reason::NoGrant);
        }
        let scoped: Vec<&AccessGrant> = candidates
            .into_iter()
            .filter(|g| g.scope.contains(&q.category))
            .collect();
        if scoped.is_empty() {
            return Decision::deny(Reason::OutOfScope);
        }
        let current: Vec<&AccessGrant> = scoped.into_iter().filter(|g| g.in_window(q.at)).collect();
        if current.is_empty() {
            return Decision::deny(Reason::Expired);
        }
        match current.into_iter().find(|g| !g.revoked_by(q.at)) {
            Some(g) => Decision::allow(g.grant_id.clone()),
            None => Decision::deny(Reason::Revoked),
        }
    }

    /// Break-glass access. Always allowed for eligible practitioners; the
    /// returned payload is the flagged review record for `request`.
    pub fn emergency_access(
        &self,
        registry: &Registry,
        request: Digest,
        q: &AccessQuery,
    ) -> Result<(Decision, Payload), PolicyError> {
        principal_of(registry, PrincipalKind::Practitioner, &q.requester)?;
        principal_of(registry, PrincipalKind::Patient, &q.patient)?;
        if !self.emergency_eligible(&q.requester, &q.patient) {
            return Err(PolicyError::NotOnAnyPlan(q.requester.clone()));
        }
        Ok((
            Decision::emergency(),
            Payload::EmergencyAccess {
                request,
                requester: q.requester.clone(),
                patient: q.patient.clone(),
                category: q.category,
                flagged: true,
            },
        ))
    }
}
