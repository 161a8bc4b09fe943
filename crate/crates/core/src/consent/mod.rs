//! Research consent: studies with a comprehension quiz, the per-participant
//! lifecycle, the researcher dashboard and meta-data profile matching.
//!
//! The chain carries study ids, quiz hashes, attempt ordinals with mistake
//! counts, and signatures. Quiz text, answers and per-question detail stay
//! off chain.

mod profile;
mod quiz;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ed25519_dalek::{Signer, SigningKey};
use thiserror::Error;

use crate::ledger::codec::Writer;
use crate::ledger::tx::verify_signature;
use crate::ledger::codec::MAX_ID_LEN;
use crate::ledger::{Digest, Payload, PrincipalId, PrincipalKind, Registry, SignatureBytes};
pub use profile::{
    descriptor_commitment, match_participants, Challenge, Disclosure, ParticipantWallet, ProfileRecord,
    DESCRIPTOR_SALT_LEN,
};
pub use quiz::{Grade, Question, Quiz, QuizError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsentError {
    #[error(transparent)]
    Quiz(#[from] QuizError),
    #[error("study {0:?} already exists")]
    DuplicateStudy(String),
    #[error("study {0:?} does not exist")]
    UnknownStudy(String),
    #[error("a study needs at least one researcher")]
    NoResearchers,
    #[error("{who:?} is not a researcher of study {study:?}")]
    NotResearcher { who: String, study: String },
    #[error("unknown {kind} {id:?}")]
    UnknownPrincipal { kind: PrincipalKind, id: String },
    #[error("{participant:?} is already invited to {study:?}")]
    DuplicateInvitation { study: String, participant: String },
    #[error("{participant:?} is not invited to {study:?}")]
    NotInvited { study: String, participant: String },
    #[error("cannot {action} in state {state}")]
    IllegalTransition { state: ConsentState, action: &'static str },
    #[error("quiz does not match the hash registered for {0:?}")]
    QuizMismatch(String),
    #[error("attempt ordinal {got}, expected {expected}")]
    AttemptOrdinal { expected: u32, got: u32 },
    #[error("{mistakes} mistakes recorded on a {questions}-question quiz")]
    MistakeCount { mistakes: u32, questions: u32 },
    #[error("consent signature does not verify")]
    BadConsentSignature,
    #[error("signed attempt is not the recorded passing attempt")]
    WrongPassingAttempt,
    #[error("profile needs at least one source descriptor")]
    EmptyProfile,
    #[error("match query needs at least one descriptor")]
    EmptyQuery,
    #[error("{0} may not author this transaction")]
    NotAuthorized(PrincipalId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConsentState {
    Invited,
    Attempted,
    Passed,
    Signed,
    Withdrawn,
}

impl ConsentState {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsentState::Invited => "invited",
            ConsentState::Attempted => "attempted",
            ConsentState::Passed => "passed",
            ConsentState::Signed => "signed",
            ConsentState::Withdrawn => "withdrawn",
        }
    }

    /// Passing is sticky: a later failed attempt does not undo it.
    pub fn after_attempt(self, passed: bool) -> Option<ConsentState> {
        match self {
            ConsentState::Invited | ConsentState::Attempted => Some(if passed {
                ConsentState::Passed
            } else {
                ConsentState::Attempted
            }),
            ConsentState::Passed => Some(ConsentState::Passed),
            ConsentState::Signed | ConsentState::Withdrawn => None,
        }
    }
}

impl fmt::Display for ConsentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Study content; only the id, researchers and quiz hash go on chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Study {
    pub study_id: String,
    pub researchers: BTreeSet<String>,
    pub title: String,
    pub description: String,
    pub quiz: Quiz,
    pub outcome_notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyRecord {
    pub study_id: String,
    pub researchers: BTreeSet<String>,
    pub quiz_hash: Digest,
    pub question_count: u32,
    pub max_mistakes: u32,
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptRecord {
    pub tx_id: Digest,
    pub ordinal: u32,
    pub mistakes: u32,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsentLifecycle {
    pub study_id: String,
    pub participant: String,
    pub state: ConsentState,
    pub invited_at: u64,
    pub attempts: Vec<AttemptRecord>,
    /// Latest attempt that met the pass rule.
    pub passing_attempt: Option<Digest>,
    pub signed_at: Option<u64>,
    pub withdrawn_at: Option<u64>,
}

impl ConsentLifecycle {
    pub fn total_mistakes(&self) -> u32 {
        self.attempts.iter().map(|a| a.mistakes).sum()
    }
}

/// Bytes the participant signs: study id, quiz hash, passing attempt tx id.
pub fn consent_message(study_id: &str, quiz_hash: &Digest, passing_attempt: &Digest) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("study_id", study_id, MAX_ID_LEN)
        .expect("study ids are bounded on registration");
    w.raw(quiz_hash.as_bytes());
    w.raw(passing_attempt.as_bytes());
    w.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusRow {
    pub participant: String,
    pub state: ConsentState,
    pub attempts: usize,
    pub mistakes: u32,
    /// Per-question wrong-answer counts, when the participant shares them.
    pub struggles: Option<Vec<u32>>,
    pub signed_at: Option<u64>,
}

pub const DASHBOARD_HEADER: &str = "participant\tstate\tattempts\tmistakes\tstruggles\tsigned_at";

impl fmt::Display for StatusRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let struggles = match &self.struggles {
            Some(v) => v.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
            None => "-".into(),
        };
        let signed = self.signed_at.map_or("-".into(), |t| t.to_string());
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.participant, self.state, self.attempts, self.mistakes, struggles, signed
        )
    }
}

/// Consent state derived from committed transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsentBook {
    studies: BTreeMap<String, StudyRecord>,
    cases: BTreeMap<(String, String), ConsentLifecycle>,
    profiles: BTreeMap<String, ProfileRecord>,
}

fn require(registry: &Registry, kind: PrincipalKind, id: &str) -> Result<(), ConsentError> {
    match registry.lookup(kind, id) {
        Some(_) => Ok(()),
        None => Err(ConsentError::UnknownPrincipal {
            kind,
            id: id.to_string(),
        }),
    }
}

impl ConsentBook {
    pub fn study(&self, study_id: &str) -> Option<&StudyRecord> {
        self.studies.get(study_id)
    }

    pub fn studies(&self) -> impl Iterator<Item = &StudyRecord> {
        self.studies.values()
    }

    pub fn lifecycle(&self, study_id: &str, participant: &str) -> Option<&ConsentLifecycle> {
        self.cases.get(&(study_id.to_string(), participant.to_string()))
    }

    pub fn lifecycles<'a>(&'a self, study_id: &'a str) -> impl Iterator<Item = &'a ConsentLifecycle> + 'a {
        self.cases.values().filter(move |c| c.study_id == study_id)
    }

    pub fn profiles(&self) -> &BTreeMap<String, ProfileRecord> {
        &self.profiles
    }

    pub fn profile(&self, participant: &str) -> Option<&ProfileRecord> {
        self.profiles.get(participant)
    }

    /// Research use is permitted only while consent is signed.
    pub fn consent_valid(&self, study_id: &str, participant: &str) -> bool {
        self.lifecycle(study_id, participant)
            .is_some_and(|c| c.state == ConsentState::Signed)
    }

    fn study_or_err(&self, study_id: &str) -> Result<&StudyRecord, ConsentError> {
        self.studies
            .get(study_id)
            .ok_or_else(|| ConsentError::UnknownStudy(study_id.to_string()))
    }

    fn case_or_err(&self, study_id: &str, participant: &str) -> Result<&ConsentLifecycle, ConsentError> {
        self.study_or_err(study_id)?;
        self.lifecycle(study_id, participant)
            .ok_or_else(|| ConsentError::NotInvited {
                study: study_id.to_string(),
                participant: participant.to_string(),
            })
    }

    fn researcher_of<'a>(&'a self, study_id: &str, who: &str) -> Result<&'a StudyRecord, ConsentError> {
        let s = self.study_or_err(study_id)?;
        if !s.researchers.contains(who) {
            return Err(ConsentError::NotResearcher {
                who: who.to_string(),
                study: study_id.to_string(),
            });
        }
        Ok(s)
    }

    pub fn register_study(&self, registry: &Registry, researcher: &str, study: &Study) -> Result<Payload, ConsentError> {
        study.quiz.validate()?;
        self.check_registration(registry, researcher, &study.study_id, &study.researchers)?;
        Ok(Payload::RegisterStudy {
            study_id: study.study_id.clone(),
            researchers: study.researchers.iter().cloned().collect(),
            quiz_hash: study.quiz.hash(),
            question_count: study.quiz.len() as u32,
            max_mistakes: study.quiz.max_mistakes,
        })
    }

    fn check_registration(
        &self,
        registry: &Registry,
        author: &str,
        study_id: &str,
        researchers: &BTreeSet<String>,
    ) -> Result<(), ConsentError> {
        if self.studies.contains_key(study_id) {
            return Err(ConsentError::DuplicateStudy(study_id.to_string()));
        }
        if researchers.is_empty() {
            return Err(ConsentError::NoResearchers);
        }
        for r in researchers {
            require(registry, PrincipalKind::Researcher, r)?;
        }
        if !researchers.contains(author) {
            return Err(ConsentError::NotResearcher {
                who: author.to_string(),
                study: study_id.to_string(),
            });
        }
        Ok(())
    }

    pub fn invite(&self, registry: &Registry, researcher: &str, study_id: &str, participant: &str) -> Result<Payload, ConsentError> {
        self.researcher_of(study_id, researcher)?;
        require(registry, PrincipalKind::Participant, participant)?;
        if self.lifecycle(study_id, participant).is_some() {
            return Err(ConsentError::DuplicateInvitation {
                study: study_id.to_string(),
                participant: participant.to_string(),
            });
        }
        Ok(Payload::ConsentInvited {
            study_id: study_id.to_string(),
            participant: participant.to_string(),
        })
    }

    /// Grades off chain; the payload carries only the ordinal and mistake count.
    pub fn submit_attempt(&self, study: &Study, participant: &str, answers: &[usize]) -> Result<(Grade, Payload), ConsentError> {
        let record = self.study_or_err(&study.study_id)?;
        if record.quiz_hash != study.quiz.hash() {
            return Err(ConsentError::QuizMismatch(study.study_id.clone()));
        }
        let case = self.case_or_err(&study.study_id, participant)?;
        if case.state.after_attempt(false).is_none() {
            return Err(ConsentError::IllegalTransition {
                state: case.state,
                action: "attempt",
            });
        }
        let grade = study.quiz.grade(answers)?;
        let payload = Payload::QuizAttemptRecorded {
            study_id: study.study_id.clone(),
            participant: participant.to_string(),
            ordinal: case.attempts.len() as u32 + 1,
            mistakes: grade.mistakes,
        };
        Ok((grade, payload))
    }

    pub fn sign_consent(&self, study_id: &str, participant: &str, key: &SigningKey) -> Result<Payload, ConsentError> {
        let study = self.study_or_err(study_id)?;
        let case = self.case_or_err(study_id, participant)?;
        let passing = match (case.state, case.passing_attempt) {
            (ConsentState::Passed, Some(p)) => p,
            (state, _) => {
                return Err(ConsentError::IllegalTransition {
                    state,
                    action: "sign",
                })
            }
        };
        let msg = consent_message(study_id, &study.quiz_hash, &passing);
        Ok(Payload::ConsentSigned {
            study_id: study_id.to_string(),
            participant: participant.to_string(),
            quiz_hash: study.quiz_hash,
            passing_attempt: passing,
            consent_signature: key.sign(&msg).to_bytes(),
        })
    }

    pub fn withdraw_consent(&self, study_id: &str, participant: &str) -> Result<Payload, ConsentError> {
        let case = self.case_or_err(study_id, participant)?;
        if case.state != ConsentState::Signed {
            return Err(ConsentError::IllegalTransition {
                state: case.state,
                action: "withdraw",
            });
        }
        Ok(Payload::ConsentWithdrawn {
            study_id: study_id.to_string(),
            participant: participant.to_string(),
        })
    }

    /// Dashboard rows for a study researcher. `shared` supplies per-question
    /// struggle counts that a participant's node chose to disclose.
    pub fn consent_status(
        &self,
        researcher: &str,
        study_id: &str,
        mut shared: impl FnMut(&str) -> Option<Vec<u32>>,
    ) -> Result<Vec<StatusRow>, ConsentError> {
        self.researcher_of(study_id, researcher)?;
        Ok(self
            .lifecycles(study_id)
            .map(|c| StatusRow {
                participant: c.participant.clone(),
                state: c.state,
                attempts: c.attempts.len(),
                mistakes: c.total_mistakes(),
                struggles: shared(&c.participant),
                signed_at: c.signed_at,
            })
            .collect())
    }

    /// Re-validates a committed consent payload and folds it in.
    /// Non-consent payloads are ignored.
    pub fn apply(
        &mut self,
        registry: &Registry,
        tx_id: Digest,
        author: &PrincipalId,
        timestamp: u64,
        payload: &Payload,
    ) -> Result<(), ConsentError> {
        let must_be = |kind: PrincipalKind, id: &str| {
            if author.kind == kind && author.id == id {
                Ok(())
            } else {
                Err(ConsentError::NotAuthorized(author.clone()))
            }
        };
        let key = |s: &str, p: &str| (s.to_string(), p.to_string());
        match payload {
            Payload::RegisterStudy {
                study_id,
                researchers,
                quiz_hash,
                question_count,
                max_mistakes,
            } => {
                if author.kind != PrincipalKind::Researcher {
                    return Err(ConsentError::NotAuthorized(author.clone()));
                }
                let set: BTreeSet<String> = researchers.iter().cloned().collect();
                self.check_registration(registry, &author.id, study_id, &set)?;
                if *question_count == 0 {
                    return Err(QuizError::Empty.into());
                }
                self.studies.insert(
                    study_id.clone(),
                    StudyRecord {
                        study_id: study_id.clone(),
                        researchers: set,
                        quiz_hash: *quiz_hash,
                        question_count: *question_count,
                        max_mistakes: *max_mistakes,
                        registered_at: timestamp,
                    },
                );
            }
            Payload::ConsentInvited { study_id, participant } => {
                if author.kind != PrincipalKind::Researcher {
                    return Err(ConsentError::NotAuthorized(author.clone()));
                }
                self.invite(registry, &author.id, study_id, participant)?;
                self.cases.insert(
                    key(study_id, participant),
                    ConsentLifecycle {
                        study_id: study_id.clone(),
                        participant: participant.clone(),
                        state: ConsentState::Invited,
                        invited_at: timestamp,
                        attempts: Vec::new(),
                        passing_attempt: None,
                        signed_at: None,
                        withdrawn_at: None,
                    },
                );
            }
            Payload::QuizAttemptRecorded {
                study_id,
                participant,
                ordinal,
                mistakes,
            } => {
                must_be(PrincipalKind::Participant, participant)?;
                let study = self.study_or_err(study_id)?.clone();
                let case = self.case_or_err(study_id, participant)?;
                let expected = case.attempts.len() as u32 + 1;
                if *ordinal != expected {
                    return Err(ConsentError::AttemptOrdinal {
                        expected,
                        got: *ordinal,
                    });
                }
                if *mistakes > study.question_count {
                    return Err(ConsentError::MistakeCount {
                        mistakes: *mistakes,
                        questions: study.question_count,
                    });
                }
                let passed = *mistakes <= study.max_mistakes;
                let next = case.state.after_attempt(passed).ok_or(ConsentError::IllegalTransition {
                    state: case.state,
                    action: "attempt",
                })?;
                let case = self.cases.get_mut(&key(study_id, participant)).expect("checked");
                case.state = next;
                case.attempts.push(AttemptRecord {
                    tx_id,
                    ordinal: *ordinal,
                    mistakes: *mistakes,
                    at: timestamp,
                });
                if passed {
                    case.passing_attempt = Some(tx_id);
                }
            }
            Payload::ConsentSigned {
                study_id,
                participant,
                quiz_hash,
                passing_attempt,
                consent_signature,
            } => {
                must_be(PrincipalKind::Participant, participant)?;
                let study = self.study_or_err(study_id)?;
                let case = self.case_or_err(study_id, participant)?;
                if case.state != ConsentState::Passed {
                    return Err(ConsentError::IllegalTransition {
                        state: case.state,
                        action: "sign",
                    });
                }
                if quiz_hash != &study.quiz_hash {
                    return Err(ConsentError::QuizMismatch(study_id.clone()));
                }
                if case.passing_attempt.as_ref() != Some(passing_attempt) {
                    return Err(ConsentError::WrongPassingAttempt);
                }
                check_consent_signature(registry, participant, study_id, quiz_hash, passing_attempt, consent_signature)?;
                let case = self.cases.get_mut(&key(study_id, participant)).expect("checked");
                case.state = ConsentState::Signed;
                case.signed_at = Some(timestamp);
            }
            Payload::ConsentWithdrawn { study_id, participant } => {
                must_be(PrincipalKind::Participant, participant)?;
                self.withdraw_consent(study_id, participant)?;
                let case = self.cases.get_mut(&key(study_id, participant)).expect("checked");
                case.state = ConsentState::Withdrawn;
                case.withdrawn_at = Some(timestamp);
            }
            Payload::ProfilePublished {
                participant,
                commitments,
                discoverable,
                overrides,
            } => {
                must_be(PrincipalKind::Participant, participant)?;
                if commitments.is_empty() {
                    return Err(ConsentError::EmptyProfile);
                }
                self.profiles.insert(
                    participant.clone(),
                    ProfileRecord {
                        participant: participant.clone(),
                        commitments: commitments.iter().copied().collect(),
                        discoverable: *discoverable,
                        overrides: overrides.iter().cloned().collect(),
                        published_at: timestamp,
                    },
                );
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn check_consent_signature(
    registry: &Registry,
    participant: &str,
    study_id: &str,
    quiz_hash: &Digest,
    passing_attempt: &Digest,
    signature: &SignatureBytes,
) -> Result<(), ConsentError> {
    let rec = registry
        .lookup(PrincipalKind::Participant, participant)
        .ok_or_else(|| ConsentError::UnknownPrincipal {
            kind: PrincipalKind::Participant,
            id: participant.to_string(),
        })?;
    let msg = consent_message(study_id, quiz_hash, passing_attempt);
    verify_signature(&rec.public_key, &msg, signature).map_err(|_| ConsentError::BadConsentSignature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::key_from_seed;

    struct World {
        registry: Registry,
        book: ConsentBook,
        study: Study,
        key: SigningKey,
        seq: u8,
    }

    fn pid(kind: PrincipalKind, id: &str) -> PrincipalId {
        PrincipalId::new(kind, id).unwrap()
    }

    impl World {
        fn new() -> Self {
            let mut registry = Registry::default();
            let key = key_from_seed(&[3; 32]);
            for (kind, id, k) in [
                (PrincipalKind::Researcher, "res", [0; 32]),
                (PrincipalKind::Researcher, "other", [0; 32]),
                (PrincipalKind::Participant, "px", key.verifying_key().to_bytes()),
            ] {
                registry.record(&Payload::RegisterPrincipal {
                    principal: pid(kind, id),
                    public_key: k,
                    org: None,
                    identity_commitment: None,
                });
            }
            let quiz = Quiz::parse("Q a\nC x\nC y\nA 0\nQ b\nC x\nC y\nA 1\nQ c\nC x\nC y\nA 0\n").unwrap();
            let study = Study {
                study_id: "s1".into(),
                researchers: BTreeSet::from(["res".to_string()]),
                title: String::new(),
                description: String::new(),
                quiz,
                outcome_notes: Vec::new(),
            };
            let mut w = World {
                registry,
                book: ConsentBook::default(),
                study,
                key,
                seq: 0,
            };
            let p = w.book.register_study(&w.registry, "res", &w.study).unwrap();
            w.commit(pid(PrincipalKind::Researcher, "res"), &p).unwrap();
            w
        }

        fn commit(&mut self, author: PrincipalId, p: &Payload) -> Result<Digest, ConsentError> {
            self.seq += 1;
            let id = Digest::of(&[self.seq]);
            self.book.apply(&self.registry, id, &author, self.seq as u64, p)?;
            Ok(id)
        }

        fn invite(&mut self) -> Result<(), ConsentError> {
            let p = self.book.invite(&self.registry, "res", "s1", "px")?;
            self.commit(pid(PrincipalKind::Researcher, "res"), &p).map(|_| ())
        }

        fn attempt(&mut self, answers: &[usize]) -> Result<Grade, ConsentError> {
            let (g, p) = self.book.submit_attempt(&self.study, "px", answers)?;
            self.commit(pid(PrincipalKind::Participant, "px"), &p)?;
            Ok(g)
        }

        fn sign(&mut self) -> Result<(), ConsentError> {
            let p = self.book.sign_consent("s1", "px", &self.key)?;
            self.commit(pid(PrincipalKind::Participant, "px"), &p).map(|_| ())
        }

        fn withdraw(&mut self) -> Result<(), ConsentError> {
            let p = self.book.withdraw_consent("s1", "px")?;
            self.commit(pid(PrincipalKind::Participant, "px"), &p).map(|_| ())
        }

        fn state(&self) -> ConsentState {
            self.book.lifecycle("s1", "px").unwrap().state
        }
    }

    #[test]
    fn full_lifecycle_and_dashboard() {
        let mut w = World::new();
        assert!(matches!(w.attempt(&[0, 1, 0]), Err(ConsentError::NotInvited { .. })));
        w.invite().unwrap();
        assert!(matches!(w.invite(), Err(ConsentError::DuplicateInvitation { .. })));
        assert!(matches!(w.sign(), Err(ConsentError::IllegalTransition { .. })));
        assert_eq!(w.attempt(&[1, 0, 0]).unwrap().mistakes, 2);
        assert_eq!(w.state(), ConsentState::Attempted);
        assert_eq!(w.attempt(&[0, 0, 0]).unwrap().mistakes, 1);
        assert!(w.attempt(&[0, 1, 0]).unwrap().passed);
        assert_eq!(w.state(), ConsentState::Passed);
        w.sign().unwrap();
        assert!(w.book.consent_valid("s1", "px"));
        let rows = w.book.consent_status("res", "s1", |_| None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].state, rows[0].attempts, rows[0].mistakes), (ConsentState::Signed, 3, 3));
        assert_eq!(rows[0].to_string(), "px\tsigned\t3\t3\t-\t6");
        assert!(matches!(
            w.book.consent_status("other", "s1", |_| None),
            Err(ConsentError::NotResearcher { .. })
        ));
        assert!(matches!(w.attempt(&[0, 1, 0]), Err(ConsentError::IllegalTransition { .. })));
        w.withdraw().unwrap();
        assert!(!w.book.consent_valid("s1", "px"));
        assert!(matches!(w.withdraw(), Err(ConsentError::IllegalTransition { .. })));
    }

    #[test]
    fn passing_is_sticky() {
        let mut w = World::new();
        w.invite().unwrap();
        w.attempt(&[0, 1, 0]).unwrap();
        w.attempt(&[1, 1, 1]).unwrap();
        assert_eq!(w.state(), ConsentState::Passed);
        w.sign().unwrap();
    }

    #[test]
    fn forged_signature_rejected_on_apply() {
        let mut w = World::new();
        w.invite().unwrap();
        w.attempt(&[0, 1, 0]).unwrap();
        let other = key_from_seed(&[4; 32]);
        let p = w.book.sign_consent("s1", "px", &other).unwrap();
        assert_eq!(
            w.commit(pid(PrincipalKind::Participant, "px"), &p),
            Err(ConsentError::BadConsentSignature)
        );
        assert_eq!(w.state(), ConsentState::Passed);
    }

    #[test]
    fn registration_errors() {
        let w = World::new();
        assert_eq!(
            w.book.register_study(&w.registry, "res", &w.study),
            Err(ConsentError::DuplicateStudy("s1".into()))
        );
        let mut s = w.study.clone();
        s.study_id = "s2".into();
        s.quiz.questions.clear();
        assert_eq!(
            w.book.register_study(&w.registry, "res", &s),
            Err(ConsentError::Quiz(QuizError::Empty))
        );
        assert!(matches!(
            w.book.invite(&w.registry, "res", "nope", "px"),
            Err(ConsentError::UnknownStudy(_))
        ));
        assert!(w.book.consent_status("res", "s1", |_| None).unwrap().is_empty());
    }

    #[test]
    fn answer_count_checked() {
        let mut w = World::new();
        w.invite().unwrap();
        assert_eq!(
            w.attempt(&[0]),
            Err(ConsentError::Quiz(QuizError::AnswerCount { expected: 3, got: 1 }))
        );
    }
}
