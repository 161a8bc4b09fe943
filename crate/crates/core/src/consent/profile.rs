//! Meta-data profiles and commitment-based participant matching.
//!
//! Only SHA-256(salt || descriptor) values go on chain. A researcher looking
//! for participants challenges each discoverable profile with one descriptor
//! at a time; the participant's node answers by revealing the salt for that
//! single commitment, or declines.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use super::ConsentError;
use crate::ledger::{Digest, Payload, PrincipalKind, Registry};

pub const DESCRIPTOR_SALT_LEN: usize = 16;

pub fn descriptor_commitment(salt: &[u8], descriptor: &str) -> Digest {
    Digest::of_parts(&[salt, descriptor.as_bytes()])
}

/// Committed profile as derived from the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRecord {
    pub participant: String,
    pub commitments: BTreeSet<Digest>,
    pub discoverable: bool,
    pub overrides: BTreeMap<String, bool>,
    pub published_at: u64,
}

impl ProfileRecord {
    /// Layer policy: a per-study override wins over the profile default.
    pub fn visible_to(&self, study: Option<&str>) -> bool {
        study
            .and_then(|s| self.overrides.get(s).copied())
            .unwrap_or(self.discoverable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub researcher: String,
    pub participant: String,
    pub descriptor: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disclosure {
    Reveal {
        descriptor: String,
        salt: [u8; DESCRIPTOR_SALT_LEN],
    },
    Decline,
}

/// Participant-held secrets: descriptor salts and per-question struggle
/// counts per study.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParticipantWallet {
    pub participant: String,
    descriptors: BTreeMap<String, [u8; DESCRIPTOR_SALT_LEN]>,
    struggles: BTreeMap<String, Vec<u32>>,
}

impl ParticipantWallet {
    pub fn new(participant: impl Into<String>) -> Self {
        ParticipantWallet {
            participant: participant.into(),
            ..Default::default()
        }
    }

    /// Draws fresh salts for `descriptors` and returns the profile payload.
    pub fn publish(
        &mut self,
        registry: &Registry,
        rng: &mut impl RngCore,
        descriptors: &[String],
        discoverable: bool,
        overrides: &[(String, bool)],
    ) -> Result<Payload, ConsentError> {
        if registry.lookup(PrincipalKind::Participant, &self.participant).is_none() {
            return Err(ConsentError::UnknownPrincipal {
                kind: PrincipalKind::Participant,
                id: self.participant.clone(),
            });
        }
        if descriptors.is_empty() {
            return Err(ConsentError::EmptyProfile);
        }
        let mut salted = BTreeMap::new();
        for d in descriptors {
            let mut salt = [0u8; DESCRIPTOR_SALT_LEN];
            rng.fill_bytes(&mut salt);
            salted.insert(d.clone(), salt);
        }
        let commitments: BTreeSet<Digest> = salted
            .iter()
            .map(|(d, s)| descriptor_commitment(s, d))
            .collect();
        self.descriptors = salted;
        let overrides: BTreeMap<String, bool> = overrides.iter().cloned().collect();
        Ok(Payload::ProfilePublished {
            participant: self.participant.clone(),
            commitments: commitments.into_iter().collect(),
            discoverable,
            overrides: overrides.into_iter().collect(),
        })
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &String> {
        self.descriptors.keys()
    }

    /// Reveals the salt of the challenged descriptor only.
    pub fn respond(&self, challenge: &Challenge) -> Disclosure {
        match self.descriptors.get(&challenge.descriptor) {
            Some(salt) => Disclosure::Reveal {
                descriptor: challenge.descriptor.clone(),
                salt: *salt,
            },
            None => Disclosure::Decline,
        }
    }

    pub fn record_attempt(&mut self, study: &str, question_count: usize, wrong: &[usize]) {
        let counts = self.struggles.entry(study.to_string()).or_insert_with(|| vec![0; question_count]);
        for &q in wrong {
            counts[q] += 1;
        }
    }

    pub fn struggles(&self, study: &str) -> Option<&[u32]> {
        self.struggles.get(study).map(Vec::as_slice)
    }
}

/// Pseudonyms of profiles visible under `study` whose node proves every
/// `required` descriptor. `respond` is the channel to participant nodes.
pub fn match_participants(
    registry: &Registry,
    profiles: &BTreeMap<String, ProfileRecord>,
    researcher: &str,
    required: &[String],
    study: Option<&str>,
    mut respond: impl FnMut(&Challenge) -> Disclosure,
) -> Result<BTreeSet<String>, ConsentError> {
    if registry.lookup(PrincipalKind::Researcher, researcher).is_none() {
        return Err(ConsentError::UnknownPrincipal {
            kind: PrincipalKind::Researcher,
            id: researcher.to_string(),
        });
    }
    if required.is_empty() {
        return Err(ConsentError::EmptyQuery);
    }
    let required: BTreeSet<&String> = required.iter().collect();
    let mut out = BTreeSet::new();
    for p in profiles.values().filter(|p| p.visible_to(study)) {
        let proven = required.iter().all(|d| {
            let ch = Challenge {
                researcher: researcher.to_string(),
                participant: p.participant.clone(),
                descriptor: (*d).clone(),
            };
            match respond(&ch) {
                Disclosure::Reveal { descriptor, salt } => {
                    &descriptor == *d && p.commitments.contains(&descriptor_commitment(&salt, d))
                }
                Disclosure::Decline => false,
            }
        });
        if proven {
            out.insert(p.participant.clone());
        }
    }
    Ok(out)
}
