use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::codec::{DecodeError, EncodeError, Reader, Writer, MAX_ID_LEN};

/// Raw Ed25519 signature bytes.
pub type SignatureBytes = [u8; 64];

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    /// SHA-256 over the concatenation of `parts`.
    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalKind {
    Organization,
    Practitioner,
    Patient,
    Researcher,
    Participant,
}

impl PrincipalKind {
    pub const ALL: [PrincipalKind; 5] = [
        PrincipalKind::Organization,
        PrincipalKind::Practitioner,
        PrincipalKind::Patient,
        PrincipalKind::Researcher,
        PrincipalKind::Participant,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PrincipalKind::Organization => "organization",
            PrincipalKind::Practitioner => "practitioner",
            PrincipalKind::Patient => "patient",
            PrincipalKind::Researcher => "researcher",
            PrincipalKind::Participant => "participant",
        }
    }
}

impl fmt::Display for PrincipalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrincipalKind {
    type Err = InvalidPrincipal;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| InvalidPrincipal::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidPrincipal {
    #[error("principal id is empty")]
    Empty,
    #[error("principal id is {0} bytes, limit is {MAX_ID_LEN}")]
    TooLong(usize),
    #[error("principal id {0:?} contains characters outside printable ASCII")]
    NotPrintable(String),
    #[error("unknown principal kind {0:?}")]
    UnknownKind(String),
}

/// Checks the identifier rules shared by principals, plans, grants and studies:
/// 1..=64 bytes of printable, non-whitespace ASCII.
pub fn check_id(id: &str) -> Result<(), InvalidPrincipal> {
    if id.is_empty() {
        return Err(InvalidPrincipal::Empty);
    }
    if id.len() > MAX_ID_LEN {
        return Err(InvalidPrincipal::TooLong(id.len()));
    }
    if !id.bytes().all(|b| b.is_ascii_graphic()) {
        return Err(InvalidPrincipal::NotPrintable(id.to_string()));
    }
    Ok(())
}

/// A network participant: an organization, a care practitioner, a patient,
/// a researcher or a study participant. Ids are pseudonymous.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrincipalId {
    pub kind: PrincipalKind,
    pub id: String,
}

impl PrincipalId {
    pub fn new(kind: PrincipalKind, id: impl Into<String>) -> Result<Self, InvalidPrincipal> {
        let id = id.into();
        check_id(&id)?;
        Ok(Self { kind, id })
    }

    pub fn org(id: impl Into<String>) -> Result<Self, InvalidPrincipal> {
        Self::new(PrincipalKind::Organization, id)
    }

    pub fn is_org(&self) -> bool {
        self.kind == PrincipalKind::Organization
    }

    pub fn encode(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.u8(self.kind.tag());
        w.str("principal.id", &self.id, MAX_ID_LEN)
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        let kind = PrincipalKind::from_tag(tag).ok_or(DecodeError::InvalidTag {
            field: "principal.kind",
            tag,
        })?;
        let id = r.str("principal.id", MAX_ID_LEN)?;
        PrincipalId::new(kind, id).map_err(|e| DecodeError::InvalidValue {
            field: "principal.id",
            reason: e.to_string(),
        })
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.id)
    }
}

impl FromStr for PrincipalId {
    type Err = InvalidPrincipal;

    /// Parses the `kind:id` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, id) = s
            .split_once(':')
            .ok_or_else(|| InvalidPrincipal::UnknownKind(s.to_string()))?;
        PrincipalId::new(kind.parse()?, id)
    }
}
