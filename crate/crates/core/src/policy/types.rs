use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} {value:?}")]
pub struct UnknownVariant {
    pub what: &'static str,
    pub value: String,
}

macro_rules! tagged_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal { $($variant:ident = $tag:literal => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant = $tag),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn tag(self) -> u8 {
                self as u8
            }

            pub fn from_tag(tag: u8) -> Option<Self> {
                match tag {
                    $($tag => Some($name::$variant),)+
                    _ => None,
                }
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(UnknownVariant { what: $what, value: s.to_string() }),
                }
            }
        }
    };
}

tagged_enum!(
    /// Category of a health record; grants are scoped to sets of these.
    RecordCategory, "record category" {
        Vitals = 0 => "vitals",
        Medication = 1 => "medication",
        Notes = 2 => "notes",
        Treatments = 3 => "treatments",
    }
);

tagged_enum!(
    Verdict, "verdict" {
        Allow = 0 => "allow",
        Deny = 1 => "deny",
        AllowEmergency = 2 => "allow_emergency",
    }
);

tagged_enum!(
    Reason, "decision reason" {
        ValidGrant = 0 => "valid_grant",
        NoGrant = 1 => "no_grant",
        Expired = 2 => "expired",
        Revoked = 3 => "revoked",
        OutOfScope = 4 => "out_of_scope",
        NotPlanMember = 5 => "not_plan_member",
        UnknownPrincipal = 6 => "unknown_principal",
        EmergencyOverride = 7 => "emergency_override",
    }
);

/// Outcome of evaluating a data request.
///
/// `Allow` always carries the grant that justified it; `AllowEmergency`
/// always carries `Reason::EmergencyOverride`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub reason: Reason,
    pub grant_id: Option<String>,
}

impl Decision {
    pub fn allow(grant_id: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Allow,
            reason: Reason::ValidGrant,
            grant_id: Some(grant_id.into()),
        }
    }

    pub fn deny(reason: Reason) -> Self {
        Self {
            verdict: Verdict::Deny,
            reason,
            grant_id: None,
        }
    }

    pub fn emergency() -> Self {
        Self {
            verdict: Verdict::AllowEmergency,
            reason: Reason::EmergencyOverride,
            grant_id: None,
        }
    }

    pub fn is_allowed(&self) -> bool {
        self.verdict != Verdict::Deny
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.verdict, self.reason)?;
        if let Some(g) = &self.grant_id {
            write!(f, " grant={g}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_parse() {
        assert_eq!("vitals".parse::<RecordCategory>().unwrap(), RecordCategory::Vitals);
        assert!("xray".parse::<RecordCategory>().is_err());
        for c in RecordCategory::ALL {
            assert_eq!(RecordCategory::from_tag(c.tag()), Some(*c));
        }
        assert_eq!(RecordCategory::from_tag(4), None);
    }
}
