use std::collections::BTreeMap;

use ed25519_dalek::SigningKey;
use rand::RngCore;

use super::tx::KeyLookup;
use super::types::PrincipalId;

pub fn key_from_seed(seed: &[u8; 32]) -> SigningKey {
    SigningKey::from_bytes(seed)
}

/// Draws a fresh signing key from a (seeded) generator.
pub fn generate_key(rng: &mut impl RngCore) -> SigningKey {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    key_from_seed(&seed)
}

/// Secret keys held by the simulated principals' wallets.
#[derive(Debug, Default, Clone)]
pub struct Keyring {
    keys: BTreeMap<PrincipalId, SigningKey>,
}

impl Keyring {
    pub fn insert(&mut self, who: PrincipalId, key: SigningKey) {
        self.keys.insert(who, key);
    }

    pub fn get(&self, who: &PrincipalId) -> Option<&SigningKey> {
        self.keys.get(who)
    }

    pub fn contains(&self, who: &PrincipalId) -> bool {
        self.keys.contains_key(who)
    }
}

impl KeyLookup for Keyring {
    fn public_key(&self, who: &PrincipalId) -> Option<[u8; 32]> {
        self.keys.get(who).map(|k| k.verifying_key().to_bytes())
    }
}
