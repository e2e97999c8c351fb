//! Content hashing of transfer payloads, plus an optional audit store that
//! keeps full payload copies to detect hash collisions after the fact.

use std::collections::HashMap;

use thiserror::Error;

/// A computed 64-bit content hash. Never zero: zero marks "no hash" in
/// trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(u64);

impl ContentHash {
    /// Remaps a raw hash value so that it is never zero.
    pub fn from_raw(raw: u64) -> Self {
        ContentHash(if raw == 0 { 1 } else { raw })
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HashError {
    #[error("cannot hash an empty payload")]
    EmptyPayload,
}

/// A 64-bit non-cryptographic hash function. Implementations must be
/// deterministic across processes: no per-run seeding.
pub trait ContentHasher {
    fn hash64(&self, payload: &[u8]) -> u64;

    fn hash(&self, payload: &[u8]) -> Result<ContentHash, HashError> {
        if payload.is_empty() {
            return Err(HashError::EmptyPayload);
        }
        Ok(ContentHash::from_raw(self.hash64(payload)))
    }
}

/// XXH3-64 with the fixed default seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct Xxh3;

impl ContentHasher for Xxh3 {
    fn hash64(&self, payload: &[u8]) -> u64 {
        xxhash_rust::xxh3::xxh3_64(payload)
    }
}

/// Hashes `payload` with the default hasher.
pub fn hash_bytes(payload: &[u8]) -> Result<ContentHash, HashError> {
    Xxh3.hash(payload)
}

/// Keeps the first payload seen for every hash and counts later payloads
/// that share the hash but differ byte-wise.
#[derive(Debug, Default)]
pub struct CollisionAuditStore {
    first_seen: HashMap<ContentHash, Vec<u8>>,
    collision_count: u64,
    observations: u64,
}

impl CollisionAuditStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one `(hash, payload)` observation. Returns `true` when it
    /// collided with a previously stored, different payload.
    pub fn observe(&mut self, hash: ContentHash, payload: &[u8]) -> bool {
        self.observations += 1;
        match self.first_seen.get(&hash) {
            Some(stored) if stored.as_slice() != payload => {
                self.collision_count += 1;
                true
            }
            Some(_) => false,
            None => {
                self.first_seen.insert(hash, payload.to_vec());
                false
            }
        }
    }

    pub fn collision_count(&self) -> u64 {
        self.collision_count
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    pub fn distinct_hashes(&self) -> usize {
        self.first_seen.len()
    }
}

/// Functional form of [`CollisionAuditStore::observe`].
pub fn audit_observe(
    mut store: CollisionAuditStore,
    hash: ContentHash,
    payload: &[u8],
) -> CollisionAuditStore {
    store.observe(hash, payload);
    store
}
