//! Forward-secure signatures and plain signatures for the simulation.
//!
//! Every process `p` has a key timestamp `st_p`, initially 0. Signing with a
//! timestamp below `st_p` is refused, whatever the status of `p`; the only way
//! any process (Byzantine ones included) obtains a signature is through
//! [`Crypto::fs_sign`].
//!
//! Two backends implement the same contract:
//!
//! * [`Backend::TrustedOracle`] derives signature bytes from a secret held by
//!   the oracle; signing is gated by `st_p` alone.
//! * [`Backend::KeyChain`] keeps a forward-only chain of per-timestamp ed25519
//!   seeds for each process. Updating the key overwrites the current seed, so
//!   signing below `st_p` is impossible because the material is gone. Public
//!   keys for every timestamp up to [`MAX_TIMESTAMP`] are published by the
//!   directory, which derives them on demand.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use ed25519_dalek::{Signature, Signer as _, SigningKey, Verifier as _, VerifyingKey};

use crate::encoding::{sha256, Digest, Encoder};
use crate::lattice::ProcessId;

/// Largest key timestamp of the key-chain scheme.
pub const MAX_TIMESTAMP: u64 = 65_536;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    TrustedOracle,
    KeyChain,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::TrustedOracle => "oracle",
            Backend::KeyChain => "keychain",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" | "trusted-oracle" => Ok(Backend::TrustedOracle),
            "keychain" | "key-chain" => Ok(Backend::KeyChain),
            other => Err(format!("unknown signature backend `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FsSignature {
    pub signer: ProcessId,
    pub timestamp: u64,
    pub bytes: Vec<u8>,
}

impl FsSignature {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(self.signer.as_str().as_bytes()).u64(self.timestamp).bytes(&self.bytes);
        e.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlainSignature {
    pub signer: ProcessId,
    pub bytes: Vec<u8>,
}

impl PlainSignature {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(self.signer.as_str().as_bytes()).bytes(&self.bytes);
        e.finish()
    }
}

/// One entry of the issuance ledger.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Issued {
    pub signer: ProcessId,
    pub message: Digest,
    pub timestamp: u64,
}

#[derive(Clone)]
struct ChainKey {
    timestamp: u64,
    seed: [u8; 32],
}

fn evolve(seed: &[u8; 32], steps: u64) -> [u8; 32] {
    let mut s = *seed;
    for _ in 0..steps {
        let mut e = Encoder::new();
        e.raw(b"evolve").raw(&s);
        s = e.digest();
    }
    s
}

/// The signature oracle of one simulation.
pub struct Crypto {
    backend: Backend,
    secret: [u8; 32],
    key_timestamps: BTreeMap<ProcessId, u64>,
    chains: BTreeMap<ProcessId, ChainKey>,
    directory: RefCell<HashMap<(ProcessId, u64), VerifyingKey>>,
    ledger: BTreeSet<Issued>,
    memo: RefCell<HashMap<Digest, bool>>,
}

impl Crypto {
    pub fn new(backend: Backend, seed: u64) -> Self {
        let mut e = Encoder::new();
        e.raw(b"crypto-secret").u64(seed);
        Crypto {
            backend,
            secret: e.digest(),
            key_timestamps: BTreeMap::new(),
            chains: BTreeMap::new(),
            directory: RefCell::new(HashMap::new()),
            ledger: BTreeSet::new(),
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Current key timestamp `st_p`.
    pub fn key_timestamp(&self, p: &ProcessId) -> u64 {
        self.key_timestamps.get(p).copied().unwrap_or(0)
    }

    pub fn key_timestamps(&self) -> &BTreeMap<ProcessId, u64> {
        &self.key_timestamps
    }

    /// `st_p := max(st_p, t)`. Returns true if the timestamp moved.
    pub fn update_fs_keys(&mut self, p: &ProcessId, t: u64) -> bool {
        let t = t.min(MAX_TIMESTAMP);
        let cur = self.key_timestamp(p);
        if t <= cur {
            return false;
        }
        self.key_timestamps.insert(p.clone(), t);
        if self.backend == Backend::KeyChain {
            let chain = self.chain_mut(p);
            chain.seed = evolve(&chain.seed, t - chain.timestamp);
            chain.timestamp = t;
        }
        true
    }

    fn genesis_seed(&self, p: &ProcessId) -> [u8; 32] {
        let mut e = Encoder::new();
        e.raw(b"chain-genesis").raw(&self.secret).bytes(p.as_str().as_bytes());
        e.digest()
    }

    fn chain_mut(&mut self, p: &ProcessId) -> &mut ChainKey {
        if !self.chains.contains_key(p) {
            let seed = self.genesis_seed(p);
            self.chains.insert(p.clone(), ChainKey { timestamp: 0, seed });
        }
        self.chains.get_mut(p).expect("inserted above")
    }

    fn signed_bytes(p: &ProcessId, m: &[u8], t: u64) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"fs").bytes(p.as_str().as_bytes()).u64(t).raw(&sha256(m));
        e.finish()
    }

    fn oracle_mac(&self, p: &ProcessId, m: &[u8], t: u64) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(&self.secret).raw(&Self::signed_bytes(p, m, t));
        e.digest().to_vec()
    }

    /// Signature on `m` with timestamp `t`, or `None` when `t < st_p`.
    pub fn fs_sign(&mut self, p: &ProcessId, m: &[u8], t: u64) -> Option<FsSignature> {
        if t < self.key_timestamp(p) || t > MAX_TIMESTAMP {
            return None;
        }
        let bytes = match self.backend {
            Backend::TrustedOracle => self.oracle_mac(p, m, t),
            Backend::KeyChain => {
                let chain = self.chain_mut(p);
                // `chain.timestamp == st_p <= t`; the seed for `t` lies ahead.
                let seed = evolve(&chain.seed, t - chain.timestamp);
                let key = SigningKey::from_bytes(&seed);
                key.sign(&Self::signed_bytes(p, m, t)).to_bytes().to_vec()
            }
        };
        self.ledger.insert(Issued { signer: p.clone(), message: sha256(m), timestamp: t });
        Some(FsSignature { signer: p.clone(), timestamp: t, bytes })
    }

    fn public_key(&self, p: &ProcessId, t: u64) -> VerifyingKey {
        if let Some(k) = self.directory.borrow().get(&(p.clone(), t)) {
            return *k;
        }
        let seed = evolve(&self.genesis_seed(p), t);
        let key = SigningKey::from_bytes(&seed).verifying_key();
        self.directory.borrow_mut().insert((p.clone(), t), key);
        key
    }

    /// True iff `s` was produced by `fs_sign(p, m, t)`.
    pub fn fs_verify(&self, m: &[u8], p: &ProcessId, s: &FsSignature, t: u64) -> bool {
        if &s.signer != p || s.timestamp != t || t > MAX_TIMESTAMP {
            return false;
        }
        match self.backend {
            Backend::TrustedOracle => s.bytes == self.oracle_mac(p, m, t),
            Backend::KeyChain => {
                let Ok(sig) = Signature::from_slice(&s.bytes) else {
                    return false;
                };
                self.public_key(p, t).verify(&Self::signed_bytes(p, m, t), &sig).is_ok()
            }
        }
    }

    pub fn plain_sign(&self, p: &ProcessId, m: &[u8]) -> PlainSignature {
        PlainSignature { signer: p.clone(), bytes: self.plain_mac(p, m) }
    }

    fn plain_mac(&self, p: &ProcessId, m: &[u8]) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"plain").raw(&self.secret).bytes(p.as_str().as_bytes()).raw(&sha256(m));
        e.digest().to_vec()
    }

    pub fn plain_verify(&self, m: &[u8], p: &ProcessId, sig: &PlainSignature) -> bool {
        &sig.signer == p && sig.bytes == self.plain_mac(p, m)
    }

    /// Every forward-secure signature issued so far.
    pub fn ledger(&self) -> &BTreeSet<Issued> {
        &self.ledger
    }

    pub fn was_issued(&self, p: &ProcessId, m: &[u8], t: u64) -> bool {
        self.ledger.contains(&Issued { signer: p.clone(), message: sha256(m), timestamp: t })
    }

    /// Caches the result of a pure verification function keyed by `key`.
    pub fn memoize(&self, key: Digest, f: impl FnOnce() -> bool) -> bool {
        if let Some(v) = self.memo.borrow().get(&key) {
            return *v;
        }
        let v = f();
        self.memo.borrow_mut().insert(key, v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both() -> [Crypto; 2] {
        [Crypto::new(Backend::TrustedOracle, 7), Crypto::new(Backend::KeyChain, 7)]
    }

    #[test]
    fn update_is_monotone() {
        for mut c in both() {
            let p = ProcessId::new("p");
            assert_eq!(c.key_timestamp(&p), 0);
            c.update_fs_keys(&p, 5);
            assert_eq!(c.key_timestamp(&p), 5);
            assert!(!c.update_fs_keys(&p, 3));
            assert_eq!(c.key_timestamp(&p), 5);
        }
    }

    #[test]
    fn sign_below_timestamp_is_refused() {
        for mut c in both() {
            let p = ProcessId::new("p");
            c.update_fs_keys(&p, 3);
            assert!(c.fs_sign(&p, b"m", 5).is_some());
            assert!(c.fs_sign(&p, b"m", 3).is_some());
            assert!(c.fs_sign(&p, b"m", 2).is_none());
        }
    }

    #[test]
    fn verify_binds_message_signer_and_timestamp() {
        for mut c in both() {
            let p = ProcessId::new("p");
            let q = ProcessId::new("q");
            let s = c.fs_sign(&p, b"hello", 4).unwrap();
            assert!(c.fs_verify(b"hello", &p, &s, 4));
            assert!(!c.fs_verify(b"hellp", &p, &s, 4));
            assert!(!c.fs_verify(b"hello", &p, &s, 5));
            assert!(!c.fs_verify(b"hello", &q, &s, 4));
            let mut forged = s.clone();
            forged.timestamp = 5;
            assert!(!c.fs_verify(b"hello", &p, &forged, 5));
            assert!(c.was_issued(&p, b"hello", 4));
        }
    }

    #[test]
    fn signatures_made_before_update_still_verify() {
        for mut c in both() {
            let p = ProcessId::new("p");
            let s = c.fs_sign(&p, b"x", 1).unwrap();
            c.update_fs_keys(&p, 9);
            assert!(c.fs_verify(b"x", &p, &s, 1));
        }
    }

    #[test]
    fn plain_round_trip() {
        let c = Crypto::new(Backend::TrustedOracle, 1);
        let p = ProcessId::new("p");
        let s = c.plain_sign(&p, b"v");
        assert!(c.plain_verify(b"v", &p, &s));
        assert!(!c.plain_verify(b"v", &ProcessId::new("q"), &s));
        assert!(!c.plain_verify(b"w", &p, &s));
    }

    #[test]
    fn timestamps_above_bound_are_refused() {
        for mut c in both() {
            let p = ProcessId::new("p");
            assert!(c.fs_sign(&p, b"m", MAX_TIMESTAMP + 1).is_none());
        }
    }
}
