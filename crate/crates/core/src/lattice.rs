//! Join semi-lattices, the configuration lattice and histories.
//!
//! Configurations are sets of membership updates (`+r` adds replica `r`,
//! `-r` removes it) ordered by inclusion. The replica set, quorum family and
//! height of a configuration are derived from its updates.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::encoding::{put_bytes, put_sorted_set, Canonical, TAG_CONFIG, TAG_FINSET, TAG_HIST};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("cannot combine values of different lattices ({0} and {1})")]
    Mismatch(&'static str, &'static str),
    #[error("history is empty")]
    EmptyHistory,
    #[error("history contains incomparable configurations")]
    IncomparableHistory,
    #[error("replica {0} was removed and cannot be added again")]
    Readded(ProcessId),
}

/// A join semi-lattice.
pub trait JoinSemilattice: Sized {
    fn join(&self, other: &Self) -> Self;
    fn leq(&self, other: &Self) -> bool;

    fn comparable(&self, other: &Self) -> bool {
        self.leq(other) || other.leq(self)
    }
}

impl<T: Ord + Clone> JoinSemilattice for BTreeSet<T> {
    fn join(&self, other: &Self) -> Self {
        self.union(other).cloned().collect()
    }

    fn leq(&self, other: &Self) -> bool {
        self.is_subset(other)
    }
}

/// Opaque process identifier. It doubles as the handle of the process's
/// public keys.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(Arc<str>);

impl ProcessId {
    pub fn new(id: impl AsRef<str>) -> Self {
        ProcessId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ProcessId {
    fn from(s: &str) -> Self {
        ProcessId::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Add,
    Remove,
}

/// A single membership change.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Update {
    pub polarity: Polarity,
    pub replica: ProcessId,
}

impl Update {
    pub fn add(replica: impl Into<ProcessId>) -> Self {
        Update { polarity: Polarity::Add, replica: replica.into() }
    }

    pub fn remove(replica: impl Into<ProcessId>) -> Self {
        Update { polarity: Polarity::Remove, replica: replica.into() }
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = vec![match self.polarity {
            Polarity::Add => b'+',
            Polarity::Remove => b'-',
        }];
        put_bytes(&mut out, self.replica.as_str().as_bytes());
        out
    }

    /// Parses `+r1` / `-r1`.
    pub fn parse(s: &str) -> Option<Update> {
        let (pol, rest) = s.split_at(s.char_indices().nth(1).map(|(i, _)| i)?);
        if rest.is_empty() {
            return None;
        }
        match pol {
            "+" => Some(Update::add(rest)),
            "-" => Some(Update::remove(rest)),
            _ => None,
        }
    }
}

impl From<String> for ProcessId {
    fn from(s: String) -> Self {
        ProcessId::new(s)
    }
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.polarity == Polarity::Add { '+' } else { '-' };
        write!(f, "{sign}{}", self.replica)
    }
}

/// An element of the configuration lattice: a finite set of updates.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Configuration {
    updates: BTreeSet<Update>,
}

impl Configuration {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_updates(updates: impl IntoIterator<Item = Update>) -> Self {
        Configuration { updates: updates.into_iter().collect() }
    }

    /// The configuration that adds exactly `replicas`.
    pub fn genesis<I, P>(replicas: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: Into<ProcessId>,
    {
        Self::from_updates(replicas.into_iter().map(Update::add))
    }

    pub fn updates(&self) -> &BTreeSet<Update> {
        &self.updates
    }

    /// Returns `self` extended with `extra`.
    pub fn with(&self, extra: impl IntoIterator<Item = Update>) -> Self {
        let mut updates = self.updates.clone();
        updates.extend(extra);
        Configuration { updates }
    }

    /// Rejects proposals that add back a replica id which is already removed.
    pub fn check_no_readd(&self, base: &Configuration) -> Result<(), LatticeError> {
        for u in &self.updates {
            if u.polarity == Polarity::Add
                && base.updates.contains(&Update::remove(u.replica.clone()))
                && !base.updates.contains(u)
            {
                return Err(LatticeError::Readded(u.replica.clone()));
            }
        }
        Ok(())
    }

    /// `{s | +s ∈ C and -s ∉ C}`
    pub fn replicas(&self) -> BTreeSet<ProcessId> {
        self.updates
            .iter()
            .filter(|u| u.polarity == Polarity::Add)
            .filter(|u| !self.updates.contains(&Update::remove(u.replica.clone())))
            .map(|u| u.replica.clone())
            .collect()
    }

    pub fn is_member(&self, p: &ProcessId) -> bool {
        self.updates.contains(&Update::add(p.clone())) && !self.updates.contains(&Update::remove(p.clone()))
    }

    pub fn height(&self) -> u64 {
        self.updates.len() as u64
    }

    /// Smallest quorum size: the least `q` with `3q > 2n`.
    pub fn quorum_size(&self) -> usize {
        quorum_threshold(self.replicas().len())
    }

    /// Resilience threshold `⌊(n-1)/3⌋`.
    pub fn fault_bound(&self) -> usize {
        fault_bound(self.replicas().len())
    }

    pub fn is_quorum<'a, I>(&self, set: I) -> bool
    where
        I: IntoIterator<Item = &'a ProcessId>,
    {
        let replicas = self.replicas();
        let mut count = 0usize;
        for p in set {
            if !replicas.contains(p) {
                return false;
            }
            count += 1;
        }
        3 * count > 2 * replicas.len()
    }

    pub fn leq(&self, other: &Configuration) -> bool {
        self.updates.is_subset(&other.updates)
    }

    pub fn lt(&self, other: &Configuration) -> bool {
        self.updates.len() < other.updates.len() && self.leq(other)
    }

    pub fn join(&self, other: &Configuration) -> Configuration {
        Configuration { updates: self.updates.union(&other.updates).cloned().collect() }
    }

    pub fn comparable(&self, other: &Configuration) -> bool {
        self.leq(other) || other.leq(self)
    }
}

pub fn quorum_threshold(n: usize) -> usize {
    2 * n / 3 + 1
}

pub fn fault_bound(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

impl JoinSemilattice for Configuration {
    fn join(&self, other: &Self) -> Self {
        Configuration::join(self, other)
    }

    fn leq(&self, other: &Self) -> bool {
        Configuration::leq(self, other)
    }
}

impl Canonical for Configuration {
    fn encode_body(&self, out: &mut Vec<u8>) {
        out.push(TAG_CONFIG);
        put_sorted_set(out, self.updates.iter().map(Update::encode).collect());
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, u) in self.updates.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str("}")
    }
}

/// True iff every pair of configurations in `set` is comparable.
pub fn validate_history(set: &BTreeSet<Configuration>) -> bool {
    let mut chain: Vec<&Configuration> = set.iter().collect();
    chain.sort_by_key(|c| c.height());
    // Sorted by height, a chain requires each element to contain its predecessor.
    chain.windows(2).all(|w| w[0].leq(w[1]) && w[0] != w[1])
}

/// A finite set of pairwise comparable configurations.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct History {
    configs: BTreeSet<Configuration>,
}

impl History {
    pub fn new(configs: BTreeSet<Configuration>) -> Result<Self, LatticeError> {
        if configs.is_empty() {
            return Err(LatticeError::EmptyHistory);
        }
        if !validate_history(&configs) {
            return Err(LatticeError::IncomparableHistory);
        }
        Ok(History { configs })
    }

    pub fn singleton(c: Configuration) -> Self {
        History { configs: BTreeSet::from([c]) }
    }

    pub fn configs(&self) -> &BTreeSet<Configuration> {
        &self.configs
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.configs.contains(c)
    }

    pub fn is_subset(&self, other: &History) -> bool {
        self.configs.is_subset(&other.configs)
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// The unique ⊑-maximum. Histories are never empty once constructed.
    pub fn max_element(&self) -> &Configuration {
        self.configs.iter().max_by_key(|c| c.height()).expect("history is nonempty by construction")
    }

    /// Members in ascending order.
    pub fn ascending(&self) -> Vec<&Configuration> {
        let mut v: Vec<&Configuration> = self.configs.iter().collect();
        v.sort_by_key(|c| c.height());
        v
    }
}

/// `max_element` on a raw configuration set.
pub fn max_element(set: &BTreeSet<Configuration>) -> Result<&Configuration, LatticeError> {
    if set.is_empty() {
        return Err(LatticeError::EmptyHistory);
    }
    if !validate_history(set) {
        return Err(LatticeError::IncomparableHistory);
    }
    Ok(set.iter().max_by_key(|c| c.height()).expect("nonempty"))
}

impl Canonical for History {
    fn encode_body(&self, out: &mut Vec<u8>) {
        encode_config_set(&self.configs, out);
    }
}

fn encode_config_set(set: &BTreeSet<Configuration>, out: &mut Vec<u8>) {
    out.push(TAG_HIST);
    put_sorted_set(
        out,
        set.iter()
            .map(|c| {
                let mut b = Vec::new();
                c.encode_body(&mut b);
                b
            })
            .collect(),
    );
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("H")?;
        f.debug_list().entries(self.ascending()).finish()
    }
}

/// A value of one of the object lattices used in this crate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LatticeValue {
    /// Powerset of opaque value ids.
    FinSet(BTreeSet<u64>),
    /// The configuration lattice.
    Config(Configuration),
    /// Powerset of configurations.
    Hist(BTreeSet<Configuration>),
}

impl LatticeValue {
    pub fn singleton(id: u64) -> Self {
        LatticeValue::FinSet(BTreeSet::from([id]))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LatticeValue::FinSet(_) => "finset",
            LatticeValue::Config(_) => "config",
            LatticeValue::Hist(_) => "hist",
        }
    }

    pub fn join(&self, other: &LatticeValue) -> Result<LatticeValue, LatticeError> {
        use LatticeValue::*;
        Ok(match (self, other) {
            (FinSet(a), FinSet(b)) => FinSet(a.join(b)),
            (Config(a), Config(b)) => Config(a.join(b)),
            (Hist(a), Hist(b)) => Hist(a.join(b)),
            (a, b) => return Err(LatticeError::Mismatch(a.kind(), b.kind())),
        })
    }

    /// `a ⊑ b`; values of different lattices are never ordered.
    pub fn leq(&self, other: &LatticeValue) -> bool {
        use LatticeValue::*;
        match (self, other) {
            (FinSet(a), FinSet(b)) => a.is_subset(b),
            (Config(a), Config(b)) => a.leq(b),
            (Hist(a), Hist(b)) => a.is_subset(b),
            _ => false,
        }
    }

    pub fn comparable(&self, other: &LatticeValue) -> bool {
        self.leq(other) || other.leq(self)
    }

    /// Join of a nonempty collection.
    pub fn join_all<'a, I>(values: I) -> Result<Option<LatticeValue>, LatticeError>
    where
        I: IntoIterator<Item = &'a LatticeValue>,
    {
        let mut acc: Option<LatticeValue> = None;
        for v in values {
            acc = Some(match acc {
                None => v.clone(),
                Some(a) => a.join(v)?,
            });
        }
        Ok(acc)
    }
}

impl Canonical for LatticeValue {
    fn encode_body(&self, out: &mut Vec<u8>) {
        match self {
            LatticeValue::FinSet(s) => {
                out.push(TAG_FINSET);
                put_sorted_set(out, s.iter().map(|v| v.to_be_bytes().to_vec()).collect());
            }
            LatticeValue::Config(c) => c.encode_body(out),
            LatticeValue::Hist(h) => encode_config_set(h, out),
        }
    }
}

impl fmt::Display for LatticeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeValue::FinSet(s) => write!(f, "{s:?}"),
            LatticeValue::Config(c) => write!(f, "{c}"),
            LatticeValue::Hist(h) => {
                f.write_str("[")?;
                for (i, c) in h.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("]")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u64]) -> LatticeValue {
        LatticeValue::FinSet(v.iter().copied().collect())
    }

    fn all_subsets(universe: &[u64]) -> Vec<BTreeSet<u64>> {
        (0..1u32 << universe.len())
            .map(|mask| universe.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, v)| *v).collect())
            .collect()
    }

    #[test]
    fn join_is_union() {
        assert_eq!(set(&[1]).join(&set(&[2])).unwrap(), set(&[1, 2]));
        let x = set(&[3, 4]);
        assert_eq!(x.join(&x).unwrap(), x);
    }

    #[test]
    fn join_matches_least_upper_bound_by_enumeration() {
        let subsets = all_subsets(&[1, 2, 3]);
        for a in subsets.iter().filter(|s| s.len() == 2) {
            for b in subsets.iter().filter(|s| s.len() == 2) {
                // every upper bound, then the one below all others
                let uppers: Vec<_> = subsets.iter().filter(|u| a.is_subset(u) && b.is_subset(u)).collect();
                let least = uppers.iter().find(|u| uppers.iter().all(|w| u.is_subset(w))).unwrap();
                let j = LatticeValue::FinSet(a.clone()).join(&LatticeValue::FinSet(b.clone())).unwrap();
                assert_eq!(j, LatticeValue::FinSet((*least).clone()));
            }
        }
    }

    #[test]
    fn leq_examples() {
        assert!(set(&[1]).leq(&set(&[1, 2])));
        assert!(!set(&[1]).leq(&set(&[2])));
    }

    #[test]
    fn mismatched_join_is_an_error() {
        let c = LatticeValue::Config(Configuration::genesis(["r1"]));
        assert!(matches!(set(&[1]).join(&c), Err(LatticeError::Mismatch(_, _))));
        assert!(!set(&[1]).leq(&c));
    }

    #[test]
    fn replicas_add_minus_remove() {
        let c = Configuration::from_updates([Update::add("r1"), Update::add("r2"), Update::remove("r2")]);
        assert_eq!(c.replicas(), BTreeSet::from([ProcessId::new("r1")]));
        assert!(Configuration::empty().replicas().is_empty());
        assert_eq!(c.height(), 3);
    }

    #[test]
    fn quorum_threshold_four() {
        let c = Configuration::genesis(["r1", "r2", "r3", "r4"]);
        let ids: Vec<ProcessId> = ["r1", "r2", "r3"].iter().map(|s| ProcessId::new(*s)).collect();
        assert!(c.is_quorum(&ids));
        assert!(!c.is_quorum(&ids[..2]));
        assert!(!c.is_quorum(&[ProcessId::new("r1"), ProcessId::new("r2"), ProcessId::new("x")]));
        assert_eq!(c.quorum_size(), 3);
        assert_eq!(c.fault_bound(), 1);
    }

    #[test]
    fn readd_is_rejected() {
        let base = Configuration::genesis(["r1"]).with([Update::remove("r1")]);
        let bad = base.with([Update::add("r9")]);
        assert!(bad.check_no_readd(&base).is_ok());
        let cfg = Configuration::from_updates([Update::add("r1")]);
        let base2 = Configuration::from_updates([Update::remove("r1")]);
        assert_eq!(cfg.check_no_readd(&base2), Err(LatticeError::Readded("r1".into())));
    }

    #[test]
    fn history_validation() {
        let c0 = Configuration::genesis(["r1", "r2"]);
        let u = c0.with([Update::add("r3")]);
        let w = c0.with([Update::add("r4")]);
        assert!(validate_history(&BTreeSet::from([c0.clone(), u.clone()])));
        assert!(!validate_history(&BTreeSet::from([u.clone(), w])));
        let h = History::new(BTreeSet::from([c0.clone(), u.clone()])).unwrap();
        assert_eq!(h.max_element(), &u);
        assert_eq!(History::singleton(c0.clone()).max_element(), &c0);
        assert_eq!(max_element(&BTreeSet::new()), Err(LatticeError::EmptyHistory));
    }

    #[test]
    fn update_parse_round_trip() {
        assert_eq!(Update::parse("+r1"), Some(Update::add("r1")));
        assert_eq!(Update::parse("-x"), Some(Update::remove("x")));
        assert_eq!(Update::parse("r1"), None);
        assert_eq!(Update::parse("+"), None);
        assert_eq!(Update::add("r7").to_string(), "+r7");
    }

    #[test]
    fn canonical_encoding_is_stable() {
        let c = Configuration::from_updates([Update::add("r2"), Update::add("r1")]);
        let bytes = c.canonical_bytes();
        assert_eq!(bytes[0], crate::encoding::ENCODING_VERSION);
        assert_eq!(bytes[1], TAG_CONFIG);
        // two elements
        assert_eq!(&bytes[2..6], &[0, 0, 0, 2]);
        // first element is "+r1": len 7 = 1 polarity + 4 len + 2 id
        assert_eq!(&bytes[6..10], &[0, 0, 0, 7]);
        assert_eq!(&bytes[10..17], &[b'+', 0, 0, 0, 2, b'r', b'1']);
    }
}
