use std::collections::BTreeSet;

use byzreconf::fscrypto::{Backend, Crypto};
use byzreconf::lattice::{Configuration, LatticeValue, ProcessId, Update};
use proptest::prelude::*;

fn update() -> impl Strategy<Value = Update> {
    (any::<bool>(), 1u8..7).prop_map(|(add, i)| {
        let p = format!("r{i}");
        if add {
            Update::add(p.as_str())
        } else {
            Update::remove(p.as_str())
        }
    })
}

fn config() -> impl Strategy<Value = Configuration> {
    proptest::collection::btree_set(update(), 0..6).prop_map(Configuration::from_updates)
}

fn finset() -> impl Strategy<Value = LatticeValue> {
    proptest::collection::btree_set(0u64..12, 0..6).prop_map(LatticeValue::FinSet)
}

proptest! {
    #[test]
    fn configuration_join_is_a_semilattice(a in config(), b in config(), c in config()) {
        prop_assert_eq!(a.join(&b), b.join(&a));
        prop_assert_eq!(a.join(&b).join(&c), a.join(&b.join(&c)));
        prop_assert_eq!(a.join(&a), a.clone());
        prop_assert!(a.leq(&a.join(&b)) && b.leq(&a.join(&b)));
        prop_assert_eq!(a.leq(&b), a.join(&b) == b);
        prop_assert_eq!(a.lt(&b), a.leq(&b) && a != b);
        if a.leq(&b) {
            prop_assert!(a.height() <= b.height());
        }
    }

    #[test]
    fn finset_join_is_a_semilattice(a in finset(), b in finset(), c in finset()) {
        let ab = a.join(&b).unwrap();
        prop_assert_eq!(&ab, &b.join(&a).unwrap());
        prop_assert_eq!(ab.join(&c).unwrap(), a.join(&b.join(&c).unwrap()).unwrap());
        prop_assert!(a.leq(&ab) && b.leq(&ab));
        prop_assert_eq!(a.leq(&b), ab == b);
        prop_assert_eq!(a.comparable(&b), a.leq(&b) || b.leq(&a));
    }

    #[test]
    fn mixed_kinds_do_not_join(a in finset(), c in config()) {
        prop_assert!(a.join(&LatticeValue::Config(c)).is_err());
    }

    #[test]
    fn two_quorums_share_a_correct_member(
        n in 1usize..10,
        a in proptest::collection::btree_set(0usize..10, 0..10),
        b in proptest::collection::btree_set(0usize..10, 0..10),
    ) {
        let members: Vec<ProcessId> = (0..n).map(|i| ProcessId::new(format!("r{i}"))).collect();
        let c = Configuration::genesis(members.iter().cloned());
        let pick = |s: &BTreeSet<usize>| -> BTreeSet<ProcessId> {
            s.iter().filter(|&&i| i < n).map(|&i| members[i].clone()).collect()
        };
        let (qa, qb) = (pick(&a), pick(&b));
        if c.is_quorum(qa.iter()) && c.is_quorum(qb.iter()) {
            prop_assert!(qa.intersection(&qb).count() > c.fault_bound());
        }
    }

    #[test]
    fn key_updates_are_monotone(
        keychain in any::<bool>(),
        steps in proptest::collection::vec(0u64..20, 1..6),
        t in 0u64..25,
    ) {
        let backend = if keychain { Backend::KeyChain } else { Backend::TrustedOracle };
        let mut crypto = Crypto::new(backend, 7);
        let p = ProcessId::new("r1");
        let mut high = 0;
        for s in steps {
            let moved = crypto.update_fs_keys(&p, s);
            prop_assert_eq!(moved, s > high);
            high = high.max(s);
            prop_assert_eq!(crypto.key_timestamp(&p), high);
        }
        match crypto.fs_sign(&p, b"m", t) {
            None => prop_assert!(t < high),
            Some(sig) => {
                prop_assert!(t >= high);
                prop_assert!(crypto.fs_verify(b"m", &p, &sig, t));
                prop_assert!(!crypto.fs_verify(b"n", &p, &sig, t));
                prop_assert!(!crypto.fs_verify(b"m", &ProcessId::new("r2"), &sig, t));
            }
        }
    }
}
