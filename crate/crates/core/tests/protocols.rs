use std::collections::BTreeSet;

use byzreconf::cluster::{ClusterBuilder, Sim, AUTHORITY};
use byzreconf::lattice::{Configuration, History, LatticeValue, ProcessId, Update};
use byzreconf::node::{Op, Output};
use byzreconf::protocol::{HistoryCert, InputCert, ObjectId};
use byzreconf::reconfig::authority_sign;
use byzreconf::simnet::{RunEnd, Silent};

const CAP: u64 = 500_000;

fn p(s: &str) -> ProcessId {
    ProcessId::new(s)
}

fn run(sim: &mut Sim) -> Vec<(ProcessId, Output)> {
    assert_eq!(sim.run(CAP), RunEnd::Quiescent);
    sim.take_outputs()
}

fn proposed(outs: &[(ProcessId, Output)]) -> Vec<(ProcessId, LatticeValue, Configuration)> {
    outs.iter()
        .filter_map(|(who, o)| match o {
            Output::Proposed { value, cert, .. } => Some((who.clone(), value.clone(), cert.anchor().clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn concurrent_proposals_are_comparable_and_valid() {
    for seed in 0..20 {
        let mut sim = ClusterBuilder::new(seed, 4, 3).build().unwrap();
        for (i, c) in ["c1", "c2", "c3"].iter().enumerate() {
            sim.invoke(&p(c), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(i as u64 + 1) })
                .unwrap();
        }
        let outs = proposed(&run(&mut sim));
        assert_eq!(outs.len(), 3, "seed {seed}");
        for (i, (_, w, _)) in outs.iter().enumerate() {
            for (_, v, _) in &outs[i + 1..] {
                assert!(w.comparable(v), "seed {seed}: {w} vs {v}");
            }
        }
        for (who, w, _) in &outs {
            let mine = who.as_str()[1..].parse::<u64>().unwrap();
            assert!(LatticeValue::singleton(mine).leq(w), "seed {seed}");
        }
    }
}

#[test]
fn single_proposal_returns_its_value() {
    let mut sim = ClusterBuilder::new(1, 4, 1).build().unwrap();
    sim.invoke(&p("c1"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(7) }).unwrap();
    let outs = proposed(&run(&mut sim));
    assert_eq!(outs[0].1, LatticeValue::singleton(7));
}

#[test]
fn tolerates_one_silent_replica() {
    let mut sim = ClusterBuilder::new(3, 4, 2).build().unwrap();
    sim.corrupt(&p("r2"), Box::new(Silent)).unwrap();
    sim.invoke(&p("c1"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(1) }).unwrap();
    sim.invoke(&p("c2"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(2) }).unwrap();
    let outs = proposed(&run(&mut sim));
    assert_eq!(outs.len(), 2);
    assert!(outs[0].1.comparable(&outs[1].1));
}

#[test]
fn authority_history_moves_replicas_and_clients() {
    let mut b = ClusterBuilder::new(4, 4, 1);
    b.spares = vec![p("r5")];
    let mut sim = b.build().unwrap();
    sim.invoke(&p("c1"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(1) }).unwrap();
    run(&mut sim);
    let c0 = Configuration::genesis(["r1", "r2", "r3", "r4"].map(p));
    let c1 = c0.with([Update::add("r5"), Update::remove("r1")]);
    let h = History::new(BTreeSet::from([c0, c1.clone()])).unwrap();
    let sig = authority_sign(sim.crypto(), &p(AUTHORITY), &h);
    sim.invoke(&p(AUTHORITY), Op::UpdateHistory { history: h, cert: HistoryCert::Authority(sig) }).unwrap();
    run(&mut sim);
    for r in ["r2", "r3", "r4", "r5"] {
        let rep = sim.node(&p(r)).unwrap().as_replica().unwrap();
        assert_eq!(rep.installed(), &c1, "{r}");
        assert_eq!(rep.values(ObjectId::Lattice).unwrap().len(), 1, "{r} received state");
    }
    sim.invoke(&p("c1"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(2) }).unwrap();
    let outs = proposed(&run(&mut sim));
    assert_eq!(outs[0].1, LatticeValue::FinSet(BTreeSet::from([1, 2])));
    assert_eq!(outs[0].2, c1);
}

#[test]
fn max_register_reads_latest_write() {
    let mut sim = ClusterBuilder::new(5, 4, 2).objects(&[ObjectId::MaxReg]).build().unwrap();
    sim.invoke(&p("c1"), Op::Write { value: 4 }).unwrap();
    run(&mut sim);
    sim.invoke(&p("c1"), Op::Write { value: 2 }).unwrap();
    run(&mut sim);
    sim.invoke(&p("c2"), Op::Read).unwrap();
    let outs = run(&mut sim);
    assert!(matches!(outs[0].1, Output::Read { value: 4 }));
}

#[test]
fn reconfiguration_installs_new_configuration() {
    for seed in 0..5 {
        let mut sim = ClusterBuilder::new(seed, 4, 2).reconfigurable(1).build().unwrap();
        let c0 = Configuration::genesis(["r1", "r2", "r3", "r4"].map(p));
        let target = c0.with([Update::add("r5")]);
        sim.invoke(&p("c1"), Op::Reconfig { config: target.clone(), cert: InputCert::Unchecked }).unwrap();
        sim.invoke(&p("c2"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(3) }).unwrap();
        let outs = run(&mut sim);
        assert!(outs.iter().any(|(_, o)| matches!(o, Output::Reconfigured { .. })), "seed {seed}");
        for r in ["r1", "r2", "r3", "r4", "r5"] {
            let rep = sim.node(&p(r)).unwrap().as_replica().unwrap();
            assert_eq!(rep.installed(), &target, "seed {seed} {r}");
        }
        sim.invoke(&p("c1"), Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(4) }).unwrap();
        let outs = proposed(&run(&mut sim));
        assert_eq!(outs[0].2, target);
        assert!(LatticeValue::singleton(3).leq(&outs[0].1));
    }
}
