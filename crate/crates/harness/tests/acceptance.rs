//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! of them fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use byzreconf::lattice::{Configuration, LatticeValue, ProcessId, Update};
use byzreconf::simnet::{decode_trace, trace_hash, EventKind};
use byzreconf_harness::report::{RunReport, Verdict};
use byzreconf_harness::runner::{self, RunOutput};
use byzreconf_harness::{attacks, checker, sweep};
use itertools::Itertools;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Runs `f` over `seeds` in parallel and keeps the reports.
fn reports<F>(seeds: std::ops::Range<u64>, f: F) -> Result<Vec<RunReport>, String>
where
    F: Fn(u64) -> Result<RunOutput, String> + Sync,
{
    seeds.into_par_iter().map(|s| f(s).map(|o| o.report).map_err(|e| format!("seed {s}: {e}"))).collect()
}

fn first_failure(rs: &[RunReport]) -> Option<String> {
    rs.iter().find(|r| !r.passed()).map(|r| {
        let why: Vec<String> = r.failures().map(|f| format!("{} {:?}", f.name, f.verdict)).collect();
        format!("{} seed {}: {}", r.label, r.seed, why.join("; "))
    })
}

/// Every run passes, none hit the step cap and `inv` is checked (not
/// vacuous) in at least `min_checked` of them.
fn require(rs: &[RunReport], inv: &str, min_checked: usize) -> Outcome {
    if let Some(f) = first_failure(rs) {
        return Err(f);
    }
    if let Some(r) = rs.iter().find(|r| r.end != "quiescent") {
        return Err(format!("{} seed {} hit the step cap", r.label, r.seed));
    }
    let checked = rs.iter().filter(|r| r.verdict(inv) == Some(&Verdict::Pass)).count();
    if checked < min_checked {
        return Err(format!("{inv} was checked in only {checked} of {} runs (need {min_checked})", rs.len()));
    }
    Ok(format!("{} runs, {inv} checked in {checked}", rs.len()))
}

fn generated(kind: &'static str) -> impl Fn(u64) -> Result<RunOutput, String> + Sync {
    move |s| sweep::run_generated(kind, s).map_err(|e| e.to_string())
}

fn attack(name: &'static str, object: &'static str) -> impl Fn(u64) -> Result<RunOutput, String> + Sync {
    move |s| attacks::run(name, object, false, s).map_err(|e| e.to_string())
}

fn comparability() -> Outcome {
    let rs = reports(0..1000, generated("dbla"))?;
    require(&rs, "bla-comparability", 1000)
}

fn key_update() -> Outcome {
    let rs = reports(0..500, generated("reconfig"))?;
    require(&rs, "key-update", 500)
}

fn attack_runs(name: &'static str) -> Outcome {
    let mut lines = Vec::new();
    for object in ["dbla", "maxreg"] {
        let rs = reports(0..100, attack(name, object))?;
        require(&rs, "attack-assertions", 100)?;
        if name == "i_still_work_here" {
            require(&rs, "forgeries-rejected", 100)?;
        }
        lines.push(format!("{object}: 100 seeds"));
    }
    Ok(lines.join(", "))
}

fn mr_atomicity() -> Outcome {
    let rs = reports(0..500, generated("maxreg"))?;
    let restarted = rs.iter().filter(|r| r.metrics.restarts > 0).count();
    require(&rs, "mr-atomicity", 450).map(|s| format!("{s}, {restarted} with restarts"))
}

fn liveness() -> Outcome {
    let rs = reports(0..500, generated("mixed"))?;
    require(&rs, "liveness", 500)
}

fn ok_bound() -> Outcome {
    let mut parts = Vec::new();
    for k in [1usize, 2, 3, 5] {
        let mut most = 0;
        for stagger in [0, 60, 400] {
            let scn = sweep::concurrent_reconfigs(k, stagger);
            let rs = reports(0..50, |s| runner::run(&scn, s).map_err(|e| e.to_string()))?;
            require(&rs, "ok-access-bound", 50)?;
            most = most.max(rs.iter().map(|r| r.metrics.configs_accessed).max().unwrap_or(0));
        }
        if most > k as u64 + 1 {
            return Err(format!("k={k}: {most} configurations accessed"));
        }
        parts.push(format!("k={k}: max {most}"));
    }
    Ok(parts.join(", "))
}

fn ac_at_most_one() -> Outcome {
    let summary = sweep::ac_exhaustive();
    if !summary.ok() || summary.runs != 720 {
        return Err(summary.to_string());
    }
    // each value wins in some order, so the sweep is not trivially safe
    let mut winners = BTreeSet::new();
    for order in (0..6usize).permutations(6) {
        let out = sweep::ac_order(&order).map_err(|e| e.to_string())?;
        for ev in out.events.iter().filter(|e| e.kind == EventKind::ClientReturn && e.descriptor == "Certified") {
            winners.insert(ev.from.clone().unwrap_or_default());
        }
    }
    if winners.len() != 2 {
        return Err(format!("only {winners:?} ever obtained a certificate"));
    }
    let rs = reports(0..200, generated("access"))?;
    require(&rs, "ac-at-most-one", 200).map(|s| format!("720/720 orders, random: {s}"))
}

fn determinism() -> Outcome {
    let kinds = ["dbla", "reconfig", "maxreg", "mixed", "access"];
    let pairs: Vec<(usize, u64)> = (0..50).map(|i| (i, 1000 + i as u64 * 7)).collect();
    pairs.par_iter().try_for_each(|&(i, seed)| {
        let run = |seed| -> Result<RunOutput, String> {
            match i % 7 {
                5 => attacks::run("i_still_work_here", "dbla", false, seed).map_err(|e| e.to_string()),
                6 => attacks::run("slow_reader", "maxreg", false, seed).map_err(|e| e.to_string()),
                k => sweep::run_generated(kinds[k], seed).map_err(|e| e.to_string()),
            }
        };
        let a = run(seed)?;
        let b = run(seed)?;
        if a.report.trace_hash != b.report.trace_hash {
            return Err(format!("pair {i}: two runs differ"));
        }
        let (header, events) = decode_trace(&a.encode()).map_err(|e| e.to_string())?;
        if trace_hash(&header, &events) != a.report.trace_hash {
            return Err(format!("pair {i}: encoding round trip changed the trace"));
        }
        if checker::check(&header, &events).verdicts() != a.report.verdicts() {
            return Err(format!("pair {i}: offline check disagrees with the live run"));
        }
        let replayed = runner::replay(&header).map_err(|e| e.to_string())?;
        if replayed.report.trace_hash != a.report.trace_hash {
            return Err(format!("pair {i}: replay differs"));
        }
        Ok(())
    })?;
    Ok("50 scenario/seed pairs: repeat, round trip and replay hashes identical".into())
}

fn subsets<T: Clone>(items: &[T]) -> impl Iterator<Item = (u32, Vec<T>)> + '_ {
    (0..1u32 << items.len())
        .map(move |m| (m, (0..items.len()).filter(|i| m >> i & 1 == 1).map(|i| items[i].clone()).collect()))
}

fn brute_force() -> Outcome {
    let universe = [1u64, 2, 3, 4];
    let sets: Vec<(u32, LatticeValue)> =
        subsets(&universe).map(|(m, xs)| (m, LatticeValue::FinSet(xs.into_iter().collect()))).collect();
    for (ma, a) in &sets {
        for (mb, b) in &sets {
            let join = a.join(b).map_err(|e| e.to_string())?;
            let expect = sets.iter().find(|(m, _)| *m == ma | mb).map(|(_, v)| v).expect("powerset");
            if &join != expect || a.leq(b) != (ma & mb == *ma) {
                return Err(format!("finset {a} {b}"));
            }
        }
    }
    let updates: Vec<Update> = ["+r1", "+r2", "+r3", "-r1"].iter().filter_map(|u| Update::parse(u)).collect();
    let confs: Vec<(u32, Configuration)> =
        subsets(&updates).map(|(m, us)| (m, Configuration::from_updates(us))).collect();
    for (ma, a) in &confs {
        for (mb, b) in &confs {
            let expect = &confs.iter().find(|(m, _)| *m == ma | mb).expect("powerset").1;
            if &a.join(b) != expect || a.leq(b) != (ma & mb == *ma) || a.lt(b) != (ma & mb == *ma && ma != mb) {
                return Err(format!("configuration {a} {b}"));
            }
        }
    }
    let mut checked = 0;
    for n in 1..=7usize {
        let members: Vec<ProcessId> = (1..=n).map(|i| ProcessId::new(format!("r{i}"))).collect();
        let c = Configuration::genesis(members.iter().cloned());
        for (_, s) in subsets(&members) {
            let oracle = 3 * s.len() > 2 * n;
            let set: BTreeSet<ProcessId> = s.into_iter().collect();
            if c.is_quorum(set.iter()) != oracle || (set.len() >= c.quorum_size()) != oracle {
                return Err(format!("n={n} |S|={}", set.len()));
            }
            checked += 1;
        }
    }
    Ok(format!("256 finset pairs, 256 configuration pairs, {checked} quorum subsets"))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 10] = [
        ("comparability (1000 seeds, 4 replicas, 5 clients)", comparability),
        ("key-update (500 reconfiguration seeds)", key_update),
        ("i_still_work_here (100 seeds per object)", || attack_runs("i_still_work_here")),
        ("slow_reader (100 seeds per object)", || attack_runs("slow_reader")),
        ("max-register atomicity with concurrent reconfiguration (500 seeds)", mr_atomicity),
        ("liveness (500 seeds)", liveness),
        ("configurations accessed in state transfer <= k+1", ok_bound),
        ("access control certifies at most one of two conflicting values", ac_at_most_one),
        ("determinism", determinism),
        ("brute-force lattice and quorum oracles", brute_force),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {:>2} PASS {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
