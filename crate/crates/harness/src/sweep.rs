//! Many runs at once: seed sweeps over scenarios, random scenario
//! generators and the exhaustive access-control delivery orders.

use std::fmt;
use std::ops::Range;

use byzreconf::access_control::AcBackend;
use byzreconf::lattice::LatticeValue;
use byzreconf::lattice::{ProcessId, Update};
use byzreconf::messages::Msg;
use byzreconf::node::Op;
use byzreconf::simnet::StepOutcome;
use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::report::RunReport;
use crate::runner::{self, RunError, RunOutput};
use crate::scenario::{Action, Behavior, InputMode, ObjectKind, Scenario, Scheduled};

/// Outcome of a batch of runs.
#[derive(Debug, Default)]
pub struct Summary {
    pub label: String,
    pub runs: usize,
    pub passed: usize,
    /// `(seed, reason)` of every failed run.
    pub failures: Vec<(u64, String)>,
    pub capped: usize,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.runs > 0
    }

    fn add(&mut self, seed: u64, res: Result<RunReport, String>) {
        self.runs += 1;
        match res {
            Ok(r) => {
                if r.end == "cap" {
                    self.capped += 1;
                }
                if r.passed() {
                    self.passed += 1;
                } else {
                    let why = r.failures().map(|f| format!("{} {:?}", f.name, f.verdict)).join("; ");
                    self.failures.push((seed, why));
                }
            }
            Err(e) => self.failures.push((seed, e)),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}/{} runs passed", self.label, self.passed, self.runs)?;
        if self.capped > 0 {
            write!(f, " ({} hit the step cap)", self.capped)?;
        }
        for (seed, why) in self.failures.iter().take(5) {
            write!(f, "\n  seed {seed}: {why}")?;
        }
        if self.failures.len() > 5 {
            write!(f, "\n  ... {} more", self.failures.len() - 5)?;
        }
        Ok(())
    }
}

/// Runs `f` for every seed in parallel and collects the verdicts.
pub fn sweep<F, E>(label: &str, seeds: Range<u64>, f: F) -> Summary
where
    F: Fn(u64) -> Result<RunOutput, E> + Sync,
    E: fmt::Display,
{
    let results: Vec<(u64, Result<RunReport, String>)> =
        seeds.into_par_iter().map(|s| (s, f(s).map(|o| o.report).map_err(|e| e.to_string()))).collect();
    let mut summary = Summary { label: label.to_string(), ..Summary::default() };
    for (seed, res) in results {
        summary.add(seed, res);
    }
    summary
}

pub fn sweep_scenario(scn: &Scenario, seeds: Range<u64>) -> Summary {
    sweep(&scn.name, seeds, |s| runner::run(scn, s))
}

/// Names accepted by [`generate`].
pub const GENERATORS: [&str; 5] = ["dbla", "reconfig", "maxreg", "mixed", "access"];

fn ids(prefix: &str, range: std::ops::RangeInclusive<usize>) -> Vec<ProcessId> {
    byzreconf::cluster::ids(prefix, range)
}

fn at(a: u64, action: Action) -> Scheduled {
    Scheduled { at: a, action }
}

fn base(name: String, object: ObjectKind, clients: usize) -> Scenario {
    let mut scn = Scenario::empty(&name, object);
    scn.replicas = ids("r", 1..=4);
    scn.clients = ids("c", 1..=clients);
    scn
}

/// Declares `count` random configurations over C0 = r1..r4 with spares
/// r5..r7. Spares are only ever added and at most two of r1..r4 are removed.
fn random_configs(rng: &mut ChaCha8Rng, scn: &mut Scenario, count: usize) -> Vec<String> {
    scn.spares = ids("r", 5..=7);
    let pool: Vec<Update> = ["+r5", "+r6", "+r7", "-r1", "-r2"].iter().filter_map(|u| Update::parse(u)).collect();
    (0..count)
        .map(|i| {
            let n = rng.gen_range(1..=3);
            let ups: Vec<Update> = pool.choose_multiple(rng, n).cloned().collect();
            let name = format!("K{i}");
            scn.configs.insert(name.clone(), ups);
            name
        })
        .collect()
}

fn data_op(rng: &mut ChaCha8Rng, client: ProcessId, object: ObjectKind, value: u64) -> Action {
    match object {
        ObjectKind::MaxReg => {
            if rng.gen_bool(0.5) {
                Action::Write { client, value }
            } else {
                Action::Read { client }
            }
        }
        ObjectKind::Access => Action::Request { client, value },
        _ => Action::Propose { client, value },
    }
}

fn gen_data(
    rng: &mut ChaCha8Rng,
    scn: &mut Scenario,
    object: ObjectKind,
    ops: std::ops::RangeInclusive<usize>,
    window: u64,
) {
    let mut next_value = 1;
    for c in scn.clients.clone() {
        for _ in 0..rng.gen_range(ops.clone()) {
            let v = if object == ObjectKind::Access { rng.gen_range(1..=3) } else { next_value };
            next_value += 1;
            let op = data_op(rng, c.clone(), object, v);
            scn.schedule.push(at(rng.gen_range(0..window), op));
        }
    }
}

fn gen_faults(rng: &mut ChaCha8Rng, scn: &mut Scenario, window: u64) {
    if rng.gen_bool(0.5) {
        let r = scn.replicas.choose(rng).cloned().expect("replicas");
        let action = match rng.gen_range(0..3) {
            0 => Action::Halt { id: r },
            1 => Action::Corrupt { id: r, behavior: Behavior::Silent },
            _ => Action::Corrupt { id: r, behavior: Behavior::Honest },
        };
        scn.schedule.push(at(rng.gen_range(0..window), action));
    }
}

fn try_generate(kind: &str, rng: &mut ChaCha8Rng, seed: u64) -> Option<Scenario> {
    let name = format!("gen-{kind}-{seed}");
    let scn = match kind {
        "dbla" => {
            let mut scn = base(name, ObjectKind::Dbla, 5);
            gen_data(rng, &mut scn, ObjectKind::Dbla, 1..=2, 120);
            gen_faults(rng, &mut scn, 120);
            scn
        }
        "reconfig" | "maxreg" => {
            let object = if kind == "maxreg" { ObjectKind::MaxReg } else { ObjectKind::Dbla };
            let mut scn = base(name, ObjectKind::Reconfig, 4);
            let count = rng.gen_range(1..=3);
            let configs = random_configs(rng, &mut scn, count);
            let ops = if kind == "maxreg" { 2..=4 } else { 1..=2 };
            gen_data(rng, &mut scn, object, ops, 200);
            for k in configs {
                let client = scn.clients.choose(rng).cloned().expect("clients");
                scn.schedule.push(at(rng.gen_range(0..200), Action::Reconfig { client, config: k }));
            }
            scn
        }
        "mixed" => {
            let pick = ["dbla", "standalone-maxreg", "reconfig", "maxreg"].choose(rng).copied().expect("kinds");
            if pick == "standalone-maxreg" {
                let mut scn = base(name, ObjectKind::MaxReg, 4);
                gen_data(rng, &mut scn, ObjectKind::MaxReg, 1..=3, 300);
                gen_faults(rng, &mut scn, 300);
                scn
            } else {
                let mut scn = try_generate(pick, rng, seed)?;
                scn.name = name;
                gen_faults(rng, &mut scn, 300);
                if rng.gen_bool(0.3) {
                    let c = scn.clients.choose(rng).cloned().expect("clients");
                    scn.schedule.push(at(rng.gen_range(0..300), Action::Halt { id: c }));
                }
                scn
            }
        }
        "access" => {
            let mut scn = base(name, ObjectKind::Access, 3);
            scn.access = Some(AcBackend::Quorum);
            scn.conflicts = vec![(1, 2), (1, 3), (2, 3)];
            gen_data(rng, &mut scn, ObjectKind::Access, 1..=2, 100);
            scn
        }
        _ => return None,
    };
    Some(scn)
}

/// A random valid scenario of the given kind; deterministic in `seed`.
pub fn generate(kind: &str, seed: u64) -> Option<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_5ce4_a410);
    for _ in 0..64 {
        let mut scn = try_generate(kind, &mut rng, seed)?;
        scn.schedule.sort_by_key(|s| s.at);
        scn.seeds = seed..seed + 1;
        scn.inputs = InputMode::Signed(scn.clients.clone());
        if scn.validate().is_ok() {
            return Some(scn);
        }
    }
    None
}

/// Runs the generated scenario for `seed` under the same seed.
pub fn run_generated(kind: &str, seed: u64) -> Result<RunOutput, RunError> {
    let scn = generate(kind, seed).ok_or_else(|| RunError::Header(format!("generator `{kind}` produced nothing")))?;
    runner::run(&scn, seed)
}

/// `k` reconfigurations, each adding one spare, issued by different
/// clients `stagger` deliveries apart.
pub fn concurrent_reconfigs(k: usize, stagger: u64) -> Scenario {
    let mut scn = base(format!("reconfigs-{k}-every-{stagger}"), ObjectKind::Reconfig, k.max(2));
    scn.spares = ids("r", 5..=4 + k);
    for i in 0..k {
        let name = format!("A{}", i + 1);
        scn.configs.insert(name.clone(), vec![Update::add(format!("r{}", 5 + i))]);
        scn.schedule.push(at(i as u64 * stagger, Action::Reconfig { client: scn.clients[i].clone(), config: name }));
    }
    scn.schedule.push(at(0, Action::Propose { client: scn.clients[k.max(2) - 1].clone(), value: 1 }));
    scn
}

/// Three replicas (quorum 3), two clients asking for conflicting values 1
/// and 2 under the quorum backend.
pub fn ac_scenario() -> Scenario {
    let mut scn = Scenario::empty("ac-orders", ObjectKind::Access);
    scn.replicas = ids("r", 1..=3);
    scn.clients = ids("c", 1..=2);
    scn.access = Some(AcBackend::Quorum);
    scn.conflicts = vec![(1, 2)];
    scn.schedule = vec![
        at(0, Action::Request { client: ProcessId::new("c1"), value: 1 }),
        at(0, Action::Request { client: ProcessId::new("c2"), value: 2 }),
    ];
    scn
}

/// Delivers the six access requests of [`ac_scenario`] in `order`, letting
/// everything else settle between two deliveries. Request `i` goes from
/// client `c(i / 3 + 1)` to replica `r(i % 3 + 1)`.
pub fn ac_order(order: &[usize]) -> Result<RunOutput, RunError> {
    let scn = ac_scenario();
    let b = runner::builder(&scn, 0);
    let reg = b.registry();
    let mut sim = b.build()?;
    let head = runner::header(
        &format!("ac-order-{}", order.iter().join("")),
        json!({ "ac_order": order }),
        0,
        scn.max_steps,
        &sim,
        &reg,
        "access",
    );
    let holds: Vec<_> = (0..6)
        .map(|i| {
            let (from, to) = (ProcessId::new(format!("c{}", i / 3 + 1)), ProcessId::new(format!("r{}", i % 3 + 1)));
            sim.hold(move |e| e.from == from && e.to == to && matches!(e.msg, Msg::AcRequest { .. }))
        })
        .collect();
    for (c, v) in [("c1", 1), ("c2", 2)] {
        runner::invoke(&mut sim, &ProcessId::new(c), Op::Request { value: LatticeValue::singleton(v) });
    }
    let settle = |sim: &mut byzreconf::cluster::Sim| {
        while sim.step() == StepOutcome::Delivered {
            runner::audit(sim, &reg);
        }
    };
    for &i in order {
        sim.release(holds[i]);
        settle(&mut sim);
    }
    sim.release_all();
    settle(&mut sim);
    runner::note_end(&mut sim, false);
    Ok(RunOutput::new(head, sim.trace().to_vec()))
}

/// Every delivery order of the six requests.
pub fn ac_exhaustive() -> Summary {
    let orders: Vec<Vec<usize>> = (0..6).permutations(6).collect();
    let results: Vec<(u64, Result<RunReport, String>)> = orders
        .par_iter()
        .enumerate()
        .map(|(i, o)| (i as u64, ac_order(o).map(|r| r.report).map_err(|e| e.to_string())))
        .collect();
    let mut summary = Summary { label: "ac-exhaustive".into(), ..Summary::default() };
    for (i, res) in results {
        summary.add(i, res);
    }
    summary
}
