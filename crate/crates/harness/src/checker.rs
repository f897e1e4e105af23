//! Offline invariant checker. Everything here is computed from the trace
//! header and events alone, so `check` on a saved trace reproduces the
//! verdicts of the live run.

use std::collections::{BTreeMap, BTreeSet};

use byzreconf::lattice::{Configuration, LatticeValue};
use byzreconf::node::{config_from_json, value_from_json};
use byzreconf::simnet::{trace_hash, EventKind, ScenarioEvent};
use serde_json::Value;

use crate::report::{InvariantResult, Metrics, RunReport, Verdict};

/// Names of the checked properties, in report order.
pub const INVARIANTS: [&str; 17] = [
    "bla-validity",
    "bla-inclusion",
    "bla-comparability",
    "bla-verifiability",
    "key-update",
    "tentative-never-installed",
    "pivotal-not-skipped",
    "cmax",
    "mr-validity",
    "mr-atomicity",
    "mr-monotone-cells",
    "ac-at-most-one",
    "reconfig-validity",
    "ok-access-bound",
    "forgeries-rejected",
    "attack-assertions",
    "liveness",
];

struct LaOut {
    step: u64,
    who: String,
    obj: String,
    value: LatticeValue,
    inputs: Vec<LatticeValue>,
}

/// One client operation: invocation and, if it finished, its return.
struct OpRecord {
    client: String,
    invoke: u64,
    kind: String,
    detail: Value,
    ret: Option<(u64, String, Value)>,
    rejected: bool,
}

struct View<'a> {
    events: &'a [ScenarioEvent],
    roster: Vec<String>,
    genesis: Configuration,
    conflicts: Vec<(u64, u64)>,
    ops: Vec<OpRecord>,
    outputs: Vec<LaOut>,
    histories: Vec<(u64, Option<String>, Vec<Configuration>)>,
    run_end: Option<&'a Value>,
}

fn kind_of(obj: &str) -> Option<&'static str> {
    match obj {
        "lattice" => Some("finset"),
        "conf" => Some("config"),
        "hist" => Some("hist"),
        _ => None,
    }
}

fn history_from_json(v: &Value) -> Option<Vec<Configuration>> {
    v.get("history")?.as_array()?.iter().map(config_from_json).collect()
}

fn max_config(h: &[Configuration]) -> Option<&Configuration> {
    h.iter().max_by_key(|c| c.height())
}

fn la_out(ev: &ScenarioEvent, d: &Value) -> Option<LaOut> {
    let obj = d.get("obj")?.as_str()?.to_string();
    let kind = kind_of(&obj)?;
    Some(LaOut {
        step: ev.step,
        who: ev.from.clone().unwrap_or_default(),
        value: value_from_json(kind, d.get("value")?)?,
        inputs: d.get("inputs")?.as_array()?.iter().map(|v| value_from_json(kind, v)).collect::<Option<_>>()?,
        obj,
    })
}

impl<'a> View<'a> {
    fn new(header: &'a Value, events: &'a [ScenarioEvent]) -> Self {
        let roster = header["roster"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        let genesis = config_from_json(&header["genesis"]).unwrap_or_default();
        let conflicts = header["conflicts"]
            .as_array()
            .map(|a| a.iter().filter_map(|p| Some((p.get(0)?.as_u64()?, p.get(1)?.as_u64()?))).collect())
            .unwrap_or_default();
        let mut ops: Vec<OpRecord> = Vec::new();
        let mut open: BTreeMap<String, usize> = BTreeMap::new();
        let mut outputs = Vec::new();
        let mut histories = vec![(0, None, vec![genesis.clone()])];
        let mut run_end = None;
        for ev in events {
            let who = ev.from.clone().unwrap_or_default();
            let detail = ev.detail.clone().unwrap_or(Value::Null);
            match ev.kind {
                EventKind::ClientInvoke => {
                    open.insert(who.clone(), ops.len());
                    ops.push(OpRecord {
                        client: who,
                        invoke: ev.step,
                        kind: ev.descriptor.clone(),
                        detail,
                        ret: None,
                        rejected: false,
                    });
                }
                EventKind::ClientReturn => {
                    if let Some(i) = open.remove(&who) {
                        ops[i].ret = Some((ev.step, ev.descriptor.clone(), detail.clone()));
                    }
                    match ev.descriptor.as_str() {
                        "Proposed" => outputs.extend(la_out(ev, &detail)),
                        "Reconfigured" | "HistoryUpdated" => {
                            histories.extend(history_from_json(&detail).map(|h| (ev.step, Some(who), h)))
                        }
                        _ => {}
                    }
                }
                EventKind::Upcall => match ev.descriptor.as_str() {
                    "Rejected" => {
                        if let Some(i) = open.remove(&who) {
                            ops[i].rejected = true;
                        }
                    }
                    "LaOutput" => {
                        if let Some(o) = la_out(ev, &detail) {
                            if let (Some("hist"), LatticeValue::Hist(set)) = (kind_of(&o.obj), &o.value) {
                                histories.push((ev.step, Some(who.clone()), set.iter().cloned().collect()));
                            }
                            outputs.push(o);
                        }
                    }
                    "NewHistory" => histories.extend(history_from_json(&detail).map(|h| (ev.step, Some(who), h))),
                    "RunEnd" => run_end = ev.detail.as_ref(),
                    _ => {}
                },
                _ => {}
            }
        }
        View { events, roster, genesis, conflicts, ops, outputs, histories, run_end }
    }

    fn status(&self, ev: &ScenarioEvent, p: &str) -> char {
        self.roster.iter().position(|r| r == p).and_then(|i| ev.statuses.chars().nth(i)).unwrap_or('?')
    }

    fn forever_correct(&self, p: &str) -> bool {
        self.events.last().is_none_or(|ev| matches!(self.status(ev, p), 'C' | 'I'))
    }

    fn upcalls(&self, desc: &'a str) -> impl Iterator<Item = &'a ScenarioEvent> {
        self.events.iter().filter(move |e| e.kind == EventKind::Upcall && e.descriptor == desc)
    }

    fn pivotal(&self) -> BTreeSet<Configuration> {
        self.histories.iter().filter_map(|(_, _, h)| max_config(h).cloned()).collect()
    }

    fn installs(&self) -> impl Iterator<Item = (&'a ScenarioEvent, Configuration)> {
        self.upcalls("Installed").filter_map(|e| Some((e, config_from_json(&e.detail.as_ref()?["updates"])?)))
    }

    /// Input configurations: `C0`, reconfiguration proposals and the
    /// configurations of externally supplied histories.
    fn input_configs(&self) -> BTreeSet<Configuration> {
        let mut set = BTreeSet::from([self.genesis.clone()]);
        for op in &self.ops {
            match op.kind.as_str() {
                "Reconfig" => set.extend(config_from_json(&op.detail["updates"])),
                "UpdateHistory" => set.extend(history_from_json(&op.detail).unwrap_or_default()),
                _ => {}
            }
        }
        set
    }
}

fn fail(step: u64, msg: impl Into<String>) -> Verdict {
    Verdict::Fail { step, msg: msg.into() }
}

fn verdict(checked: bool, first: Option<(u64, String)>) -> Verdict {
    match (first, checked) {
        (Some((step, msg)), _) => fail(step, msg),
        (None, true) => Verdict::Pass,
        (None, false) => Verdict::Vacuous,
    }
}

fn bla_validity(v: &View) -> Verdict {
    let mut allowed: BTreeMap<&str, BTreeSet<LatticeValue>> = BTreeMap::new();
    for op in v.ops.iter().filter(|o| o.kind == "Propose") {
        if let (Some(obj), Some(kind)) = (op.detail["obj"].as_str(), op.detail["obj"].as_str().and_then(kind_of)) {
            allowed.entry(obj).or_default().extend(value_from_json(kind, &op.detail["value"]));
        }
    }
    let confs = v.input_configs();
    allowed.entry("conf").or_default().extend(confs.into_iter().map(LatticeValue::Config));
    let hist_inputs = allowed.entry("hist").or_default();
    hist_inputs.insert(LatticeValue::Hist(BTreeSet::from([v.genesis.clone()])));
    for o in v.outputs.iter().filter(|o| o.obj == "conf") {
        if let LatticeValue::Config(c) = &o.value {
            hist_inputs.insert(LatticeValue::Hist(BTreeSet::from([c.clone()])));
        }
    }
    for o in &v.outputs {
        let ok_inputs = o.inputs.iter().all(|i| allowed.get(o.obj.as_str()).is_some_and(|a| a.contains(i)));
        if !ok_inputs {
            return fail(o.step, format!("{} output of {} has an input nobody proposed", o.obj, o.who));
        }
        let join = LatticeValue::join_all(o.inputs.iter()).ok().flatten();
        if join.as_ref() != Some(&o.value) {
            return fail(o.step, format!("{} output {} of {} is not the join of its inputs", o.obj, o.value, o.who));
        }
    }
    verdict(!v.outputs.is_empty(), None)
}

fn bla_inclusion(v: &View) -> Verdict {
    let mut checked = false;
    for op in &v.ops {
        let Some((step, desc, d)) = &op.ret else { continue };
        if op.kind != "Propose" || desc != "Proposed" {
            continue;
        }
        let Some(kind) = op.detail["obj"].as_str().and_then(kind_of) else { continue };
        let (Some(input), Some(w)) = (value_from_json(kind, &op.detail["value"]), value_from_json(kind, &d["value"]))
        else {
            return fail(*step, "unparseable propose");
        };
        checked = true;
        if !input.leq(&w) {
            return fail(*step, format!("{} proposed {input} but got {w}", op.client));
        }
    }
    for o in v.outputs.iter().filter(|o| o.obj == "conf") {
        let mine = v
            .ops
            .iter()
            .rev()
            .find(|op| op.client == o.who && op.kind == "Reconfig" && op.invoke < o.step)
            .and_then(|op| config_from_json(&op.detail["updates"]));
        if let (Some(c), LatticeValue::Config(w)) = (mine, &o.value) {
            checked = true;
            if !c.leq(w) {
                return fail(o.step, format!("{} proposed {c} but configuration agreement returned {w}", o.who));
            }
        }
    }
    verdict(checked, None)
}

fn bla_comparability(v: &View) -> Verdict {
    for (i, a) in v.outputs.iter().enumerate() {
        for b in &v.outputs[..i] {
            if a.obj == b.obj && !a.value.comparable(&b.value) {
                return fail(
                    a.step,
                    format!("{} outputs {} ({}) and {} ({}) are incomparable", a.obj, a.value, a.who, b.value, b.who),
                );
            }
        }
    }
    verdict(v.outputs.len() > 1, None)
}

fn bla_verifiability(v: &View) -> Verdict {
    let audits: Vec<&ScenarioEvent> = v.upcalls("Audit").collect();
    for a in &audits {
        if a.detail.as_ref().and_then(|d| d["verified"].as_bool()) != Some(true) {
            return fail(a.step, format!("output of {} does not verify", a.from.as_deref().unwrap_or("?")));
        }
    }
    let returned =
        v.ops.iter().filter(|o| o.ret.as_ref().is_some_and(|(_, d, _)| d == "Proposed" || d == "Certified")).count();
    if audits.len() != returned {
        return fail(v.events.len() as u64, format!("{returned} certified outputs but {} audits", audits.len()));
    }
    verdict(!audits.is_empty(), None)
}

fn key_update(v: &View) -> Verdict {
    let pivotal = v.pivotal();
    let mut st: BTreeMap<String, u64> = BTreeMap::new();
    let mut checked = false;
    for ev in v.events {
        if ev.kind != EventKind::Upcall {
            continue;
        }
        let who = ev.from.clone().unwrap_or_default();
        match ev.descriptor.as_str() {
            "KeyUpdate" => {
                if let Some(t) = ev.detail.as_ref().and_then(|d| d["st"].as_u64()) {
                    let e = st.entry(who).or_default();
                    *e = (*e).max(t);
                }
            }
            "Installed" => {
                let Some(d) = ev.detail.as_ref().and_then(|d| config_from_json(&d["updates"])) else { continue };
                for c in pivotal.iter().filter(|c| (*c).lt(&d)) {
                    checked = true;
                    let stale =
                        c.replicas().iter().filter(|r| st.get(r.as_str()).copied().unwrap_or(0) <= c.height()).count();
                    if stale >= c.quorum_size() {
                        return fail(
                            ev.step,
                            format!(
                                "{who} installed {d} while {stale} replicas of {c} can still sign at height {}",
                                c.height()
                            ),
                        );
                    }
                }
            }
            _ => {}
        }
    }
    verdict(checked, None)
}

fn tentative_never_installed(v: &View) -> Verdict {
    let pivotal = v.pivotal();
    let mut checked = false;
    for (ev, c) in v.installs() {
        checked = true;
        if !pivotal.contains(&c) {
            return fail(ev.step, format!("tentative configuration {c} installed"));
        }
    }
    verdict(checked, None)
}

fn pivotal_not_skipped(v: &View) -> Verdict {
    let pivotal = v.pivotal();
    let mut checked = false;
    for (step, who, h) in &v.histories {
        let Some(who) = who else { continue };
        if !v.forever_correct(who) {
            continue;
        }
        let Some(top) = max_config(h) else { continue };
        for c in pivotal.iter().filter(|c| c.leq(top)) {
            checked = true;
            if !h.contains(c) {
                return fail(*step, format!("history of {who} skips pivotal configuration {c}"));
            }
        }
    }
    verdict(checked, None)
}

fn cmax(v: &View) -> Verdict {
    let Some(end) = v.run_end else { return Verdict::Vacuous };
    if end["end"] != "quiescent" {
        return Verdict::Vacuous;
    }
    let step = v.events.len() as u64;
    let procs = end["processes"].as_array().cloned().unwrap_or_default();
    let correct: Vec<&Value> = procs.iter().filter(|p| p["status"] == "C" || p["status"] == "I").collect();
    let highest: BTreeSet<Configuration> = correct.iter().filter_map(|p| config_from_json(&p["highest"])).collect();
    if highest.len() > 1 {
        return fail(step, format!("correct processes end with {} different highest configurations", highest.len()));
    }
    let Some(top) = highest.into_iter().next() else { return Verdict::Vacuous };
    let mut members = 0;
    for p in correct.iter().filter(|p| p["role"] == "replica") {
        let id = p["id"].as_str().unwrap_or("?");
        if !top.is_member(&id.into()) {
            continue;
        }
        members += 1;
        if config_from_json(&p["installed"]).as_ref() != Some(&top) {
            return fail(step, format!("{id} has not installed {top}"));
        }
    }
    if members == 0 {
        return fail(step, format!("no correct replica of {top} remains"));
    }
    Verdict::Pass
}

fn written(v: &View) -> BTreeSet<u64> {
    v.ops.iter().filter(|o| o.kind == "Write").filter_map(|o| o.detail["value"].as_u64()).collect()
}

fn mr_validity(v: &View) -> Verdict {
    let mut allowed = written(v);
    allowed.insert(0);
    let mut checked = false;
    for op in &v.ops {
        if let Some((step, d, detail)) = &op.ret {
            if d == "ReadValue" {
                checked = true;
                let val = detail["value"].as_u64().unwrap_or(u64::MAX);
                if !allowed.contains(&val) {
                    return fail(*step, format!("{} read {val}, which was never written", op.client));
                }
            }
        }
    }
    verdict(checked, None)
}

fn mr_atomicity(v: &View) -> Verdict {
    // (invoke, return, value) for completed writes and reads
    let done: Vec<(u64, u64, u64, bool)> = v
        .ops
        .iter()
        .filter_map(|o| {
            let (ret, d, detail) = o.ret.as_ref()?;
            match (o.kind.as_str(), d.as_str()) {
                ("Write", "Written") => Some((o.invoke, *ret, o.detail["value"].as_u64()?, false)),
                ("Read", "ReadValue") => Some((o.invoke, *ret, detail["value"].as_u64()?, true)),
                _ => None,
            }
        })
        .collect();
    let mut checked = false;
    for &(inv2, ret2, val2, is_read) in &done {
        if !is_read {
            continue;
        }
        for &(_, ret1, val1, _) in &done {
            if ret1 < inv2 {
                checked = true;
                if val2 < val1 {
                    return fail(ret2, format!("read returned {val2} after {val1} was written or read"));
                }
            }
        }
    }
    verdict(checked, None)
}

fn mr_monotone_cells(v: &View) -> Verdict {
    let mut last: BTreeMap<String, u64> = BTreeMap::new();
    let mut checked = false;
    for ev in v.upcalls("CellUpdate") {
        checked = true;
        let who = ev.from.clone().unwrap_or_default();
        let val = ev.detail.as_ref().and_then(|d| d["value"].as_u64()).unwrap_or(0);
        if let Some(prev) = last.insert(who.clone(), val) {
            if val <= prev {
                return fail(ev.step, format!("cell of {who} went from {prev} to {val}"));
            }
        }
    }
    verdict(checked, None)
}

fn ac_at_most_one(v: &View) -> Verdict {
    let mut certified: BTreeSet<u64> = BTreeSet::new();
    for op in &v.ops {
        let Some((step, d, detail)) = &op.ret else { continue };
        if d != "Certified" {
            continue;
        }
        let Some(LatticeValue::FinSet(s)) = value_from_json("finset", &detail["value"]) else { continue };
        if s.len() == 1 {
            let x = *s.iter().next().expect("one element");
            certified.insert(x);
            for &(a, b) in &v.conflicts {
                if (a == x && certified.contains(&b)) || (b == x && certified.contains(&a)) {
                    return fail(*step, format!("conflicting values {a} and {b} were both certified"));
                }
            }
        }
    }
    verdict(!v.conflicts.is_empty(), None)
}

fn reconfig_validity(v: &View) -> Verdict {
    let inputs = v.input_configs();
    let installed: Vec<(u64, Configuration)> = v.installs().map(|(e, c)| (e.step, c)).collect();
    for (i, (step, d)) in installed.iter().enumerate() {
        let join = inputs.iter().filter(|c| c.leq(d)).fold(v.genesis.clone(), |acc, c| acc.join(c));
        if &join != d {
            return fail(*step, format!("installed {d} is not a join of input configurations"));
        }
        if let Some((_, other)) = installed[..i].iter().find(|(_, o)| !o.comparable(d)) {
            return fail(*step, format!("installed configurations {d} and {other} are incomparable"));
        }
    }
    verdict(!installed.is_empty(), None)
}

fn accessed(v: &View) -> BTreeSet<Configuration> {
    v.upcalls("TransferRead").filter_map(|e| config_from_json(&e.detail.as_ref()?["updates"])).collect()
}

fn ok_access_bound(v: &View) -> Verdict {
    let k = v.input_configs().len() - 1;
    let seen = accessed(v);
    if seen.is_empty() {
        return Verdict::Vacuous;
    }
    if seen.len() > k + 1 {
        let step = v.upcalls("TransferRead").last().map_or(0, |e| e.step);
        return fail(step, format!("{} configurations read during state transfer with k = {k}", seen.len()));
    }
    Verdict::Pass
}

fn forgeries_rejected(v: &View) -> Verdict {
    let mut checked = false;
    for ev in v.upcalls("Forgery") {
        checked = true;
        if ev.detail.as_ref().and_then(|d| d["verified"].as_bool()) != Some(false) {
            let name = ev.detail.as_ref().and_then(|d| d["name"].as_str()).unwrap_or("?");
            return fail(ev.step, format!("forged certificate `{name}` verifies"));
        }
    }
    verdict(checked, None)
}

fn attack_assertions(v: &View) -> Verdict {
    let mut checked = false;
    for ev in v.upcalls("Assertion") {
        checked = true;
        let d = ev.detail.as_ref();
        if d.and_then(|d| d["ok"].as_bool()) != Some(true) {
            let msg = d.and_then(|d| d["msg"].as_str()).unwrap_or("assertion failed");
            return fail(ev.step, msg.to_string());
        }
    }
    verdict(checked, None)
}

fn liveness(v: &View) -> Verdict {
    let mut checked = false;
    for op in &v.ops {
        if !v.forever_correct(&op.client) {
            continue;
        }
        checked = true;
        if op.ret.is_none() && !op.rejected {
            return fail(op.invoke, format!("{} of {} never returned", op.kind, op.client));
        }
    }
    if v.run_end.is_none() {
        return fail(v.events.len() as u64, "trace has no end marker");
    }
    verdict(checked, None)
}

fn metrics(v: &View) -> Metrics {
    let end = v.run_end;
    Metrics {
        events: v.events.len() as u64,
        messages_sent: end.and_then(|e| e["messages_sent"].as_u64()).unwrap_or(0),
        deliveries: v.events.iter().filter(|e| e.kind == EventKind::Deliver).count() as u64,
        configs_accessed: accessed(v).len() as u64,
        installs: v.upcalls("Installed").count() as u64,
        restarts: v.upcalls("Restart").count() as u64,
        sign_refusals: v.upcalls("SignRefused").count() as u64,
        operations: v.ops.len() as u64,
    }
}

/// Evaluates every invariant over a trace.
pub fn check(header: &Value, events: &[ScenarioEvent]) -> RunReport {
    let v = View::new(header, events);
    let checks: [fn(&View) -> Verdict; 17] = [
        bla_validity,
        bla_inclusion,
        bla_comparability,
        bla_verifiability,
        key_update,
        tentative_never_installed,
        pivotal_not_skipped,
        cmax,
        mr_validity,
        mr_atomicity,
        mr_monotone_cells,
        ac_at_most_one,
        reconfig_validity,
        ok_access_bound,
        forgeries_rejected,
        attack_assertions,
        liveness,
    ];
    let invariants = INVARIANTS.iter().zip(checks).map(|(name, f)| InvariantResult { name, verdict: f(&v) }).collect();
    RunReport {
        label: header["label"].as_str().unwrap_or("run").to_string(),
        seed: header["seed"].as_u64().unwrap_or(0),
        end: v.run_end.and_then(|e| e["end"].as_str()).unwrap_or("unknown").to_string(),
        invariants,
        metrics: metrics(&v),
        trace_hash: trace_hash(header, events),
        trace_path: None,
    }
}
