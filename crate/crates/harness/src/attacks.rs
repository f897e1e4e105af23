//! Scripted attacks. Each one drives a reconfigurable cluster through a
//! fixed schedule, records forged certificates and the outcome of its
//! assertions in the trace, and leaves the rest to the checker.
//!
//! `i_still_work_here`: replicas of a superseded configuration are corrupted
//! after the system moved on and try to serve a client that has not yet
//! heard of the new configuration.
//!
//! `slow_reader`: a client starts an operation in the old configuration and
//! its messages reach the old replicas only after the reconfiguration.

use std::collections::BTreeSet;
use std::sync::Arc;

use byzreconf::cluster::{ClusterBuilder, Sim};
use byzreconf::dbla::{assemble_certificate, confirm_resp_bytes, propose_resp_bytes};
use byzreconf::lattice::{Configuration, LatticeValue, ProcessId, Update};
use byzreconf::maxreg::set_resp_bytes;
use byzreconf::messages::Msg;
use byzreconf::node::{config_detail, Node, Op, Output};
use byzreconf::protocol::{AckMap, InputCert, InputValue, ObjectId, OutputCertificate, Registry, ValueSet};
use byzreconf::replica::Snapshot;
use byzreconf::simnet::{Adversary, Automaton, Context, EventKind, SimError, StepOutcome};
use serde_json::json;
use thiserror::Error;

use crate::runner::{self, RunOutput};

pub const ATTACKS: [&str; 2] = ["i_still_work_here", "slow_reader"];
const CAP: u64 = 400_000;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("unknown attack `{0}` (known: i_still_work_here, slow_reader)")]
    Unknown(String),
    #[error("attack objects are `dbla` and `maxreg`, not `{0}`")]
    Object(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

type NodeCtx<'a> = Context<'a, Msg, Output>;

/// A replica of a superseded configuration that keeps answering requests
/// addressed to `config` as if nothing had changed. It can sign only what
/// its keys still allow.
pub struct StaleServer {
    pub config: Configuration,
}

impl StaleServer {
    fn sign(&self, ctx: &mut NodeCtx<'_>, what: &str, msg: &[u8]) -> Option<byzreconf::fscrypto::FsSignature> {
        let sig = ctx.fs_sign(msg, self.config.height());
        if sig.is_none() {
            let mut detail = config_detail(&self.config);
            detail["what"] = json!(what);
            detail["st"] = json!(ctx.key_timestamp());
            ctx.note("SignRefused", detail);
        }
        sig
    }
}

impl Adversary<Node> for StaleServer {
    fn on_message(&mut self, node: &mut Node, from: &ProcessId, msg: Msg, ctx: &mut NodeCtx<'_>) {
        if msg.request_config() != Some(&self.config) {
            node.on_message(from, msg, ctx);
            return;
        }
        match msg {
            Msg::Propose { obj, values, sn, config } => {
                if let Some(sig) = self.sign(ctx, "ProposeResp", &propose_resp_bytes(obj, &config, &values)) {
                    ctx.send(from, Msg::ProposeResp { obj, values, sig, sn, config });
                }
            }
            Msg::Confirm { obj, values, acks, sn, config } => {
                if let Some(sig) = self.sign(ctx, "ConfirmResp", &confirm_resp_bytes(obj, &config, &values, &acks)) {
                    ctx.send(from, Msg::ConfirmResp { obj, sig, sn, config });
                }
            }
            Msg::Get { obj, sn, config } => {
                if let Some(cell) = node.as_replica().and_then(|r| r.cell()).cloned() {
                    ctx.send(from, Msg::GetResp { obj, cell, sn, config });
                }
            }
            Msg::Set { obj, cell, sn, config } => {
                if let Some(sig) = self.sign(ctx, "SetResp", &set_resp_bytes(&config, cell.value)) {
                    ctx.send(from, Msg::SetResp { obj, sig, sn, config });
                }
            }
            _ => {}
        }
    }

    fn name(&self) -> &str {
        "stale-server"
    }
}

/// Ignores every history it is sent, so it never moves its keys, and
/// answers state-transfer reads at once with an empty state.
pub struct Liar;

impl Adversary<Node> for Liar {
    fn on_message(&mut self, node: &mut Node, from: &ProcessId, msg: Msg, ctx: &mut NodeCtx<'_>) {
        match msg {
            Msg::NewHistory(_) => {}
            Msg::UpdateRead { sn, config } => {
                ctx.send(from, Msg::UpdateReadResp { state: Arc::new(Snapshot::default()), sn, config });
            }
            msg => node.on_message(from, msg, ctx),
        }
    }

    fn name(&self) -> &str {
        "liar"
    }
}

fn p(s: &str) -> ProcessId {
    ProcessId::new(s)
}

struct Script {
    sim: Sim,
    reg: Registry,
    outputs: Vec<(ProcessId, Output)>,
    capped: bool,
}

impl Script {
    fn new(seed: u64) -> Result<Self, SimError> {
        let b = ClusterBuilder::new(seed, 4, 3).objects(&[ObjectId::Lattice, ObjectId::MaxReg]).reconfigurable(4);
        Ok(Script { reg: b.registry(), sim: b.build()?, outputs: Vec::new(), capped: false })
    }

    /// C0 with r1..r4 swapped for r5..r8.
    fn successor(&self) -> Configuration {
        let ups = (1..=4).map(|i| Update::remove(format!("r{i}"))).chain((5..=8).map(|i| Update::add(format!("r{i}"))));
        self.reg.genesis.with(ups)
    }

    fn settle(&mut self) {
        loop {
            if self.sim.deliveries() >= CAP {
                self.capped = true;
                return;
            }
            if self.sim.step() == StepOutcome::Quiescent {
                return;
            }
            let outs = runner::audit(&mut self.sim, &self.reg);
            self.outputs.extend(outs);
        }
    }

    fn invoke(&mut self, who: &str, op: Op) {
        runner::invoke(&mut self.sim, &p(who), op);
        let outs = runner::audit(&mut self.sim, &self.reg);
        self.outputs.extend(outs);
    }

    fn busy(&self, who: &str) -> bool {
        self.sim.node(&p(who)).and_then(Node::as_client).is_some_and(|c| c.is_busy())
    }

    fn last_output(&self, who: &str) -> Option<&Output> {
        self.outputs.iter().rev().find(|(w, _)| w.as_str() == who).map(|(_, o)| o)
    }

    fn assert(&mut self, name: &str, ok: bool, msg: String) {
        self.sim.note(EventKind::Upcall, None, "Assertion", json!({ "name": name, "ok": ok, "msg": msg }));
    }

    fn forgery(&mut self, name: &str, obj: ObjectId, w: &LatticeValue, cert: &OutputCertificate) {
        let verified = self.reg.verify_output_value(self.sim.crypto(), obj, w, cert);
        self.sim.note(EventKind::Upcall, None, "Forgery", json!({ "name": name, "verified": verified }));
    }

    fn reconfigure(&mut self, target: &Configuration) {
        self.invoke("c1", Op::Reconfig { config: target.clone(), cert: InputCert::Unchecked });
        self.settle();
        let ok =
            matches!(self.last_output("c1"), Some(Output::Reconfigured { history }) if history.max_element() == target);
        self.assert("reconfigured", ok, format!("reconfiguration to {target} completes"));
    }

    fn finish(mut self, label: String, source: serde_json::Value, seed: u64) -> RunOutput {
        runner::note_end(&mut self.sim, self.capped);
        let head = runner::header(&label, source, seed, CAP, &self.sim, &self.reg, "reconfig");
        RunOutput::new(head, self.sim.trace().to_vec())
    }
}

fn finset(ids: &[u64]) -> LatticeValue {
    LatticeValue::FinSet(ids.iter().copied().collect())
}

fn values(ids: &[u64]) -> ValueSet {
    ids.iter().map(|i| InputValue::new(LatticeValue::singleton(*i), InputCert::Unchecked)).collect()
}

/// Signs C0 payloads with keys that have already moved to `t`.
fn sign_late(sim: &mut Sim, signers: &[ProcessId], msg: &[u8], t: u64) -> AckMap {
    signers.iter().filter_map(|s| sim.crypto_mut().fs_sign(s, msg, t).map(|sig| (s.clone(), sig))).collect()
}

fn forge_all(s: &mut Script, old: &Configuration, new: &Configuration, earlier: Option<&OutputCertificate>) {
    let stale: Vec<ProcessId> = old.replicas().into_iter().collect();
    let obj = ObjectId::Lattice;
    let genesis = s.reg.genesis_history();

    let cert = assemble_certificate(
        s.sim.crypto_mut(),
        obj,
        values(&[9]),
        genesis.clone(),
        byzreconf::protocol::HistoryCert::Genesis,
        &stale,
    );
    s.forgery("fresh-signatures-at-old-height", obj, &finset(&[9]), &cert);

    if let Some(c0) = earlier {
        let mut vals = c0.values.clone();
        vals.extend(values(&[9]));
        let w =
            LatticeValue::join_all(vals.iter().map(InputValue::value)).ok().flatten().unwrap_or_else(|| finset(&[9]));
        let recycled = OutputCertificate::new(
            obj,
            vals,
            c0.history.clone(),
            c0.history_cert.clone(),
            c0.propose_acks.clone(),
            c0.confirm_acks.clone(),
        );
        s.forgery("recycled-signatures", obj, &w, &recycled);
    }

    let vals = values(&[9]);
    let propose = sign_late(&mut s.sim, &stale, &propose_resp_bytes(obj, old, &vals), new.height());
    let confirm = sign_late(&mut s.sim, &stale, &confirm_resp_bytes(obj, old, &vals, &propose), new.height());
    let cert = OutputCertificate::new(obj, vals, genesis, byzreconf::protocol::HistoryCert::Genesis, propose, confirm);
    s.forgery("new-height-signatures-in-old-certificate", obj, &finset(&[9]), &cert);
}

fn source(name: &str, object: &str, control: bool) -> serde_json::Value {
    json!({ "attack": name, "object": object, "control": control })
}

fn i_still_work_here(object: &str, control: bool, seed: u64) -> Result<RunOutput, AttackError> {
    let mut s = Script::new(seed)?;
    let c0 = s.reg.genesis.clone();
    let c1 = s.successor();
    let stale = c0.replicas();

    // an honest output in C0, kept for later recycling
    s.invoke("c2", Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(1) });
    if object == "maxreg" {
        s.invoke("c1", Op::Write { value: 3 });
    }
    s.settle();
    let earlier = match s.last_output("c2") {
        Some(Output::Proposed { cert, .. }) => Some(cert.clone()),
        _ => None,
    };

    let c2 = p("c2");
    s.sim.hold(move |e| e.to == c2 && matches!(e.msg, Msg::NewHistory(_)));
    s.reconfigure(&c1);
    match object {
        "maxreg" => s.invoke("c1", Op::Write { value: 7 }),
        _ => s.invoke("c1", Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(2) }),
    }
    s.settle();

    if !control {
        for r in &stale {
            s.sim.corrupt(r, Box::new(StaleServer { config: c0.clone() }))?;
        }
        forge_all(&mut s, &c0, &c1, earlier.as_deref());
    }

    let completed = s.sim.node(&p("c2")).and_then(Node::as_client).map_or(0, |c| c.completed());
    match object {
        "maxreg" => s.invoke("c2", Op::Read),
        _ => s.invoke("c2", Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(3) }),
    }
    s.settle();
    let stuck =
        s.busy("c2") && s.sim.node(&p("c2")).and_then(Node::as_client).map_or(0, |c| c.completed()) == completed;
    s.assert("no-output-in-superseded-configuration", stuck, format!("the stale client gets nothing from {c0}"));

    s.sim.release_all();
    s.settle();
    match (object, s.last_output("c2").cloned()) {
        ("maxreg", Some(Output::Read { value })) => {
            s.assert(
                "stale-reader-sees-latest-write",
                value == 7,
                format!("read returned {value}, latest write was 7"),
            );
        }
        ("maxreg", other) => {
            s.assert("stale-reader-sees-latest-write", false, format!("read did not return: {other:?}"))
        }
        (_, Some(Output::Proposed { value, cert, .. })) => {
            let anchored = cert.anchor() == &c1;
            let includes = finset(&[1, 2, 3]).leq(&value);
            s.assert(
                "late-output-anchored-in-new-configuration",
                anchored && includes,
                format!("output {value} anchored at {}", cert.anchor()),
            );
        }
        (_, other) => s.assert("late-output-anchored-in-new-configuration", false, format!("no output: {other:?}")),
    }
    Ok(s.finish(label("i_still_work_here", object, control), source("i_still_work_here", object, control), seed))
}

fn label(name: &str, object: &str, control: bool) -> String {
    format!("{name}/{object}{}", if control { "/control" } else { "" })
}

fn slow_reader_maxreg(control: bool, seed: u64) -> Result<RunOutput, AttackError> {
    let mut s = Script::new(seed)?;
    let c1 = s.successor();
    if !control {
        s.sim.corrupt(&p("r3"), Box::new(Liar))?;
    }
    let (r1, c3a, c3b) = (p("r1"), p("c3"), p("c3"));
    s.sim.hold(move |e| (e.to == r1 || e.to == c3a) && matches!(e.msg, Msg::NewHistory(_)));
    let set_hold = s.sim.hold(move |e| e.from == c3b && matches!(e.msg, Msg::Set { .. }));

    s.invoke("c3", Op::Read);
    s.settle();
    s.reconfigure(&c1);
    s.invoke("c2", Op::Write { value: 5 });
    s.settle();
    let written = matches!(s.last_output("c2"), Some(Output::Written { value: 5 }));
    s.assert("write-in-new-configuration", written, "the write of 5 completes in the new configuration".into());

    s.sim.release(set_hold);
    s.settle();
    let busy = s.busy("c3");
    s.assert("old-write-back-incomplete", busy, "the write-back in the old configuration gathers no quorum".into());

    s.sim.release_all();
    s.settle();
    match s.last_output("c3").cloned() {
        Some(Output::Read { value }) => {
            s.assert("slow-read-sees-write", value >= 5, format!("read returned {value} after the write of 5"))
        }
        other => s.assert("slow-read-sees-write", false, format!("read did not return: {other:?}")),
    }
    Ok(s.finish(label("slow_reader", "maxreg", control), source("slow_reader", "maxreg", control), seed))
}

fn slow_reader_dbla(control: bool, seed: u64) -> Result<RunOutput, AttackError> {
    let mut s = Script::new(seed)?;
    let c0 = s.reg.genesis.clone();
    let c1 = s.successor();
    let c2 = p("c2");
    let hold_c0 = c0.clone();
    s.sim.hold(move |e| e.from == c2 && matches!(&e.msg, Msg::Confirm { config, .. } if *config == hold_c0));

    s.invoke("c2", Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(1) });
    s.settle();
    if !control {
        s.reconfigure(&c1);
    }
    s.invoke("c3", Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(2) });
    s.settle();
    s.sim.release_all();
    s.settle();

    let outs: Vec<(LatticeValue, Configuration)> = ["c2", "c3"]
        .iter()
        .filter_map(|c| match s.last_output(c) {
            Some(Output::Proposed { value, cert, .. }) => Some((value.clone(), cert.anchor().clone())),
            _ => None,
        })
        .collect();
    let expect = if control { &c0 } else { &c1 };
    let ok = outs.len() == 2 && outs[0].0.comparable(&outs[1].0) && outs.iter().all(|(_, a)| a == expect);
    let anchors: BTreeSet<String> = outs.iter().map(|(_, a)| a.to_string()).collect();
    s.assert("slow-proposer-comparable", ok, format!("{} outputs anchored at {anchors:?}", outs.len()));
    Ok(s.finish(label("slow_reader", "dbla", control), source("slow_reader", "dbla", control), seed))
}

/// Runs attack `name` against `object` (`dbla` or `maxreg`).
pub fn run(name: &str, object: &str, control: bool, seed: u64) -> Result<RunOutput, AttackError> {
    if object != "dbla" && object != "maxreg" {
        return Err(AttackError::Object(object.to_string()));
    }
    match name {
        "i_still_work_here" => i_still_work_here(object, control, seed),
        "slow_reader" if object == "maxreg" => slow_reader_maxreg(control, seed),
        "slow_reader" => slow_reader_dbla(control, seed),
        other => Err(AttackError::Unknown(other.to_string())),
    }
}
