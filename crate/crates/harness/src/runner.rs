//! Runs a scenario under one seed and checks the resulting trace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use byzreconf::access_control::admin_certificate;
use byzreconf::cluster::{ClusterBuilder, Sim, AUTHORITY};
use byzreconf::lattice::{History, LatticeValue, ProcessId};
use byzreconf::node::{config_json, Node, Op, Output};
use byzreconf::protocol::{ConfigPolicy, HistoryCert, HistorySource, InputCert, InputPolicy, ObjectId, Registry};
use byzreconf::reconfig::authority_sign;
use byzreconf::simnet::{EventKind, Honest, ScenarioEvent, Silent, SimError, StepOutcome};
use serde_json::{json, Value};
use thiserror::Error;

use crate::checker;
use crate::report::RunReport;
use crate::scenario::{Action, Behavior, InputMode, ObjectKind, Scenario, ScenarioError};

pub const TRACE_FORMAT: &str = "byzreconf-trace";
pub const TRACE_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation setup failed: {0}")]
    Sim(#[from] SimError),
    #[error("trace header: {0}")]
    Header(String),
}

/// A finished run: its trace and the checker's report.
pub struct RunOutput {
    pub header: Value,
    pub events: Vec<ScenarioEvent>,
    pub report: RunReport,
}

impl RunOutput {
    pub fn new(header: Value, events: Vec<ScenarioEvent>) -> Self {
        let report = checker::check(&header, &events);
        RunOutput { header, events, report }
    }

    pub fn encode(&self) -> String {
        byzreconf::simnet::encode_trace(&self.header, &self.events)
    }
}

pub fn header(label: &str, source: Value, seed: u64, max_steps: u64, sim: &Sim, reg: &Registry, object: &str) -> Value {
    json!({
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "label": label,
        "source": source,
        "seed": seed,
        "max_steps": max_steps,
        "roster": sim.roster().iter().map(ProcessId::to_string).collect::<Vec<_>>(),
        "genesis": config_json(&reg.genesis),
        "conflicts": reg.conflicts.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
        "object": object,
    })
}

pub fn builder(scn: &Scenario, seed: u64) -> ClusterBuilder {
    let mut b = ClusterBuilder::new(seed, 0, 0);
    b.backend = scn.crypto;
    b.genesis = scn.replicas.clone();
    b.spares = scn.spares.clone();
    b.clients = scn.clients.clone();
    b.admins = scn.admins.clone();
    b.inputs = match &scn.inputs {
        InputMode::AcceptAll => InputPolicy::AcceptAll,
        InputMode::Signed(who) => InputPolicy::ClientSigned(who.iter().cloned().collect()),
    };
    if scn.admin_configs {
        b.config_inputs = ConfigPolicy::Admin;
    }
    b.access = scn.access;
    b.conflicts = scn.conflicts.iter().copied().collect();
    b.denials = scn.denials.iter().cloned().collect();
    b.objects = match scn.object {
        ObjectKind::Dbla => vec![ObjectId::Lattice],
        ObjectKind::MaxReg => vec![ObjectId::MaxReg],
        ObjectKind::Access => vec![],
        ObjectKind::Reconfig => {
            b.history_source = HistorySource::HistLa;
            vec![ObjectId::Lattice, ObjectId::MaxReg, ObjectId::ConfLa, ObjectId::HistLa]
        }
    };
    b
}

/// Audits client outputs as they appear: every certificate handed to a
/// client is verified against the registry. Returns the outputs.
pub fn audit(sim: &mut Sim, reg: &Registry) -> Vec<(ProcessId, Output)> {
    let outs = sim.take_outputs();
    for (who, out) in &outs {
        let verified = match &out {
            Output::Proposed { obj, value, cert } => reg.verify_output_value(sim.crypto(), *obj, value, cert),
            Output::Certified { value, cert } => reg.verify_cert(sim.crypto(), ObjectId::Access, value, cert),
            _ => continue,
        };
        sim.note(EventKind::Upcall, Some(who), "Audit", json!({ "verified": verified }));
    }
    outs
}

/// Records the final state of every process.
pub fn note_end(sim: &mut Sim, capped: bool) {
    let processes: Vec<Value> = sim
        .nodes()
        .map(|(id, node)| {
            let status = sim.status(id).map(|s| s.code().to_string()).unwrap_or_default();
            let (role, highest, installed) = match node {
                Node::Replica(r) => ("replica", config_json(r.highest()), config_json(r.installed())),
                Node::Client(c) => ("client", config_json(c.history().max_element()), Value::Null),
                Node::Admin(_) => ("admin", Value::Null, Value::Null),
            };
            json!({ "id": id.to_string(), "status": status, "role": role, "highest": highest, "installed": installed })
        })
        .collect();
    let detail = json!({
        "end": if capped { "cap" } else { "quiescent" },
        "messages_sent": sim.stats().messages_sent,
        "deliveries": sim.deliveries(),
        "processes": processes,
    });
    sim.note(EventKind::Upcall, None, "RunEnd", detail);
}

/// Invokes `op` and records a rejection in the trace.
pub fn invoke(sim: &mut Sim, who: &ProcessId, op: Op) -> bool {
    match sim.invoke(who, op) {
        Ok(()) => true,
        Err(e) => {
            sim.note(EventKind::Upcall, Some(who), "Rejected", json!({ "reason": e.to_string() }));
            false
        }
    }
}

struct Driver<'a> {
    scn: &'a Scenario,
    reg: Arc<Registry>,
    sim: Sim,
    queues: BTreeMap<ProcessId, VecDeque<Op>>,
    authority: History,
}

impl Driver<'_> {
    fn op_for(&mut self, action: &Action) -> Option<Op> {
        let op = match action {
            Action::Propose { value, .. } => {
                Op::Propose { obj: ObjectId::Lattice, value: LatticeValue::singleton(*value) }
            }
            Action::Write { value, .. } => Op::Write { value: *value },
            Action::Read { .. } => Op::Read,
            Action::Request { value, .. } => Op::Request { value: LatticeValue::singleton(*value) },
            Action::Reconfig { config, .. } => {
                let config = self.scn.config(config)?;
                let cert = if self.scn.admin_configs {
                    let ac =
                        admin_certificate(self.sim.crypto(), &self.scn.admins, LatticeValue::Config(config.clone()));
                    InputCert::Access(Arc::new(ac))
                } else {
                    InputCert::Unchecked
                };
                Op::Reconfig { config, cert }
            }
            _ => return None,
        };
        Some(op)
    }

    fn dispatch(&mut self, action: &Action) {
        match action {
            Action::Corrupt { id, behavior } => {
                let adv: Box<dyn byzreconf::simnet::Adversary<Node>> = match behavior {
                    Behavior::Silent => Box::new(Silent),
                    Behavior::Honest => Box::new(Honest),
                };
                if let Err(e) = self.sim.corrupt(id, adv) {
                    self.sim.note(EventKind::Upcall, Some(id), "Rejected", json!({ "reason": e.to_string() }));
                }
            }
            Action::Halt { id } => {
                if let Err(e) = self.sim.halt(id) {
                    self.sim.note(EventKind::Upcall, Some(id), "Rejected", json!({ "reason": e.to_string() }));
                }
            }
            Action::History { config } => {
                let Some(c) = self.scn.config(config) else { return };
                let mut configs: BTreeSet<_> = self.authority.configs().clone();
                configs.insert(c);
                let Ok(h) = History::new(configs) else { return };
                self.authority = h.clone();
                let sig = authority_sign(self.sim.crypto(), &ProcessId::new(AUTHORITY), &h);
                self.queues
                    .entry(ProcessId::new(AUTHORITY))
                    .or_default()
                    .push_back(Op::UpdateHistory { history: h, cert: HistoryCert::Authority(sig) });
            }
            other => {
                let client = other.client().expect("client operation").clone();
                if let Some(op) = self.op_for(other) {
                    self.queues.entry(client).or_default().push_back(op);
                }
            }
        }
    }

    fn busy(&self, who: &ProcessId) -> bool {
        self.sim.node(who).and_then(Node::as_client).is_some_and(|c| c.is_busy())
    }

    /// Starts the next queued operation of every idle client.
    fn start_ops(&mut self) -> bool {
        let mut any = false;
        loop {
            let ready: Vec<ProcessId> =
                self.queues.iter().filter(|(c, q)| !q.is_empty() && !self.busy(c)).map(|(c, _)| c.clone()).collect();
            if ready.is_empty() {
                return any;
            }
            for c in ready {
                let op = self.queues.get_mut(&c).and_then(VecDeque::pop_front).expect("non-empty");
                invoke(&mut self.sim, &c, op);
                any = true;
            }
            audit(&mut self.sim, &self.reg);
        }
    }
}

/// Runs `scn` under `seed`.
pub fn run(scn: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    scn.validate()?;
    let b = builder(scn, seed);
    let reg = Arc::new(b.registry());
    let sim = b.build()?;
    let head =
        header(&scn.name, json!({ "scenario": scn.to_text() }), seed, scn.max_steps, &sim, &reg, scn.object.name());
    let mut schedule = scn.schedule.clone();
    schedule.sort_by_key(|s| s.at);
    let mut d = Driver { scn, authority: reg.genesis_history(), reg, sim, queues: BTreeMap::new() };
    let mut next = 0;
    let capped = loop {
        while next < schedule.len() && schedule[next].at <= d.sim.deliveries() {
            d.dispatch(&schedule[next].action);
            next += 1;
        }
        d.start_ops();
        if d.sim.deliveries() >= scn.max_steps {
            break d.sim.pending_len() > 0;
        }
        match d.sim.step() {
            StepOutcome::Delivered => {
                audit(&mut d.sim, &d.reg);
            }
            StepOutcome::Quiescent => {
                if next < schedule.len() {
                    // nothing in flight: the next trigger fires now
                    let at = schedule[next].at;
                    while next < schedule.len() && schedule[next].at == at {
                        d.dispatch(&schedule[next].action);
                        next += 1;
                    }
                } else if !d.start_ops() {
                    break false;
                }
            }
        }
    };
    note_end(&mut d.sim, capped);
    let events = d.sim.trace().to_vec();
    Ok(RunOutput::new(head, events))
}

/// Re-runs the scenario recorded in a trace header.
pub fn replay(header: &Value) -> Result<RunOutput, RunError> {
    let seed = header["seed"].as_u64().ok_or_else(|| RunError::Header("missing seed".into()))?;
    let source = &header["source"];
    if let Some(text) = source["scenario"].as_str() {
        let mut scn = Scenario::parse(text)?;
        if let Some(m) = header["max_steps"].as_u64() {
            scn.max_steps = m;
        }
        return run(&scn, seed);
    }
    if let Some(name) = source["attack"].as_str() {
        let object = source["object"].as_str().unwrap_or("dbla");
        let control = source["control"].as_bool().unwrap_or(false);
        return crate::attacks::run(name, object, control, seed).map_err(|e| RunError::Header(e.to_string()));
    }
    if let Some(order) = source["ac_order"].as_array() {
        let order: Vec<usize> = order.iter().filter_map(|i| i.as_u64().map(|i| i as usize)).collect();
        return crate::sweep::ac_order(&order);
    }
    Err(RunError::Header("unknown trace source".into()))
}
