//! The client automaton. A client runs at most one operation at a time and
//! restarts it in the new highest configuration whenever its history grows.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::access_control::AcTask;
use crate::broadcast::ReliableBroadcast;
use crate::dbla::Proposal;
use crate::lattice::{History, ProcessId};
use crate::maxreg::{Cell, ReadTask, WriteTask};
use crate::messages::{Msg, NewHistory};
use crate::node::{config_detail, history_json, Ctx, Op, Output};
use crate::protocol::{HistoryCert, InputCert, InputPolicy, InputValue, ObjectId, Registry, ValueSet};
use crate::reconfig::ReconfigTask;
use crate::replica::forward_rb;

/// Client state shared by all operations.
pub struct ClientCore {
    pub(crate) id: ProcessId,
    pub(crate) reg: Arc<Registry>,
    pub(crate) history: History,
    pub(crate) history_cert: HistoryCert,
    /// Local value sets of the lattice-agreement objects; they only grow.
    pub(crate) la: BTreeMap<ObjectId, ValueSet>,
    sn: u64,
    rb: ReliableBroadcast,
}

impl ClientCore {
    pub(crate) fn next_sn(&mut self) -> u64 {
        self.sn += 1;
        self.sn
    }

    pub(crate) fn values(&mut self, obj: ObjectId) -> &mut ValueSet {
        let reg = &self.reg;
        self.la.entry(obj).or_insert_with(|| reg.genesis_values(obj))
    }

    /// Starts a reliable broadcast of a history and delivers it locally.
    pub(crate) fn broadcast_history(&mut self, nh: NewHistory, ctx: &mut Ctx<'_>) -> bool {
        let me = self.id.clone();
        let m = self.rb.broadcast(&me, nh);
        forward_rb(ctx, &me, &m);
        self.adopt(&m.payload, ctx)
    }

    /// Adopts a strictly larger verifiable history. Returns true when the
    /// highest configuration changed.
    fn adopt(&mut self, nh: &NewHistory, ctx: &mut Ctx<'_>) -> bool {
        if !self.history.is_subset(&nh.history) || self.history == nh.history {
            return false;
        }
        if !self.reg.verify_history(ctx.crypto(), &nh.history, &nh.cert) {
            return false;
        }
        let before = self.history.max_element().clone();
        self.history = nh.history.clone();
        self.history_cert = nh.cert.clone();
        ctx.note("NewHistory", history_json(&self.history));
        self.history.max_element() != &before
    }
}

pub(crate) enum Step {
    Pending,
    Done(Output),
}

pub(crate) enum Task {
    Propose(Proposal),
    Write(WriteTask),
    Read(ReadTask),
    Request(AcTask),
    Reconfig(ReconfigTask),
}

impl Task {
    fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> Step {
        match self {
            Task::Propose(t) => t.start(core, ctx),
            Task::Write(t) => t.start(core, ctx),
            Task::Read(t) => t.start(core, ctx),
            Task::Request(t) => t.start(core, ctx),
            Task::Reconfig(t) => t.start(core, ctx),
        }
    }

    fn on_message(&mut self, core: &mut ClientCore, from: &ProcessId, msg: &Msg, ctx: &mut Ctx<'_>) -> Step {
        match self {
            Task::Propose(t) => t
                .on_message(core, from, msg, ctx)
                .map_or(Step::Pending, |(obj, value, cert)| Step::Done(Output::Proposed { obj, value, cert })),
            Task::Write(t) => t.on_message(core, from, msg, ctx),
            Task::Read(t) => t.on_message(core, from, msg, ctx),
            Task::Request(t) => t.on_message(core, from, msg, ctx),
            Task::Reconfig(t) => t.on_message(core, from, msg, ctx),
        }
    }
}

pub struct Client {
    core: ClientCore,
    task: Option<Task>,
    completed: u64,
}

impl Client {
    pub fn new(id: ProcessId, reg: Arc<Registry>) -> Self {
        Client {
            core: ClientCore {
                id,
                history: reg.genesis_history(),
                history_cert: HistoryCert::Genesis,
                reg,
                la: BTreeMap::new(),
                sn: 0,
                rb: ReliableBroadcast::default(),
            },
            task: None,
            completed: 0,
        }
    }

    pub fn history(&self) -> &History {
        &self.core.history
    }

    pub fn history_cert(&self) -> &HistoryCert {
        &self.core.history_cert
    }

    pub fn is_busy(&self) -> bool {
        self.task.is_some()
    }

    /// Number of operations that returned.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    fn certify(&self, obj: ObjectId, value: crate::lattice::LatticeValue, ctx: &Ctx<'_>) -> InputValue {
        match &self.core.reg.inputs {
            InputPolicy::AcceptAll => InputValue::new(value, InputCert::Unchecked),
            InputPolicy::ClientSigned(_) => Registry::client_input(ctx.crypto(), &self.core.id, obj, value),
        }
    }

    pub fn invoke(&mut self, op: Op, ctx: &mut Ctx<'_>) -> Result<(), String> {
        if self.task.is_some() {
            return Err(format!("{} already has an operation in progress", self.core.id));
        }
        let reg = self.core.reg.clone();
        let task = match op {
            Op::Propose { obj, value } => {
                let input = self.certify(obj, value, ctx);
                return self.invoke(Op::ProposeInput { obj, input }, ctx);
            }
            Op::ProposeInput { obj, input } => {
                if obj.lattice_kind().is_none() || !reg.verify_input_value(ctx.crypto(), obj, &input) {
                    return Err("invalid input certificate".into());
                }
                self.core.values(obj).insert(input);
                Task::Propose(Proposal::new(obj))
            }
            Op::Write { value } => {
                let cert = self.certify(ObjectId::MaxReg, crate::lattice::LatticeValue::singleton(value), ctx);
                let cell = Cell { value, cert: cert.cert().clone() };
                if !cell.verify(&reg, ctx.crypto()) {
                    return Err("invalid input certificate".into());
                }
                Task::Write(WriteTask::new(cell))
            }
            Op::Read => Task::Read(ReadTask::default()),
            Op::Request { value } => Task::Request(AcTask::new(&reg, value).map_err(|e| e.to_string())?),
            Op::Reconfig { config, cert } => {
                let input = InputValue::new(crate::lattice::LatticeValue::Config(config.clone()), cert);
                if !reg.verify_input_value(ctx.crypto(), ObjectId::ConfLa, &input) {
                    return Err("invalid input configuration certificate".into());
                }
                config.check_no_readd(self.core.history.max_element()).map_err(|e| e.to_string())?;
                Task::Reconfig(ReconfigTask::new(input))
            }
            Op::UpdateHistory { history, cert } => {
                if !reg.verify_history(ctx.crypto(), &history, &cert) {
                    return Err("invalid history certificate".into());
                }
                self.core.broadcast_history(NewHistory { history: history.clone(), cert }, ctx);
                self.finish(Output::HistoryUpdated { history }, ctx);
                return Ok(());
            }
        };
        let mut task = task;
        match task.start(&mut self.core, ctx) {
            Step::Pending => self.task = Some(task),
            Step::Done(out) => self.finish(out, ctx),
        }
        Ok(())
    }

    fn finish(&mut self, out: Output, ctx: &mut Ctx<'_>) {
        self.completed += 1;
        self.task = None;
        ctx.output(out);
    }

    pub fn on_message(&mut self, from: &ProcessId, msg: Msg, ctx: &mut Ctx<'_>) {
        if let Msg::NewHistory(m) = &msg {
            if !self.core.rb.receive(m) {
                return;
            }
            forward_rb(ctx, from, m);
            if self.core.adopt(&m.payload, ctx) {
                self.restart(ctx);
            }
            return;
        }
        let Some(task) = self.task.as_mut() else { return };
        if let Step::Done(out) = task.on_message(&mut self.core, from, &msg, ctx) {
            self.finish(out, ctx);
        }
    }

    /// Reruns the current operation in the new highest configuration.
    pub(crate) fn restart(&mut self, ctx: &mut Ctx<'_>) {
        let Some(mut task) = self.task.take() else { return };
        ctx.note("Restart", config_detail(self.core.history.max_element()));
        match task.start(&mut self.core, ctx) {
            Step::Pending => self.task = Some(task),
            Step::Done(out) => self.finish(out, ctx),
        }
    }
}
