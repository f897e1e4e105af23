//! The replica automaton shared by all hosted objects: history adoption,
//! request gating, state transfer and installation.
//!
//! A replica answers a client request addressed to configuration `C` only
//! when `C = Cinst = Ccurr = Chighest`. Requests for lower or incomparable
//! configurations are dropped; requests for configurations it has not
//! installed yet are buffered and re-examined whenever the history, `Ccurr`
//! or `Cinst` changes. One state transfer serves every hosted object.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::broadcast::{Delivery, RbMessage, ReliableBroadcast, UniformBroadcast};
use crate::encoding::{Digest, Encoder};
use crate::lattice::{Configuration, History, LatticeValue, ProcessId};
use crate::maxreg::Cell;
use crate::messages::{Msg, NewHistory, UpdateComplete};
use crate::node::{config_detail, history_json, Ctx};
use crate::protocol::{values_digest, HistoryCert, ObjectId, Registry, ValueSet};

/// Object state carried by `UpdateReadResp`.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub la: BTreeMap<ObjectId, ValueSet>,
    pub cell: Option<Cell>,
    pub ac: BTreeSet<LatticeValue>,
}

impl Snapshot {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        for (obj, vals) in &self.la {
            e.u8(obj.code()).raw(&values_digest(vals));
        }
        if let Some(c) = &self.cell {
            e.u8(0xff).raw(&c.digest());
        }
        for v in &self.ac {
            e.raw(&crate::encoding::Canonical::digest(v));
        }
        e.digest()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Gate {
    Process,
    Buffer,
    Drop,
}

#[derive(Debug)]
struct Transfer {
    sn: u64,
    target: Configuration,
    queue: VecDeque<Configuration>,
    current: Option<Configuration>,
    responders: BTreeSet<ProcessId>,
}

pub struct Replica {
    pub(crate) id: ProcessId,
    pub(crate) reg: Arc<Registry>,
    pub(crate) history: History,
    pub(crate) history_cert: HistoryCert,
    pub(crate) cinst: Configuration,
    pub(crate) ccurr: Configuration,
    pub(crate) la: BTreeMap<ObjectId, ValueSet>,
    pub(crate) cell: Option<Cell>,
    pub(crate) ac_records: BTreeSet<LatticeValue>,
    pub(crate) rb: ReliableBroadcast,
    buffer: Vec<(ProcessId, Msg)>,
    transfer: Option<Transfer>,
    transfer_sn: u64,
    completes: BTreeMap<Configuration, BTreeSet<ProcessId>>,
    urb: UniformBroadcast,
}

impl Replica {
    pub fn new(id: ProcessId, reg: Arc<Registry>, objects: &[ObjectId]) -> Self {
        let la = objects.iter().filter(|o| o.lattice_kind().is_some()).map(|o| (*o, reg.genesis_values(*o))).collect();
        let cell = objects.contains(&ObjectId::MaxReg).then(Cell::bottom);
        Replica {
            id,
            history: reg.genesis_history(),
            history_cert: HistoryCert::Genesis,
            cinst: reg.genesis.clone(),
            ccurr: reg.genesis.clone(),
            reg,
            la,
            cell,
            ac_records: BTreeSet::new(),
            rb: ReliableBroadcast::default(),
            buffer: Vec::new(),
            transfer: None,
            transfer_sn: 0,
            completes: BTreeMap::new(),
            urb: UniformBroadcast::default(),
        }
    }

    pub fn id(&self) -> &ProcessId {
        &self.id
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn highest(&self) -> &Configuration {
        self.history.max_element()
    }

    pub fn installed(&self) -> &Configuration {
        &self.cinst
    }

    pub fn current(&self) -> &Configuration {
        &self.ccurr
    }

    pub fn values(&self, obj: ObjectId) -> Option<&ValueSet> {
        self.la.get(&obj)
    }

    pub fn cell(&self) -> Option<&Cell> {
        self.cell.as_ref()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { la: self.la.clone(), cell: self.cell.clone(), ac: self.ac_records.clone() }
    }

    pub(crate) fn gate(&self, c: &Configuration) -> Gate {
        let high = self.highest();
        if !c.is_member(&self.id) || c.lt(high) || !c.comparable(high) {
            return Gate::Drop;
        }
        if c == high && *c == self.cinst && *c == self.ccurr {
            Gate::Process
        } else {
            Gate::Buffer
        }
    }

    pub fn on_message(&mut self, from: &ProcessId, msg: Msg, ctx: &mut Ctx<'_>) {
        match msg {
            Msg::NewHistory(m) => {
                if self.rb.receive(&m) {
                    forward_rb(ctx, from, &m);
                    self.on_new_history(&m.payload, ctx);
                }
            }
            Msg::UpdateComplete(m) => {
                if let Some(d) = self.urb.on_message(ctx, Msg::UpdateComplete, from, m) {
                    self.on_update_complete(d, ctx);
                }
            }
            Msg::UpdateRead { sn, config } => self.on_update_read(from, sn, config, ctx),
            Msg::UpdateReadResp { state, sn, config } => self.on_update_read_resp(from, &state, sn, &config, ctx),
            msg if msg.is_client_request() => {
                let config = msg.request_config().expect("client request").clone();
                match self.gate(&config) {
                    Gate::Drop => {}
                    Gate::Buffer => self.buffer.push((from.clone(), msg)),
                    Gate::Process => self.serve(from, msg, ctx),
                }
            }
            _ => {}
        }
    }

    fn serve(&mut self, from: &ProcessId, msg: Msg, ctx: &mut Ctx<'_>) {
        match msg {
            Msg::Propose { obj, values, sn, config } => self.on_propose(from, obj, values, sn, config, ctx),
            Msg::Confirm { obj, values, acks, sn, config } => {
                self.on_confirm(from, obj, &values, &acks, sn, config, ctx)
            }
            Msg::Get { obj, sn, config } => self.on_get(from, obj, sn, config, ctx),
            Msg::Set { obj, cell, sn, config } => self.on_set(from, obj, cell, sn, config, ctx),
            Msg::AcRequest { obj, value, sn, config: Some(config) } => {
                self.on_ac_request(from, obj, value, sn, config, ctx)
            }
            Msg::AcConfirm { obj, value, approvals, sn, config } => {
                self.on_ac_confirm(from, obj, &value, &approvals, sn, config, ctx)
            }
            _ => {}
        }
    }

    /// Re-examines buffered messages after a state change.
    fn regate(&mut self, ctx: &mut Ctx<'_>) {
        let buffered = std::mem::take(&mut self.buffer);
        for (from, msg) in buffered {
            self.on_message(&from, msg, ctx);
        }
    }

    pub(crate) fn on_new_history(&mut self, nh: &NewHistory, ctx: &mut Ctx<'_>) {
        if !self.history.is_subset(&nh.history) || self.history == nh.history {
            return;
        }
        if !self.reg.verify_history(ctx.crypto(), &nh.history, &nh.cert) {
            return;
        }
        self.history = nh.history.clone();
        self.history_cert = nh.cert.clone();
        ctx.update_fs_keys(self.highest().height());
        ctx.note("NewHistory", history_json(&self.history));
        self.drive_transfer(ctx);
        self.try_install(ctx);
        self.regate(ctx);
    }

    fn on_update_read(&mut self, from: &ProcessId, sn: u64, config: Configuration, ctx: &mut Ctx<'_>) {
        let high = self.highest();
        if config.lt(high) {
            let state = Arc::new(self.snapshot());
            ctx.send(from, Msg::UpdateReadResp { state, sn, config });
        } else if config.comparable(high) {
            // answered once our keys have moved past height(config)
            self.buffer.push((from.clone(), Msg::UpdateRead { sn, config }));
        }
    }

    fn on_update_read_resp(
        &mut self,
        from: &ProcessId,
        state: &Snapshot,
        sn: u64,
        config: &Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        let Some(t) = self.transfer.as_mut() else { return };
        if t.sn != sn || t.current.as_ref() != Some(config) || !config.is_member(from) {
            return;
        }
        t.responders.insert(from.clone());
        let done = config.is_quorum(t.responders.iter());
        self.merge(state, ctx);
        if done {
            if let Some(t) = self.transfer.as_mut() {
                t.current = None;
            }
            self.drive_transfer(ctx);
        }
    }

    /// Adds the valid parts of a peer's state to ours.
    fn merge(&mut self, state: &Snapshot, ctx: &mut Ctx<'_>) {
        let crypto = ctx.crypto();
        for (obj, vals) in &state.la {
            if let Some(mine) = self.la.get_mut(obj) {
                for v in vals {
                    if !mine.contains(v) && self.reg.verify_input_value(crypto, *obj, v) {
                        mine.insert(v.clone());
                    }
                }
            }
        }
        if let (Some(mine), Some(theirs)) = (self.cell.as_mut(), state.cell.as_ref()) {
            if theirs.value > mine.value && theirs.verify(&self.reg, crypto) {
                *mine = theirs.clone();
            }
        }
        if self.reg.access.is_some() {
            self.ac_records.extend(state.ac.iter().cloned());
        }
    }

    /// Moves `Ccurr` towards the highest configuration, reading every
    /// configuration `C` with `Ccurr ⊑ C ⊏ Chighest` from a quorum.
    fn drive_transfer(&mut self, ctx: &mut Ctx<'_>) {
        let high = self.highest().clone();
        if !high.is_member(&self.id) || self.ccurr == high {
            self.transfer = None;
            return;
        }
        if self.transfer.as_ref().map(|t| &t.target) != Some(&high) {
            self.transfer_sn += 1;
            let queue =
                self.history.ascending().into_iter().filter(|c| self.ccurr.leq(c) && (*c).lt(&high)).cloned().collect();
            self.transfer = Some(Transfer {
                sn: self.transfer_sn,
                target: high.clone(),
                queue,
                current: None,
                responders: BTreeSet::new(),
            });
        }
        let ccurr = self.ccurr.clone();
        let t = self.transfer.as_mut().expect("set above");
        if let Some(cur) = &t.current {
            if !cur.lt(&ccurr) {
                return;
            }
            t.current = None;
        }
        while let Some(next) = t.queue.pop_front() {
            if next.lt(&ccurr) {
                continue;
            }
            t.responders.clear();
            t.current = Some(next.clone());
            let sn = t.sn;
            ctx.note("TransferRead", config_detail(&next));
            ctx.send_all(next.replicas().iter(), &Msg::UpdateRead { sn, config: next });
            return;
        }
        self.transfer = None;
        self.ccurr = high.clone();
        ctx.note("TransferDone", config_detail(&high));
        self.urb.broadcast(ctx, Msg::UpdateComplete, &high, UpdateComplete);
        self.regate(ctx);
    }

    fn on_update_complete(&mut self, d: Delivery<UpdateComplete>, ctx: &mut Ctx<'_>) {
        if d.config.is_member(&d.origin) {
            self.completes.entry(d.config).or_default().insert(d.origin);
            self.try_install(ctx);
        }
    }

    fn try_install(&mut self, ctx: &mut Ctx<'_>) {
        let best = self
            .completes
            .iter()
            .filter(|(c, who)| c.is_quorum(who.iter()) && self.history.contains(c) && self.cinst.lt(c))
            .map(|(c, _)| c)
            .max_by_key(|c| c.height())
            .cloned();
        let Some(c) = best else { return };
        self.cinst = c.clone();
        self.ccurr = self.ccurr.join(&c);
        ctx.note("Installed", config_detail(&c));
        self.drive_transfer(ctx);
        self.regate(ctx);
    }
}

/// Re-forwards a newly seen reliable-broadcast message to every other process.
pub(crate) fn forward_rb(ctx: &mut Ctx<'_>, from: &ProcessId, m: &RbMessage<NewHistory>) {
    let me = ctx.me().clone();
    let others: Vec<ProcessId> = ctx.roster().iter().filter(|p| **p != me && *p != from).cloned().collect();
    ctx.send_all(others.iter(), &Msg::NewHistory(m.clone()));
}
