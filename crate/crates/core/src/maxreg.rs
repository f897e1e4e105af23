//! Dynamic Byzantine max-register.
//!
//! `write(v)` repeats `set(v)` until a quorum of one configuration signs an
//! acknowledgement at that configuration's height. `read()` gets the cells
//! of a quorum (unsigned), picks the largest valid one and writes it back in
//! the same configuration; the write-back only succeeds while the
//! configuration is still active, which is what makes the unsigned get
//! replies safe.

use serde_json::json;

use crate::client::{ClientCore, Step};
use crate::encoding::{Digest, Encoder};
use crate::fscrypto::Crypto;
use crate::lattice::{Configuration, LatticeValue, ProcessId};
use crate::messages::Msg;
use crate::node::{Ctx, Output};
use crate::protocol::{signed, AckMap, InputCert, ObjectId, Registry, SignedTag};
use crate::replica::Replica;

/// A register value with its input certificate.
#[derive(Clone, Debug)]
pub struct Cell {
    pub value: u64,
    pub cert: InputCert,
}

impl Cell {
    /// The initial value, certified by genesis.
    pub fn bottom() -> Self {
        Cell { value: 0, cert: InputCert::Genesis }
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.u64(self.value).raw(&self.cert.digest());
        e.digest()
    }

    pub fn verify(&self, reg: &Registry, crypto: &Crypto) -> bool {
        let mut key = Encoder::new();
        key.raw(b"cell").raw(&self.digest());
        crypto.memoize(key.digest(), || {
            reg.check_input(crypto, ObjectId::MaxReg, &LatticeValue::singleton(self.value), &self.cert)
        })
    }
}

/// Bytes signed by a replica in `SetResp`.
pub fn set_resp_bytes(c: &Configuration, value: u64) -> Vec<u8> {
    let mut e = signed(SignedTag::SetResp, ObjectId::MaxReg);
    e.raw(&crate::encoding::Canonical::digest(c)).u64(value);
    e.finish()
}

/// One `set` attempt in one configuration.
#[derive(Debug, Default)]
struct SetRound {
    config: Configuration,
    sn: u64,
    acks: AckMap,
}

impl SetRound {
    fn begin(core: &mut ClientCore, cell: &Cell, ctx: &mut Ctx<'_>) -> Self {
        let config = core.history.max_element().clone();
        Self::begin_in(core, config, cell, ctx)
    }

    fn begin_in(core: &mut ClientCore, config: Configuration, cell: &Cell, ctx: &mut Ctx<'_>) -> Self {
        let sn = core.next_sn();
        let msg = Msg::Set { obj: ObjectId::MaxReg, cell: cell.clone(), sn, config: config.clone() };
        ctx.send_all(config.replicas().iter(), &msg);
        SetRound { config, sn, acks: AckMap::new() }
    }

    /// True once a quorum acknowledged.
    fn on_message(&mut self, from: &ProcessId, msg: &Msg, value: u64, ctx: &Ctx<'_>) -> bool {
        let Msg::SetResp { obj: ObjectId::MaxReg, sig, sn, config } = msg else { return false };
        if *sn != self.sn || *config != self.config || !config.is_member(from) {
            return false;
        }
        if !ctx.crypto().fs_verify(&set_resp_bytes(config, value), from, sig, config.height()) {
            return false;
        }
        self.acks.insert(from.clone(), sig.clone());
        config.is_quorum(self.acks.keys())
    }
}

#[derive(Debug)]
pub struct WriteTask {
    cell: Cell,
    round: SetRound,
}

impl WriteTask {
    pub(crate) fn new(cell: Cell) -> Self {
        WriteTask { cell, round: SetRound::default() }
    }

    pub(crate) fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> Step {
        self.round = SetRound::begin(core, &self.cell, ctx);
        Step::Pending
    }

    pub(crate) fn on_message(
        &mut self,
        _core: &mut ClientCore,
        from: &ProcessId,
        msg: &Msg,
        ctx: &mut Ctx<'_>,
    ) -> Step {
        if self.round.on_message(from, msg, self.cell.value, ctx) {
            Step::Done(Output::Written { value: self.cell.value })
        } else {
            Step::Pending
        }
    }
}

#[derive(Debug, Default)]
enum ReadPhase {
    #[default]
    Idle,
    Get {
        config: Configuration,
        sn: u64,
        replies: std::collections::BTreeMap<ProcessId, Cell>,
    },
    WriteBack {
        cell: Cell,
        round: SetRound,
    },
}

#[derive(Debug, Default)]
pub struct ReadTask {
    phase: ReadPhase,
}

impl ReadTask {
    pub(crate) fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> Step {
        let config = core.history.max_element().clone();
        let sn = core.next_sn();
        ctx.send_all(config.replicas().iter(), &Msg::Get { obj: ObjectId::MaxReg, sn, config: config.clone() });
        self.phase = ReadPhase::Get { config, sn, replies: Default::default() };
        Step::Pending
    }

    pub(crate) fn on_message(&mut self, core: &mut ClientCore, from: &ProcessId, msg: &Msg, ctx: &mut Ctx<'_>) -> Step {
        match (&mut self.phase, msg) {
            (
                ReadPhase::Get { config, sn, replies },
                Msg::GetResp { obj: ObjectId::MaxReg, cell, sn: rsn, config: rc },
            ) if rsn == sn && rc == config && config.is_member(from) => {
                // replies with an invalid certificate do not count towards the quorum
                if !cell.verify(&core.reg, ctx.crypto()) {
                    return Step::Pending;
                }
                replies.insert(from.clone(), cell.clone());
                if !config.is_quorum(replies.keys()) {
                    return Step::Pending;
                }
                let best = max_cell(replies.values()).expect("quorum is nonempty").clone();
                let mut detail = crate::node::config_detail(config);
                detail["value"] = json!(best.value);
                ctx.note("ReadGet", detail);
                let config = config.clone();
                let round = SetRound::begin_in(core, config, &best, ctx);
                self.phase = ReadPhase::WriteBack { cell: best, round };
                Step::Pending
            }
            (ReadPhase::WriteBack { cell, round }, _) => {
                if round.on_message(from, msg, cell.value, ctx) {
                    Step::Done(Output::Read { value: cell.value })
                } else {
                    Step::Pending
                }
            }
            _ => Step::Pending,
        }
    }
}

/// The cell with the largest value (first one on ties).
pub fn max_cell<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Option<&'a Cell> {
    cells.into_iter().fold(None, |best: Option<&Cell>, c| match best {
        Some(b) if b.value >= c.value => Some(b),
        _ => Some(c),
    })
}

impl Replica {
    pub(crate) fn on_get(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        if let Some(cell) = &self.cell {
            ctx.send(from, Msg::GetResp { obj, cell: cell.clone(), sn, config });
        }
    }

    pub(crate) fn on_set(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        cell: Cell,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        let Some(mine) = self.cell.as_mut() else { return };
        if !cell.verify(&self.reg, ctx.crypto()) {
            return;
        }
        if cell.value > mine.value {
            *mine = cell.clone();
            ctx.note("CellUpdate", json!({ "value": cell.value }));
        }
        if let Some(sig) = crate::dbla::sign_at(ctx, "SetResp", &config, &set_resp_bytes(&config, cell.value)) {
            ctx.send(from, Msg::SetResp { obj, sig, sn, config });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn max_cell_matches_brute_force(values in proptest::collection::vec(0u64..50, 1..8)) {
            let cells: Vec<Cell> = values.iter().map(|v| Cell { value: *v, cert: InputCert::Unchecked }).collect();
            let got = max_cell(cells.iter()).unwrap().value;
            prop_assert_eq!(got, *values.iter().max().unwrap());
        }
    }

    #[test]
    fn bottom_is_genesis_certified() {
        let reg = Registry::new(
            Configuration::genesis(["r1", "r2", "r3", "r4"].map(ProcessId::from)),
            crate::protocol::HistorySource::Authority("auth".into()),
        );
        let crypto = Crypto::new(crate::fscrypto::Backend::TrustedOracle, 1);
        assert!(Cell::bottom().verify(&reg, &crypto));
        assert!(!Cell { value: 3, cert: InputCert::Genesis }.verify(&reg, &crypto));
        assert!(Cell { value: 3, cert: InputCert::Unchecked }.verify(&reg, &crypto));
    }
}
