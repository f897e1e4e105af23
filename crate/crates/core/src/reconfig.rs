//! Reconfiguration: agree on a configuration, then on a history containing
//! it, then distribute the certified history by reliable broadcast.
//!
//! Histories are certified in one of three ways: the initial history `{C0}`
//! needs no proof, histories of standalone objects are signed by an external
//! authority, and histories of a reconfigurable system are outputs of
//! history agreement whose inputs are singletons `{C}` backed by an output
//! of configuration agreement.

use std::collections::BTreeSet;

use serde_json::json;

use crate::client::{ClientCore, Step};
use crate::dbla::Proposal;
use crate::encoding::Canonical;
use crate::fscrypto::{Crypto, PlainSignature};
use crate::lattice::{History, LatticeValue, ProcessId};
use crate::messages::{Msg, NewHistory};
use crate::node::{config_json, output_json, Ctx, Output};
use crate::protocol::{signed, HistoryCert, HistorySource, InputCert, InputValue, ObjectId, Registry, SignedTag};

pub fn history_bytes(h: &History) -> Vec<u8> {
    let mut e = signed(SignedTag::History, ObjectId::HistLa);
    e.raw(&h.digest());
    e.finish()
}

/// The authority's signature on `h`.
pub fn authority_sign(crypto: &Crypto, authority: &ProcessId, h: &History) -> PlainSignature {
    crypto.plain_sign(authority, &history_bytes(h))
}

pub fn verify_history(reg: &Registry, crypto: &Crypto, h: &History, cert: &HistoryCert) -> bool {
    if !h.contains(&reg.genesis) {
        return false;
    }
    match (cert, &reg.history_source) {
        (HistoryCert::Genesis, _) => h.len() == 1,
        (HistoryCert::Authority(sig), HistorySource::Authority(a)) => {
            &sig.signer == a && crypto.plain_verify(&history_bytes(h), a, sig)
        }
        (HistoryCert::HistLa(out), HistorySource::HistLa) => {
            let w = LatticeValue::Hist(h.configs().clone());
            reg.verify_output_value(crypto, ObjectId::HistLa, &w, out)
        }
        _ => false,
    }
}

/// Inputs of history agreement: `{C}` with a configuration-agreement output
/// certificate for `C`.
pub fn verify_hist_input(reg: &Registry, crypto: &Crypto, value: &LatticeValue, cert: &InputCert) -> bool {
    let (LatticeValue::Hist(set), InputCert::ConfOutput(out)) = (value, cert) else { return false };
    let Some(c) = single(set) else { return false };
    reg.verify_output_value(crypto, ObjectId::ConfLa, &LatticeValue::Config(c.clone()), out)
}

fn single<T>(set: &BTreeSet<T>) -> Option<&T> {
    (set.len() == 1).then(|| set.iter().next()).flatten()
}

#[derive(Debug)]
enum Stage {
    Conf(Proposal),
    Hist(Proposal),
}

/// Client side of `reconfig(C)`.
#[derive(Debug)]
pub struct ReconfigTask {
    input: InputValue,
    stage: Stage,
}

impl ReconfigTask {
    pub(crate) fn new(input: InputValue) -> Self {
        ReconfigTask { input, stage: Stage::Conf(Proposal::new(ObjectId::ConfLa)) }
    }

    pub(crate) fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> Step {
        core.values(ObjectId::ConfLa).insert(self.input.clone());
        match &mut self.stage {
            Stage::Conf(p) | Stage::Hist(p) => p.start(core, ctx),
        }
    }

    pub(crate) fn on_message(&mut self, core: &mut ClientCore, from: &ProcessId, msg: &Msg, ctx: &mut Ctx<'_>) -> Step {
        match &mut self.stage {
            Stage::Conf(p) => {
                let Some((obj, w, cert)) = p.on_message(core, from, msg, ctx) else { return Step::Pending };
                ctx.note("LaOutput", output_json(obj, &w, &cert));
                let LatticeValue::Config(c) = w else { return Step::Pending };
                let input = InputValue::new(LatticeValue::Hist(BTreeSet::from([c])), InputCert::ConfOutput(cert));
                core.values(ObjectId::HistLa).insert(input);
                let mut next = Proposal::new(ObjectId::HistLa);
                let step = next.start(core, ctx);
                self.stage = Stage::Hist(next);
                step
            }
            Stage::Hist(p) => {
                let Some((obj, w, cert)) = p.on_message(core, from, msg, ctx) else { return Step::Pending };
                ctx.note("LaOutput", output_json(obj, &w, &cert));
                let LatticeValue::Hist(set) = w else { return Step::Pending };
                let Ok(history) = History::new(set) else { return Step::Pending };
                ctx.note(
                    "HistoryCertified",
                    json!({ "max": history.max_element().to_string(), "max_updates": config_json(history.max_element()) }),
                );
                core.broadcast_history(NewHistory { history: history.clone(), cert: HistoryCert::HistLa(cert) }, ctx);
                Step::Done(Output::Reconfigured { history })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fscrypto::Backend;
    use crate::lattice::{Configuration, Update};

    #[test]
    fn authority_histories() {
        let c0 = Configuration::genesis(["r1", "r2", "r3", "r4"].map(ProcessId::from));
        let reg = Registry::new(c0.clone(), HistorySource::Authority("auth".into()));
        let crypto = Crypto::new(Backend::TrustedOracle, 5);
        let c1 = c0.with([Update::add("r5")]);
        let h = History::new(BTreeSet::from([c0.clone(), c1.clone()])).unwrap();
        let sig = authority_sign(&crypto, &"auth".into(), &h);
        assert!(verify_history(&reg, &crypto, &h, &HistoryCert::Authority(sig.clone())));
        assert!(verify_history(&reg, &crypto, &reg.genesis_history(), &HistoryCert::Genesis));
        assert!(!verify_history(&reg, &crypto, &h, &HistoryCert::Genesis));
        let forged = authority_sign(&crypto, &"r1".into(), &h);
        assert!(!verify_history(&reg, &crypto, &h, &HistoryCert::Authority(forged)));
        // a history without C0 is never valid
        let h1 = History::singleton(c1);
        let sig1 = authority_sign(&crypto, &"auth".into(), &h1);
        assert!(!verify_history(&reg, &crypto, &h1, &HistoryCert::Authority(sig1)));
    }
}
