//! Dynamic Byzantine lattice agreement.
//!
//! A propose runs in two phases in the client's highest configuration `C`.
//! Refinement: send the local value set, merge whatever new values come
//! back and retry, until a quorum of `C` signs exactly the local set.
//! Confirmation: a quorum of `C` signs the collected acknowledgements. Both
//! signatures are forward-secure with timestamp `height(C)`, so once a
//! quorum of `C` has moved its keys past `C` no new certificate anchored at
//! `C` can be completed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;

use crate::client::ClientCore;
use crate::encoding::{Canonical, Encoder};
use crate::fscrypto::{Crypto, FsSignature};
use crate::lattice::{Configuration, LatticeValue, ProcessId};
use crate::messages::Msg;
use crate::node::Ctx;
use crate::protocol::{
    acks_digest, join_values, quorum_of_acks, signed, values_digest, AckMap, ObjectId, OutputCertificate, Registry,
    SignedTag, ValueSet,
};
use crate::replica::Replica;

/// Bytes signed by a replica in `ProposeResp`.
pub fn propose_resp_bytes(obj: ObjectId, c: &Configuration, values: &ValueSet) -> Vec<u8> {
    let mut e = signed(SignedTag::ProposeResp, obj);
    e.raw(&c.digest()).raw(&values_digest(values));
    e.finish()
}

/// Bytes signed by a replica in `ConfirmResp`.
pub fn confirm_resp_bytes(obj: ObjectId, c: &Configuration, values: &ValueSet, acks: &AckMap) -> Vec<u8> {
    let mut e = signed(SignedTag::ConfirmResp, obj);
    e.raw(&c.digest()).raw(&values_digest(values)).raw(&acks_digest(acks));
    e.finish()
}

/// Checks an output value against its certificate. Pure; memoised.
pub fn verify_output_value(
    reg: &Registry,
    crypto: &Crypto,
    obj: ObjectId,
    w: &LatticeValue,
    cert: &OutputCertificate,
) -> bool {
    let mut key = Encoder::new();
    key.raw(b"output").u8(obj.code()).raw(&w.digest()).raw(&cert.digest());
    crypto.memoize(key.digest(), || check_output(reg, crypto, obj, w, cert))
}

fn check_output(reg: &Registry, crypto: &Crypto, obj: ObjectId, w: &LatticeValue, cert: &OutputCertificate) -> bool {
    if cert.obj != obj || obj.lattice_kind().is_none() {
        return false;
    }
    // (a) every value is a verifiable input
    if !cert.values.iter().all(|v| reg.verify_input_value(crypto, obj, v)) {
        return false;
    }
    // (b) w is their join
    if join_values(&cert.values).as_ref() != Some(w) {
        return false;
    }
    // (c) the history is verifiable
    if !reg.verify_history(crypto, &cert.history, &cert.history_cert) {
        return false;
    }
    // (d, e) quorums of the anchor configuration at its height
    let c = cert.anchor();
    quorum_of_acks(crypto, c, &cert.propose_acks, &propose_resp_bytes(obj, c, &cert.values))
        && quorum_of_acks(crypto, c, &cert.confirm_acks, &confirm_resp_bytes(obj, c, &cert.values, &cert.propose_acks))
}

#[derive(Debug)]
enum Phase {
    Refining { acks: AckMap },
    Confirming { values: ValueSet, propose_acks: Arc<AckMap>, confirm_acks: AckMap },
}

/// Client side of one propose.
#[derive(Debug)]
pub struct Proposal {
    obj: ObjectId,
    config: Configuration,
    sn: u64,
    phase: Phase,
}

impl Proposal {
    pub(crate) fn new(obj: ObjectId) -> Self {
        Proposal { obj, config: Configuration::empty(), sn: 0, phase: Phase::Refining { acks: AckMap::new() } }
    }

    /// (Re)starts refinement in the highest configuration of the local history.
    pub(crate) fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> crate::client::Step {
        self.config = core.history.max_element().clone();
        self.refine(core, ctx);
        crate::client::Step::Pending
    }

    fn refine(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) {
        self.sn = core.next_sn();
        self.phase = Phase::Refining { acks: AckMap::new() };
        let values = core.values(self.obj).clone();
        let msg = Msg::Propose { obj: self.obj, values, sn: self.sn, config: self.config.clone() };
        ctx.send_all(self.config.replicas().iter(), &msg);
    }

    /// Returns the output once a quorum confirmed.
    pub(crate) fn on_message(
        &mut self,
        core: &mut ClientCore,
        from: &ProcessId,
        msg: &Msg,
        ctx: &mut Ctx<'_>,
    ) -> Option<(ObjectId, LatticeValue, Arc<OutputCertificate>)> {
        match msg {
            Msg::ProposeResp { obj, values, sig, sn, config }
                if *obj == self.obj && *sn == self.sn && *config == self.config =>
            {
                let Phase::Refining { acks } = &mut self.phase else { return None };
                let reg = core.reg.clone();
                if !values.iter().all(|v| reg.verify_input_value(ctx.crypto(), self.obj, v)) {
                    return None;
                }
                let cur = core.values(self.obj);
                if !values.is_subset(cur) {
                    cur.extend(values.iter().cloned());
                    self.refine(core, ctx);
                    return None;
                }
                if values != cur
                    || !config.is_member(from)
                    || !ctx.crypto().fs_verify(
                        &propose_resp_bytes(self.obj, config, values),
                        from,
                        sig,
                        config.height(),
                    )
                {
                    return None;
                }
                acks.insert(from.clone(), sig.clone());
                if config.is_quorum(acks.keys()) {
                    let propose_acks = Arc::new(std::mem::take(acks));
                    let values = values.clone();
                    let msg = Msg::Confirm {
                        obj: self.obj,
                        values: values.clone(),
                        acks: propose_acks.clone(),
                        sn: self.sn,
                        config: self.config.clone(),
                    };
                    ctx.send_all(self.config.replicas().iter(), &msg);
                    self.phase = Phase::Confirming { values, propose_acks, confirm_acks: AckMap::new() };
                }
                None
            }
            Msg::ConfirmResp { obj, sig, sn, config }
                if *obj == self.obj && *sn == self.sn && *config == self.config =>
            {
                let Phase::Confirming { values, propose_acks, confirm_acks } = &mut self.phase else { return None };
                let bytes = confirm_resp_bytes(self.obj, config, values, propose_acks);
                if !config.is_member(from) || !ctx.crypto().fs_verify(&bytes, from, sig, config.height()) {
                    return None;
                }
                confirm_acks.insert(from.clone(), sig.clone());
                if !config.is_quorum(confirm_acks.keys()) {
                    return None;
                }
                let cert = OutputCertificate::new(
                    self.obj,
                    values.clone(),
                    core.history.clone(),
                    core.history_cert.clone(),
                    (**propose_acks).clone(),
                    std::mem::take(confirm_acks),
                );
                let w = join_values(&cert.values).expect("acknowledged sets are nonempty");
                Some((self.obj, w, Arc::new(cert)))
            }
            _ => None,
        }
    }
}

impl Replica {
    pub(crate) fn on_propose(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        values: ValueSet,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        let Some(mine) = self.la.get_mut(&obj) else { return };
        let crypto = ctx.crypto();
        for v in values {
            if !mine.contains(&v) && self.reg.verify_input_value(crypto, obj, &v) {
                mine.insert(v);
            }
        }
        let values = mine.clone();
        if let Some(sig) = sign_at(ctx, "ProposeResp", &config, &propose_resp_bytes(obj, &config, &values)) {
            ctx.send(from, Msg::ProposeResp { obj, values, sig, sn, config });
        }
    }

    /// Signs the acknowledgements without checking them; a bad set only
    /// yields a certificate that fails verification.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn on_confirm(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        values: &ValueSet,
        acks: &AckMap,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        if !self.la.contains_key(&obj) {
            return;
        }
        if let Some(sig) = sign_at(ctx, "ConfirmResp", &config, &confirm_resp_bytes(obj, &config, values, acks)) {
            ctx.send(from, Msg::ConfirmResp { obj, sig, sn, config });
        }
    }
}

/// Signatures of `signers` over `msg` at `height(c)`, drawn from the oracle.
/// Used to build certificates outside the protocol (tests, attack scripts);
/// the oracle refuses any signer whose key has moved past `c`.
pub fn sign_all(crypto: &mut Crypto, signers: &[ProcessId], c: &Configuration, msg: &[u8]) -> AckMap {
    signers
        .iter()
        .filter_map(|p| crypto.fs_sign(p, msg, c.height()).map(|s| (p.clone(), s)))
        .collect::<BTreeMap<ProcessId, FsSignature>>()
}

/// Builds a certificate directly from signatures of `signers` (who must be
/// able to sign at the anchor's height).
pub fn assemble_certificate(
    crypto: &mut Crypto,
    obj: ObjectId,
    values: ValueSet,
    history: crate::lattice::History,
    history_cert: crate::protocol::HistoryCert,
    signers: &[ProcessId],
) -> OutputCertificate {
    let c = history.max_element().clone();
    let propose_acks = sign_all(crypto, signers, &c, &propose_resp_bytes(obj, &c, &values));
    let confirm_acks = sign_all(crypto, signers, &c, &confirm_resp_bytes(obj, &c, &values, &propose_acks));
    OutputCertificate::new(obj, values, history, history_cert, propose_acks, confirm_acks)
}

/// Forward-secure signature at `height(c)`, noting a refusal in the trace.
pub(crate) fn sign_at(ctx: &mut Ctx<'_>, what: &str, c: &Configuration, msg: &[u8]) -> Option<FsSignature> {
    let sig = ctx.fs_sign(msg, c.height());
    if sig.is_none() {
        let mut detail = crate::node::config_detail(c);
        detail["what"] = json!(what);
        detail["st"] = json!(ctx.key_timestamp());
        ctx.note("SignRefused", detail);
    }
    sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fscrypto::Backend;
    use crate::lattice::History;
    use crate::protocol::{HistorySource, InputCert, InputValue};
    use std::collections::BTreeSet;

    fn setup() -> (Registry, Crypto, Vec<ProcessId>) {
        let ids: Vec<ProcessId> = (1..=4).map(|i| ProcessId::new(format!("r{i}"))).collect();
        let reg = Registry::new(Configuration::genesis(ids.iter().cloned()), HistorySource::Authority("auth".into()));
        (reg, Crypto::new(Backend::TrustedOracle, 7), ids)
    }

    fn vals(ids: &[u64]) -> ValueSet {
        ids.iter().map(|i| InputValue::new(LatticeValue::singleton(*i), InputCert::Unchecked)).collect()
    }

    fn w(ids: &[u64]) -> LatticeValue {
        LatticeValue::FinSet(ids.iter().copied().collect::<BTreeSet<_>>())
    }

    #[test]
    fn full_quorum_certificate_verifies() {
        let (reg, mut crypto, ids) = setup();
        let h = History::singleton(reg.genesis.clone());
        let cert = assemble_certificate(
            &mut crypto,
            ObjectId::Lattice,
            vals(&[1, 2]),
            h,
            crate::protocol::HistoryCert::Genesis,
            &ids[..3],
        );
        assert!(verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[1, 2]), &cert));
        assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[1]), &cert));
        assert!(!verify_output_value(&reg, &crypto, ObjectId::ConfLa, &w(&[1, 2]), &cert));
    }

    #[test]
    fn removing_one_ack_from_minimal_quorum_fails() {
        let (reg, mut crypto, ids) = setup();
        let h = History::singleton(reg.genesis.clone());
        let full = assemble_certificate(
            &mut crypto,
            ObjectId::Lattice,
            vals(&[3]),
            h,
            crate::protocol::HistoryCert::Genesis,
            &ids[..3],
        );
        for victim in &ids[..3] {
            let mut pa = full.propose_acks.clone();
            pa.remove(victim);
            let c1 = OutputCertificate::new(
                ObjectId::Lattice,
                full.values.clone(),
                full.history.clone(),
                full.history_cert.clone(),
                pa,
                full.confirm_acks.clone(),
            );
            assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[3]), &c1));
            let mut ca = full.confirm_acks.clone();
            ca.remove(victim);
            let c2 = OutputCertificate::new(
                ObjectId::Lattice,
                full.values.clone(),
                full.history.clone(),
                full.history_cert.clone(),
                full.propose_acks.clone(),
                ca,
            );
            assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[3]), &c2));
        }
    }

    #[test]
    fn confirm_over_malformed_acks_yields_invalid_certificate() {
        let (reg, mut crypto, ids) = setup();
        let c = reg.genesis.clone();
        let values = vals(&[5]);
        // acks signed over a different value set
        let bogus = sign_all(&mut crypto, &ids[..3], &c, &propose_resp_bytes(ObjectId::Lattice, &c, &vals(&[6])));
        let confirm = sign_all(&mut crypto, &ids[..3], &c, &confirm_resp_bytes(ObjectId::Lattice, &c, &values, &bogus));
        assert_eq!(confirm.len(), 3, "replicas sign confirmations unconditionally");
        let cert = OutputCertificate::new(
            ObjectId::Lattice,
            values,
            History::singleton(c),
            crate::protocol::HistoryCert::Genesis,
            bogus,
            confirm,
        );
        assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[5]), &cert));
    }

    #[test]
    fn stale_anchor_cannot_be_signed_after_key_update() {
        let (reg, mut crypto, ids) = setup();
        for p in &ids {
            crypto.update_fs_keys(p, reg.genesis.height() + 1);
        }
        let cert = assemble_certificate(
            &mut crypto,
            ObjectId::Lattice,
            vals(&[1]),
            History::singleton(reg.genesis.clone()),
            crate::protocol::HistoryCert::Genesis,
            &ids,
        );
        assert!(cert.propose_acks.is_empty() && cert.confirm_acks.is_empty());
        assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[1]), &cert));
    }

    #[test]
    fn foreign_signer_invalidates_ack_map() {
        let (reg, mut crypto, ids) = setup();
        let c = reg.genesis.clone();
        let values = vals(&[1]);
        let outsider = ProcessId::new("r9");
        let mut signers = ids[..3].to_vec();
        signers.push(outsider);
        let cert = assemble_certificate(
            &mut crypto,
            ObjectId::Lattice,
            values,
            History::singleton(c),
            crate::protocol::HistoryCert::Genesis,
            &signers,
        );
        assert!(!verify_output_value(&reg, &crypto, ObjectId::Lattice, &w(&[1]), &cert));
    }
}
