//! Access-control objects. A client asks for a certificate on a value and
//! either gets one or a denial.
//!
//! Three backends:
//! * `sanity`: `b + 1` replicas of the client's highest configuration approve
//!   (forward-secure, at its height), then a quorum confirms.
//! * `quorum`: a full quorum approves; replicas remember what they approved
//!   and refuse conflicting values, and these records move with state
//!   transfer. A quorum then confirms.
//! * `admin`: a static set of administrators, `b_a + 1` plain signatures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde_json::json;
use thiserror::Error;

use crate::client::{ClientCore, Step};
use crate::encoding::{Canonical, Digest, Encoder};
use crate::fscrypto::{Crypto, FsSignature, PlainSignature};
use crate::lattice::{fault_bound, Configuration, History, LatticeValue, ProcessId};
use crate::messages::Msg;
use crate::node::{value_json, Ctx, Output};
use crate::protocol::{
    acks_digest, quorum_of_acks, signed, valid_acks, AckMap, HistoryCert, ObjectId, Registry, SignedTag,
};
use crate::replica::Replica;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AcBackend {
    Sanity,
    Quorum,
    Admin,
}

impl AcBackend {
    pub fn name(self) -> &'static str {
        match self {
            AcBackend::Sanity => "sanity",
            AcBackend::Quorum => "quorum",
            AcBackend::Admin => "admin",
        }
    }
}

impl fmt::Display for AcBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown access-control backend `{0}`")]
pub struct UnknownBackend(String);

impl FromStr for AcBackend {
    type Err = UnknownBackend;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sanity" => Ok(AcBackend::Sanity),
            "quorum" => Ok(AcBackend::Quorum),
            "admin" => Ok(AcBackend::Admin),
            other => Err(UnknownBackend(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AcError {
    #[error("no access-control object in this run")]
    NoBackend,
    #[error("access-control values are finite sets, got a {0}")]
    WrongKind(&'static str),
    #[error("the admin backend has no administrators")]
    NoAdmins,
}

/// One approval: forward-secure from a replica, plain from an administrator.
#[derive(Clone, Debug)]
pub enum Approval {
    Fs(FsSignature),
    Plain(PlainSignature),
}

impl Approval {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            Approval::Fs(s) => e.u8(0).bytes(&s.encode()),
            Approval::Plain(s) => e.u8(1).bytes(&s.encode()),
        };
        e.digest()
    }
}

#[derive(Clone, Debug)]
pub enum AcCertificate {
    /// Issued by the replicas of the anchor configuration (`sanity`, `quorum`).
    Dynamic {
        backend: AcBackend,
        value: LatticeValue,
        history: History,
        history_cert: HistoryCert,
        approvals: AckMap,
        confirms: AckMap,
    },
    Admin {
        value: LatticeValue,
        sigs: BTreeMap<ProcessId, PlainSignature>,
    },
}

impl AcCertificate {
    pub fn value(&self) -> &LatticeValue {
        match self {
            AcCertificate::Dynamic { value, .. } | AcCertificate::Admin { value, .. } => value,
        }
    }

    pub fn backend(&self) -> AcBackend {
        match self {
            AcCertificate::Dynamic { backend, .. } => *backend,
            AcCertificate::Admin { .. } => AcBackend::Admin,
        }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend().name()
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            AcCertificate::Dynamic { backend, value, history, history_cert, approvals, confirms } => {
                e.u8(0)
                    .bytes(backend.name().as_bytes())
                    .raw(&value.digest())
                    .raw(&history.digest())
                    .raw(&history_cert.digest())
                    .raw(&acks_digest(approvals))
                    .raw(&acks_digest(confirms));
            }
            AcCertificate::Admin { value, sigs } => {
                e.u8(1).raw(&value.digest()).u32(sigs.len() as u32);
                for s in sigs.values() {
                    e.bytes(&s.encode());
                }
            }
        }
        e.digest()
    }
}

pub fn ac_approve_bytes(obj: ObjectId, c: &Configuration, value: &LatticeValue) -> Vec<u8> {
    let mut e = signed(SignedTag::AcApprove, obj);
    e.raw(&c.digest()).raw(&value.digest());
    e.finish()
}

pub fn ac_confirm_bytes(obj: ObjectId, c: &Configuration, value: &LatticeValue, approvals: &AckMap) -> Vec<u8> {
    let mut e = signed(SignedTag::AcConfirmResp, obj);
    e.raw(&c.digest()).raw(&value.digest()).raw(&acks_digest(approvals));
    e.finish()
}

pub fn admin_bytes(value: &LatticeValue) -> Vec<u8> {
    let mut e = signed(SignedTag::AdminApprove, ObjectId::Access);
    e.raw(&value.digest());
    e.finish()
}

/// Approvals a dynamic backend needs in `c`.
pub fn approvals_needed(backend: AcBackend, c: &Configuration) -> usize {
    match backend {
        AcBackend::Sanity => c.fault_bound() + 1,
        AcBackend::Quorum => c.quorum_size(),
        AcBackend::Admin => 0,
    }
}

/// Admin signatures needed for `n` administrators.
pub fn admin_threshold(n: usize) -> usize {
    fault_bound(n) + 1
}

pub fn verify_cert(reg: &Registry, crypto: &Crypto, obj: ObjectId, value: &LatticeValue, cert: &AcCertificate) -> bool {
    if obj != ObjectId::Access || cert.value() != value {
        return false;
    }
    match cert {
        AcCertificate::Admin { sigs, .. } => {
            let msg = admin_bytes(value);
            let valid = sigs
                .iter()
                .filter(|(p, s)| reg.admins.contains(*p) && &s.signer == *p && crypto.plain_verify(&msg, p, s))
                .count();
            !reg.admins.is_empty() && valid >= admin_threshold(reg.admins.len())
        }
        AcCertificate::Dynamic { backend, history, history_cert, approvals, confirms, .. } => {
            if reg.access != Some(*backend) || !reg.verify_history(crypto, history, history_cert) {
                return false;
            }
            let c = history.max_element();
            let needed = approvals_needed(*backend, c);
            needed > 0
                && valid_acks(crypto, c, approvals, &ac_approve_bytes(obj, c, value)) >= needed
                && quorum_of_acks(crypto, c, confirms, &ac_confirm_bytes(obj, c, value, approvals))
        }
    }
}

/// Builds an admin certificate from the signatures of `admins`.
pub fn admin_certificate(crypto: &Crypto, admins: &[ProcessId], value: LatticeValue) -> AcCertificate {
    let msg = admin_bytes(&value);
    let sigs = admins.iter().map(|a| (a.clone(), crypto.plain_sign(a, &msg))).collect();
    AcCertificate::Admin { value, sigs }
}

/// A static administrator.
pub struct Admin {
    id: ProcessId,
    reg: Arc<Registry>,
}

impl Admin {
    pub fn new(id: ProcessId, reg: Arc<Registry>) -> Self {
        Admin { id, reg }
    }

    pub fn on_message(&mut self, from: &ProcessId, msg: Msg, ctx: &mut Ctx<'_>) {
        let Msg::AcRequest { obj, value, sn, config: None } = msg else { return };
        if self.reg.denies(&self.id, &value) {
            ctx.send(from, Msg::AcDeny { obj, value, sn });
            return;
        }
        let sig = ctx.plain_sign(&admin_bytes(&value));
        ctx.send(from, Msg::AcApprove { obj, value, approval: Approval::Plain(sig), sn });
    }
}

#[derive(Debug)]
enum AcPhase {
    Approving { fs: AckMap, plain: BTreeMap<ProcessId, PlainSignature>, denials: BTreeSet<ProcessId> },
    Confirming { approvals: Arc<AckMap>, confirms: AckMap },
}

/// Client side of one access-control request.
#[derive(Debug)]
pub struct AcTask {
    backend: AcBackend,
    value: LatticeValue,
    sn: u64,
    config: Configuration,
    phase: AcPhase,
}

impl AcTask {
    pub fn new(reg: &Registry, value: LatticeValue) -> Result<Self, AcError> {
        let backend = reg.access.ok_or(AcError::NoBackend)?;
        if value.kind() != "finset" {
            return Err(AcError::WrongKind(value.kind()));
        }
        if backend == AcBackend::Admin && reg.admins.is_empty() {
            return Err(AcError::NoAdmins);
        }
        Ok(AcTask { backend, value, sn: 0, config: Configuration::empty(), phase: AcPhase::fresh() })
    }

    pub(crate) fn start(&mut self, core: &mut ClientCore, ctx: &mut Ctx<'_>) -> Step {
        self.sn = core.next_sn();
        self.phase = AcPhase::fresh();
        let obj = ObjectId::Access;
        if self.backend == AcBackend::Admin {
            let msg = Msg::AcRequest { obj, value: self.value.clone(), sn: self.sn, config: None };
            ctx.send_all(core.reg.admins.iter(), &msg);
        } else {
            self.config = core.history.max_element().clone();
            let msg = Msg::AcRequest { obj, value: self.value.clone(), sn: self.sn, config: Some(self.config.clone()) };
            ctx.send_all(self.config.replicas().iter(), &msg);
        }
        Step::Pending
    }

    /// Processes that answer the approval round and how many must approve.
    fn electorate(&self, core: &ClientCore) -> (BTreeSet<ProcessId>, usize) {
        match self.backend {
            AcBackend::Admin => (core.reg.admins.clone(), admin_threshold(core.reg.admins.len())),
            b => (self.config.replicas(), approvals_needed(b, &self.config)),
        }
    }

    pub(crate) fn on_message(&mut self, core: &mut ClientCore, from: &ProcessId, msg: &Msg, ctx: &mut Ctx<'_>) -> Step {
        let obj = ObjectId::Access;
        let (voters, needed) = self.electorate(core);
        match (&mut self.phase, msg) {
            (AcPhase::Approving { denials, .. }, Msg::AcDeny { value, sn, .. })
                if *sn == self.sn && *value == self.value && voters.contains(from) =>
            {
                denials.insert(from.clone());
                if denials.len() > voters.len() - needed {
                    ctx.note("AcDenied", json!({ "value": value_json(&self.value), "denials": denials.len() }));
                    return Step::Done(Output::Denied { value: self.value.clone() });
                }
                Step::Pending
            }
            (AcPhase::Approving { fs, plain, .. }, Msg::AcApprove { value, approval, sn, .. })
                if *sn == self.sn && *value == self.value && voters.contains(from) =>
            {
                match (self.backend, approval) {
                    (AcBackend::Admin, Approval::Plain(s)) => {
                        if &s.signer != from || !ctx.crypto().plain_verify(&admin_bytes(value), from, s) {
                            return Step::Pending;
                        }
                        plain.insert(from.clone(), s.clone());
                        if plain.len() >= needed {
                            let cert = AcCertificate::Admin { value: value.clone(), sigs: std::mem::take(plain) };
                            return Step::Done(Output::Certified { value: value.clone(), cert: Arc::new(cert) });
                        }
                    }
                    (AcBackend::Sanity | AcBackend::Quorum, Approval::Fs(s)) => {
                        let c = &self.config;
                        if !ctx.crypto().fs_verify(&ac_approve_bytes(obj, c, value), from, s, c.height()) {
                            return Step::Pending;
                        }
                        fs.insert(from.clone(), s.clone());
                        if fs.len() >= needed {
                            let approvals = Arc::new(std::mem::take(fs));
                            let msg = Msg::AcConfirm {
                                obj,
                                value: value.clone(),
                                approvals: approvals.clone(),
                                sn: self.sn,
                                config: c.clone(),
                            };
                            ctx.send_all(c.replicas().iter(), &msg);
                            self.phase = AcPhase::Confirming { approvals, confirms: AckMap::new() };
                        }
                    }
                    _ => {}
                }
                Step::Pending
            }
            (AcPhase::Confirming { approvals, confirms }, Msg::AcConfirmResp { sig, sn, config, .. })
                if *sn == self.sn && *config == self.config && config.is_member(from) =>
            {
                let bytes = ac_confirm_bytes(obj, config, &self.value, approvals);
                if !ctx.crypto().fs_verify(&bytes, from, sig, config.height()) {
                    return Step::Pending;
                }
                confirms.insert(from.clone(), sig.clone());
                if !config.is_quorum(confirms.keys()) {
                    return Step::Pending;
                }
                let cert = AcCertificate::Dynamic {
                    backend: self.backend,
                    value: self.value.clone(),
                    history: core.history.clone(),
                    history_cert: core.history_cert.clone(),
                    approvals: (**approvals).clone(),
                    confirms: std::mem::take(confirms),
                };
                Step::Done(Output::Certified { value: self.value.clone(), cert: Arc::new(cert) })
            }
            _ => Step::Pending,
        }
    }
}

impl AcPhase {
    fn fresh() -> Self {
        AcPhase::Approving { fs: AckMap::new(), plain: BTreeMap::new(), denials: BTreeSet::new() }
    }
}

impl Replica {
    pub(crate) fn on_ac_request(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        value: LatticeValue,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        let Some(backend) = self.reg.access else { return };
        let refuse = self.reg.denies(&self.id, &value)
            || (backend == AcBackend::Quorum
                && self.ac_records.iter().any(|r| *r != value && self.reg.conflicting(r, &value)));
        if refuse {
            ctx.send(from, Msg::AcDeny { obj, value, sn });
            return;
        }
        let Some(sig) = crate::dbla::sign_at(ctx, "AcApprove", &config, &ac_approve_bytes(obj, &config, &value)) else {
            return;
        };
        if backend == AcBackend::Quorum && self.ac_records.insert(value.clone()) {
            ctx.note("AcRecord", json!({ "value": value_json(&value) }));
        }
        ctx.send(from, Msg::AcApprove { obj, value, approval: Approval::Fs(sig), sn });
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn on_ac_confirm(
        &mut self,
        from: &ProcessId,
        obj: ObjectId,
        value: &LatticeValue,
        approvals: &AckMap,
        sn: u64,
        config: Configuration,
        ctx: &mut Ctx<'_>,
    ) {
        if self.reg.access.is_none() {
            return;
        }
        if let Some(sig) =
            crate::dbla::sign_at(ctx, "AcConfirmResp", &config, &ac_confirm_bytes(obj, &config, value, approvals))
        {
            ctx.send(from, Msg::AcConfirmResp { obj, sig, sn, config });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fscrypto::Backend;
    use crate::protocol::HistorySource;

    fn reg(backend: AcBackend) -> Registry {
        let ids: Vec<ProcessId> = (1..=4).map(|i| ProcessId::new(format!("r{i}"))).collect();
        let mut reg = Registry::new(Configuration::genesis(ids), HistorySource::Authority("auth".into()));
        reg.access = Some(backend);
        reg.admins = ["a1", "a2", "a3", "a4"].into_iter().map(ProcessId::from).collect();
        reg
    }

    #[test]
    fn admin_threshold_is_b_plus_one() {
        let reg = reg(AcBackend::Admin);
        let crypto = Crypto::new(Backend::TrustedOracle, 3);
        let v = LatticeValue::singleton(9);
        let admins: Vec<ProcessId> = reg.admins.iter().cloned().collect();
        let two = admin_certificate(&crypto, &admins[..2], v.clone());
        let one = admin_certificate(&crypto, &admins[..1], v.clone());
        assert!(verify_cert(&reg, &crypto, ObjectId::Access, &v, &two));
        assert!(!verify_cert(&reg, &crypto, ObjectId::Access, &v, &one));
        assert!(!verify_cert(&reg, &crypto, ObjectId::Access, &LatticeValue::singleton(8), &two));
        let outsider = admin_certificate(&crypto, &[admins[0].clone(), ProcessId::new("x")], v.clone());
        assert!(!verify_cert(&reg, &crypto, ObjectId::Access, &v, &outsider));
    }

    #[test]
    fn dynamic_certificate_thresholds() {
        for (backend, needed) in [(AcBackend::Sanity, 2), (AcBackend::Quorum, 3)] {
            let reg = reg(backend);
            let mut crypto = Crypto::new(Backend::TrustedOracle, 3);
            let c = reg.genesis.clone();
            let v = LatticeValue::singleton(1);
            let ids: Vec<ProcessId> = c.replicas().into_iter().collect();
            for k in 1..=4 {
                let approvals =
                    crate::dbla::sign_all(&mut crypto, &ids[..k], &c, &ac_approve_bytes(ObjectId::Access, &c, &v));
                let confirms = crate::dbla::sign_all(
                    &mut crypto,
                    &ids[..3],
                    &c,
                    &ac_confirm_bytes(ObjectId::Access, &c, &v, &approvals),
                );
                let cert = AcCertificate::Dynamic {
                    backend,
                    value: v.clone(),
                    history: reg.genesis_history(),
                    history_cert: HistoryCert::Genesis,
                    approvals,
                    confirms,
                };
                assert_eq!(verify_cert(&reg, &crypto, ObjectId::Access, &v, &cert), k >= needed, "{backend} k={k}");
            }
        }
    }

    #[test]
    fn backend_names_round_trip() {
        for b in [AcBackend::Sanity, AcBackend::Quorum, AcBackend::Admin] {
            assert_eq!(b.name().parse::<AcBackend>().unwrap(), b);
        }
        assert!("nope".parse::<AcBackend>().is_err());
    }
}
