//! Values, certificates and the verification context shared by all objects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::access_control::{AcBackend, AcCertificate};
use crate::encoding::{Canonical, Digest, Encoder};
use crate::fscrypto::{Crypto, FsSignature, PlainSignature};
use crate::lattice::{Configuration, History, LatticeValue, ProcessId};

/// Names one object hosted by the replicas. Mixed into every signed
/// payload, so each object has its own key namespace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectId {
    /// Lattice agreement over finite sets of value ids.
    Lattice,
    MaxReg,
    /// Lattice agreement over configurations.
    ConfLa,
    /// Lattice agreement over sets of configurations.
    HistLa,
    Access,
}

impl ObjectId {
    pub fn code(self) -> u8 {
        match self {
            ObjectId::Lattice => 1,
            ObjectId::MaxReg => 2,
            ObjectId::ConfLa => 3,
            ObjectId::HistLa => 4,
            ObjectId::Access => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectId::Lattice => "lattice",
            ObjectId::MaxReg => "maxreg",
            ObjectId::ConfLa => "conf",
            ObjectId::HistLa => "hist",
            ObjectId::Access => "access",
        }
    }

    /// Lattice of the values agreed on, for the lattice-agreement objects.
    pub fn lattice_kind(self) -> Option<&'static str> {
        match self {
            ObjectId::Lattice => Some("finset"),
            ObjectId::ConfLa => Some("config"),
            ObjectId::HistLa => Some("hist"),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tags of signed payloads. Each signature covers
/// `VERSION tag object-code body`, so a signature for one message type or
/// object never verifies as another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum SignedTag {
    ProposeResp = 0x20,
    ConfirmResp = 0x21,
    SetResp = 0x22,
    AcApprove = 0x23,
    AcConfirmResp = 0x24,
    UrbEcho = 0x25,
    Input = 0x26,
    History = 0x27,
    AdminApprove = 0x28,
}

pub(crate) fn signed(tag: SignedTag, obj: ObjectId) -> Encoder {
    let mut e = Encoder::with_tag(tag as u8);
    e.u8(obj.code());
    e
}

pub type AckMap = BTreeMap<ProcessId, FsSignature>;

/// Certificate attached to an input value.
#[derive(Clone, Debug)]
pub enum InputCert {
    /// Only valid for the designated initial value of an object.
    Genesis,
    /// Accepted when the registry runs in accept-all mode.
    Unchecked,
    /// Plain signature of an authorised client over the value.
    Client(PlainSignature),
    /// Access-control certificate (configuration proposals).
    Access(Arc<AcCertificate>),
    /// Output of configuration agreement, wrapped as an input of history agreement.
    ConfOutput(Arc<OutputCertificate>),
}

impl InputCert {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            InputCert::Genesis => e.u8(0),
            InputCert::Unchecked => e.u8(1),
            InputCert::Client(s) => e.u8(2).bytes(&s.encode()),
            InputCert::Access(c) => e.u8(3).raw(&c.digest()),
            InputCert::ConfOutput(c) => e.u8(4).raw(&c.digest()),
        };
        e.digest()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InputCert::Genesis => "genesis",
            InputCert::Unchecked => "unchecked",
            InputCert::Client(_) => "client",
            InputCert::Access(_) => "access",
            InputCert::ConfOutput(_) => "conf-output",
        }
    }
}

struct InputInner {
    value: LatticeValue,
    cert: InputCert,
    digest: Digest,
}

/// A lattice value with its certificate. Ordered and compared by digest.
#[derive(Clone)]
pub struct InputValue(Arc<InputInner>);

impl InputValue {
    pub fn new(value: LatticeValue, cert: InputCert) -> Self {
        let mut e = Encoder::new();
        e.raw(&value.canonical_bytes()).raw(&cert.digest());
        let digest = e.digest();
        InputValue(Arc::new(InputInner { value, cert, digest }))
    }

    pub fn value(&self) -> &LatticeValue {
        &self.0.value
    }

    pub fn cert(&self) -> &InputCert {
        &self.0.cert
    }

    pub fn digest(&self) -> Digest {
        self.0.digest
    }
}

impl PartialEq for InputValue {
    fn eq(&self, other: &Self) -> bool {
        self.0.digest == other.0.digest
    }
}

impl Eq for InputValue {}

impl PartialOrd for InputValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InputValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.digest.cmp(&other.0.digest)
    }
}

impl fmt::Debug for InputValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]", self.0.value, self.0.cert.kind())
    }
}

pub type ValueSet = BTreeSet<InputValue>;

/// Digest of a value set: the sorted member digests.
pub fn values_digest(values: &ValueSet) -> Digest {
    let mut e = Encoder::new();
    e.u32(values.len() as u32);
    for v in values {
        e.raw(&v.digest());
    }
    e.digest()
}

/// Join of all values in the set, `None` for the empty set.
pub fn join_values(values: &ValueSet) -> Option<LatticeValue> {
    LatticeValue::join_all(values.iter().map(InputValue::value)).ok().flatten()
}

pub fn acks_digest(acks: &AckMap) -> Digest {
    let mut e = Encoder::new();
    e.u32(acks.len() as u32);
    for (p, s) in acks {
        e.bytes(p.as_str().as_bytes()).bytes(&s.encode());
    }
    e.digest()
}

/// Certificate of a history.
#[derive(Clone, Debug)]
pub enum HistoryCert {
    /// Only valid for the initial history `{C0}`.
    Genesis,
    /// Plain signature of the scenario's history authority (standalone
    /// dynamic objects, where histories are supplied from outside).
    Authority(PlainSignature),
    /// Output certificate of history agreement.
    HistLa(Arc<OutputCertificate>),
}

impl HistoryCert {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            HistoryCert::Genesis => e.u8(0),
            HistoryCert::Authority(s) => e.u8(1).bytes(&s.encode()),
            HistoryCert::HistLa(c) => e.u8(2).raw(&c.digest()),
        };
        e.digest()
    }
}

/// Proof attached to every lattice-agreement output.
#[derive(Clone, Debug)]
pub struct OutputCertificate {
    pub obj: ObjectId,
    pub values: ValueSet,
    pub history: History,
    pub history_cert: HistoryCert,
    pub propose_acks: AckMap,
    pub confirm_acks: AckMap,
    digest: Digest,
}

impl OutputCertificate {
    pub fn new(
        obj: ObjectId,
        values: ValueSet,
        history: History,
        history_cert: HistoryCert,
        propose_acks: AckMap,
        confirm_acks: AckMap,
    ) -> Self {
        let mut e = Encoder::new();
        e.u8(obj.code())
            .raw(&values_digest(&values))
            .raw(&history.digest())
            .raw(&history_cert.digest())
            .raw(&acks_digest(&propose_acks))
            .raw(&acks_digest(&confirm_acks));
        let digest = e.digest();
        OutputCertificate { obj, values, history, history_cert, propose_acks, confirm_acks, digest }
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    /// The configuration the certificate is anchored at.
    pub fn anchor(&self) -> &Configuration {
        self.history.max_element()
    }
}

/// Where histories come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HistorySource {
    /// An external authority signs histories (standalone dynamic objects).
    Authority(ProcessId),
    /// Histories are outputs of history agreement.
    HistLa,
}

/// Which input values are valid for the data objects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputPolicy {
    AcceptAll,
    /// Values signed by one of these clients.
    ClientSigned(BTreeSet<ProcessId>),
}

/// Which configuration proposals are valid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigPolicy {
    AcceptAll,
    /// Certified by the administrator access-control backend.
    Admin,
}

/// Static verification context known to every process of a run.
#[derive(Clone, Debug)]
pub struct Registry {
    pub genesis: Configuration,
    pub history_source: HistorySource,
    pub inputs: InputPolicy,
    pub config_inputs: ConfigPolicy,
    pub admins: BTreeSet<ProcessId>,
    pub access: Option<AcBackend>,
    /// Symmetric conflict relation over access-control value ids.
    pub conflicts: BTreeSet<(u64, u64)>,
    /// `(replica, value)` pairs whose approval the replica refuses.
    pub denials: BTreeSet<(ProcessId, u64)>,
}

impl Registry {
    pub fn new(genesis: Configuration, history_source: HistorySource) -> Self {
        Registry {
            genesis,
            history_source,
            inputs: InputPolicy::AcceptAll,
            config_inputs: ConfigPolicy::AcceptAll,
            admins: BTreeSet::new(),
            access: None,
            conflicts: BTreeSet::new(),
            denials: BTreeSet::new(),
        }
    }

    pub fn genesis_history(&self) -> History {
        History::singleton(self.genesis.clone())
    }

    /// Initial value of an object, if it has one.
    pub fn genesis_value(&self, obj: ObjectId) -> Option<LatticeValue> {
        match obj {
            ObjectId::ConfLa => Some(LatticeValue::Config(self.genesis.clone())),
            ObjectId::HistLa => Some(LatticeValue::Hist(BTreeSet::from([self.genesis.clone()]))),
            ObjectId::MaxReg => Some(LatticeValue::singleton(0)),
            _ => None,
        }
    }

    /// Initial local value set of a lattice-agreement object.
    pub fn genesis_values(&self, obj: ObjectId) -> ValueSet {
        self.genesis_value(obj)
            .filter(|_| obj.lattice_kind().is_some())
            .map(|v| BTreeSet::from([InputValue::new(v, InputCert::Genesis)]))
            .unwrap_or_default()
    }

    pub fn conflicting(&self, a: &LatticeValue, b: &LatticeValue) -> bool {
        match (single_id(a), single_id(b)) {
            (Some(x), Some(y)) => self.conflicts.contains(&(x, y)) || self.conflicts.contains(&(y, x)),
            _ => false,
        }
    }

    pub fn denies(&self, replica: &ProcessId, value: &LatticeValue) -> bool {
        single_id(value).is_some_and(|v| self.denials.contains(&(replica.clone(), v)))
    }

    pub fn input_bytes(obj: ObjectId, value: &LatticeValue) -> Vec<u8> {
        let mut e = signed(SignedTag::Input, obj);
        e.raw(&value.canonical_bytes());
        e.finish()
    }

    /// Signs `value` as a client input (plain signature of `client`).
    pub fn client_input(crypto: &Crypto, client: &ProcessId, obj: ObjectId, value: LatticeValue) -> InputValue {
        let sig = crypto.plain_sign(client, &Self::input_bytes(obj, &value));
        InputValue::new(value, InputCert::Client(sig))
    }

    /// Pluggable input predicate. Pure; memoised per (object, value, cert).
    pub fn verify_input_value(&self, crypto: &Crypto, obj: ObjectId, iv: &InputValue) -> bool {
        let mut key = Encoder::new();
        key.raw(b"input").u8(obj.code()).raw(&iv.digest());
        crypto.memoize(key.digest(), || self.check_input(crypto, obj, iv.value(), iv.cert()))
    }

    pub(crate) fn check_input(&self, crypto: &Crypto, obj: ObjectId, value: &LatticeValue, cert: &InputCert) -> bool {
        if let Some(kind) = obj.lattice_kind() {
            if value.kind() != kind {
                return false;
            }
        }
        if let InputCert::Genesis = cert {
            return self.genesis_value(obj).as_ref() == Some(value);
        }
        match obj {
            ObjectId::Lattice | ObjectId::MaxReg => match (&self.inputs, cert) {
                (InputPolicy::AcceptAll, InputCert::Unchecked) => true,
                (InputPolicy::ClientSigned(clients), InputCert::Client(sig)) => {
                    clients.contains(&sig.signer)
                        && crypto.plain_verify(&Self::input_bytes(obj, value), &sig.signer, sig)
                }
                _ => false,
            },
            ObjectId::ConfLa => match (&self.config_inputs, cert) {
                (ConfigPolicy::AcceptAll, InputCert::Unchecked) => true,
                (ConfigPolicy::Admin, InputCert::Access(ac)) => {
                    matches!(**ac, AcCertificate::Admin { .. }) && self.verify_cert(crypto, ObjectId::Access, value, ac)
                }
                _ => false,
            },
            ObjectId::HistLa => crate::reconfig::verify_hist_input(self, crypto, value, cert),
            ObjectId::Access => false,
        }
    }

    /// Verifies a history certificate.
    pub fn verify_history(&self, crypto: &Crypto, h: &History, cert: &HistoryCert) -> bool {
        crate::reconfig::verify_history(self, crypto, h, cert)
    }

    pub fn verify_output_value(
        &self,
        crypto: &Crypto,
        obj: ObjectId,
        w: &LatticeValue,
        cert: &OutputCertificate,
    ) -> bool {
        crate::dbla::verify_output_value(self, crypto, obj, w, cert)
    }

    pub fn verify_cert(&self, crypto: &Crypto, obj: ObjectId, value: &LatticeValue, cert: &AcCertificate) -> bool {
        crate::access_control::verify_cert(self, crypto, obj, value, cert)
    }
}

/// The id of a singleton value set.
pub fn single_id(v: &LatticeValue) -> Option<u64> {
    match v {
        LatticeValue::FinSet(s) if s.len() == 1 => s.iter().next().copied(),
        _ => None,
    }
}

/// Checks that `acks` holds valid signatures over `msg` at `height(c)` from
/// a quorum of `c`.
pub fn quorum_of_acks(crypto: &Crypto, c: &Configuration, acks: &AckMap, msg: &[u8]) -> bool {
    valid_acks(crypto, c, acks, msg) >= c.quorum_size() && c.quorum_size() > 0
}

/// Number of distinct members of `c` with a valid signature in `acks`.
/// Any foreign or invalid entry makes the whole map count as zero.
pub fn valid_acks(crypto: &Crypto, c: &Configuration, acks: &AckMap, msg: &[u8]) -> usize {
    let t = c.height();
    for (p, s) in acks {
        if &s.signer != p || !c.is_member(p) || !crypto.fs_verify(msg, p, s, t) {
            return 0;
        }
    }
    acks.len()
}
