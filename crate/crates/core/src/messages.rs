//! Wire messages exchanged by replicas, clients and administrators.
//!
//! Every message has a descriptor and a canonical encoding: one descriptor
//! byte, the object code, then the fields in declaration order. Value sets,
//! certificates and state snapshots are encoded by digest.

use std::sync::Arc;

use crate::access_control::{AcCertificate, Approval};
use crate::broadcast::{RbMessage, UrbMessage};
use crate::encoding::{Canonical, Digest, Encoder};
use crate::fscrypto::FsSignature;
use crate::lattice::{Configuration, History, LatticeValue, ProcessId};
use crate::maxreg::Cell;
use crate::protocol::{acks_digest, values_digest, AckMap, HistoryCert, ObjectId, ValueSet};
use crate::replica::Snapshot;
use crate::simnet::WireMessage;

/// Payload of the global reliable broadcast.
#[derive(Clone, Debug)]
pub struct NewHistory {
    pub history: History,
    pub cert: HistoryCert,
}

impl NewHistory {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.raw(&self.history.digest()).raw(&self.cert.digest());
        e.digest()
    }
}

/// Payload of the per-configuration uniform reliable broadcast.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateComplete;

#[derive(Clone, Debug)]
pub enum Msg {
    Propose {
        obj: ObjectId,
        values: ValueSet,
        sn: u64,
        config: Configuration,
    },
    ProposeResp {
        obj: ObjectId,
        values: ValueSet,
        sig: FsSignature,
        sn: u64,
        config: Configuration,
    },
    Confirm {
        obj: ObjectId,
        values: ValueSet,
        acks: Arc<AckMap>,
        sn: u64,
        config: Configuration,
    },
    ConfirmResp {
        obj: ObjectId,
        sig: FsSignature,
        sn: u64,
        config: Configuration,
    },
    Get {
        obj: ObjectId,
        sn: u64,
        config: Configuration,
    },
    GetResp {
        obj: ObjectId,
        cell: Cell,
        sn: u64,
        config: Configuration,
    },
    Set {
        obj: ObjectId,
        cell: Cell,
        sn: u64,
        config: Configuration,
    },
    SetResp {
        obj: ObjectId,
        sig: FsSignature,
        sn: u64,
        config: Configuration,
    },
    /// `config` is `None` for requests to static administrators.
    AcRequest {
        obj: ObjectId,
        value: LatticeValue,
        sn: u64,
        config: Option<Configuration>,
    },
    AcApprove {
        obj: ObjectId,
        value: LatticeValue,
        approval: Approval,
        sn: u64,
    },
    AcDeny {
        obj: ObjectId,
        value: LatticeValue,
        sn: u64,
    },
    AcConfirm {
        obj: ObjectId,
        value: LatticeValue,
        approvals: Arc<AckMap>,
        sn: u64,
        config: Configuration,
    },
    AcConfirmResp {
        obj: ObjectId,
        sig: FsSignature,
        sn: u64,
        config: Configuration,
    },
    UpdateRead {
        sn: u64,
        config: Configuration,
    },
    UpdateReadResp {
        state: Arc<Snapshot>,
        sn: u64,
        config: Configuration,
    },
    NewHistory(RbMessage<NewHistory>),
    UpdateComplete(UrbMessage<UpdateComplete>),
}

impl Msg {
    /// The configuration a client request is addressed to.
    pub fn request_config(&self) -> Option<&Configuration> {
        match self {
            Msg::Propose { config, .. }
            | Msg::Confirm { config, .. }
            | Msg::Get { config, .. }
            | Msg::Set { config, .. }
            | Msg::AcConfirm { config, .. } => Some(config),
            Msg::AcRequest { config, .. } => config.as_ref(),
            _ => None,
        }
    }

    pub fn is_client_request(&self) -> bool {
        self.request_config().is_some()
    }

    fn code(&self) -> u8 {
        match self {
            Msg::Propose { .. } => 0x40,
            Msg::ProposeResp { .. } => 0x41,
            Msg::Confirm { .. } => 0x42,
            Msg::ConfirmResp { .. } => 0x43,
            Msg::Get { .. } => 0x44,
            Msg::GetResp { .. } => 0x45,
            Msg::Set { .. } => 0x46,
            Msg::SetResp { .. } => 0x47,
            Msg::AcRequest { .. } => 0x48,
            Msg::AcApprove { .. } => 0x49,
            Msg::AcDeny { .. } => 0x4a,
            Msg::AcConfirm { .. } => 0x4b,
            Msg::AcConfirmResp { .. } => 0x4c,
            Msg::UpdateRead { .. } => 0x4d,
            Msg::UpdateReadResp { .. } => 0x4e,
            Msg::NewHistory(_) => 0x4f,
            Msg::UpdateComplete(_) => 0x50,
        }
    }

    /// Canonical encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::with_tag(self.code());
        match self {
            Msg::Propose { obj, values, sn, config } => {
                e.u8(obj.code()).raw(&values_digest(values)).u64(*sn).raw(&config.digest());
            }
            Msg::ProposeResp { obj, values, sig, sn, config } => {
                e.u8(obj.code()).raw(&values_digest(values)).bytes(&sig.encode()).u64(*sn).raw(&config.digest());
            }
            Msg::Confirm { obj, values, acks, sn, config } => {
                e.u8(obj.code()).raw(&values_digest(values)).raw(&acks_digest(acks)).u64(*sn).raw(&config.digest());
            }
            Msg::ConfirmResp { obj, sig, sn, config }
            | Msg::SetResp { obj, sig, sn, config }
            | Msg::AcConfirmResp { obj, sig, sn, config } => {
                e.u8(obj.code()).bytes(&sig.encode()).u64(*sn).raw(&config.digest());
            }
            Msg::Get { obj, sn, config } => {
                e.u8(obj.code()).u64(*sn).raw(&config.digest());
            }
            Msg::GetResp { obj, cell, sn, config } | Msg::Set { obj, cell, sn, config } => {
                e.u8(obj.code()).raw(&cell.digest()).u64(*sn).raw(&config.digest());
            }
            Msg::AcRequest { obj, value, sn, config } => {
                e.u8(obj.code()).raw(&value.digest()).u64(*sn);
                if let Some(c) = config {
                    e.raw(&c.digest());
                }
            }
            Msg::AcApprove { obj, value, approval, sn } => {
                e.u8(obj.code()).raw(&value.digest()).raw(&approval.digest()).u64(*sn);
            }
            Msg::AcDeny { obj, value, sn } => {
                e.u8(obj.code()).raw(&value.digest()).u64(*sn);
            }
            Msg::AcConfirm { obj, value, approvals, sn, config } => {
                e.u8(obj.code()).raw(&value.digest()).raw(&acks_digest(approvals)).u64(*sn).raw(&config.digest());
            }
            Msg::UpdateRead { sn, config } => {
                e.u64(*sn).raw(&config.digest());
            }
            Msg::UpdateReadResp { state, sn, config } => {
                e.raw(&state.digest()).u64(*sn).raw(&config.digest());
            }
            Msg::NewHistory(m) => {
                e.raw(&m.id());
            }
            Msg::UpdateComplete(m) => {
                e.raw(&m.digest());
            }
        }
        e.finish()
    }
}

impl WireMessage for Msg {
    fn descriptor(&self) -> &'static str {
        match self {
            Msg::Propose { .. } => "Propose",
            Msg::ProposeResp { .. } => "ProposeResp",
            Msg::Confirm { .. } => "Confirm",
            Msg::ConfirmResp { .. } => "ConfirmResp",
            Msg::Get { .. } => "Get",
            Msg::GetResp { .. } => "GetResp",
            Msg::Set { .. } => "Set",
            Msg::SetResp { .. } => "SetResp",
            Msg::AcRequest { .. } => "AcRequest",
            Msg::AcApprove { .. } => "AcApprove",
            Msg::AcDeny { .. } => "AcDeny",
            Msg::AcConfirm { .. } => "AcConfirm",
            Msg::AcConfirmResp { .. } => "AcConfirmResp",
            Msg::UpdateRead { .. } => "UpdateRead",
            Msg::UpdateReadResp { .. } => "UpdateReadResp",
            Msg::NewHistory(_) => "RB:NewHistory",
            Msg::UpdateComplete(m) => m.descriptor(),
        }
    }

    fn digest(&self) -> Digest {
        crate::encoding::sha256(&self.encode())
    }
}

/// Certificate summary used in trace details.
pub fn ac_cert_digest(cert: &AcCertificate) -> String {
    hex::encode(cert.digest())
}

/// Short hex prefix of a digest for traces.
pub fn short(d: &Digest) -> String {
    hex::encode(&d[..8])
}

pub fn config_ids(c: &Configuration) -> Vec<String> {
    c.replicas().iter().map(ProcessId::to_string).collect()
}
