//! The process automaton run by the simulator: a replica, a client or a
//! static administrator.

use std::sync::Arc;

use serde_json::{json, Value};

use crate::access_control::{AcCertificate, Admin};
use crate::client::Client;
use crate::lattice::{Configuration, History, LatticeValue, ProcessId};
use crate::messages::{short, Msg};
use crate::protocol::{HistoryCert, InputCert, InputValue, ObjectId, OutputCertificate};
use crate::replica::Replica;
use crate::simnet::{Automaton, Context};

pub type Ctx<'a> = Context<'a, Msg, Output>;

/// Client operations.
#[derive(Clone, Debug)]
pub enum Op {
    /// Propose a value; the client certifies it according to the input policy.
    Propose {
        obj: ObjectId,
        value: LatticeValue,
    },
    /// Propose an explicitly certified value.
    ProposeInput {
        obj: ObjectId,
        input: InputValue,
    },
    Write {
        value: u64,
    },
    Read,
    /// Ask the access-control object for a certificate.
    Request {
        value: LatticeValue,
    },
    /// Move the system towards `config`.
    Reconfig {
        config: Configuration,
        cert: InputCert,
    },
    /// Distribute an externally certified history.
    UpdateHistory {
        history: History,
        cert: HistoryCert,
    },
}

#[derive(Clone, Debug)]
pub enum Output {
    Proposed { obj: ObjectId, value: LatticeValue, cert: Arc<OutputCertificate> },
    Written { value: u64 },
    Read { value: u64 },
    Certified { value: LatticeValue, cert: Arc<AcCertificate> },
    Denied { value: LatticeValue },
    Reconfigured { history: History },
    HistoryUpdated { history: History },
}

pub enum Node {
    Replica(Box<Replica>),
    Client(Box<Client>),
    Admin(Admin),
}

impl Node {
    pub fn as_replica(&self) -> Option<&Replica> {
        match self {
            Node::Replica(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_replica_mut(&mut self) -> Option<&mut Replica> {
        match self {
            Node::Replica(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_client(&self) -> Option<&Client> {
        match self {
            Node::Client(c) => Some(c),
            _ => None,
        }
    }

    /// The process's local history, if it keeps one.
    pub fn history(&self) -> Option<&History> {
        match self {
            Node::Replica(r) => Some(r.history()),
            Node::Client(c) => Some(c.history()),
            Node::Admin(_) => None,
        }
    }
}

impl Automaton for Node {
    type Msg = Msg;
    type Op = Op;
    type Output = Output;

    fn on_message(&mut self, from: &ProcessId, msg: Msg, ctx: &mut Ctx<'_>) {
        match self {
            Node::Replica(r) => r.on_message(from, msg, ctx),
            Node::Client(c) => c.on_message(from, msg, ctx),
            Node::Admin(a) => a.on_message(from, msg, ctx),
        }
    }

    fn on_invoke(&mut self, op: Op, ctx: &mut Ctx<'_>) -> Result<(), String> {
        match self {
            Node::Client(c) => c.invoke(op, ctx),
            _ => Err("only clients accept operations".into()),
        }
    }

    fn describe_op(op: &Op) -> (&'static str, Value) {
        match op {
            Op::Propose { obj, value } => ("Propose", json!({ "obj": obj.name(), "value": value_json(value) })),
            Op::ProposeInput { obj, input } => (
                "Propose",
                json!({ "obj": obj.name(), "value": value_json(input.value()), "cert": input.cert().kind() }),
            ),
            Op::Write { value } => ("Write", json!({ "obj": "maxreg", "value": value })),
            Op::Read => ("Read", json!({ "obj": "maxreg" })),
            Op::Request { value } => ("Request", json!({ "obj": "access", "value": value_json(value) })),
            Op::Reconfig { config, cert } => (
                "Reconfig",
                json!({ "config": config.to_string(), "updates": config_json(config), "cert": cert.kind() }),
            ),
            Op::UpdateHistory { history, .. } => ("UpdateHistory", history_json(history)),
        }
    }

    fn describe_output(out: &Output) -> (&'static str, Value) {
        match out {
            Output::Proposed { obj, value, cert } => ("Proposed", output_json(*obj, value, cert)),
            Output::Written { value } => ("Written", json!({ "obj": "maxreg", "value": value })),
            Output::Read { value } => ("ReadValue", json!({ "obj": "maxreg", "value": value })),
            Output::Certified { value, cert } => (
                "Certified",
                json!({ "obj": "access", "value": value_json(value), "cert": short(&cert.digest()), "backend": cert.backend_name() }),
            ),
            Output::Denied { value } => ("Denied", json!({ "obj": "access", "value": value_json(value) })),
            Output::Reconfigured { history } => ("Reconfigured", history_json(history)),
            Output::HistoryUpdated { history } => ("HistoryUpdated", history_json(history)),
        }
    }
}

/// Trace form of a lattice-agreement output and its certificate.
pub fn output_json(obj: ObjectId, value: &LatticeValue, cert: &OutputCertificate) -> Value {
    json!({
        "obj": obj.name(),
        "value": value_json(value),
        "anchor": config_json(cert.anchor()),
        "anchor_height": cert.anchor().height(),
        "inputs": cert.values.iter().map(|v| value_json(v.value())).collect::<Vec<_>>(),
        "propose_acks": cert.propose_acks.keys().map(ProcessId::to_string).collect::<Vec<_>>(),
        "confirm_acks": cert.confirm_acks.keys().map(ProcessId::to_string).collect::<Vec<_>>(),
        "cert": short(&cert.digest()),
    })
}

pub fn config_json(c: &Configuration) -> Value {
    Value::Array(c.updates().iter().map(|u| Value::String(u.to_string())).collect())
}

/// Trace form of one configuration: display string, updates and height.
pub fn config_detail(c: &Configuration) -> Value {
    json!({ "config": c.to_string(), "updates": config_json(c), "height": c.height() })
}

pub fn history_json(h: &History) -> Value {
    json!({
        "history": h.ascending().into_iter().map(config_json).collect::<Vec<_>>(),
        "max": h.max_element().to_string(),
    })
}

pub fn value_json(v: &LatticeValue) -> Value {
    match v {
        LatticeValue::FinSet(s) => json!(s),
        LatticeValue::Config(c) => config_json(c),
        LatticeValue::Hist(h) => Value::Array(h.iter().map(config_json).collect()),
    }
}

/// Inverse of [`value_json`] for a known lattice kind.
pub fn value_from_json(kind: &str, v: &Value) -> Option<LatticeValue> {
    match kind {
        "finset" => Some(LatticeValue::FinSet(v.as_array()?.iter().map(Value::as_u64).collect::<Option<_>>()?)),
        "config" => Some(LatticeValue::Config(config_from_json(v)?)),
        "hist" => Some(LatticeValue::Hist(v.as_array()?.iter().map(config_from_json).collect::<Option<_>>()?)),
        _ => None,
    }
}

pub fn config_from_json(v: &Value) -> Option<Configuration> {
    let updates =
        v.as_array()?.iter().map(|u| crate::lattice::Update::parse(u.as_str()?)).collect::<Option<Vec<_>>>()?;
    Some(Configuration::from_updates(updates))
}
