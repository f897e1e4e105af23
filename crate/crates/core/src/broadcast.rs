//! Reliable broadcast to all processes and uniform reliable broadcast within
//! one configuration.
//!
//! RB is epidemic: every process forwards each message the first time it
//! sees it, so a message delivered by one correct process reaches all of
//! them even if the origin stops. URB is an echo broadcast: the origin sends
//! to the replicas of `C`, each replica signs an echo for the first message
//! it receives from that origin, and a replica delivers once it holds echoes
//! from a quorum of `C`. On delivery it forwards the echo certificate, so the
//! others deliver even if it then turns Byzantine.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::encoding::{Canonical, Digest, Encoder};
use crate::fscrypto::PlainSignature;
use crate::lattice::{Configuration, ProcessId};
use crate::protocol::SignedTag;
use crate::simnet::Context;

pub trait BroadcastPayload: Clone {
    const DESCRIPTOR: &'static str;
    fn payload_digest(&self) -> Digest;
}

impl BroadcastPayload for crate::messages::NewHistory {
    const DESCRIPTOR: &'static str = "NewHistory";
    fn payload_digest(&self) -> Digest {
        self.digest()
    }
}

impl BroadcastPayload for crate::messages::UpdateComplete {
    const DESCRIPTOR: &'static str = "UpdateComplete";
    fn payload_digest(&self) -> Digest {
        crate::encoding::sha256(b"UpdateComplete")
    }
}

fn message_id<P: BroadcastPayload>(origin: &ProcessId, payload: &P, config: Option<&Configuration>) -> Digest {
    let mut e = Encoder::new();
    e.bytes(origin.as_str().as_bytes()).bytes(P::DESCRIPTOR.as_bytes()).raw(&payload.payload_digest());
    if let Some(c) = config {
        e.raw(&c.digest());
    }
    e.digest()
}

#[derive(Clone, Debug)]
pub struct RbMessage<P> {
    pub origin: ProcessId,
    pub payload: Arc<P>,
    id: Digest,
}

impl<P: BroadcastPayload> RbMessage<P> {
    pub fn id(&self) -> Digest {
        self.id
    }
}

/// Dedup state of reliable broadcast at one process.
#[derive(Debug, Default)]
pub struct ReliableBroadcast {
    seen: HashSet<Digest>,
}

impl ReliableBroadcast {
    /// Starts a broadcast. The caller sends the message to everyone and
    /// delivers it locally.
    pub fn broadcast<P: BroadcastPayload>(&mut self, origin: &ProcessId, payload: P) -> RbMessage<P> {
        let id = message_id(origin, &payload, None);
        self.seen.insert(id);
        RbMessage { origin: origin.clone(), payload: Arc::new(payload), id }
    }

    /// True the first time a message is seen: the caller then delivers it and
    /// forwards it to everyone.
    pub fn receive<P: BroadcastPayload>(&mut self, msg: &RbMessage<P>) -> bool {
        // recompute rather than trust the id carried on the wire
        let id = message_id(&msg.origin, msg.payload.as_ref(), None);
        id == msg.id && self.seen.insert(id)
    }
}

pub type EchoMap = BTreeMap<ProcessId, PlainSignature>;

#[derive(Clone, Debug)]
pub enum UrbMessage<P> {
    Send { origin: ProcessId, config: Configuration, payload: P },
    Echo { origin: ProcessId, config: Configuration, payload: P, sig: PlainSignature },
    Cert { origin: ProcessId, config: Configuration, payload: P, echoes: Arc<EchoMap> },
}

impl<P: BroadcastPayload> UrbMessage<P> {
    fn parts(&self) -> (&ProcessId, &Configuration, &P) {
        match self {
            UrbMessage::Send { origin, config, payload }
            | UrbMessage::Echo { origin, config, payload, .. }
            | UrbMessage::Cert { origin, config, payload, .. } => (origin, config, payload),
        }
    }

    pub fn origin(&self) -> &ProcessId {
        self.parts().0
    }

    pub fn config(&self) -> &Configuration {
        self.parts().1
    }

    pub fn id(&self) -> Digest {
        let (o, c, p) = self.parts();
        message_id(o, p, Some(c))
    }

    pub fn descriptor(&self) -> &'static str {
        match self {
            UrbMessage::Send { .. } => "URB:Send",
            UrbMessage::Echo { .. } => "URB:Echo",
            UrbMessage::Cert { .. } => "URB:Cert",
        }
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.bytes(self.descriptor().as_bytes()).raw(&self.id());
        match self {
            UrbMessage::Send { .. } => {}
            UrbMessage::Echo { sig, .. } => {
                e.bytes(&sig.encode());
            }
            UrbMessage::Cert { echoes, .. } => {
                for s in echoes.values() {
                    e.bytes(&s.encode());
                }
            }
        }
        e.digest()
    }
}

fn echo_bytes(id: &Digest) -> Vec<u8> {
    let mut e = Encoder::with_tag(SignedTag::UrbEcho as u8);
    e.raw(id);
    e.finish()
}

#[derive(Debug)]
struct Instance {
    echoed: bool,
    echoes: EchoMap,
    delivered: bool,
}

/// A message delivered by uniform reliable broadcast.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery<P> {
    pub origin: ProcessId,
    pub config: Configuration,
    pub payload: P,
}

/// URB state at one replica.
#[derive(Debug, Default)]
pub struct UniformBroadcast {
    instances: BTreeMap<Digest, Instance>,
}

impl UniformBroadcast {
    /// Starts a broadcast of `payload` among `replicas(config)`.
    pub fn broadcast<P, M, O>(
        &mut self,
        ctx: &mut Context<'_, M, O>,
        wrap: impl Fn(UrbMessage<P>) -> M,
        config: &Configuration,
        payload: P,
    ) where
        P: BroadcastPayload,
        M: Clone,
    {
        let msg = UrbMessage::Send { origin: ctx.me().clone(), config: config.clone(), payload };
        ctx.send_all(config.replicas().iter(), &wrap(msg));
    }

    /// Handles one URB message; returns a delivery at most once per message.
    pub fn on_message<P, M, O>(
        &mut self,
        ctx: &mut Context<'_, M, O>,
        wrap: impl Fn(UrbMessage<P>) -> M,
        from: &ProcessId,
        msg: UrbMessage<P>,
    ) -> Option<Delivery<P>>
    where
        P: BroadcastPayload,
        M: Clone,
    {
        let id = msg.id();
        let (origin, config, payload) = {
            let (o, c, p) = msg.parts();
            (o.clone(), c.clone(), p.clone())
        };
        let me = ctx.me().clone();
        if !config.is_member(&me) || !config.is_member(&origin) {
            return None;
        }
        let replicas = config.replicas();
        let inst = self.instances.entry(id).or_insert_with(|| Instance {
            echoed: false,
            echoes: EchoMap::new(),
            delivered: false,
        });
        match msg {
            UrbMessage::Send { .. } => {
                if from != &origin || inst.echoed {
                    return None;
                }
                inst.echoed = true;
                let sig = ctx.plain_sign(&echo_bytes(&id));
                let echo = UrbMessage::Echo { origin, config: config.clone(), payload, sig };
                ctx.send_all(replicas.iter(), &wrap(echo));
                None
            }
            UrbMessage::Echo { sig, .. } => {
                if &sig.signer != from
                    || !replicas.contains(from)
                    || !ctx.crypto().plain_verify(&echo_bytes(&id), from, &sig)
                {
                    return None;
                }
                inst.echoes.insert(from.clone(), sig);
                if inst.delivered || !config.is_quorum(inst.echoes.keys()) {
                    return None;
                }
                inst.delivered = true;
                let cert = UrbMessage::Cert {
                    origin: origin.clone(),
                    config: config.clone(),
                    payload: payload.clone(),
                    echoes: Arc::new(inst.echoes.clone()),
                };
                ctx.send_all(replicas.iter().filter(|p| **p != me), &wrap(cert));
                Some(Delivery { origin, config, payload })
            }
            UrbMessage::Cert { echoes, .. } => {
                if inst.delivered {
                    return None;
                }
                let valid = echoes.iter().all(|(p, s)| {
                    &s.signer == p && replicas.contains(p) && ctx.crypto().plain_verify(&echo_bytes(&id), p, s)
                });
                if !valid || !config.is_quorum(echoes.keys()) {
                    return None;
                }
                inst.delivered = true;
                let cert = UrbMessage::Cert {
                    origin: origin.clone(),
                    config: config.clone(),
                    payload: payload.clone(),
                    echoes,
                };
                ctx.send_all(replicas.iter().filter(|p| **p != me), &wrap(cert));
                Some(Delivery { origin, config, payload })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fscrypto::{Backend, Crypto};
    use crate::simnet::{Automaton, Silent, Simulation, WireMessage};
    use serde_json::Value;

    #[derive(Clone, Debug)]
    struct Note(u64);

    impl BroadcastPayload for Note {
        const DESCRIPTOR: &'static str = "Note";
        fn payload_digest(&self) -> Digest {
            crate::encoding::sha256(&self.0.to_be_bytes())
        }
    }

    #[derive(Clone, Debug)]
    enum Wire {
        Rb(RbMessage<Note>),
        Urb(UrbMessage<Note>),
    }

    impl WireMessage for Wire {
        fn descriptor(&self) -> &'static str {
            match self {
                Wire::Rb(_) => "RB:Note",
                Wire::Urb(m) => m.descriptor(),
            }
        }
        fn digest(&self) -> Digest {
            match self {
                Wire::Rb(m) => m.id(),
                Wire::Urb(m) => m.digest(),
            }
        }
    }

    enum Op {
        Rb(u64),
        Urb(u64, Configuration),
    }

    #[derive(Default)]
    struct Peer {
        rb: ReliableBroadcast,
        urb: UniformBroadcast,
        delivered: Vec<(ProcessId, u64)>,
    }

    impl Automaton for Peer {
        type Msg = Wire;
        type Op = Op;
        type Output = ();

        fn on_message(&mut self, from: &ProcessId, msg: Wire, ctx: &mut Context<'_, Wire, ()>) {
            match msg {
                Wire::Rb(m) => {
                    if self.rb.receive(&m) {
                        let others: Vec<ProcessId> = ctx.roster().iter().filter(|p| *p != ctx.me()).cloned().collect();
                        ctx.send_all(others.iter(), &Wire::Rb(m.clone()));
                        self.delivered.push((m.origin.clone(), m.payload.0));
                    }
                }
                Wire::Urb(m) => {
                    if let Some(d) = self.urb.on_message(ctx, Wire::Urb, from, m) {
                        self.delivered.push((d.origin, d.payload.0));
                    }
                }
            }
        }

        fn on_invoke(&mut self, op: Op, ctx: &mut Context<'_, Wire, ()>) -> Result<(), String> {
            match op {
                Op::Rb(v) => {
                    let me = ctx.me().clone();
                    let m = self.rb.broadcast(&me, Note(v));
                    let others: Vec<ProcessId> = ctx.roster().iter().filter(|p| **p != me).cloned().collect();
                    ctx.send_all(others.iter(), &Wire::Rb(m));
                    self.delivered.push((me, v));
                }
                Op::Urb(v, c) => self.urb.broadcast(ctx, Wire::Urb, &c, Note(v)),
            }
            Ok(())
        }

        fn describe_op(_: &Op) -> (&'static str, Value) {
            ("Broadcast", Value::Null)
        }
        fn describe_output(_: &()) -> (&'static str, Value) {
            ("Done", Value::Null)
        }
    }

    fn sim(seed: u64, n: usize) -> (Simulation<Peer>, Vec<ProcessId>) {
        let mut s = Simulation::new(seed, Crypto::new(Backend::TrustedOracle, seed));
        let ids: Vec<ProcessId> = (1..=n).map(|i| ProcessId::new(format!("r{i}"))).collect();
        for id in &ids {
            s.spawn(id.clone(), Peer::default()).unwrap();
        }
        (s, ids)
    }

    fn count(s: &Simulation<Peer>, id: &ProcessId, v: u64) -> usize {
        s.node(id).unwrap().delivered.iter().filter(|(_, x)| *x == v).count()
    }

    #[test]
    fn rb_all_correct_deliver_once() {
        for seed in 0..10 {
            let (mut s, ids) = sim(seed, 5);
            s.invoke(&ids[0], Op::Rb(7)).unwrap();
            s.run(10_000);
            for id in &ids {
                assert_eq!(count(&s, id, 7), 1);
            }
        }
    }

    #[test]
    fn rb_survives_origin_halting() {
        for seed in 0..20 {
            let (mut s, ids) = sim(seed, 5);
            s.invoke(&ids[0], Op::Rb(9)).unwrap();
            let first = ids[1].clone();
            let dest = first.clone();
            // everything except the copy to r2 is lost when the origin halts
            let h = s.hold(move |e| e.from.as_str() == "r1" && e.to != dest);
            assert!(s.run_until(10_000, |s| count(s, &first, 9) == 1));
            s.halt(&ids[0]).unwrap();
            s.release(h);
            s.run(10_000);
            for id in &ids[1..] {
                assert_eq!(count(&s, id, 9), 1, "seed {seed}: {id} missed the message");
            }
        }
    }

    #[test]
    fn urb_all_correct_deliver() {
        let (mut s, ids) = sim(3, 4);
        let c = Configuration::genesis(ids.iter().cloned());
        s.invoke(&ids[2], Op::Urb(4, c)).unwrap();
        s.run(10_000);
        for id in &ids {
            assert_eq!(s.node(id).unwrap().delivered, vec![(ids[2].clone(), 4)]);
        }
    }

    #[test]
    fn urb_uniform_when_deliverer_turns_byzantine() {
        for seed in 0..20 {
            let (mut s, ids) = sim(seed, 4);
            let c = Configuration::genesis(ids.iter().cloned());
            s.invoke(&ids[0], Op::Urb(5, c)).unwrap();
            // r2 is the only one to receive echoes until it has delivered
            let h = s.hold(|e| matches!(&e.msg, Wire::Urb(UrbMessage::Echo { .. })) && e.to.as_str() != "r2");
            let r2 = ids[1].clone();
            assert!(s.run_until(10_000, |s| count(s, &r2, 5) == 1));
            s.corrupt(&ids[1], Box::new(Silent)).unwrap();
            s.halt(&ids[0]).unwrap();
            s.release(h);
            s.run(10_000);
            for id in &ids[2..] {
                assert_eq!(count(&s, id, 5), 1, "seed {seed}");
            }
        }
    }

    #[test]
    fn urb_no_creation_from_byzantine_echoes() {
        // a single replica echoing a message the origin never sent cannot reach a quorum
        let (mut s, ids) = sim(1, 4);
        let c = Configuration::genesis(ids.iter().cloned());
        s.corrupt(&ids[3], Box::new(Silent)).unwrap();
        let origin = ids[0].clone();
        s.act_as(&ids[3], |_, ctx| {
            let id = message_id(&origin, &Note(66), Some(&c));
            let sig = ctx.plain_sign(&echo_bytes(&id));
            let m = UrbMessage::Echo { origin: origin.clone(), config: c.clone(), payload: Note(66), sig };
            let all = c.replicas();
            ctx.send_all(all.iter(), &Wire::Urb(m));
        })
        .unwrap();
        s.run(10_000);
        for id in &ids[..3] {
            assert_eq!(count(&s, id, 66), 0);
        }
    }
}
