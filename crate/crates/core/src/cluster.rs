//! Builds a simulation of replicas, clients and administrators sharing one
//! registry.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::access_control::{AcBackend, Admin};
use crate::client::Client;
use crate::fscrypto::{Backend, Crypto};
use crate::lattice::{Configuration, ProcessId};
use crate::node::Node;
use crate::protocol::{ConfigPolicy, HistorySource, InputPolicy, ObjectId, Registry};
use crate::replica::Replica;
use crate::simnet::{SimError, Simulation};

pub type Sim = Simulation<Node>;

#[derive(Clone, Debug)]
pub struct ClusterBuilder {
    pub seed: u64,
    pub backend: Backend,
    pub genesis: Vec<ProcessId>,
    /// Replicas outside `C0` that may be added later.
    pub spares: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub admins: Vec<ProcessId>,
    pub objects: Vec<ObjectId>,
    pub history_source: HistorySource,
    pub inputs: InputPolicy,
    pub config_inputs: ConfigPolicy,
    pub access: Option<AcBackend>,
    pub conflicts: BTreeSet<(u64, u64)>,
    pub denials: BTreeSet<(ProcessId, u64)>,
}

/// Name of the history authority process of standalone objects.
pub const AUTHORITY: &str = "auth";

pub fn ids(prefix: &str, range: std::ops::RangeInclusive<usize>) -> Vec<ProcessId> {
    range.map(|i| ProcessId::new(format!("{prefix}{i}"))).collect()
}

impl ClusterBuilder {
    /// `n` replicas `r1..rn`, `clients` clients `c1..`, one lattice object,
    /// histories from an external authority.
    pub fn new(seed: u64, n: usize, clients: usize) -> Self {
        ClusterBuilder {
            seed,
            backend: Backend::TrustedOracle,
            genesis: ids("r", 1..=n),
            spares: Vec::new(),
            clients: ids("c", 1..=clients),
            admins: Vec::new(),
            objects: vec![ObjectId::Lattice],
            history_source: HistorySource::Authority(ProcessId::new(AUTHORITY)),
            inputs: InputPolicy::AcceptAll,
            config_inputs: ConfigPolicy::AcceptAll,
            access: None,
            conflicts: BTreeSet::new(),
            denials: BTreeSet::new(),
        }
    }

    /// Hosts configuration and history agreement; histories come from them.
    pub fn reconfigurable(mut self, spares: usize) -> Self {
        let n = self.genesis.len();
        self.spares = ids("r", n + 1..=n + spares);
        self.history_source = HistorySource::HistLa;
        for o in [ObjectId::ConfLa, ObjectId::HistLa] {
            if !self.objects.contains(&o) {
                self.objects.push(o);
            }
        }
        self
    }

    pub fn objects(mut self, objects: &[ObjectId]) -> Self {
        self.objects = objects.to_vec();
        if self.history_source == HistorySource::HistLa {
            self.objects.extend([ObjectId::ConfLa, ObjectId::HistLa]);
            self.objects.sort();
            self.objects.dedup();
        }
        self
    }

    pub fn registry(&self) -> Registry {
        let mut reg = Registry::new(Configuration::genesis(self.genesis.iter().cloned()), self.history_source.clone());
        reg.inputs = self.inputs.clone();
        reg.config_inputs = self.config_inputs.clone();
        reg.admins = self.admins.iter().cloned().collect();
        reg.access = self.access;
        reg.conflicts = self.conflicts.clone();
        reg.denials = self.denials.clone();
        reg
    }

    pub fn build(&self) -> Result<Sim, SimError> {
        let reg = Arc::new(self.registry());
        let mut sim = Simulation::new(self.seed, Crypto::new(self.backend, self.seed));
        for r in self.genesis.iter().chain(&self.spares) {
            sim.spawn(r.clone(), Node::Replica(Box::new(Replica::new(r.clone(), reg.clone(), &self.objects))))?;
        }
        for c in &self.clients {
            sim.spawn(c.clone(), Node::Client(Box::new(Client::new(c.clone(), reg.clone()))))?;
        }
        if let HistorySource::Authority(a) = &self.history_source {
            sim.spawn(a.clone(), Node::Client(Box::new(Client::new(a.clone(), reg.clone()))))?;
        }
        for a in &self.admins {
            sim.spawn(a.clone(), Node::Admin(Admin::new(a.clone(), reg.clone())))?;
        }
        Ok(sim)
    }
}
