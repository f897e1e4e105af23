//! Dynamic Byzantine lattice agreement and the objects built on it.

pub mod access_control;
pub mod broadcast;
pub mod client;
pub mod cluster;
pub mod dbla;
pub mod encoding;
pub mod fscrypto;
pub mod lattice;
pub mod maxreg;
pub mod messages;
pub mod node;
pub mod protocol;
pub mod reconfig;
pub mod replica;
pub mod simnet;
