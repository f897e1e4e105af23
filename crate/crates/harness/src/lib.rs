//! Scenario runner, scripted attacks, seed sweeps and the offline trace
//! checker for `byzreconf`.

pub mod attacks;
pub mod checker;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod sweep;
