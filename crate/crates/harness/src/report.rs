use std::fmt;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    /// Nothing in the trace the property talks about.
    Vacuous,
    Fail {
        step: u64,
        msg: String,
    },
}

impl Verdict {
    pub fn ok(&self) -> bool {
        !matches!(self, Verdict::Fail { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InvariantResult {
    pub name: &'static str,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub events: u64,
    pub messages_sent: u64,
    pub deliveries: u64,
    /// Distinct configurations read during state transfer.
    pub configs_accessed: u64,
    pub installs: u64,
    pub restarts: u64,
    pub sign_refusals: u64,
    pub operations: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub label: String,
    pub seed: u64,
    /// `quiescent` or `cap`.
    pub end: String,
    pub invariants: Vec<InvariantResult>,
    pub metrics: Metrics,
    pub trace_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.verdict.ok())
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.invariants.iter().find(|i| i.name == name).map(|i| &i.verdict)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantResult> {
        self.invariants.iter().filter(|i| !i.verdict.ok())
    }

    pub fn liveness(&self) -> bool {
        self.verdict("liveness").is_none_or(Verdict::ok)
    }

    /// The verdicts alone, for comparing a live run with an offline check.
    pub fn verdicts(&self) -> Vec<(&'static str, Verdict)> {
        self.invariants.iter().map(|i| (i.name, i.verdict.clone())).collect()
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} seed={} end={} {}",
            self.label,
            self.seed,
            self.end,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for i in &self.invariants {
            match &i.verdict {
                Verdict::Pass => writeln!(f, "  {:<28} pass", i.name)?,
                Verdict::Vacuous => writeln!(f, "  {:<28} pass (vacuous)", i.name)?,
                Verdict::Fail { step, msg } => writeln!(f, "  {:<28} FAIL at step {step}: {msg}", i.name)?,
            }
        }
        let m = &self.metrics;
        writeln!(
            f,
            "  metrics: events={} sent={} delivered={} ops={} configs-accessed={} installs={} restarts={} sign-refusals={}",
            m.events, m.messages_sent, m.deliveries, m.operations, m.configs_accessed, m.installs, m.restarts, m.sign_refusals
        )?;
        write!(f, "  trace: {}", self.trace_hash)?;
        if let Some(p) = &self.trace_path {
            write!(f, " ({p})")?;
        }
        Ok(())
    }
}
