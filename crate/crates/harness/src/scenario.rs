//! Scenario files.
//!
//! A scenario is a line-oriented text file. `#` starts a comment. The first
//! non-empty line must be `scenario 1` (the format version). Directives:
//!
//! ```text
//! scenario 1
//! name two-concurrent-proposes
//! object dbla                 # dbla | maxreg | reconfig | access
//! access quorum               # sanity | quorum | admin (enables the access object)
//! crypto oracle               # oracle | keychain
//! replicas r1 r2 r3 r4        # the initial configuration C0
//! spares r5 r6                # replicas that may be added later
//! clients c1 c2
//! admins a1 a2 a3 a4
//! inputs signed c1 c2         # default: all clients; or: inputs accept-all
//! config-inputs accept-all    # or: config-inputs admin
//! conflict 1 2                # access-control values 1 and 2 conflict
//! deny r1 3                   # r1 refuses to approve value 3
//! config A +r5 -r1            # declared input configuration: C0 plus these updates
//! seeds 0..20
//! max-steps 200000
//! at 0 c1 propose 1           # trigger step, client, operation
//! at 0 c1 write 7
//! at 0 c2 read
//! at 0 c1 request 1
//! at 0 c1 reconfig A
//! at 0 history A              # the history authority extends its history with A
//! at 50 corrupt r2 silent     # silent | honest
//! at 80 halt r3
//! ```
//!
//! Trigger steps count message deliveries. An operation whose client is busy
//! waits until the client's previous operation returns. If the network goes
//! quiet before a trigger step the next trigger fires immediately.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::str::FromStr;

use byzreconf::access_control::AcBackend;
use byzreconf::fscrypto::Backend;
use byzreconf::lattice::{fault_bound, Configuration, ProcessId, Update};
use byzreconf::simnet::DEFAULT_STEP_CAP;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Dbla,
    MaxReg,
    Reconfig,
    Access,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Dbla => "dbla",
            ObjectKind::MaxReg => "maxreg",
            ObjectKind::Reconfig => "reconfig",
            ObjectKind::Access => "access",
        }
    }
}

impl FromStr for ObjectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dbla" => Ok(ObjectKind::Dbla),
            "maxreg" => Ok(ObjectKind::MaxReg),
            "reconfig" => Ok(ObjectKind::Reconfig),
            "access" => Ok(ObjectKind::Access),
            other => Err(format!("unknown object `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Silent,
    Honest,
}

impl Behavior {
    pub fn name(self) -> &'static str {
        match self {
            Behavior::Silent => "silent",
            Behavior::Honest => "honest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Propose { client: ProcessId, value: u64 },
    Write { client: ProcessId, value: u64 },
    Read { client: ProcessId },
    Request { client: ProcessId, value: u64 },
    Reconfig { client: ProcessId, config: String },
    History { config: String },
    Corrupt { id: ProcessId, behavior: Behavior },
    Halt { id: ProcessId },
}

impl Action {
    pub fn client(&self) -> Option<&ProcessId> {
        match self {
            Action::Propose { client, .. }
            | Action::Write { client, .. }
            | Action::Read { client }
            | Action::Request { client, .. }
            | Action::Reconfig { client, .. } => Some(client),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheduled {
    pub at: u64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputMode {
    AcceptAll,
    Signed(Vec<ProcessId>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub object: ObjectKind,
    pub access: Option<AcBackend>,
    pub crypto: Backend,
    pub replicas: Vec<ProcessId>,
    pub spares: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub admins: Vec<ProcessId>,
    pub inputs: InputMode,
    pub admin_configs: bool,
    pub conflicts: Vec<(u64, u64)>,
    pub denials: Vec<(ProcessId, u64)>,
    /// Declared input configurations, as updates on top of C0.
    pub configs: BTreeMap<String, Vec<Update>>,
    pub seeds: Range<u64>,
    pub max_steps: u64,
    pub schedule: Vec<Scheduled>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("scenario is invalid:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

fn ids(words: &[&str]) -> Vec<ProcessId> {
    words.iter().map(|w| ProcessId::new(*w)).collect()
}

fn parse_range(s: &str) -> Option<Range<u64>> {
    let (a, b) = s.split_once("..")?;
    let (a, b) = (a.parse().ok()?, b.parse().ok()?);
    (a <= b).then_some(a..b)
}

impl Scenario {
    pub fn empty(name: &str, object: ObjectKind) -> Self {
        Scenario {
            name: name.to_string(),
            object,
            access: None,
            crypto: Backend::TrustedOracle,
            replicas: Vec::new(),
            spares: Vec::new(),
            clients: Vec::new(),
            admins: Vec::new(),
            inputs: InputMode::AcceptAll,
            admin_configs: false,
            conflicts: Vec::new(),
            denials: Vec::new(),
            configs: BTreeMap::new(),
            seeds: 0..1,
            max_steps: DEFAULT_STEP_CAP,
            schedule: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut scn = Scenario::empty("unnamed", ObjectKind::Dbla);
        let mut versioned = false;
        let mut object_set = false;
        let mut inputs_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ScenarioError::Syntax { line, msg };
            let words: Vec<&str> = content.split_whitespace().collect();
            if !versioned {
                if words != ["scenario", "1"] {
                    return Err(err(format!("expected `scenario {FORMAT_VERSION}` header")));
                }
                versioned = true;
                continue;
            }
            let args = &words[1..];
            let one = |what: &str| -> Result<&str, ScenarioError> {
                match args {
                    [a] => Ok(a),
                    _ => Err(ScenarioError::Syntax { line, msg: format!("`{what}` takes one argument") }),
                }
            };
            match words[0] {
                "name" => scn.name = args.join(" "),
                "object" => {
                    scn.object = one("object")?.parse().map_err(err)?;
                    object_set = true;
                }
                "access" => {
                    scn.access = Some(
                        one("access")?
                            .parse()
                            .map_err(|e: byzreconf::access_control::UnknownBackend| err(e.to_string()))?,
                    )
                }
                "crypto" => scn.crypto = one("crypto")?.parse().map_err(err)?,
                "replicas" => scn.replicas = ids(args),
                "spares" => scn.spares = ids(args),
                "clients" => scn.clients = ids(args),
                "admins" => scn.admins = ids(args),
                "inputs" => {
                    inputs_set = true;
                    scn.inputs = match args {
                        ["accept-all"] => InputMode::AcceptAll,
                        ["signed", rest @ ..] => InputMode::Signed(ids(rest)),
                        _ => return Err(err("inputs: `accept-all` or `signed <clients>`".into())),
                    }
                }
                "config-inputs" => {
                    scn.admin_configs = match one("config-inputs")? {
                        "accept-all" => false,
                        "admin" => true,
                        other => return Err(err(format!("config-inputs: unknown mode `{other}`"))),
                    }
                }
                "conflict" => match args {
                    [a, b] => scn.conflicts.push((
                        a.parse().map_err(|_| err("conflict: values are integers".into()))?,
                        b.parse().map_err(|_| err("conflict: values are integers".into()))?,
                    )),
                    _ => return Err(err("conflict takes two values".into())),
                },
                "deny" => match args {
                    [r, v] => scn
                        .denials
                        .push((ProcessId::new(*r), v.parse().map_err(|_| err("deny: value is an integer".into()))?)),
                    _ => return Err(err("deny takes a replica and a value".into())),
                },
                "config" => {
                    let [name, updates @ ..] = args else { return Err(err("config needs a name".into())) };
                    let updates = updates
                        .iter()
                        .map(|u| Update::parse(u).ok_or_else(|| err(format!("bad update `{u}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    if updates.is_empty() {
                        return Err(err(format!("config {name} has no updates")));
                    }
                    if scn.configs.insert(name.to_string(), updates).is_some() {
                        return Err(err(format!("config {name} declared twice")));
                    }
                }
                "seeds" => scn.seeds = parse_range(one("seeds")?).ok_or_else(|| err("seeds: expected A..B".into()))?,
                "max-steps" => {
                    scn.max_steps =
                        one("max-steps")?.parse().map_err(|_| err("max-steps: expected an integer".into()))?
                }
                "at" => scn.schedule.push(parse_at(args).map_err(err)?),
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        if !versioned {
            return Err(ScenarioError::Syntax { line: 0, msg: "empty scenario".into() });
        }
        if !object_set {
            return Err(ScenarioError::Syntax { line: 0, msg: "missing `object`".into() });
        }
        if scn.object == ObjectKind::Access && scn.access.is_none() {
            scn.access = Some(AcBackend::Quorum);
        }
        if !inputs_set {
            scn.inputs = InputMode::Signed(scn.clients.clone());
        }
        Ok(scn)
    }

    /// Canonical text form; parses back to an equal scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[ProcessId]| v.iter().map(ProcessId::to_string).collect::<Vec<_>>().join(" ");
        writeln!(s, "scenario {FORMAT_VERSION}").unwrap();
        writeln!(s, "name {}", self.name).unwrap();
        writeln!(s, "object {}", self.object.name()).unwrap();
        if let Some(b) = self.access {
            writeln!(s, "access {}", b.name()).unwrap();
        }
        writeln!(s, "crypto {}", self.crypto.name()).unwrap();
        writeln!(s, "replicas {}", list(&self.replicas)).unwrap();
        if !self.spares.is_empty() {
            writeln!(s, "spares {}", list(&self.spares)).unwrap();
        }
        writeln!(s, "clients {}", list(&self.clients)).unwrap();
        if !self.admins.is_empty() {
            writeln!(s, "admins {}", list(&self.admins)).unwrap();
        }
        match &self.inputs {
            InputMode::AcceptAll => writeln!(s, "inputs accept-all").unwrap(),
            InputMode::Signed(c) => writeln!(s, "inputs signed {}", list(c)).unwrap(),
        }
        writeln!(s, "config-inputs {}", if self.admin_configs { "admin" } else { "accept-all" }).unwrap();
        for (a, b) in &self.conflicts {
            writeln!(s, "conflict {a} {b}").unwrap();
        }
        for (r, v) in &self.denials {
            writeln!(s, "deny {r} {v}").unwrap();
        }
        for (name, updates) in &self.configs {
            let u: Vec<String> = updates.iter().map(Update::to_string).collect();
            writeln!(s, "config {name} {}", u.join(" ")).unwrap();
        }
        writeln!(s, "seeds {}..{}", self.seeds.start, self.seeds.end).unwrap();
        writeln!(s, "max-steps {}", self.max_steps).unwrap();
        for op in &self.schedule {
            writeln!(s, "{op}").unwrap();
        }
        s
    }

    pub fn genesis(&self) -> Configuration {
        Configuration::genesis(self.replicas.iter().cloned())
    }

    /// The configuration a declared name stands for.
    pub fn config(&self, name: &str) -> Option<Configuration> {
        self.configs.get(name).map(|u| self.genesis().with(u.iter().cloned()))
    }

    /// Configuration names used by `reconfig` and `history` actions.
    pub fn scheduled_configs(&self) -> BTreeSet<&str> {
        self.schedule
            .iter()
            .filter_map(|s| match &s.action {
                Action::Reconfig { config, .. } | Action::History { config } => Some(config.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Processes that are ever corrupted or halted.
    pub fn faulty(&self) -> BTreeSet<ProcessId> {
        self.schedule
            .iter()
            .filter_map(|s| match &s.action {
                Action::Corrupt { id, .. } | Action::Halt { id } => Some(id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Checks the static preconditions; lists every violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        let all: Vec<&ProcessId> =
            self.replicas.iter().chain(&self.spares).chain(&self.clients).chain(&self.admins).collect();
        let unique: BTreeSet<&ProcessId> = all.iter().copied().collect();
        if unique.len() != all.len() {
            errs.push("process ids must be unique".to_string());
        }
        if unique.contains(&ProcessId::new(byzreconf::cluster::AUTHORITY)) {
            errs.push(format!("`{}` is reserved for the history authority", byzreconf::cluster::AUTHORITY));
        }
        if self.replicas.is_empty() {
            errs.push("no replicas".into());
        }
        let replica_pool: BTreeSet<&ProcessId> = self.replicas.iter().chain(&self.spares).collect();
        let clients: BTreeSet<&ProcessId> = self.clients.iter().collect();
        let genesis = self.genesis();
        for (name, updates) in &self.configs {
            for u in updates {
                if !replica_pool.contains(&u.replica) {
                    errs.push(format!("config {name}: {} is not a declared replica or spare", u.replica));
                }
            }
            if let Err(e) = genesis.with(updates.iter().cloned()).check_no_readd(&genesis) {
                errs.push(format!("config {name}: {e}"));
            }
        }
        if self.admin_configs && self.admins.is_empty() {
            errs.push("config-inputs admin needs admins".into());
        }
        if self.access == Some(AcBackend::Admin) && self.admins.is_empty() {
            errs.push("access admin needs admins".into());
        }
        let signers: Option<BTreeSet<&ProcessId>> = match &self.inputs {
            InputMode::AcceptAll => None,
            InputMode::Signed(c) => Some(c.iter().collect()),
        };
        for (r, _) in &self.denials {
            if !replica_pool.contains(r) && !self.admins.contains(r) {
                errs.push(format!("deny: {r} is not a replica or admin"));
            }
        }
        for s in &self.schedule {
            if let Some(c) = s.action.client() {
                if !clients.contains(c) {
                    errs.push(format!("{s}: {c} is not a declared client"));
                }
            }
            let object = self.object;
            let unsupported = |what: &str| format!("{s}: `{what}` is not available for object {}", object.name());
            match &s.action {
                Action::Propose { client, .. } | Action::Write { client, .. } => {
                    if matches!(s.action, Action::Propose { .. })
                        && !matches!(object, ObjectKind::Dbla | ObjectKind::Reconfig)
                    {
                        errs.push(unsupported("propose"));
                    }
                    if matches!(s.action, Action::Write { .. })
                        && !matches!(object, ObjectKind::MaxReg | ObjectKind::Reconfig)
                    {
                        errs.push(unsupported("write"));
                    }
                    if let Some(sig) = &signers {
                        if !sig.contains(client) {
                            errs.push(format!("{s}: {client} is not an authorised input signer"));
                        }
                    }
                }
                Action::Read { .. } if !matches!(object, ObjectKind::MaxReg | ObjectKind::Reconfig) => {
                    errs.push(unsupported("read"))
                }
                Action::Request { .. } if self.access.is_none() => errs.push(format!("{s}: no access object")),
                Action::Reconfig { config, .. } => {
                    if object != ObjectKind::Reconfig {
                        errs.push(unsupported("reconfig"));
                    }
                    if !self.configs.contains_key(config) {
                        errs.push(format!("{s}: config {config} is not declared"));
                    }
                }
                Action::History { config } => {
                    if object == ObjectKind::Reconfig {
                        errs.push(unsupported("history"));
                    }
                    if !self.configs.contains_key(config) {
                        errs.push(format!("{s}: config {config} is not declared"));
                    }
                }
                Action::Corrupt { id, .. } | Action::Halt { id } if !unique.contains(id) => {
                    errs.push(format!("{s}: {id} is not a declared process"));
                }
                _ => {}
            }
        }
        let mut seen_fault = BTreeSet::new();
        for s in &self.schedule {
            if let Action::Corrupt { id, .. } | Action::Halt { id } = &s.action {
                if !seen_fault.insert((id.clone(), matches!(s.action, Action::Corrupt { .. }))) {
                    errs.push(format!("{s}: repeated status change"));
                }
            }
        }
        errs.extend(self.availability_violations());
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errs))
        }
    }

    /// Every configuration a run may reach (C0 joined with any subset of the
    /// scheduled configurations) must keep at most `b` faulty replicas.
    /// Authority histories must be totally ordered.
    fn availability_violations(&self) -> Vec<String> {
        let names: Vec<&str> = self.scheduled_configs().into_iter().collect();
        let mut errs = Vec::new();
        if names.len() > 12 {
            return vec!["too many scheduled configurations to validate (max 12)".into()];
        }
        // undeclared names are reported elsewhere
        let (names, configs): (Vec<&str>, Vec<Configuration>) =
            names.into_iter().filter_map(|n| self.config(n).map(|c| (n, c))).unzip();
        if self.object != ObjectKind::Reconfig {
            for (i, a) in configs.iter().enumerate() {
                for (j, b) in configs.iter().enumerate().skip(i + 1) {
                    if !a.comparable(b) {
                        errs.push(format!("history configs {} and {} are incomparable", names[i], names[j]));
                    }
                }
            }
        }
        let faulty = self.faulty();
        let genesis = self.genesis();
        let mut candidates = BTreeSet::new();
        for mask in 0u32..(1 << configs.len()) {
            let mut c = genesis.clone();
            for (i, cfg) in configs.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    c = c.join(cfg);
                }
            }
            candidates.insert(c);
        }
        for c in candidates {
            let replicas = c.replicas();
            let bad = replicas.iter().filter(|r| faulty.contains(*r)).count();
            if replicas.is_empty() {
                errs.push(format!("configuration {c} has no replicas"));
            } else if bad > fault_bound(replicas.len()) {
                errs.push(format!(
                    "configuration {c} has {bad} faulty replicas, more than b = {}",
                    fault_bound(replicas.len())
                ));
            }
        }
        errs
    }
}

fn parse_at(args: &[&str]) -> Result<Scheduled, String> {
    let [at, rest @ ..] = args else { return Err("at: missing step".into()) };
    let at: u64 = at.parse().map_err(|_| format!("at: bad step `{at}`"))?;
    let int = |s: &str| s.parse::<u64>().map_err(|_| format!("expected an integer, got `{s}`"));
    let action = match rest {
        ["history", config] => Action::History { config: config.to_string() },
        ["corrupt", id, behavior] => Action::Corrupt {
            id: ProcessId::new(*id),
            behavior: match *behavior {
                "silent" => Behavior::Silent,
                "honest" => Behavior::Honest,
                other => return Err(format!("unknown behavior `{other}`")),
            },
        },
        ["halt", id] => Action::Halt { id: ProcessId::new(*id) },
        [client, "propose", v] => Action::Propose { client: ProcessId::new(*client), value: int(v)? },
        [client, "write", v] => Action::Write { client: ProcessId::new(*client), value: int(v)? },
        [client, "read"] => Action::Read { client: ProcessId::new(*client) },
        [client, "request", v] => Action::Request { client: ProcessId::new(*client), value: int(v)? },
        [client, "reconfig", c] => Action::Reconfig { client: ProcessId::new(*client), config: c.to_string() },
        _ => return Err(format!("cannot parse action `{}`", rest.join(" "))),
    };
    Ok(Scheduled { at, action })
}

impl fmt::Display for Scheduled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at {} ", self.at)?;
        match &self.action {
            Action::Propose { client, value } => write!(f, "{client} propose {value}"),
            Action::Write { client, value } => write!(f, "{client} write {value}"),
            Action::Read { client } => write!(f, "{client} read"),
            Action::Request { client, value } => write!(f, "{client} request {value}"),
            Action::Reconfig { client, config } => write!(f, "{client} reconfig {config}"),
            Action::History { config } => write!(f, "history {config}"),
            Action::Corrupt { id, behavior } => write!(f, "corrupt {id} {}", behavior.name()),
            Action::Halt { id } => write!(f, "halt {id}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "scenario 1\nname two\nobject dbla\nreplicas r1 r2 r3 r4\nclients c1 c2\nat 0 c1 propose 1\nat 0 c2 propose 2 # concurrent\n";

    #[test]
    fn parses_and_round_trips() {
        let s = Scenario::parse(TWO).unwrap();
        assert_eq!(s.schedule.len(), 2);
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_missing_version() {
        assert!(matches!(Scenario::parse("object dbla\n"), Err(ScenarioError::Syntax { line: 1, .. })));
    }

    #[test]
    fn validation_lists_all_problems() {
        let text = "scenario 1\nobject dbla\nreplicas r1 r2 r3 r4\nclients c1\nat 0 c9 propose 1\nat 0 c1 write 3\nat 0 c1 reconfig X\nat 1 halt r1\nat 1 halt r2\n";
        let Err(ScenarioError::Invalid(errs)) = Scenario::parse(text).unwrap().validate() else { panic!() };
        assert!(errs.iter().any(|e| e.contains("c9")));
        assert!(errs.iter().any(|e| e.contains("`write`")));
        assert!(errs.iter().any(|e| e.contains("config X")));
        assert!(errs.iter().any(|e| e.contains("faulty")));
    }

    #[test]
    fn undeclared_replica_in_config_is_rejected() {
        let text = "scenario 1\nobject reconfig\nreplicas r1 r2 r3 r4\nclients c1\nconfig A +r9\nat 0 c1 reconfig A\n";
        let Err(ScenarioError::Invalid(errs)) = Scenario::parse(text).unwrap().validate() else { panic!() };
        assert!(errs.iter().any(|e| e.contains("config A")), "{errs:?}");
    }
}
