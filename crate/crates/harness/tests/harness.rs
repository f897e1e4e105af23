use std::fs;
use std::path::PathBuf;
use std::process::Command;

use byzreconf::cluster::ClusterBuilder;
use byzreconf::dbla::assemble_certificate;
use byzreconf::lattice::LatticeValue;
use byzreconf::protocol::{HistoryCert, InputCert, InputValue, ObjectId};
use byzreconf::simnet::{decode_trace, EventKind, ScenarioEvent, TraceError};
use byzreconf_harness::checker::check;
use byzreconf_harness::report::Verdict;
use byzreconf_harness::runner::{self, RunOutput};
use byzreconf_harness::scenario::{Scenario, ScenarioError};
use byzreconf_harness::{attacks, sweep};
use serde_json::json;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::parse(&fs::read_to_string(scenario_dir().join(name)).unwrap()).unwrap()
}

fn failed(out: &RunOutput, events: &[ScenarioEvent], inv: &str) -> bool {
    matches!(check(&out.header, events).verdict(inv), Some(Verdict::Fail { .. }))
}

#[test]
fn shipped_scenarios_pass() {
    let mut seen = 0;
    for entry in fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        let scn = Scenario::parse(&fs::read_to_string(&path).unwrap()).unwrap();
        let summary = sweep::sweep_scenario(&scn, 0..5);
        assert!(summary.ok(), "{}: {summary}", path.display());
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn incomparable_outputs_are_flagged() {
    let out = runner::run(&load("two-concurrent-proposes.scn"), 3).unwrap();
    assert!(out.report.passed());
    let mut events = out.events.clone();
    let ret = events.iter_mut().find(|e| e.kind == EventKind::ClientReturn && e.descriptor == "Proposed").unwrap();
    let d = ret.detail.as_mut().unwrap();
    d["value"] = json!([99]);
    d["inputs"] = json!([[99]]);
    assert!(failed(&out, &events, "bla-comparability") || failed(&out, &events, "bla-inclusion"));
    assert!(failed(&out, &events, "bla-validity"));
}

#[test]
fn failed_audit_and_lost_return_are_flagged() {
    let out = runner::run(&load("two-concurrent-proposes.scn"), 4).unwrap();
    let mut events = out.events.clone();
    let audit = events.iter_mut().find(|e| e.descriptor == "Audit").unwrap();
    audit.detail = Some(json!({ "verified": false }));
    assert!(failed(&out, &events, "bla-verifiability"));

    let mut events = out.events.clone();
    events.retain(|e| e.kind != EventKind::ClientReturn);
    assert!(failed(&out, &events, "liveness"));
}

#[test]
fn stale_read_is_flagged() {
    let out = runner::run(&load("maxreg-authority.scn"), 2).unwrap();
    assert!(out.report.passed());
    let mut events = out.events.clone();
    let last_read =
        events.iter_mut().filter(|e| e.kind == EventKind::ClientReturn && e.descriptor == "ReadValue").last().unwrap();
    last_read.detail.as_mut().unwrap()["value"] = json!(0);
    assert!(failed(&out, &events, "mr-atomicity"));
    last_read_value(&mut events, 12345);
    assert!(failed(&out, &events, "mr-validity"));
}

fn last_read_value(events: &mut [ScenarioEvent], v: u64) {
    let e = events.iter_mut().filter(|e| e.descriptor == "ReadValue").last().unwrap();
    e.detail.as_mut().unwrap()["value"] = json!(v);
}

#[test]
fn installing_without_key_updates_is_flagged() {
    let out = runner::run(&load("reconfig.scn"), 1).unwrap();
    assert_eq!(out.report.verdict("key-update"), Some(&Verdict::Pass));
    let events: Vec<ScenarioEvent> = out.events.iter().filter(|e| e.descriptor != "KeyUpdate").cloned().collect();
    assert!(failed(&out, &events, "key-update"));
}

#[test]
fn tampered_trace_is_rejected() {
    let out = runner::run(&load("two-concurrent-proposes.scn"), 0).unwrap();
    let text = out.encode();
    let (h, ev) = decode_trace(&text).unwrap();
    assert_eq!(check(&h, &ev).verdicts(), out.report.verdicts());
    let tampered = text.replacen("\"Propose\"", "\"Proposx\"", 1);
    assert!(matches!(decode_trace(&tampered), Err(TraceError::ChainMismatch(_))));
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(3);
    assert!(decode_trace(&lines.join("\n")).is_err());
}

#[test]
fn availability_is_validated() {
    let text =
        "scenario 1\nname bad\nobject dbla\nreplicas r1 r2 r3 r4\nclients c1\nat 0 corrupt r1 silent\nat 0 halt r2\n";
    match Scenario::parse(text).unwrap().validate() {
        Err(ScenarioError::Invalid(errs)) => assert!(errs.iter().any(|e| e.contains("faulty")), "{errs:?}"),
        other => panic!("expected an availability error, got {other:?}"),
    }
}

#[test]
fn control_attacks_pass() {
    for name in attacks::ATTACKS {
        for object in ["dbla", "maxreg"] {
            let out = attacks::run(name, object, true, 5).unwrap();
            assert!(out.report.passed(), "{}", out.report);
        }
    }
    assert!(attacks::run("nope", "dbla", false, 0).is_err());
    assert!(attacks::run("slow_reader", "access", false, 0).is_err());
}

#[test]
fn old_configuration_certificate_verifies_before_keys_move() {
    // the forgery of the stale-replica attack is only refused because the
    // keys moved; built earlier, the same certificate is valid
    let b = ClusterBuilder::new(1, 4, 1).reconfigurable(4);
    let reg = b.registry();
    let mut sim = b.build().unwrap();
    let signers: Vec<_> = reg.genesis.replicas().into_iter().collect();
    let values = [InputValue::new(LatticeValue::singleton(9), InputCert::Unchecked)].into_iter().collect();
    let cert = assemble_certificate(
        sim.crypto_mut(),
        ObjectId::Lattice,
        values,
        reg.genesis_history(),
        HistoryCert::Genesis,
        &signers,
    );
    assert!(reg.verify_output_value(sim.crypto(), ObjectId::Lattice, &LatticeValue::singleton(9), &cert));
}

#[test]
fn generated_scenarios_round_trip_through_text() {
    for kind in sweep::GENERATORS {
        for seed in 0..20 {
            let scn = sweep::generate(kind, seed).unwrap();
            assert_eq!(Scenario::parse(&scn.to_text()).unwrap(), scn, "{kind} {seed}");
        }
    }
}

#[test]
fn cli_run_check_replay() {
    let bin = env!("CARGO_BIN_EXE_byzreconf");
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let scn = scenario_dir().join("reconfig.scn");
    let status = Command::new(bin)
        .args(["run", "--scenario", scn.to_str().unwrap(), "--seed", "2", "--trace", trace.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stdout));
    for sub in ["check", "replay"] {
        let o = Command::new(bin).args([sub, "--trace", trace.to_str().unwrap()]).output().unwrap();
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stdout));
    }
    let text = fs::read_to_string(&trace).unwrap().replacen("\"Deliver\"", "\"Upcall\"", 1);
    fs::write(&trace, text).unwrap();
    let o = Command::new(bin).args(["check", "--trace", trace.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
