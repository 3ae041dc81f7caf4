// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aw_core::harness::fixtures::{structural_corpus, structural_plan};

fn aw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aw")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(work: &Path, extra: &str) -> String {
    let corpus = work.join("corpus");
    structural_corpus(&corpus, 5).unwrap();
    let mut text = format!(
        "corpus = {}\noutput = {}\nseed = 5\n{extra}",
        corpus.display(),
        work.join("out").display()
    );
    for (q, _) in structural_plan() {
        text.push_str(&format!("question = {q}\n"));
    }
    let path = work.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_then_verify() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), "");
    let o = aw(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("Q1 true pass"));
    assert!(out.contains("outcome completed"));

    let dir = work.path().join("out");
    let key = dir.join("prover/prover.key");
    let v = aw(&["verify", dir.to_str().unwrap(), "--prover-key", key.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0));
    assert!(stdout(&v).contains("private_proof pass"));

    let transcript = dir.join("transcript.txt");
    let mut bytes = fs::read(&transcript).unwrap();
    bytes[3] = if bytes[3] == b'0' { b'1' } else { b'0' };
    fs::write(&transcript, bytes).unwrap();
    let v = aw(&["verify", dir.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(3));
    let text = stdout(&v);
    assert!(
        text.contains("transcript fail line 1:") || text.contains("transcript fail entry 1:"),
        "{text}"
    );
}

#[test]
fn tcp_run_completes() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), "transport = tcp\n");
    assert_eq!(aw(&["run", "--config", &cfg]).status.code(), Some(0));
}

#[test]
fn scenarios_exit_zero_when_expectation_met() {
    for name in ["honest", "toctou_mutation", "replay"] {
        let o = aw(&["scenario", name, "--seed", "4"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
    }
}

#[test]
fn explore_and_self_test() {
    let o = aw(&["explore", "--depth", "6"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("safety violations 0"));
    let o = aw(&["explore", "--depth", "6", "--self-test"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("self-test caught violations"));
}

#[test]
fn extract_reports_capped_bits() {
    let o = aw(&["extract", "--bits", "64", "--kmax", "8"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("recovered 8"));
}

#[test]
fn usage_errors_exit_four() {
    assert_eq!(aw(&["frobnicate"]).status.code(), Some(4));
    assert_eq!(aw(&["scenario", "no_such_attack"]).status.code(), Some(4));
    assert_eq!(aw(&["run", "--config", "/nonexistent/run.cfg"]).status.code(), Some(4));
    assert_eq!(aw(&["verify", "/nonexistent/dir"]).status.code(), Some(4));
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("bad.cfg");
    fs::write(&cfg, "corpus = /nonexistent/corpus\noutput = /tmp/x\n").unwrap();
    assert_eq!(aw(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(4));
    assert_eq!(aw(&["--help"]).status.code(), Some(0));
}
