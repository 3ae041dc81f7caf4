// SPDX-License-Identifier: Apache-2.0

//! Explicit-state exploration of one Prover/Auditor pair.
//!
//! Every node holds real session objects; an event is applied to a clone.
//! Tool results may be delivered honestly, forked (the Prover records one
//! result and shows the Auditor another) or with a replayed head signature.
//! States are deduplicated on a digest of both chains, both statuses and the
//! budget counters, and each BFS layer is expanded with [`par::map`].

use std::collections::HashSet;
use std::fmt;

use crate::auditor::{boot_seeded, AuditorOutput, AuditorSession};
use crate::corpus::{CallKind, Corpus, ToolResult};
use crate::crypto::{digest, Digest256, KeyPair, Signature};
use crate::messages::{
    EndOfAudit, Endpoint, IntegrityChecks, SessionStatus, SessionTicket, SignedQuestion, TransportError, WireMessage,
};
use crate::par;
use crate::prover::{start_session_with, ProverOptions, ProverSession, ToolServer};
use crate::transcript::chain_verify;

use super::fixtures::{write_files, INJECTION_MARKER};
use super::scenario::{rewrite_tool_result, FIXED_TIME};
use super::{Identities, ProverLink};

const FILES: [&str; 2] = ["a.txt", "b.md"];
const QUESTION: &str = "Does the file 'a.txt' contain 'launch'?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Delivery {
    Honest,
    Fork,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    Ask,
    Read { file: usize, delivery: Delivery },
    Conclude(bool),
    End,
}

impl Event {
    fn is_honest(self) -> bool {
        !matches!(self, Event::Read { delivery, .. } if delivery != Delivery::Honest)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Ask => f.write_str("ask"),
            Event::Read { file, delivery } => {
                let d = match delivery {
                    Delivery::Honest => "honest",
                    Delivery::Fork => "fork",
                    Delivery::Replay => "replay",
                };
                write!(f, "read({},{d})", FILES[*file])
            }
            Event::Conclude(v) => write!(f, "conclude({v})"),
            Event::End => f.write_str("end"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    Safety,
    DeadlockFreedom,
    Liveness,
    VerdictConsistency,
}

impl Property {
    pub fn as_str(self) -> &'static str {
        match self {
            Property::Safety => "safety",
            Property::DeadlockFreedom => "deadlock_freedom",
            Property::Liveness => "liveness",
            Property::VerdictConsistency => "verdict_consistency",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub property: Property,
    pub trace: Vec<Event>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let trace: Vec<String> = self.trace.iter().map(Event::to_string).collect();
        write!(f, "{}: {} [{}]", self.property.as_str(), self.detail, trace.join(" "))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExploreOptions {
    pub checks: IntegrityChecks,
    pub mode: par::Mode,
    pub k_max: u32,
    pub n_queries: u32,
    /// Restrict reads to honest delivery.
    pub honest_only: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            checks: IntegrityChecks::Enforced,
            mode: par::Mode::Auto,
            k_max: 2,
            n_queries: 2,
            honest_only: false,
        }
    }
}

impl ExploreOptions {
    /// Both parties with their integrity checks switched off. Exploration
    /// must find violations; if it does not, the checker is blind.
    pub fn self_test() -> Self {
        Self {
            checks: IntegrityChecks::Disabled,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExploreReport {
    pub depth: u32,
    pub states: usize,
    pub transitions: usize,
    pub completed: usize,
    pub aborted: usize,
    pub violations: Vec<Violation>,
}

impl ExploreReport {
    pub fn count(&self, p: Property) -> usize {
        self.violations.iter().filter(|v| v.property == p).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "depth {}\nstates {}\ntransitions {}\ncompleted {}\naborted {}\n",
            self.depth, self.states, self.transitions, self.completed, self.aborted
        );
        for p in [
            Property::Safety,
            Property::DeadlockFreedom,
            Property::Liveness,
            Property::VerdictConsistency,
        ] {
            out.push_str(&format!("{} violations {}\n", p.as_str(), self.count(p)));
        }
        for v in self.violations.iter().take(10) {
            out.push_str(&format!("  {v}\n"));
        }
        out
    }
}

/// Shared, immutable context for one exploration.
struct World {
    verifier: KeyPair,
    nonce: [u8; 32],
    ticket: SessionTicket,
    corpus_digest: Digest256,
    corpus: Corpus,
    k_max: u32,
    n_queries: u32,
    events: Vec<Event>,
}

#[derive(Clone)]
struct Node {
    prover: ProverSession,
    auditor: AuditorSession,
    output: Option<AuditorOutput>,
    trace: Vec<Event>,
    honest: bool,
}

struct NotFound;

impl ToolServer for NotFound {
    fn serve(&self, call: &crate::corpus::ToolCall) -> ToolResult {
        ToolResult::error(call.kind, "not_found")
    }
}

struct Delivering<'a> {
    prover: &'a mut ProverSession,
    delivery: Delivery,
    genuine: &'a Corpus,
}

impl Endpoint for Delivering<'_> {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        match self.delivery {
            Delivery::Honest => Ok(self.prover.handle_line(line)),
            Delivery::Fork => {
                let Ok(WireMessage::ToolCall(c)) = WireMessage::from_line(line) else {
                    return Ok(self.prover.handle_line(line));
                };
                let reply = self.prover.handle_line_with(line, Some(&NotFound));
                let genuine = self.genuine.serve(&c.call);
                Ok(rewrite_tool_result(&reply, |r| r.result = genuine))
            }
            Delivery::Replay => {
                // the Prover's own signature from the first entry of its chain
                let stale: Option<Signature> = self
                    .prover
                    .chain()
                    .and_then(|c| c.entries.first())
                    .map(|e| e.prover_head_sig);
                let reply = self.prover.handle_line(line);
                Ok(match stale {
                    Some(s) => rewrite_tool_result(&reply, |r| r.head_signature = s),
                    None => reply,
                })
            }
        }
    }
}

fn is_terminal(s: &SessionStatus) -> bool {
    matches!(s, SessionStatus::Complete | SessionStatus::Aborted(_))
}

impl Node {
    fn key(&self) -> Digest256 {
        let snap = |c: Option<&crate::transcript::ChainState>| c.map(|c| (c.head.to_hex(), c.len()));
        digest(
            format!(
                "{:?}|{:?}|{:?}|{:?}|{:?}|{}|{}|{:?}",
                snap(self.prover.chain()),
                self.prover.status(),
                snap(self.auditor.chain()),
                self.auditor.status(),
                self.auditor.budgets(),
                self.auditor.has_pending_question(),
                self.honest,
                self.output.as_ref().map(|o| o.final_record.head.to_hex()),
            )
            .as_bytes(),
        )
    }

    fn enabled(&self, world: &World) -> Vec<Event> {
        if self.auditor.status() != &SessionStatus::Serving {
            return Vec::new();
        }
        let b = self.auditor.budgets();
        let pending = self.auditor.has_pending_question();
        world
            .events
            .iter()
            .copied()
            .filter(|e| match e {
                Event::Ask => !pending && b.questions_asked < b.k_max,
                Event::Read { .. } => pending && b.tool_calls_this_question < b.n_queries,
                Event::Conclude(_) => pending,
                Event::End => true,
            })
            .collect()
    }

    fn apply(&self, world: &World, event: Event) -> Node {
        let mut next = self.clone();
        next.trace.push(event);
        next.honest &= event.is_honest();
        let a = &mut next.auditor;
        let p = &mut next.prover;
        match event {
            Event::Ask => {
                let count = a.budgets().questions_asked + 1;
                let q = SignedQuestion::sign(&world.verifier, QUESTION, count, &world.nonce);
                let _ = a.begin_question(&q, &mut ProverLink::honest(p));
            }
            Event::Read { file, delivery } => {
                let mut link = Delivering {
                    prover: p,
                    delivery,
                    genuine: &world.corpus,
                };
                let _ = a.issue_tool_call(CallKind::ReadFile, FILES[file], &mut link);
            }
            Event::Conclude(v) => {
                let raw = if v { "true" } else { "false" };
                let _ = a.conclude_question(raw, String::new(), String::new(), &mut ProverLink::honest(p));
            }
            Event::End => {
                let end = EndOfAudit::sign(&world.verifier, a.budgets().questions_asked, &world.nonce);
                next.output = a.finalize(&end, &mut ProverLink::honest(p)).ok();
            }
        }
        next
    }

    fn violation(&self, property: Property, detail: impl Into<String>) -> Violation {
        Violation {
            property,
            trace: self.trace.clone(),
            detail: detail.into(),
        }
    }

    /// What a completed session must guarantee: both parties hold the same
    /// countersigned history, and it records everything the Auditor read
    /// and every head it attested to.
    fn check_safety(&self, world: &World) -> Option<Violation> {
        if self.auditor.status() != &SessionStatus::Complete {
            return None;
        }
        let bad = |d: &str| Some(self.violation(Property::Safety, d));
        let (Some(out), Some(record), Some(chain)) = (&self.output, self.prover.final_record(), self.prover.chain())
        else {
            return bad("auditor complete without a prover final record");
        };
        let ppk = self.prover.public_key();
        let apk = self.auditor.public_key();
        if self.prover.status() != &SessionStatus::Complete {
            return bad("prover not complete");
        }
        if &out.final_record != record || out.log.final_head != record.head {
            return bad("final records differ");
        }
        if !record.verify(&ppk, &apk) {
            return bad("final record signatures");
        }
        let report = chain_verify(
            &world.corpus_digest,
            &world.ticket,
            &chain.entries,
            &record.head,
            &ppk,
            &apk,
        );
        if !report.valid {
            return bad("prover chain does not verify");
        }
        let read: Vec<Digest256> = chain
            .entries
            .iter()
            .filter(|e| e.call.kind == CallKind::ReadFile)
            .filter_map(|e| e.result.file_digest)
            .collect();
        if out.ingested.iter().any(|i| !read.contains(&i.digest)) {
            return bad("ingested file missing from prover chain");
        }
        let mut heads = vec![chain.genesis];
        heads.extend(chain.entries.iter().map(|e| e.head_after));
        if out.attestations.iter().any(|a| !heads.contains(&a.receipt.head)) {
            return bad("attested head not on prover chain");
        }
        None
    }
}

type Expansion = (Vec<Node>, Vec<Violation>);

fn expand(world: &World, node: &Node) -> Expansion {
    let mut violations = Vec::new();
    violations.extend(node.check_safety(world));
    let events = node.enabled(world);
    let succ: Vec<(Event, Node)> = events.iter().map(|&e| (e, node.apply(world, e))).collect();

    if !is_terminal(node.auditor.status()) {
        let key = node.key();
        if succ.iter().all(|(_, n)| n.key() == key) {
            violations.push(node.violation(Property::DeadlockFreedom, "no enabled event changes the state"));
        }
    }
    for (e, n) in &succ {
        if !node.honest || !e.is_honest() {
            continue;
        }
        if let SessionStatus::Aborted(c) = n.auditor.status() {
            violations.push(n.violation(Property::Liveness, format!("honest history aborted: {c}")));
        } else if *e == Event::End && n.auditor.status() != &SessionStatus::Complete {
            violations.push(n.violation(Property::Liveness, "honest end did not complete"));
        }
    }
    let concluded: Vec<&Node> = succ
        .iter()
        .filter(|(e, _)| matches!(e, Event::Conclude(_)))
        .map(|(_, n)| n)
        .collect();
    if let [t, f] = concluded[..] {
        let ok = |n: &Node| n.auditor.status() == &SessionStatus::Serving;
        if ok(t) != ok(f) {
            violations.push(t.violation(Property::VerdictConsistency, "one verdict aborts, the other does not"));
        }
        for (n, want) in [(t, "true"), (f, "false")] {
            if !ok(n) {
                continue;
            }
            let heads = (n.prover.chain().map(|c| c.head), n.auditor.chain().map(|c| c.head));
            let attested = n.auditor.attestations().last().map(|a| a.receipt.verdict.as_str());
            if heads.0 != heads.1 || attested != Some(want) {
                violations.push(n.violation(Property::VerdictConsistency, "committed verdict chains disagree"));
            }
        }
    }
    (succ.into_iter().map(|(_, n)| n).collect(), violations)
}

fn initial(opts: &ExploreOptions) -> (World, Node, tempfile::TempDir) {
    let ids = Identities::from_seed(0);
    let dir = tempfile::tempdir().expect("temp dir");
    write_files(
        dir.path(),
        &[
            (FILES[0], b"release plan: launch on friday\n".as_slice()),
            (FILES[1], format!("# notes\n{INJECTION_MARKER}\n").as_bytes()),
        ],
    )
    .expect("fixture");
    let (mut prover, ticket, manifest) = start_session_with(
        ids.prover.clone(),
        dir.path(),
        &ProverOptions {
            k_max: opts.k_max,
            n_queries: opts.n_queries,
            trust: Some(ids.trust()),
            nonce_seed: Some(0),
            fixed_time: Some(FIXED_TIME.into()),
            checks: opts.checks,
            ..ProverOptions::default()
        },
    )
    .expect("fixture corpus");
    let mut config = ids.auditor_config();
    config.checks = opts.checks;
    let (mut auditor, _) = boot_seeded(config, &ids.auditor_seed);
    auditor
        .handshake(&mut ProverLink::honest(&mut prover))
        .expect("honest handshake");
    let token = prover.issue_token(ids.verifier.public_key()).expect("token");
    auditor.register_verifier(&token).expect("register");

    let deliveries: &[Delivery] = if opts.honest_only {
        &[Delivery::Honest]
    } else {
        &[Delivery::Honest, Delivery::Fork, Delivery::Replay]
    };
    let mut events = vec![Event::Ask];
    for file in 0..FILES.len() {
        events.extend(deliveries.iter().map(|&delivery| Event::Read { file, delivery }));
    }
    events.extend([Event::Conclude(true), Event::Conclude(false), Event::End]);
    let world = World {
        verifier: ids.verifier.clone(),
        nonce: ticket.nonce,
        corpus: prover.corpus().clone(),
        corpus_digest: manifest.corpus_digest,
        ticket,
        k_max: opts.k_max,
        n_queries: opts.n_queries,
        events,
    };
    let node = Node {
        prover,
        auditor,
        output: None,
        trace: Vec::new(),
        honest: true,
    };
    (world, node, dir)
}

/// Breadth-first exploration of every event sequence up to `depth`.
pub fn explore_states(depth: u32, opts: &ExploreOptions) -> ExploreReport {
    let (world, root, _dir) = initial(opts);
    debug_assert!(world.k_max >= 1 && world.n_queries >= 1);
    let mut seen = HashSet::new();
    seen.insert(root.key());
    let mut frontier = vec![root];
    let mut report = ExploreReport {
        depth,
        states: 1,
        ..ExploreReport::default()
    };
    for level in 0..=depth {
        let expansions = par::map(opts.mode, &frontier, |n| expand(&world, n));
        for n in &frontier {
            match n.auditor.status() {
                SessionStatus::Complete => report.completed += 1,
                SessionStatus::Aborted(_) => report.aborted += 1,
                _ => {}
            }
        }
        let mut next = Vec::new();
        for (succ, violations) in expansions {
            report.violations.extend(violations);
            if level == depth {
                continue;
            }
            report.transitions += succ.len();
            for n in succ {
                if seen.insert(n.key()) {
                    next.push(n);
                }
            }
        }
        report.states = seen.len();
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enforced_checks_hold() {
        let r = explore_states(8, &ExploreOptions::default());
        assert!(r.violations.is_empty(), "{}", r.to_text());
        assert!(r.completed > 0 && r.aborted > 0);
    }

    #[test]
    fn disabled_checks_are_caught() {
        let r = explore_states(8, &ExploreOptions::self_test());
        assert!(r.count(Property::Safety) > 0, "{}", r.to_text());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let seq = explore_states(
            6,
            &ExploreOptions {
                mode: par::Mode::Sequential,
                ..ExploreOptions::default()
            },
        );
        let par = explore_states(6, &ExploreOptions::default());
        assert_eq!((seq.states, seq.transitions), (par.states, par.transitions));
    }
}
