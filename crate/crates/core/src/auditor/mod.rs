// SPDX-License-Identifier: Apache-2.0

//! The enclave-emulated Auditor.
//!
//! It holds ephemeral keys, attests itself through the emulated hardware root,
//! checks every tool result against the pre-committed manifest, runs a
//! reasoning oracle per question under the session budgets, and emits only
//! filtered verdict tokens and attestations towards the Verifier.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use crate::corpus::{corpus_hash, tokenize, CallKind, CorpusManifest, ToolCall, ToolResult};
use crate::crypto::{digest, Digest256, KeyPair, PublicKey, Role};
use crate::messages::{
    attestation_set_digest, causes, exchange, issue_public_attestation, issue_quote, seal_private_proof, Abort,
    AuditLog, AuditorToken, EnclaveQuote, EndOfAudit, Endpoint, IntegrityChecks, PrivateProof, PublicAttestation,
    QuestionRecord, SessionStatus, SessionTicket, SignedManifest, SignedQuestion, SignedToolCall, SignedToolResult,
    TransportError, Verdict, VerdictAnswer, VerdictReceipt, WireMessage,
};
use crate::transcript::{chain_init, sign_head, verify_head, ChainState, FinalHeadProposal, FinalHeadRecord};

use oracle::{OracleFactory, ReasoningOracle, ToolAccess, ToolRefusal};

pub const DEFAULT_NARRATIVE_CAP: usize = 64 * 1024;

#[derive(Clone)]
pub struct AuditorConfig {
    pub measurement: Digest256,
    /// Emulated hardware root of trust.
    pub hw_keys: KeyPair,
    /// Where the Auditor can be reached; carried in its quotes.
    pub address: String,
    pub narrative_cap: usize,
    /// If set, tickets from any other Prover key are refused.
    pub expected_prover: Option<PublicKey>,
    pub checks: IntegrityChecks,
}

impl AuditorConfig {
    pub fn new(measurement: Digest256, hw_keys: KeyPair) -> Self {
        Self {
            measurement,
            hw_keys,
            address: "in-process".into(),
            narrative_cap: DEFAULT_NARRATIVE_CAP,
            expected_prover: None,
            checks: IntegrityChecks::Enforced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BudgetState {
    pub questions_asked: u32,
    pub tool_calls_this_question: u32,
    pub k_max: u32,
    pub n_queries: u32,
    pub leakage_bits_emitted: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingQuestion {
    text: String,
    count: u32,
}

/// A file the oracle was shown, by the path it asked for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub path: String,
    pub digest: Digest256,
}

/// What the Auditor hands back when the session closes.
#[derive(Debug, Clone)]
pub struct AuditorOutput {
    pub final_record: FinalHeadRecord,
    pub private_proof: PrivateProof,
    pub attestations: Vec<PublicAttestation>,
    /// Plaintext of the sealed log. Exposed to the in-process harness only.
    pub log: AuditLog,
    pub ingested: Vec<Ingested>,
    pub tool_calls_per_question: Vec<u32>,
    pub oracle_time: Duration,
}

#[derive(Clone)]
pub struct AuditorSession {
    keys: Option<KeyPair>,
    public: PublicKey,
    config: AuditorConfig,
    boot_quote: EnclaveQuote,
    session_quote: Option<EnclaveQuote>,
    ticket: Option<SessionTicket>,
    manifest: Option<CorpusManifest>,
    chain: Option<ChainState>,
    budgets: BudgetState,
    seen_search_results: BTreeMap<String, BTreeSet<String>>,
    pending: Option<PendingQuestion>,
    questions: Vec<QuestionRecord>,
    attestations: Vec<PublicAttestation>,
    token: Option<AuditorToken>,
    ingested: Vec<Ingested>,
    tool_calls_per_question: Vec<u32>,
    oracle_time: Duration,
    status: SessionStatus,
    to_verifier: Vec<String>,
}

/// The only four verdicts that leave the enclave. Anything else, including
/// the right word in the wrong case or with trailing text, becomes `error`.
pub fn filter_output(raw: &str) -> Verdict {
    match raw.trim() {
        "true" => Verdict::True,
        "false" => Verdict::False,
        "unsure" => Verdict::Unsure,
        _ => Verdict::Error,
    }
}

fn cap_text(mut s: String, cap: usize) -> String {
    if s.len() > cap {
        let mut end = cap;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}

pub fn boot(config: AuditorConfig) -> (AuditorSession, EnclaveQuote) {
    let keys = KeyPair::generate(None, Role::Auditor).expect("fresh key");
    boot_with_keys(config, keys)
}

/// Deterministic boot for reproducible runs.
pub fn boot_seeded(config: AuditorConfig, seed: &[u8; 32]) -> (AuditorSession, EnclaveQuote) {
    let keys = KeyPair::generate(Some(&seed[..]), Role::Auditor).expect("32-byte seed");
    boot_with_keys(config, keys)
}

fn boot_with_keys(config: AuditorConfig, keys: KeyPair) -> (AuditorSession, EnclaveQuote) {
    let public = keys.public_key();
    let quote = issue_quote(&config.hw_keys, config.measurement, public, None, &config.address);
    let session = AuditorSession {
        keys: Some(keys),
        public,
        config,
        boot_quote: quote.clone(),
        session_quote: None,
        ticket: None,
        manifest: None,
        chain: None,
        budgets: BudgetState::default(),
        seen_search_results: BTreeMap::new(),
        pending: None,
        questions: Vec::new(),
        attestations: Vec::new(),
        token: None,
        ingested: Vec::new(),
        tool_calls_per_question: Vec::new(),
        oracle_time: Duration::ZERO,
        status: SessionStatus::Handshaking,
        to_verifier: Vec::new(),
    };
    (session, quote)
}

/// Outcome of admitting a question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// Over `k_max`: answered `error` without running the oracle.
    Refused,
}

impl AuditorSession {
    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn boot_quote(&self) -> &EnclaveQuote {
        &self.boot_quote
    }

    pub fn session_quote(&self) -> Option<&EnclaveQuote> {
        self.session_quote.as_ref()
    }

    pub fn budgets(&self) -> &BudgetState {
        &self.budgets
    }

    pub fn chain(&self) -> Option<&ChainState> {
        self.chain.as_ref()
    }

    pub fn ingested(&self) -> &[Ingested] {
        &self.ingested
    }

    pub fn attestations(&self) -> &[PublicAttestation] {
        &self.attestations
    }

    pub fn has_pending_question(&self) -> bool {
        self.pending.is_some()
    }

    /// Every line this Auditor has sent towards the Verifier.
    pub fn verifier_outbound(&self) -> &[String] {
        &self.to_verifier
    }

    fn keys(&self) -> &KeyPair {
        self.keys.as_ref().expect("keys live until the session closes")
    }

    fn fail(&mut self, cause: &str) -> Abort {
        if !self.status.is_terminal() {
            self.status = SessionStatus::Aborted(cause.to_string());
        }
        Abort::new(cause)
    }

    fn require_serving(&mut self) -> Result<(), Abort> {
        match &self.status {
            SessionStatus::Serving => Ok(()),
            SessionStatus::Complete | SessionStatus::Aborted(_) => Err(Abort::new(causes::SESSION_CLOSED)),
            _ => Err(self.fail(causes::UNEXPECTED_MESSAGE)),
        }
    }

    pub fn receive_ticket(&mut self, ticket: &SessionTicket) -> Result<EnclaveQuote, Abort> {
        if self.status != SessionStatus::Handshaking || self.ticket.is_some() {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        }
        let known = self.config.expected_prover.is_none_or(|k| k == ticket.prover_public);
        if !known || ticket.check().is_err() {
            return Err(self.fail(causes::BAD_TICKET));
        }
        let quote = issue_quote(
            &self.config.hw_keys,
            self.config.measurement,
            self.public,
            Some(ticket.clone()),
            &self.config.address,
        );
        self.ticket = Some(ticket.clone());
        self.session_quote = Some(quote.clone());
        Ok(quote)
    }

    /// Verifies F_map against its signed corpus hash and seeds the chain.
    pub fn receive_manifest(&mut self, signed: &SignedManifest) -> Result<(), Abort> {
        let Some(ticket) = self.ticket.clone() else {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        };
        if self.status != SessionStatus::Handshaking {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        }
        let m = &signed.manifest;
        let valid = signed.session_nonce == ticket.nonce
            && signed.verify(&ticket.prover_public)
            && m.is_canonically_ordered()
            && corpus_hash(&m.entries) == m.corpus_digest;
        if !valid {
            return Err(self.fail(causes::MANIFEST_INVALID));
        }
        self.chain = Some(chain_init(&m.corpus_digest, &ticket, self.public));
        self.manifest = Some(m.clone());
        self.budgets = BudgetState {
            k_max: ticket.k_max,
            n_queries: ticket.n_queries,
            ..BudgetState::default()
        };
        self.status = SessionStatus::Serving;
        Ok(())
    }

    /// Runs boot quote, ticket, session quote and manifest over `prover`.
    pub fn handshake(&mut self, prover: &mut dyn Endpoint) -> Result<(), Abort> {
        let boot = WireMessage::BootQuote(self.boot_quote.clone());
        let ticket = match self.send(prover, &boot)? {
            WireMessage::Ticket(t) => t,
            other => return Err(self.peer_failure(other)),
        };
        let quote = self.receive_ticket(&ticket)?;
        let manifest = match self.send(prover, &WireMessage::SessionQuote(quote))? {
            WireMessage::Manifest(m) => m,
            other => return Err(self.peer_failure(other)),
        };
        self.receive_manifest(&manifest)
    }

    /// Accepts the Verifier's T_a if it binds this session's quote.
    pub fn register_verifier(&mut self, token: &AuditorToken) -> Result<(), Abort> {
        self.require_serving()?;
        let ticket = self.ticket.as_ref().expect("serving implies ticket");
        let ok = token
            .check(
                &ticket.prover_public,
                &self.config.hw_keys.public_key(),
                &self.config.measurement,
            )
            .is_ok()
            && Some(&token.quote) == self.session_quote.as_ref();
        if !ok || self.token.as_ref().is_some_and(|t| t != token) {
            return Err(self.fail(causes::BAD_TOKEN));
        }
        self.token = Some(token.clone());
        Ok(())
    }

    fn send(&mut self, prover: &mut dyn Endpoint, msg: &WireMessage) -> Result<WireMessage, Abort> {
        match exchange(prover, msg) {
            Ok((reply, _)) => Ok(reply),
            Err(TransportError(_)) => Err(self.fail(causes::TRANSPORT)),
        }
    }

    fn peer_failure(&mut self, reply: WireMessage) -> Abort {
        match reply {
            WireMessage::Abort { cause } => self.fail(&cause),
            _ => self.fail(causes::UNEXPECTED_MESSAGE),
        }
    }

    /// One chained exchange: signs the current head, sends the call, checks
    /// the Prover's head signature. The caller appends after its own checks.
    fn chained_exchange(
        &mut self,
        prover: &mut dyn Endpoint,
        kind: CallKind,
        argument: &str,
    ) -> Result<(SignedToolCall, SignedToolResult), Abort> {
        let chain = self.chain.as_ref().expect("serving implies chain");
        let signed = SignedToolCall {
            call: ToolCall::new(kind, argument, chain.len() + 1),
            head_signature: sign_head(self.keys(), &chain.head),
        };
        let result = match self.send(prover, &WireMessage::ToolCall(signed.clone()))? {
            WireMessage::ToolResult(r) => r,
            other => return Err(self.peer_failure(other)),
        };
        let chain = self.chain.as_ref().expect("serving implies chain");
        if self.config.checks == IntegrityChecks::Enforced
            && !verify_head(&chain.prover_public, &chain.head, &result.head_signature)
        {
            return Err(self.fail(causes::BAD_HEAD_SIGNATURE));
        }
        if result.result.kind != kind {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        }
        Ok((signed, result))
    }

    fn append(&mut self, signed: SignedToolCall, result: SignedToolResult) {
        let chain = self.chain.as_mut().expect("serving implies chain");
        // both head signatures were checked against this head already
        chain.append_unchecked(signed.call, result.result, result.head_signature, signed.head_signature);
    }

    /// Verifies the question and, if within budget, commits it to the chain.
    pub fn begin_question(&mut self, question: &SignedQuestion, prover: &mut dyn Endpoint) -> Result<Admission, Abort> {
        self.require_serving()?;
        if self.pending.is_some() {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        }
        let (Some(token), Some(ticket)) = (&self.token, &self.ticket) else {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        };
        if !question.verify(&token.verifier_public, &ticket.nonce) {
            return Err(self.fail(causes::BAD_QUESTION));
        }
        if self.budgets.questions_asked >= self.budgets.k_max {
            return Ok(Admission::Refused);
        }
        if question.question_count != self.budgets.questions_asked + 1 {
            return Err(self.fail(causes::BAD_QUESTION));
        }
        let (call, result) = self.chained_exchange(prover, CallKind::Question, &question.text)?;
        self.append(call, result);
        self.budgets.questions_asked += 1;
        self.budgets.tool_calls_this_question = 0;
        self.tool_calls_per_question.push(0);
        self.pending = Some(PendingQuestion {
            text: question.text.clone(),
            count: question.question_count,
        });
        Ok(Admission::Admitted)
    }

    /// Issues one tool call for the open question and runs the integrity
    /// checks on its result. Refuses without wire traffic once the
    /// per-question budget is spent.
    pub fn issue_tool_call(
        &mut self,
        kind: CallKind,
        argument: &str,
        prover: &mut dyn Endpoint,
    ) -> Result<ToolResult, ToolRefusal> {
        if self.pending.is_none() || !kind.is_tool() || self.status != SessionStatus::Serving {
            return Err(ToolRefusal::SessionAborted);
        }
        if self.budgets.tool_calls_this_question >= self.budgets.n_queries {
            return Err(ToolRefusal::BudgetExhausted);
        }
        self.budgets.tool_calls_this_question += 1;
        *self.tool_calls_per_question.last_mut().expect("open question") += 1;
        let (call, result) = self
            .chained_exchange(prover, kind, argument)
            .map_err(|_| ToolRefusal::SessionAborted)?;
        if let Err(a) = self.check_result(kind, argument, &result.result) {
            self.fail(&a.cause);
            return Err(ToolRefusal::SessionAborted);
        }
        let out = result.result.clone();
        self.append(call, result);
        Ok(out)
    }

    fn check_result(&mut self, kind: CallKind, argument: &str, r: &ToolResult) -> Result<(), Abort> {
        if !r.is_ok() {
            return Ok(());
        }
        match kind {
            CallKind::ReadFile => {
                let carried = r.file_digest.ok_or(Abort::new(causes::CONTENT_HASH_MISMATCH))?;
                if digest(&r.payload) != carried {
                    return Err(Abort::new(causes::CONTENT_HASH_MISMATCH));
                }
                let manifest = self.manifest.as_ref().expect("serving implies manifest");
                let name = manifest.path_mode.manifest_name(argument);
                let entry = manifest.entry_for(&name).ok_or(Abort::new(causes::UNMANIFESTED_FILE))?;
                if entry.file_digest != carried {
                    return Err(Abort::new(causes::FILE_DIGEST_MISMATCH));
                }
                self.detect_search_omission(argument, &r.payload)?;
                self.ingested.push(Ingested {
                    path: argument.to_string(),
                    digest: carried,
                });
            }
            CallKind::SearchRepository => {
                self.seen_search_results
                    .insert(argument.to_string(), r.path_list().into_iter().collect());
            }
            _ => {}
        }
        Ok(())
    }

    /// A file that matches an earlier query must have been among its results.
    pub fn detect_search_omission(&self, path: &str, content: &[u8]) -> Result<(), Abort> {
        let tokens = tokenize(&String::from_utf8_lossy(content));
        for (query, listed) in &self.seen_search_results {
            let matches = tokenize(query).iter().any(|t| tokens.contains(t));
            if matches && !listed.contains(path) {
                return Err(Abort::new(causes::SEARCH_OMISSION));
            }
        }
        Ok(())
    }

    /// Filters the raw verdict, commits it, obtains σ_P and issues Γ_pub.
    pub fn conclude_question(
        &mut self,
        raw_verdict: &str,
        narrative: String,
        summary: String,
        prover: &mut dyn Endpoint,
    ) -> Result<VerdictAnswer, Abort> {
        self.require_serving()?;
        let Some(pending) = self.pending.clone() else {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        };
        let verdict = filter_output(raw_verdict);
        let head = self.chain.as_ref().expect("serving implies chain").head;
        let arg = format!("{} {}", verdict.as_str(), pending.count);
        let (call, result) = self.chained_exchange(prover, CallKind::Verdict, &arg)?;
        let receipt = self.check_receipt(&result.result, head, verdict, pending.count)?;
        self.append(call, result);
        let attestation = issue_public_attestation(self.keys(), &receipt, &pending.text);
        self.attestations.push(attestation.clone());
        self.budgets.leakage_bits_emitted += 2;
        self.questions.push(QuestionRecord {
            question_text: pending.text,
            verdict,
            narrative: cap_text(narrative, self.config.narrative_cap),
            summary: cap_text(summary, self.config.narrative_cap),
        });
        self.pending = None;
        Ok(VerdictAnswer {
            verdict,
            attestation: Some(attestation),
        })
    }

    fn check_receipt(
        &mut self,
        r: &ToolResult,
        head: Digest256,
        verdict: Verdict,
        count: u32,
    ) -> Result<VerdictReceipt, Abort> {
        let ticket = self.ticket.as_ref().expect("serving implies ticket");
        let ok = VerdictReceipt::decode(&r.payload).ok().filter(|rec| {
            rec.check(
                &ticket.prover_public,
                &self.config.hw_keys.public_key(),
                &self.config.measurement,
            )
            .is_ok()
                && (rec.head == head || self.config.checks == IntegrityChecks::Disabled)
                && rec.verdict == verdict
                && rec.question_count == count
                && Some(&rec.token) == self.token.as_ref()
        });
        ok.ok_or_else(|| self.fail(causes::BAD_RECEIPT))
    }

    /// Full question lifecycle with a fresh oracle.
    pub fn answer_question(
        &mut self,
        question: &SignedQuestion,
        oracle: &mut dyn ReasoningOracle,
        prover: &mut dyn Endpoint,
    ) -> Result<VerdictAnswer, Abort> {
        if self.begin_question(question, prover)? == Admission::Refused {
            return Ok(VerdictAnswer {
                verdict: Verdict::Error,
                attestation: None,
            });
        }
        let started = Instant::now();
        let conclusion = {
            let mut tools = Tools {
                auditor: self,
                prover: &mut *prover,
            };
            oracle.answer(&question.text, &mut tools)
        };
        self.oracle_time += started.elapsed();
        if let SessionStatus::Aborted(cause) = &self.status {
            return Err(Abort::new(cause));
        }
        self.conclude_question(&conclusion.verdict, conclusion.narrative, conclusion.summary, prover)
    }

    /// Final handshake, audit log and Γ_priv. Drops the ephemeral keys and
    /// session state once the artifacts exist.
    pub fn finalize(&mut self, end: &EndOfAudit, prover: &mut dyn Endpoint) -> Result<AuditorOutput, Abort> {
        self.require_serving()?;
        let (Some(token), Some(ticket)) = (self.token.clone(), self.ticket.clone()) else {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        };
        if !end.verify(&token.verifier_public, &ticket.nonce) {
            return Err(self.fail(causes::BAD_QUESTION));
        }
        self.status = SessionStatus::Finalizing;
        if let Some(open) = self.pending.take() {
            self.questions.push(QuestionRecord {
                question_text: open.text,
                verdict: Verdict::Error,
                narrative: String::new(),
                summary: "session ended while the question was open".into(),
            });
        }
        let (head, length) = self.chain.as_ref().expect("serving implies chain").snapshot();
        let proposal = FinalHeadProposal::sign(self.keys(), head, length);
        let record = match self.send(prover, &WireMessage::FinalHandshake(proposal))? {
            WireMessage::FinalHead(r) => r,
            other => return Err(self.peer_failure(other)),
        };
        if self.config.checks == IntegrityChecks::Enforced
            && (record.head != head || record.length != length || !record.verify(&ticket.prover_public, &self.public))
        {
            return Err(self.fail(causes::CHAIN_DIVERGENCE));
        }
        let chain = self.chain.take().expect("serving implies chain");
        let log = AuditLog {
            genesis: chain.genesis,
            questions: std::mem::take(&mut self.questions),
            entries: chain.entries,
            final_head: chain.head,
        };
        let binding = attestation_set_digest(&self.attestations);
        let proof = seal_private_proof(&ticket.prover_public, &log, &binding)
            .map_err(|_| self.fail(causes::CHAIN_DIVERGENCE))?;
        if !matches!(
            self.send(prover, &WireMessage::PrivateProof(proof.clone()))?,
            WireMessage::Ack
        ) {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        }
        self.keys = None;
        self.manifest = None;
        self.seen_search_results.clear();
        self.status = SessionStatus::Complete;
        Ok(AuditorOutput {
            final_record: record,
            private_proof: proof,
            attestations: self.attestations.clone(),
            log,
            ingested: std::mem::take(&mut self.ingested),
            tool_calls_per_question: self.tool_calls_per_question.clone(),
            oracle_time: self.oracle_time,
        })
    }

    /// Verifier-facing dispatcher. Every reply is recorded in
    /// [`Self::verifier_outbound`]. A local abort is forwarded to the Prover.
    pub fn handle_verifier_line(
        &mut self,
        line: &str,
        oracles: &dyn OracleFactory,
        prover: &mut dyn Endpoint,
        output: &mut Option<AuditorOutput>,
    ) -> String {
        let was_live = !self.status.is_terminal();
        let reply = match WireMessage::from_line(line) {
            Ok(WireMessage::Token(t)) => self.register_verifier(&t).map(|_| WireMessage::Ack),
            Ok(WireMessage::Question(q)) => {
                let mut oracle = oracles.fresh();
                self.answer_question(&q, oracle.as_mut(), prover)
                    .map(WireMessage::Answer)
            }
            Ok(WireMessage::EndOfAudit(e)) => self.finalize(&e, prover).map(|out| {
                let proof = out.private_proof.clone();
                *output = Some(out);
                WireMessage::PrivateProof(proof)
            }),
            _ => Err(self.fail(causes::UNEXPECTED_MESSAGE)),
        };
        let reply = reply.unwrap_or_else(|a| {
            if was_live && self.status.is_terminal() {
                // best effort; the Prover may already be gone
                let _ = exchange(prover, &WireMessage::abort(&a.cause));
            }
            WireMessage::abort(&a.cause)
        });
        let out = reply.to_line();
        self.to_verifier.push(out.clone());
        out
    }
}

struct Tools<'a> {
    auditor: &'a mut AuditorSession,
    prover: &'a mut dyn Endpoint,
}

impl ToolAccess for Tools<'_> {
    fn call(&mut self, kind: CallKind, argument: &str) -> Result<ToolResult, ToolRefusal> {
        self.auditor.issue_tool_call(kind, argument, self.prover)
    }

    fn remaining(&self) -> u32 {
        let b = &self.auditor.budgets;
        b.n_queries.saturating_sub(b.tool_calls_this_question)
    }
}

/// The Auditor as seen from the Verifier: a line endpoint that drives the
/// Prover and a fresh oracle per question.
pub struct AuditorLink<'a> {
    pub auditor: &'a mut AuditorSession,
    pub oracles: &'a dyn OracleFactory,
    pub prover: &'a mut dyn Endpoint,
    pub output: Option<AuditorOutput>,
}

impl<'a> AuditorLink<'a> {
    pub fn new(auditor: &'a mut AuditorSession, oracles: &'a dyn OracleFactory, prover: &'a mut dyn Endpoint) -> Self {
        Self {
            auditor,
            oracles,
            prover,
            output: None,
        }
    }
}

impl Endpoint for AuditorLink<'_> {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        Ok(self
            .auditor
            .handle_verifier_line(line, self.oracles, self.prover, &mut self.output))
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::{Expect, RuleOracleFactory, Script, ScriptStep, ScriptedOracle};
    use super::*;
    use crate::messages::fixtures::{parties, Parties};
    use crate::messages::open_private_proof;
    use crate::prover::{start_session_with, ProverOptions, ProverSession, TrustAnchor};
    use std::fs;

    struct Rig {
        p: Parties,
        prover: ProverSession,
        auditor: AuditorSession,
        nonce: [u8; 32],
        _dir: tempfile::TempDir,
    }

    fn write(dir: &std::path::Path, files: &[(&str, &str)]) {
        for (path, c) in files {
            let full = dir.join(path);
            fs::create_dir_all(full.parent().unwrap()).unwrap();
            fs::write(full, c).unwrap();
        }
    }

    fn rig(seed: u8, k_max: u32, n_queries: u32) -> Rig {
        let p = parties(seed);
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &[
                ("auditor/main.py", "import flask\n"),
                ("prover/serve.py", "def serve(): pass\n"),
                ("README.md", "overview of the project\n"),
            ],
        );
        let (mut prover, ticket, _) = start_session_with(
            p.prover.clone(),
            dir.path(),
            &ProverOptions {
                k_max,
                n_queries,
                nonce_seed: Some(seed as u64),
                trust: Some(TrustAnchor {
                    hw_root_public: p.hw.public_key(),
                    measurement: p.measurement,
                }),
                ..Default::default()
            },
        )
        .unwrap();
        let (mut auditor, _) = boot_seeded(AuditorConfig::new(p.measurement, p.hw.clone()), &[seed; 32]);
        auditor.handshake(&mut prover).unwrap();
        let token = prover.issue_token(p.verifier.public_key()).unwrap();
        auditor.register_verifier(&token).unwrap();
        Rig {
            nonce: ticket.nonce,
            p,
            prover,
            auditor,
            _dir: dir,
        }
    }

    fn question(r: &Rig, text: &str, cq: u32) -> SignedQuestion {
        SignedQuestion::sign(&r.p.verifier, text, cq, &r.nonce)
    }

    fn ask(r: &mut Rig, text: &str, cq: u32) -> Result<VerdictAnswer, Abort> {
        let q = question(r, text, cq);
        let mut oracle = RuleOracleFactory::default().fresh();
        r.auditor.answer_question(&q, oracle.as_mut(), &mut r.prover)
    }

    #[test]
    fn boot_twice_gives_distinct_keys() {
        let p = parties(1);
        let (a, qa) = boot(AuditorConfig::new(p.measurement, p.hw.clone()));
        let (b, _) = boot(AuditorConfig::new(p.measurement, p.hw.clone()));
        assert_ne!(a.public_key(), b.public_key());
        assert!(crate::messages::verify_quote(&p.hw.public_key(), &qa, &p.measurement));
        assert!(!crate::messages::verify_quote(
            &p.hw.public_key(),
            &qa,
            &digest(b"other")
        ));
    }

    #[test]
    fn filter_output_accepts_exact_tokens_only() {
        assert_eq!(filter_output("true"), Verdict::True);
        assert_eq!(filter_output("  false\n"), Verdict::False);
        assert_eq!(filter_output("unsure"), Verdict::Unsure);
        assert_eq!(filter_output("error"), Verdict::Error);
        assert_eq!(filter_output("True"), Verdict::Error);
        assert_eq!(filter_output("true, because file X contains a key"), Verdict::Error);
        assert_eq!(filter_output(""), Verdict::Error);
    }

    #[test]
    fn ticket_checks() {
        let p = parties(2);
        let other = parties(3);
        let dir = tempfile::tempdir().unwrap();
        let (_, mut ticket, _) = start_session_with(p.prover.clone(), dir.path(), &ProverOptions::default()).unwrap();
        let (mut a, _) = boot(AuditorConfig::new(p.measurement, p.hw.clone()));
        let q = a.receive_ticket(&ticket).unwrap();
        assert_eq!(q.ticket.as_ref(), Some(&ticket));

        ticket.k_max += 1;
        let (mut a, _) = boot(AuditorConfig::new(p.measurement, p.hw.clone()));
        assert_eq!(a.receive_ticket(&ticket).unwrap_err().cause, causes::BAD_TICKET);

        ticket.k_max -= 1;
        let mut cfg = AuditorConfig::new(p.measurement, p.hw.clone());
        cfg.expected_prover = Some(other.prover.public_key());
        let (mut a, _) = boot(cfg);
        assert_eq!(a.receive_ticket(&ticket).unwrap_err().cause, causes::BAD_TICKET);
    }

    #[test]
    fn manifest_checks() {
        let p = parties(4);
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[("a", "1"), ("b", "2"), ("c", "3")]);
        let (prover, ticket, _) = start_session_with(p.prover.clone(), dir.path(), &ProverOptions::default()).unwrap();
        let good = prover.signed_manifest().clone();
        let fresh = || {
            let (mut a, _) = boot(AuditorConfig::new(p.measurement, p.hw.clone()));
            a.receive_ticket(&ticket).unwrap();
            a
        };
        fresh().receive_manifest(&good).unwrap();

        let mut altered = good.manifest.clone();
        altered.entries[1].file_digest = digest(b"x");
        let forged = SignedManifest::sign(&p.prover, altered, ticket.nonce);
        assert_eq!(
            fresh().receive_manifest(&forged).unwrap_err().cause,
            causes::MANIFEST_INVALID
        );

        let mut permuted = good.manifest.clone();
        permuted.entries.swap(0, 2);
        let permuted = SignedManifest::sign(&p.prover, permuted, ticket.nonce);
        assert_eq!(
            fresh().receive_manifest(&permuted).unwrap_err().cause,
            causes::MANIFEST_INVALID
        );
    }

    #[test]
    fn structural_question_answers_true_with_attestation() {
        let mut r = rig(5, 40, 50);
        let a = ask(&mut r, "Does the root directory contain a folder named 'auditor'?", 1).unwrap();
        assert_eq!(a.verdict, Verdict::True);
        let att = a.attestation.unwrap();
        att.check(&r.p.prover.public_key(), &r.p.hw.public_key(), &r.p.measurement)
            .unwrap();
        assert_eq!(r.auditor.chain().unwrap().head, r.prover.chain().unwrap().head);
        assert_eq!(r.auditor.budgets().leakage_bits_emitted, 2);
    }

    #[test]
    fn question_beyond_k_max_is_error_without_oracle() {
        let mut r = rig(6, 1, 50);
        ask(&mut r, "Does the file 'README.md' exist?", 1).unwrap();
        let len = r.auditor.chain().unwrap().len();
        let a = ask(&mut r, "Does the file 'README.md' exist?", 2).unwrap();
        assert_eq!(
            a,
            VerdictAnswer {
                verdict: Verdict::Error,
                attestation: None
            }
        );
        assert_eq!(r.auditor.chain().unwrap().len(), len);
        assert_eq!(r.auditor.budgets().questions_asked, 1);
    }

    #[test]
    fn fifty_first_tool_call_refused() {
        let mut r = rig(7, 40, 50);
        let steps = (0..51)
            .map(|_| ScriptStep::new(CallKind::ListFiles, "", None))
            .collect();
        let mut oracle = ScriptedOracle::new(Script::new(steps, "true", "false"));
        let q = question(&r, "list a lot", 1);
        let prover_len_before = r.prover.locker().len();
        let a = r.auditor.answer_question(&q, &mut oracle, &mut r.prover).unwrap();
        assert_eq!(a.verdict, Verdict::True);
        assert_eq!(r.auditor.budgets().tool_calls_this_question, 50);
        // question + 50 calls + verdict, each one request and one reply
        assert_eq!(r.prover.locker().len() - prover_len_before, 2 * 52);
    }

    #[test]
    fn same_question_twice_is_deterministic() {
        let mut r = rig(8, 40, 50);
        let q = "Does any file import 'flask'?";
        ask(&mut r, q, 1).unwrap();
        ask(&mut r, q, 2).unwrap();
        let entries = &r.auditor.chain().unwrap().entries;
        let calls = |from: usize| -> Vec<(CallKind, String)> {
            entries[from..]
                .iter()
                .take_while(|e| e.call.kind != CallKind::Verdict)
                .map(|e| (e.call.kind, e.call.argument.clone()))
                .collect()
        };
        let second = entries.iter().rposition(|e| e.call.kind == CallKind::Question).unwrap();
        assert_eq!(calls(0), calls(second));
    }

    #[test]
    fn search_omission_detection() {
        let mut r = rig(9, 40, 50);
        r.auditor.seen_search_results.insert("flask".into(), BTreeSet::new());
        assert_eq!(
            r.auditor
                .detect_search_omission("auditor/main.py", b"import flask")
                .unwrap_err()
                .cause,
            causes::SEARCH_OMISSION
        );
        assert!(r
            .auditor
            .detect_search_omission("README.md", b"nothing relevant")
            .is_ok());
        r.auditor
            .seen_search_results
            .insert("flask".into(), ["auditor/main.py".to_string()].into());
        assert!(r
            .auditor
            .detect_search_omission("auditor/main.py", b"import flask")
            .is_ok());
    }

    #[test]
    fn finalize_produces_log_openable_only_by_prover() {
        let mut r = rig(10, 40, 50);
        ask(&mut r, "Does the root directory contain a folder named 'auditor'?", 1).unwrap();
        ask(&mut r, "Does any file import 'flask'?", 2).unwrap();
        let end = EndOfAudit::sign(&r.p.verifier, 2, &r.nonce);
        let out = r.auditor.finalize(&end, &mut r.prover).unwrap();
        assert_eq!(out.log.questions.len(), 2);
        assert!(out.log.is_consistent());
        let binding = attestation_set_digest(&out.attestations);
        let opened = open_private_proof(&r.p.prover, &out.private_proof, &binding).unwrap();
        assert_eq!(opened, out.log);
        assert!(open_private_proof(&r.p.verifier, &out.private_proof, &binding).is_err());
        assert_eq!(*r.auditor.status(), SessionStatus::Complete);
        assert!(r.auditor.keys.is_none());
        assert_eq!(r.prover.private_proof(), Some(&out.private_proof));
    }

    #[test]
    fn final_heads_disagree_aborts() {
        let mut r = rig(11, 40, 50);
        ask(&mut r, "Does the file 'README.md' exist?", 1).unwrap();
        // desynchronise: the prover sees one more exchange than the auditor
        let chain = r.prover.chain().unwrap();
        let extra = SignedToolCall {
            call: ToolCall::new(CallKind::Question, "extra", chain.len() + 1),
            head_signature: sign_head(r.auditor.keys(), &chain.head),
        };
        r.prover.handle_tool_call(&extra).unwrap();
        let end = EndOfAudit::sign(&r.p.verifier, 1, &r.nonce);
        assert_eq!(
            r.auditor.finalize(&end, &mut r.prover).unwrap_err().cause,
            causes::CHAIN_DIVERGENCE
        );
    }

    #[test]
    fn verifier_channel_only_carries_tokens_and_attestations() {
        let mut r = rig(12, 40, 50);
        let factory = RuleOracleFactory::default();
        let lines: Vec<String> = [
            WireMessage::Question(question(&r, "Does any file import 'flask'?", 1)),
            WireMessage::Question(question(&r, "Does the file 'README.md' contain 'overview'?", 2)),
            WireMessage::EndOfAudit(EndOfAudit::sign(&r.p.verifier, 2, &r.nonce)),
        ]
        .iter()
        .map(|m| m.to_line())
        .collect();
        let mut out = None;
        for l in &lines {
            r.auditor.handle_verifier_line(l, &factory, &mut r.prover, &mut out);
        }
        assert!(out.is_some());
        for line in r.auditor.verifier_outbound() {
            match WireMessage::from_line(line).unwrap() {
                WireMessage::Answer(a) => {
                    let att = a.attestation.unwrap();
                    assert_eq!(att.receipt.verdict, a.verdict);
                }
                WireMessage::PrivateProof(_) => {}
                other => panic!("unexpected outbound {}", other.kind()),
            }
        }
        let joined = r.auditor.verifier_outbound().join("\n");
        assert!(!joined.contains(&hex::encode("import flask")));
    }

    #[test]
    fn expect_payload_contains_via_auditor() {
        let mut r = rig(13, 40, 50);
        let steps = vec![ScriptStep::new(
            CallKind::ReadFile,
            "auditor/main.py",
            Some(Expect::PayloadContains("flask".into())),
        )];
        let mut oracle = ScriptedOracle::new(Script::new(steps, "true", "false"));
        let q = question(&r, "scripted", 1);
        let a = r.auditor.answer_question(&q, &mut oracle, &mut r.prover).unwrap();
        assert_eq!(a.verdict, Verdict::True);
        assert_eq!(r.auditor.ingested().len(), 1);
    }
}
