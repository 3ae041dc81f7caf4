// SPDX-License-Identifier: Apache-2.0

//! The Prover: owns the corpus, issues the ticket, serves tool calls with
//! per-file commitments, countersigns verdicts and keeps the evidence locker.
//!
//! This module is honest-only. Adversarial behaviour lives in the harness as
//! wrappers around [`ProverSession`] and [`ToolServer`].

use std::path::Path;

use chrono::{SecondsFormat, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::{
    build_manifest_with, CallKind, Corpus, CorpusManifest, ManifestError, ManifestOptions, PathMode, ToolCall,
    ToolResult,
};
use crate::crypto::{decode_lower_hex, digest, Digest256, KeyPair, PublicKey};
use crate::messages::{
    causes, issue_ticket_with, issue_token, issue_verdict_receipt, Abort, AuditorToken, Cause, EnclaveQuote, Endpoint,
    FixedClock, IntegrityChecks, ParameterError, PrivateProof, QuoteForm, SessionStatus, SessionTicket, SignedManifest,
    SignedToolCall, SignedToolResult, SystemClock, TransportError, Verdict, VerdictReceipt, WireMessage,
};
use crate::par;
use crate::transcript::{
    chain_init, final_message, sign_head, verify_head, ChainState, FinalHeadProposal, FinalHeadRecord,
};

/// Where tool results come from. The honest implementation is [`Corpus`].
pub trait ToolServer {
    fn serve(&self, call: &ToolCall) -> ToolResult;
}

impl ToolServer for Corpus {
    fn serve(&self, call: &ToolCall) -> ToolResult {
        Corpus::serve(self, call)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    fn as_str(self) -> &'static str {
        match self {
            Direction::Sent => "sent",
            Direction::Received => "received",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockerRecord {
    pub index: u64,
    pub direction: Direction,
    pub bytes: Vec<u8>,
    pub digest: Digest256,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("locker line {line}: {reason}")]
pub struct LockerError {
    pub line: usize,
    pub reason: String,
}

/// Append-only archive of every message the Prover sent or received.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceLocker {
    records: Vec<LockerRecord>,
    fixed_time: Option<String>,
}

impl EvidenceLocker {
    pub fn new(fixed_time: Option<String>) -> Self {
        Self {
            records: Vec::new(),
            fixed_time,
        }
    }

    pub fn append(&mut self, direction: Direction, bytes: &[u8]) -> &LockerRecord {
        let timestamp = match &self.fixed_time {
            Some(t) => t.clone(),
            None => Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        self.records.push(LockerRecord {
            index: self.records.len() as u64 + 1,
            direction,
            bytes: bytes.to_vec(),
            digest: digest(bytes),
            timestamp,
        });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[LockerRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One line per record: `<index> <direction> <timestamp> <hex digest> <hex bytes>`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.index,
                r.direction.as_str(),
                r.timestamp,
                r.digest,
                hex::encode(&r.bytes)
            ));
        }
        out
    }

    /// Parses an export, rejecting gaps in the index sequence and any record
    /// whose bytes no longer match its digest.
    pub fn import(text: &str) -> Result<Self, LockerError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let err = |reason: &str| LockerError {
                line: n + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split(' ').collect();
            let [index, direction, timestamp, dig, bytes] = cols.as_slice() else {
                return Err(err("expected 5 columns"));
            };
            let index: u64 = index.parse().map_err(|_| err("bad index"))?;
            if index != n as u64 + 1 {
                return Err(err("index out of sequence"));
            }
            let direction = match *direction {
                "sent" => Direction::Sent,
                "received" => Direction::Received,
                _ => return Err(err("bad direction")),
            };
            let dig = Digest256::from_hex(dig).map_err(|_| err("bad digest"))?;
            let bytes = decode_lower_hex(bytes).map_err(|_| err("bad hex"))?;
            if digest(&bytes) != dig {
                return Err(err("digest mismatch"));
            }
            records.push(LockerRecord {
                index,
                direction,
                bytes,
                digest: dig,
                timestamp: timestamp.to_string(),
            });
        }
        Ok(Self {
            records,
            fixed_time: None,
        })
    }
}

/// Hardware root and expected enclave measurement the Prover trusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustAnchor {
    pub hw_root_public: PublicKey,
    pub measurement: Digest256,
}

#[derive(Debug, Clone)]
pub struct ProverOptions {
    pub k_max: u32,
    pub n_queries: u32,
    pub path_mode: PathMode,
    pub trust: Option<TrustAnchor>,
    /// Seeds the ticket nonce. `None` draws from the OS.
    pub nonce_seed: Option<u64>,
    /// Pins ticket and locker timestamps, for reproducible artifacts.
    pub fixed_time: Option<String>,
    pub checks: IntegrityChecks,
    pub mode: par::Mode,
}

impl Default for ProverOptions {
    fn default() -> Self {
        Self {
            k_max: crate::messages::DEFAULT_K_MAX,
            n_queries: crate::messages::DEFAULT_N_QUERIES,
            path_mode: PathMode::Plain,
            trust: None,
            nonce_seed: None,
            fixed_time: None,
            checks: IntegrityChecks::Enforced,
            mode: par::Mode::Auto,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Parameter(#[from] ParameterError),
}

#[derive(Clone)]
pub struct ProverSession {
    keys: KeyPair,
    ticket: SessionTicket,
    signed_manifest: SignedManifest,
    corpus: Corpus,
    chain: Option<ChainState>,
    locker: EvidenceLocker,
    peer_auditor_public: Option<PublicKey>,
    session_quote: Option<EnclaveQuote>,
    token: Option<AuditorToken>,
    status: SessionStatus,
    trust: Option<TrustAnchor>,
    checks: IntegrityChecks,
    questions_seen: u32,
    calls_this_question: u32,
    open_question: Option<u32>,
    unresolved_question: Option<u32>,
    final_record: Option<FinalHeadRecord>,
    private_proof: Option<PrivateProof>,
}

pub fn start_session(
    keys: KeyPair,
    corpus_root: &Path,
    k_max: u32,
    n_queries: u32,
) -> Result<(ProverSession, SessionTicket, CorpusManifest), StartError> {
    start_session_with(
        keys,
        corpus_root,
        &ProverOptions {
            k_max,
            n_queries,
            ..ProverOptions::default()
        },
    )
}

pub fn start_session_with(
    keys: KeyPair,
    corpus_root: &Path,
    options: &ProverOptions,
) -> Result<(ProverSession, SessionTicket, CorpusManifest), StartError> {
    let build = build_manifest_with(
        corpus_root,
        &ManifestOptions {
            path_mode: options.path_mode,
        },
        options.mode,
    )?;
    let corpus = Corpus::open(corpus_root)?;
    let clock_fixed = options.fixed_time.clone().map(FixedClock);
    let clock: &dyn crate::messages::Clock = match &clock_fixed {
        Some(c) => c,
        None => &SystemClock,
    };
    let ticket = match options.nonce_seed {
        Some(seed) => issue_ticket_with(
            &mut ChaCha20Rng::seed_from_u64(seed),
            &keys,
            options.k_max,
            options.n_queries,
            clock,
        )?,
        None => issue_ticket_with(&mut rand::rngs::OsRng, &keys, options.k_max, options.n_queries, clock)?,
    };
    let signed_manifest = SignedManifest::sign(&keys, build.manifest.clone(), ticket.nonce);
    let mut locker = EvidenceLocker::new(options.fixed_time.clone());
    locker.append(
        Direction::Sent,
        WireMessage::Manifest(signed_manifest.clone()).to_line().as_bytes(),
    );
    let session = ProverSession {
        keys,
        ticket: ticket.clone(),
        signed_manifest,
        corpus,
        chain: None,
        locker,
        peer_auditor_public: None,
        session_quote: None,
        token: None,
        status: SessionStatus::Handshaking,
        trust: options.trust,
        checks: options.checks,
        questions_seen: 0,
        calls_this_question: 0,
        open_question: None,
        unresolved_question: None,
        final_record: None,
        private_proof: None,
    };
    Ok((session, ticket, build.manifest))
}

fn quote_abort(cause: &Cause) -> Abort {
    match cause {
        Cause::Measurement => Abort::new(causes::MEASUREMENT_MISMATCH),
        _ => Abort::new(causes::BAD_QUOTE),
    }
}

impl ProverSession {
    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn ticket(&self) -> &SessionTicket {
        &self.ticket
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.signed_manifest.manifest
    }

    pub fn signed_manifest(&self) -> &SignedManifest {
        &self.signed_manifest
    }

    pub fn chain(&self) -> Option<&ChainState> {
        self.chain.as_ref()
    }

    pub fn locker(&self) -> &EvidenceLocker {
        &self.locker
    }

    pub fn locker_export(&self) -> String {
        self.locker.export()
    }

    pub fn token(&self) -> Option<&AuditorToken> {
        self.token.as_ref()
    }

    pub fn session_quote(&self) -> Option<&EnclaveQuote> {
        self.session_quote.as_ref()
    }

    pub fn final_record(&self) -> Option<&FinalHeadRecord> {
        self.final_record.as_ref()
    }

    pub fn private_proof(&self) -> Option<&PrivateProof> {
        self.private_proof.as_ref()
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    /// Question left open when the session was finalized; it resolves as `error`.
    pub fn unresolved_question(&self) -> Option<u32> {
        self.unresolved_question
    }

    pub fn set_trust_anchor(&mut self, trust: TrustAnchor) {
        self.trust = Some(trust);
    }

    fn fail(&mut self, cause: &str) -> Abort {
        if !self.status.is_terminal() {
            self.status = SessionStatus::Aborted(cause.to_string());
        }
        Abort::new(cause)
    }

    fn require(&mut self, status: SessionStatus) -> Result<(), Abort> {
        if self.status == status {
            Ok(())
        } else if matches!(self.status, SessionStatus::Complete | SessionStatus::Aborted(_)) {
            Err(Abort::new(causes::SESSION_CLOSED))
        } else {
            Err(self.fail(causes::UNEXPECTED_MESSAGE))
        }
    }

    /// Checks the boot quote and, on success, returns the ticket to send.
    pub fn accept_auditor(
        &mut self,
        boot_quote: &EnclaveQuote,
        expected_measurement: &Digest256,
        hw_root_public: &PublicKey,
    ) -> Result<SessionTicket, Abort> {
        self.require(SessionStatus::Handshaking)?;
        self.trust = Some(TrustAnchor {
            hw_root_public: *hw_root_public,
            measurement: *expected_measurement,
        });
        if let Err(e) = boot_quote.check(hw_root_public, expected_measurement, Some(QuoteForm::Boot)) {
            return Err(self.fail(&quote_abort(&e.cause).cause));
        }
        self.peer_auditor_public = Some(boot_quote.auditor_public);
        Ok(self.ticket.clone())
    }

    /// Checks the session quote binds this session's ticket; seeds the chain
    /// and returns the signed manifest.
    pub fn accept_session_quote(&mut self, quote: &EnclaveQuote) -> Result<SignedManifest, Abort> {
        self.require(SessionStatus::Handshaking)?;
        let (Some(trust), Some(peer)) = (self.trust, self.peer_auditor_public) else {
            return Err(self.fail(causes::UNEXPECTED_MESSAGE));
        };
        if quote.ticket.as_ref() != Some(&self.ticket) {
            return Err(self.fail(causes::TICKET_MISMATCH));
        }
        if let Err(e) = quote.check(&trust.hw_root_public, &trust.measurement, Some(QuoteForm::Session)) {
            return Err(self.fail(&quote_abort(&e.cause).cause));
        }
        if quote.auditor_public != peer {
            return Err(self.fail(causes::BAD_QUOTE));
        }
        self.session_quote = Some(quote.clone());
        self.chain = Some(chain_init(
            &self.signed_manifest.manifest.corpus_digest,
            &self.ticket,
            peer,
        ));
        self.status = SessionStatus::Serving;
        Ok(self.signed_manifest.clone())
    }

    /// T_a for one Verifier. Issued once per session.
    pub fn issue_token(&mut self, verifier_public: PublicKey) -> Result<AuditorToken, Abort> {
        self.require(SessionStatus::Serving)?;
        if let Some(t) = &self.token {
            if t.verifier_public == verifier_public {
                return Ok(t.clone());
            }
            return Err(Abort::new(causes::BAD_TOKEN));
        }
        let trust = self.trust.expect("serving implies trust anchor");
        let quote = self.session_quote.clone().expect("serving implies session quote");
        let token = issue_token(
            &self.keys,
            &quote,
            verifier_public,
            &trust.hw_root_public,
            &trust.measurement,
        )
        .map_err(|_| self.fail(causes::BAD_QUOTE))?;
        self.token = Some(token.clone());
        Ok(token)
    }

    pub fn handle_tool_call(&mut self, signed: &SignedToolCall) -> Result<SignedToolResult, Abort> {
        self.handle_tool_call_with(signed, None)
    }

    /// As [`Self::handle_tool_call`], drawing tool results from `server`
    /// instead of the session's own corpus.
    pub fn handle_tool_call_with(
        &mut self,
        signed: &SignedToolCall,
        server: Option<&dyn ToolServer>,
    ) -> Result<SignedToolResult, Abort> {
        self.require(SessionStatus::Serving)?;
        self.check_auditor_head_sig(signed)?;
        let call = &signed.call;
        let result = match call.kind {
            CallKind::Question => {
                self.questions_seen += 1;
                self.calls_this_question = 0;
                self.open_question = Some(self.questions_seen);
                ToolResult::ok(CallKind::Question, Vec::new())
            }
            CallKind::Verdict => {
                let receipt = self.verdict_receipt(&call.argument)?;
                self.open_question = None;
                ToolResult::ok(CallKind::Verdict, receipt.encode())
            }
            _ => {
                self.calls_this_question += 1;
                if self.calls_this_question > self.ticket.n_queries {
                    return Err(self.fail(causes::BUDGET_EXCEEDED));
                }
                match server {
                    Some(s) => s.serve(call),
                    None => self.corpus.serve(call),
                }
            }
        };
        Ok(self.commit(signed, result))
    }

    fn check_auditor_head_sig(&mut self, signed: &SignedToolCall) -> Result<(), Abort> {
        if self.checks == IntegrityChecks::Disabled {
            return Ok(());
        }
        let chain = self.chain.as_ref().expect("serving implies chain");
        if signed.call.sequence_number != chain.len() + 1
            || !verify_head(&chain.auditor_public, &chain.head, &signed.head_signature)
        {
            return Err(self.fail(causes::CHAIN_DIVERGENCE));
        }
        Ok(())
    }

    fn commit(&mut self, signed: &SignedToolCall, result: ToolResult) -> SignedToolResult {
        let chain = self.chain.as_mut().expect("serving implies chain");
        let prover_sig = sign_head(&self.keys, &chain.head);
        // the auditor signature was checked against this head above
        chain.append_unchecked(signed.call.clone(), result.clone(), prover_sig, signed.head_signature);
        SignedToolResult {
            result,
            head_signature: prover_sig,
        }
    }

    fn verdict_receipt(&mut self, argument: &str) -> Result<VerdictReceipt, Abort> {
        let mut parts = argument.split(' ');
        let (Some(v), Some(cq), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(self.fail(causes::BAD_RECEIPT));
        };
        let (Ok(verdict), Ok(cq)) = (v.parse::<Verdict>(), cq.parse::<u32>()) else {
            return Err(self.fail(causes::BAD_RECEIPT));
        };
        let head = self.chain.as_ref().expect("serving implies chain").head;
        self.acknowledge_verdict(head, verdict, cq)
    }

    /// σ_P over `(head, verdict, T_a, C_q)`. `head` must be the current chain head.
    pub fn acknowledge_verdict(
        &mut self,
        head: Digest256,
        verdict: Verdict,
        question_count: u32,
    ) -> Result<VerdictReceipt, Abort> {
        self.require(SessionStatus::Serving)?;
        let current = self.chain.as_ref().expect("serving implies chain").head;
        if head != current && self.checks == IntegrityChecks::Enforced {
            return Err(self.fail(causes::CHAIN_DIVERGENCE));
        }
        if question_count != self.questions_seen {
            return Err(self.fail(causes::BAD_RECEIPT));
        }
        let Some(token) = self.token.clone() else {
            return Err(self.fail(causes::BAD_RECEIPT));
        };
        match issue_verdict_receipt(&self.keys, head, verdict, &token, question_count) {
            Ok(r) => Ok(r),
            Err(ParameterError::QuestionBudget { .. }) => Err(self.fail(causes::K_MAX_EXHAUSTED)),
            Err(_) => Err(self.fail(causes::BAD_RECEIPT)),
        }
    }

    /// Countersigns the final head. A question still open at this point is
    /// recorded as resolved with `error`.
    pub fn finalize(&mut self, proposal: &FinalHeadProposal) -> Result<FinalHeadRecord, Abort> {
        self.require(SessionStatus::Serving)?;
        self.status = SessionStatus::Finalizing;
        let chain = self.chain.as_ref().expect("serving implies chain");
        let (head, length) = chain.snapshot();
        if self.checks == IntegrityChecks::Enforced {
            if !proposal.verify(&chain.auditor_public) {
                return Err(self.fail(causes::BAD_HEAD_SIGNATURE));
            }
            if proposal.head != head || proposal.length != length {
                return Err(self.fail(causes::CHAIN_DIVERGENCE));
            }
        }
        // with checks disabled the auditor is expected to adopt this head
        let record = FinalHeadRecord {
            head,
            length,
            prover_signature: self.keys.sign(&final_message(&head, length)),
            auditor_signature: proposal.auditor_signature,
        };
        self.unresolved_question = self.open_question.take();
        self.final_record = Some(record.clone());
        self.status = SessionStatus::Complete;
        Ok(record)
    }

    pub fn receive_private_proof(&mut self, proof: &PrivateProof) -> Result<(), Abort> {
        if self.status != SessionStatus::Complete {
            return Err(Abort::new(causes::UNEXPECTED_MESSAGE));
        }
        self.private_proof = Some(proof.clone());
        Ok(())
    }

    pub fn handle_line(&mut self, line: &str) -> String {
        self.handle_line_with(line, None)
    }

    /// Records `line`, dispatches it, records and returns the reply.
    pub fn handle_line_with(&mut self, line: &str, server: Option<&dyn ToolServer>) -> String {
        self.locker.append(Direction::Received, line.as_bytes());
        let reply = match WireMessage::from_line(line) {
            Ok(msg) => self.dispatch(msg, server),
            Err(_) => WireMessage::abort(causes::UNEXPECTED_MESSAGE),
        };
        let out = reply.to_line();
        self.locker.append(Direction::Sent, out.as_bytes());
        out
    }

    fn dispatch(&mut self, msg: WireMessage, server: Option<&dyn ToolServer>) -> WireMessage {
        let reply = match msg {
            WireMessage::BootQuote(q) => match self.trust {
                Some(t) => self
                    .accept_auditor(&q, &t.measurement, &t.hw_root_public)
                    .map(WireMessage::Ticket),
                None => Err(self.fail(causes::BAD_QUOTE)),
            },
            WireMessage::SessionQuote(q) => self.accept_session_quote(&q).map(WireMessage::Manifest),
            WireMessage::TokenRequest { verifier_public } => self.issue_token(verifier_public).map(WireMessage::Token),
            WireMessage::ToolCall(c) => self.handle_tool_call_with(&c, server).map(WireMessage::ToolResult),
            WireMessage::FinalHandshake(p) => self.finalize(&p).map(WireMessage::FinalHead),
            WireMessage::PrivateProof(p) => self.receive_private_proof(&p).map(|_| WireMessage::Ack),
            WireMessage::Abort { cause } => {
                self.fail(&cause);
                Ok(WireMessage::Ack)
            }
            _ => Err(self.fail(causes::UNEXPECTED_MESSAGE)),
        };
        reply.unwrap_or_else(|a| WireMessage::abort(&a.cause))
    }
}

impl Endpoint for ProverSession {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        Ok(self.handle_line(line))
    }
}
