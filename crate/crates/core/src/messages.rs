// SPDX-License-Identifier: Apache-2.0

//! Signed session artifacts and the `aw/1` wire envelope.
//!
//! Each artifact has two forms. The canonical binary form (tagged,
//! length-prefixed fields, version tag first, signature last) is what gets
//! signed, nested inside other artifacts, and hashed into the transcript. The
//! wire form is a single-line JSON object with hex-encoded binary fields,
//! prefixed with `aw/1 `.
//!
//! Verification always runs inside-out (ticket, quote, token, receipt,
//! attestation) so that a failure names the innermost broken layer.

use std::fmt;
use std::str::FromStr;

use chrono::{SecondsFormat, Utc};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, ToolCall, ToolResult};
use crate::crypto::{
    self, canonical_encode, digest, hex_array, verify, DecodeError, DecryptError, Digest256, FieldReader, FieldWriter,
    KeyPair, PublicKey, SealedBox, Signature,
};
use crate::transcript::{ChainEntry, FinalHeadProposal, FinalHeadRecord};

pub const SCHEMA: &str = "aw/1";
pub const DEFAULT_K_MAX: u32 = 40;
pub const DEFAULT_N_QUERIES: u32 = 50;

const V_TICKET: &str = "aw/1/ticket";
const V_QUOTE: &str = "aw/1/quote";
const V_TOKEN: &str = "aw/1/token";
const V_RECEIPT: &str = "aw/1/receipt";
const V_ATTESTATION: &str = "aw/1/attestation";
const V_MANIFEST: &str = "aw/1/manifest";
const V_QUESTION: &str = "aw/1/question";
const V_END: &str = "aw/1/end";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParameterError {
    #[error("k_max and n_queries must be at least 1")]
    NonPositiveBound,
    #[error("question count {count} exceeds k_max {k_max}")]
    QuestionBudget { count: u32, k_max: u32 },
    #[error("unknown verdict {0:?}")]
    UnknownVerdict(String),
    #[error("session quote carries no ticket")]
    MissingTicket,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IssueError {
    #[error("session quote does not verify: {0}")]
    InvalidQuote(ArtifactError),
}

/// The artifact nesting levels, innermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Ticket,
    Quote,
    Token,
    Receipt,
    Attestation,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Ticket => "ticket",
            Layer::Quote => "quote",
            Layer::Token => "token",
            Layer::Receipt => "receipt",
            Layer::Attestation => "attestation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cause {
    Parse(String),
    Signature,
    Measurement,
    /// Boot quote where a session quote was required, or the reverse.
    Form,
    /// A field violates its invariant (named).
    Field(&'static str),
    KeyMismatch(&'static str),
    NonceMismatch,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::Parse(e) => write!(f, "parse error: {e}"),
            Cause::Signature => f.write_str("bad signature"),
            Cause::Measurement => f.write_str("measurement mismatch"),
            Cause::Form => f.write_str("wrong quote form"),
            Cause::Field(name) => write!(f, "invalid field {name}"),
            Cause::KeyMismatch(name) => write!(f, "unexpected key {name}"),
            Cause::NonceMismatch => f.write_str("ticket nonce mismatch"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{layer} layer: {cause}")]
pub struct ArtifactError {
    pub layer: Layer,
    pub cause: Cause,
}

impl ArtifactError {
    pub fn new(layer: Layer, cause: Cause) -> Self {
        Self { layer, cause }
    }

    fn parse(layer: Layer, e: DecodeError) -> Self {
        Self::new(layer, Cause::Parse(e.to_string()))
    }
}

fn take_sig(r: &mut FieldReader, tag: &str) -> Result<Signature, DecodeError> {
    Ok(Signature::from_slice(&r.take_array::<64>(tag)?).expect("64 bytes"))
}

fn take_key(r: &mut FieldReader, tag: &str) -> Result<PublicKey, DecodeError> {
    Ok(PublicKey(r.take_array(tag)?))
}

fn take_digest(r: &mut FieldReader, tag: &str) -> Result<Digest256, DecodeError> {
    Ok(Digest256(r.take_array(tag)?))
}

/// One of the four answers the Auditor may give.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Unsure,
    Error,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [Verdict::True, Verdict::False, Verdict::Unsure, Verdict::Error];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::Unsure => "unsure",
            Verdict::Error => "error",
        }
    }
}

impl FromStr for Verdict {
    type Err = ParameterError;

    /// Exact lowercase match only.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verdict::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ParameterError::UnknownVerdict(s.to_string()))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait Clock {
    /// ISO-8601 UTC, seconds precision.
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTicket {
    #[serde(with = "hex_array")]
    pub nonce: [u8; 32],
    pub timestamp: String,
    pub k_max: u32,
    pub n_queries: u32,
    pub prover_public: PublicKey,
    pub signature: Signature,
}

impl SessionTicket {
    fn writer(&self) -> FieldWriter {
        FieldWriter::new()
            .put("v", V_TICKET)
            .put("nonce", self.nonce)
            .put("timestamp", &self.timestamp)
            .put_u32("k_max", self.k_max)
            .put_u32("n_queries", self.n_queries)
            .put("prover_public", self.prover_public.0)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.writer().put("sig", self.signature.bytes).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let p = |e| ArtifactError::parse(Layer::Ticket, e);
        let mut r = FieldReader::new(bytes).map_err(p)?;
        r.expect_literal("v", V_TICKET.as_bytes()).map_err(p)?;
        let t = SessionTicket {
            nonce: r.take_array("nonce").map_err(p)?,
            timestamp: r.take_string("timestamp").map_err(p)?,
            k_max: r.take_u32("k_max").map_err(p)?,
            n_queries: r.take_u32("n_queries").map_err(p)?,
            prover_public: take_key(&mut r, "prover_public").map_err(p)?,
            signature: take_sig(&mut r, "sig").map_err(p)?,
        };
        r.finish().map_err(p)?;
        Ok(t)
    }

    /// Signature and field invariants, with the key taken from the ticket itself.
    pub fn check(&self) -> Result<(), ArtifactError> {
        let e = |c| ArtifactError::new(Layer::Ticket, c);
        if self.k_max < 1 {
            return Err(e(Cause::Field("k_max")));
        }
        if self.n_queries < 1 {
            return Err(e(Cause::Field("n_queries")));
        }
        if !verify(&self.prover_public, &self.signing_bytes(), &self.signature) {
            return Err(e(Cause::Signature));
        }
        Ok(())
    }
}

pub fn issue_ticket(
    prover_keys: &KeyPair,
    k_max: u32,
    n_queries: u32,
    clock: &dyn Clock,
) -> Result<SessionTicket, ParameterError> {
    issue_ticket_with(&mut rand::rngs::OsRng, prover_keys, k_max, n_queries, clock)
}

pub fn issue_ticket_with<R: RngCore + CryptoRng>(
    rng: &mut R,
    prover_keys: &KeyPair,
    k_max: u32,
    n_queries: u32,
    clock: &dyn Clock,
) -> Result<SessionTicket, ParameterError> {
    if k_max < 1 || n_queries < 1 {
        return Err(ParameterError::NonPositiveBound);
    }
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);
    let mut t = SessionTicket {
        nonce,
        timestamp: clock.now(),
        k_max,
        n_queries,
        prover_public: prover_keys.public_key(),
        signature: Signature::from_slice(&[0; 64]).expect("64 bytes"),
    };
    t.signature = prover_keys.sign(&t.signing_bytes());
    Ok(t)
}

pub fn verify_ticket(ticket: &SessionTicket, prover_public: &PublicKey) -> bool {
    ticket.prover_public == *prover_public && ticket.check().is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteForm {
    Boot,
    Session,
}

/// Emulated hardware quote. The boot form carries no ticket; the session form embeds one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveQuote {
    pub measurement: Digest256,
    pub auditor_public: PublicKey,
    pub ticket: Option<SessionTicket>,
    pub address: String,
    pub hw_signature: Signature,
}

impl EnclaveQuote {
    pub fn form(&self) -> QuoteForm {
        if self.ticket.is_some() {
            QuoteForm::Session
        } else {
            QuoteForm::Boot
        }
    }

    fn writer(&self) -> FieldWriter {
        let (form, ticket) = match &self.ticket {
            Some(t) => ("session", t.encode()),
            None => ("boot", Vec::new()),
        };
        FieldWriter::new()
            .put("v", V_QUOTE)
            .put("form", form)
            .put("measurement", self.measurement.0)
            .put("auditor_public", self.auditor_public.0)
            .put("ticket", ticket)
            .put("address", &self.address)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.writer().put("sig", self.hw_signature.bytes).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let p = |e| ArtifactError::parse(Layer::Quote, e);
        let mut r = FieldReader::new(bytes).map_err(p)?;
        r.expect_literal("v", V_QUOTE.as_bytes()).map_err(p)?;
        let form = r.take_string("form").map_err(p)?;
        let measurement = take_digest(&mut r, "measurement").map_err(p)?;
        let auditor_public = take_key(&mut r, "auditor_public").map_err(p)?;
        let ticket_bytes = r.take("ticket").map_err(p)?;
        let ticket = match form.as_str() {
            "boot" if ticket_bytes.is_empty() => None,
            "session" => Some(SessionTicket::decode(&ticket_bytes)?),
            _ => {
                return Err(ArtifactError::new(Layer::Quote, Cause::Form));
            }
        };
        let q = EnclaveQuote {
            measurement,
            auditor_public,
            ticket,
            address: r.take_string("address").map_err(p)?,
            hw_signature: take_sig(&mut r, "sig").map_err(p)?,
        };
        r.finish().map_err(p)?;
        Ok(q)
    }

    /// Embedded ticket first, then the hardware signature, then the measurement.
    pub fn check(
        &self,
        hw_root_public: &PublicKey,
        expected_measurement: &Digest256,
        form: Option<QuoteForm>,
    ) -> Result<(), ArtifactError> {
        let e = |c| ArtifactError::new(Layer::Quote, c);
        if let Some(t) = &self.ticket {
            t.check()?;
        }
        if form.is_some_and(|f| f != self.form()) {
            return Err(e(Cause::Form));
        }
        if !verify(hw_root_public, &self.signing_bytes(), &self.hw_signature) {
            return Err(e(Cause::Signature));
        }
        if self.measurement != *expected_measurement {
            return Err(e(Cause::Measurement));
        }
        Ok(())
    }
}

pub fn issue_quote(
    hw_keys: &KeyPair,
    measurement: Digest256,
    auditor_public: PublicKey,
    ticket: Option<SessionTicket>,
    address: &str,
) -> EnclaveQuote {
    let mut q = EnclaveQuote {
        measurement,
        auditor_public,
        ticket,
        address: address.to_string(),
        hw_signature: Signature::from_slice(&[0; 64]).expect("64 bytes"),
    };
    q.hw_signature = hw_keys.sign(&q.signing_bytes());
    q
}

pub fn verify_quote(hw_root_public: &PublicKey, quote: &EnclaveQuote, expected_measurement: &Digest256) -> bool {
    quote.check(hw_root_public, expected_measurement, None).is_ok()
}

pub fn verify_session_quote(
    hw_root_public: &PublicKey,
    quote: &EnclaveQuote,
    expected_measurement: &Digest256,
) -> bool {
    quote
        .check(hw_root_public, expected_measurement, Some(QuoteForm::Session))
        .is_ok()
}

/// T_a: the Prover's authorization binding a Verifier key to the session quote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditorToken {
    pub quote: EnclaveQuote,
    pub verifier_public: PublicKey,
    pub prover_public: PublicKey,
    pub signature: Signature,
}

impl AuditorToken {
    fn writer(&self) -> FieldWriter {
        FieldWriter::new()
            .put("v", V_TOKEN)
            .put("quote", self.quote.encode())
            .put("verifier_public", self.verifier_public.0)
            .put("prover_public", self.prover_public.0)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.writer().put("sig", self.signature.bytes).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let p = |e| ArtifactError::parse(Layer::Token, e);
        let mut r = FieldReader::new(bytes).map_err(p)?;
        r.expect_literal("v", V_TOKEN.as_bytes()).map_err(p)?;
        let quote = EnclaveQuote::decode(&r.take("quote").map_err(p)?)?;
        let t = AuditorToken {
            quote,
            verifier_public: take_key(&mut r, "verifier_public").map_err(p)?,
            prover_public: take_key(&mut r, "prover_public").map_err(p)?,
            signature: take_sig(&mut r, "sig").map_err(p)?,
        };
        r.finish().map_err(p)?;
        Ok(t)
    }

    pub fn ticket(&self) -> Option<&SessionTicket> {
        self.quote.ticket.as_ref()
    }

    pub fn check(
        &self,
        prover_public: &PublicKey,
        hw_root_public: &PublicKey,
        expected_measurement: &Digest256,
    ) -> Result<(), ArtifactError> {
        self.quote
            .check(hw_root_public, expected_measurement, Some(QuoteForm::Session))?;
        let e = |c| ArtifactError::new(Layer::Token, c);
        if !verify(&self.prover_public, &self.signing_bytes(), &self.signature) {
            return Err(e(Cause::Signature));
        }
        if self.prover_public != *prover_public {
            return Err(e(Cause::KeyMismatch("prover_public")));
        }
        if self.ticket().map(|t| t.prover_public) != Some(*prover_public) {
            return Err(e(Cause::KeyMismatch("ticket.prover_public")));
        }
        Ok(())
    }
}

pub fn issue_token(
    prover_keys: &KeyPair,
    session_quote: &EnclaveQuote,
    verifier_public: PublicKey,
    hw_root_public: &PublicKey,
    expected_measurement: &Digest256,
) -> Result<AuditorToken, IssueError> {
    session_quote
        .check(hw_root_public, expected_measurement, Some(QuoteForm::Session))
        .map_err(IssueError::InvalidQuote)?;
    let mut t = AuditorToken {
        quote: session_quote.clone(),
        verifier_public,
        prover_public: prover_keys.public_key(),
        signature: Signature::from_slice(&[0; 64]).expect("64 bytes"),
    };
    t.signature = prover_keys.sign(&t.signing_bytes());
    Ok(t)
}

pub fn verify_token(
    token: &AuditorToken,
    prover_public: &PublicKey,
    hw_root_public: &PublicKey,
    expected_measurement: &Digest256,
) -> bool {
    token.check(prover_public, hw_root_public, expected_measurement).is_ok()
}

/// σ_P: the Prover's countersignature over (head, verdict, token, question count).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictReceipt {
    pub head: Digest256,
    pub verdict: Verdict,
    pub token: AuditorToken,
    pub question_count: u32,
    pub signature: Signature,
}

impl VerdictReceipt {
    fn writer(&self) -> FieldWriter {
        FieldWriter::new()
            .put("v", V_RECEIPT)
            .put("head", self.head.0)
            .put("verdict", self.verdict.as_str())
            .put("token", self.token.encode())
            .put_u32("cq", self.question_count)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.writer().put("sig", self.signature.bytes).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let p = |e| ArtifactError::parse(Layer::Receipt, e);
        let mut r = FieldReader::new(bytes).map_err(p)?;
        r.expect_literal("v", V_RECEIPT.as_bytes()).map_err(p)?;
        let head = take_digest(&mut r, "head").map_err(p)?;
        let verdict = r
            .take_string("verdict")
            .map_err(p)?
            .parse::<Verdict>()
            .map_err(|_| ArtifactError::new(Layer::Receipt, Cause::Field("verdict")))?;
        let token = AuditorToken::decode(&r.take("token").map_err(p)?)?;
        let rec = VerdictReceipt {
            head,
            verdict,
            token,
            question_count: r.take_u32("cq").map_err(p)?,
            signature: take_sig(&mut r, "sig").map_err(p)?,
        };
        r.finish().map_err(p)?;
        Ok(rec)
    }

    pub fn check(
        &self,
        prover_public: &PublicKey,
        hw_root_public: &PublicKey,
        expected_measurement: &Digest256,
    ) -> Result<(), ArtifactError> {
        self.token.check(prover_public, hw_root_public, expected_measurement)?;
        let e = |c| ArtifactError::new(Layer::Receipt, c);
        if !verify(prover_public, &self.signing_bytes(), &self.signature) {
            return Err(e(Cause::Signature));
        }
        let k_max = self.token.ticket().map(|t| t.k_max).unwrap_or(0);
        if self.question_count < 1 || self.question_count > k_max {
            return Err(e(Cause::Field("question_count")));
        }
        Ok(())
    }
}

pub fn issue_verdict_receipt(
    prover_keys: &KeyPair,
    head: Digest256,
    verdict: Verdict,
    token: &AuditorToken,
    question_count: u32,
) -> Result<VerdictReceipt, ParameterError> {
    let k_max = token.ticket().ok_or(ParameterError::MissingTicket)?.k_max;
    if question_count > k_max {
        return Err(ParameterError::QuestionBudget {
            count: question_count,
            k_max,
        });
    }
    let mut r = VerdictReceipt {
        head,
        verdict,
        token: token.clone(),
        question_count,
        signature: Signature::from_slice(&[0; 64]).expect("64 bytes"),
    };
    r.signature = prover_keys.sign(&r.signing_bytes());
    Ok(r)
}

/// Γ_pub: the Auditor's per-question certificate. Holds no corpus content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicAttestation {
    pub receipt: VerdictReceipt,
    pub question_text: String,
    pub signature: Signature,
}

impl PublicAttestation {
    fn writer(&self) -> FieldWriter {
        FieldWriter::new()
            .put("v", V_ATTESTATION)
            .put("receipt", self.receipt.encode())
            .put("question", &self.question_text)
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.writer().put("sig", self.signature.bytes).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ArtifactError> {
        let p = |e| ArtifactError::parse(Layer::Attestation, e);
        let mut r = FieldReader::new(bytes).map_err(p)?;
        r.expect_literal("v", V_ATTESTATION.as_bytes()).map_err(p)?;
        let receipt = VerdictReceipt::decode(&r.take("receipt").map_err(p)?)?;
        let a = PublicAttestation {
            receipt,
            question_text: r.take_string("question").map_err(p)?,
            signature: take_sig(&mut r, "sig").map_err(p)?,
        };
        r.finish().map_err(p)?;
        Ok(a)
    }

    pub fn auditor_public(&self) -> PublicKey {
        self.receipt.token.quote.auditor_public
    }

    pub fn session_nonce(&self) -> Option<[u8; 32]> {
        self.receipt.token.ticket().map(|t| t.nonce)
    }

    /// Full nesting chain: ticket, quote, token, receipt, then the Auditor signature.
    pub fn check(
        &self,
        prover_public: &PublicKey,
        hw_root_public: &PublicKey,
        expected_measurement: &Digest256,
    ) -> Result<(), ArtifactError> {
        self.receipt
            .check(prover_public, hw_root_public, expected_measurement)?;
        if !verify(&self.auditor_public(), &self.signing_bytes(), &self.signature) {
            return Err(ArtifactError::new(Layer::Attestation, Cause::Signature));
        }
        Ok(())
    }
}

pub fn issue_public_attestation(
    auditor_keys: &KeyPair,
    receipt: &VerdictReceipt,
    question_text: &str,
) -> PublicAttestation {
    let mut a = PublicAttestation {
        receipt: receipt.clone(),
        question_text: question_text.to_string(),
        signature: Signature::from_slice(&[0; 64]).expect("64 bytes"),
    };
    a.signature = auditor_keys.sign(&a.signing_bytes());
    a
}

/// Binding digest over a set of attestations, in order.
pub fn attestation_set_digest(attestations: &[PublicAttestation]) -> Digest256 {
    let fields: Vec<(String, Vec<u8>)> = attestations
        .iter()
        .enumerate()
        .map(|(i, a)| (i.to_string(), a.encode()))
        .collect();
    digest(&canonical_encode(&fields).expect("index tags are unique"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_text: String,
    pub verdict: Verdict,
    pub narrative: String,
    pub summary: String,
}

/// ℒ: everything the Auditor saw and concluded during one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditLog {
    pub genesis: Digest256,
    pub questions: Vec<QuestionRecord>,
    pub entries: Vec<ChainEntry>,
    pub final_head: Digest256,
}

impl AuditLog {
    /// `final_head` equals the head reached by replaying `entries` from `genesis`.
    pub fn is_consistent(&self) -> bool {
        crate::transcript::replay_head(&self.genesis, &self.entries) == Some(self.final_head)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProofError {
    #[error(transparent)]
    Decrypt(#[from] DecryptError),
    #[error("sealed payload is not an audit log: {0}")]
    Parse(String),
    #[error("audit log head does not match its entries")]
    Inconsistent,
    #[error(transparent)]
    Key(#[from] crypto::KeyError),
}

/// Γ_priv: the audit log sealed to the Prover, bound to the attestation set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateProof {
    pub sealed: SealedBox,
    pub binding: Digest256,
}

pub fn seal_private_proof(
    prover_public: &PublicKey,
    log: &AuditLog,
    attestation_set_digest: &Digest256,
) -> Result<PrivateProof, ProofError> {
    if !log.is_consistent() {
        return Err(ProofError::Inconsistent);
    }
    let plaintext = serde_json::to_vec(log).expect("audit log serializes");
    Ok(PrivateProof {
        sealed: crypto::seal(prover_public, &plaintext, attestation_set_digest)?,
        binding: *attestation_set_digest,
    })
}

pub fn open_private_proof(
    prover_keys: &KeyPair,
    proof: &PrivateProof,
    attestation_set_digest: &Digest256,
) -> Result<AuditLog, ProofError> {
    let plain = crypto::unseal(prover_keys, &proof.sealed, attestation_set_digest)?;
    serde_json::from_slice(&plain).map_err(|e| ProofError::Parse(e.to_string()))
}

/// F_map plus H_corpus, signed by the Prover for one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedManifest {
    pub manifest: CorpusManifest,
    #[serde(with = "hex_array")]
    pub session_nonce: [u8; 32],
    pub signature: Signature,
}

impl SignedManifest {
    pub fn signing_bytes(manifest: &CorpusManifest, session_nonce: &[u8; 32]) -> Vec<u8> {
        FieldWriter::new()
            .put("v", V_MANIFEST)
            .put("nonce", session_nonce)
            .put("fmap", manifest.to_text())
            .put("corpus", manifest.corpus_digest.0)
            .finish()
    }

    pub fn sign(keys: &KeyPair, manifest: CorpusManifest, session_nonce: [u8; 32]) -> Self {
        let signature = keys.sign(&Self::signing_bytes(&manifest, &session_nonce));
        Self {
            manifest,
            session_nonce,
            signature,
        }
    }

    pub fn verify(&self, prover_public: &PublicKey) -> bool {
        verify(
            prover_public,
            &Self::signing_bytes(&self.manifest, &self.session_nonce),
            &self.signature,
        )
    }
}

/// A Verifier question with its running count C_q, signed by the Verifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedQuestion {
    pub text: String,
    pub question_count: u32,
    pub signature: Signature,
}

impl SignedQuestion {
    pub fn signing_bytes(text: &str, question_count: u32, session_nonce: &[u8; 32]) -> Vec<u8> {
        FieldWriter::new()
            .put("v", V_QUESTION)
            .put("nonce", session_nonce)
            .put_u32("cq", question_count)
            .put("q", text)
            .finish()
    }

    pub fn sign(keys: &KeyPair, text: &str, question_count: u32, session_nonce: &[u8; 32]) -> Self {
        Self {
            text: text.to_string(),
            question_count,
            signature: keys.sign(&Self::signing_bytes(text, question_count, session_nonce)),
        }
    }

    pub fn verify(&self, verifier_public: &PublicKey, session_nonce: &[u8; 32]) -> bool {
        verify(
            verifier_public,
            &Self::signing_bytes(&self.text, self.question_count, session_nonce),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndOfAudit {
    pub question_count: u32,
    pub signature: Signature,
}

impl EndOfAudit {
    pub fn signing_bytes(question_count: u32, session_nonce: &[u8; 32]) -> Vec<u8> {
        FieldWriter::new()
            .put("v", V_END)
            .put("nonce", session_nonce)
            .put_u32("cq", question_count)
            .finish()
    }

    pub fn sign(keys: &KeyPair, question_count: u32, session_nonce: &[u8; 32]) -> Self {
        Self {
            question_count,
            signature: keys.sign(&Self::signing_bytes(question_count, session_nonce)),
        }
    }

    pub fn verify(&self, verifier_public: &PublicKey, session_nonce: &[u8; 32]) -> bool {
        verify(
            verifier_public,
            &Self::signing_bytes(self.question_count, session_nonce),
            &self.signature,
        )
    }
}

/// A tool call (or synthetic question/verdict entry) with the sender's head signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedToolCall {
    pub call: ToolCall,
    pub head_signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedToolResult {
    pub result: ToolResult,
    pub head_signature: Signature,
}

/// What the Auditor returns to the Verifier: a verdict token and, when the
/// question was admitted, its public attestation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictAnswer {
    pub verdict: Verdict,
    pub attestation: Option<PublicAttestation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // built once per line, never stored in bulk
pub enum WireMessage {
    BootQuote(EnclaveQuote),
    Ticket(SessionTicket),
    SessionQuote(EnclaveQuote),
    Manifest(SignedManifest),
    ToolCall(SignedToolCall),
    ToolResult(SignedToolResult),
    TokenRequest { verifier_public: PublicKey },
    Token(AuditorToken),
    Question(SignedQuestion),
    Answer(VerdictAnswer),
    EndOfAudit(EndOfAudit),
    FinalHandshake(FinalHeadProposal),
    FinalHead(FinalHeadRecord),
    PrivateProof(PrivateProof),
    Ack,
    Abort { cause: String },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("missing `aw/1 ` prefix")]
    Prefix,
    #[error("malformed message: {0}")]
    Json(String),
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::BootQuote(_) => "boot_quote",
            WireMessage::Ticket(_) => "ticket",
            WireMessage::SessionQuote(_) => "session_quote",
            WireMessage::Manifest(_) => "manifest",
            WireMessage::ToolCall(_) => "tool_call",
            WireMessage::ToolResult(_) => "tool_result",
            WireMessage::TokenRequest { .. } => "token_request",
            WireMessage::Token(_) => "token",
            WireMessage::Question(_) => "question",
            WireMessage::Answer(_) => "answer",
            WireMessage::EndOfAudit(_) => "end_of_audit",
            WireMessage::FinalHandshake(_) => "final_handshake",
            WireMessage::FinalHead(_) => "final_head",
            WireMessage::PrivateProof(_) => "private_proof",
            WireMessage::Ack => "ack",
            WireMessage::Abort { .. } => "abort",
        }
    }

    /// Single line, no trailing newline.
    pub fn to_line(&self) -> String {
        format!(
            "{SCHEMA} {}",
            serde_json::to_string(self).expect("wire messages serialize")
        )
    }

    pub fn from_line(line: &str) -> Result<Self, WireError> {
        let body = line
            .trim_end_matches(['\n', '\r'])
            .strip_prefix("aw/1 ")
            .ok_or(WireError::Prefix)?;
        serde_json::from_str(body).map_err(|e| WireError::Json(e.to_string()))
    }

    pub fn abort(cause: &str) -> Self {
        WireMessage::Abort {
            cause: cause.to_string(),
        }
    }
}

/// Abort and rejection causes. These strings are a stable interface: scenario
/// outcomes are compared on them.
pub mod causes {
    pub const MEASUREMENT_MISMATCH: &str = "measurement_mismatch";
    pub const TICKET_MISMATCH: &str = "ticket_mismatch";
    pub const BAD_QUOTE: &str = "bad_quote";
    pub const BAD_TICKET: &str = "bad_ticket";
    pub const BAD_TOKEN: &str = "bad_token";
    pub const BAD_QUESTION: &str = "bad_question";
    pub const MANIFEST_INVALID: &str = "manifest_invalid";
    pub const CHAIN_DIVERGENCE: &str = "chain_divergence";
    pub const BAD_HEAD_SIGNATURE: &str = "bad_head_signature";
    /// Carried `h_file` disagrees with the manifest entry.
    pub const FILE_DIGEST_MISMATCH: &str = "file_digest_mismatch";
    /// Content does not hash to the carried `h_file`.
    pub const CONTENT_HASH_MISMATCH: &str = "content_hash_mismatch";
    pub const UNMANIFESTED_FILE: &str = "unmanifested_file";
    pub const SEARCH_OMISSION: &str = "search_omission";
    pub const BUDGET_EXCEEDED: &str = "budget_exceeded";
    pub const K_MAX_EXHAUSTED: &str = "k_max_exhausted";
    pub const SESSION_CLOSED: &str = "session_closed";
    pub const BAD_RECEIPT: &str = "bad_receipt";
    pub const UNEXPECTED_MESSAGE: &str = "unexpected_message";
    pub const TRANSPORT: &str = "transport";

    /// Causes that come from a signature or binding check failing on a
    /// received artifact, as opposed to a content or budget violation.
    pub fn is_rejection(cause: &str) -> bool {
        matches!(
            cause,
            MEASUREMENT_MISMATCH
                | TICKET_MISMATCH
                | BAD_QUOTE
                | BAD_TICKET
                | BAD_TOKEN
                | BAD_QUESTION
                | BAD_HEAD_SIGNATURE
        )
    }
}

/// A protocol abort with its stable cause string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("aborted: {cause}")]
pub struct Abort {
    pub cause: String,
}

impl Abort {
    pub fn new(cause: &str) -> Self {
        Self {
            cause: cause.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Handshaking,
    Serving,
    Finalizing,
    Aborted(String),
    Complete,
}

impl SessionStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, SessionStatus::Aborted(_) | SessionStatus::Complete)
    }

    pub fn abort_cause(&self) -> Option<&str> {
        match self {
            SessionStatus::Aborted(c) => Some(c),
            _ => None,
        }
    }
}

/// Whether head signatures and final-head agreement are enforced. `Disabled`
/// exists only as a negative control for the state explorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegrityChecks {
    #[default]
    Enforced,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport: {0}")]
pub struct TransportError(pub String);

/// One side of an ordered request/response channel carrying `aw/1` lines.
pub trait Endpoint {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError>;
}

impl<E: Endpoint + ?Sized> Endpoint for &mut E {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        (**self).exchange_line(line)
    }
}

/// Sends `msg` and parses the reply, also returning the raw reply line.
pub fn exchange(endpoint: &mut dyn Endpoint, msg: &WireMessage) -> Result<(WireMessage, String), TransportError> {
    let reply = endpoint.exchange_line(&msg.to_line())?;
    let parsed = WireMessage::from_line(&reply).map_err(|e| TransportError(e.to_string()))?;
    Ok((parsed, reply))
}
