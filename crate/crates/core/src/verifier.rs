// SPDX-License-Identifier: Apache-2.0

//! The Verifier: establishes trust in the Auditor through the token chain,
//! asks signed questions, and accepts a verdict only with a verifying
//! public attestation.

use std::fmt;

use crate::crypto::{Digest256, KeyPair, PublicKey};
use crate::messages::{
    causes, exchange, ArtifactError, AuditorToken, Cause, EndOfAudit, Endpoint, Layer, PrivateProof, PublicAttestation,
    SignedQuestion, TransportError, Verdict, WireMessage,
};

pub const VERDICT_ALPHABET: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("establish failed at {layer} layer: {cause}")]
pub struct EstablishError {
    pub layer: Layer,
    pub cause: Cause,
}

impl From<ArtifactError> for EstablishError {
    fn from(e: ArtifactError) -> Self {
        Self {
            layer: e.layer,
            cause: e.cause,
        }
    }
}

/// Why an answer's attestation was not accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttestationFault {
    Missing,
    Artifact(ArtifactError),
    AuditorKey,
    Token,
    CountEcho { sent: u32, echoed: u32 },
    VerdictMismatch,
    QuestionText,
}

impl fmt::Display for AttestationFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttestationFault::Missing => f.write_str("no attestation"),
            AttestationFault::Artifact(e) => write!(f, "{e}"),
            AttestationFault::AuditorKey => f.write_str("signed by another auditor"),
            AttestationFault::Token => f.write_str("receipt carries another token"),
            AttestationFault::CountEcho { sent, echoed } => {
                write!(f, "question count {echoed} echoed for {sent}")
            }
            AttestationFault::VerdictMismatch => f.write_str("verdict differs from receipt"),
            AttestationFault::QuestionText => f.write_str("question text differs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AskError {
    #[error("question budget of {k_max} exhausted")]
    Budget { k_max: u32 },
    #[error("attestation rejected: {0}")]
    Attestation(AttestationFault),
    #[error("session aborted: {0}")]
    Aborted(String),
    #[error("transport: {0}")]
    Transport(String),
}

impl AskError {
    pub fn abort_cause(&self) -> Option<&str> {
        match self {
            AskError::Aborted(c) => Some(c),
            AskError::Transport(_) => Some(causes::TRANSPORT),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AskedQuestion {
    pub text: String,
    /// The verdict as received, accepted or not.
    pub verdict: Option<Verdict>,
    pub attestation: Option<PublicAttestation>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct VerifierSession {
    keys: KeyPair,
    token: AuditorToken,
    auditor_public: PublicKey,
    prover_public: PublicKey,
    hw_root_public: PublicKey,
    measurement: Digest256,
    nonce: [u8; 32],
    asked: Vec<AskedQuestion>,
    question_counter: u32,
    k_max: u32,
    answers_received: u32,
    inbound: Vec<String>,
    outbound: Vec<String>,
}

/// Asks the Prover for T_a. Runs before [`establish`].
pub fn request_token(prover: &mut dyn Endpoint, verifier_public: PublicKey) -> Result<AuditorToken, AskError> {
    let (reply, _) = exchange(prover, &WireMessage::TokenRequest { verifier_public })
        .map_err(|TransportError(e)| AskError::Transport(e))?;
    match reply {
        WireMessage::Token(t) => Ok(t),
        WireMessage::Abort { cause } => Err(AskError::Aborted(cause)),
        _ => Err(AskError::Aborted(causes::UNEXPECTED_MESSAGE.into())),
    }
}

pub fn establish(
    keys: KeyPair,
    token: AuditorToken,
    hw_root_public: &PublicKey,
    prover_public: &PublicKey,
    expected_measurement: &Digest256,
) -> Result<VerifierSession, EstablishError> {
    token.check(prover_public, hw_root_public, expected_measurement)?;
    if token.verifier_public != keys.public_key() {
        return Err(EstablishError {
            layer: Layer::Token,
            cause: Cause::KeyMismatch("verifier_public"),
        });
    }
    let ticket = token.ticket().expect("session quote carries a ticket").clone();
    Ok(VerifierSession {
        auditor_public: token.quote.auditor_public,
        prover_public: *prover_public,
        hw_root_public: *hw_root_public,
        measurement: *expected_measurement,
        nonce: ticket.nonce,
        k_max: ticket.k_max,
        asked: Vec::new(),
        question_counter: 0,
        answers_received: 0,
        inbound: Vec::new(),
        outbound: Vec::new(),
        keys,
        token,
    })
}

/// `k_max · log2(alphabet)` bits.
///
/// # Panics
/// If `alphabet_size < 2`.
pub fn leakage_bound(k_max: u32, alphabet_size: u32) -> f64 {
    assert!(alphabet_size >= 2, "alphabet needs at least two symbols");
    k_max as f64 * (alphabet_size as f64).log2()
}

pub trait QuestionPlan {
    /// The next question given the history so far, or `None` to stop.
    fn next_question(&mut self, history: &[AskedQuestion]) -> Option<String>;
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedPlan {
    questions: Vec<String>,
    pos: usize,
}

impl ScriptedPlan {
    pub fn new<S: Into<String>>(questions: impl IntoIterator<Item = S>) -> Self {
        Self {
            questions: questions.into_iter().map(Into::into).collect(),
            pos: 0,
        }
    }
}

impl QuestionPlan for ScriptedPlan {
    fn next_question(&mut self, _: &[AskedQuestion]) -> Option<String> {
        let q = self.questions.get(self.pos).cloned();
        self.pos += 1;
        q
    }
}

/// Bit-by-bit extraction of a file, one question per bit, MSB first.
#[derive(Debug, Clone)]
pub struct BitExtractionPlan {
    pub path: String,
    pub bits: u32,
    next: u32,
}

impl BitExtractionPlan {
    pub fn new(path: &str, bits: u32) -> Self {
        Self {
            path: path.to_string(),
            bits,
            next: 0,
        }
    }

    pub fn question(path: &str, bit: u32) -> String {
        format!("Is bit {bit} of file '{path}' set?")
    }
}

impl QuestionPlan for BitExtractionPlan {
    fn next_question(&mut self, _: &[AskedQuestion]) -> Option<String> {
        (self.next < self.bits).then(|| {
            self.next += 1;
            Self::question(&self.path, self.next - 1)
        })
    }
}

#[derive(Debug, Clone)]
pub struct PlanReport {
    pub asked: Vec<AskedQuestion>,
    pub leakage_consumed: u32,
    pub leakage_bound: f64,
    pub budget_note: Option<String>,
    pub private_proof: Option<PrivateProof>,
}

impl PlanReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, q) in self.asked.iter().enumerate() {
            let verdict = q.verdict.map_or("none", Verdict::as_str);
            let status = if q.accepted { "pass" } else { "fail" };
            out.push_str(&format!("Q{} {verdict} {status} {}\n", i + 1, q.text));
        }
        out.push_str(&format!(
            "leakage {}/{} bits\n",
            self.leakage_consumed, self.leakage_bound
        ));
        if let Some(note) = &self.budget_note {
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

impl VerifierSession {
    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn token(&self) -> &AuditorToken {
        &self.token
    }

    pub fn auditor_public(&self) -> PublicKey {
        self.auditor_public
    }

    pub fn session_nonce(&self) -> [u8; 32] {
        self.nonce
    }

    pub fn asked(&self) -> &[AskedQuestion] {
        &self.asked
    }

    pub fn question_counter(&self) -> u32 {
        self.question_counter
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    /// Raw lines received from the Auditor.
    pub fn inbound(&self) -> &[String] {
        &self.inbound
    }

    pub fn outbound(&self) -> &[String] {
        &self.outbound
    }

    pub fn attestations(&self) -> Vec<PublicAttestation> {
        self.asked
            .iter()
            .filter(|q| q.accepted)
            .filter_map(|q| q.attestation.clone())
            .collect()
    }

    /// Two bits for every verdict received, accepted or not.
    pub fn leakage_consumed(&self) -> u32 {
        2 * self.answers_received
    }

    fn send(&mut self, auditor: &mut dyn Endpoint, msg: &WireMessage) -> Result<WireMessage, AskError> {
        let line = msg.to_line();
        self.outbound.push(line.clone());
        let raw = auditor
            .exchange_line(&line)
            .map_err(|TransportError(e)| AskError::Transport(e))?;
        self.inbound.push(raw.clone());
        match WireMessage::from_line(&raw) {
            Ok(WireMessage::Abort { cause }) => Err(AskError::Aborted(cause)),
            Ok(m) => Ok(m),
            Err(_) => Err(AskError::Aborted(causes::UNEXPECTED_MESSAGE.into())),
        }
    }

    /// Presents T_a to the Auditor.
    pub fn register(&mut self, auditor: &mut dyn Endpoint) -> Result<(), AskError> {
        match self.send(auditor, &WireMessage::Token(self.token.clone()))? {
            WireMessage::Ack => Ok(()),
            _ => Err(AskError::Aborted(causes::UNEXPECTED_MESSAGE.into())),
        }
    }

    pub fn ask(&mut self, text: &str, auditor: &mut dyn Endpoint) -> Result<Verdict, AskError> {
        if self.question_counter >= self.k_max {
            return Err(AskError::Budget { k_max: self.k_max });
        }
        self.question_counter += 1;
        let cq = self.question_counter;
        let signed = SignedQuestion::sign(&self.keys, text, cq, &self.nonce);
        let mut record = AskedQuestion {
            text: text.to_string(),
            verdict: None,
            attestation: None,
            accepted: false,
        };
        let answer = match self.send(auditor, &WireMessage::Question(signed)) {
            Ok(WireMessage::Answer(a)) => a,
            Ok(_) => {
                self.asked.push(record);
                return Err(AskError::Aborted(causes::UNEXPECTED_MESSAGE.into()));
            }
            Err(e) => {
                self.asked.push(record);
                return Err(e);
            }
        };
        self.answers_received += 1;
        record.verdict = Some(answer.verdict);
        record.attestation = answer.attestation.clone();
        let checked = self.check_attestation(answer.verdict, answer.attestation.as_ref(), text, cq);
        record.accepted = checked.is_ok();
        self.asked.push(record);
        checked.map(|_| answer.verdict).map_err(AskError::Attestation)
    }

    fn check_attestation(
        &self,
        verdict: Verdict,
        att: Option<&PublicAttestation>,
        text: &str,
        cq: u32,
    ) -> Result<(), AttestationFault> {
        let att = att.ok_or(AttestationFault::Missing)?;
        att.check(&self.prover_public, &self.hw_root_public, &self.measurement)
            .map_err(AttestationFault::Artifact)?;
        if att.auditor_public() != self.auditor_public {
            return Err(AttestationFault::AuditorKey);
        }
        if att.receipt.token != self.token {
            return Err(AttestationFault::Token);
        }
        if att.receipt.question_count != cq {
            return Err(AttestationFault::CountEcho {
                sent: cq,
                echoed: att.receipt.question_count,
            });
        }
        if att.receipt.verdict != verdict {
            return Err(AttestationFault::VerdictMismatch);
        }
        if att.question_text != text {
            return Err(AttestationFault::QuestionText);
        }
        Ok(())
    }

    /// Sends the end-of-audit message and waits for Γ_priv.
    pub fn end(&mut self, auditor: &mut dyn Endpoint) -> Result<PrivateProof, AskError> {
        let end = EndOfAudit::sign(&self.keys, self.question_counter, &self.nonce);
        match self.send(auditor, &WireMessage::EndOfAudit(end))? {
            WireMessage::PrivateProof(p) => Ok(p),
            _ => Err(AskError::Aborted(causes::UNEXPECTED_MESSAGE.into())),
        }
    }

    /// Asks until the plan stops or the budget runs out, then ends the audit.
    /// Rejected attestations are reported, not fatal.
    pub fn run_plan(
        &mut self,
        plan: &mut dyn QuestionPlan,
        auditor: &mut dyn Endpoint,
    ) -> Result<PlanReport, AskError> {
        let mut budget_note = None;
        while let Some(q) = plan.next_question(&self.asked) {
            match self.ask(&q, auditor) {
                Ok(_) | Err(AskError::Attestation(_)) => {}
                Err(AskError::Budget { k_max }) => {
                    budget_note = Some(format!("budget: stopped at k_max={k_max}, plan truncated"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let proof = self.end(auditor)?;
        Ok(PlanReport {
            asked: self.asked.clone(),
            leakage_consumed: self.leakage_consumed(),
            leakage_bound: leakage_bound(self.k_max, VERDICT_ALPHABET),
            budget_note,
            private_proof: Some(proof),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleItem {
    pub index: usize,
    pub question_text: String,
    pub result: Result<(), ArtifactError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleReport {
    pub items: Vec<BundleItem>,
}

impl BundleReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.result.is_ok())
    }

    pub fn to_text(&self) -> String {
        self.items
            .iter()
            .map(|i| match &i.result {
                Ok(()) => format!("attestation {} pass\n", i.index),
                Err(e) => format!("attestation {} fail {e}\n", i.index),
            })
            .collect()
    }
}

/// Offline re-check of received attestations. Every item must belong to one
/// session: `expected_nonce`, or the first item's when not given.
pub fn verify_attestation_bundle(
    bundle: &[PublicAttestation],
    prover_public: &PublicKey,
    hw_root_public: &PublicKey,
    expected_measurement: &Digest256,
    expected_nonce: Option<[u8; 32]>,
) -> BundleReport {
    let nonce = expected_nonce.or_else(|| bundle.first().and_then(|a| a.session_nonce()));
    let items = bundle
        .iter()
        .enumerate()
        .map(|(index, a)| {
            let result = a
                .check(prover_public, hw_root_public, expected_measurement)
                .and_then(|_| {
                    if a.session_nonce() == nonce {
                        Ok(())
                    } else {
                        Err(ArtifactError::new(Layer::Ticket, Cause::NonceMismatch))
                    }
                });
            BundleItem {
                index,
                question_text: a.question_text.clone(),
                result,
            }
        })
        .collect();
    BundleReport { items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::digest;
    use crate::messages::fixtures::{attestation, parties, token};
    use crate::messages::{issue_public_attestation, VerdictAnswer};
    use proptest::prelude::*;

    #[test]
    fn leakage_bound_values() {
        assert_eq!(leakage_bound(40, 4), 80.0);
        assert_eq!(leakage_bound(1, 2), 1.0);
        assert_eq!(leakage_bound(52, 4), 104.0);
        assert_eq!(leakage_bound(0, 4), 0.0);
    }

    #[test]
    fn establish_layers() {
        let p = parties(1);
        let t = token(&p, 40);
        let hw = p.hw.public_key();
        let pp = p.prover.public_key();
        establish(p.verifier.clone(), t.clone(), &hw, &pp, &p.measurement).unwrap();

        let other = parties(2);
        let e = establish(other.verifier.clone(), t.clone(), &hw, &pp, &p.measurement).unwrap_err();
        assert_eq!(
            (e.layer, e.cause),
            (Layer::Token, Cause::KeyMismatch("verifier_public"))
        );

        let e = establish(p.verifier.clone(), t.clone(), &hw, &pp, &digest(b"m2")).unwrap_err();
        assert_eq!((e.layer, e.cause), (Layer::Quote, Cause::Measurement));

        let mut bad = t;
        bad.quote.address.push('x');
        let e = establish(p.verifier.clone(), bad, &hw, &pp, &p.measurement).unwrap_err();
        assert_eq!((e.layer, e.cause), (Layer::Quote, Cause::Signature));
    }

    /// Answers every question with a correctly attested `true`.
    struct FakeAuditor {
        p: crate::messages::fixtures::Parties,
        token: AuditorToken,
        tamper: bool,
        questions_seen: u32,
    }

    impl Endpoint for FakeAuditor {
        fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
            let reply = match WireMessage::from_line(line).unwrap() {
                WireMessage::Question(q) => {
                    self.questions_seen += 1;
                    let receipt = crate::messages::issue_verdict_receipt(
                        &self.p.prover,
                        digest(b"head"),
                        Verdict::True,
                        &self.token,
                        q.question_count,
                    )
                    .unwrap();
                    let mut att = issue_public_attestation(&self.p.auditor, &receipt, &q.text);
                    if self.tamper {
                        att.receipt.head = digest(b"other");
                    }
                    WireMessage::Answer(VerdictAnswer {
                        verdict: Verdict::True,
                        attestation: Some(att),
                    })
                }
                WireMessage::EndOfAudit(_) => WireMessage::PrivateProof(PrivateProof {
                    sealed: crate::crypto::seal(&self.p.prover.public_key(), b"log", &digest(b"")).unwrap(),
                    binding: digest(b""),
                }),
                _ => WireMessage::Ack,
            };
            Ok(reply.to_line())
        }
    }

    fn session(seed: u8, k_max: u32, tamper: bool) -> (VerifierSession, FakeAuditor) {
        let p = parties(seed);
        let t = token(&p, k_max);
        let v = establish(
            p.verifier.clone(),
            t.clone(),
            &p.hw.public_key(),
            &p.prover.public_key(),
            &p.measurement,
        )
        .unwrap();
        (
            v,
            FakeAuditor {
                p,
                token: t,
                tamper,
                questions_seen: 0,
            },
        )
    }

    #[test]
    fn ask_accepts_attested_verdict() {
        let (mut v, mut a) = session(3, 40, false);
        assert_eq!(v.ask("q?", &mut a).unwrap(), Verdict::True);
        assert_eq!(v.leakage_consumed(), 2);
        assert_eq!(v.attestations().len(), 1);
    }

    #[test]
    fn tampered_attestation_discarded_but_counted() {
        let (mut v, mut a) = session(4, 40, true);
        let e = v.ask("q?", &mut a).unwrap_err();
        assert!(matches!(
            e,
            AskError::Attestation(AttestationFault::Artifact(ArtifactError {
                layer: Layer::Receipt,
                ..
            }))
        ));
        assert_eq!(v.question_counter(), 1);
        assert!(v.attestations().is_empty());
        assert!(!v.asked()[0].accepted);
    }

    #[test]
    fn budget_refused_without_sending() {
        let (mut v, mut a) = session(5, 2, false);
        v.ask("a", &mut a).unwrap();
        v.ask("b", &mut a).unwrap();
        let sent = v.outbound().len();
        assert_eq!(v.ask("c", &mut a), Err(AskError::Budget { k_max: 2 }));
        assert_eq!(v.outbound().len(), sent);
        assert_eq!(a.questions_seen, 2);
    }

    #[test]
    fn plan_report_shapes() {
        let (mut v, mut a) = session(6, 40, false);
        let r = v.run_plan(&mut ScriptedPlan::new(["a", "b", "c"]), &mut a).unwrap();
        assert_eq!(r.asked.len(), 3);
        assert_eq!(r.leakage_consumed, 6);
        assert_eq!(r.to_text().lines().last().unwrap(), "leakage 6/80 bits");
        assert!(r.to_text().starts_with("Q1 true pass a\n"));

        let (mut v, mut a) = session(7, 3, false);
        let r = v
            .run_plan(&mut ScriptedPlan::new(["1", "2", "3", "4", "5"]), &mut a)
            .unwrap();
        assert_eq!(r.asked.len(), 3);
        assert!(r.budget_note.is_some());

        let (mut v, mut a) = session(8, 3, false);
        let r = v.run_plan(&mut ScriptedPlan::default(), &mut a).unwrap();
        assert!(r.asked.is_empty());
        assert!(r.private_proof.is_some());
        assert!(v.outbound().last().unwrap().contains("end_of_audit"));
    }

    #[test]
    fn bundle_localizes_failures() {
        let p = parties(9);
        let hw = p.hw.public_key();
        let pp = p.prover.public_key();
        let good: Vec<_> = (1..=3).map(|i| attestation(&p, digest(&[i]), i as u32, "q")).collect();
        assert!(verify_attestation_bundle(&good, &pp, &hw, &p.measurement, None).all_pass());

        let mut altered = good.clone();
        altered[1].receipt.head = digest(b"x");
        let r = verify_attestation_bundle(&altered, &pp, &hw, &p.measurement, None);
        assert_eq!(r.items[1].result.as_ref().unwrap_err().layer, Layer::Receipt);
        assert!(r.items[0].result.is_ok() && r.items[2].result.is_ok());

        // an attestation from another session of the same prover
        let mut spliced = good.clone();
        let foreign = {
            let t = crate::messages::fixtures::ticket(&p, 40);
            let mut t2 = t.clone();
            t2.nonce = [0xee; 32];
            t2.signature = p.prover.sign(&t2.signing_bytes());
            let q = crate::messages::issue_quote(&p.hw, p.measurement, p.auditor.public_key(), Some(t2), "x");
            let tok =
                crate::messages::issue_token(&p.prover, &q, p.verifier.public_key(), &hw, &p.measurement).unwrap();
            let rec = crate::messages::issue_verdict_receipt(&p.prover, digest(b"z"), Verdict::False, &tok, 1).unwrap();
            issue_public_attestation(&p.auditor, &rec, "q")
        };
        spliced[2] = foreign;
        let r = verify_attestation_bundle(&spliced, &pp, &hw, &p.measurement, None);
        assert_eq!(
            r.items[2].result,
            Err(ArtifactError::new(Layer::Ticket, Cause::NonceMismatch))
        );
    }

    #[test]
    fn extraction_plan_questions() {
        let mut plan = BitExtractionPlan::new("s.bin", 2);
        assert_eq!(plan.next_question(&[]).unwrap(), "Is bit 0 of file 's.bin' set?");
        assert_eq!(plan.next_question(&[]).unwrap(), "Is bit 1 of file 's.bin' set?");
        assert_eq!(plan.next_question(&[]), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn never_sends_more_than_k_max(k_max in 1u32..12, asks in 0usize..20, tamper: bool) {
            let (mut v, mut a) = session(10, k_max, tamper);
            let plan: Vec<String> = (0..asks).map(|i| format!("q{i}")).collect();
            let r = v.run_plan(&mut ScriptedPlan::new(plan), &mut a).unwrap();
            prop_assert!(a.questions_seen <= k_max);
            prop_assert_eq!(a.questions_seen as usize, asks.min(k_max as usize));
            prop_assert!(r.leakage_consumed as f64 <= r.leakage_bound);
            for (i, line) in v.outbound().iter().enumerate() {
                if let Ok(WireMessage::Question(q)) = WireMessage::from_line(line) {
                    prop_assert_eq!(q.question_count as usize, i + 1);
                }
            }
        }
    }
}
