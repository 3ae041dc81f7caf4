// SPDX-License-Identifier: Apache-2.0

//! Session orchestration, the adversary scenarios, the state explorer and
//! the offline artifact verifier.

pub mod artifacts;
pub mod config;
pub mod explorer;
pub mod extraction;
pub mod fixtures;
pub mod run;
pub mod scenario;
pub mod secrecy;
pub mod transport;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::auditor::oracle::OracleFactory;
use crate::auditor::{AuditorConfig, AuditorLink, AuditorOutput, AuditorSession};
use crate::crypto::{digest, Digest256, KeyPair, Role};
use crate::messages::{causes, Endpoint, TransportError};
use crate::prover::{ProverSession, ToolServer, TrustAnchor};
use crate::verifier::{establish, request_token, PlanReport, QuestionPlan, VerifierSession};

/// Label hashed into the emulated enclave measurement.
pub const AUDITOR_IMAGE: &[u8] = b"aw-auditor-image/1";

pub fn auditor_measurement() -> Digest256 {
    digest(AUDITOR_IMAGE)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Completed,
    Aborted(String),
    /// An artifact or signature check refused the peer.
    Rejected(String),
}

impl Outcome {
    pub fn from_cause(cause: &str) -> Self {
        if causes::is_rejection(cause) {
            Outcome::Rejected(cause.to_string())
        } else {
            Outcome::Aborted(cause.to_string())
        }
    }

    pub fn cause(&self) -> Option<&str> {
        match self {
            Outcome::Completed => None,
            Outcome::Aborted(c) | Outcome::Rejected(c) => Some(c),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Completed => f.write_str("completed"),
            Outcome::Aborted(c) => write!(f, "aborted({c})"),
            Outcome::Rejected(c) => write!(f, "rejected({c})"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "completed" {
            return Ok(Outcome::Completed);
        }
        let inner = |p: &str| s.strip_prefix(p).and_then(|r| r.strip_suffix(')')).map(str::to_string);
        inner("aborted(")
            .map(Outcome::Aborted)
            .or_else(|| inner("rejected(").map(Outcome::Rejected))
            .ok_or_else(|| format!("unknown outcome {s:?}"))
    }
}

/// Every key of a simulated deployment, derived from one seed.
#[derive(Debug, Clone)]
pub struct Identities {
    pub prover: KeyPair,
    pub verifier: KeyPair,
    pub hw: KeyPair,
    pub auditor_seed: [u8; 32],
    pub measurement: Digest256,
}

impl Identities {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut next = || {
            let mut b = [0u8; 32];
            rng.fill_bytes(&mut b);
            b
        };
        let key = |b: [u8; 32], role| KeyPair::generate(Some(&b[..]), role).expect("32-byte seed");
        Self {
            prover: key(next(), Role::Prover),
            verifier: key(next(), Role::Verifier),
            hw: key(next(), Role::HardwareRoot),
            auditor_seed: next(),
            measurement: auditor_measurement(),
        }
    }

    pub fn trust(&self) -> TrustAnchor {
        TrustAnchor {
            hw_root_public: self.hw.public_key(),
            measurement: self.measurement,
        }
    }

    pub fn auditor_config(&self) -> AuditorConfig {
        let mut c = AuditorConfig::new(self.measurement, self.hw.clone());
        c.expected_prover = Some(self.prover.public_key());
        c
    }

    pub fn boot_auditor(&self) -> AuditorSession {
        crate::auditor::boot_seeded(self.auditor_config(), &self.auditor_seed).0
    }
}

/// The Prover's side of the auditor channel, optionally serving tool results
/// from somewhere other than its own corpus.
pub struct ProverLink<'a> {
    pub prover: &'a mut ProverSession,
    pub server: Option<&'a dyn ToolServer>,
}

impl<'a> ProverLink<'a> {
    pub fn honest(prover: &'a mut ProverSession) -> Self {
        Self { prover, server: None }
    }
}

impl Endpoint for ProverLink<'_> {
    fn exchange_line(&mut self, line: &str) -> Result<String, TransportError> {
        Ok(self.prover.handle_line_with(line, self.server))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub handshake: Duration,
    /// Questions plus the end-of-audit exchange.
    pub questions: Duration,
    pub oracle: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.handshake + self.questions
    }

    pub fn oracle_share(&self) -> f64 {
        let t = self.total().as_secs_f64();
        if t == 0.0 {
            0.0
        } else {
            self.oracle.as_secs_f64() / t
        }
    }
}

pub struct ProtocolRun {
    pub outcome: Outcome,
    pub verifier: Option<VerifierSession>,
    pub report: Option<PlanReport>,
    pub auditor_output: Option<AuditorOutput>,
    pub timings: Timings,
}

/// Handshake, token, plan and end of audit, all in-process. `prover` is the
/// Auditor's (and the Verifier's) line channel to the Prover.
pub fn run_protocol(
    ids: &Identities,
    auditor: &mut AuditorSession,
    prover: &mut dyn Endpoint,
    plan: &mut dyn QuestionPlan,
    oracles: &dyn OracleFactory,
) -> ProtocolRun {
    let mut run = ProtocolRun {
        outcome: Outcome::Completed,
        verifier: None,
        report: None,
        auditor_output: None,
        timings: Timings::default(),
    };
    let started = Instant::now();
    if let Err(a) = auditor.handshake(prover) {
        run.outcome = Outcome::from_cause(&a.cause);
        return run;
    }
    let token = match request_token(prover, ids.verifier.public_key()) {
        Ok(t) => t,
        Err(e) => {
            run.outcome = Outcome::from_cause(e.abort_cause().unwrap_or(causes::BAD_TOKEN));
            return run;
        }
    };
    let verifier = establish(
        ids.verifier.clone(),
        token,
        &ids.hw.public_key(),
        &ids.prover.public_key(),
        &ids.measurement,
    );
    let mut verifier = match verifier {
        Ok(v) => v,
        Err(_) => {
            run.outcome = Outcome::Rejected(causes::BAD_TOKEN.into());
            return run;
        }
    };
    run.timings.handshake = started.elapsed();

    let started = Instant::now();
    let mut link = AuditorLink::new(auditor, oracles, prover);
    let result = verifier
        .register(&mut link)
        .and_then(|_| verifier.run_plan(plan, &mut link));
    run.auditor_output = link.output.take();
    run.timings.questions = started.elapsed();
    match result {
        Ok(report) => run.report = Some(report),
        Err(e) => run.outcome = Outcome::from_cause(e.abort_cause().unwrap_or(causes::UNEXPECTED_MESSAGE)),
    }
    if let Some(out) = &run.auditor_output {
        run.timings.oracle = out.oracle_time;
    }
    run.verifier = Some(verifier);
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_round_trip() {
        for o in [
            Outcome::Completed,
            Outcome::Aborted("file_digest_mismatch".into()),
            Outcome::Rejected("bad_head_signature".into()),
        ] {
            assert_eq!(o.to_string().parse::<Outcome>().unwrap(), o);
        }
        assert!("done".parse::<Outcome>().is_err());
        assert_eq!(Outcome::from_cause("bad_quote"), Outcome::Rejected("bad_quote".into()));
        assert_eq!(
            Outcome::from_cause("search_omission"),
            Outcome::Aborted("search_omission".into())
        );
    }

    #[test]
    fn identities_are_seed_determined() {
        let a = Identities::from_seed(1);
        let b = Identities::from_seed(1);
        let c = Identities::from_seed(2);
        assert_eq!(a.prover.public_key(), b.prover.public_key());
        assert_ne!(a.prover.public_key(), c.prover.public_key());
        assert_ne!(a.prover.public_key(), a.verifier.public_key());
    }
}
