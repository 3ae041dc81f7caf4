// SPDX-License-Identifier: Apache-2.0

//! Session artifacts on disk and their offline verification.
//!
//! Layout of an artifact directory:
//!
//! ```text
//! anchors.txt        trust anchors: hw_root_public, measurement, prover_public
//! session.aw         ticket, session quote, signed manifest, token (wire lines)
//! transcript.txt     exported hash chain
//! final_head.aw      dual-signed final head
//! attestations.txt   one hex-encoded public attestation per line
//! private_proof.aw   sealed audit log
//! prover/locker.txt  the Prover's evidence locker
//! prover/prover.key  the Prover's signing seed (hex); keep out of shared copies
//! ```

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use crate::corpus::{corpus_hash, CallKind};
use crate::crypto::{decode_lower_hex, Digest256, KeyPair, PublicKey, Role};
use crate::messages::{
    attestation_set_digest, open_private_proof, AuditorToken, EnclaveQuote, PrivateProof, PublicAttestation, QuoteForm,
    SessionTicket, SignedManifest, WireMessage,
};
use crate::prover::{EvidenceLocker, ProverSession};
use crate::transcript::{chain_verify, export_transcript, genesis, import_transcript, ChainEntry, FinalHeadRecord};
use crate::verifier::verify_attestation_bundle;

pub const ANCHORS: &str = "anchors.txt";
pub const SESSION: &str = "session.aw";
pub const TRANSCRIPT: &str = "transcript.txt";
pub const FINAL_HEAD: &str = "final_head.aw";
pub const ATTESTATIONS: &str = "attestations.txt";
pub const PRIVATE_PROOF: &str = "private_proof.aw";
pub const LOCKER: &str = "prover/locker.txt";
pub const PROVER_KEY: &str = "prover/prover.key";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchors {
    pub hw_root_public: PublicKey,
    pub measurement: Digest256,
    pub prover_public: PublicKey,
}

impl Anchors {
    pub fn to_text(&self) -> String {
        format!(
            "hw_root_public = {}\nmeasurement = {}\nprover_public = {}\n",
            self.hw_root_public, self.measurement, self.prover_public
        )
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut hw = None;
        let mut meas = None;
        let mut prover = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or("expected key = value")?;
            let v = v.trim();
            match k.trim() {
                "hw_root_public" => hw = Some(PublicKey::from_hex(v).map_err(|e| e.to_string())?),
                "measurement" => meas = Some(Digest256::from_hex(v).map_err(|e| e.to_string())?),
                "prover_public" => prover = Some(PublicKey::from_hex(v).map_err(|e| e.to_string())?),
                other => return Err(format!("unknown key {other}")),
            }
        }
        Ok(Self {
            hw_root_public: hw.ok_or("missing hw_root_public")?,
            measurement: meas.ok_or("missing measurement")?,
            prover_public: prover.ok_or("missing prover_public")?,
        })
    }
}

/// Everything a session leaves behind. Optional parts are absent when the
/// session aborted before producing them.
#[derive(Debug, Clone)]
pub struct SessionArtifacts {
    pub anchors: Anchors,
    pub ticket: SessionTicket,
    pub manifest: SignedManifest,
    pub session_quote: Option<EnclaveQuote>,
    pub token: Option<AuditorToken>,
    pub transcript: String,
    pub final_head: Option<FinalHeadRecord>,
    pub attestations: Vec<PublicAttestation>,
    pub private_proof: Option<PrivateProof>,
    pub locker: String,
    pub prover_key: [u8; 32],
}

impl SessionArtifacts {
    /// Gathers the Prover-held artifacts plus the attestations the Verifier accepted.
    pub fn collect(prover: &ProverSession, attestations: Vec<PublicAttestation>, anchors: Anchors) -> Self {
        Self {
            anchors,
            ticket: prover.ticket().clone(),
            manifest: prover.signed_manifest().clone(),
            session_quote: prover.session_quote().cloned(),
            token: prover.token().cloned(),
            transcript: prover
                .chain()
                .map(|c| export_transcript(&c.entries))
                .unwrap_or_default(),
            final_head: prover.final_record().cloned(),
            attestations,
            private_proof: prover.private_proof().cloned(),
            locker: prover.locker_export(),
            prover_key: prover.keys().seed_bytes(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("prover"))?;
        fs::write(dir.join(ANCHORS), self.anchors.to_text())?;
        let mut session = vec![
            WireMessage::Ticket(self.ticket.clone()),
            WireMessage::Manifest(self.manifest.clone()),
        ];
        session.extend(self.session_quote.clone().map(WireMessage::SessionQuote));
        session.extend(self.token.clone().map(WireMessage::Token));
        let lines: String = session.iter().map(|m| m.to_line() + "\n").collect();
        fs::write(dir.join(SESSION), lines)?;
        fs::write(dir.join(TRANSCRIPT), &self.transcript)?;
        if let Some(f) = &self.final_head {
            fs::write(dir.join(FINAL_HEAD), WireMessage::FinalHead(f.clone()).to_line() + "\n")?;
        }
        let atts: String = self
            .attestations
            .iter()
            .map(|a| hex::encode(a.encode()) + "\n")
            .collect();
        fs::write(dir.join(ATTESTATIONS), atts)?;
        if let Some(p) = &self.private_proof {
            fs::write(
                dir.join(PRIVATE_PROOF),
                WireMessage::PrivateProof(p.clone()).to_line() + "\n",
            )?;
        }
        fs::write(dir.join(LOCKER), &self.locker)?;
        fs::write(dir.join(PROVER_KEY), hex::encode(self.prover_key) + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail(String),
    Missing,
    /// The private proof is intact but was not opened.
    Sealed(String),
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Pass => f.write_str("pass"),
            Status::Fail(why) => write!(f, "fail {why}"),
            Status::Missing => f.write_str("missing"),
            Status::Sealed(why) => write!(f, "sealed ({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactReport {
    pub checks: Vec<(&'static str, Status)>,
}

impl ArtifactReport {
    pub fn passed(&self) -> bool {
        self.checks
            .iter()
            .all(|(_, s)| matches!(s, Status::Pass | Status::Sealed(_)))
    }

    pub fn status(&self, name: &str) -> Option<&Status> {
        self.checks.iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }

    pub fn to_text(&self) -> String {
        self.checks.iter().map(|(n, s)| format!("{n} {s}\n")).collect()
    }
}

fn read_opt(dir: &Path, name: &str) -> Option<String> {
    fs::read_to_string(dir.join(name)).ok()
}

fn single_wire(text: &str) -> Result<WireMessage, String> {
    WireMessage::from_line(text.trim_end()).map_err(|e| e.to_string())
}

/// Replays and cross-checks an artifact directory. With `prover_key` the
/// private proof is opened as well; a key that is not the Prover's leaves it
/// reported as sealed.
pub fn verify_artifacts(dir: &Path, prover_key: Option<&Path>) -> ArtifactReport {
    let mut checks: Vec<(&'static str, Status)> = Vec::new();
    let fail = |s: String| Status::Fail(s);

    let anchors = match read_opt(dir, ANCHORS).map(|t| Anchors::from_text(&t)) {
        Some(Ok(a)) => {
            checks.push(("anchors", Status::Pass));
            a
        }
        Some(Err(e)) => {
            checks.push(("anchors", fail(e)));
            return ArtifactReport { checks };
        }
        None => {
            checks.push(("anchors", Status::Missing));
            return ArtifactReport { checks };
        }
    };
    let (hw, meas, ppk) = (anchors.hw_root_public, anchors.measurement, anchors.prover_public);

    let mut ticket = None;
    let mut manifest = None;
    let mut quote = None;
    let mut token = None;
    match read_opt(dir, SESSION) {
        None => checks.push(("session", Status::Missing)),
        Some(text) => {
            let mut bad = None;
            for (n, line) in text.lines().enumerate() {
                match WireMessage::from_line(line) {
                    Ok(WireMessage::Ticket(t)) => ticket = Some(t),
                    Ok(WireMessage::Manifest(m)) => manifest = Some(m),
                    Ok(WireMessage::SessionQuote(q)) => quote = Some(q),
                    Ok(WireMessage::Token(t)) => token = Some(t),
                    Ok(other) => bad = Some(format!("line {}: unexpected {}", n + 1, other.kind())),
                    Err(e) => bad = Some(format!("line {}: {e}", n + 1)),
                }
            }
            checks.push(("session", bad.map_or(Status::Pass, fail)));
        }
    }

    let Some(ticket) = ticket else {
        checks.push(("ticket", Status::Missing));
        return ArtifactReport { checks };
    };
    let ticket_status = match ticket.check() {
        Err(e) => fail(e.to_string()),
        Ok(()) if ticket.prover_public != ppk => fail("ticket signed by another prover".into()),
        Ok(()) => Status::Pass,
    };
    checks.push(("ticket", ticket_status));

    let corpus_digest = manifest.as_ref().map(|m| m.manifest.corpus_digest);
    checks.push((
        "manifest",
        match &manifest {
            None => Status::Missing,
            Some(m) if !m.verify(&ppk) => fail("bad signature".into()),
            Some(m) if m.session_nonce != ticket.nonce => fail("nonce differs from ticket".into()),
            Some(m) if !m.manifest.is_canonically_ordered() => fail("entries out of order".into()),
            Some(m) if corpus_hash(&m.manifest.entries) != m.manifest.corpus_digest => {
                fail("corpus hash does not match entries".into())
            }
            Some(_) => Status::Pass,
        },
    ));

    checks.push((
        "session_quote",
        match &quote {
            None => Status::Missing,
            Some(q) => match q.check(&hw, &meas, Some(QuoteForm::Session)) {
                Err(e) => fail(e.to_string()),
                Ok(()) if q.ticket.as_ref() != Some(&ticket) => fail("embeds another ticket".into()),
                Ok(()) => Status::Pass,
            },
        },
    ));
    let auditor_public = quote.as_ref().map(|q| q.auditor_public);

    checks.push((
        "token",
        match &token {
            None => Status::Missing,
            Some(t) => match t.check(&ppk, &hw, &meas) {
                Err(e) => fail(e.to_string()),
                Ok(()) if Some(&t.quote) != quote.as_ref() => fail("binds another quote".into()),
                Ok(()) => Status::Pass,
            },
        },
    ));

    let final_head = match read_opt(dir, FINAL_HEAD).map(|t| single_wire(&t)) {
        None => None,
        Some(Ok(WireMessage::FinalHead(r))) => Some(Ok(r)),
        Some(Ok(other)) => Some(Err(format!("unexpected {}", other.kind()))),
        Some(Err(e)) => Some(Err(e)),
    };

    let entries: Option<Vec<ChainEntry>> = match read_opt(dir, TRANSCRIPT) {
        None => {
            checks.push(("transcript", Status::Missing));
            None
        }
        Some(text) => match import_transcript(&text) {
            Err(e) => {
                checks.push(("transcript", fail(format!("line {}: {}", e.line, e.reason))));
                None
            }
            Ok(entries) => {
                let status = match (corpus_digest, auditor_public, &final_head) {
                    (Some(cd), Some(apk), Some(Ok(rec))) => {
                        let r = chain_verify(&cd, &ticket, &entries, &rec.head, &ppk, &apk);
                        match r.failure {
                            None => Status::Pass,
                            Some((i, cause)) => fail(format!("entry {i}: {cause}")),
                        }
                    }
                    _ => fail("manifest, quote or final head unavailable".into()),
                };
                checks.push(("transcript", status));
                Some(entries)
            }
        },
    };

    checks.push((
        "final_head",
        match (&final_head, auditor_public) {
            (None, _) => Status::Missing,
            (Some(Err(e)), _) => fail(e.clone()),
            (Some(Ok(_)), None) => fail("auditor key unavailable".into()),
            (Some(Ok(rec)), Some(apk)) if !rec.verify(&ppk, &apk) => fail("bad signature".into()),
            (Some(Ok(rec)), _) if entries.as_ref().is_some_and(|e| e.len() != rec.length as usize) => {
                fail("length differs from transcript".into())
            }
            (Some(Ok(_)), _) => Status::Pass,
        },
    ));

    let parsed: Option<Result<Vec<PublicAttestation>, String>> = read_opt(dir, ATTESTATIONS).map(|text| {
        text.lines()
            .enumerate()
            .map(|(n, l)| {
                decode_lower_hex(l)
                    .map_err(|e| e.to_string())
                    .and_then(|b| PublicAttestation::decode(&b).map_err(|e| e.to_string()))
                    .map_err(|e| format!("attestation {}: {e}", n + 1))
            })
            .collect()
    });
    let attestations = parsed.as_ref().and_then(|p| p.as_ref().ok());
    let attestation_status = match &parsed {
        None => Status::Missing,
        Some(Err(e)) => fail(e.clone()),
        Some(Ok(atts)) => {
            let bundle = verify_attestation_bundle(atts, &ppk, &hw, &meas, Some(ticket.nonce));
            let verdict_heads = pre_verdict_heads(entries.as_deref(), corpus_digest, &ticket);
            match bundle.items.iter().find(|i| i.result.is_err()) {
                Some(item) => fail(format!(
                    "attestation {}: {}",
                    item.index + 1,
                    item.result.as_ref().unwrap_err()
                )),
                None => match verdict_heads.and_then(|h| atts.iter().position(|a| !h.contains(&a.receipt.head))) {
                    Some(i) => fail(format!("attestation {}: head not in transcript", i + 1)),
                    None => Status::Pass,
                },
            }
        }
    };
    checks.push(("attestations", attestation_status));

    let proof = read_opt(dir, PRIVATE_PROOF).map(|t| match single_wire(&t) {
        Ok(WireMessage::PrivateProof(p)) => Ok(p),
        Ok(other) => Err(format!("unexpected {}", other.kind())),
        Err(e) => Err(e),
    });
    checks.push((
        "private_proof",
        match (proof, attestations) {
            (None, _) => Status::Missing,
            (Some(Err(e)), _) => fail(e),
            (Some(Ok(_)), None) => fail("attestations unavailable".into()),
            (Some(Ok(p)), Some(atts)) => {
                let binding = attestation_set_digest(atts);
                if p.binding != binding {
                    fail("not bound to this attestation set".into())
                } else {
                    open_proof(&p, &binding, prover_key, &ppk, entries.as_deref(), &final_head)
                }
            }
        },
    ));

    checks.push((
        "locker",
        match read_opt(dir, LOCKER).map(|t| EvidenceLocker::import(&t)) {
            None => Status::Missing,
            Some(Err(e)) => fail(e.to_string()),
            Some(Ok(_)) => Status::Pass,
        },
    ));
    ArtifactReport { checks }
}

/// Heads the receipts should name: the head just before each verdict entry.
fn pre_verdict_heads(
    entries: Option<&[ChainEntry]>,
    corpus_digest: Option<Digest256>,
    ticket: &SessionTicket,
) -> Option<Vec<Digest256>> {
    let (entries, cd) = (entries?, corpus_digest?);
    let mut prev = genesis(&cd, ticket);
    let mut heads = Vec::new();
    for e in entries {
        if e.call.kind == CallKind::Verdict {
            heads.push(prev);
        }
        prev = e.head_after;
    }
    Some(heads)
}

fn open_proof(
    proof: &PrivateProof,
    binding: &Digest256,
    key_file: Option<&Path>,
    prover_public: &PublicKey,
    entries: Option<&[ChainEntry]>,
    final_head: &Option<Result<FinalHeadRecord, String>>,
) -> Status {
    let Some(path) = key_file else {
        return Status::Sealed("no key supplied".into());
    };
    let keys = fs::read_to_string(path)
        .ok()
        .and_then(|t| decode_lower_hex(t.trim()).ok())
        .and_then(|seed| KeyPair::generate(Some(&seed), Role::Prover).ok());
    let Some(keys) = keys else {
        return Status::Fail("unreadable key file".into());
    };
    if keys.public_key() != *prover_public {
        return Status::Sealed("cannot open".into());
    }
    match open_private_proof(&keys, proof, binding) {
        Err(e) => Status::Fail(e.to_string()),
        Ok(log) if !log.is_consistent() => Status::Fail("audit log inconsistent".into()),
        Ok(log) if entries.is_some_and(|e| e != log.entries.as_slice()) => {
            Status::Fail("audit log differs from transcript".into())
        }
        Ok(log) if matches!(final_head, Some(Ok(r)) if r.head != log.final_head) => {
            Status::Fail("audit log head differs from final head".into())
        }
        Ok(_) => Status::Pass,
    }
}
