// SPDX-License-Identifier: Apache-2.0

//! The transcript hash chain shared by Prover and Auditor.
//!
//! `H_0 = H(corpus ∥ ticket)` and `H_i = H(H_{i-1} ∥ q_i ∥ a_i)`, with every
//! composite built by canonical encoding. Each exchange carries both parties'
//! signatures over the head *before* the entry is applied, so a party that
//! signs a different head than its peer holds is caught on the next message.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{ToolCall, ToolResult};
use crate::crypto::{
    decode_lower_hex, digest, verify, DecodeError, Digest256, FieldReader, FieldWriter, KeyPair, PublicKey, Signature,
};
use crate::messages::SessionTicket;
use crate::par;

const V_HEAD: &str = "aw/1/head";
const V_FINAL: &str = "aw/1/final";

pub fn genesis(corpus_digest: &Digest256, ticket: &SessionTicket) -> Digest256 {
    digest(
        &FieldWriter::new()
            .put("corpus", corpus_digest.0)
            .put("ticket", ticket.encode())
            .finish(),
    )
}

pub fn next_head(prev: &Digest256, call: &ToolCall, result: &ToolResult) -> Digest256 {
    digest(
        &FieldWriter::new()
            .put("prev", prev.0)
            .put("q", call.encode())
            .put("a", result.encode())
            .finish(),
    )
}

/// The bytes a party signs to vouch for its current head.
pub fn head_message(head: &Digest256) -> Vec<u8> {
    FieldWriter::new().put("v", V_HEAD).put("head", head.0).finish()
}

pub fn sign_head(keys: &KeyPair, head: &Digest256) -> Signature {
    keys.sign(&head_message(head))
}

pub fn verify_head(public: &PublicKey, head: &Digest256, sig: &Signature) -> bool {
    verify(public, &head_message(head), sig)
}

pub fn heads_consistent(prover_head: &Digest256, auditor_head: &Digest256) -> bool {
    prover_head == auditor_head
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub index: u32,
    pub call: ToolCall,
    pub result: ToolResult,
    pub head_after: Digest256,
    pub prover_head_sig: Signature,
    pub auditor_head_sig: Signature,
}

impl ChainEntry {
    /// `index ∥ q ∥ a`, the record column of the transcript export.
    pub fn record_bytes(&self) -> Vec<u8> {
        FieldWriter::new()
            .put_u32("index", self.index)
            .put("q", self.call.encode())
            .put("a", self.result.encode())
            .finish()
    }

    /// Every field, including head and signatures, in one canonical encoding.
    pub fn encode(&self) -> Vec<u8> {
        FieldWriter::new()
            .put("record", self.record_bytes())
            .put("head", self.head_after.0)
            .put("prover_sig", self.prover_head_sig.bytes)
            .put("auditor_sig", self.auditor_head_sig.bytes)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = FieldReader::new(bytes)?;
        let record = r.take("record")?;
        let head = Digest256(r.take_array("head")?);
        let p = Signature::from_slice(&r.take_array::<64>("prover_sig")?).expect("64 bytes");
        let a = Signature::from_slice(&r.take_array::<64>("auditor_sig")?).expect("64 bytes");
        r.finish()?;
        Self::from_record(&record, head, p, a)
    }

    fn from_record(
        record: &[u8],
        head_after: Digest256,
        prover_head_sig: Signature,
        auditor_head_sig: Signature,
    ) -> Result<Self, DecodeError> {
        let mut r = FieldReader::new(record)?;
        let index = r.take_u32("index")?;
        let call = ToolCall::decode(&r.take("q")?)?;
        let result = ToolResult::decode(&r.take("a")?)?;
        r.finish()?;
        Ok(Self {
            index,
            call,
            result,
            head_after,
            prover_head_sig,
            auditor_head_sig,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceCause {
    BadProverSig,
    BadAuditorSig,
}

/// A head signature does not cover the local head: the peers' histories have forked.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("chain divergence at entry {index}: {cause:?}")]
pub struct ChainDivergence {
    pub index: u32,
    pub cause: DivergenceCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub genesis: Digest256,
    pub head: Digest256,
    pub entries: Vec<ChainEntry>,
    pub prover_public: PublicKey,
    pub auditor_public: PublicKey,
}

pub fn chain_init(corpus_digest: &Digest256, ticket: &SessionTicket, auditor_public: PublicKey) -> ChainState {
    let g = genesis(corpus_digest, ticket);
    ChainState {
        genesis: g,
        head: g,
        entries: Vec::new(),
        prover_public: ticket.prover_public,
        auditor_public,
    }
}

impl ChainState {
    pub fn len(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `(call, result)` if both signatures cover the current head.
    pub fn append(
        &mut self,
        call: ToolCall,
        result: ToolResult,
        prover_sig: Signature,
        auditor_sig: Signature,
    ) -> Result<&ChainEntry, ChainDivergence> {
        let index = self.len() + 1;
        if !verify_head(&self.prover_public, &self.head, &prover_sig) {
            return Err(ChainDivergence {
                index,
                cause: DivergenceCause::BadProverSig,
            });
        }
        if !verify_head(&self.auditor_public, &self.head, &auditor_sig) {
            return Err(ChainDivergence {
                index,
                cause: DivergenceCause::BadAuditorSig,
            });
        }
        Ok(self.append_unchecked(call, result, prover_sig, auditor_sig))
    }

    /// Appends without looking at the signatures. For callers that have
    /// already checked them, or deliberately do not.
    pub fn append_unchecked(
        &mut self,
        call: ToolCall,
        result: ToolResult,
        prover_sig: Signature,
        auditor_sig: Signature,
    ) -> &ChainEntry {
        let index = self.len() + 1;
        let head_after = next_head(&self.head, &call, &result);
        self.entries.push(ChainEntry {
            index,
            call,
            result,
            head_after,
            prover_head_sig: prover_sig,
            auditor_head_sig: auditor_sig,
        });
        self.head = head_after;
        self.entries.last().expect("just pushed")
    }

    pub fn snapshot(&self) -> (Digest256, u32) {
        (self.head, self.len())
    }
}

/// Head reached by replaying `entries` from `genesis`, or `None` if any
/// recorded `head_after` disagrees with the recomputation.
pub fn replay_head(genesis: &Digest256, entries: &[ChainEntry]) -> Option<Digest256> {
    let mut head = *genesis;
    for e in entries {
        let next = next_head(&head, &e.call, &e.result);
        if next != e.head_after {
            return None;
        }
        head = next;
    }
    Some(head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCause {
    HashMismatch,
    BadProverSig,
    BadAuditorSig,
    /// Entry carries a position number other than its place in the list.
    IndexMismatch,
    /// Every entry checks out but the final head differs from the claim.
    ClaimedHeadMismatch,
    /// The record could not be parsed.
    Malformed,
}

impl fmt::Display for FailureCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureCause::HashMismatch => "hash-mismatch",
            FailureCause::BadProverSig => "bad-prover-sig",
            FailureCause::BadAuditorSig => "bad-auditor-sig",
            FailureCause::IndexMismatch => "index-mismatch",
            FailureCause::ClaimedHeadMismatch => "claimed-head-mismatch",
            FailureCause::Malformed => "malformed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub valid: bool,
    /// First bad 1-based index and why.
    pub failure: Option<(u32, FailureCause)>,
    pub computed_head: Option<Digest256>,
}

impl VerificationReport {
    fn fail(index: u32, cause: FailureCause) -> Self {
        Self {
            valid: false,
            failure: Some((index, cause)),
            computed_head: None,
        }
    }
}

fn check_position(
    position: u32,
    prev: &Digest256,
    entry: &ChainEntry,
    prover_pk: &PublicKey,
    auditor_pk: &PublicKey,
) -> Option<FailureCause> {
    if entry.index != position {
        return Some(FailureCause::IndexMismatch);
    }
    if next_head(prev, &entry.call, &entry.result) != entry.head_after {
        return Some(FailureCause::HashMismatch);
    }
    if !verify_head(prover_pk, prev, &entry.prover_head_sig) {
        return Some(FailureCause::BadProverSig);
    }
    if !verify_head(auditor_pk, prev, &entry.auditor_head_sig) {
        return Some(FailureCause::BadAuditorSig);
    }
    None
}

pub fn chain_verify(
    corpus_digest: &Digest256,
    ticket: &SessionTicket,
    entries: &[ChainEntry],
    claimed_head: &Digest256,
    prover_pk: &PublicKey,
    auditor_pk: &PublicKey,
) -> VerificationReport {
    chain_verify_from(
        &genesis(corpus_digest, ticket),
        entries,
        claimed_head,
        prover_pk,
        auditor_pk,
        par::Mode::Auto,
    )
}

/// Positions are checked independently against the recorded previous head,
/// which is equivalent to a sequential replay up to the first failure and
/// lets signature checks run in parallel.
pub fn chain_verify_from(
    genesis: &Digest256,
    entries: &[ChainEntry],
    claimed_head: &Digest256,
    prover_pk: &PublicKey,
    auditor_pk: &PublicKey,
    mode: par::Mode,
) -> VerificationReport {
    let positions: Vec<usize> = (0..entries.len()).collect();
    let results = par::map(mode, &positions, |&i| {
        let prev = if i == 0 { genesis } else { &entries[i - 1].head_after };
        check_position(i as u32 + 1, prev, &entries[i], prover_pk, auditor_pk)
    });
    if let Some((i, cause)) = results.iter().enumerate().find_map(|(i, c)| c.map(|c| (i, c))) {
        return VerificationReport::fail(i as u32 + 1, cause);
    }
    let head = entries.last().map_or(*genesis, |e| e.head_after);
    if head != *claimed_head {
        return VerificationReport::fail(entries.len() as u32, FailureCause::ClaimedHeadMismatch);
    }
    VerificationReport {
        valid: true,
        failure: None,
        computed_head: Some(head),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcript line {line}: {reason}")]
pub struct TranscriptParseError {
    pub line: u32,
    pub reason: String,
}

/// One line per entry: `<hex record> <hex head> <hex prover sig> <hex auditor sig>`.
pub fn export_transcript(entries: &[ChainEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{} {} {} {}\n",
            hex::encode(e.record_bytes()),
            e.head_after,
            e.prover_head_sig.to_hex(),
            e.auditor_head_sig.to_hex()
        ));
    }
    out
}

pub fn import_transcript(text: &str) -> Result<Vec<ChainEntry>, TranscriptParseError> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let err = |reason: String| TranscriptParseError {
                line: n as u32 + 1,
                reason,
            };
            let cols: Vec<&str> = line.split(' ').collect();
            let [record, head, psig, asig] = cols.as_slice() else {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            };
            let record = decode_lower_hex(record).map_err(|e| err(e.to_string()))?;
            let head = Digest256::from_hex(head).map_err(|e| err(e.to_string()))?;
            let psig = Signature::from_hex(psig).map_err(|e| err(e.to_string()))?;
            let asig = Signature::from_hex(asig).map_err(|e| err(e.to_string()))?;
            ChainEntry::from_record(&record, head, psig, asig).map_err(|e| err(e.to_string()))
        })
        .collect()
}

/// The Auditor's half of the final handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalHeadProposal {
    pub head: Digest256,
    pub length: u32,
    pub auditor_signature: Signature,
}

/// H_k signed by both parties at the end of the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalHeadRecord {
    pub head: Digest256,
    pub length: u32,
    pub prover_signature: Signature,
    pub auditor_signature: Signature,
}

pub fn final_message(head: &Digest256, length: u32) -> Vec<u8> {
    FieldWriter::new()
        .put("v", V_FINAL)
        .put("head", head.0)
        .put_u32("length", length)
        .finish()
}

impl FinalHeadProposal {
    pub fn sign(auditor: &KeyPair, head: Digest256, length: u32) -> Self {
        Self {
            head,
            length,
            auditor_signature: auditor.sign(&final_message(&head, length)),
        }
    }

    pub fn verify(&self, auditor_pk: &PublicKey) -> bool {
        verify(
            auditor_pk,
            &final_message(&self.head, self.length),
            &self.auditor_signature,
        )
    }
}

impl FinalHeadRecord {
    pub fn verify(&self, prover_pk: &PublicKey, auditor_pk: &PublicKey) -> bool {
        let msg = final_message(&self.head, self.length);
        verify(prover_pk, &msg, &self.prover_signature) && verify(auditor_pk, &msg, &self.auditor_signature)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::CallKind;
    use crate::messages::fixtures::{parties, ticket, Parties};
    use proptest::prelude::*;

    /// Straight-line re-hash, independent of `next_head` and `genesis`.
    fn oracle_hash(fields: &[(&str, &[u8])]) -> Digest256 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (tag, value) in fields {
            h.update([tag.len() as u8]);
            h.update(tag.as_bytes());
            h.update((value.len() as u64).to_be_bytes());
            h.update(value);
        }
        Digest256(h.finalize().into())
    }

    pub(crate) fn sample_exchange(i: u32) -> (ToolCall, ToolResult) {
        match i % 3 {
            0 => (
                ToolCall::new(CallKind::ReadFile, format!("f{i}.txt"), i),
                ToolResult::ok(CallKind::ReadFile, format!("content {i}").into_bytes()),
            ),
            1 => (
                ToolCall::new(CallKind::ListFiles, "", i),
                ToolResult::paths(CallKind::ListFiles, &["a.txt".into(), "sub/".into()]),
            ),
            _ => (
                ToolCall::new(CallKind::SearchRepository, "flask", i),
                ToolResult::paths(CallKind::SearchRepository, &[format!("m{i}.py")]),
            ),
        }
    }

    pub(crate) fn build_chain(p: &Parties, n: u32) -> (Digest256, SessionTicket, ChainState) {
        let corpus = digest(b"corpus");
        let t = ticket(p, 40);
        let mut chain = chain_init(&corpus, &t, p.auditor.public_key());
        for i in 1..=n {
            let (q, a) = sample_exchange(i);
            let ps = sign_head(&p.prover, &chain.head);
            let asig = sign_head(&p.auditor, &chain.head);
            chain.append(q, a, ps, asig).unwrap();
        }
        (corpus, t, chain)
    }

    #[test]
    fn genesis_matches_oracle() {
        let p = parties(1);
        let t = ticket(&p, 40);
        let corpus = digest(b"corpus");
        let a = chain_init(&corpus, &t, p.auditor.public_key());
        let b = chain_init(&corpus, &t, p.auditor.public_key());
        assert_eq!(a.genesis, b.genesis);
        let enc = t.encode();
        assert_eq!(a.genesis, oracle_hash(&[("corpus", &corpus.0), ("ticket", &enc)]));

        let mut t2 = t.clone();
        t2.nonce[0] ^= 1;
        assert_ne!(genesis(&corpus, &t2), a.genesis);
    }

    #[test]
    fn append_matches_oracle_and_rejects_stale() {
        let p = parties(2);
        let (_, _, mut chain) = build_chain(&p, 0);
        let g = chain.genesis;
        let (q, a) = sample_exchange(1);
        let ps = sign_head(&p.prover, &g);
        let asig = sign_head(&p.auditor, &g);
        chain.append(q.clone(), a.clone(), ps, asig).unwrap();
        let expected = oracle_hash(&[("prev", &g.0), ("q", &q.encode()), ("a", &a.encode())]);
        assert_eq!(chain.head, expected);

        let stale_p = sign_head(&p.prover, &g);
        let fresh_a = sign_head(&p.auditor, &chain.head);
        let (q2, a2) = sample_exchange(2);
        assert_eq!(
            chain.append(q2, a2, stale_p, fresh_a).unwrap_err(),
            ChainDivergence {
                index: 2,
                cause: DivergenceCause::BadProverSig
            }
        );
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn golden_ten_entry_replay() {
        let p = parties(3);
        let (corpus, t, chain) = build_chain(&p, 10);
        // independent replay with the straight-line oracle
        let mut h = oracle_hash(&[("corpus", &corpus.0), ("ticket", &t.encode())]);
        for i in 1..=10 {
            let (q, a) = sample_exchange(i);
            h = oracle_hash(&[("prev", &h.0), ("q", &q.encode()), ("a", &a.encode())]);
        }
        assert_eq!(chain.head, h);
        let report = chain_verify(
            &corpus,
            &t,
            &chain.entries,
            &h,
            &p.prover.public_key(),
            &p.auditor.public_key(),
        );
        assert!(report.valid);
    }

    #[test]
    fn verify_localizes_mutations() {
        let p = parties(4);
        let (corpus, t, chain) = build_chain(&p, 5);
        let (pk, ak) = (p.prover.public_key(), p.auditor.public_key());

        let mut flipped = chain.entries.clone();
        flipped[2].result.payload[0] ^= 1;
        let r = chain_verify(&corpus, &t, &flipped, &chain.head, &pk, &ak);
        assert_eq!(r.failure, Some((3, FailureCause::HashMismatch)));

        let mut swapped = chain.entries.clone();
        swapped.swap(1, 2);
        let r = chain_verify(&corpus, &t, &swapped, &chain.head, &pk, &ak);
        assert_eq!(r.failure.map(|f| f.0), Some(2));

        let r = chain_verify(&corpus, &t, &chain.entries, &digest(b"x"), &pk, &ak);
        assert_eq!(r.failure, Some((5, FailureCause::ClaimedHeadMismatch)));

        let r = chain_verify(&corpus, &t, &chain.entries, &chain.head, &ak, &pk);
        assert_eq!(r.failure, Some((1, FailureCause::BadProverSig)));
    }

    #[test]
    fn export_import_round_trip() {
        let p = parties(5);
        let (_, _, chain) = build_chain(&p, 4);
        let text = export_transcript(&chain.entries);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(import_transcript(&text).unwrap(), chain.entries);
        for e in &chain.entries {
            assert_eq!(ChainEntry::decode(&e.encode()).unwrap(), *e);
        }
        let mut bad = text.clone().into_bytes();
        bad[3] = b'X';
        assert_eq!(
            import_transcript(std::str::from_utf8(&bad).unwrap()).unwrap_err().line,
            1
        );
    }

    #[test]
    fn final_head_dual_signature() {
        let p = parties(6);
        let h = digest(b"final");
        let proposal = FinalHeadProposal::sign(&p.auditor, h, 3);
        assert!(proposal.verify(&p.auditor.public_key()));
        let record = FinalHeadRecord {
            head: h,
            length: 3,
            prover_signature: p.prover.sign(&final_message(&h, 3)),
            auditor_signature: proposal.auditor_signature,
        };
        assert!(record.verify(&p.prover.public_key(), &p.auditor.public_key()));
        let mut wrong = record.clone();
        wrong.length = 4;
        assert!(!wrong.verify(&p.prover.public_key(), &p.auditor.public_key()));
    }

    #[test]
    fn heads_consistency() {
        let a = digest(b"a");
        let mut b = a;
        assert!(heads_consistent(&a, &b));
        b.0[31] ^= 1;
        assert!(!heads_consistent(&a, &b));
    }

    fn exchange_strategy() -> impl Strategy<Value = (String, Vec<u8>)> {
        ("[a-z/.]{0,12}", prop::collection::vec(any::<u8>(), 0..40))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn replay_is_deterministic_and_tamper_evident(
            steps in prop::collection::vec(exchange_strategy(), 1..50),
            pick in any::<prop::sample::Index>(),
            byte in any::<prop::sample::Index>(),
        ) {
            let p = parties(9);
            let corpus = digest(b"c");
            let t = ticket(&p, 40);
            let mut chain = chain_init(&corpus, &t, p.auditor.public_key());
            for (i, (arg, payload)) in steps.iter().enumerate() {
                let q = ToolCall::new(CallKind::ReadFile, arg.clone(), i as u32 + 1);
                let a = ToolResult::ok(CallKind::ReadFile, payload.clone());
                let (ps, asig) = (sign_head(&p.prover, &chain.head), sign_head(&p.auditor, &chain.head));
                chain.append(q, a, ps, asig).unwrap();
            }
            let (pk, ak) = (p.prover.public_key(), p.auditor.public_key());
            let r = chain_verify(&corpus, &t, &chain.entries, &chain.head, &pk, &ak);
            prop_assert!(r.valid);
            prop_assert_eq!(r.computed_head, Some(chain.head));

            let i = pick.index(chain.entries.len());
            let mut encoded = chain.entries[i].record_bytes();
            let b = byte.index(encoded.len());
            encoded[b] ^= 0x5a;
            let mut mutated = chain.entries.clone();
            // structural damage is rejected at parse time instead
            if let Ok(e) = ChainEntry::from_record(&encoded, mutated[i].head_after, mutated[i].prover_head_sig, mutated[i].auditor_head_sig) {
                mutated[i] = e;
                let r = chain_verify(&corpus, &t, &mutated, &chain.head, &pk, &ak);
                prop_assert!(!r.valid);
                prop_assert_eq!(r.failure.unwrap().0, i as u32 + 1);
            }
        }
    }
}
