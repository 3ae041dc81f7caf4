// SPDX-License-Identifier: Apache-2.0

//! Checks what reached the Verifier: every inbound line must be an answer,
//! a private proof, an ack or an abort, and no line may contain an 8-byte
//! window of any corpus file, either raw or inside a hex field.

use std::collections::HashSet;

use crate::messages::WireMessage;

pub const WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    /// Line `index` is not one of the message kinds the Verifier may receive.
    Schema { index: usize, kind: String },
    /// Line `index` carries corpus bytes.
    CorpusBytes { index: usize, hex_field: bool },
}

pub struct SecrecyScanner {
    windows: HashSet<[u8; WINDOW]>,
}

fn windows(bytes: &[u8]) -> impl Iterator<Item = [u8; WINDOW]> + '_ {
    bytes.windows(WINDOW).map(|w| w.try_into().expect("window size"))
}

/// Maximal runs of lowercase hex of even length at least `2 * WINDOW`.
fn hex_runs(line: &str) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let b = line.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        while i < b.len() && matches!(b[i], b'0'..=b'9' | b'a'..=b'f') {
            i += 1;
        }
        let run = &line[start..i];
        if run.len() >= 2 * WINDOW {
            // both alignments, so a field that starts mid-run is still seen
            for offset in [0, 1] {
                let even = (run.len() - offset) & !1;
                if let Ok(bytes) = hex::decode(&run[offset..offset + even]) {
                    out.push(bytes);
                }
            }
        }
        if i == start {
            i += 1;
        }
    }
    out
}

impl SecrecyScanner {
    pub fn new<'a>(files: impl IntoIterator<Item = &'a [u8]>) -> Self {
        Self {
            windows: files.into_iter().flat_map(windows).collect(),
        }
    }

    fn contains_corpus(&self, bytes: &[u8]) -> bool {
        windows(bytes).any(|w| self.windows.contains(&w))
    }

    /// Scans `lines`. Text the Verifier itself sent (its questions) is removed
    /// first, raw and hex-encoded, since echoing it back discloses nothing.
    pub fn scan(&self, lines: &[String], own_text: &[String]) -> Vec<Finding> {
        let mut findings = Vec::new();
        for (index, line) in lines.iter().enumerate() {
            match WireMessage::from_line(line) {
                Ok(WireMessage::Answer(_) | WireMessage::PrivateProof(_) | WireMessage::Ack)
                | Ok(WireMessage::Abort { .. }) => {}
                Ok(other) => findings.push(Finding::Schema {
                    index,
                    kind: other.kind().to_string(),
                }),
                Err(_) => findings.push(Finding::Schema {
                    index,
                    kind: "unparseable".into(),
                }),
            }
            let mut redacted = line.clone();
            for t in own_text.iter().filter(|t| !t.is_empty()) {
                redacted = redacted.replace(&hex::encode(t), "").replace(t.as_str(), "");
                if let Ok(json) = serde_json::to_string(t) {
                    redacted = redacted.replace(json.trim_matches('"'), "");
                }
            }
            if self.contains_corpus(redacted.as_bytes()) {
                findings.push(Finding::CorpusBytes {
                    index,
                    hex_field: false,
                });
            } else if hex_runs(&redacted).iter().any(|b| self.contains_corpus(b)) {
                findings.push(Finding::CorpusBytes { index, hex_field: true });
            }
        }
        findings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messages::{Verdict, VerdictAnswer};

    fn answer() -> String {
        WireMessage::Answer(VerdictAnswer {
            verdict: Verdict::True,
            attestation: None,
        })
        .to_line()
    }

    #[test]
    fn clean_answer_passes() {
        let s = SecrecyScanner::new([b"secret corpus content".as_slice()]);
        assert!(s.scan(&[answer()], &[]).is_empty());
    }

    #[test]
    fn raw_and_hex_leaks_found() {
        let s = SecrecyScanner::new([b"secret corpus content".as_slice()]);
        let raw = WireMessage::abort("corpus content").to_line();
        assert_eq!(
            s.scan(&[raw], &[]),
            vec![Finding::CorpusBytes {
                index: 0,
                hex_field: false
            }]
        );
        let hexed = WireMessage::abort(&format!("x{}", hex::encode("us conten"))).to_line();
        assert_eq!(
            s.scan(&[hexed], &[]),
            vec![Finding::CorpusBytes {
                index: 0,
                hex_field: true
            }]
        );
    }

    #[test]
    fn own_question_redacted() {
        let s = SecrecyScanner::new([b"secret corpus content".as_slice()]);
        let q = "contains 'corpus content'?".to_string();
        let line = WireMessage::abort(&q).to_line();
        assert!(s.scan(&[line], &[q]).is_empty());
    }

    #[test]
    fn wrong_kind_is_schema_finding() {
        let s = SecrecyScanner::new([]);
        let line = WireMessage::TokenRequest {
            verifier_public: crate::crypto::PublicKey([1; 32]),
        }
        .to_line();
        assert!(matches!(s.scan(&[line], &[])[0], Finding::Schema { .. }));
    }
}
