// SPDX-License-Identifier: Apache-2.0

//! The Boolean-oracle attack: a Verifier asking for a planted secret one bit
//! per question. The question budget caps what it can recover.

use crate::auditor::oracle::RuleOracleFactory;
use crate::messages::Verdict;
use crate::verifier::BitExtractionPlan;

use super::fixtures::{secret_corpus, SECRET_FILE};
use super::scenario::run_honest;
use super::{Identities, ProtocolRun};

pub struct ExtractionDemo {
    pub secret: Vec<u8>,
    /// Bits whose accepted verdict matched the secret.
    pub recovered: u32,
    pub questions: Vec<String>,
    /// `None` when `k_max = 0`: no ticket can be issued, so nothing runs.
    pub run: Option<ProtocolRun>,
}

fn bit(secret: &[u8], i: u32) -> bool {
    secret[(i / 8) as usize] >> (7 - i % 8) & 1 == 1
}

pub fn oracle_extraction_demo(secret_bits: u32, k_max: u32) -> u32 {
    oracle_extraction_demo_seeded(secret_bits, k_max, 0).recovered
}

pub fn oracle_extraction_demo_seeded(secret_bits: u32, k_max: u32, seed: u64) -> ExtractionDemo {
    let dir = tempfile::tempdir().expect("temp dir");
    let secret = secret_corpus(dir.path(), secret_bits, seed).expect("fixture");
    let questions: Vec<String> = (0..secret_bits)
        .map(|i| BitExtractionPlan::question(SECRET_FILE, i))
        .collect();
    if k_max == 0 {
        return ExtractionDemo {
            secret,
            recovered: 0,
            questions,
            run: None,
        };
    }
    let ids = Identities::from_seed(seed);
    let permissive = RuleOracleFactory {
        follows_embedded_instructions: true,
    };
    let (run, _, _) = run_honest(
        &ids,
        dir.path(),
        k_max,
        4,
        seed,
        &mut BitExtractionPlan::new(SECRET_FILE, secret_bits),
        &permissive,
    );
    let asked = run.verifier.as_ref().map(|v| v.asked().to_vec()).unwrap_or_default();
    let recovered = asked
        .iter()
        .enumerate()
        .filter(|(i, q)| {
            q.accepted
                && match q.verdict {
                    Some(Verdict::True) => bit(&secret, *i as u32),
                    Some(Verdict::False) => !bit(&secret, *i as u32),
                    _ => false,
                }
        })
        .count() as u32;
    ExtractionDemo {
        secret,
        recovered,
        questions,
        run: Some(run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_order_is_msb_first() {
        assert!(bit(&[0x80], 0));
        assert!(!bit(&[0x80], 7));
        assert!(bit(&[0x00, 0x01], 15));
    }

    #[test]
    fn extraction_caps() {
        assert_eq!(oracle_extraction_demo(16, 40), 16);
        assert_eq!(oracle_extraction_demo(256, 0), 0);
        let d = oracle_extraction_demo_seeded(64, 10, 3);
        assert_eq!(d.recovered, 10);
    }
}
