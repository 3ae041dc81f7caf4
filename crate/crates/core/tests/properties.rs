// SPDX-License-Identifier: Apache-2.0

use std::sync::OnceLock;

use proptest::prelude::*;

use aw_core::auditor::oracle::RuleOracleFactory;
use aw_core::crypto::{Digest256, PublicKey};
use aw_core::harness::config::RunConfig;
use aw_core::harness::fixtures::{structural_corpus, structural_plan};
use aw_core::harness::scenario::{run_honest, run_scenario, ScenarioName, ScenarioSpec};
use aw_core::harness::{Identities, Outcome};
use aw_core::messages::SessionTicket;
use aw_core::transcript::{chain_verify, export_transcript, import_transcript};
use aw_core::verifier::{leakage_bound, ScriptedPlan, VERDICT_ALPHABET};

struct Recorded {
    transcript: String,
    ticket: SessionTicket,
    corpus_digest: Digest256,
    head: Digest256,
    prover: PublicKey,
    auditor: PublicKey,
}

fn recorded() -> &'static Recorded {
    static R: OnceLock<Recorded> = OnceLock::new();
    R.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        structural_corpus(dir.path(), 21).unwrap();
        let ids = Identities::from_seed(21);
        let mut plan = ScriptedPlan::new(structural_plan().into_iter().map(|(q, _)| q.to_string()));
        let (run, prover, auditor) = run_honest(&ids, dir.path(), 10, 20, 21, &mut plan, &RuleOracleFactory::default());
        assert_eq!(run.outcome, Outcome::Completed);
        Recorded {
            transcript: export_transcript(&prover.chain().unwrap().entries),
            ticket: prover.ticket().clone(),
            corpus_digest: prover.manifest().corpus_digest,
            head: prover.final_record().unwrap().head,
            prover: prover.public_key(),
            auditor,
        }
    })
}

fn plan_questions(n: usize) -> Vec<String> {
    let base = structural_plan();
    (0..n).map(|i| base[i % base.len()].0.to_string()).collect()
}

#[test]
fn export_import_round_trips() {
    let r = recorded();
    let entries = import_transcript(&r.transcript).unwrap();
    assert_eq!(export_transcript(&entries), r.transcript);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transcript_byte_flip_is_caught_on_its_line(pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let r = recorded();
        let text = r.transcript.as_bytes();
        let at = pos.index(text.len());
        let mut bytes = text.to_vec();
        bytes[at] ^= flip;
        let want = text[..at].iter().filter(|&&b| b == b'\n').count() as u32 + 1;
        let got = match import_transcript(&String::from_utf8_lossy(&bytes)) {
            Err(e) => e.line,
            Ok(entries) => {
                let v = chain_verify(&r.corpus_digest, &r.ticket, &entries, &r.head, &r.prover, &r.auditor);
                prop_assert!(!v.valid);
                v.failure.unwrap().0
            }
        };
        prop_assert_eq!(got, want);
    }

    #[test]
    fn outcome_text_round_trips(cause in "[a-z][a-z_]{0,20}", kind in 0u8..3) {
        let o = match kind {
            0 => Outcome::Completed,
            1 => Outcome::Aborted(cause),
            _ => Outcome::Rejected(cause),
        };
        prop_assert_eq!(o.to_string().parse::<Outcome>().unwrap(), o);
    }

    #[test]
    fn config_round_trips(k in 1u32..100, n in 1u32..100, seed in any::<u64>(), qs in prop::collection::vec("[A-Za-z' ?=]{1,30}", 0..5)) {
        let mut text = format!("corpus = /c\noutput = /o\nk_max = {k}\nn_queries = {n}\nseed = {seed}\n");
        let qs: Vec<String> = qs.into_iter().map(|q| q.trim().to_string()).filter(|q| !q.is_empty()).collect();
        for q in &qs {
            text.push_str(&format!("question = {q}\n"));
        }
        let c: RunConfig = text.parse().unwrap();
        prop_assert_eq!((c.k_max, c.n_queries, c.seed), (k, n, Some(seed)));
        prop_assert_eq!(c.questions, qs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn leakage_never_exceeds_bound(k_max in 1u32..8, asked in 0usize..10, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        structural_corpus(dir.path(), seed).unwrap();
        let ids = Identities::from_seed(seed);
        let mut plan = ScriptedPlan::new(plan_questions(asked));
        let (run, _, _) = run_honest(&ids, dir.path(), k_max, 8, seed, &mut plan, &RuleOracleFactory::default());
        prop_assert_eq!(&run.outcome, &Outcome::Completed);
        let report = run.report.unwrap();
        let answered = asked.min(k_max as usize) as u32;
        prop_assert_eq!(report.asked.len() as u32, answered);
        prop_assert_eq!(report.leakage_consumed, 2 * answered);
        prop_assert!(f64::from(report.leakage_consumed) <= leakage_bound(k_max, VERDICT_ALPHABET));
        prop_assert_eq!(report.budget_note.is_some(), asked > k_max as usize);
    }

    #[test]
    fn scenarios_meet_expectations_for_any_seed(seed in any::<u64>(), which in 0usize..8) {
        let name = ScenarioName::ALL[which];
        let r = run_scenario(&ScenarioSpec::new(name, seed));
        prop_assert!(r.pass(), "{}", r.to_text());
        prop_assert!(r.secrecy.is_empty());
    }
}
