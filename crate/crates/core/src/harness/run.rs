// SPDX-License-Identifier: Apache-2.0

//! `run_audit`: one configured session over a real directory, with every
//! artifact written to the output directory.

use std::fs;
use std::io;
use std::net::TcpListener;
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Instant;

use rand::RngCore;
use serde_json::json;

use crate::auditor::oracle::{OracleFactory, RuleOracleFactory};
use crate::auditor::{boot_seeded, AuditorLink, AuditorOutput};
use crate::crypto::PublicKey;
use crate::messages::{causes, Abort};
use crate::prover::{start_session_with, ProverOptions, ProverSession};
use crate::verifier::{
    establish, leakage_bound, request_token, PlanReport, QuestionPlan, ScriptedPlan, VerifierSession, VERDICT_ALPHABET,
};

use super::artifacts::{Anchors, SessionArtifacts};
use super::config::{OracleChoice, RunConfig, TransportChoice};
use super::transport::{serve, serve_connection, TcpLink};
use super::{run_protocol, Identities, Outcome, ProtocolRun, ProverLink, Timings};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot start session: {0}")]
    Startup(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct RunSummary {
    pub outcome: Outcome,
    pub report_text: String,
    pub artifacts: SessionArtifacts,
    pub run_json: serde_json::Value,
}

pub fn run_audit(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let seed = cfg.seed.unwrap_or_else(|| rand::rngs::OsRng.next_u64());
    let ids = Identities::from_seed(seed);
    let (prover, _, _) = start_session_with(
        ids.prover.clone(),
        &cfg.corpus,
        &ProverOptions {
            k_max: cfg.k_max,
            n_queries: cfg.n_queries,
            path_mode: cfg.path_mode,
            trust: Some(ids.trust()),
            nonce_seed: cfg.seed,
            fixed_time: cfg.fixed_time.clone(),
            ..ProverOptions::default()
        },
    )
    .map_err(|e| RunError::Startup(e.to_string()))?;
    let oracles = RuleOracleFactory {
        follows_embedded_instructions: cfg.oracle == OracleChoice::Permissive,
    };
    let mut plan = ScriptedPlan::new(cfg.questions.clone());

    let (run, prover) = match cfg.transport {
        TransportChoice::InProcess => {
            let mut prover = prover;
            let mut auditor = ids.boot_auditor();
            let run = run_protocol(
                &ids,
                &mut auditor,
                &mut ProverLink::honest(&mut prover),
                &mut plan,
                &oracles,
            );
            (run, prover)
        }
        TransportChoice::Tcp => run_over_tcp(&ids, prover, &mut plan, oracles)?,
    };

    let anchors = Anchors {
        hw_root_public: ids.hw.public_key(),
        measurement: ids.measurement,
        prover_public: ids.prover.public_key(),
    };
    let attestations = run
        .verifier
        .as_ref()
        .map(VerifierSession::attestations)
        .unwrap_or_default();
    let artifacts = SessionArtifacts::collect(&prover, attestations, anchors);
    artifacts.write(&cfg.output)?;

    let report = run.report.clone().or_else(|| {
        run.verifier.as_ref().map(|v| PlanReport {
            asked: v.asked().to_vec(),
            leakage_consumed: v.leakage_consumed(),
            leakage_bound: leakage_bound(v.k_max(), VERDICT_ALPHABET),
            budget_note: None,
            private_proof: None,
        })
    });
    let mut report_text = report.as_ref().map(PlanReport::to_text).unwrap_or_default();
    report_text.push_str(&format!("outcome {}\n", run.outcome));
    fs::write(cfg.output.join("report.txt"), &report_text)?;

    let run_json = run_json(cfg, seed, &run, report.as_ref(), &prover);
    fs::write(
        cfg.output.join("run.json"),
        serde_json::to_string_pretty(&run_json).expect("json value") + "\n",
    )?;
    Ok(RunSummary {
        outcome: run.outcome,
        report_text,
        artifacts,
        run_json,
    })
}

fn run_json(
    cfg: &RunConfig,
    seed: u64,
    run: &ProtocolRun,
    report: Option<&PlanReport>,
    prover: &ProverSession,
) -> serde_json::Value {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1000.0;
    let t = &run.timings;
    json!({
        "outcome": run.outcome.to_string(),
        "seed": seed,
        "transport": match cfg.transport { TransportChoice::InProcess => "in-process", TransportChoice::Tcp => "tcp" },
        "k_max": cfg.k_max,
        "n_queries": cfg.n_queries,
        "questions_planned": cfg.questions.len(),
        "questions_asked": report.map_or(0, |r| r.asked.len()),
        "verdicts": report.map(|r| r.asked.iter().map(|q| q.verdict.map(|v| v.as_str())).collect::<Vec<_>>()),
        "mcp_calls_per_question": run.auditor_output.as_ref().map(|o| o.tool_calls_per_question.clone()),
        "leakage_bits": { "consumed": report.map_or(0, |r| r.leakage_consumed), "bound": leakage_bound(cfg.k_max, VERDICT_ALPHABET) },
        "budget_note": report.and_then(|r| r.budget_note.clone()),
        "chain_length": prover.chain().map_or(0, |c| c.len()),
        "final_head": prover.final_record().map(|r| r.head.to_hex()),
        "timings_ms": {
            "handshake": ms(t.handshake),
            "questions": ms(t.questions),
            "oracle": ms(t.oracle),
            "total": ms(t.total()),
        },
        "oracle_share": t.oracle_share(),
    })
}

type AuditorThreadResult = (PublicKey, Option<AuditorOutput>);

/// The three parties on separate threads, talking over loopback TCP.
fn run_over_tcp(
    ids: &Identities,
    prover: ProverSession,
    plan: &mut dyn QuestionPlan,
    oracles: RuleOracleFactory,
) -> Result<(ProtocolRun, ProverSession), RunError> {
    let prover = Arc::new(Mutex::new(prover));
    let prover_listener = TcpListener::bind("127.0.0.1:0")?;
    let prover_addr = prover_listener.local_addr()?;
    // one connection from the Auditor, one for the Verifier's token request
    let prover_server = serve(prover_listener, prover.clone(), 2);

    let auditor_listener = TcpListener::bind("127.0.0.1:0")?;
    let mut config = ids.auditor_config();
    config.address = auditor_listener.local_addr()?.to_string();
    let auditor_addr = auditor_listener.local_addr()?;
    let auditor_seed = ids.auditor_seed;
    let (ready_tx, ready_rx) = mpsc::channel::<Result<(), Abort>>();

    let started = Instant::now();
    let auditor_thread = thread::spawn(move || -> io::Result<AuditorThreadResult> {
        let (mut auditor, _) = boot_seeded(config, &auditor_seed);
        let mut to_prover = TcpLink::connect(prover_addr)?;
        let handshake = auditor.handshake(&mut to_prover);
        let ok = handshake.is_ok();
        let _ = ready_tx.send(handshake);
        if !ok {
            return Ok((auditor.public_key(), None));
        }
        let (stream, _) = auditor_listener.accept()?;
        let factory: &dyn OracleFactory = &oracles;
        let mut link = AuditorLink::new(&mut auditor, factory, &mut to_prover);
        serve_connection(stream, &mut link)?;
        let output = link.output.take();
        Ok((auditor.public_key(), output))
    });

    let mut run = ProtocolRun {
        outcome: Outcome::Completed,
        verifier: None,
        report: None,
        auditor_output: None,
        timings: Timings::default(),
    };
    let handshake = ready_rx.recv().unwrap_or_else(|_| Err(Abort::new(causes::TRANSPORT)));
    let token = request_token(&mut TcpLink::connect(prover_addr)?, ids.verifier.public_key());
    run.timings.handshake = started.elapsed();
    match (handshake, token) {
        (Err(a), _) => run.outcome = Outcome::from_cause(&a.cause),
        (Ok(()), Err(e)) => {
            drop(TcpLink::connect(auditor_addr)?);
            run.outcome = Outcome::from_cause(e.abort_cause().unwrap_or(causes::BAD_TOKEN));
        }
        (Ok(()), Ok(token)) => {
            let started = Instant::now();
            let mut to_auditor = TcpLink::connect(auditor_addr)?;
            match establish(
                ids.verifier.clone(),
                token,
                &ids.hw.public_key(),
                &ids.prover.public_key(),
                &ids.measurement,
            ) {
                Err(_) => run.outcome = Outcome::Rejected(causes::BAD_TOKEN.into()),
                Ok(mut verifier) => {
                    let result = verifier
                        .register(&mut to_auditor)
                        .and_then(|_| verifier.run_plan(plan, &mut to_auditor));
                    match result {
                        Ok(r) => run.report = Some(r),
                        Err(e) => {
                            run.outcome = Outcome::from_cause(e.abort_cause().unwrap_or(causes::UNEXPECTED_MESSAGE))
                        }
                    }
                    run.verifier = Some(verifier);
                }
            }
            drop(to_auditor);
            run.timings.questions = started.elapsed();
        }
    }

    let (_, output) = auditor_thread
        .join()
        .map_err(|_| io::Error::other("auditor thread panicked"))??;
    prover_server
        .join()
        .map_err(|_| io::Error::other("prover server panicked"))??;
    if let Some(o) = &output {
        run.timings.oracle = o.oracle_time;
    }
    run.auditor_output = output;
    let prover = Arc::try_unwrap(prover)
        .map_err(|_| io::Error::other("prover still shared"))?
        .into_inner()
        .map_err(|_| io::Error::other("prover lock poisoned"))?;
    Ok((run, prover))
}
