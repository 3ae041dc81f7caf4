// SPDX-License-Identifier: Apache-2.0

//! Parallel against sequential for the three data-parallel paths: chain
//! replay, manifest hashing and explorer layer expansion.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aw_core::corpus::{build_manifest_with, CallKind, ManifestOptions, ToolCall, ToolResult};
use aw_core::crypto::{digest, KeyPair, Role};
use aw_core::harness::explorer::{explore_states, ExploreOptions};
use aw_core::par::Mode;
use aw_core::transcript::{chain_verify_from, sign_head, ChainState};

const MODES: [(&str, Mode); 2] = [("parallel", Mode::Auto), ("sequential", Mode::Sequential)];

fn chain(c: &mut Criterion) {
    let p = KeyPair::generate(Some(&[1u8; 32][..]), Role::Prover).unwrap();
    let a = KeyPair::generate(Some(&[2u8; 32][..]), Role::Auditor).unwrap();
    let genesis = digest(b"bench");
    let mut state = ChainState {
        genesis,
        head: genesis,
        entries: Vec::new(),
        prover_public: p.public_key(),
        auditor_public: a.public_key(),
    };
    for i in 0..1024u32 {
        let call = ToolCall::new(CallKind::ReadFile, format!("f{i}.txt"), i + 1);
        let result = ToolResult::ok(CallKind::ReadFile, vec![i as u8; 512]);
        let (ps, as_) = (sign_head(&p, &state.head), sign_head(&a, &state.head));
        state.append(call, result, ps, as_).unwrap();
    }
    let mut g = c.benchmark_group("chain_verify_1024");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                let r = chain_verify_from(
                    &genesis,
                    &state.entries,
                    &state.head,
                    &p.public_key(),
                    &a.public_key(),
                    mode,
                );
                assert!(r.valid);
            })
        });
    }
    g.finish();
}

fn manifest(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..256 {
        std::fs::write(
            dir.path().join(format!("f{i:03}.bin")),
            vec![(i % 251) as u8; 16 * 1024],
        )
        .unwrap();
    }
    let opts = ManifestOptions::default();
    let mut g = c.benchmark_group("manifest_256x16k");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| build_manifest_with(dir.path(), &opts, mode).unwrap())
        });
    }
    g.finish();
}

fn explorer(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    g.sample_size(10);
    for (name, mode) in MODES {
        let opts = ExploreOptions {
            mode,
            ..ExploreOptions::default()
        };
        g.bench_with_input(BenchmarkId::new(name, 12), &opts, |b, o| {
            b.iter(|| explore_states(12, o))
        });
    }
    g.finish();
}

criterion_group!(benches, chain, manifest, explorer);
criterion_main!(benches);
