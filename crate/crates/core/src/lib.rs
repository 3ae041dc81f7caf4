// SPDX-License-Identifier: Apache-2.0
pub mod auditor;
pub mod corpus;
pub mod crypto;
pub mod harness;
pub mod messages;
pub mod par;
pub mod prover;
pub mod transcript;
pub mod verifier;
