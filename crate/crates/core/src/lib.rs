//! Desk-scale laboratory for long-description video-text contrastive learning.
//!
//! The crate wires together:
//! - `numerics`: dense linear algebra (one-sided Jacobi SVD) and stable scalar kernels
//! - `datamodel`: corpus types, the synthetic corpus generator, and JSONL/binary I/O
//! - `encoders`: toy trainable text/video encoders with exact analytic gradients
//! - `pce`: primary component extraction and the text-similarity-guided retention rule
//! - `losses`: InfoNCE contrastive loss plus detail/hallucination description-ranking hinges
//! - `perturb`: rule-based hallucination and detail-degradation description chains
//! - `evalsuite`: ranking-benchmark construction, RS/KT/SC metrics, and retrieval R@k
//! - `pipeline`: batch forward/backward composition shared by training and grad checking
//! - `gradcheck`: finite-difference verification of the full analytic gradient path
//! - `trainer`: deterministic training loop, AdamW updates, checkpointing
//! - `cli`: command-line entry points
//!
//! All reference paths are single-threaded and deterministic: identical inputs,
//! config, and seed produce byte-identical outputs.

pub mod cli;
pub mod datamodel;
pub mod encoders;
pub mod evalsuite;
pub mod gradcheck;
pub mod losses;
pub mod numerics;
pub mod pce;
pub mod perturb;
pub mod pipeline;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to name the offending
/// record, line, or tensor in CLI diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("zero-norm vector passed to {0}")]
    ZeroNorm(&'static str),
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("perturbation: {0}")]
    Perturb(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step} (first record in batch: {batch_id})")]
    NonFinite { step: u64, batch_id: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for CLI reporting: 1 usage, 2 data/validation, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
