//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the code under test to compute an expected
//! value.
#![allow(dead_code)]

pub mod aer_oracle;
pub mod beam_oracle;
pub mod bleu_oracle;
pub mod corpus_algebra;
pub mod gradcheck;
pub mod loss_identities;
pub mod sign_oracle;

/// Result of one check: whether it held and a one-line account.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}
