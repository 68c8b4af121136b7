//! Result records emitted by the verifiers.

use serde::Serialize;
use std::collections::BTreeMap;

/// `{theorem, params, measured, bound, holds, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierRecord {
    pub theorem: String,
    pub params: BTreeMap<String, f64>,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
    pub seed: Option<u64>,
}

impl VerifierRecord {
    pub fn new(theorem: impl Into<String>, measured: f64, bound: f64, holds: bool) -> Self {
        Self {
            theorem: theorem.into(),
            params: BTreeMap::new(),
            measured,
            bound,
            holds,
            seed: None,
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}
