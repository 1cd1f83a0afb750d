//! Shared backend plumbing: error type and retry policy.
//!
//! Every pluggable backend (extractor, translator, embedder) reports
//! failures through [`BackendError`]; callers wrap invocations in
//! [`with_retries`], which retries transient failures with exponential
//! backoff and reports how many attempts were spent.

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend rejected input: {0}")]
    Rejected(String),
}

/// Retry schedule for backend calls: `attempts` tries total, sleeping
/// `initial_backoff * multiplier^(i-1)` after the i-th failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Same attempt count as the default but no sleeping; for tests and
    /// local deterministic backends where waiting buys nothing.
    pub fn immediate() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    fn backoff_after(&self, failure_index: u32) -> Duration {
        let factor = self.multiplier.powi(failure_index as i32);
        self.initial_backoff.mul_f64(factor.max(0.0))
    }
}

/// All attempts failed; carries the count and the final error.
#[derive(Debug, Clone, Error)]
#[error("backend exhausted after {attempts} attempts: {last_error}")]
pub struct RetryExhausted {
    pub attempts: u32,
    pub last_error: BackendError,
}

/// Run `op` up to `policy.attempts` times. On success returns the value and
/// the number of attempts consumed.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut(u32) -> Result<T, BackendError>,
) -> Result<(T, u32), RetryExhausted> {
    let attempts = policy.attempts.max(1);
    let mut last_error = None;
    for attempt in 1..=attempts {
        match op(attempt) {
            Ok(value) => return Ok((value, attempt)),
            Err(e) => {
                last_error = Some(e);
                if attempt < attempts && !policy.initial_backoff.is_zero() {
                    std::thread::sleep(policy.backoff_after(attempt - 1));
                }
            }
        }
    }
    Err(RetryExhausted {
        attempts,
        last_error: last_error.expect("at least one attempt ran"),
    })
}
