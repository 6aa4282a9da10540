//! Bounded retry with exponential backoff.

use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_s: f64,
}

impl RetryPolicy {
    /// Delay after failed attempt `k` (0-based): `backoff_base_s * 2^k`.
    pub fn backoff_delay(&self, k: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_s * 2f64.powi(k as i32))
    }

    pub fn max_attempts(&self) -> u32 {
        1 + self.max_retries
    }
}

/// Whether a failed attempt may be retried.
pub enum AttemptError<E> {
    Retryable(E),
    Fatal(E),
}

/// Run `op` until it succeeds, fails fatally, or `1 + max_retries` attempts
/// are spent. Returns the outcome together with the number of attempts made.
pub fn with_retry<T, E>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut(u32) -> Result<T, AttemptError<E>>,
) -> (Result<T, E>, u32) {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op(attempt) {
            Ok(v) => return (Ok(v), attempt),
            Err(AttemptError::Retryable(_)) if attempt < policy.max_attempts() => {
                log::debug!("attempt {attempt}/{} failed, retrying", policy.max_attempts());
                sleep(policy.backoff_delay(attempt - 1));
            }
            Err(AttemptError::Retryable(e)) | Err(AttemptError::Fatal(e)) => return (Err(e), attempt),
        }
    }
}
