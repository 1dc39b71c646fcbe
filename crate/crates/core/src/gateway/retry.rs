use std::time::Duration;

use super::GatewayError;

/// Outcome of one provider attempt, as seen by the retry loop.
#[derive(Debug)]
pub enum Backoff {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Transient(String),
    /// Retrying cannot help.
    Fatal(GatewayError),
}

/// Exponential backoff: `base * 2^k`, capped at `max_delay`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay
            .checked_mul(factor)
            .unwrap_or(self.max_delay)
            .min(self.max_delay)
    }

    /// The full delay schedule, one entry per permitted retry.
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.max_retries).map(|r| self.delay(r)).collect()
    }

    /// Runs `attempt` up to `max_retries + 1` times. `attempt` receives the
    /// 0-based attempt number.
    pub fn run<T>(
        &self,
        sleep: &dyn Fn(Duration),
        mut attempt: impl FnMut(u32) -> Result<T, Backoff>,
    ) -> Result<T, GatewayError> {
        let mut last_error = String::new();
        for n in 0..=self.max_retries {
            if n > 0 {
                sleep(self.delay(n - 1));
            }
            match attempt(n) {
                Ok(v) => return Ok(v),
                Err(Backoff::Fatal(e)) => return Err(e),
                Err(Backoff::Transient(msg)) => {
                    tracing::debug!(attempt = n, error = %msg, "transient provider failure");
                    last_error = msg;
                }
            }
        }
        Err(GatewayError::TimeoutExhausted {
            attempts: self.max_retries + 1,
            last_error,
        })
    }
}
