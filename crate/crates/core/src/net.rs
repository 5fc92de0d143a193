//! The single exit point for live HTTP traffic.
//!
//! Every outbound request made by this crate goes through [`HttpClient`],
//! which counts attempts and honours [`NetworkGuard`]. Offline replay runs
//! assert on [`live_request_count`] to prove that nothing left the process.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::Value;

static LIVE_REQUESTS: AtomicUsize = AtomicUsize::new(0);
static DENY_DEPTH: AtomicUsize = AtomicUsize::new(0);

/// Number of live HTTP requests attempted by this process so far.
pub fn live_request_count() -> usize {
    LIVE_REQUESTS.load(Ordering::SeqCst)
}

/// While alive, every live request fails with [`HttpFailure::Denied`]
/// instead of opening a connection. Attempts are still counted.
pub struct NetworkGuard {
    start: usize,
}

impl NetworkGuard {
    pub fn deny() -> Self {
        DENY_DEPTH.fetch_add(1, Ordering::SeqCst);
        Self {
            start: live_request_count(),
        }
    }

    /// Live requests attempted since the guard was created.
    pub fn attempts(&self) -> usize {
        live_request_count() - self.start
    }
}

impl Drop for NetworkGuard {
    fn drop(&mut self) {
        DENY_DEPTH.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HttpFailure {
    /// Connection errors, timeouts, 429 and 5xx; worth retrying.
    Transient(String),
    /// Any other non-success status.
    Status(u16, String),
    /// Malformed responses and local errors.
    Other(String),
    Denied(String),
}

impl HttpFailure {
    pub fn is_transient(&self) -> bool {
        matches!(self, HttpFailure::Transient(_))
    }
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Transient(m) => write!(f, "transient failure: {m}"),
            HttpFailure::Status(code, m) => write!(f, "HTTP {code}: {m}"),
            HttpFailure::Other(m) => f.write_str(m),
            HttpFailure::Denied(url) => write!(f, "network guard denied request to {url}"),
        }
    }
}

fn classify(err: ureq::Error) -> HttpFailure {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => HttpFailure::Transient(format!("HTTP {code}")),
        ureq::Error::StatusCode(code) => HttpFailure::Status(code, "request rejected".into()),
        ureq::Error::Io(e) => HttpFailure::Transient(e.to_string()),
        ureq::Error::Timeout(t) => HttpFailure::Transient(format!("timeout: {t}")),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => HttpFailure::Transient(err.to_string()),
        other => HttpFailure::Other(other.to_string()),
    }
}

#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("HttpClient")
    }
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl HttpClient {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }

    fn admit(url: &str) -> Result<(), HttpFailure> {
        LIVE_REQUESTS.fetch_add(1, Ordering::SeqCst);
        if DENY_DEPTH.load(Ordering::SeqCst) > 0 {
            return Err(HttpFailure::Denied(url.to_owned()));
        }
        Ok(())
    }

    pub fn post_json(&self, url: &str, headers: &[(&str, &str)], body: &Value) -> Result<Value, HttpFailure> {
        Self::admit(url)?;
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let mut resp = req.send_json(body).map_err(classify)?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| HttpFailure::Other(format!("invalid JSON response: {e}")))
    }

    pub fn get_bytes(&self, url: &str) -> Result<Vec<u8>, HttpFailure> {
        Self::admit(url)?;
        let mut resp = self.agent.get(url).call().map_err(classify)?;
        resp.body_mut()
            .with_config()
            .limit(32 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| HttpFailure::Other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_denies_and_counts() {
        let guard = NetworkGuard::deny();
        let client = HttpClient::default();
        let err = client.get_bytes("http://127.0.0.1:9/unused").unwrap_err();
        assert!(matches!(err, HttpFailure::Denied(_)));
        assert_eq!(guard.attempts(), 1);
    }
}
