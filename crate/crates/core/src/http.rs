//! Minimal JSON-over-HTTP client shared by the remote annotator and model
//! clients: bearer auth from an environment variable, a global timeout, a
//! retry budget, and a requests-per-second cap.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use ureq::Agent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    /// Additional attempts after a failed request.
    pub retries: u32,
    /// Requests-per-second cap shared by all threads; `None` is unlimited.
    pub requests_per_second: Option<f64>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: None,
            token_env: None,
            timeout_secs: 60.0,
            retries: 2,
            requests_per_second: None,
        }
    }
}

/// Spaces out request starts so no more than `rate` begin per second.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: Option<f64>) -> Self {
        let interval = requests_per_second
            .filter(|r| *r > 0.0 && r.is_finite())
            .map(|r| Duration::from_secs_f64(1.0 / r));
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else { return };
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = slot.map_or(now, |t| t.max(now));
            *slot = Some(start + interval);
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
pub struct JsonEndpoint {
    url: String,
    token: Option<String>,
    retries: u32,
    agent: Agent,
    limiter: RateLimiter,
}

impl JsonEndpoint {
    pub fn new(config: &EndpointConfig) -> Result<Self, String> {
        let url = config
            .url
            .clone()
            .ok_or_else(|| "remote endpoint needs a `url`".to_string())?;
        let token = match &config.token_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| format!("environment variable {var} is not set"))?,
            ),
            None => None,
        };
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url,
            token,
            retries: config.retries,
            agent,
            limiter: RateLimiter::new(config.requests_per_second),
        })
    }

    /// POSTs `body`; retries on transport errors and 5xx/429 responses.
    pub fn post(&self, body: &Value) -> Result<Value, String> {
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            self.limiter.acquire();
            let mut req = self.agent.post(&self.url);
            if let Some(token) = &self.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 429 || status >= 500 {
                        last_err = format!("HTTP {status}");
                        continue;
                    }
                    if status >= 400 {
                        return Err(format!("HTTP {status}"));
                    }
                    return resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| format!("bad JSON response: {e}"));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(format!(
            "{} unreachable after {} attempts: {last_err}",
            self.url,
            self.retries + 1
        ))
    }
}

/// Extracts the `text` field of a JSON response.
pub fn response_text(value: &Value) -> Result<String, String> {
    value
        .get("text")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| "response has no string `text` field".to_string())
}
