//! Remote backend speaking the wire contract: request {model, messages,
//! temperature, top_p, seed}, response {text}, bearer auth from an
//! environment variable named in config.

use super::{GenerationRequest, Message, ModelIoError, RetryPolicy, TextBackend};
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Serialize)]
struct WireRequest<'r> {
    model: &'r str,
    messages: &'r [Message],
    temperature: f64,
    top_p: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct RemoteBackend {
    id: String,
    url: String,
    model: String,
    auth_env: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(
        id: &str,
        url: &str,
        model: &str,
        auth_env: Option<&str>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> RemoteBackend {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("default TLS backend available");
        RemoteBackend {
            id: id.to_string(),
            url: url.to_string(),
            model: model.to_string(),
            auth_env: auth_env.map(|s| s.to_string()),
            retry,
            client,
        }
    }

    fn auth_token(&self) -> Result<Option<String>, ModelIoError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ModelIoError::MissingAuth { var: var.clone() }),
        }
    }

    fn call_once(&self, body: &WireRequest<'_>, token: Option<&str>) -> Result<String, String> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("wire status {status}"));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| format!("malformed wire response: {e}"))?;
        Ok(parsed.text)
    }
}

impl TextBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        let token = self.auth_token()?;
        let body = WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            seed: request.params.seed,
        };
        self.retry
            .run(|| self.call_once(&body, token.as_deref()))
            .map_err(|(attempts, message)| ModelIoError::Transport {
                backend: self.id.clone(),
                attempts,
                message,
            })
    }
}
