//! Live backend for OpenAI-compatible chat-completions endpoints.

use super::{Backend, BackendKind, GatewayError, LlmRequest, LlmResponse, Speaker};
use crate::sync::Semaphore;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Cap on concurrent in-flight requests.
    pub max_in_flight: usize,
    pub request_timeout_s: f64,
    /// Total attempts per call, transient failures included.
    pub max_attempts: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4".to_string(),
            api_key_env: "LLM_API_KEY".to_string(),
            max_in_flight: 4,
            request_timeout_s: 120.0,
            max_attempts: 3,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: Semaphore,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::MissingCredential(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_s))
            .build()
            .map_err(|e| GatewayError::Http {
                status: None,
                message: e.to_string(),
            })?;
        let gate = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            api_key,
            client,
            gate,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &LlmRequest) -> Result<LlmResponse, (bool, String, Option<u16>)> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: request
                .messages
                .iter()
                .map(|m| ChatMessage {
                    role: match m.speaker {
                        Speaker::System => "system",
                        Speaker::User => "user",
                    },
                    content: &m.text,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| (true, e.to_string(), None))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = response.text().unwrap_or_default();
            return Err((retryable, text, Some(status.as_u16())));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| (false, format!("bad response body: {e}"), None))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or((false, "response had no choices".to_string(), None))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(LlmResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            backend: BackendKind::Http,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err((retryable, message, status)) => {
                    if !retryable {
                        return Err(GatewayError::Http { status, message });
                    }
                    last = message;
                }
            }
            if attempt + 1 < self.config.max_attempts {
                std::thread::sleep(Duration::from_millis(250 * 4u64.pow(attempt)));
            }
        }
        Err(GatewayError::Exhausted {
            attempts: self.config.max_attempts,
            last,
        })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }
}
