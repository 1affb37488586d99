use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tracing::{debug, warn};

use super::{
    check_request, ChatBackend, ChatMessage, FinishReason, GatewayError, ModelReply,
    SamplingParams, Usage,
};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "CODEACT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    /// Server root, e.g. `http://localhost:8000`. `/v1/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub request_timeout: Duration,
    /// Send `best_of` and `repetition_penalty`, which are vLLM extensions to the OpenAI schema.
    pub send_extensions: bool,
    /// Ask for `n` choices in one request instead of issuing `n` requests.
    pub supports_n: bool,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            request_timeout: Duration::from_secs(120),
            send_extensions: true,
            supports_n: true,
        }
    }
}

/// Client for an OpenAI-compatible `/v1/chat/completions` endpoint.
#[derive(Debug)]
pub struct OpenAiCompatible {
    config: OpenAiConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl OpenAiCompatible {
    /// Builds a client, reading the API key from [`API_KEY_ENV`] if set.
    pub fn new(config: OpenAiConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: OpenAiConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        if !config.send_extensions {
            warn!("backend extensions disabled: repetition_penalty and best_of will not be sent");
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            http,
        })
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{path}", self.config.base_url.trim_end_matches('/'))
    }

    /// The JSON body sent for a request of `n` choices.
    pub fn request_body(&self, messages: &[ChatMessage], params: &SamplingParams, n: usize) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.config.model));
        body.insert("messages".into(), json!(messages));
        body.insert("max_tokens".into(), json!(params.max_tokens));
        body.insert("temperature".into(), json!(params.temperature));
        body.insert("top_p".into(), json!(params.top_p));
        body.insert("seed".into(), json!(params.seed));
        body.insert("n".into(), json!(n));
        if self.config.send_extensions {
            body.insert("best_of".into(), json!(params.best_of));
            body.insert("repetition_penalty".into(), json!(params.repetition_penalty));
        }
        Value::Object(body)
    }

    fn post(&self, body: &Value) -> Result<Vec<ModelReply>, GatewayError> {
        let mut request = self.http.post(self.endpoint("/v1/chat/completions")).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Backend {
                status: status.as_u16(),
                body: text,
            });
        }
        parse_response(&text)
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: usize,
    message: ChoiceMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Parses a chat-completions response body into replies ordered by choice index.
pub(crate) fn parse_response(text: &str) -> Result<Vec<ModelReply>, GatewayError> {
    let mut parsed: CompletionResponse =
        serde_json::from_str(text).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    parsed.choices.sort_by_key(|c| c.index);
    let n = parsed.choices.len().max(1) as u64;
    let usage = parsed.usage.map(|u| Usage {
        prompt_tokens: u.prompt_tokens,
        // Completion tokens are reported for the whole batch; split evenly per choice.
        completion_tokens: u.completion_tokens / n,
    });
    Ok(parsed
        .choices
        .into_iter()
        .map(|choice| {
            let finish = match choice.finish_reason.as_deref() {
                Some("stop") | Some("eos") | Some("end_turn") | None => FinishReason::Stop,
                Some("length") => FinishReason::Length,
                Some(_) => FinishReason::Error,
            };
            ModelReply::new(choice.message.content.unwrap_or_default(), finish, usage)
        })
        .collect())
}

impl ChatBackend for OpenAiCompatible {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<ModelReply, GatewayError> {
        let mut replies = self.complete_n(messages, params, 1)?;
        Ok(replies.remove(0))
    }

    fn complete_n(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<ModelReply>, GatewayError> {
        check_request(messages)?;
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be at least 1".into()));
        }
        if n > 1 && !self.config.supports_n {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.extend(self.post(&self.request_body(messages, params, 1))?);
            }
            return Ok(out);
        }
        debug!(n, model = %self.config.model, "chat completion request");
        let replies = self.post(&self.request_body(messages, params, n))?;
        if replies.len() != n {
            return Err(GatewayError::Protocol(format!(
                "asked for {n} choices, got {}",
                replies.len()
            )));
        }
        Ok(replies)
    }

    fn probe(&self) -> Result<(), GatewayError> {
        let mut request = self.http.get(self.endpoint("/v1/models"));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        // Any HTTP answer proves the server is up; only transport failures count.
        request
            .send()
            .map(|_| ())
            .map_err(|e| GatewayError::Transport(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(extensions: bool) -> OpenAiCompatible {
        let mut cfg = OpenAiConfig::new("http://127.0.0.1:1/", "qwen");
        cfg.send_extensions = extensions;
        OpenAiCompatible::with_api_key(cfg, None).unwrap()
    }

    #[test]
    fn default_params_reach_the_body() {
        let body = client(true).request_body(&[ChatMessage::user("hi")], &SamplingParams::default(), 1);
        assert_eq!(body["temperature"], json!(0.7));
        assert_eq!(body["top_p"], json!(0.9));
        assert_eq!(body["max_tokens"], json!(8192));
        assert_eq!(body["seed"], json!(42));
        assert_eq!(body["best_of"], json!(1));
        assert_eq!(body["repetition_penalty"], json!(1.05));
        assert_eq!(body["messages"][0], json!({"role": "user", "content": "hi"}));
        let keys: Vec<&String> = body.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 9, "{keys:?}");
    }

    #[test]
    fn extensions_can_be_dropped() {
        let body = client(false).request_body(&[ChatMessage::user("hi")], &SamplingParams::default(), 1);
        assert!(body.get("repetition_penalty").is_none());
        assert!(body.get("best_of").is_none());
    }

    #[test]
    fn response_parsing() {
        let text = r#"{"choices":[
            {"index":1,"message":{"content":"b"},"finish_reason":"length"},
            {"index":0,"message":{"content":null},"finish_reason":"stop"}],
            "usage":{"prompt_tokens":10,"completion_tokens":8}}"#;
        let replies = parse_response(text).unwrap();
        assert_eq!(replies[0].text, "");
        assert_eq!(replies[1].text, "b");
        assert_eq!(replies[1].finish_reason, FinishReason::Length);
        assert_eq!(replies[0].usage, Some(Usage { prompt_tokens: 10, completion_tokens: 4 }));
        assert!(matches!(parse_response("{\"choices\": 3}"), Err(GatewayError::Protocol(_))));
        assert!(matches!(parse_response("<html>"), Err(GatewayError::Protocol(_))));
    }

    #[test]
    fn connection_refused_is_transport_error() {
        let err = client(true).complete(&[ChatMessage::user("hi")], &SamplingParams::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)), "{err}");
        assert!(matches!(client(true).probe(), Err(GatewayError::Transport(_))));
    }
}
