//! Chat-completion backends.
//!
//! [`ChatBackend`] is the single seam between the harness and a language
//! model. Two implementations ship: [`OpenAiCompatible`] talks to any server
//! exposing `/v1/chat/completions` (vLLM, llama.cpp, hosted APIs) and
//! [`ScriptedMock`] replays a fixed script for offline tests.
//!
//! Backends never retry. Retry budgets live in the agent loop so they are
//! counted in one place.

mod mock;
mod openai;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::limit::Semaphore;

pub use mock::{load_script, parse_script, Condition, ScriptEntry, ScriptedMock, ScriptedOutcome};
pub use openai::{OpenAiCompatible, OpenAiConfig, API_KEY_ENV};

/// Decoding parameters. Defaults are the benchmark's reference inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub best_of: u32,
    pub repetition_penalty: f64,
    pub seed: i64,
    /// Sample count for self-consistency and majority voting.
    pub num_samples: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_tokens: 8192,
            temperature: 0.7,
            top_p: 0.9,
            best_of: 1,
            repetition_penalty: 1.05,
            seed: 42,
            num_samples: 5,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if self.best_of == 0 {
            return Err("best_of must be positive".into());
        }
        if !(self.repetition_penalty > 0.0 && self.repetition_penalty.is_finite()) {
            return Err(format!(
                "repetition_penalty must be positive, got {}",
                self.repetition_penalty
            ));
        }
        if self.num_samples == 0 {
            return Err("num_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelReply {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ModelReply {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }

    /// Builds a reply, demoting `length` with empty text to `error`.
    pub fn new(text: String, finish_reason: FinishReason, usage: Option<Usage>) -> Self {
        let finish_reason = match finish_reason {
            FinishReason::Length if text.is_empty() => FinishReason::Error,
            other => other,
        };
        Self {
            text,
            finish_reason,
            usage,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("unparseable backend response: {0}")]
    Protocol(String),
    #[error("mock script exhausted after {served} replies")]
    ScriptExhausted { served: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A chat-completion backend. Implementations must be safe to call concurrently.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<ModelReply, GatewayError>;

    /// Draws `n` independent replies. Any failure fails the whole batch.
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
        (0..n).map(|_| self.complete(messages, params)).collect()
    }

    /// Cheap reachability check run before a benchmark starts.
    fn probe(&self) -> Result<(), GatewayError> {
        Ok(())
    }
}

pub(crate) fn check_request(messages: &[ChatMessage]) -> Result<(), GatewayError> {
    if messages.is_empty() {
        return Err(GatewayError::InvalidRequest("no messages".into()));
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != Role::Assistant && m.content.is_empty())
    {
        return Err(GatewayError::InvalidRequest(format!(
            "{:?} message has empty content",
            m.role
        )));
    }
    Ok(())
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<ModelReply, GatewayError> {
        (**self).complete(messages, params)
    }

    fn complete_n(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<ModelReply>, GatewayError> {
        (**self).complete_n(messages, params, n)
    }

    fn probe(&self) -> Result<(), GatewayError> {
        (**self).probe()
    }
}

/// Default bound on in-flight backend requests.
pub const DEFAULT_BACKEND_CONCURRENCY: usize = 4;

/// Wraps a backend so at most `limit` requests are in flight at once.
pub struct Limited<B> {
    inner: B,
    slots: Semaphore,
}

impl<B: ChatBackend> Limited<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Self {
            inner,
            slots: Semaphore::new(limit.max(1)),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Limited<B> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<ModelReply, GatewayError> {
        let _slot = self.slots.acquire();
        self.inner.complete(messages, params)
    }

    fn complete_n(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<ModelReply>, GatewayError> {
        let _slot = self.slots.acquire();
        self.inner.complete_n(messages, params, n)
    }

    fn probe(&self) -> Result<(), GatewayError> {
        self.inner.probe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_settings() {
        let p = SamplingParams::default();
        assert_eq!(p.max_tokens, 8192);
        assert_eq!(p.temperature, 0.7);
        assert_eq!(p.top_p, 0.9);
        assert_eq!(p.best_of, 1);
        assert_eq!(p.repetition_penalty, 1.05);
        assert_eq!(p.seed, 42);
        assert_eq!(p.num_samples, 5);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let bad = [
            SamplingParams { top_p: 1.5, ..Default::default() },
            SamplingParams { top_p: 0.0, ..Default::default() },
            SamplingParams { temperature: -0.1, ..Default::default() },
            SamplingParams { max_tokens: 0, ..Default::default() },
            SamplingParams { repetition_penalty: 0.0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn empty_length_reply_is_error() {
        let r = ModelReply::new(String::new(), FinishReason::Length, None);
        assert_eq!(r.finish_reason, FinishReason::Error);
        let r = ModelReply::new("x".into(), FinishReason::Length, None);
        assert_eq!(r.finish_reason, FinishReason::Length);
    }

    #[test]
    fn empty_user_message_rejected() {
        assert!(check_request(&[]).is_err());
        assert!(check_request(&[ChatMessage::user("")]).is_err());
        assert!(check_request(&[ChatMessage::user("x"), ChatMessage::assistant("")]).is_ok());
    }
}
