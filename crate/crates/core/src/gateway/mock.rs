use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    check_request, ChatBackend, ChatMessage, FinishReason, GatewayError, ModelReply, Role,
    SamplingParams,
};

/// Guard on a script entry. All present fields must match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Condition {
    /// Substring of the most recent user message (the task prompt or the latest observation).
    pub last_user_contains: Option<String>,
    /// Substring of the first user message, i.e. the rendered task.
    pub task_contains: Option<String>,
}

impl Condition {
    pub fn last_user_contains(needle: impl Into<String>) -> Self {
        Self {
            last_user_contains: Some(needle.into()),
            ..Self::default()
        }
    }

    pub fn task_contains(needle: impl Into<String>) -> Self {
        Self {
            task_contains: Some(needle.into()),
            ..Self::default()
        }
    }

    fn matches(&self, messages: &[ChatMessage]) -> bool {
        let mut users = messages.iter().filter(|m| m.role == Role::User);
        let first = users.next().map(|m| m.content.as_str()).unwrap_or("");
        let last = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        self.task_contains.as_deref().is_none_or(|n| first.contains(n))
            && self
                .last_user_contains
                .as_deref()
                .is_none_or(|n| last.contains(n))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedOutcome {
    Reply(ModelReply),
    /// Simulated non-2xx response.
    Error { status: u16, body: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub outcome: ScriptedOutcome,
    pub when: Option<Condition>,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            outcome: ScriptedOutcome::Reply(ModelReply::stop(text)),
            when: None,
        }
    }

    pub fn error(status: u16, body: impl Into<String>) -> Self {
        Self {
            outcome: ScriptedOutcome::Error {
                status,
                body: body.into(),
            },
            when: None,
        }
    }

    pub fn when(mut self, condition: Condition) -> Self {
        self.when = Some(condition);
        self
    }
}

#[derive(Debug, Default)]
struct MockState {
    queue: VecDeque<ScriptEntry>,
    served: usize,
    calls: Vec<Vec<ChatMessage>>,
}

/// Deterministic backend replaying a script.
///
/// Each call consumes the earliest remaining entry whose condition matches the
/// conversation; unconditional entries always match. Calls are serialized so
/// the consumption order is well defined.
#[derive(Debug)]
pub struct ScriptedMock {
    state: Mutex<MockState>,
}

impl ScriptedMock {
    pub fn new(script: Vec<ScriptEntry>) -> Result<Self, GatewayError> {
        if script.is_empty() {
            return Err(GatewayError::InvalidRequest("mock script is empty".into()));
        }
        Ok(Self {
            state: Mutex::new(MockState {
                queue: script.into(),
                ..MockState::default()
            }),
        })
    }

    /// Convenience constructor from unconditional reply texts.
    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Result<Self, GatewayError> {
        Self::new(texts.into_iter().map(ScriptEntry::reply).collect())
    }

    /// Every message list this backend has been called with, in call order.
    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.lock().calls.clone()
    }

    pub fn remaining(&self) -> usize {
        self.lock().queue.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn pop(state: &mut MockState, messages: &[ChatMessage]) -> Result<ModelReply, GatewayError> {
        state.calls.push(messages.to_vec());
        let position = state
            .queue
            .iter()
            .position(|e| e.when.as_ref().is_none_or(|c| c.matches(messages)));
        let Some(entry) = position.and_then(|i| state.queue.remove(i)) else {
            return Err(GatewayError::ScriptExhausted {
                served: state.served,
            });
        };
        state.served += 1;
        match entry.outcome {
            ScriptedOutcome::Reply(reply) => Ok(reply),
            ScriptedOutcome::Error { status, body } => Err(GatewayError::Backend { status, body }),
        }
    }
}

impl ChatBackend for ScriptedMock {
    fn complete(
        &self,
        messages: &[ChatMessage],
        _params: &SamplingParams,
    ) -> Result<ModelReply, GatewayError> {
        check_request(messages)?;
        Self::pop(&mut self.lock(), messages)
    }

    fn complete_n(
        &self,
        messages: &[ChatMessage],
        _params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<ModelReply>, GatewayError> {
        check_request(messages)?;
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be at least 1".into()));
        }
        // Hold the lock across the batch so concurrent batches do not interleave.
        let mut state = self.lock();
        (0..n).map(|_| Self::pop(&mut state, messages)).collect()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    text: Option<String>,
    #[serde(default)]
    finish_reason: FinishReason,
    error: Option<ScriptLineError>,
    when_last_contains: Option<String>,
    when_task_contains: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLineError {
    status: u16,
    #[serde(default)]
    body: String,
}

/// Parses a JSONL mock script.
///
/// Each line is `{"text": ...}` or `{"error": {"status": 500, "body": ...}}`, optionally
/// guarded by `when_last_contains` and/or `when_task_contains`.
pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, String> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScriptLine =
            serde_json::from_str(line).map_err(|e| format!("script line {}: {e}", i + 1))?;
        let outcome = match (parsed.text, parsed.error) {
            (Some(text), None) => ScriptedOutcome::Reply(ModelReply::new(text, parsed.finish_reason, None)),
            (None, Some(err)) => ScriptedOutcome::Error {
                status: err.status,
                body: err.body,
            },
            _ => {
                return Err(format!(
                    "script line {}: exactly one of `text` or `error` is required",
                    i + 1
                ))
            }
        };
        let when = if parsed.when_last_contains.is_some() || parsed.when_task_contains.is_some() {
            Some(Condition {
                last_user_contains: parsed.when_last_contains,
                task_contains: parsed.when_task_contains,
            })
        } else {
            None
        };
        entries.push(ScriptEntry { outcome, when });
    }
    if entries.is_empty() {
        return Err("mock script is empty".into());
    }
    Ok(entries)
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<ScriptEntry>, String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read mock script {}: {e}", path.display()))?;
    parse_script(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SamplingParams {
        SamplingParams::default()
    }

    fn convo(last: &str) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system("sys"),
            ChatMessage::user("task prompt"),
            ChatMessage::assistant("<code>x</code>"),
            ChatMessage::user(last),
        ]
    }

    #[test]
    fn passthrough() {
        let mock = ScriptedMock::from_texts(["hello"]).unwrap();
        let reply = mock.complete(&[ChatMessage::user("hi")], &params()).unwrap();
        assert_eq!(reply, ModelReply::stop("hello"));
    }

    #[test]
    fn ordered_pop_then_exhaustion() {
        let mock = ScriptedMock::from_texts(["buggy", "fixed"]).unwrap();
        let msgs = [ChatMessage::user("hi")];
        assert_eq!(mock.complete(&msgs, &params()).unwrap().text, "buggy");
        assert_eq!(mock.complete(&msgs, &params()).unwrap().text, "fixed");
        assert_eq!(
            mock.complete(&msgs, &params()),
            Err(GatewayError::ScriptExhausted { served: 2 })
        );
    }

    #[test]
    fn empty_script_rejected() {
        assert!(ScriptedMock::new(vec![]).is_err());
    }

    #[test]
    fn rule_fires_only_on_matching_conversation() {
        let script = || {
            vec![ScriptEntry::reply("R").when(Condition::last_user_contains("TypeError"))]
        };

        let matching = ScriptedMock::new(script()).unwrap();
        let reply = matching
            .complete(&convo("Traceback: TypeError: unsupported operand"), &params())
            .unwrap();
        assert_eq!(reply.text, "R");

        let other = ScriptedMock::new(script()).unwrap();
        let err = other
            .complete(&convo("NameError: name 'x' is not defined"), &params())
            .unwrap_err();
        assert!(matches!(err, GatewayError::ScriptExhausted { served: 0 }));
        assert_eq!(other.remaining(), 1);
    }

    #[test]
    fn guarded_entries_are_skipped_until_they_match() {
        let mock = ScriptedMock::new(vec![
            ScriptEntry::reply("fixed").when(Condition::last_user_contains("TypeError")),
            ScriptEntry::reply("buggy"),
        ])
        .unwrap();
        assert_eq!(mock.complete(&convo("task"), &params()).unwrap().text, "buggy");
        assert_eq!(mock.complete(&convo("TypeError"), &params()).unwrap().text, "fixed");
    }

    #[test]
    fn task_condition_uses_first_user_message() {
        let mock = ScriptedMock::new(vec![
            ScriptEntry::reply("for b").when(Condition::task_contains("beta")),
            ScriptEntry::reply("for a").when(Condition::task_contains("alpha")),
        ])
        .unwrap();
        let a = [ChatMessage::user("alpha task"), ChatMessage::assistant("x"), ChatMessage::user("obs")];
        assert_eq!(mock.complete(&a, &params()).unwrap().text, "for a");
    }

    #[test]
    fn empty_reply_delivered_as_is() {
        let mock = ScriptedMock::from_texts([""]).unwrap();
        let reply = mock.complete(&[ChatMessage::user("hi")], &params()).unwrap();
        assert_eq!(reply.text, "");
    }

    #[test]
    fn complete_n_in_script_order() {
        let texts = ["a", "b", "c", "d", "e"];
        let mock = ScriptedMock::from_texts(texts).unwrap();
        let replies = mock.complete_n(&[ChatMessage::user("hi")], &params(), 5).unwrap();
        let got: Vec<&str> = replies.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(got, texts);
    }

    #[test]
    fn complete_n_one_equals_complete() {
        let a = ScriptedMock::from_texts(["x", "y"]).unwrap();
        let b = ScriptedMock::from_texts(["x", "y"]).unwrap();
        let msgs = [ChatMessage::user("hi")];
        assert_eq!(a.complete_n(&msgs, &params(), 1).unwrap(), vec![b.complete(&msgs, &params()).unwrap()]);
    }

    #[test]
    fn complete_n_exhaustion_fails_batch() {
        let mock = ScriptedMock::from_texts(["a", "b"]).unwrap();
        let err = mock.complete_n(&[ChatMessage::user("hi")], &params(), 3).unwrap_err();
        assert!(matches!(err, GatewayError::ScriptExhausted { served: 2 }));
    }

    #[test]
    fn scripted_error_maps_to_backend_error() {
        let mock = ScriptedMock::new(vec![ScriptEntry::error(503, "overloaded")]).unwrap();
        let err = mock.complete(&[ChatMessage::user("hi")], &params()).unwrap_err();
        assert_eq!(err, GatewayError::Backend { status: 503, body: "overloaded".into() });
    }

    #[test]
    fn script_file_format() {
        let text = concat!(
            r#"{"text": "<code>bad</code>"}"#, "\n",
            "\n",
            r#"{"text": "<code>good</code>", "when_last_contains": "TypeError"}"#, "\n",
            r#"{"error": {"status": 500, "body": "boom"}, "when_task_contains": "sort_matrix"}"#, "\n",
        );
        let entries = parse_script(text).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[1].when, Some(Condition::last_user_contains("TypeError")));
        assert!(matches!(entries[2].outcome, ScriptedOutcome::Error { status: 500, .. }));

        assert!(parse_script(r#"{"text": "a", "error": {"status": 1}}"#).is_err());
        assert!(parse_script(r#"{"txt": "a"}"#).is_err());
        assert!(parse_script("").is_err());
    }
}
