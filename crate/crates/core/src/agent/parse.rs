use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One parsed model turn.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentTurn {
    pub thought: Option<String>,
    pub code: Option<String>,
    /// Language declared on a fenced block, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_language: Option<String>,
    pub answer: Option<String>,
    pub raw: String,
}

impl AgentTurn {
    /// Source to execute for this turn: the answer if one was given, else the code block.
    pub fn executable(&self) -> Option<&str> {
        self.answer.as_deref().or(self.code.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidTurn {
    #[error("empty response")]
    Empty,
    #[error("response has no <thought>, <code>, <answer> or fenced code block")]
    NoContent,
}

/// Inner text of every `<tag>…</tag>` span, in order. Unclosed spans are ignored.
fn tag_spans<'a>(raw: &'a str, tag: &str) -> Vec<(usize, usize, &'a str)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut spans = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = raw[cursor..].find(&open) {
        let start = cursor + rel;
        let body = start + open.len();
        let Some(rel_end) = raw[body..].find(&close) else {
            break;
        };
        let end = body + rel_end;
        spans.push((start, end + close.len(), &raw[body..end]));
        cursor = end + close.len();
    }
    spans
}

#[derive(Debug, PartialEq, Eq)]
struct Fenced {
    language: Option<String>,
    body: String,
}

/// Closed Markdown code fences (``` or ~~~), in order.
fn fenced_blocks(text: &str) -> Vec<Fenced> {
    let mut blocks = Vec::new();
    let mut open: Option<(&str, Option<String>, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match open.take() {
            None => {
                for fence in ["```", "~~~"] {
                    if let Some(info) = trimmed.strip_prefix(fence) {
                        let lang = info.split_whitespace().next().map(str::to_string);
                        open = Some((fence, lang, Vec::new()));
                        break;
                    }
                }
            }
            Some((fence, lang, mut lines)) => {
                if trimmed.trim_end() == fence {
                    blocks.push(Fenced {
                        language: lang,
                        body: lines.join("\n"),
                    });
                } else {
                    lines.push(line);
                    open = Some((fence, lang, lines));
                }
            }
        }
    }
    blocks
}

/// Strips blank leading/trailing lines and trailing whitespace, keeping first-line indentation.
fn clean_source(text: &str) -> String {
    let text = text.trim_end();
    let first_content = text
        .char_indices()
        .find(|&(_, c)| !c.is_whitespace())
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let line_start = text[..first_content].rfind('\n').map_or(0, |i| i + 1);
    text[line_start..].to_string()
}

/// Source inside a tag: if the tag wraps fenced blocks, the last fence's body.
fn tagged_source(inner: &str) -> Option<(String, Option<String>)> {
    let (body, language) = match fenced_blocks(inner).pop() {
        Some(block) => (block.body, block.language),
        None => (inner.to_string(), None),
    };
    let body = clean_source(&body);
    (!body.is_empty()).then_some((body, language))
}

/// Extracts thought, code and answer from a raw model reply.
///
/// Tags win over Markdown fences. Without a `<code>` or `<answer>` tag, the
/// last fenced block outside any `<thought>` span becomes the code. Text inside
/// `<thought>` is never treated as code.
pub fn parse_turn(raw: &str) -> Result<AgentTurn, InvalidTurn> {
    if raw.trim().is_empty() {
        return Err(InvalidTurn::Empty);
    }
    let thoughts = tag_spans(raw, "thought");
    let thought = thoughts
        .iter()
        .map(|(_, _, inner)| inner.trim())
        .find(|t| !t.is_empty())
        .map(str::to_string);

    let code = tag_spans(raw, "code")
        .into_iter()
        .rev()
        .find_map(|(_, _, inner)| tagged_source(inner));
    let answer = tag_spans(raw, "answer")
        .into_iter()
        .rev()
        .find_map(|(_, _, inner)| tagged_source(inner))
        .map(|(source, _)| source);

    let code = if code.is_none() && answer.is_none() {
        let mut outside = String::with_capacity(raw.len());
        let mut cursor = 0;
        for &(start, end, _) in &thoughts {
            outside.push_str(&raw[cursor..start]);
            outside.push('\n');
            cursor = end;
        }
        outside.push_str(&raw[cursor..]);
        fenced_blocks(&outside)
            .into_iter()
            .rev()
            .map(|b| (clean_source(&b.body), b.language))
            .find(|(body, _)| !body.is_empty())
    } else {
        code
    };

    if thought.is_none() && code.is_none() && answer.is_none() {
        return Err(InvalidTurn::NoContent);
    }
    let (code, code_language) = match code {
        Some((source, language)) => (Some(source), language),
        None => (None, None),
    };
    Ok(AgentTurn {
        thought,
        code,
        code_language,
        answer,
        raw: raw.to_string(),
    })
}
