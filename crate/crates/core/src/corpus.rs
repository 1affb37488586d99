//! Benchmark task corpus: JSONL loading, linting and the built-in fixture tasks.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id": "p1", "instruction": "...", "entry_point": "f(x)", "tests": ["assert f(1)==1"], "split": "dev"}
//! ```
//!
//! `split` is optional and defaults to `dev`. Unknown fields are ignored with a
//! warning. Instruction text is kept byte-for-byte; no Unicode normalization is
//! applied.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::warn;

/// Keyword every test line must start with.
pub const ASSERTION_PREFIX: &str = "assert ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Dev,
    BlindTest,
}

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub entry_point: String,
    pub tests: Vec<String>,
    #[serde(default)]
    pub split: Split,
}

impl Task {
    /// Checks the per-task invariants, returning a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("id must be non-empty".into());
        }
        if self.instruction.trim().is_empty() {
            return Err("instruction must be non-empty".into());
        }
        if self.tests.is_empty() {
            return Err(
                "tests must be non-empty: a task passes only by satisfying all of its assertions"
                    .into(),
            );
        }
        if let Some(bad) = self.tests.iter().find(|t| !t.starts_with(ASSERTION_PREFIX)) {
            return Err(format!("test does not start with {ASSERTION_PREFIX:?}: {bad:?}"));
        }
        Ok(())
    }
}

/// An ordered, immutable collection of tasks with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    tasks: Vec<Task>,
    source_path: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: task {id:?} is invalid: {reason}")]
    InvalidTask {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("line {line}: duplicate task id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("corpus {path} contains no tasks")]
    EmptyCorpus { path: String },
}

impl Corpus {
    /// Builds a corpus from in-memory tasks, enforcing the same rules as [`load_corpus`].
    pub fn new(tasks: Vec<Task>, source_path: impl Into<String>) -> Result<Self, CorpusError> {
        let source_path = source_path.into();
        if tasks.is_empty() {
            return Err(CorpusError::EmptyCorpus { path: source_path });
        }
        let mut seen = std::collections::HashMap::new();
        for (i, task) in tasks.iter().enumerate() {
            let line = i + 1;
            task.check().map_err(|reason| CorpusError::InvalidTask {
                line,
                id: task.id.clone(),
                reason,
            })?;
            if let Some(first_line) = seen.insert(task.id.clone(), line) {
                return Err(CorpusError::DuplicateId {
                    id: task.id.clone(),
                    line,
                    first_line,
                });
            }
        }
        Ok(Self { tasks, source_path })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Serializes the corpus in the JSONL format accepted by [`load_corpus`].
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for task in &self.tasks {
            out.push_str(&serde_json::to_string(task).expect("task serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }
}

/// Supported corpus serializations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// A single finding produced by [`lint_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

const KNOWN_FIELDS: [&str; 5] = ["id", "instruction", "entry_point", "tests", "split"];

fn parse_record(line_no: usize, bytes: &[u8]) -> Result<Task, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedRecord {
        line: line_no,
        reason,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
    let object: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| malformed(format!("bad JSON: {e}")))?;
    for key in object.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            warn!(line = line_no, field = %key, "ignoring unknown corpus field");
        }
    }
    for key in ["id", "instruction", "entry_point", "tests"] {
        if !object.contains_key(key) {
            return Err(malformed(format!("missing field `{key}`")));
        }
    }
    serde_json::from_value(Value::Object(object)).map_err(|e| malformed(e.to_string()))
}

/// Splits raw file bytes into `(line number, line bytes)` pairs, skipping blank lines.
fn record_lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| (i + 1, line.strip_suffix(b"\r").unwrap_or(line)))
        .filter(|(_, line)| !line.iter().all(u8::is_ascii_whitespace))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CorpusError> {
    fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses corpus text, failing on the first problem.
pub fn parse_corpus(bytes: &[u8], source_path: &str) -> Result<Corpus, CorpusError> {
    let mut tasks = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (line, raw) in record_lines(bytes) {
        let task = parse_record(line, raw)?;
        task.check().map_err(|reason| CorpusError::InvalidTask {
            line,
            id: task.id.clone(),
            reason,
        })?;
        if let Some(first_line) = seen.insert(task.id.clone(), line) {
            return Err(CorpusError::DuplicateId {
                id: task.id,
                line,
                first_line,
            });
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            path: source_path.to_string(),
        });
    }
    Ok(Corpus {
        tasks,
        source_path: source_path.to_string(),
    })
}

/// Loads a corpus file, enforcing every task invariant.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    match format {
        CorpusFormat::Jsonl => parse_corpus(&read_bytes(path)?, &path.display().to_string()),
    }
}

/// Lints a corpus file, collecting every problem instead of stopping at the first.
pub fn lint_corpus(path: impl AsRef<Path>) -> Result<(usize, Vec<Diagnostic>), CorpusError> {
    let bytes = read_bytes(path.as_ref())?;
    Ok(lint_bytes(&bytes))
}

/// Returns the number of valid tasks and the diagnostics found.
pub fn lint_bytes(bytes: &[u8]) -> (usize, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    let mut ok = 0;
    for (line, raw) in record_lines(bytes) {
        let task = match parse_record(line, raw) {
            Ok(task) => task,
            Err(e) => {
                diagnostics.push(Diagnostic {
                    line: Some(line),
                    message: strip_line_prefix(&e.to_string()),
                });
                continue;
            }
        };
        let mut valid = true;
        if let Err(reason) = task.check() {
            valid = false;
            diagnostics.push(Diagnostic {
                line: Some(line),
                message: format!("task {:?}: {reason}", task.id),
            });
        }
        if !ids.insert(task.id.clone()) {
            valid = false;
            diagnostics.push(Diagnostic {
                line: Some(line),
                message: format!("duplicate task id {:?}", task.id),
            });
        }
        if valid {
            ok += 1;
        }
    }
    if ids.is_empty() && diagnostics.is_empty() {
        diagnostics.push(Diagnostic {
            line: None,
            message: "corpus contains no tasks".into(),
        });
    }
    (ok, diagnostics)
}

fn strip_line_prefix(message: &str) -> String {
    match message.split_once(": ") {
        Some((head, rest)) if head.starts_with("line ") => rest.to_string(),
        _ => message.to_string(),
    }
}

fn fixture(id: &str, instruction: &str, entry_point: &str, tests: &[&str]) -> Task {
    Task {
        id: id.to_string(),
        instruction: instruction.to_string(),
        entry_point: entry_point.to_string(),
        tests: tests.iter().map(|t| t.to_string()).collect(),
        split: Split::Dev,
    }
}

/// The five built-in tasks: three dataset samples and two error-recovery cases.
pub fn builtin_fixtures() -> Corpus {
    let tasks = vec![
        fixture(
            "is_palindrome",
            "একটি ফাংশন লিখুন যা পরীক্ষা করবে প্রদত্ত স্ট্রিং প্যালিনড্রোম কিনা। খালি স্ট্রিংকে প্যালিনড্রোম হিসেবে গণ্য হবে।",
            "is_palindrome(s)",
            &[
                r#"assert is_palindrome("TENET") == True"#,
                r#"assert is_palindrome("Bangla") == False"#,
                r#"assert is_palindrome(" ") == True"#,
            ],
        ),
        fixture(
            "reverse_words",
            "একটি ফাংশন লিখুন যা একটি স্ট্রিং-এর মধ্যে থাকা শব্দগুলোকে উল্টো করে সাজাবে।",
            "reverse_words(string)",
            &[
                r#"assert reverse_words("hello")=="hello""#,
                r#"assert reverse_words(" a b ") == "b a""#,
                r#"assert reverse_words("hello world") == "world hello""#,
            ],
        ),
        fixture(
            "opposite_Signs",
            "একটি পাইথন ফাংশন লিখুন যা দিয়ে দুইটি পূর্ণসংখ্যার বিপরীত চিহ্ন আছে কিনা তা পরীক্ষা করা যায়।",
            "opposite_Signs(n1, n2)",
            &[
                "assert opposite_Signs(1,-2) == True",
                "assert opposite_Signs(3,2) == False",
                "assert opposite_Signs(-10,-10) == False",
            ],
        ),
        fixture(
            "remove_Occ",
            "স্ট্রিং থেকে প্রদত্ত অক্ষরের প্রথম এবং শেষ উপসর্গ মুছে ফেলুন।",
            "remove_Occ(s, ch)",
            &[
                r#"assert remove_Occ("hello","l") == "heo""#,
                r#"assert remove_Occ("banana","a") == "bann""#,
                r#"assert remove_Occ("abc","x") == "abc""#,
            ],
        ),
        fixture(
            "sort_matrix",
            "একটি প্রদত্ত ম্যাট্রিক্সকে তার সারিগুলির যোগফল অনুযায়ী সাজান।",
            "sort_matrix(M)",
            &[
                "assert sort_matrix([[1,2,3],[2,4,5],[0,1,1]]) == [[0,1,1],[1,2,3],[2,4,5]]",
                "assert sort_matrix([[5,5],[2,2],[3,3]]) == [[2,2],[3,3],[5,5]]",
            ],
        ),
    ];
    Corpus::new(tasks, "builtin:fixtures").expect("built-in fixtures are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        parse_corpus(text.as_bytes(), "mem")
    }

    #[test]
    fn minimal_record() {
        let corpus = parse(
            r#"{"id":"p1","instruction":"…","entry_point":"f(x)","tests":["assert f(1)==1"]}"#,
        )
        .unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.tasks()[0].split, Split::Dev);
    }

    #[test]
    fn duplicate_id_is_named() {
        let line = r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":["assert f(1)==1"]}"#;
        let err = parse(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id, line: 2, first_line: 1 } if id == "p1"));
        assert!(err.to_string().contains("\"p1\""));
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let good = r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":["assert f(1)==1"]}"#;
        let err = parse(&format!("{good}\n\n{{not json\n")).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 3, .. }), "{err}");

        let err = parse(r#"{"id":"p1","instruction":"x","tests":["assert 1"]}"#).unwrap_err();
        assert!(err.to_string().contains("entry_point"), "{err}");
    }

    #[test]
    fn task_invariants_enforced() {
        let empty_tests = r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":[]}"#;
        assert!(matches!(parse(empty_tests), Err(CorpusError::InvalidTask { .. })));
        let no_assert = r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":["f(1)==1"]}"#;
        assert!(matches!(parse(no_assert), Err(CorpusError::InvalidTask { .. })));
        let blank = r#"{"id":"p1","instruction":"  ","entry_point":"f(x)","tests":["assert 1"]}"#;
        assert!(matches!(parse(blank), Err(CorpusError::InvalidTask { .. })));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse("\n\n"), Err(CorpusError::EmptyCorpus { .. })));
    }

    #[test]
    fn invalid_utf8_rejected() {
        let mut bytes = br#"{"id":"p1","instruction":""#.to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe]);
        bytes.extend_from_slice(br#"","entry_point":"f(x)","tests":["assert 1"]}"#);
        let err = parse_corpus(&bytes, "mem").unwrap_err();
        assert!(err.to_string().contains("UTF-8"), "{err}");
    }

    #[test]
    fn unknown_fields_ignored() {
        let corpus = parse(
            r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":["assert 1"],"canonical_solution":"pass"}"#,
        )
        .unwrap();
        assert_eq!(corpus.tasks()[0].id, "p1");
    }

    #[test]
    fn blind_test_split_parses() {
        let corpus = parse(
            r#"{"id":"p1","instruction":"x","entry_point":"f(x)","tests":["assert 1"],"split":"blind_test"}"#,
        )
        .unwrap();
        assert_eq!(corpus.tasks()[0].split, Split::BlindTest);
    }

    #[test]
    fn fixtures_match_tables() {
        let fixtures = builtin_fixtures();
        assert_eq!(fixtures.len(), 5);
        let all_tests: Vec<&str> = fixtures
            .tasks()
            .iter()
            .flat_map(|t| t.tests.iter().map(String::as_str))
            .collect();
        assert!(all_tests.contains(&"assert opposite_Signs(1,-2) == True"));
        assert!(all_tests.iter().any(|t| t.contains(
            "sort_matrix([[1,2,3],[2,4,5],[0,1,1]]) == [[0,1,1],[1,2,3],[2,4,5]]"
        )));
        let palindrome = fixtures.get("is_palindrome").unwrap();
        assert_eq!(
            palindrome.tests,
            vec![
                "assert is_palindrome(\"TENET\") == True",
                "assert is_palindrome(\"Bangla\") == False",
                "assert is_palindrome(\" \") == True",
            ]
        );
        let ids: Vec<&str> = fixtures.tasks().iter().map(|t| t.id.as_str()).collect();
        assert_eq!(
            ids,
            ["is_palindrome", "reverse_words", "opposite_Signs", "remove_Occ", "sort_matrix"]
        );
    }

    #[test]
    fn lint_collects_everything() {
        let text = concat!(
            r#"{"id":"a","instruction":"x","entry_point":"f(x)","tests":["assert 1"]}"#,
            "\n",
            r#"{"id":"a","instruction":"x","entry_point":"f(x)","tests":["assert 1"]}"#,
            "\n",
            r#"{"id":"b","instruction":"x","entry_point":"f(x)","tests":[]}"#,
            "\n",
            "garbage\n",
        );
        let (ok, diags) = lint_bytes(text.as_bytes());
        assert_eq!(ok, 1);
        assert_eq!(diags.len(), 3);
        assert!(diags[0].message.contains("\"a\""));
        assert!(diags[1].message.contains("non-empty"));
        assert_eq!(diags[2].line, Some(4));
    }
}
