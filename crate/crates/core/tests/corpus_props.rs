use codeact_core::corpus::{builtin_fixtures, lint_bytes, parse_corpus, Corpus, CorpusError, Split, Task};
use proptest::prelude::*;

fn task() -> impl Strategy<Value = Task> {
    (
        "[A-Za-z_][A-Za-z0-9_]{0,15}",
        "\\PC{1,40}",
        "\\PC{0,20}",
        proptest::collection::vec("\\PC{0,30}", 1..5),
        any::<bool>(),
    )
        .prop_filter("instruction must have visible text", |(_, ins, ..)| !ins.trim().is_empty())
        .prop_map(|(id, instruction, entry_point, tests, blind)| Task {
            id,
            instruction,
            entry_point,
            tests: tests.into_iter().map(|t| format!("assert {t}")).collect(),
            split: if blind { Split::BlindTest } else { Split::Dev },
        })
}

fn unique_tasks() -> impl Strategy<Value = Vec<Task>> {
    proptest::collection::vec(task(), 1..8).prop_map(|tasks| {
        tasks
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.id = format!("{}_{i}", t.id);
                t
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn jsonl_round_trip(tasks in unique_tasks()) {
        let corpus = Corpus::new(tasks.clone(), "mem").unwrap();
        let text = corpus.to_jsonl();
        let back = parse_corpus(text.as_bytes(), "mem").unwrap();
        prop_assert_eq!(back.tasks(), &tasks[..]);
        prop_assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn lint_agrees_with_loader_on_valid_input(tasks in unique_tasks()) {
        let text = Corpus::new(tasks.clone(), "mem").unwrap().to_jsonl();
        let (ok, diagnostics) = lint_bytes(text.as_bytes());
        prop_assert_eq!(ok, tasks.len());
        prop_assert!(diagnostics.is_empty());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let loaded = parse_corpus(&bytes, "fuzz");
        let (ok, diagnostics) = lint_bytes(&bytes);
        match loaded {
            Ok(corpus) => {
                prop_assert_eq!(ok, corpus.len());
                prop_assert!(diagnostics.is_empty());
            }
            Err(_) => prop_assert!(!diagnostics.is_empty()),
        }
    }
}

#[test]
fn unicode_survives_byte_for_byte() {
    let fixtures = builtin_fixtures();
    let text = fixtures.to_jsonl();
    assert!(text.chars().any(|c| ('\u{0980}'..='\u{09FF}').contains(&c)), "Bangla text escaped");
    let back = parse_corpus(text.as_bytes(), "fixtures").unwrap();
    assert_eq!(back.tasks(), fixtures.tasks());
    for (a, b) in back.tasks().iter().zip(fixtures.tasks()) {
        assert_eq!(a.instruction.as_bytes(), b.instruction.as_bytes());
    }
}

#[test]
fn crlf_and_blank_lines_are_tolerated() {
    let text = builtin_fixtures().to_jsonl().replace('\n', "\r\n\r\n");
    assert_eq!(parse_corpus(text.as_bytes(), "crlf").unwrap().len(), 5);
}

#[test]
fn errors_name_the_line() {
    let mut text = builtin_fixtures().to_jsonl();
    text.push_str("{\"id\": \"x\", \"instruction\": \"i\", \"entry_point\": \"f()\", \"tests\": [\"f() == 1\"]}\n");
    match parse_corpus(text.as_bytes(), "bad") {
        Err(CorpusError::InvalidTask { line, id, .. }) => {
            assert_eq!(line, 6);
            assert_eq!(id, "x");
        }
        other => panic!("unexpected {other:?}"),
    }
    let (ok, diagnostics) = lint_bytes(text.as_bytes());
    assert_eq!(ok, 5);
    assert_eq!(diagnostics.len(), 1);
    assert_eq!(diagnostics[0].line, Some(6));
}

#[test]
fn split_defaults_to_dev() {
    let line = r#"{"id":"t","instruction":"i","entry_point":"f()","tests":["assert f()"]}"#;
    let corpus = parse_corpus(line.as_bytes(), "mem").unwrap();
    assert_eq!(corpus.tasks()[0].split, Split::Dev);
}
