//! HTTP clients against a local server, and the recorded fixtures.
//!
//! `GRAPE_RECORD_FIXTURES=1 cargo test --test http_wire` rewrites the
//! fixtures from a fresh recording.

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::server::{MockServer, Reply};
use common::wire::{self, FIXTURE_BASE};
use grape::backends::{
    read_exchanges, BackendError, ChatBackend, Editor, Exchange, Generator, HttpChat, HttpEditor, HttpGenerator,
    RecordingTransport, ReplayTransport, Transport, UreqTransport,
};

fn transport() -> RecordingTransport<UreqTransport> {
    RecordingTransport::new(UreqTransport::new(Duration::from_secs(10)))
}

fn normalized(mut exchanges: Vec<Exchange>, base: &str) -> Vec<Exchange> {
    for e in &mut exchanges {
        e.url = e.url.replacen(base, FIXTURE_BASE, 1);
    }
    exchanges
}

fn check_fixture(name: &str, recorded: Vec<Exchange>) {
    let path = wire::fixture_dir().join(name);
    if std::env::var_os("GRAPE_RECORD_FIXTURES").is_some() {
        let text: String = recorded
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        std::fs::write(&path, text).unwrap();
    }
    let stored = read_exchanges(&path).unwrap();
    assert_eq!(stored, recorded, "{name} drifted from the recorded fixture");
}

#[test]
fn recordings_match_fixtures() {
    let server = MockServer::start(wire::handler);

    let rec = Arc::new(transport());
    let f = wire::planner_fixture();
    let chat = HttpChat::new(wire::chat_config(&server.base), rec.clone()).unwrap();
    let outcome = f.planner.plan(&f.prompt, &f.image, &chat, &f.store).unwrap();
    assert_eq!(outcome.report.plan.steps()[0].text, wire::INSTRUCTION);
    assert_eq!(outcome.usage.prompt_tokens, 2216);
    check_fixture("chat.jsonl", normalized(rec.exchanges(), &server.base));

    let rec = Arc::new(transport());
    let gen = HttpGenerator::new(wire::generate_config(&server.base), rec.clone()).unwrap();
    assert_eq!(gen.generate(&wire::generate_request()).unwrap().bytes, wire::GENERATED_PNG);
    check_fixture("generate.jsonl", normalized(rec.exchanges(), &server.base));

    let rec = Arc::new(transport());
    let editor = HttpEditor::new(wire::edit_config(&server.base), rec.clone()).unwrap();
    assert_eq!(editor.edit(&wire::edit_request()).unwrap().bytes, wire::EDITED_PNG);
    check_fixture("edit.jsonl", normalized(rec.exchanges(), &server.base));
}

#[test]
fn fixtures_replay() {
    let replay = |name: &str| -> Arc<dyn Transport> {
        Arc::new(ReplayTransport::from_file(wire::fixture_dir().join(name)).unwrap())
    };
    let f = wire::planner_fixture();
    let chat = HttpChat::new(wire::chat_config(FIXTURE_BASE), replay("chat.jsonl")).unwrap();
    let reply = chat.chat(&wire::chat_request(&f)).unwrap();
    assert_eq!(reply.text, wire::planner_reply_text());

    let gen = HttpGenerator::new(wire::generate_config(FIXTURE_BASE), replay("generate.jsonl")).unwrap();
    assert_eq!(gen.generate(&wire::generate_request()).unwrap().bytes, wire::GENERATED_PNG);

    let editor = HttpEditor::new(wire::edit_config(FIXTURE_BASE), replay("edit.jsonl")).unwrap();
    assert_eq!(editor.edit(&wire::edit_request()).unwrap().bytes, wire::EDITED_PNG);

    // A different seed is a different request and finds no recording.
    let mut other = wire::generate_request();
    other.seed = 1;
    assert!(matches!(gen.generate(&other), Err(BackendError::Transport { .. })));
}

#[test]
fn bearer_comes_from_the_named_environment_variable() {
    let server = MockServer::start(wire::handler);
    std::env::set_var("GRAPE_WIRE_TEST_KEY", "sk-from-env");
    let mut config = wire::generate_config(&server.base);
    config.api_key_env = Some("GRAPE_WIRE_TEST_KEY".into());
    let rec = Arc::new(transport());
    let gen = HttpGenerator::new(config, rec.clone()).unwrap();
    gen.generate(&wire::generate_request()).unwrap();
    let seen = server.received();
    assert_eq!(seen[0].headers.get("authorization").map(String::as_str), Some("Bearer sk-from-env"));
    assert_eq!(seen[0].headers.get("content-type").map(String::as_str), Some("application/json"));
    let stored = serde_json::to_string(&rec.exchanges()).unwrap();
    assert!(!stored.contains("sk-from-env"));

    let mut unset = wire::generate_config(&server.base);
    unset.api_key_env = Some("GRAPE_WIRE_TEST_SURELY_UNSET".into());
    assert!(matches!(
        HttpGenerator::new(unset, rec),
        Err(BackendError::Config(_))
    ));
}

#[test]
fn retries_stop_at_the_configured_bound() {
    let server = MockServer::start(|_| Reply {
        status: 503,
        content_type: "text/plain",
        body: b"overloaded".to_vec(),
    });
    let mut config = wire::generate_config(&server.base);
    config.max_retries = 2;
    config.backoff_initial_ms = 1;
    config.backoff_max_ms = 2;
    let gen = HttpGenerator::new(config, Arc::new(transport())).unwrap();
    match gen.generate(&wire::generate_request()) {
        Err(BackendError::Status { status: 503, attempts: 3, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.received().len(), 3);
}

#[test]
fn rejected_edits_and_client_errors_are_not_retried() {
    let server = MockServer::start(|r| Reply {
        status: if r.path == "/edit" { 422 } else { 400 },
        content_type: "text/plain",
        body: b"cannot apply".to_vec(),
    });
    let mut config = wire::edit_config(&server.base);
    config.max_retries = 3;
    let editor = HttpEditor::new(config, Arc::new(transport())).unwrap();
    assert!(matches!(
        editor.edit(&wire::edit_request()),
        Err(BackendError::InstructionRejected(m)) if m.contains("cannot apply")
    ));
    let mut config = wire::generate_config(&server.base);
    config.max_retries = 3;
    let gen = HttpGenerator::new(config, Arc::new(transport())).unwrap();
    assert!(matches!(
        gen.generate(&wire::generate_request()),
        Err(BackendError::Status { status: 400, attempts: 1, .. })
    ));
    assert_eq!(server.received().len(), 2);
}

#[test]
fn chat_tolerates_part_arrays_and_missing_usage() {
    let server = MockServer::start(|_| Reply {
        status: 200,
        content_type: "application/json",
        body: br#"{"choices":[{"message":{"role":"assistant","content":[{"type":"text","text":"Yes"},{"type":"text","text":"."}]}}]}"#.to_vec(),
    });
    let chat = HttpChat::new(wire::chat_config(&format!("{}/v1/chat/completions", server.base)), Arc::new(transport())).unwrap();
    let f = wire::planner_fixture();
    let reply = chat.chat(&wire::chat_request(&f)).unwrap();
    assert_eq!(reply.text, "Yes.");
    assert!(reply.usage.missing);
    assert_eq!(server.received()[0].path, "/v1/chat/completions");
}
