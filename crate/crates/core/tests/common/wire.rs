//! The canonical chat, generate and edit exchanges behind the recorded
//! fixtures in `tests/fixtures/http`.

use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use grape::backends::{generate, BackendConfig, ChatRequest, EditRequest, GenerateRequest};
use grape::model::{EditPlan, Element, ImageKind, ImageRef, PlanSource, PromptRecord};
use grape::planner::{build_report, Planner, PlannerMode, PromptLibrary};
use grape::simworld::{SimGenerator, SimOptions};
use grape::store::MemoryStore;

use super::server::{Received, Reply};

/// Stands in for the recording server's address in stored fixtures.
pub const FIXTURE_BASE: &str = "http://backend.test";

pub const PROMPT: &str = "a red car and a blue bowl";
pub const INSTRUCTION: &str = "Add a blue bowl to the scene";

/// A PNG signature followed by bytes that are not valid UTF-8, so the
/// generate fixture exercises base64 body storage.
pub const GENERATED_PNG: &[u8] = b"\x89PNG\r\n\x1a\n\x00\x00\x00\x0dIHDR\xff\xfe fixture";
pub const EDITED_PNG: &[u8] = b"\x89PNG\r\n\x1a\n\x00\x00\x00\x0dIHDR\xff\xfe edited";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/http")
}

pub fn chat_config(base: &str) -> BackendConfig {
    let mut c = BackendConfig::new(base, "gpt-4o");
    c.max_retries = 0;
    c
}

pub fn generate_config(base: &str) -> BackendConfig {
    let mut c = BackendConfig::new(format!("{base}/generate"), "sd-1.5");
    c.max_retries = 0;
    c
}

pub fn edit_config(base: &str) -> BackendConfig {
    let mut c = BackendConfig::new(format!("{base}/edit"), "pixedit");
    c.max_retries = 0;
    c
}

pub struct PlannerFixture {
    pub planner: Planner,
    pub prompt: PromptRecord,
    pub image: ImageRef,
    pub store: MemoryStore,
}

/// The structured planner with the built-in library, asked about a
/// simulated generation of [`PROMPT`] that is missing the bowl.
pub fn planner_fixture() -> PlannerFixture {
    let store = MemoryStore::new();
    let planner = PromptLibrary::builtin()
        .planner(PlannerMode::Structured, &store, 0)
        .unwrap();
    let prompt = grape::simworld::random_prompt_set(0, 1, &[1]).remove(0);
    let prompt = PromptRecord {
        id: "wire-0".into(),
        text: PROMPT.into(),
        ..prompt
    };
    let gen = SimGenerator::new(SimOptions {
        error_rate: 1.0,
        ..SimOptions::default()
    });
    let (image, _) = generate("a red car", 0, &gen, &store).unwrap();
    PlannerFixture {
        planner,
        prompt,
        image,
        store,
    }
}

pub fn chat_request(f: &PlannerFixture) -> ChatRequest {
    f.planner.assemble_request(&f.prompt, &f.image, &f.store).unwrap()
}

pub fn generate_request() -> GenerateRequest {
    GenerateRequest {
        prompt: PROMPT.into(),
        seed: 0,
    }
}

pub fn edit_request() -> EditRequest {
    EditRequest {
        image: GENERATED_PNG.to_vec(),
        kind: ImageKind::Raster,
        instruction: INSTRUCTION.into(),
        seed: 0,
    }
}

pub fn planner_reply_text() -> String {
    let mut car = Element::new("car");
    car.attributes = vec!["red".into()];
    let mut bowl = Element::new("bowl");
    bowl.attributes = vec!["blue".into()];
    build_report(
        vec![car.clone(), bowl],
        vec![car],
        "The blue bowl is missing.",
        EditPlan::from_texts([INSTRUCTION], PlanSource::Mllm),
    )
    .raw_text
}

/// Serves the three fixture endpoints.
pub fn handler(r: &Received) -> Reply {
    match r.path.as_str() {
        "/v1/chat/completions" => {
            let body = serde_json::json!({
                "id": "chatcmpl-fixture",
                "object": "chat.completion",
                "model": "gpt-4o",
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": planner_reply_text()},
                    "finish_reason": "stop"
                }],
                "usage": {"prompt_tokens": 2216, "completion_tokens": 61, "total_tokens": 2277}
            });
            Reply {
                status: 200,
                content_type: "application/json",
                body: serde_json::to_vec(&body).unwrap(),
            }
        }
        "/generate" => Reply {
            status: 200,
            content_type: "image/png",
            body: GENERATED_PNG.to_vec(),
        },
        "/edit" => {
            let body = serde_json::json!({"data": [{"b64_json": B64.encode(EDITED_PNG)}]});
            Reply {
                status: 200,
                content_type: "application/json",
                body: serde_json::to_vec(&body).unwrap(),
            }
        }
        _ => Reply {
            status: 404,
            content_type: "text/plain",
            body: b"not found".to_vec(),
        },
    }
}
