//! Planner prompting, output parsing and the alignment scorer.
//!
//! The planner sees the text prompt and the generated image and answers in
//! four sections: the objects the prompt describes, the objects the image
//! shows, the errors between them, and a numbered list of edit instructions
//! under Feedback. The naive variant skips the analysis and asks for the
//! list directly.
//!
//! System prompts and few-shot examples live in a prompts directory so they
//! can be edited without rebuilding; [`PromptLibrary::builtin`] carries the
//! defaults shipped with the crate.

mod report;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};

pub use report::{
    build_report, parse_planner_output, render_element_sections, render_plan, render_report, ParseError,
    ERROR_IDENTIFICATION, FEEDBACK, IMAGE_ELEMENTS, NO_CHANGES, TEXTUAL_ELEMENTS,
};

use crate::backends::{chat, media_type_of, BackendError, ChatBackend, ChatMessage, ChatRequest, ContentPart, Role};
use crate::model::{ImageKind, ImageRef, PlannerReport, Producer, PromptRecord, TokenUsage};
use crate::store::{PayloadStore, StoreError};

/// Precedes the prompt text in the user turn.
pub const PROMPT_MARKER: &str = "Text prompt:";

const ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    #[default]
    Structured,
    Naive,
}

impl FromStr for PlannerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "structured" => Ok(PlannerMode::Structured),
            "naive" => Ok(PlannerMode::Naive),
            _ => Err(format!("unknown planner mode {s:?}; expected structured or naive")),
        }
    }
}

impl fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerMode::Structured => "structured",
            PlannerMode::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub prompt_text: String,
    pub image: ImageRef,
    pub expected_report_text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("image payload unavailable: {0}")]
    PayloadMissing(#[from] StoreError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("planner output unparseable: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no score in reply {0:?}")]
    ScoreUnavailable(String),
    #[error("reading prompt library: {0}")]
    Library(String),
}

/// A few-shot example before its image is placed in a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSource {
    pub prompt_text: String,
    pub image: Vec<u8>,
    pub kind: ImageKind,
    pub report_text: String,
}

/// System prompts and few-shot examples.
///
/// On disk: `system_structured.txt`, `system_naive.txt`, `system_score.txt`
/// and `examples.jsonl`, whose lines read
/// `{"prompt": ..., "image": <file>, "report": <file>}` with files relative
/// to the directory. Images ending in `.scene` are scene payloads; anything
/// else is sent as raster bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    pub structured_system: String,
    pub naive_system: String,
    pub score_system: String,
    pub examples: Vec<ExampleSource>,
}

#[derive(Deserialize)]
struct ExampleLine {
    prompt: String,
    image: String,
    report: String,
}

fn image_kind(file: &str) -> ImageKind {
    if file.ends_with(".scene") {
        ImageKind::Scene
    } else {
        ImageKind::Raster
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let example = |prompt: &str, image: &str, report: &str| ExampleSource {
            prompt_text: prompt.to_owned(),
            image: image.as_bytes().to_vec(),
            kind: ImageKind::Scene,
            report_text: report.to_owned(),
        };
        PromptLibrary {
            structured_system: include_str!("../../prompts/system_structured.txt").to_owned(),
            naive_system: include_str!("../../prompts/system_naive.txt").to_owned(),
            score_system: include_str!("../../prompts/system_score.txt").to_owned(),
            examples: vec![
                example(
                    "a green bench and a red car and a blue bowl and a pink apple",
                    include_str!("../../prompts/example1.scene"),
                    include_str!("../../prompts/example1.txt"),
                ),
                example(
                    "a duck with metallic texture and a plate and the duck on top of the plate",
                    include_str!("../../prompts/example2.scene"),
                    include_str!("../../prompts/example2.txt"),
                ),
            ],
        }
    }

    pub fn load(dir: &Path) -> Result<Self, PlannerError> {
        let read = |name: &str| {
            std::fs::read(dir.join(name)).map_err(|e| PlannerError::Library(format!("{}: {e}", dir.join(name).display())))
        };
        let text = |name: &str| {
            String::from_utf8(read(name)?).map_err(|_| PlannerError::Library(format!("{name} is not UTF-8")))
        };
        let mut examples = Vec::new();
        for (i, line) in text("examples.jsonl")?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ExampleLine = serde_json::from_str(line)
                .map_err(|err| PlannerError::Library(format!("examples.jsonl line {}: {err}", i + 1)))?;
            examples.push(ExampleSource {
                prompt_text: e.prompt,
                image: read(&e.image)?,
                kind: image_kind(&e.image),
                report_text: text(&e.report)?,
            });
        }
        Ok(PromptLibrary {
            structured_system: text("system_structured.txt")?,
            naive_system: text("system_naive.txt")?,
            score_system: text("system_score.txt")?,
            examples,
        })
    }

    /// Checks that every example report parses as a structured report.
    pub fn validate(&self) -> Result<(), PlannerError> {
        for (i, e) in self.examples.iter().enumerate() {
            parse_planner_output(&e.report_text, PlannerMode::Structured)
                .map_err(|err| PlannerError::Library(format!("example {}: {err}", i + 1)))?;
        }
        Ok(())
    }

    /// Stores the example images and builds a planner for `mode`. Naive mode
    /// uses no examples, since the shipped ones demonstrate the four-section
    /// decomposition that mode leaves out.
    pub fn planner(&self, mode: PlannerMode, store: &dyn PayloadStore, seed: u64) -> Result<Planner, PlannerError> {
        self.validate()?;
        let (system_prompt, examples) = match mode {
            PlannerMode::Structured => {
                let mut examples = Vec::new();
                for e in &self.examples {
                    examples.push(FewShotExample {
                        prompt_text: e.prompt_text.clone(),
                        image: store.put_image(&e.image, e.kind, Producer::External, 0)?,
                        expected_report_text: e.report_text.clone(),
                    });
                }
                (self.structured_system.clone(), examples)
            }
            PlannerMode::Naive => (self.naive_system.clone(), Vec::new()),
        };
        Planner::new(mode, system_prompt, self.score_system.clone(), examples, seed)
    }
}

/// Planner output plus what it cost to obtain.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub report: PlannerReport,
    pub usage: TokenUsage,
    pub seconds: f64,
    /// Attempts beyond the first.
    pub retries: u32,
}

/// A planning call that failed after retries, with the usage it incurred.
#[derive(Debug)]
pub struct PlanFailure {
    pub error: PlannerError,
    pub usage: TokenUsage,
    pub seconds: f64,
    pub retries: u32,
}

/// A configured planner: mode, system prompts, few-shot examples and seed.
/// Requests are sent at temperature 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Planner {
    mode: PlannerMode,
    system_prompt: String,
    score_prompt: String,
    examples: Vec<FewShotExample>,
    seed: u64,
}

static FIRST_INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("valid regex"));

/// First integer in `reply`, clamped to `1..=100`.
///
/// ```
/// use grape::planner::extract_score;
/// assert_eq!(extract_score("Score: 87"), Some(87));
/// assert_eq!(extract_score("150"), Some(100));
/// assert_eq!(extract_score("none"), None);
/// ```
pub fn extract_score(reply: &str) -> Option<u32> {
    let m = FIRST_INTEGER.find(reply)?.as_str();
    let value: i64 = match m.parse() {
        Ok(v) => v,
        Err(_) if m.starts_with('-') => i64::MIN,
        Err(_) => i64::MAX,
    };
    Some(value.clamp(1, 100) as u32)
}

fn image_part(bytes: &[u8], kind: ImageKind) -> ContentPart {
    ContentPart::Image {
        media_type: media_type_of(bytes, kind).to_owned(),
        data: B64.encode(bytes),
    }
}

fn user_turn(prompt_text: &str, image: &ImageRef, store: &dyn PayloadStore) -> Result<ChatMessage, PlannerError> {
    let bytes = store.load(image)?;
    Ok(ChatMessage {
        role: Role::User,
        content: vec![
            image_part(&bytes, image.kind),
            ContentPart::Text {
                text: format!("{PROMPT_MARKER} {prompt_text}"),
            },
        ],
    })
}

impl Planner {
    /// Structured mode needs at least one few-shot example.
    pub fn new(
        mode: PlannerMode,
        system_prompt: String,
        score_prompt: String,
        examples: Vec<FewShotExample>,
        seed: u64,
    ) -> Result<Self, PlannerError> {
        if mode == PlannerMode::Structured && examples.is_empty() {
            return Err(PlannerError::Precondition(
                "structured planning needs at least one few-shot example".into(),
            ));
        }
        Ok(Planner {
            mode,
            system_prompt,
            score_prompt,
            examples,
            seed,
        })
    }

    pub fn mode(&self) -> PlannerMode {
        self.mode
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    /// The chat request for one planning call: system prompt, one user and
    /// assistant turn per example, then the prompt text and image.
    pub fn assemble_request(
        &self,
        prompt: &PromptRecord,
        image: &ImageRef,
        store: &dyn PayloadStore,
    ) -> Result<ChatRequest, PlannerError> {
        let mut messages = vec![ChatMessage::text(Role::System, self.system_prompt.clone())];
        for e in &self.examples {
            messages.push(user_turn(&e.prompt_text, &e.image, store)?);
            messages.push(ChatMessage::text(Role::Assistant, e.expected_report_text.clone()));
        }
        messages.push(user_turn(&prompt.text, image, store)?);
        Ok(ChatRequest {
            messages,
            temperature: 0.0,
            seed: self.seed,
            max_tokens: None,
        })
    }

    /// Asks the backend for a plan. Transport failures and unparseable
    /// replies are retried up to three attempts in total; a parse failure
    /// is fed back to the model as a correction before the next attempt.
    pub fn plan(
        &self,
        prompt: &PromptRecord,
        image: &ImageRef,
        backend: &dyn ChatBackend,
        store: &dyn PayloadStore,
    ) -> Result<PlanOutcome, PlanFailure> {
        let mut usage = TokenUsage::default();
        let mut seconds = 0.0;
        let fail = |error, usage, seconds, attempt: u32| PlanFailure {
            error,
            usage,
            seconds,
            retries: attempt.saturating_sub(1),
        };
        let mut request = self
            .assemble_request(prompt, image, store)
            .map_err(|e| fail(e, usage, seconds, 0))?;
        let mut last = None;
        for attempt in 1..=ATTEMPTS {
            let reply = match chat(&request, backend) {
                Ok(r) => r,
                Err(e) if e.is_retryable() && attempt < ATTEMPTS => {
                    log::warn!("prompt {}: planner attempt {attempt} failed: {e}", prompt.id);
                    continue;
                }
                Err(e) => return Err(fail(e.into(), usage, seconds, attempt)),
            };
            usage.add(reply.usage);
            seconds += reply.seconds;
            match parse_planner_output(&reply.text, self.mode) {
                Ok(report) => {
                    return Ok(PlanOutcome {
                        report,
                        usage,
                        seconds,
                        retries: attempt - 1,
                    })
                }
                Err(err) => {
                    log::warn!("prompt {}: planner reply unparseable on attempt {attempt}: {err}", prompt.id);
                    request.messages.push(ChatMessage::text(Role::Assistant, reply.text));
                    request.messages.push(ChatMessage::text(
                        Role::User,
                        format!(
                            "Your previous reply could not be parsed: {err}. Answer again in the required format, \
                             with the edit instructions as a numbered list under a \"{FEEDBACK}:\" header."
                        ),
                    ));
                    last = Some(err);
                }
            }
        }
        let error = last.map_or_else(|| PlannerError::Precondition("no attempts made".into()), PlannerError::from);
        Err(fail(error, usage, seconds, ATTEMPTS))
    }

    /// Rates how well the image elements of `report` match its textual
    /// elements on a 1 to 100 scale. Only the two element sections are sent.
    pub fn alignment_score(&self, report: &PlannerReport, backend: &dyn ChatBackend) -> Result<u32, PlannerError> {
        if report.textual_elements.is_empty() || report.image_elements.is_empty() {
            return Err(PlannerError::Precondition(
                "alignment scoring needs both element sections".into(),
            ));
        }
        let mut request = ChatRequest {
            messages: vec![
                ChatMessage::text(Role::System, self.score_prompt.clone()),
                ChatMessage::text(
                    Role::User,
                    render_element_sections(&report.textual_elements, &report.image_elements),
                ),
            ],
            temperature: 0.0,
            seed: self.seed,
            max_tokens: None,
        };
        let mut last = String::new();
        for _ in 0..ATTEMPTS {
            let reply = chat(&request, backend)?;
            if let Some(score) = extract_score(&reply.text) {
                return Ok(score);
            }
            request.messages.push(ChatMessage::text(Role::Assistant, reply.text.clone()));
            request
                .messages
                .push(ChatMessage::text(Role::User, "Reply with \"Score: <integer>\" only."));
            last = reply.text;
        }
        Err(PlannerError::ScoreUnavailable(last))
    }
}
