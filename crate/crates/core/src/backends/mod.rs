//! Backend contracts and their implementations.
//!
//! Four roles take part in a run: a [`Generator`] turns a prompt into an
//! image, an [`Editor`] applies one instruction to an image, a
//! [`ChatBackend`] serves the planner, and a [`VqaBackend`] answers yes/no
//! questions for scoring. The pipeline only sees these traits. HTTP clients
//! speak an OpenAI-compatible chat-completions dialect plus two small
//! generation and editing endpoints; [`crate::simworld`] provides in-process
//! implementations of all four.
//!
//! [`Cached`] adds the on-disk response cache and [`Counting`] counts calls
//! reaching the wrapped backend, which is how tests assert that a warm cache
//! issues no upstream requests.

mod cache;
mod config;
mod http;
mod replay;
mod vqa;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{CacheMeta, ResponseCache};
pub use config::{BackendConfig, RoleConfig};
pub use http::{HttpChat, HttpEditor, HttpGenerator, HttpRequest, HttpResponse, Transport, UreqTransport};
pub use replay::{read_exchanges, BodyEncoding, Exchange, RecordingTransport, ReplayTransport};
pub use vqa::{generate_questions, normalize_yes_no, parse_question_lines, ChatVqa, QUESTION_SYSTEM_PROMPT, VQA_SYSTEM_PROMPT};

use crate::eval::{Answer, Question};
use crate::model::{content_id, EditInstruction, ImageKind, ImageRef, Prices, Producer, TokenUsage};
use crate::simworld::{NoisyPlanner, SimEditor, SimGenerator, SimOptions, SimPlanner, SimVqa};
use crate::store::{PayloadStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("HTTP {status} after {attempts} attempt(s): {body_excerpt}")]
    Status {
        status: u16,
        body_excerpt: String,
        attempts: u32,
    },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("instruction rejected: {0}")]
    InstructionRejected(String),
    #[error("VQA reply {0:?} is not yes or no")]
    VqaUnparseable(String),
    #[error("question cannot be answered: {0}")]
    Unanswerable(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

impl BackendError {
    /// Transport failures, timeouts, rate limits and server errors.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    /// Inline image: base64 payload plus media type.
    Image { media_type: String, data: String },
    ImageUrl { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, &str)> {
        self.content.iter().filter_map(|p| match p {
            ContentPart::Image { media_type, data } => Some((media_type.as_str(), data.as_str())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// Canonical serialization; identical requests give identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chat requests serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    /// Wall-clock duration of the upstream call. Cached responses report the
    /// duration of the original call.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub image: Vec<u8>,
    pub kind: ImageKind,
    pub instruction: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaRequest {
    pub image: Vec<u8>,
    pub kind: ImageKind,
    pub question: Question,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutput {
    pub bytes: Vec<u8>,
    pub kind: ImageKind,
    pub seconds: f64,
}

pub trait Generator: Send + Sync {
    /// Stable description of the backend, part of every cache key.
    fn identity(&self) -> String;
    fn generate(&self, request: &GenerateRequest) -> Result<ImageOutput, BackendError>;
}

pub trait Editor: Send + Sync {
    fn identity(&self) -> String;
    fn edit(&self, request: &EditRequest) -> Result<ImageOutput, BackendError>;
}

pub trait ChatBackend: Send + Sync {
    fn identity(&self) -> String;
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub trait VqaBackend: Send + Sync {
    fn identity(&self) -> String;
    fn answer(&self, request: &VqaRequest) -> Result<Answer, BackendError>;
}

macro_rules! forward_impls {
    ($trait:ident, $method:ident, $req:ty, $out:ty) => {
        impl<T: $trait + ?Sized> $trait for Arc<T> {
            fn identity(&self) -> String {
                (**self).identity()
            }
            fn $method(&self, request: &$req) -> Result<$out, BackendError> {
                (**self).$method(request)
            }
        }
        impl<T: $trait + ?Sized> $trait for Box<T> {
            fn identity(&self) -> String {
                (**self).identity()
            }
            fn $method(&self, request: &$req) -> Result<$out, BackendError> {
                (**self).$method(request)
            }
        }
        impl<T: $trait> $trait for Counting<T> {
            fn identity(&self) -> String {
                self.inner.identity()
            }
            fn $method(&self, request: &$req) -> Result<$out, BackendError> {
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.inner.$method(request)
            }
        }
    };
}

forward_impls!(Generator, generate, GenerateRequest, ImageOutput);
forward_impls!(Editor, edit, EditRequest, ImageOutput);
forward_impls!(ChatBackend, chat, ChatRequest, ChatResponse);
forward_impls!(VqaBackend, answer, VqaRequest, Answer);

/// Counts calls that reach the wrapped backend.
#[derive(Debug)]
pub struct Counting<B> {
    inner: B,
    calls: Arc<AtomicU64>,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Counting {
            inner,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Shared handle to the call counter, usable after the decorator has
    /// been moved into a stack.
    pub fn counter(&self) -> Arc<AtomicU64> {
        self.calls.clone()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Serves repeated requests from a [`ResponseCache`]. Keys are content ids of
/// the serialized request together with the backend identity; errors are
/// never cached.
pub struct Cached<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B> Cached<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        Cached { inner, cache }
    }
}

#[derive(Serialize)]
struct CacheKey<'a, T: Serialize> {
    role: &'a str,
    backend: String,
    request: T,
}

fn cache_key<T: Serialize>(role: &str, backend: String, request: T) -> String {
    let key = CacheKey { role, backend, request };
    content_id(&serde_json::to_vec(&key).expect("cache keys serialize"))
}

fn image_meta(role: &str, backend: String, out: &ImageOutput) -> CacheMeta {
    CacheMeta {
        role: role.to_owned(),
        backend,
        kind: Some(out.kind),
        seconds: out.seconds,
        usage: None,
    }
}

impl<B: Generator> Generator for Cached<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageOutput, BackendError> {
        let key = cache_key("generate", self.identity(), request);
        if let Some((bytes, meta)) = self.cache.get(&key)? {
            return Ok(ImageOutput {
                bytes,
                kind: meta.kind.unwrap_or(ImageKind::Raster),
                seconds: meta.seconds,
            });
        }
        let out = self.inner.generate(request)?;
        self.cache.put(&key, &out.bytes, &image_meta("generate", self.identity(), &out))?;
        Ok(out)
    }
}

impl<B: Editor> Editor for Cached<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn edit(&self, request: &EditRequest) -> Result<ImageOutput, BackendError> {
        let key = cache_key(
            "edit",
            self.identity(),
            (content_id(&request.image), request.kind, &request.instruction, request.seed),
        );
        if let Some((bytes, meta)) = self.cache.get(&key)? {
            return Ok(ImageOutput {
                bytes,
                kind: meta.kind.unwrap_or(ImageKind::Raster),
                seconds: meta.seconds,
            });
        }
        let out = self.inner.edit(request)?;
        self.cache.put(&key, &out.bytes, &image_meta("edit", self.identity(), &out))?;
        Ok(out)
    }
}

impl<B: ChatBackend> ChatBackend for Cached<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = cache_key("chat", self.identity(), request);
        if let Some((bytes, meta)) = self.cache.get(&key)? {
            let text = String::from_utf8(bytes).map_err(|_| BackendError::Protocol("cached chat reply is not UTF-8".into()))?;
            return Ok(ChatResponse {
                text,
                usage: meta.usage.unwrap_or_default(),
                seconds: meta.seconds,
            });
        }
        let out = self.inner.chat(request)?;
        let meta = CacheMeta {
            role: "chat".into(),
            backend: self.identity(),
            kind: None,
            seconds: out.seconds,
            usage: Some(out.usage),
        };
        self.cache.put(&key, out.text.as_bytes(), &meta)?;
        Ok(out)
    }
}

impl<B: VqaBackend> VqaBackend for Cached<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn answer(&self, request: &VqaRequest) -> Result<Answer, BackendError> {
        let key = cache_key(
            "vqa",
            self.identity(),
            (content_id(&request.image), request.kind, &request.question.text, &request.question.predicate),
        );
        if let Some((bytes, _)) = self.cache.get(&key)? {
            return match bytes.as_slice() {
                b"yes" => Ok(Answer::Yes),
                b"no" => Ok(Answer::No),
                _ => Err(BackendError::Protocol("cached VQA answer is not yes/no".into())),
            };
        }
        let out = self.inner.answer(request)?;
        let meta = CacheMeta {
            role: "vqa".into(),
            backend: self.identity(),
            kind: None,
            seconds: 0.0,
            usage: None,
        };
        let bytes: &[u8] = if out.is_yes() { b"yes" } else { b"no" };
        self.cache.put(&key, bytes, &meta)?;
        Ok(out)
    }
}

/// Media type of an image payload: scenes use the simulated world's type,
/// rasters are sniffed from their magic bytes.
pub fn media_type_of(bytes: &[u8], kind: ImageKind) -> &'static str {
    match kind {
        ImageKind::Scene => crate::simworld::SCENE_MEDIA_TYPE,
        ImageKind::Raster => {
            if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
                "image/png"
            } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
                "image/jpeg"
            } else if bytes.starts_with(b"GIF8") {
                "image/gif"
            } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
                "image/webp"
            } else {
                "application/octet-stream"
            }
        }
    }
}

/// Generates the initial image for `prompt` and persists it. Returns the
/// handle and the reported generation time.
pub fn generate(
    prompt: &str,
    seed: u64,
    generator: &dyn Generator,
    store: &dyn PayloadStore,
) -> Result<(ImageRef, f64), BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::Precondition("prompt text is empty".into()));
    }
    let out = generator.generate(&GenerateRequest {
        prompt: prompt.to_owned(),
        seed,
    })?;
    let image = store.put_image(&out.bytes, out.kind, Producer::Generator, 0)?;
    Ok((image, out.seconds))
}

/// Applies one instruction to `image` and persists the result with the next
/// step index.
pub fn edit(
    image: &ImageRef,
    instruction: &EditInstruction,
    seed: u64,
    editor: &dyn Editor,
    store: &dyn PayloadStore,
) -> Result<(ImageRef, f64), BackendError> {
    if instruction.text.trim().is_empty() {
        return Err(BackendError::Precondition("instruction text is empty".into()));
    }
    let bytes = store.load(image)?;
    let out = editor.edit(&EditRequest {
        image: bytes,
        kind: image.kind,
        instruction: instruction.text.clone(),
        seed,
    })?;
    let next = store.put_image(&out.bytes, out.kind, Producer::Editor, image.step_index + 1)?;
    Ok((next, out.seconds))
}

/// Sends a chat request after checking it has at least one message.
pub fn chat(request: &ChatRequest, backend: &dyn ChatBackend) -> Result<ChatResponse, BackendError> {
    if request.messages.is_empty() {
        return Err(BackendError::Precondition("chat request has no messages".into()));
    }
    backend.chat(request)
}

/// Answers one yes/no question about a stored image.
pub fn answer_binary(
    image: &ImageRef,
    question: &Question,
    vqa: &dyn VqaBackend,
    store: &dyn PayloadStore,
) -> Result<Answer, BackendError> {
    let bytes = store.load(image)?;
    vqa.answer(&VqaRequest {
        image: bytes,
        kind: image.kind,
        question: question.clone(),
    })
}

/// The four role bindings of a run.
#[derive(Clone)]
pub struct BackendStack {
    pub generator: Arc<dyn Generator>,
    pub editor: Arc<dyn Editor>,
    pub planner: Arc<dyn ChatBackend>,
    pub vqa: Option<Arc<dyn VqaBackend>>,
    /// Prices used to estimate planning cost.
    pub planner_prices: Prices,
}

impl BackendStack {
    /// Routes every role through `cache`.
    pub fn with_cache(self, cache: Arc<ResponseCache>) -> Self {
        BackendStack {
            generator: Arc::new(Cached::new(self.generator, cache.clone())),
            editor: Arc::new(Cached::new(self.editor, cache.clone())),
            planner: Arc::new(Cached::new(self.planner, cache.clone())),
            vqa: self.vqa.map(|v| Arc::new(Cached::new(v, cache)) as Arc<dyn VqaBackend>),
            planner_prices: self.planner_prices,
        }
    }

    /// All four roles served by the simulated world.
    pub fn simulated(options: &SimOptions) -> Self {
        let chat: Arc<dyn ChatBackend> = if options.plan_drop_rate > 0.0 || options.plan_corrupt_rate > 0.0 {
            Arc::new(NoisyPlanner::new(
                SimPlanner::new(options.clone()),
                options.plan_drop_rate,
                options.plan_corrupt_rate,
                options.seed,
            ))
        } else {
            Arc::new(SimPlanner::new(options.clone()))
        };
        BackendStack {
            generator: Arc::new(SimGenerator::new(options.clone())),
            editor: Arc::new(SimEditor::new(options.clone())),
            planner: chat,
            vqa: Some(Arc::new(SimVqa)),
            planner_prices: options.prices(),
        }
    }

    /// Builds the stack described by per-role configuration sections.
    pub fn from_configs(
        generator: &RoleConfig,
        editor: &RoleConfig,
        planner: &RoleConfig,
        vqa: Option<&RoleConfig>,
    ) -> Result<Self, BackendError> {
        Ok(BackendStack {
            generator: generator.build_generator()?,
            editor: editor.build_editor()?,
            planner: planner.build_chat()?,
            vqa: vqa.map(RoleConfig::build_vqa).transpose()?,
            planner_prices: planner.prices(),
        })
    }
}
