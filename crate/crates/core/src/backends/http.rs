//! HTTP clients for the documented wire formats.
//!
//! Chat and VQA use OpenAI-compatible chat completions: a `POST` to
//! `<endpoint>/v1/chat/completions` (or to the endpoint itself when it
//! already ends in `/chat/completions`) with text and `image_url` content
//! parts, images inlined as `data:` URLs.
//!
//! Generation posts `{"model", "prompt", "seed"}` to the endpoint; editing
//! posts `{"model", "instruction", "image": {"media_type", "data"}, "seed"}`
//! with base64 image data. Both accept either raw image bytes (an `image/*`
//! content type) or JSON carrying base64 data as `image_base64` or as
//! `data[0].b64_json`.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::config::BackendConfig;
use super::{
    media_type_of, BackendError, ChatBackend, ChatRequest, ChatResponse, ContentPart, EditRequest, Editor,
    GenerateRequest, Generator, ImageOutput, Role,
};
use crate::model::{ImageKind, TokenUsage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    /// Headers other than authorization, which the client adds itself.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

/// Moves one request over the wire. Implementations: [`UreqTransport`] for
/// real traffic, [`super::ReplayTransport`] for recorded fixtures.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest, bearer: Option<&str>) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        UreqTransport { agent: config.into() }
    }
}

const MAX_BODY: u64 = 256 * 1024 * 1024;

impl Transport for UreqTransport {
    fn post(&self, request: &HttpRequest, bearer: Option<&str>) -> Result<HttpResponse, String> {
        let mut builder = self.agent.post(&request.url);
        for (k, v) in &request.headers {
            builder = builder.header(k, v);
        }
        if let Some(key) = bearer {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = builder.send(&request.body[..]).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(|e| e.to_string())?;
        Ok(HttpResponse {
            status,
            content_type,
            body,
        })
    }
}

/// Counting semaphore bounding concurrent requests per client.
struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

struct Client {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    api_key: Option<String>,
    slots: Slots,
}

fn excerpt(body: &[u8]) -> String {
    let text = String::from_utf8_lossy(body);
    let mut out: String = text.chars().take(200).collect();
    if text.chars().count() > 200 {
        out.push_str("...");
    }
    out
}

impl Client {
    fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = config.api_key()?;
        let slots = Slots::new(config.max_in_flight);
        Ok(Client {
            config,
            transport,
            api_key,
            slots,
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .backoff_initial_ms
            .saturating_mul(1u64 << (attempt - 1).min(20))
            .min(self.config.backoff_max_ms);
        Duration::from_millis(ms)
    }

    /// Posts a JSON body, retrying retryable failures up to `max_retries`
    /// times with capped exponential backoff.
    fn post_json(&self, url: &str, body: Vec<u8>) -> Result<HttpResponse, BackendError> {
        let request = HttpRequest {
            url: url.to_owned(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body,
        };
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            let result = {
                let _slot = self.slots.acquire();
                self.transport.post(&request, self.api_key.as_deref())
            };
            let err = match result {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
                Ok(resp) => BackendError::Status {
                    status: resp.status,
                    body_excerpt: excerpt(&resp.body),
                    attempts: attempt,
                },
                Err(message) => BackendError::Transport {
                    message,
                    attempts: attempt,
                },
            };
            if !err.is_retryable() {
                return Err(err);
            }
            log::warn!("{url}: attempt {attempt}/{attempts} failed: {err}");
            last = Some(err);
            if attempt < attempts {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn identity(&self, role: &str) -> String {
        format!("{role}:{}@{}", self.config.model_name, self.config.endpoint_url)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: Vec<WirePart<'a>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: WireUrl },
}

#[derive(Serialize)]
struct WireUrl {
    url: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: serde_json::Value,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Chat-completions client.
pub struct HttpChat {
    client: Client,
    url: String,
}

impl HttpChat {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        let base = config.endpoint_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/v1/chat/completions")
        };
        Ok(HttpChat {
            client: Client::new(config, transport)?,
            url,
        })
    }

    /// Exact request body sent for `request`.
    pub fn wire_body(&self, request: &ChatRequest) -> Vec<u8> {
        let messages = request
            .messages
            .iter()
            .map(|m| WireMessage {
                role: m.role,
                content: m
                    .content
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text { text } => WirePart::Text { text },
                        ContentPart::Image { media_type, data } => WirePart::ImageUrl {
                            image_url: WireUrl {
                                url: format!("data:{media_type};base64,{data}"),
                            },
                        },
                        ContentPart::ImageUrl { url } => WirePart::ImageUrl {
                            image_url: WireUrl { url: url.clone() },
                        },
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_vec(&WireRequest {
            model: &self.client.config.model_name,
            messages,
            temperature: request.temperature,
            seed: request.seed,
            max_tokens: request.max_tokens,
        })
        .expect("wire requests serialize")
    }
}

fn reply_text(content: &serde_json::Value) -> Option<String> {
    match content {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl ChatBackend for HttpChat {
    fn identity(&self) -> String {
        self.client.identity("chat")
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let start = Instant::now();
        let resp = self.client.post_json(&self.url, self.wire_body(request))?;
        let wire: WireResponse = serde_json::from_slice(&resp.body)
            .map_err(|e| BackendError::Protocol(format!("{e}: {}", excerpt(&resp.body))))?;
        let choice = wire
            .choices
            .first()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let text = reply_text(&choice.message.content)
            .ok_or_else(|| BackendError::Protocol("reply has no text content".into()))?;
        let usage = match wire.usage {
            Some(WireUsage {
                prompt_tokens: Some(p),
                completion_tokens: Some(c),
            }) => TokenUsage {
                prompt_tokens: p,
                completion_tokens: c,
                missing: false,
            },
            _ => {
                log::warn!("{}: response carries no token usage; recording zeros", self.url);
                TokenUsage {
                    missing: true,
                    ..TokenUsage::default()
                }
            }
        };
        Ok(ChatResponse {
            text,
            usage,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    model: &'a str,
    prompt: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct EditBody<'a> {
    model: &'a str,
    instruction: &'a str,
    image: WireImage<'a>,
    seed: u64,
}

#[derive(Serialize)]
struct WireImage<'a> {
    media_type: &'a str,
    data: String,
}

fn decode_image(resp: &HttpResponse) -> Result<Vec<u8>, BackendError> {
    if resp.content_type.as_deref().is_some_and(|t| t.starts_with("image/")) {
        return Ok(resp.body.clone());
    }
    let json: serde_json::Value = serde_json::from_slice(&resp.body)
        .map_err(|e| BackendError::Protocol(format!("{e}: {}", excerpt(&resp.body))))?;
    let data = json
        .get("image_base64")
        .or_else(|| json.pointer("/data/0/b64_json"))
        .and_then(|v| v.as_str())
        .ok_or_else(|| BackendError::Protocol("response carries no image_base64 or data[0].b64_json".into()))?;
    B64.decode(data)
        .map_err(|e| BackendError::Protocol(format!("bad base64 image: {e}")))
}

/// Client for the generation endpoint.
pub struct HttpGenerator {
    client: Client,
}

impl HttpGenerator {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        Ok(HttpGenerator {
            client: Client::new(config, transport)?,
        })
    }

    pub fn wire_body(&self, request: &GenerateRequest) -> Vec<u8> {
        serde_json::to_vec(&GenerateBody {
            model: &self.client.config.model_name,
            prompt: &request.prompt,
            seed: request.seed,
        })
        .expect("wire requests serialize")
    }
}

impl Generator for HttpGenerator {
    fn identity(&self) -> String {
        self.client.identity("generate")
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageOutput, BackendError> {
        let start = Instant::now();
        let resp = self
            .client
            .post_json(&self.client.config.endpoint_url, self.wire_body(request))?;
        Ok(ImageOutput {
            bytes: decode_image(&resp)?,
            kind: ImageKind::Raster,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Client for the editing endpoint.
pub struct HttpEditor {
    client: Client,
}

impl HttpEditor {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        Ok(HttpEditor {
            client: Client::new(config, transport)?,
        })
    }

    pub fn wire_body(&self, request: &EditRequest) -> Vec<u8> {
        serde_json::to_vec(&EditBody {
            model: &self.client.config.model_name,
            instruction: &request.instruction,
            image: WireImage {
                media_type: media_type_of(&request.image, request.kind),
                data: B64.encode(&request.image),
            },
            seed: request.seed,
        })
        .expect("wire requests serialize")
    }
}

impl Editor for HttpEditor {
    fn identity(&self) -> String {
        self.client.identity("edit")
    }

    fn edit(&self, request: &EditRequest) -> Result<ImageOutput, BackendError> {
        let start = Instant::now();
        let resp = match self
            .client
            .post_json(&self.client.config.endpoint_url, self.wire_body(request))
        {
            // 422 is how the editing endpoint signals an instruction it
            // cannot apply.
            Err(BackendError::Status {
                status: 422,
                body_excerpt,
                ..
            }) => return Err(BackendError::InstructionRejected(body_excerpt)),
            other => other?,
        };
        Ok(ImageOutput {
            bytes: decode_image(&resp)?,
            kind: ImageKind::Raster,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    /// Fails with the given statuses in order, then succeeds.
    struct Flaky {
        statuses: Vec<u16>,
        calls: AtomicU32,
    }

    impl Transport for Flaky {
        fn post(&self, _: &HttpRequest, _: Option<&str>) -> Result<HttpResponse, String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            let status = self.statuses.get(n).copied().unwrap_or(200);
            Ok(HttpResponse {
                status,
                content_type: Some("application/json".into()),
                body: br#"{"choices":[{"message":{"content":"ok"}}],"usage":{"prompt_tokens":5,"completion_tokens":1}}"#
                    .to_vec(),
            })
        }
    }

    fn chat_with(statuses: Vec<u16>, retries: u32) -> (Result<ChatResponse, BackendError>, u32) {
        let flaky = Arc::new(Flaky {
            statuses,
            calls: AtomicU32::new(0),
        });
        let mut config = BackendConfig::new("http://test", "m");
        config.max_retries = retries;
        config.backoff_initial_ms = 0;
        config.backoff_max_ms = 0;
        let chat = HttpChat::new(config, flaky.clone()).unwrap();
        let req = ChatRequest {
            messages: vec![super::super::ChatMessage::text(Role::User, "hi")],
            temperature: 0.0,
            seed: 0,
            max_tokens: None,
        };
        let out = chat.chat(&req);
        (out, flaky.calls.load(Ordering::SeqCst))
    }

    #[test]
    fn retries_are_bounded() {
        let (out, calls) = chat_with(vec![503, 503, 503, 503], 2);
        assert!(matches!(out, Err(BackendError::Status { status: 503, attempts: 3, .. })));
        assert_eq!(calls, 3);
        let (out, calls) = chat_with(vec![429, 500], 2);
        assert_eq!(out.unwrap().text, "ok");
        assert_eq!(calls, 3);
        let (out, calls) = chat_with(vec![400], 5);
        assert!(matches!(out, Err(BackendError::Status { status: 400, attempts: 1, .. })));
        assert_eq!(calls, 1);
    }

    #[test]
    fn chat_url_and_usage() {
        let (out, _) = chat_with(vec![], 0);
        let out = out.unwrap();
        assert_eq!(out.usage.prompt_tokens, 5);
        assert!(!out.usage.missing);
        let c = HttpChat::new(BackendConfig::new("https://api.example.com/", "m"), Arc::new(UreqTransport::new(Duration::from_secs(1)))).unwrap();
        assert_eq!(c.url, "https://api.example.com/v1/chat/completions");
    }

    #[test]
    fn backoff_is_capped() {
        let mut config = BackendConfig::new("http://test", "m");
        config.backoff_initial_ms = 100;
        config.backoff_max_ms = 1000;
        let client = Client::new(config, Arc::new(UreqTransport::new(Duration::from_secs(1)))).unwrap();
        let waits: Vec<u64> = (1..=6).map(|a| client.backoff(a).as_millis() as u64).collect();
        assert_eq!(waits, [100, 200, 400, 800, 1000, 1000]);
    }
}
