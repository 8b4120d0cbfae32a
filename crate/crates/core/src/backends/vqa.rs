use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;

use super::{media_type_of, BackendError, ChatBackend, ChatMessage, ChatRequest, ContentPart, Role, VqaBackend, VqaRequest};
use crate::eval::{Answer, Question, QuestionGraph};

pub const VQA_SYSTEM_PROMPT: &str = "You answer questions about an image. Reply with a single word: yes or no.";

const ATTEMPTS: u32 = 3;

/// Reads the first alphabetic word of `reply` as a yes/no answer.
///
/// ```
/// use grape::backends::normalize_yes_no;
/// use grape::eval::Answer;
/// assert_eq!(normalize_yes_no("Yes, there is."), Some(Answer::Yes));
/// assert_eq!(normalize_yes_no("**No**"), Some(Answer::No));
/// assert_eq!(normalize_yes_no("Maybe"), None);
/// ```
pub fn normalize_yes_no(reply: &str) -> Option<Answer> {
    let word: String = reply
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(Answer::Yes),
        "no" => Some(Answer::No),
        _ => None,
    }
}

/// Answers yes/no questions through a multimodal chat backend, retrying
/// replies that are neither yes nor no.
pub struct ChatVqa<C> {
    chat: C,
    seed: u64,
}

impl<C: ChatBackend> ChatVqa<C> {
    pub fn new(chat: C, seed: u64) -> Self {
        ChatVqa { chat, seed }
    }
}

impl<C: ChatBackend> VqaBackend for ChatVqa<C> {
    fn identity(&self) -> String {
        format!("vqa/{}", self.chat.identity())
    }

    fn answer(&self, request: &VqaRequest) -> Result<Answer, BackendError> {
        let mut messages = vec![
            ChatMessage::text(Role::System, VQA_SYSTEM_PROMPT),
            ChatMessage {
                role: Role::User,
                content: vec![
                    ContentPart::Image {
                        media_type: media_type_of(&request.image, request.kind).to_owned(),
                        data: B64.encode(&request.image),
                    },
                    ContentPart::Text {
                        text: request.question.text.clone(),
                    },
                ],
            },
        ];
        let mut last = String::new();
        for _ in 0..ATTEMPTS {
            let reply = self.chat.chat(&ChatRequest {
                messages: messages.clone(),
                temperature: 0.0,
                seed: self.seed,
                max_tokens: Some(8),
            })?;
            if let Some(answer) = normalize_yes_no(&reply.text) {
                return Ok(answer);
            }
            messages.push(ChatMessage::text(Role::Assistant, reply.text.clone()));
            messages.push(ChatMessage::text(Role::User, "Answer with exactly one word: yes or no."));
            last = reply.text;
        }
        Err(BackendError::VqaUnparseable(last))
    }
}

pub const QUESTION_SYSTEM_PROMPT: &str = "You write yes/no questions that check whether an image matches a text prompt. \
Ask first whether each object exists, then about its attributes and relations. \
Write one question per line as `id | question | parents: id, id`, where parents are the \
questions that must be answered yes for this one to make sense.";

/// Parses `id | question | parents: a, b` lines into a validated graph.
/// Lines without a `|` are ignored.
///
/// ```
/// use grape::backends::parse_question_lines;
/// let g = parse_question_lines("q1 | Is there a car? | parents:\nq2 | Is the car red? | parents: q1").unwrap();
/// assert_eq!(g.questions()[1].parents, ["q1"]);
/// ```
pub fn parse_question_lines(text: &str) -> Result<QuestionGraph, String> {
    let mut questions = Vec::new();
    for line in text.lines().filter(|l| l.contains('|')) {
        let mut fields = line.split('|').map(str::trim);
        let id = fields.next().unwrap_or_default().trim_start_matches(['-', '*', ' ']);
        let question = fields.next().unwrap_or_default();
        if id.is_empty() || question.is_empty() {
            return Err(format!("malformed question line {line:?}"));
        }
        let parents: Vec<&str> = fields
            .next()
            .map(|p| p.trim_start_matches("parents").trim_start_matches(':'))
            .unwrap_or_default()
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .collect();
        questions.push(Question::new(id, question).with_parents(parents));
    }
    if questions.is_empty() {
        return Err("no question lines in reply".into());
    }
    QuestionGraph::new(questions).map_err(|e| e.to_string())
}

/// Asks a chat backend for a question graph for `prompt`. The canonical
/// path ingests prepared question files; this is a convenience for prompts
/// that have none.
pub fn generate_questions(prompt: &str, chat: &dyn ChatBackend, seed: u64) -> Result<QuestionGraph, BackendError> {
    let request = ChatRequest {
        messages: vec![
            ChatMessage::text(Role::System, QUESTION_SYSTEM_PROMPT),
            ChatMessage::text(Role::User, format!("Prompt: {prompt}")),
        ],
        temperature: 0.0,
        seed,
        max_tokens: None,
    };
    let reply = chat.chat(&request)?;
    parse_question_lines(&reply.text).map_err(BackendError::Protocol)
}
