use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{GraphError, Question, QuestionGraph};

/// Concept counts used by the ConceptMix-style prompt sets.
pub const CONCEPTMIX_K: [u32; 4] = [1, 3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    #[serde(rename = "t2i-compbench")]
    T2iCompbench,
    Conceptmix,
    Flickr,
    Custom,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::T2iCompbench => "t2i-compbench",
            Benchmark::Conceptmix => "conceptmix",
            Benchmark::Flickr => "flickr",
            Benchmark::Custom => "custom",
        }
    }
}

/// A benchmark prompt together with its binary question graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub benchmark: Benchmark,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    pub questions: QuestionGraph,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate prompt id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: prompt {id:?}: {source}")]
    Questions {
        line: usize,
        id: String,
        source: GraphError,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QuestionsField {
    Inline(Vec<Question>),
    Path(String),
}

#[derive(Deserialize)]
struct RawPrompt {
    id: String,
    text: String,
    benchmark: Benchmark,
    #[serde(default)]
    k: Option<u32>,
    #[serde(default)]
    questions: Option<QuestionsField>,
}

/// Reads a JSONL prompt set. Question files referenced by path are resolved
/// relative to the prompt file's directory.
pub fn load_prompt_set(path: &Path, allow_any_k: bool) -> Result<Vec<PromptRecord>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_prompt_set(&text, base, allow_any_k)
}

/// Parses JSONL prompt records, validating ids, text and ConceptMix `k`.
pub fn parse_prompt_set(text: &str, base: &Path, allow_any_k: bool) -> Result<Vec<PromptRecord>, PromptError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawPrompt = serde_json::from_str(raw_line).map_err(|e| PromptError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if raw.text.trim().is_empty() {
            return Err(PromptError::Malformed {
                line,
                message: format!("prompt {:?} has empty text", raw.id),
            });
        }
        if let Some(k) = raw.k {
            if k == 0 {
                return Err(PromptError::Malformed {
                    line,
                    message: "k must be at least 1".into(),
                });
            }
        }
        if raw.benchmark == Benchmark::Conceptmix && !allow_any_k {
            match raw.k {
                Some(k) if CONCEPTMIX_K.contains(&k) => {}
                other => {
                    return Err(PromptError::Malformed {
                        line,
                        message: format!("conceptmix prompt needs k in {CONCEPTMIX_K:?}, got {other:?}"),
                    })
                }
            }
        }
        if !seen.insert(raw.id.clone()) {
            return Err(PromptError::DuplicateId { line, id: raw.id });
        }
        let graph = match raw.questions {
            None => QuestionGraph::new(Vec::new()),
            Some(QuestionsField::Inline(qs)) => QuestionGraph::new(qs),
            Some(QuestionsField::Path(p)) => {
                let full = base.join(&p);
                QuestionGraph::load(&full)
            }
        }
        .map_err(|source| PromptError::Questions {
            line,
            id: raw.id.clone(),
            source,
        })?;
        out.push(PromptRecord {
            id: raw.id,
            text: raw.text,
            benchmark: raw.benchmark,
            k: raw.k,
            questions: graph,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_questions() {
        let text = r#"{"id":"p1","text":"a red car","benchmark":"conceptmix","k":1,"questions":[{"id":"q1","text":"Is there a car?","parents":[]}]}"#;
        let set = parse_prompt_set(text, Path::new("."), false).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].questions.len(), 1);
    }

    #[test]
    fn rejects_bad_k_and_duplicates() {
        let bad_k = r#"{"id":"p1","text":"a red car","benchmark":"conceptmix","k":2}"#;
        assert!(parse_prompt_set(bad_k, Path::new("."), false).is_err());
        assert!(parse_prompt_set(bad_k, Path::new("."), true).is_ok());
        let dup = "{\"id\":\"p\",\"text\":\"a\",\"benchmark\":\"custom\"}\n{\"id\":\"p\",\"text\":\"b\",\"benchmark\":\"custom\"}";
        assert!(matches!(
            parse_prompt_set(dup, Path::new("."), false),
            Err(PromptError::DuplicateId { line: 2, .. })
        ));
        let empty = r#"{"id":"p","text":"  ","benchmark":"custom"}"#;
        assert!(parse_prompt_set(empty, Path::new("."), false).is_err());
    }

    #[test]
    fn questions_by_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("q.jsonl"),
            "{\"id\":\"a\",\"text\":\"Is there a dog?\",\"parents\":[]}\n{\"id\":\"b\",\"text\":\"Is the dog tiny?\",\"parents\":[\"a\"]}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("p.jsonl"),
            "{\"id\":\"p\",\"text\":\"a tiny dog\",\"benchmark\":\"custom\",\"questions\":\"q.jsonl\"}\n",
        )
        .unwrap();
        let set = load_prompt_set(&dir.path().join("p.jsonl"), false).unwrap();
        assert_eq!(set[0].questions.len(), 2);
    }
}
