//! In-process implementations of the four backend contracts.

use std::sync::LazyLock;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::degrade::degrade;
use super::grammar::parse_target_scene;
use super::instruction::parse_edit_instruction;
use super::oracle::{describe_op, oracle_ops, scene_elements};
use super::predicate::evaluate_predicate;
use super::scene::Scene;
use super::vocab::{key_of_value, NOUNS};
use super::{apply_edit, SimError};
use crate::backends::{
    BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, EditRequest, Editor, GenerateRequest,
    Generator, ImageOutput, Role, VqaBackend, VqaRequest,
};
use crate::eval::Answer;
use crate::model::{content_id, EditPlan, ImageKind, PlanSource, Prices, TokenUsage};
use crate::planner::{build_report, parse_planner_output, render_plan, PlannerMode, PROMPT_MARKER, TEXTUAL_ELEMENTS};

/// Media type of serialized scenes on the wire.
pub const SCENE_MEDIA_TYPE: &str = "text/x-grape-scene";

/// Knobs for the simulated backends. All default to zero: a perfect
/// generator, editor and planner.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Per-concept fault probability of the generator.
    pub error_rate: f64,
    /// Probability that the editor silently leaves the image unchanged.
    pub editor_miss_rate: f64,
    /// Probability that the noisy planner drops an instruction.
    pub plan_drop_rate: f64,
    /// Probability that the noisy planner corrupts an instruction.
    pub plan_corrupt_rate: f64,
    /// Mixed into every random draw.
    pub seed: u64,
    /// Nominal planner prices, for exercising cost accounting.
    pub price_per_1k_prompt_tokens: f64,
    pub price_per_1k_completion_tokens: f64,
}

impl SimOptions {
    pub fn prices(&self) -> Prices {
        Prices {
            per_1k_prompt: self.price_per_1k_prompt_tokens,
            per_1k_completion: self.price_per_1k_completion_tokens,
        }
    }

    fn identity(&self, role: &str) -> String {
        format!("sim-{role}:{}", serde_json::to_string(self).expect("options serialize"))
    }
}

/// Seed derived from arbitrary bytes.
fn seed_of(parts: &[&[u8]]) -> u64 {
    let mut joined = Vec::new();
    for p in parts {
        joined.extend_from_slice(&(p.len() as u64).to_le_bytes());
        joined.extend_from_slice(p);
    }
    u64::from_str_radix(&content_id(&joined)[..16], 16).expect("hex digest")
}

fn scene_payload(bytes: &[u8], kind: ImageKind) -> Result<Scene, BackendError> {
    if kind != ImageKind::Scene {
        return Err(BackendError::Precondition("simulated backends only accept scene payloads".into()));
    }
    Scene::from_bytes(bytes).map_err(|e| BackendError::Precondition(e.to_string()))
}

/// Parses the prompt into its target scene and injects faults with
/// `error_rate`, seeded by the request seed plus the configured seed.
#[derive(Debug, Clone)]
pub struct SimGenerator {
    options: SimOptions,
}

impl SimGenerator {
    pub fn new(options: SimOptions) -> Self {
        SimGenerator { options }
    }
}

impl Generator for SimGenerator {
    fn identity(&self) -> String {
        self.options.identity("generator")
    }

    fn generate(&self, request: &GenerateRequest) -> Result<ImageOutput, BackendError> {
        let target = parse_target_scene(&request.prompt)
            .map_err(|e| BackendError::Precondition(format!("prompt outside the scene grammar: {e}")))?;
        let scene = degrade(&target, self.options.error_rate, request.seed.wrapping_add(self.options.seed));
        Ok(ImageOutput {
            bytes: scene.to_bytes(),
            kind: ImageKind::Scene,
            seconds: 0.0,
        })
    }
}

/// Applies instructions with [`apply_edit`]. Out-of-grammar instructions and
/// targets missing from the scene are rejected; with `editor_miss_rate` the
/// editor occasionally returns the image unchanged.
#[derive(Debug, Clone)]
pub struct SimEditor {
    options: SimOptions,
}

impl SimEditor {
    pub fn new(options: SimOptions) -> Self {
        SimEditor { options }
    }
}

impl Editor for SimEditor {
    fn identity(&self) -> String {
        self.options.identity("editor")
    }

    fn edit(&self, request: &EditRequest) -> Result<ImageOutput, BackendError> {
        let scene = scene_payload(&request.image, request.kind)?;
        let op = parse_edit_instruction(&request.instruction)
            .map_err(|e| BackendError::InstructionRejected(e.to_string()))?;
        let edited = apply_edit(&scene, &op).map_err(|e| BackendError::InstructionRejected(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[
            &self.options.seed.to_le_bytes(),
            &request.seed.to_le_bytes(),
            &request.image,
            request.instruction.as_bytes(),
        ]));
        let out = if rng.gen::<f64>() < self.options.editor_miss_rate {
            scene
        } else {
            edited
        };
        Ok(ImageOutput {
            bytes: out.to_bytes(),
            kind: ImageKind::Scene,
            seconds: 0.0,
        })
    }
}

/// Answers structured questions by predicate evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimVqa;

impl VqaBackend for SimVqa {
    fn identity(&self) -> String {
        "sim-vqa".into()
    }

    fn answer(&self, request: &VqaRequest) -> Result<Answer, BackendError> {
        let scene = scene_payload(&request.image, request.kind)?;
        evaluate_predicate(&scene, &request.question).map_err(|e| match e {
            SimError::Unanswerable(q) => BackendError::Unanswerable(q),
            other => BackendError::Precondition(other.to_string()),
        })
    }
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn prompt_tokens(messages: &[ChatMessage]) -> u64 {
    messages
        .iter()
        .map(|m| estimate_tokens(&m.text_content()) + 85 * m.images().count() as u64)
        .sum()
}

/// An oracle planner behind the chat contract.
///
/// Reads the last user turn carrying an image, takes the text after
/// [`PROMPT_MARKER`] as the prompt, and answers with the oracle plan. The
/// reply is a four-section report when the system prompt asks for those
/// sections, and a bare numbered list otherwise. Requests without any image
/// are treated as alignment-scoring requests and answered with the Jaccard
/// similarity of the two element lists, scaled to 1..=100. Token counts are
/// estimated at four characters per token plus 85 per image.
#[derive(Debug, Clone)]
pub struct SimPlanner {
    options: SimOptions,
}

impl SimPlanner {
    pub fn new(options: SimOptions) -> Self {
        SimPlanner { options }
    }

    fn reply(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let query = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User && m.images().next().is_some());
        let Some(query) = query else {
            return Ok(score_reply(request));
        };
        let (media_type, data) = query.images().next().expect("checked");
        if media_type != SCENE_MEDIA_TYPE {
            return Err(BackendError::Precondition(format!(
                "simulated planner cannot read {media_type} images"
            )));
        }
        let bytes = B64
            .decode(data)
            .map_err(|e| BackendError::Precondition(format!("bad image data: {e}")))?;
        let current = scene_payload(&bytes, ImageKind::Scene)?;
        let text = query.text_content();
        let prompt = text
            .split_once(PROMPT_MARKER)
            .map(|(_, p)| p.trim())
            .ok_or_else(|| BackendError::Precondition(format!("user turn lacks {PROMPT_MARKER:?}")))?;
        let target = parse_target_scene(prompt)
            .map_err(|e| BackendError::Precondition(format!("prompt outside the scene grammar: {e}")))?;
        let ops = oracle_ops(&target, &current);
        let plan = EditPlan::from_texts(ops.iter().map(|op| op.render()), PlanSource::Mllm);
        let structured = request
            .messages
            .iter()
            .any(|m| m.role == Role::System && m.text_content().contains(TEXTUAL_ELEMENTS));
        if !structured {
            return Ok(render_plan(&plan));
        }
        let summary = if ops.is_empty() {
            "The image matches the prompt.".to_owned()
        } else {
            ops.iter().map(describe_op).collect::<Vec<_>>().join(" ")
        };
        Ok(build_report(scene_elements(&target), scene_elements(&current), summary, plan).raw_text)
    }
}

/// Score reply for a request carrying two element sections.
fn score_reply(request: &ChatRequest) -> String {
    let text = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(ChatMessage::text_content)
        .unwrap_or_default();
    let Ok(report) = parse_planner_output(&format!("{text}\nFeedback:\n"), PlannerMode::Structured) else {
        return "I cannot rate this.".into();
    };
    let set = |els: &[crate::model::Element]| {
        let mut out = std::collections::BTreeSet::new();
        for e in els {
            out.insert(e.entity.clone());
            out.extend(e.attributes.iter().map(|a| format!("{} {a}", e.entity)));
            out.extend(e.relations.iter().map(|r| format!("{} {r}", e.entity)));
        }
        out
    };
    let (a, b) = (set(&report.textual_elements), set(&report.image_elements));
    let union = a.union(&b).count();
    let score = if union == 0 {
        100
    } else {
        (100 * a.intersection(&b).count()).div_ceil(union).max(1)
    };
    format!("Score: {score}")
}

impl ChatBackend for SimPlanner {
    fn identity(&self) -> String {
        self.options.identity("planner")
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let text = self.reply(request)?;
        Ok(ChatResponse {
            usage: TokenUsage {
                prompt_tokens: prompt_tokens(&request.messages),
                completion_tokens: estimate_tokens(&text),
                missing: false,
            },
            text,
            seconds: 0.0,
        })
    }
}

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(\s*)\d+\.\s+(.*)$").expect("valid regex"));

/// Wraps a planner and degrades its numbered instructions: each is dropped
/// with probability `drop_rate`, otherwise corrupted with probability
/// `corrupt_rate` by swapping one attribute value or noun for another from
/// the vocabulary. Survivors are renumbered. Draws are seeded by the request
/// bytes, so replies stay deterministic.
pub struct NoisyPlanner<C> {
    inner: C,
    drop_rate: f64,
    corrupt_rate: f64,
    seed: u64,
}

impl<C: ChatBackend> NoisyPlanner<C> {
    pub fn new(inner: C, drop_rate: f64, corrupt_rate: f64, seed: u64) -> Self {
        NoisyPlanner {
            inner,
            drop_rate,
            corrupt_rate,
            seed,
        }
    }
}

fn corrupt(instruction: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = instruction.split(' ').collect();
    let values: Vec<usize> = (0..words.len()).filter(|&i| key_of_value(words[i]).is_some()).collect();
    let nouns: Vec<usize> = (0..words.len()).filter(|&i| NOUNS.contains(&words[i])).collect();
    let mut out: Vec<String> = words.iter().map(|w| (*w).to_owned()).collect();
    if let Some(&i) = values.choose(rng) {
        let key = key_of_value(words[i]).expect("checked");
        let others: Vec<&str> = key.values().iter().copied().filter(|v| *v != words[i]).collect();
        out[i] = (*others.choose(rng).expect("value sets have several entries")).to_owned();
    } else if let Some(&i) = nouns.choose(rng) {
        let others: Vec<&str> = NOUNS.iter().copied().filter(|n| *n != words[i]).collect();
        out[i] = (*others.choose(rng).expect("several nouns")).to_owned();
    }
    out.join(" ")
}

impl<C: ChatBackend> ChatBackend for NoisyPlanner<C> {
    fn identity(&self) -> String {
        format!(
            "noisy(drop={},corrupt={},seed={})/{}",
            self.drop_rate,
            self.corrupt_rate,
            self.seed,
            self.inner.identity()
        )
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut reply = self.inner.chat(request)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(&[&self.seed.to_le_bytes(), &request.to_bytes()]));
        let mut lines = Vec::new();
        let mut n = 0;
        for line in reply.text.lines() {
            let Some(caps) = NUMBERED.captures(line) else {
                lines.push(line.to_owned());
                continue;
            };
            if rng.gen::<f64>() < self.drop_rate {
                continue;
            }
            let mut text = caps[2].to_owned();
            if rng.gen::<f64>() < self.corrupt_rate {
                text = corrupt(&text, &mut rng);
            }
            n += 1;
            lines.push(format!("{}{n}. {text}", &caps[1]));
        }
        let had_plan = reply.text.lines().any(|l| NUMBERED.is_match(l));
        if had_plan && n == 0 {
            lines.push(crate::planner::NO_CHANGES.to_owned());
        }
        reply.text = lines.join("\n") + "\n";
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PromptRecord, Benchmark};
    use crate::planner::PromptLibrary;
    use crate::store::{MemoryStore, PayloadStore};
    use crate::eval::QuestionGraph;

    fn record(text: &str) -> PromptRecord {
        PromptRecord {
            id: "p".into(),
            text: text.into(),
            benchmark: Benchmark::Custom,
            k: None,
            questions: QuestionGraph::new(vec![]).unwrap(),
        }
    }

    #[test]
    fn generator_fidelity_one() {
        let g = SimGenerator::new(SimOptions::default());
        let out = g
            .generate(&GenerateRequest {
                prompt: "a red car and a blue bowl".into(),
                seed: 0,
            })
            .unwrap();
        let scene = Scene::from_bytes(&out.bytes).unwrap();
        assert!(scene.equivalent(&parse_target_scene("a red car and a blue bowl").unwrap()));
    }

    #[test]
    fn editor_rejections() {
        let e = SimEditor::new(SimOptions::default());
        let scene = parse_target_scene("a dog").unwrap();
        let req = |instruction: &str| EditRequest {
            image: scene.to_bytes(),
            kind: ImageKind::Scene,
            instruction: instruction.into(),
            seed: 0,
        };
        assert!(matches!(e.edit(&req("do something nice")), Err(BackendError::InstructionRejected(_))));
        assert!(matches!(e.edit(&req("Remove the cat")), Err(BackendError::InstructionRejected(_))));
        let out = e.edit(&req("Add a cat to the scene")).unwrap();
        assert_eq!(Scene::from_bytes(&out.bytes).unwrap().objects().len(), 2);
        let raster = EditRequest {
            kind: ImageKind::Raster,
            ..req("Remove the dog")
        };
        assert!(matches!(e.edit(&raster), Err(BackendError::Precondition(_))));
    }

    #[test]
    fn planner_finds_missing_object() {
        let store = MemoryStore::new();
        let lib = PromptLibrary::builtin();
        let backend = SimPlanner::new(SimOptions::default());
        let prompt = record("a green bench and a red car");
        let current = parse_target_scene("a green bench").unwrap();
        let image = store.put_image(&current.to_bytes(), ImageKind::Scene, crate::model::Producer::Generator, 0).unwrap();
        for mode in [PlannerMode::Structured, PlannerMode::Naive] {
            let planner = lib.planner(mode, &store, 0).unwrap();
            let out = planner.plan(&prompt, &image, &backend, &store).unwrap();
            let texts: Vec<_> = out.report.plan.steps().iter().map(|s| s.text.as_str()).collect();
            assert_eq!(texts, ["Add a red car to the scene"]);
            assert_eq!(out.retries, 0);
            assert!(out.usage.prompt_tokens > 0);
        }
        let aligned = store
            .put_image(&parse_target_scene("a red car and a green bench").unwrap().to_bytes(), ImageKind::Scene, crate::model::Producer::Generator, 0)
            .unwrap();
        let planner = lib.planner(PlannerMode::Structured, &store, 0).unwrap();
        let out = planner.plan(&prompt, &aligned, &backend, &store).unwrap();
        assert!(out.report.plan.is_empty());
        assert_eq!(planner.alignment_score(&out.report, &backend).unwrap(), 100);
        let missing = planner.plan(&prompt, &image, &backend, &store).unwrap();
        let score = planner.alignment_score(&missing.report, &backend).unwrap();
        assert!((1..100).contains(&score), "{score}");
    }

    #[test]
    fn noisy_planner_is_deterministic_and_renumbers() {
        let inner = SimPlanner::new(SimOptions::default());
        let noisy = NoisyPlanner::new(inner, 0.5, 0.5, 3);
        let store = MemoryStore::new();
        let planner = PromptLibrary::builtin().planner(PlannerMode::Naive, &store, 0).unwrap();
        let prompt = record("a green bench and a red car and a blue bowl and a pink apple and a cat");
        let image = store
            .put_image(&parse_target_scene("a dog").unwrap().to_bytes(), ImageKind::Scene, crate::model::Producer::Generator, 0)
            .unwrap();
        let a = planner.plan(&prompt, &image, &noisy, &store).unwrap();
        let b = planner.plan(&prompt, &image, &noisy, &store).unwrap();
        assert_eq!(a.report, b.report);
        assert!(a.report.plan.is_well_formed());
        assert!(a.report.plan.len() < 6);
    }
}
