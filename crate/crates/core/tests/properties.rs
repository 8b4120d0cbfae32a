mod common;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use grape::backends::{
    BackendConfig, BackendError, BackendStack, Cached, Counting, Generator, HttpGenerator, HttpRequest,
    HttpResponse, ResponseCache, Transport,
};
use grape::eval::{dsg_scores, qa_score, Answer, QaAggregation, QuestionGraph};
use grape::pipeline::{run_grape, score_trace, RunConfig};
use grape::planner::{extract_score, parse_planner_output, PlannerMode, PromptLibrary};
use grape::simworld::{
    apply_edit, degrade, degrade_with_log, oracle_plan, parse_edit_instruction, random_target, SimOptions,
    SimPlanner,
};
use grape::store::MemoryStore;
use proptest::prelude::*;
use rand::seq::SliceRandom;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_shape_holds_in_every_terminal_state(
        seed in 0u64..10_000,
        concepts in 1usize..8,
        error_rate in 0.0f64..=1.0,
        drop in 0.0f64..0.6,
        corrupt in 0.0f64..0.6,
        miss in 0.0f64..0.6,
        max_steps in 0u32..6,
        replan in any::<bool>(),
    ) {
        let options = SimOptions {
            error_rate,
            plan_drop_rate: drop,
            plan_corrupt_rate: corrupt,
            editor_miss_rate: miss,
            seed,
            ..SimOptions::default()
        };
        let stack = BackendStack::simulated(&options);
        let store = MemoryStore::new();
        let planner = PromptLibrary::builtin().planner(PlannerMode::Structured, &store, 0).unwrap();
        let target = random_target(&mut common::rng(seed), concepts);
        let prompt = common::prompt_for("p", &target, concepts as u32);
        let config = RunConfig { max_edit_steps: max_steps, seed, replan, ..RunConfig::default() };
        let trace = run_grape(&prompt, &stack, &planner, &store, &config).unwrap();
        prop_assert_eq!(trace.images.len(), trace.executed_steps as usize + 1);
        prop_assert!(trace.executed_steps as usize <= trace.plan.len());
        prop_assert!(trace.executed_steps <= max_steps);
        prop_assert!(trace.plan.is_well_formed());
        prop_assert_eq!(trace.check_shape(), Ok(()));
        let scored = score_trace(trace, stack.vqa.as_deref().unwrap(), &store, QaAggregation::PerQuestion).unwrap();
        prop_assert_eq!(scored.check_shape(), Ok(()));
    }

    #[test]
    fn oracle_plans_converge_monotonically(seed in 0u64..100_000, concepts in 1usize..=8, rate in 0.0f64..=1.0) {
        let target = random_target(&mut common::rng(seed), concepts);
        let (current, faults) = degrade_with_log(&target, rate, seed);
        let plan = oracle_plan(&target, &current);
        prop_assert!(plan.len() <= faults.len());
        prop_assert!(plan.is_well_formed());
        let prompt = common::prompt_for("p", &target, concepts as u32);
        let graph = &prompt.questions;
        let score = |scene: &grape::simworld::Scene| {
            let answers = graph
                .questions()
                .iter()
                .map(|q| (q.id.clone(), grape::simworld::evaluate_predicate(scene, q).unwrap()))
                .collect();
            dsg_scores(&answers, graph).unwrap().dsg
        };
        let mut scene = current;
        let mut last = score(&scene);
        for step in plan.steps() {
            let op = step.parsed_op.as_ref().unwrap();
            prop_assert_eq!(&parse_edit_instruction(&op.render()).unwrap(), op);
            scene = apply_edit(&scene, op).unwrap();
            let now = score(&scene);
            prop_assert!(now >= last, "{} fell to {}", last, now);
            last = now;
        }
        prop_assert!(scene.equivalent(&target));
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn degrade_is_identity_at_zero_and_deterministic(seed in any::<u64>(), concepts in 1usize..=8, rate in 0.0f64..=1.0) {
        let target = random_target(&mut common::rng(seed), concepts);
        prop_assert_eq!(degrade(&target, 0.0, seed), target.clone());
        prop_assert_eq!(degrade(&target, rate, seed), degrade(&target, rate, seed));
    }

    #[test]
    fn edit_ops_roundtrip(seed in any::<u64>()) {
        let op = common::edit_op(&mut common::rng(seed));
        prop_assert_eq!(parse_edit_instruction(&op.render()).unwrap(), op);
    }

    #[test]
    fn planner_reports_roundtrip(seed in any::<u64>()) {
        let report = common::planner_report(&mut common::rng(seed));
        prop_assert_eq!(parse_planner_output(&report.raw_text, PlannerMode::Structured).unwrap(), report);
    }

    #[test]
    fn plan_ordinals_follow_line_order(lines in prop::collection::vec("[A-Za-z][a-z ]{0,30}[a-z]", 0..8)) {
        let mut raw = String::from("Error Identification:\nsomething is off\n\nFeedback:\n");
        for (i, l) in lines.iter().enumerate() {
            raw.push_str(&format!("{}. {l}\n", i + 1));
        }
        let report = parse_planner_output(&raw, PlannerMode::Structured).unwrap();
        let texts: Vec<&str> = report.plan.steps().iter().map(|s| s.text.as_str()).collect();
        let expected: Vec<&str> = lines.iter().map(|l| l.trim()).collect();
        prop_assert_eq!(texts, expected);
        prop_assert!(report.plan.is_well_formed());
    }

    #[test]
    fn parsed_plans_are_well_formed(raw in "(Feedback:\n)?(([0-9]\\.|-|\\*) [a-z ]{1,20}\n|  [a-z]{1,8}\n|[a-z ]{0,10}\n){0,10}") {
        for mode in [PlannerMode::Structured, PlannerMode::Naive] {
            if let Ok(report) = parse_planner_output(&raw, mode) {
                prop_assert!(report.plan.is_well_formed());
            }
        }
    }

    #[test]
    fn extracted_scores_are_in_range(reply in ".{0,40}") {
        if let Some(s) = extract_score(&reply) {
            prop_assert!((1..=100).contains(&s));
        }
    }

    #[test]
    fn alignment_scores_are_in_range(seed in any::<u64>()) {
        let store = MemoryStore::new();
        let planner = PromptLibrary::builtin().planner(PlannerMode::Structured, &store, 0).unwrap();
        let report = common::planner_report(&mut common::rng(seed));
        match planner.alignment_score(&report, &SimPlanner::new(SimOptions::default())) {
            Ok(s) => prop_assert!((1..=100).contains(&s)),
            Err(_) => prop_assert!(report.textual_elements.is_empty() || report.image_elements.is_empty()),
        }
    }

    #[test]
    fn dsg_matches_brute_force(seed in any::<u64>(), n in 1usize..=12, p in 0.0f64..0.6) {
        let mut rng = common::rng(seed);
        let graph = common::dag(&mut rng, n, p);
        let answers = common::random_answers(&mut rng, &graph);
        let s = dsg_scores(&answers, &graph).unwrap();
        prop_assert_eq!(s.dsg, common::brute_force_dsg(&graph, &answers));
        prop_assert_eq!(s.dsg_no_dep, common::brute_force_no_dep(&answers));
        prop_assert!(s.dsg <= s.dsg_no_dep);
    }

    #[test]
    fn scores_ignore_question_order(seed in any::<u64>(), n in 1usize..=12) {
        let mut rng = common::rng(seed);
        let graph = common::dag(&mut rng, n, 0.3);
        let answers = common::random_answers(&mut rng, &graph);
        let mut shuffled = graph.questions().to_vec();
        shuffled.shuffle(&mut rng);
        let other = QuestionGraph::new(shuffled).unwrap();
        prop_assert_eq!(dsg_scores(&answers, &graph).unwrap(), dsg_scores(&answers, &other).unwrap());
        for agg in [QaAggregation::PerQuestion, QaAggregation::AllPass] {
            prop_assert_eq!(qa_score(&answers, &graph, agg).unwrap(), qa_score(&answers, &other, agg).unwrap());
        }
    }

    #[test]
    fn scores_are_monotone_in_yes_answers(seed in any::<u64>(), n in 1usize..=12, flip in any::<prop::sample::Index>()) {
        let mut rng = common::rng(seed);
        let graph = common::dag(&mut rng, n, 0.3);
        let answers = common::random_answers(&mut rng, &graph);
        let id = graph.questions()[flip.index(n)].id.clone();
        let mut more = answers.clone();
        more.insert(id, Answer::Yes);
        let (a, b) = (dsg_scores(&answers, &graph).unwrap(), dsg_scores(&more, &graph).unwrap());
        prop_assert!(b.dsg >= a.dsg && b.dsg_no_dep >= a.dsg_no_dep);
        for agg in [QaAggregation::PerQuestion, QaAggregation::AllPass] {
            prop_assert!(qa_score(&more, &graph, agg).unwrap() >= qa_score(&answers, &graph, agg).unwrap());
        }
    }

    #[test]
    fn retries_never_exceed_the_bound(statuses in prop::collection::vec(prop::sample::select(vec![200u16, 400, 429, 500, 503]), 1..8), retries in 0u32..4) {
        struct Scripted { statuses: Vec<u16>, calls: AtomicU32 }
        impl Transport for Scripted {
            fn post(&self, _: &HttpRequest, _: Option<&str>) -> Result<HttpResponse, String> {
                let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
                Ok(HttpResponse {
                    status: self.statuses.get(n).copied().unwrap_or(200),
                    content_type: Some("image/png".into()),
                    body: b"\x89PNG\r\n\x1a\n".to_vec(),
                })
            }
        }
        let transport = Arc::new(Scripted { statuses: statuses.clone(), calls: AtomicU32::new(0) });
        let mut config = BackendConfig::new("http://unused.test/generate", "m");
        config.max_retries = retries;
        config.backoff_initial_ms = 0;
        config.backoff_max_ms = 0;
        let gen = HttpGenerator::new(config, transport.clone()).unwrap();
        let result = gen.generate(&grape::backends::GenerateRequest { prompt: "x".into(), seed: 0 });
        let calls = transport.calls.load(Ordering::SeqCst);
        prop_assert!(calls <= retries + 1);
        match result {
            Ok(_) => prop_assert_eq!(statuses.get(calls as usize - 1).copied().unwrap_or(200), 200),
            Err(BackendError::Status { attempts, .. }) => prop_assert_eq!(attempts, calls),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn warm_cache_reruns_are_free_and_identical(seed in 0u64..1000, concepts in 1usize..=8) {
        let dir = tempfile::tempdir().unwrap();
        let options = SimOptions { error_rate: 0.4, ..SimOptions::default() };
        let sim = BackendStack::simulated(&options);
        let generator = Counting::new(sim.generator.clone());
        let editor = Counting::new(sim.editor.clone());
        let chat = Counting::new(sim.planner.clone());
        let counters = [generator.counter(), editor.counter(), chat.counter()];
        let stack = BackendStack {
            generator: Arc::new(generator),
            editor: Arc::new(editor),
            planner: Arc::new(chat),
            vqa: None,
            planner_prices: options.prices(),
        }
        .with_cache(Arc::new(ResponseCache::new(dir.path())));
        let store = MemoryStore::new();
        let planner = PromptLibrary::builtin().planner(PlannerMode::Structured, &store, 0).unwrap();
        let prompt = common::prompt_for("p", &random_target(&mut common::rng(seed), concepts), concepts as u32);
        let config = RunConfig { seed, ..RunConfig::default() };

        let first = run_grape(&prompt, &stack, &planner, &store, &config).unwrap();
        let cold: Vec<u64> = counters.iter().map(|c| c.load(Ordering::SeqCst)).collect();
        let second = run_grape(&prompt, &stack, &planner, &store, &config).unwrap();
        let warm: Vec<u64> = counters.iter().map(|c| c.load(Ordering::SeqCst)).collect();
        prop_assert_eq!(cold, warm);
        prop_assert_eq!(serde_json::to_vec(&first).unwrap(), serde_json::to_vec(&second).unwrap());
        // Oracle stack: a plan within the step cap always reaches the target.
        if first.plan.len() as u32 <= config.max_edit_steps {
            let scored = score_trace(first, &grape::simworld::SimVqa, &store, QaAggregation::PerQuestion).unwrap();
            prop_assert_eq!(scored.final_score().unwrap().dsg, 1.0);
        }
    }
}

#[test]
fn dsg_matches_brute_force_exhaustively_on_small_dags() {
    for n in 1..=5 {
        for graph in common::all_dags(n) {
            for mask in 0..1u64 << n {
                let answers = common::answers_from_mask(&graph, mask);
                let s = dsg_scores(&answers, &graph).unwrap();
                assert_eq!(s.dsg, common::brute_force_dsg(&graph, &answers));
                assert!(s.dsg <= s.dsg_no_dep);
            }
        }
    }
}

#[test]
fn request_modes_share_image_encoding() {
    let store = MemoryStore::new();
    let lib = PromptLibrary::builtin();
    let structured = lib.planner(PlannerMode::Structured, &store, 0).unwrap();
    let naive = lib.planner(PlannerMode::Naive, &store, 0).unwrap();
    let f = common::wire::planner_fixture();
    let a = structured.assemble_request(&f.prompt, &f.image, &f.store).unwrap();
    let b = naive.assemble_request(&f.prompt, &f.image, &f.store).unwrap();
    assert_eq!(a.messages.last(), b.messages.last());
    assert_eq!((a.temperature, a.seed, a.max_tokens), (b.temperature, b.seed, b.max_tokens));
    assert_ne!(a.messages[0], b.messages[0]);
    // Few-shot images travel exactly like the query image.
    let query_parts: Vec<_> = a.messages.last().unwrap().images().map(|(t, _)| t.to_owned()).collect();
    for m in a.messages.iter().filter(|m| m.images().next().is_some()) {
        let parts: Vec<_> = m.images().map(|(t, _)| t.to_owned()).collect();
        assert_eq!(parts, query_parts);
    }
}

#[test]
fn cache_dedupes_identical_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::new(dir.path()));
    let counted = Counting::new(grape::simworld::SimGenerator::new(SimOptions::default()));
    let calls = counted.counter();
    let cached = Cached::new(counted, cache.clone());
    let req = grape::backends::GenerateRequest { prompt: "a red car".into(), seed: 3 };
    for _ in 0..5 {
        cached.generate(&req).unwrap();
    }
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    // A second process sharing the cache directory also issues nothing.
    let again = Counting::new(grape::simworld::SimGenerator::new(SimOptions::default()));
    let calls2 = again.counter();
    Cached::new(again, Arc::new(ResponseCache::new(dir.path()))).generate(&req).unwrap();
    assert_eq!(calls2.load(Ordering::SeqCst), 0);
}
