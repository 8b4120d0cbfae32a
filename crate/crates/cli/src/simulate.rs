use clap::Subcommand;
use grape::eval::{Predicate, Question};
use grape::simworld::{
    apply_edit, degrade_with_log, oracle_plan, parse_edit_instruction, parse_target_scene, questions_for_scene,
    random_prompt_set, render_prompt, evaluate_predicate, Scene, SimError,
};

/// Scene arguments accept a prompt, canonical scene text (starting with
/// `scene v1`), or `@path` to read either from a file.
#[derive(Subcommand)]
pub enum SimCommand {
    /// Parse a prompt into its target scene.
    Parse { prompt: String },
    /// Inject faults into a scene and print the result as a prompt.
    Degrade {
        scene: String,
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print canonical scene text instead of a prompt.
        #[arg(long)]
        scene_text: bool,
        /// Also list the injected faults on stderr.
        #[arg(long)]
        faults: bool,
    },
    /// Print the minimal edit plan taking `current` to `target`.
    Plan {
        #[arg(long)]
        target: String,
        #[arg(long)]
        current: String,
    },
    /// Apply edit instructions in order.
    Apply {
        scene: String,
        #[arg(required = true)]
        instructions: Vec<String>,
        #[arg(long)]
        scene_text: bool,
    },
    /// Answer questions about a scene: the questions generated for
    /// `--target` (default: the scene itself), or one JSON predicate.
    Ask {
        scene: String,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        predicate: Option<String>,
    },
    /// Write a random JSONL prompt set with question graphs.
    Prompts {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
        k: Vec<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report(input: &str, e: &SimError) {
    eprintln!("error: {e}");
    if let SimError::Grammar { start, end, .. } = e {
        eprintln!("  {input}");
        let width = (end - start).max(1);
        let pad = input[..*start.min(&input.len())].chars().count();
        eprintln!("  {}{}", " ".repeat(pad), "^".repeat(width));
    }
}

fn load_scene(arg: &str) -> Result<Scene, u8> {
    let text = match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            eprintln!("error: reading {path}: {e}");
            2
        })?,
        None => arg.to_owned(),
    };
    let parsed = if text.trim_start().starts_with("scene v1") {
        Scene::from_text(&text)
    } else {
        parse_target_scene(text.trim())
    };
    parsed.map_err(|e| {
        report(text.trim(), &e);
        1
    })
}

fn show(scene: &Scene, as_text: bool) {
    if as_text {
        print!("{}", scene.to_text());
    } else {
        println!("{}", render_prompt(scene));
    }
}

pub fn run(cmd: SimCommand) -> u8 {
    match exec(cmd) {
        Ok(()) => 0,
        Err(code) => code,
    }
}

fn exec(cmd: SimCommand) -> Result<(), u8> {
    match cmd {
        SimCommand::Parse { prompt } => {
            let scene = parse_target_scene(&prompt).map_err(|e| {
                report(&prompt, &e);
                1
            })?;
            print!("{}", scene.to_text());
        }
        SimCommand::Degrade {
            scene,
            rate,
            seed,
            scene_text,
            faults,
        } => {
            if !(0.0..=1.0).contains(&rate) {
                eprintln!("error: --rate must lie in [0, 1]");
                return Err(2);
            }
            let input = load_scene(&scene)?;
            let (out, log) = degrade_with_log(&input, rate, seed);
            if faults {
                for f in &log {
                    eprintln!("{}", serde_json::to_string(f).expect("faults serialize"));
                }
            }
            if log.is_empty() && !scene.starts_with('@') {
                // Nothing injected: echo the input untouched.
                println!("{}", scene.trim_end());
            } else {
                show(&out, scene_text);
            }
        }
        SimCommand::Plan { target, current } => {
            let target = load_scene(&target)?;
            let current = load_scene(&current)?;
            let plan = oracle_plan(&target, &current);
            if plan.is_empty() {
                println!("No changes needed.");
            }
            for step in plan.steps() {
                println!("{}. {}", step.ordinal, step.text);
            }
        }
        SimCommand::Apply {
            scene,
            instructions,
            scene_text,
        } => {
            let mut current = load_scene(&scene)?;
            for text in &instructions {
                let op = parse_edit_instruction(text).map_err(|e| {
                    report(text, &e);
                    1
                })?;
                current = apply_edit(&current, &op).map_err(|e| {
                    eprintln!("error: {text:?}: {e}");
                    1
                })?;
            }
            show(&current, scene_text);
        }
        SimCommand::Ask {
            scene,
            target,
            predicate,
        } => {
            let scene = load_scene(&scene)?;
            let questions: Vec<Question> = match (predicate, target) {
                (Some(json), _) => {
                    let p: Predicate = serde_json::from_str(&json).map_err(|e| {
                        eprintln!("error: predicate: {e}");
                        2
                    })?;
                    vec![Question::new("q", "").with_predicate(p)]
                }
                (None, Some(t)) => questions_for_scene(&load_scene(&t)?),
                (None, None) => questions_for_scene(&scene),
            };
            for q in &questions {
                let answer = evaluate_predicate(&scene, q).map_err(|e| {
                    eprintln!("error: {e}");
                    1
                })?;
                let answer = if answer.is_yes() { "yes" } else { "no" };
                println!("{}\t{answer}\t{}", q.id, q.text);
            }
        }
        SimCommand::Prompts { count, k, seed } => {
            if k.is_empty() || k.contains(&0) {
                eprintln!("error: --k needs positive concept counts");
                return Err(2);
            }
            for record in random_prompt_set(seed, count, &k) {
                println!("{}", serde_json::to_string(&record).expect("prompts serialize"));
            }
        }
    }
    Ok(())
}
