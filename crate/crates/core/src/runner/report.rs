use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::eval::aggregate;
use crate::model::{PipelineTrace, RunMode};
use crate::store::write_atomic;

use super::{io_err, k_label, load_traces, RunError, METRICS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub benchmark: String,
    pub k: Option<u32>,
    pub mode: RunMode,
    pub prompts: usize,
    /// Independent runs (run directory and seed pairs) averaged over.
    pub runs: usize,
    pub dsg: MetricStat,
    pub dsg_no_dep: MetricStat,
    pub qa: MetricStat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditStepsRow {
    pub benchmark: String,
    pub k: Option<u32>,
    pub traces: usize,
    pub avg_edit_steps: f64,
}

/// Mean GraPE score after `step` edits. Traces that stopped earlier carry
/// their last score forward.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub benchmark: String,
    pub k: Option<u32>,
    pub step: usize,
    pub dsg: MetricStat,
    pub dsg_no_dep: MetricStat,
    pub qa: MetricStat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Report {
    pub runs: Vec<PathBuf>,
    pub prompts: usize,
    pub comparison: Vec<ComparisonRow>,
    pub edit_steps: Vec<EditStepsRow>,
    pub score_vs_step: Vec<StepRow>,
}

type Group = (String, Option<u32>);
type RunKey = (usize, u64);

fn groups_of(t: &PipelineTrace) -> [Group; 2] {
    [(t.prompt.benchmark.as_str().to_owned(), t.prompt.k), ("all".to_owned(), None)]
}

fn stat(per_run: &BTreeMap<RunKey, Vec<f64>>) -> MetricStat {
    let runs: Vec<Vec<f64>> = per_run.values().filter(|v| !v.is_empty()).cloned().collect();
    let (mean, std) = aggregate(&runs).unwrap_or((f64::NAN, f64::NAN));
    MetricStat { mean, std }
}

fn stats(per_run: &[BTreeMap<RunKey, Vec<f64>>; 3]) -> [MetricStat; 3] {
    [stat(&per_run[0]), stat(&per_run[1]), stat(&per_run[2])]
}

/// Merges the scored traces of `run_dirs` into comparison tables.
///
/// Each run directory and seed counts as one independent run. Runs must
/// share prompts: disjoint prompt sets are an error, and partially
/// overlapping sets are reduced to their intersection with a warning.
pub fn build_report(run_dirs: &[PathBuf]) -> Result<Report, RunError> {
    if run_dirs.is_empty() {
        return Err(RunError::Report("no runs given".into()));
    }
    let mut per_dir = Vec::new();
    for dir in run_dirs {
        let traces = load_traces(dir)?;
        if traces.is_empty() {
            return Err(RunError::Report(format!("{} holds no traces", dir.display())));
        }
        if let Some(t) = traces.iter().find(|t| t.per_step_scores.is_none()) {
            return Err(RunError::Report(format!(
                "{} was not scored (prompt {} has no scores); rerun with scoring enabled",
                dir.display(),
                t.prompt.id
            )));
        }
        per_dir.push(traces);
    }

    let sets: Vec<BTreeSet<String>> = per_dir
        .iter()
        .map(|ts| ts.iter().map(|t| t.prompt.id.clone()).collect())
        .collect();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if sets[i].is_disjoint(&sets[j]) {
                return Err(RunError::Report(format!(
                    "{} and {} share no prompts",
                    run_dirs[i].display(),
                    run_dirs[j].display()
                )));
            }
        }
    }
    let mut common = sets[0].clone();
    for s in &sets[1..] {
        common = common.intersection(s).cloned().collect();
    }
    if sets.iter().any(|s| *s != common) {
        log::warn!("runs cover different prompts; reporting on the {} they share", common.len());
    }

    type ModeMetrics = BTreeMap<RunMode, [BTreeMap<RunKey, Vec<f64>>; 3]>;
    let mut final_scores: BTreeMap<Group, ModeMetrics> = BTreeMap::new();
    let mut prompt_ids: BTreeMap<(Group, RunMode), BTreeSet<&str>> = BTreeMap::new();
    let mut plan_lengths: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
    let mut grape_traces: BTreeMap<Group, Vec<(RunKey, &PipelineTrace)>> = BTreeMap::new();

    for (d, traces) in per_dir.iter().enumerate() {
        for t in traces.iter().filter(|t| common.contains(&t.prompt.id)) {
            let key = (d, t.seed);
            let score = t.final_score().expect("checked above");
            for g in groups_of(t) {
                let metrics = final_scores.entry(g.clone()).or_default().entry(t.mode).or_default();
                for (m, f) in METRICS.iter().enumerate() {
                    metrics[m].entry(key).or_default().push(f(score));
                }
                prompt_ids.entry((g.clone(), t.mode)).or_default().insert(&t.prompt.id);
                if t.mode == RunMode::Grape {
                    plan_lengths.entry(g.clone()).or_default().push(t.plan.len());
                    grape_traces.entry(g).or_default().push((key, t));
                }
            }
        }
    }

    let mut report = Report {
        runs: run_dirs.to_vec(),
        prompts: common.len(),
        ..Report::default()
    };
    for ((benchmark, k), modes) in &final_scores {
        for (mode, metrics) in modes {
            let [dsg, dsg_no_dep, qa] = stats(metrics);
            report.comparison.push(ComparisonRow {
                benchmark: benchmark.clone(),
                k: *k,
                mode: *mode,
                prompts: prompt_ids[&((benchmark.clone(), *k), *mode)].len(),
                runs: metrics[0].len(),
                dsg,
                dsg_no_dep,
                qa,
            });
        }
    }
    for ((benchmark, k), lengths) in &plan_lengths {
        report.edit_steps.push(EditStepsRow {
            benchmark: benchmark.clone(),
            k: *k,
            traces: lengths.len(),
            avg_edit_steps: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        });
    }
    for ((benchmark, k), traces) in &grape_traces {
        let longest = traces.iter().map(|(_, t)| t.images.len()).max().unwrap_or(1);
        for step in 0..longest {
            let mut metrics: [BTreeMap<RunKey, Vec<f64>>; 3] = Default::default();
            for (key, t) in traces {
                let scores = t.per_step_scores.as_ref().expect("checked above");
                let s = &scores[step.min(scores.len() - 1)];
                for (m, f) in METRICS.iter().enumerate() {
                    metrics[m].entry(*key).or_default().push(f(s));
                }
            }
            let [dsg, dsg_no_dep, qa] = stats(&metrics);
            report.score_vs_step.push(StepRow {
                benchmark: benchmark.clone(),
                k: *k,
                step,
                dsg,
                dsg_no_dep,
                qa,
            });
        }
    }
    Ok(report)
}

fn pm(s: MetricStat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

impl Report {
    /// The comparison rows for one mode, benchmark and K.
    pub fn row(&self, mode: RunMode, benchmark: &str, k: Option<u32>) -> Option<&ComparisonRow> {
        self.comparison
            .iter()
            .find(|r| r.mode == mode && r.benchmark == benchmark && r.k == k)
    }

    /// Writes `comparison.csv`, `edit_steps.csv` and `score_vs_step.csv`.
    pub fn write_csvs(&self, out: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
        let f = |x: f64| format!("{x:.6}");

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "benchmark", "k", "mode", "prompts", "runs", "dsg_mean", "dsg_std", "dsg_no_dep_mean", "dsg_no_dep_std",
            "qa_mean", "qa_std",
        ])
        .expect("in-memory write");
        for r in &self.comparison {
            w.write_record([
                r.benchmark.clone(),
                k_label(r.k),
                r.mode.as_str().into(),
                r.prompts.to_string(),
                r.runs.to_string(),
                f(r.dsg.mean),
                f(r.dsg.std),
                f(r.dsg_no_dep.mean),
                f(r.dsg_no_dep.std),
                f(r.qa.mean),
                f(r.qa.std),
            ])
            .expect("in-memory write");
        }
        self.put(out, "comparison.csv", w)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["benchmark", "k", "traces", "avg_edit_steps"]).expect("in-memory write");
        for r in &self.edit_steps {
            w.write_record([r.benchmark.clone(), k_label(r.k), r.traces.to_string(), f(r.avg_edit_steps)])
                .expect("in-memory write");
        }
        self.put(out, "edit_steps.csv", w)?;

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["benchmark", "k", "step", "dsg_mean", "dsg_std", "dsg_no_dep_mean", "dsg_no_dep_std", "qa_mean", "qa_std"])
            .expect("in-memory write");
        for r in &self.score_vs_step {
            w.write_record([
                r.benchmark.clone(),
                k_label(r.k),
                r.step.to_string(),
                f(r.dsg.mean),
                f(r.dsg.std),
                f(r.dsg_no_dep.mean),
                f(r.dsg_no_dep.std),
                f(r.qa.mean),
                f(r.qa.std),
            ])
            .expect("in-memory write");
        }
        self.put(out, "score_vs_step.csv", w)
    }

    fn put(&self, out: &Path, name: &str, w: csv::Writer<Vec<u8>>) -> Result<(), RunError> {
        let bytes = w.into_inner().expect("in-memory write");
        write_atomic(&out.join(name), &bytes).map_err(io_err(format!("writing {name}")))
    }

    /// Plain-text tables for the terminal.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let runs = self.comparison.iter().map(|r| r.runs).max().unwrap_or(0);
        let _ = writeln!(
            s,
            "{} prompts, {runs} run(s) from {} director{}\n",
            self.prompts,
            self.runs.len(),
            if self.runs.len() == 1 { "y" } else { "ies" }
        );
        let _ = writeln!(
            s,
            "{:<16} {:>3} {:<6} {:>22} {:>22} {:>22}",
            "benchmark", "k", "mode", "DSG", "DSG (no dep)", "QA"
        );
        for r in &self.comparison {
            let _ = writeln!(
                s,
                "{:<16} {:>3} {:<6} {:>22} {:>22} {:>22}",
                r.benchmark,
                k_label(r.k),
                r.mode.as_str(),
                pm(r.dsg),
                pm(r.dsg_no_dep),
                pm(r.qa)
            );
        }
        if !self.edit_steps.is_empty() {
            let _ = writeln!(s, "\n{:<16} {:>3} {:>14}", "benchmark", "k", "avg edit steps");
            for r in &self.edit_steps {
                let _ = writeln!(s, "{:<16} {:>3} {:>14.2}", r.benchmark, k_label(r.k), r.avg_edit_steps);
            }
        }
        s
    }
}
