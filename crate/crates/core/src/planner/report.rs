//! Rendering and parsing of the four-section planner output.

use std::sync::LazyLock;

use regex::Regex;

use super::PlannerMode;
use crate::model::{EditPlan, Element, PlanSource, PlannerReport};

pub const TEXTUAL_ELEMENTS: &str = "Analyzing Textual Elements";
pub const IMAGE_ELEMENTS: &str = "Analyzing Image Elements";
pub const ERROR_IDENTIFICATION: &str = "Error Identification";
pub const FEEDBACK: &str = "Feedback";

/// Line written under Feedback when the plan is empty.
pub const NO_CHANGES: &str = "No changes needed.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Textual,
    Image,
    Errors,
    Feedback,
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[\s#*_]*(?:(?:step\s*)?\d+\s*[.):]?[\s*_]*)?(analy[sz]ing\s+textual\s+elements|analy[sz]ing\s+image\s+elements|error\s+identification|feedback)(?:[\s*_]*:[\s*_]*(.*?)|[\s*_]*)$",
    )
    .expect("valid regex")
});

static ENUMERATED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s+(.*\S)\s*$").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ParseError(pub String);

fn header(line: &str) -> Option<(Section, &str)> {
    let caps = HEADER.captures(line)?;
    let name = caps[1].to_lowercase();
    let section = if name.contains("textual") {
        Section::Textual
    } else if name.contains("image") {
        Section::Image
    } else if name.starts_with("error") {
        Section::Errors
    } else {
        Section::Feedback
    };
    Some((section, caps.get(2).map_or("", |m| m.as_str())))
}

fn enumerated(line: &str) -> Option<&str> {
    ENUMERATED.captures(line).map(|c| c.get(1).expect("group").as_str())
}

fn clean_instruction(text: &str) -> String {
    text.replace("**", "").trim().to_owned()
}

/// Enumerated instructions in `lines`, in order. Indented lines that are not
/// themselves enumerated continue the previous instruction; other prose is
/// ignored.
fn instructions<'a>(lines: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in lines {
        if let Some(text) = enumerated(line) {
            out.push(clean_instruction(text));
        } else if line.starts_with([' ', '\t']) && !line.trim().is_empty() {
            if let Some(last) = out.last_mut() {
                last.push(' ');
                last.push_str(&clean_instruction(line));
            }
        }
    }
    out.retain(|s| !s.is_empty());
    out
}

/// The last block of enumerated lines (with continuations) in `raw`.
fn trailing_list(raw: &str) -> Vec<String> {
    let lines: Vec<&str> = raw.lines().collect();
    let Some(last) = lines.iter().rposition(|l| enumerated(l).is_some()) else {
        return Vec::new();
    };
    let mut start = last;
    while start > 0 {
        let prev = lines[start - 1];
        let continues = enumerated(prev).is_some() || (prev.starts_with([' ', '\t']) && !prev.trim().is_empty());
        if !continues {
            break;
        }
        start -= 1;
    }
    let end = (last + 1..lines.len())
        .find(|&i| !(lines[i].starts_with([' ', '\t']) && !lines[i].trim().is_empty()))
        .unwrap_or(lines.len());
    instructions(lines[start..end].iter().copied())
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

/// One element bullet: `entity | attributes: a, b | relations: r`. A looser
/// `entity: a, b` form is accepted too.
fn element(line: &str) -> Option<Element> {
    let body = enumerated(line)?.replace("**", "");
    let mut parts = body.split(" | ");
    let head = parts.next()?.trim();
    let mut el;
    if body.contains(" | ") {
        el = Element::new(head);
        for part in parts {
            let part = part.trim();
            if let Some(rest) = part.strip_prefix("attributes:") {
                el.attributes = split_list(rest);
            } else if let Some(rest) = part.strip_prefix("relations:") {
                el.relations = split_list(rest);
            }
        }
    } else if let Some((entity, rest)) = head.split_once(':') {
        el = Element::new(entity.trim());
        el.attributes = split_list(rest);
    } else {
        el = Element::new(head);
    }
    (!el.entity.is_empty()).then_some(el)
}

fn render_element(e: &Element) -> String {
    let mut line = format!("- {}", e.entity);
    if !e.attributes.is_empty() {
        line.push_str(" | attributes: ");
        line.push_str(&e.attributes.join(", "));
    }
    if !e.relations.is_empty() {
        line.push_str(" | relations: ");
        line.push_str(&e.relations.join(", "));
    }
    line
}

fn render_elements(out: &mut String, title: &str, elements: &[Element]) {
    out.push_str(title);
    out.push_str(":\n");
    if elements.is_empty() {
        out.push_str("None.\n");
    }
    for e in elements {
        out.push_str(&render_element(e));
        out.push('\n');
    }
}

/// The two element-analysis sections, as sent to the alignment scorer.
pub fn render_element_sections(textual: &[Element], image: &[Element]) -> String {
    let mut out = String::new();
    render_elements(&mut out, TEXTUAL_ELEMENTS, textual);
    out.push('\n');
    render_elements(&mut out, IMAGE_ELEMENTS, image);
    out
}

/// Canonical text for a report. `raw_text` is ignored.
pub fn render_report(report: &PlannerReport) -> String {
    let mut out = render_element_sections(&report.textual_elements, &report.image_elements);
    out.push('\n');
    out.push_str(ERROR_IDENTIFICATION);
    out.push_str(":\n");
    if !report.error_summary.is_empty() {
        out.push_str(&report.error_summary);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(FEEDBACK);
    out.push_str(":\n");
    out.push_str(&render_plan(&report.plan));
    out
}

/// Numbered plan lines, or [`NO_CHANGES`] for an empty plan.
pub fn render_plan(plan: &EditPlan) -> String {
    if plan.is_empty() {
        return format!("{NO_CHANGES}\n");
    }
    plan.steps().iter().map(|s| format!("{}. {}\n", s.ordinal, s.text)).collect()
}

/// Assembles a report and sets `raw_text` to its canonical rendering, so
/// the result satisfies `parse_planner_output(&r.raw_text, ..) == Ok(r)`.
pub fn build_report(
    textual_elements: Vec<Element>,
    image_elements: Vec<Element>,
    error_summary: impl Into<String>,
    plan: EditPlan,
) -> PlannerReport {
    let mut report = PlannerReport {
        textual_elements,
        image_elements,
        error_summary: error_summary.into(),
        plan,
        raw_text: String::new(),
    };
    report.raw_text = render_report(&report);
    report
}

/// Parses planner output into a report.
///
/// Section headers are matched case-insensitively and may carry markdown
/// heading marks, bold markers, numbering (`1.`, `Step 1:`) and a trailing
/// colon. The plan is the enumerated lines (`1.`, `-`, `*`) under the
/// Feedback header; indented continuation lines fold into the previous
/// instruction.
///
/// Structured mode requires a Feedback header. Naive mode falls back to the
/// last enumerated list in the output, and to an empty plan when there is
/// none.
///
/// ```
/// use grape::planner::{parse_planner_output, PlannerMode};
///
/// let raw = "## Error Identification\nThe dog lacks oranges.\n\n**Feedback:**\n\
///            1. Replace the objects on the plate with sushi\n\
///            2. Add scattered oranges around the dog\n";
/// let report = parse_planner_output(raw, PlannerMode::Structured).unwrap();
/// let steps: Vec<_> = report.plan.steps().iter().map(|s| s.text.as_str()).collect();
/// assert_eq!(steps, ["Replace the objects on the plate with sushi", "Add scattered oranges around the dog"]);
/// ```
pub fn parse_planner_output(raw: &str, mode: PlannerMode) -> Result<PlannerReport, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError("planner output is empty".into()));
    }
    let source = match mode {
        PlannerMode::Structured => PlanSource::Mllm,
        PlannerMode::Naive => PlanSource::NaiveMllm,
    };
    let mut sections: Vec<(Section, Vec<&str>)> = Vec::new();
    for line in raw.lines() {
        if let Some((section, rest)) = header(line) {
            sections.push((section, Vec::new()));
            if !rest.trim().is_empty() {
                sections.last_mut().expect("just pushed").1.push(rest);
            }
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line);
        }
    }
    let body = |wanted: Section| sections.iter().find(|(s, _)| *s == wanted).map(|(_, b)| b);
    let elements = |wanted| {
        body(wanted)
            .map(|lines| lines.iter().filter_map(|l| element(l)).collect())
            .unwrap_or_default()
    };
    let plan = match (body(Section::Feedback), mode) {
        (Some(lines), _) => instructions(lines.iter().copied()),
        (None, PlannerMode::Naive) => trailing_list(raw),
        (None, PlannerMode::Structured) if sections.is_empty() => {
            return Err(ParseError("no section headers found".into()))
        }
        (None, PlannerMode::Structured) => return Err(ParseError("missing Feedback section".into())),
    };
    Ok(PlannerReport {
        textual_elements: elements(Section::Textual),
        image_elements: elements(Section::Image),
        error_summary: body(Section::Errors)
            .map(|lines| lines.join("\n").trim().to_owned())
            .unwrap_or_default(),
        plan: EditPlan::from_texts(plan, source),
        raw_text: raw.to_owned(),
    })
}
