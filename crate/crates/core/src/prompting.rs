//! Classification and conditional-explanation prompts, and the
//! `EXPLANATION: ... LABEL: ...` completion grammar.
//!
//! Templates live in `templates/` and are substituted by plain string
//! interpolation of `{categories}`, `{definitions}` and `{post}`. Rendering is
//! single-pass, so a post that itself contains `{definitions}` is inserted
//! verbatim.
//!
//! Completion grammar, as read by [`parse_response`]:
//!
//! ```text
//! ... EXPLANATION: <explanation text> LABEL: <label> [trailing lines]
//! ```
//!
//! Markers are upper-case and matched case-sensitively. The last
//! `EXPLANATION:` wins (models sometimes echo the instruction block), and the
//! label is read from the last `LABEL:` after it, first non-empty line only.

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSpace, LabeledExample, Post};

pub const CLASSIFICATION_TEMPLATE: &str = include_str!("../templates/classification.txt");
pub const CONDITIONAL_TEMPLATE: &str = include_str!("../templates/conditional.txt");

pub const EXPLANATION_MARKER: &str = "EXPLANATION:";
pub const LABEL_MARKER: &str = "LABEL:";
pub const DEFINITIONS_HEADER: &str = "### Definitions:";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("label {0:?} is not in the label space")]
    UnknownLabel(String),
    #[error("example {0:?} has no seed explanation")]
    MissingExplanation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Classification,
    Conditional,
    SftTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub kind: PromptKind,
    pub post_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioned_label: Option<String>,
}

/// Parsed model label, or the sentinel for unparseable output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    Label(String),
    Invalid,
}

impl PredictedLabel {
    pub fn as_label(&self) -> Option<&str> {
        match self {
            PredictedLabel::Label(l) => Some(l),
            PredictedLabel::Invalid => None,
        }
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, PredictedLabel::Invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub explanation: String,
    pub label: PredictedLabel,
    pub raw: String,
}

/// Prompt/completion pair for supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

fn interpolate(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        for (name, value) in vars {
            let key_len = name.len() + 2;
            if after.len() >= key_len && after.as_bytes()[key_len - 1] == b'}' && &after[1..key_len - 1] == *name {
                out.push_str(value);
                rest = &after[key_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

fn definition_line(space: &LabelSpace, label: &str) -> String {
    format!("{label}: {}", space.definition(label).unwrap_or_default())
}

/// Full-label-space classification prompt.
pub fn render_classification_prompt(post: &Post, space: &LabelSpace) -> RenderedPrompt {
    let categories = space.labels().join(", ");
    let definitions = space
        .labels()
        .iter()
        .map(|l| definition_line(space, l))
        .collect::<Vec<_>>()
        .join("\n");
    RenderedPrompt {
        text: interpolate(
            CLASSIFICATION_TEMPLATE,
            &[("categories", &categories), ("definitions", &definitions), ("post", &post.text)],
        ),
        kind: PromptKind::Classification,
        post_id: post.id.clone(),
        conditioned_label: None,
    }
}

/// Prompt asking for a justification of one given label.
pub fn render_conditional_prompt(post: &Post, label: &str, space: &LabelSpace) -> Result<RenderedPrompt, PromptError> {
    if !space.contains(label) {
        return Err(PromptError::UnknownLabel(label.to_string()));
    }
    let definitions = definition_line(space, label);
    Ok(RenderedPrompt {
        text: interpolate(CONDITIONAL_TEMPLATE, &[("definitions", &definitions), ("post", &post.text)]),
        kind: PromptKind::Conditional,
        post_id: post.id.clone(),
        conditioned_label: Some(label.to_string()),
    })
}

/// Canonical completion text for an explanation and label.
pub fn format_completion(explanation: &str, label: &str) -> String {
    format!("{EXPLANATION_MARKER} {}\n{LABEL_MARKER} {label}", explanation.trim())
}

fn normalize_label_text(text: &str) -> String {
    text.trim()
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | ';' | ':') || c.is_whitespace())
        .trim()
        .to_lowercase()
}

/// Parse a completion. Total: unparseable input yields [`PredictedLabel::Invalid`].
pub fn parse_response(raw: &str, space: &LabelSpace) -> ParsedResponse {
    let invalid = || ParsedResponse {
        explanation: String::new(),
        label: PredictedLabel::Invalid,
        raw: raw.to_string(),
    };
    let Some(e) = raw.rfind(EXPLANATION_MARKER) else {
        return invalid();
    };
    let body = &raw[e + EXPLANATION_MARKER.len()..];
    let Some(l) = body.rfind(LABEL_MARKER) else {
        return invalid();
    };
    let explanation = body[..l].trim();
    let label_text = body[l + LABEL_MARKER.len()..]
        .lines()
        .map(str::trim)
        .find(|s| !s.is_empty())
        .unwrap_or("");
    let wanted = normalize_label_text(label_text);
    let label = space.labels().iter().find(|c| c.to_lowercase() == wanted);
    match label {
        Some(label) if !explanation.is_empty() => ParsedResponse {
            explanation: explanation.to_string(),
            label: PredictedLabel::Label(label.clone()),
            raw: raw.to_string(),
        },
        _ => invalid(),
    }
}

/// Label from a completion that may lack an explanation, such as the output
/// of a model trained on labels only.
pub fn parse_label_only(raw: &str, space: &LabelSpace) -> PredictedLabel {
    let Some(l) = raw.rfind(LABEL_MARKER) else {
        return PredictedLabel::Invalid;
    };
    let text = raw[l + LABEL_MARKER.len()..].lines().map(str::trim).find(|s| !s.is_empty()).unwrap_or("");
    let wanted = normalize_label_text(text);
    space
        .labels()
        .iter()
        .find(|c| c.to_lowercase() == wanted)
        .map(|c| PredictedLabel::Label(c.clone()))
        .unwrap_or(PredictedLabel::Invalid)
}

/// Completion for label-only training.
pub fn format_label_only(label: &str) -> String {
    format!("{LABEL_MARKER} {label}")
}

/// Classification prompt paired with the seed explanation and gold label.
pub fn build_sft_record(example: &LabeledExample, space: &LabelSpace) -> Result<SftRecord, PromptError> {
    if !space.contains(&example.gold_label) {
        return Err(PromptError::UnknownLabel(example.gold_label.clone()));
    }
    let explanation = example
        .seed_explanation
        .as_deref()
        .filter(|e| !e.trim().is_empty())
        .ok_or_else(|| PromptError::MissingExplanation(example.post.id.clone()))?;
    Ok(SftRecord {
        prompt: render_classification_prompt(&example.post, space).text,
        completion: format_completion(explanation, &example.gold_label),
    })
}

/// First label named in a prompt's definitions block, if any.
pub fn first_defined_label(prompt: &str) -> Option<&str> {
    let start = prompt.find(DEFINITIONS_HEADER)? + DEFINITIONS_HEADER.len();
    let line = prompt[start..].lines().map(str::trim).find(|l| !l.is_empty())?;
    let (label, _) = line.split_once(':')?;
    let label = label.trim();
    (!label.is_empty() && !label.starts_with("###")).then_some(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use proptest::prelude::*;

    fn post(text: &str) -> Post {
        Post {
            id: "p1".into(),
            text: text.into(),
            platform: None,
        }
    }

    #[test]
    fn classification_prompt_has_every_definition() {
        let space = Task::HateXplain.label_space();
        let p = render_classification_prompt(&post("some post"), &space);
        for label in space.labels() {
            let line = format!("{label}: {}", space.definition(label).unwrap());
            assert_eq!(p.text.matches(&line).count(), 1);
        }
        assert!(p.text.contains("categories: Normal, Offensive, Hate."));
        assert!(p.text.contains("EXPLANATION: [text]"));
        assert!(p.text.ends_with("### Response:"));
        assert_eq!(p.kind, PromptKind::Classification);
    }

    #[test]
    fn empty_post_leaves_empty_slot() {
        let space = Task::HateXplain.label_space();
        let p = render_classification_prompt(&post(""), &space);
        assert!(p.text.contains("### Post:\n\n### Response:"));
    }

    #[test]
    fn post_text_is_not_reinterpreted() {
        let space = Task::HateXplain.label_space();
        let p = render_classification_prompt(&post("{definitions} {post} {"), &space);
        assert!(p.text.contains("### Post:\n{definitions} {post} {\n"));
    }

    #[test]
    fn conditional_prompt_has_one_definition() {
        let space = Task::HateXplain.label_space();
        let p = render_conditional_prompt(&post("x"), "Hate", &space).unwrap();
        assert!(p.text.contains(&format!("Hate: {}", space.definition("Hate").unwrap())));
        assert!(!p.text.contains("Normal:"));
        assert!(!p.text.contains("Offensive:"));
        assert_eq!(p.conditioned_label.as_deref(), Some("Hate"));
        assert_eq!(
            render_conditional_prompt(&post("x"), "Sarcastic", &space),
            Err(PromptError::UnknownLabel("Sarcastic".into()))
        );
    }

    #[test]
    fn conditional_prompts_differ_only_in_definition_line() {
        let space = Task::ImplicitHate.label_space();
        let prompts: Vec<_> = space
            .labels()
            .iter()
            .map(|l| render_conditional_prompt(&post("x"), l, &space).unwrap().text)
            .collect();
        for i in 0..prompts.len() {
            for j in (i + 1)..prompts.len() {
                assert_ne!(prompts[i], prompts[j]);
                let a: Vec<_> = prompts[i].lines().collect();
                let b: Vec<_> = prompts[j].lines().collect();
                assert_eq!(a.len(), b.len());
                let diffs: Vec<usize> = (0..a.len()).filter(|&n| a[n] != b[n]).collect();
                assert_eq!(diffs.len(), 1);
                assert_eq!(a[diffs[0] - 1], DEFINITIONS_HEADER);
            }
        }
    }

    #[test]
    fn parses_simple_completion() {
        let space = Task::HateXplain.label_space();
        let r = parse_response("EXPLANATION: targets a group. LABEL: Hate", &space);
        assert_eq!(r.explanation, "targets a group.");
        assert_eq!(r.label, PredictedLabel::Label("Hate".into()));
    }

    #[test]
    fn normalizes_label() {
        let space = Task::HateXplain.label_space();
        let r = parse_response("EXPLANATION: because. LABEL: hate.", &space);
        assert_eq!(r.label, PredictedLabel::Label("Hate".into()));
        let r = parse_response("EXPLANATION: because.\nLABEL:   OFFENSIVE!;\nextra chatter", &space);
        assert_eq!(r.label, PredictedLabel::Label("Offensive".into()));
        let space = Task::LatentHate.label_space();
        let r = parse_response("EXPLANATION: x\nLABEL: not hate,", &space);
        assert_eq!(r.label, PredictedLabel::Label("Not Hate".into()));
    }

    #[test]
    fn missing_markers_are_invalid() {
        let space = Task::HateXplain.label_space();
        let r = parse_response("I refuse to answer.", &space);
        assert_eq!(r.label, PredictedLabel::Invalid);
        assert_eq!(r.raw, "I refuse to answer.");
        assert!(parse_response("LABEL: Hate", &space).label.is_invalid());
        assert!(parse_response("EXPLANATION: LABEL: Hate", &space).label.is_invalid());
        assert!(parse_response("EXPLANATION: fine. LABEL: Sarcastic", &space).label.is_invalid());
    }

    #[test]
    fn echoed_prompt_uses_last_marker() {
        let space = Task::HateXplain.label_space();
        let prompt = render_classification_prompt(&post("hello"), &space).text;
        let raw = format!("{prompt}\nEXPLANATION: it is friendly.\nLABEL: Normal");
        let r = parse_response(&raw, &space);
        assert_eq!(r.explanation, "it is friendly.");
        assert_eq!(r.label, PredictedLabel::Label("Normal".into()));
        assert!(parse_response(&prompt, &space).label.is_invalid());
    }

    #[test]
    fn sft_record_round_trip_and_missing_explanation() {
        let space = Task::HateXplain.label_space();
        let mut ex = LabeledExample {
            post: post("text"),
            gold_label: "Offensive".into(),
            seed_explanation: Some("uses rude language.".into()),
        };
        let rec = build_sft_record(&ex, &space).unwrap();
        assert_eq!(rec.completion, "EXPLANATION: uses rude language.\nLABEL: Offensive");
        let parsed = parse_response(&rec.completion, &space);
        assert_eq!(parsed.explanation, "uses rude language.");
        assert_eq!(parsed.label.as_label(), Some("Offensive"));
        ex.seed_explanation = None;
        assert_eq!(build_sft_record(&ex, &space), Err(PromptError::MissingExplanation("p1".into())));
    }

    #[test]
    fn first_defined_label_reads_definitions_block() {
        let space = Task::LatentHate.label_space();
        let p = render_classification_prompt(&post("x"), &space);
        assert_eq!(first_defined_label(&p.text), Some("Not Hate"));
        let c = render_conditional_prompt(&post("x"), "Implicit Hate", &space).unwrap();
        assert_eq!(first_defined_label(&c.text), Some("Implicit Hate"));
        assert_eq!(first_defined_label("no block"), None);
    }

    proptest! {
        #[test]
        fn parsing_is_total(raw in "\\PC{0,200}") {
            let space = Task::HateXplain.label_space();
            let r = parse_response(&raw, &space);
            prop_assert_eq!(&r.raw, &raw);
            if !r.label.is_invalid() {
                prop_assert!(!r.explanation.is_empty());
            }
        }

        #[test]
        fn sft_round_trip(
            expl in "[a-zA-Z][a-zA-Z0-9 ,.'()-]{0,80}",
            label_idx in 0usize..6,
            text in "\\PC{0,40}",
        ) {
            let space = Task::ImplicitHate.label_space();
            let label = space.labels()[label_idx].clone();
            let ex = LabeledExample {
                post: Post { id: "x".into(), text, platform: None },
                gold_label: label.clone(),
                seed_explanation: Some(expl.clone()),
            };
            let rec = build_sft_record(&ex, &space).unwrap();
            let parsed = parse_response(&rec.completion, &space);
            prop_assert_eq!(parsed.explanation, expl.trim());
            prop_assert_eq!(parsed.label, PredictedLabel::Label(label));
        }

        #[test]
        fn classification_categories_list_each_label_once(text in "[a-z ]{0,30}") {
            let space = Task::ImplicitHate.label_space();
            let p = render_classification_prompt(&post(&text), &space);
            let line = p.text.lines().find(|l| l.contains("one of these categories:")).unwrap();
            let cats = line.split_once("categories: ").unwrap().1.trim_end_matches('.');
            let listed: Vec<&str> = cats.split(", ").collect();
            prop_assert_eq!(listed, space.labels().iter().map(String::as_str).collect::<Vec<_>>());
            let defs = p.text.split_once(DEFINITIONS_HEADER).unwrap().1.split_once("### Post:").unwrap().0;
            prop_assert_eq!(defs.trim().lines().count(), space.len());
        }
    }

    #[test]
    fn label_only_parsing() {
        let space = Task::HateXplain.label_space();
        assert_eq!(parse_label_only(&format_label_only("Hate"), &space), PredictedLabel::Label("Hate".into()));
        assert_eq!(parse_label_only("LABEL: offensive.", &space), PredictedLabel::Label("Offensive".into()));
        assert!(parse_label_only("no marker", &space).is_invalid());
    }
}
