//! Prompt templates and model-output parsing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::normalize::normalize_answer;
use crate::types::{Locale, McqOption, Question, Track};

pub const NO_ANSWER: &str = "<NO_ANSWER>";

const MP: &str = include_str!("../prompts/mp.txt");
const RP_V1: &str = include_str!("../prompts/rp_v1.txt");
const RP_V2: &str = include_str!("../prompts/rp_v2.txt");

/// `sha256  file` lines for the three preambles.
pub const CHECKSUMS: &str = include_str!("../prompts/checksums.txt");

/// Appended after the context block when evidence must support the answer.
pub const GROUNDING_INSTRUCTION: &str = "Answer only if the answer is explicitly supported by the context above. \
If it is not, output <NO_ANSWER> and nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "mp")]
    Mp,
    #[serde(rename = "rp-v1")]
    RpV1,
    #[serde(rename = "rp-v2")]
    RpV2,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::Mp, TemplateId::RpV1, TemplateId::RpV2];

    pub fn preamble(self) -> &'static str {
        match self {
            TemplateId::Mp => MP,
            TemplateId::RpV1 => RP_V1,
            TemplateId::RpV2 => RP_V2,
        }
    }

    pub fn fixture_name(self) -> &'static str {
        match self {
            TemplateId::Mp => "mp.txt",
            TemplateId::RpV1 => "rp_v1.txt",
            TemplateId::RpV2 => "rp_v2.txt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Mp => "mp",
            TemplateId::RpV1 => "rp-v1",
            TemplateId::RpV2 => "rp-v2",
        }
    }

    /// Checksum recorded for this preamble in the fixture manifest.
    pub fn expected_checksum(self) -> Option<&'static str> {
        CHECKSUMS.lines().find_map(|l| {
            let (sum, name) = l.split_once("  ")?;
            (name.trim() == self.fixture_name()).then_some(sum.trim())
        })
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mp" => Ok(TemplateId::Mp),
            "rp-v1" | "rpv1" => Ok(TemplateId::RpV1),
            "rp-v2" | "rpv2" => Ok(TemplateId::RpV2),
            other => Err(format!("unknown prompt {other:?} (expected mp, rp-v1 or rp-v2)")),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Preamble, optional context block, question, options (MCQ), answer cue.
pub fn render(template: TemplateId, question: &Question, context: &[String]) -> String {
    render_with(template, question, context, false)
}

/// Like [`render`]; `grounded` adds the evidence-only instruction after the
/// context block.
pub fn render_with(template: TemplateId, question: &Question, context: &[String], grounded: bool) -> String {
    let mut out = String::from(template.preamble());
    if !context.is_empty() {
        out.push_str("Context:\n");
        for item in context {
            out.push_str("- ");
            out.push_str(&one_line(item));
            out.push('\n');
        }
        out.push('\n');
    }
    if grounded {
        out.push_str(GROUNDING_INSTRUCTION);
        out.push_str("\n\n");
    }
    out.push_str("Question: ");
    out.push_str(&question.text);
    out.push('\n');
    if question.track == Track::Mcq && !question.options.is_empty() {
        out.push_str("Options:\n");
        for opt in &question.options {
            out.push_str(&format!("{}) {}\n", opt.label, one_line(&opt.text)));
        }
    }
    out.push_str("Answer:");
    out
}

/// Evidence lines of a rendered prompt's context block.
pub fn extract_context(prompt: &str) -> Vec<&str> {
    let mut lines = prompt.lines();
    if !lines.any(|l| l == "Context:") {
        return Vec::new();
    }
    lines
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.strip_prefix("- "))
        .collect()
}

/// Question text of a rendered prompt.
pub fn extract_question(prompt: &str) -> Option<&str> {
    prompt.lines().rev().find_map(|l| l.strip_prefix("Question: "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerKind {
    Answer,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub kind: AnswerKind,
    /// Surface answer with any label stripped; empty on abstention.
    pub text: String,
    /// Matching key for `text`.
    pub normalized: String,
    pub raw: String,
}

impl ParsedAnswer {
    pub fn abstain(raw: impl Into<String>) -> Self {
        Self {
            kind: AnswerKind::Abstain,
            text: String::new(),
            normalized: String::new(),
            raw: raw.into(),
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.kind == AnswerKind::Abstain
    }

    /// An answer with non-empty content.
    pub fn is_usable(&self) -> bool {
        self.kind == AnswerKind::Answer && !self.normalized.is_empty()
    }

    /// Text written to prediction files.
    pub fn display(&self) -> &str {
        match self.kind {
            AnswerKind::Abstain => NO_ANSWER,
            AnswerKind::Answer => &self.text,
        }
    }
}

const LABELS: [&str; 6] = ["answer:", "答案：", "答案:", "respuesta:", "回答：", "respuesta："];

fn strip_label(line: &str) -> &str {
    let lower = line.to_lowercase();
    for label in LABELS {
        if lower.starts_with(label) {
            if let Some(rest) = line.get(label.len()..) {
                return rest.trim();
            }
        }
    }
    line
}

pub fn parse_answer(raw: &str, locale: &Locale) -> ParsedAnswer {
    if raw.contains(NO_ANSWER) {
        return ParsedAnswer::abstain(raw);
    }
    let text = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(strip_label)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string();
    let normalized = normalize_answer(&text, locale).normalized;
    ParsedAnswer {
        kind: AnswerKind::Answer,
        text,
        normalized,
        raw: raw.to_string(),
    }
}

fn bare_label(s: &str) -> &str {
    s.trim()
        .trim_start_matches(['(', '['])
        .trim_end_matches([')', ']', '.', ':', '：', '。'])
        .trim()
}

/// Maps an answer to an option label: exact label, then a leading `A)`
/// style label, then normalized option text.
pub fn resolve_option(answer: &ParsedAnswer, options: &[McqOption], locale: &Locale) -> Option<String> {
    if !answer.is_usable() {
        return None;
    }
    let candidate = bare_label(&answer.text);
    if let Some(o) = options.iter().find(|o| o.label == candidate) {
        return Some(o.label.clone());
    }
    let ci: Vec<&McqOption> = options
        .iter()
        .filter(|o| o.label.eq_ignore_ascii_case(candidate))
        .collect();
    if ci.len() == 1 {
        return Some(ci[0].label.clone());
    }
    if let Some(idx) = answer.text.find([')', '.', ':']) {
        let head = bare_label(&answer.text[..idx]);
        if let Some(o) = options.iter().find(|o| o.label == head) {
            return Some(o.label.clone());
        }
    }
    options
        .iter()
        .find(|o| normalize_answer(&o.text, locale).normalized == answer.normalized)
        .map(|o| o.label.clone())
}
