//! Parsing of structured LLM completions into prediction scores.
//!
//! Completions are expected in the three-block brace template
//! (`{label}` / `{confidence}` / `{explanation}`). When a model drifts from
//! the template the parser falls back, in order, to a line-oriented reading
//! and then to a keyword scan. The path that succeeded is recorded in
//! [`ParseStatus`].

use std::io::Write;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed label vocabulary with a fixed label-to-score bijection.
pub trait Label: Copy + Eq + std::fmt::Debug + 'static {
    const ALL: &'static [Self];
    fn canonical(self) -> &'static str;
    fn score(self) -> f64;

    fn from_score(score: f64) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.score() == score)
    }

    /// Accepts the canonical name after lowercasing and folding runs of
    /// spaces, hyphens and underscores into a single underscore.
    fn from_text(text: &str) -> Option<Self> {
        let norm = normalize_label(text);
        Self::ALL.iter().copied().find(|l| l.canonical() == norm)
    }

    fn keyword_regex() -> &'static Regex;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadlineLabel {
    Good,
    Neutral,
    Bad,
}

impl HeadlineLabel {
    pub fn as_i8(self) -> i8 {
        match self {
            HeadlineLabel::Good => 1,
            HeadlineLabel::Neutral => 0,
            HeadlineLabel::Bad => -1,
        }
    }
}

impl Label for HeadlineLabel {
    const ALL: &'static [Self] = &[HeadlineLabel::Good, HeadlineLabel::Neutral, HeadlineLabel::Bad];

    fn canonical(self) -> &'static str {
        match self {
            HeadlineLabel::Good => "good",
            HeadlineLabel::Neutral => "neutral",
            HeadlineLabel::Bad => "bad",
        }
    }

    fn score(self) -> f64 {
        f64::from(self.as_i8())
    }

    fn keyword_regex() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| Regex::new(r"(?i)\b(good|bad|neutral)\b").unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapexLabel {
    SignificantlyIncrease,
    SlightlyIncrease,
    NoChange,
    SlightlyDecrease,
    SignificantlyDecrease,
}

impl Label for CapexLabel {
    const ALL: &'static [Self] = &[
        CapexLabel::SignificantlyIncrease,
        CapexLabel::SlightlyIncrease,
        CapexLabel::NoChange,
        CapexLabel::SlightlyDecrease,
        CapexLabel::SignificantlyDecrease,
    ];

    fn canonical(self) -> &'static str {
        match self {
            CapexLabel::SignificantlyIncrease => "significantly_increase",
            CapexLabel::SlightlyIncrease => "slightly_increase",
            CapexLabel::NoChange => "no_change",
            CapexLabel::SlightlyDecrease => "slightly_decrease",
            CapexLabel::SignificantlyDecrease => "significantly_decrease",
        }
    }

    fn score(self) -> f64 {
        match self {
            CapexLabel::SignificantlyIncrease => 1.0,
            CapexLabel::SlightlyIncrease => 0.5,
            CapexLabel::NoChange => 0.0,
            CapexLabel::SlightlyDecrease => -0.5,
            CapexLabel::SignificantlyDecrease => -1.0,
        }
    }

    fn keyword_regex() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        RE.get_or_init(|| {
            Regex::new(
                r"(?i)\b(significantly[\s_-]*increase|slightly[\s_-]*increase|no[\s_-]*change|slightly[\s_-]*decrease|significantly[\s_-]*decrease)\b",
            )
            .unwrap()
        })
    }
}

/// Which parsing layer produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Template,
    LineOriented,
    Keyword,
    Unparseable,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Template => "template",
            ParseStatus::LineOriented => "line_oriented",
            ParseStatus::Keyword => "keyword",
            ParseStatus::Unparseable => "unparseable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// A confidence value was found but lies outside [0, 1]; it was dropped.
    ConfidenceOutOfRange { raw: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict<L> {
    pub label: L,
    pub score: f64,
    pub confidence: Option<f64>,
    pub explanation: Option<String>,
    pub status: ParseStatus,
    pub warnings: Vec<ParseWarning>,
}

pub type HeadlineVerdict = Verdict<HeadlineLabel>;
pub type CapexVerdict = Verdict<CapexLabel>;

pub fn parse_headline_response(text: &str) -> Result<HeadlineVerdict> {
    parse_response(text)
}

pub fn parse_capex_response(text: &str) -> Result<CapexVerdict> {
    parse_response(text)
}

/// Runs the template, line-oriented and keyword layers in that order.
pub fn parse_response<L: Label>(text: &str) -> Result<Verdict<L>> {
    parse_template(text)
        .or_else(|| parse_lines(text))
        .or_else(|| parse_keyword(text))
        .ok_or_else(|| Error::UnparseableResponse {
            raw: text.to_string(),
        })
}

fn normalize_label(text: &str) -> String {
    static SEP: OnceLock<Regex> = OnceLock::new();
    let sep = SEP.get_or_init(|| Regex::new(r"[\s_\-]+").unwrap());
    let trimmed = text
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '`' | '.' | ',' | ';' | ':' | '!' | '[' | ']' | '(' | ')'))
        .trim()
        .to_lowercase();
    sep.replace_all(&trimmed, "_").into_owned()
}

enum ConfidenceField {
    Value(f64),
    OutOfRange(String, f64),
}

impl ConfidenceField {
    fn resolve(self, warnings: &mut Vec<ParseWarning>) -> Option<f64> {
        match self {
            ConfidenceField::Value(v) => Some(v),
            ConfidenceField::OutOfRange(raw, value) => {
                warnings.push(ParseWarning::ConfidenceOutOfRange { raw, value });
                None
            }
        }
    }
}

fn number_to_confidence(raw: &str, number: &str, percent: bool) -> Option<ConfidenceField> {
    let mut v: f64 = number.parse().ok()?;
    if percent {
        v /= 100.0;
    }
    if (0.0..=1.0).contains(&v) {
        Some(ConfidenceField::Value(v))
    } else {
        Some(ConfidenceField::OutOfRange(raw.trim().to_string(), v))
    }
}

/// A field whose whole content is a confidence: `0.8`, `80%`,
/// `confidence (0-1): 0.8`.
fn field_confidence(field: &str) -> Option<ConfidenceField> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:\**\s*confidence\b[^:=]*[:=]\s*\**\s*)?([+-]?\d*\.?\d+)\s*(%?)\s*\**\.?\s*$").unwrap()
    });
    let caps = re.captures(field)?;
    number_to_confidence(field, &caps[1], !caps[2].is_empty())
}

/// A confidence mentioned inside free text, anchored on the word itself.
fn inline_confidence(text: &str) -> Option<ConfidenceField> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(
            r"(?i)confidence\s*(?:\(\s*0\s*[-–]\s*1\s*\))?\s*(?:level|score)?\s*(?:is|of|:|=|-)?\s*\**\s*([+-]?\d*\.?\d+)\s*(%?)|([+-]?\d*\.?\d+)\s*(%?)\s+confidence",
        )
        .unwrap()
    });
    let caps = re.captures(text)?;
    let (num, pct) = match caps.get(1) {
        Some(n) => (n.as_str(), caps.get(2).is_some_and(|m| !m.is_empty())),
        None => (
            caps.get(3)?.as_str(),
            caps.get(4).is_some_and(|m| !m.is_empty()),
        ),
    };
    number_to_confidence(caps.get(0)?.as_str(), num, pct)
}

fn strip_explanation_prefix(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*\**\s*explanation\b(?:\s*\([^)]*\))?\s*\**\s*[:=\-]?\s*\**").unwrap()
    });
    let out = re.replace(text, "").trim().trim_matches('*').trim().to_string();
    (!out.is_empty()).then_some(out)
}

fn parse_template<L: Label>(text: &str) -> Option<Verdict<L>> {
    static BLOCK: OnceLock<Regex> = OnceLock::new();
    let block = BLOCK.get_or_init(|| Regex::new(r"\{([^{}]*)\}").unwrap());
    let spans: Vec<(&str, usize)> = block
        .captures_iter(text)
        .map(|c| (c.get(1).unwrap().as_str(), c.get(0).unwrap().end()))
        .collect();
    let blocks: Vec<&str> = spans.iter().map(|s| s.0).collect();

    let (label_idx, label) = blocks
        .iter()
        .enumerate()
        .find_map(|(i, b)| L::from_text(b).map(|l| (i, l)))?;

    let mut warnings = Vec::new();
    let mut confidence = None;
    let mut explanation = None;
    for b in &blocks[label_idx + 1..] {
        if confidence.is_none() && explanation.is_none() {
            if let Some(c) = field_confidence(b) {
                confidence = c.resolve(&mut warnings);
                continue;
            }
        }
        if explanation.is_none() {
            explanation = strip_explanation_prefix(b);
        }
    }
    if confidence.is_none() && warnings.is_empty() {
        // `{neutral}, 0.5`: a bare value on the same line as the label block.
        let rest = &text[spans[label_idx].1..];
        let rest = rest.split(['\n', '{']).next().unwrap_or("");
        if let Some(c) = field_confidence(rest.trim_start_matches([' ', ',', ';', ':'])) {
            confidence = c.resolve(&mut warnings);
        }
    }
    Some(Verdict {
        label,
        score: label.score(),
        confidence,
        explanation,
        status: ParseStatus::Template,
        warnings,
    })
}

fn clean_line(line: &str) -> &str {
    static PREFIX: OnceLock<Regex> = OnceLock::new();
    let prefix = PREFIX.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s>*#\-•{]*(?:(?:final\s+)?(?:answer|prediction|label|sentiment|verdict|rating|classification|output|response|category|assessment)\s*[:=\-]\s*)?",
        )
        .unwrap()
    });
    let start = prefix.find(line).map_or(0, |m| m.end());
    line[start..].trim().trim_end_matches('}').trim()
}

/// Drops list bullets, quote markers, braces and inline-code ticks around a
/// line. A hyphen counts as a bullet only when followed by whitespace, so
/// `-0.2` keeps its sign.
fn strip_markup(line: &str) -> &str {
    static BULLET: OnceLock<Regex> = OnceLock::new();
    let bullet = BULLET.get_or_init(|| Regex::new(r"^\s*(?:(?:[>#•]|[-*+]\s)\s*)*").unwrap());
    let start = bullet.find(line).map_or(0, |m| m.end());
    line[start..]
        .trim()
        .trim_matches(|c| matches!(c, '{' | '}' | '`' | '*'))
        .trim()
}

fn parse_lines<L: Label>(text: &str) -> Option<Verdict<L>> {
    let lines: Vec<&str> = text.lines().collect();
    let (label_idx, label) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| L::from_text(clean_line(l)).map(|lab| (i, lab)))?;

    let mut warnings = Vec::new();
    let mut confidence = None;
    let mut explanation = None;
    for raw in &lines[label_idx + 1..] {
        let line = strip_markup(raw);
        if line.is_empty() {
            continue;
        }
        if confidence.is_none() && explanation.is_none() {
            if let Some(c) = field_confidence(line).or_else(|| inline_confidence(line)) {
                confidence = c.resolve(&mut warnings);
                continue;
            }
        }
        if explanation.is_none() {
            explanation = strip_explanation_prefix(line);
        }
    }
    Some(Verdict {
        label,
        score: label.score(),
        confidence,
        explanation,
        status: ParseStatus::LineOriented,
        warnings,
    })
}

fn parse_keyword<L: Label>(text: &str) -> Option<Verdict<L>> {
    let m = L::keyword_regex().find(text)?;
    let label = L::from_text(m.as_str())?;
    let mut warnings = Vec::new();
    let confidence = inline_confidence(text).and_then(|c| c.resolve(&mut warnings));
    Some(Verdict {
        label,
        score: label.score(),
        confidence,
        explanation: None,
        status: ParseStatus::Keyword,
        warnings,
    })
}

/// One row of the verdict CSV. Unparseable responses keep their row with an
/// empty score so downstream filtering is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub prompt_id: String,
    pub score: Option<f64>,
    pub confidence: Option<f64>,
    pub parse_status: ParseStatus,
}

impl VerdictRow {
    pub fn from_result<L: Label>(prompt_id: &str, result: &Result<Verdict<L>>) -> Self {
        match result {
            Ok(v) => VerdictRow {
                prompt_id: prompt_id.to_string(),
                score: Some(v.score),
                confidence: v.confidence,
                parse_status: v.status,
            },
            Err(_) => VerdictRow {
                prompt_id: prompt_id.to_string(),
                score: None,
                confidence: None,
                parse_status: ParseStatus::Unparseable,
            },
        }
    }
}

pub fn write_verdict_csv<W: Write>(writer: W, rows: &[VerdictRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::io("writing verdict CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing verdict CSV", e))
}

pub fn read_verdict_csv<R: std::io::Read>(reader: R) -> Result<Vec<VerdictRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<Vec<VerdictRow>, _>>()
        .map_err(|e| Error::io("reading verdict CSV", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kodak_template_response() {
        let v = parse_headline_response(
            "{good}\n{1.0}\n{Loan to produce Covid-19 drug ingredients boosts prospects.}",
        )
        .unwrap();
        assert_eq!(v.label, HeadlineLabel::Good);
        assert_eq!(v.score, 1.0);
        assert_eq!(v.confidence, Some(1.0));
        assert_eq!(
            v.explanation.as_deref(),
            Some("Loan to produce Covid-19 drug ingredients boosts prospects.")
        );
        assert_eq!(v.status, ParseStatus::Template);
    }

    #[test]
    fn neutral_template() {
        let v = parse_headline_response("{neutral}\n{0.5}\n{…}").unwrap();
        assert_eq!(v.score, 0.0);
        assert_eq!(v.confidence, Some(0.5));
    }

    #[test]
    fn keyword_fallback() {
        let v = parse_headline_response("The answer is bad, confidence 0.8").unwrap();
        assert_eq!(v.score, -1.0);
        assert_eq!(v.confidence, Some(0.8));
        assert_eq!(v.status, ParseStatus::Keyword);
    }

    #[test]
    fn capex_template_responses() {
        let v = parse_capex_response(
            "{significantly_decrease}\n{0.8}\n{Due to COVID-19 pandemic and crude oil market deterioration.}",
        )
        .unwrap();
        assert_eq!(v.score, -1.0);
        assert_eq!(v.confidence, Some(0.8));

        let v = parse_capex_response("{no_change}\n{0.6}\n{…}").unwrap();
        assert_eq!(v.score, 0.0);

        let v = parse_capex_response("{slightly_increase}").unwrap();
        assert_eq!(v.score, 0.5);
        assert_eq!(v.confidence, None);
        assert!(v.warnings.is_empty());
    }

    #[test]
    fn percent_confidence_is_normalized() {
        let v = parse_headline_response("{Good}\n{80%}\n{x}").unwrap();
        assert_eq!(v.confidence, Some(0.8));
    }

    #[test]
    fn out_of_range_confidence_warns() {
        let v = parse_headline_response("{bad}\n{1.7}\n{x}").unwrap();
        assert_eq!(v.confidence, None);
        assert_eq!(
            v.warnings,
            vec![ParseWarning::ConfidenceOutOfRange {
                raw: "1.7".into(),
                value: 1.7
            }]
        );
    }

    #[test]
    fn template_label_is_whitespace_and_case_tolerant() {
        let v = parse_capex_response("{ Slightly Increase }\n{confidence: 0.7}").unwrap();
        assert_eq!(v.label, CapexLabel::SlightlyIncrease);
        assert_eq!(v.confidence, Some(0.7));
        assert_eq!(v.status, ParseStatus::Template);
    }

    #[test]
    fn first_label_wins() {
        let v = parse_headline_response("{bad}\n{good}\n{0.4}").unwrap();
        assert_eq!(v.label, HeadlineLabel::Bad);
        let v = parse_headline_response("good news, though some bad signs").unwrap();
        assert_eq!(v.label, HeadlineLabel::Good);
    }

    #[test]
    fn unparseable_carries_raw_text() {
        let err = parse_headline_response("I cannot answer that.").unwrap_err();
        assert_eq!(
            err,
            Error::UnparseableResponse {
                raw: "I cannot answer that.".into()
            }
        );
        assert!(parse_capex_response("").is_err());
    }

    #[test]
    fn label_bijection() {
        for &l in HeadlineLabel::ALL {
            assert_eq!(HeadlineLabel::from_score(l.score()), Some(l));
            assert_eq!(HeadlineLabel::from_text(l.canonical()), Some(l));
        }
        for &l in CapexLabel::ALL {
            assert_eq!(CapexLabel::from_score(l.score()), Some(l));
            assert_eq!(CapexLabel::from_text(l.canonical()), Some(l));
        }
    }

    #[test]
    fn verdict_csv_layout() {
        let rows = vec![
            VerdictRow::from_result("a", &parse_headline_response("{good}\n{0.9}")),
            VerdictRow::from_result("b", &parse_headline_response("???")),
        ];
        let mut buf = Vec::new();
        write_verdict_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "prompt_id,score,confidence,parse_status\na,1.0,0.9,template\nb,,,unparseable\n"
        );
        assert_eq!(read_verdict_csv(buf.as_slice()).unwrap(), rows);
    }
}
