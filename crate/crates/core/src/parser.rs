//! Parser and renderer for tagged evaluator responses.
//!
//! ```text
//! <think>
//! Proposed regions (xyxy): 1.[x1,y1,x2,y2];2.[x1,y1,x2,y2]
//! ...reasoning...
//! </think>
//! <answer>
//! Semantic Alignment score: 0.80
//! Aesthetic score: 0.70
//! Plausibility score: 0.90
//! Overall Impression score: 0.80
//! Misalignment Locations: none
//! Artifact Locations: 1.[12,40,96,150]
//! </answer>
//! ```
//!
//! Location lists in the answer block use the same enumerated grammar as the
//! proposed regions; an empty list is written `none`.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, ScoreVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Reasoning text with the proposed-region list cut out, trimmed.
    pub think_text: String,
    pub proposed_regions: Vec<BoundingBox>,
    pub scores: ScoreVector,
    pub misalignment_locations: Vec<BoundingBox>,
    pub artifact_locations: Vec<BoundingBox>,
    /// Repairs applied in lenient mode (clamped scores, defaulted lists).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Parses `1.[x1,y1,x2,y2];2.[x1,y1,x2,y2]`. Empty text or `none` is an empty list.
/// Indices must run 1, 2, 3, ... and every box must have positive area.
pub fn parse_region_list(text: &str) -> Result<Vec<BoundingBox>> {
    let text = text.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let segments: Vec<&str> = text.split(';').map(str::trim).collect();
    let n = segments.len();
    let mut boxes = Vec::with_capacity(n);
    for (i, seg) in segments.into_iter().enumerate() {
        if seg.is_empty() {
            if i + 1 == n {
                break; // trailing separator
            }
            return Err(parse_err(format!("empty region entry at position {}", i + 1)));
        }
        let (index, body) = seg
            .split_once('.')
            .ok_or_else(|| parse_err(format!("region `{seg}` lacks an `N.` index")))?;
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("region index `{}` is not an integer", index.trim())))?;
        let expected = boxes.len() + 1;
        if index != expected {
            return Err(parse_err(format!(
                "non-contiguous region index: expected {expected}, found {index}"
            )));
        }
        let inner = body
            .trim()
            .strip_prefix('[')
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| parse_err(format!("region {index}: malformed brackets in `{}`", body.trim())))?;
        let coords = inner
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("region {index}: `{}` is not a number", c.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if coords.len() != 4 {
            return Err(parse_err(format!(
                "region {index}: expected 4 coordinates, got {}",
                coords.len()
            )));
        }
        boxes.push(BoundingBox::new(coords[0], coords[1], coords[2], coords[3])?);
    }
    Ok(boxes)
}

pub fn render_region_list(boxes: &[BoundingBox]) -> String {
    if boxes.is_empty() {
        return "none".to_string();
    }
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let _ = write!(out, "{}.[{},{},{},{}]", i + 1, b.x1, b.y1, b.x2, b.y2);
    }
    out
}

struct Patterns {
    think: Regex,
    answer: Regex,
    regions_label: Regex,
    region_list: Regex,
    scores: [Regex; 4],
    misalignment: Regex,
    artifact: Regex,
    leading_number: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let line = |label: &str| Regex::new(&format!(r"(?im){label}[ \t]*:[ \t]*([^\r\n]*)")).unwrap();
        Patterns {
            think: Regex::new(r"(?is)<think>(.*?)</think>").unwrap(),
            answer: Regex::new(r"(?is)<answer>(.*?)(</answer>|\z)").unwrap(),
            regions_label: Regex::new(r"(?i)proposed\s+regions\s*\(\s*xyxy\s*\)\s*:").unwrap(),
            region_list: Regex::new(
                r"(?i)\A[ \t]*(?:none\b|\d+\s*\.\s*\[[^\[\]]*\](?:\s*;\s*\d+\s*\.\s*\[[^\[\]]*\])*(?:\s*;)?)",
            )
            .unwrap(),
            scores: [
                line(r"semantic\s+alignment\s+score"),
                line(r"aesthetics?\s+score"),
                line(r"plausibility\s+score"),
                line(r"overall(?:\s+impression)?\s+score"),
            ],
            misalignment: line(r"misalignment\s+locations?"),
            artifact: line(r"artifact\s+locations?"),
            leading_number: Regex::new(r"\A[+-]?(?:\d+(?:\.\d*)?|\.\d+)").unwrap(),
        }
    })
}

/// Splits the proposed-region list out of the reasoning text.
fn extract_regions(think: &str, mode: ParseMode) -> Result<(String, Vec<BoundingBox>)> {
    let p = patterns();
    let Some(label) = p.regions_label.find(think) else {
        return Ok((think.trim().to_string(), Vec::new()));
    };
    let after = &think[label.end()..];
    let (list, rest) = match p.region_list.find(after) {
        Some(m) => (m.as_str(), &after[m.end()..]),
        None if mode == ParseMode::Strict => {
            return Err(parse_err("proposed regions label is not followed by a region list"))
        }
        None => ("", after),
    };
    let regions = parse_region_list(list)?;
    let before = think[..label.start()].trim();
    let rest = rest.trim();
    let text = match (before.is_empty(), rest.is_empty()) {
        (true, _) => rest.to_string(),
        (false, true) => before.to_string(),
        (false, false) => format!("{before}\n{rest}"),
    };
    Ok((text, regions))
}

fn parse_score(raw: &str, name: &'static str, mode: ParseMode, warnings: &mut Vec<String>) -> Result<f64> {
    let raw = raw.trim();
    let value = match mode {
        ParseMode::Strict => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
        ParseMode::Lenient => patterns()
            .leading_number
            .find(raw)
            .and_then(|m| m.as_str().parse::<f64>().ok()),
    }
    .ok_or_else(|| parse_err(format!("{name} score `{raw}` is not a number")))?;
    if (0.0..=1.0).contains(&value) {
        return Ok(value);
    }
    match mode {
        ParseMode::Strict => Err(Error::ScoreOutOfRange { name, value }),
        ParseMode::Lenient => {
            let clamped = value.clamp(0.0, 1.0);
            warnings.push(format!("{name} score {value} clamped to {clamped}"));
            Ok(clamped)
        }
    }
}

pub fn parse_response(text: &str, mode: ParseMode) -> Result<ParsedResponse> {
    let p = patterns();
    let mut warnings = Vec::new();

    let answer = p
        .answer
        .captures(text)
        .ok_or_else(|| parse_err("missing <answer> block"))?;
    if mode == ParseMode::Strict && answer.get(2).map_or(true, |m| m.as_str().is_empty()) {
        return Err(parse_err("unterminated <answer> block"));
    }
    let answer_start = answer.get(0).unwrap().start();
    let answer_body = answer.get(1).unwrap().as_str();

    let think = match p.think.captures(text) {
        Some(c) => c.get(1).unwrap().as_str(),
        None if mode == ParseMode::Strict => return Err(parse_err("missing <think> block")),
        None => {
            // the look step may still be present in untagged prose before the answer
            let prefix = &text[..answer_start];
            if p.regions_label.is_match(prefix) {
                warnings.push("no <think> block; regions read from untagged text".to_string());
                prefix
            } else {
                ""
            }
        }
    };
    let (think_text, proposed_regions) = extract_regions(think, mode)?;

    let mut scores = [0.0; 4];
    for ((slot, re), name) in scores.iter_mut().zip(&p.scores).zip(ScoreVector::NAMES) {
        let raw = re
            .captures(answer_body)
            .ok_or_else(|| parse_err(format!("missing {name} score line")))?;
        *slot = parse_score(raw.get(1).unwrap().as_str(), name, mode, &mut warnings)?;
    }
    let scores = ScoreVector::new(scores[0], scores[1], scores[2], scores[3])?;

    let mut locations = |re: &Regex, name: &str| -> Result<Vec<BoundingBox>> {
        match re.captures(answer_body) {
            Some(c) => parse_region_list(c.get(1).unwrap().as_str()),
            None if mode == ParseMode::Strict => Err(parse_err(format!("missing {name} locations line"))),
            None => {
                warnings.push(format!("missing {name} locations; defaulted to none"));
                Ok(Vec::new())
            }
        }
    };
    let misalignment_locations = locations(&p.misalignment, "misalignment")?;
    let artifact_locations = locations(&p.artifact, "artifact")?;

    Ok(ParsedResponse {
        think_text,
        proposed_regions,
        scores,
        misalignment_locations,
        artifact_locations,
        warnings,
    })
}

/// Emits the canonical format; scores are written with two decimals.
pub fn render_response(r: &ParsedResponse) -> String {
    let mut out = String::from("<think>\n");
    let _ = writeln!(out, "Proposed regions (xyxy): {}", render_region_list(&r.proposed_regions));
    if !r.think_text.is_empty() {
        out.push_str(&r.think_text);
        out.push('\n');
    }
    out.push_str("</think>\n<answer>\n");
    let s = &r.scores;
    let _ = writeln!(out, "Semantic Alignment score: {:.2}", s.alignment);
    let _ = writeln!(out, "Aesthetic score: {:.2}", s.aesthetics);
    let _ = writeln!(out, "Plausibility score: {:.2}", s.plausibility);
    let _ = writeln!(out, "Overall Impression score: {:.2}", s.overall);
    let _ = writeln!(out, "Misalignment Locations: {}", render_region_list(&r.misalignment_locations));
    let _ = writeln!(out, "Artifact Locations: {}", render_region_list(&r.artifact_locations));
    out.push_str("</answer>");
    out
}
