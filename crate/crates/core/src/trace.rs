//! Structured reasoning traces: the two-turn tag format emitted by the agent.
//!
//! First turn:
//!
//! ```text
//! <think>...</think>
//! <action>
//! <human>yes</human>
//! <pose>no</pose>
//! <action>yes</action>
//! <video>no</video>
//! </action>
//! ```
//!
//! The first `<action>` opener after `</think>` opens the decision block; an
//! `<action>` tag nested one level inside it is the explanation-tool flag.
//!
//! Second turn:
//!
//! ```text
//! <think>step-by-step reasoning process:
//! [1] Observed body parts and movement characteristics:
//!    - right arm: raise
//! [2] Matching candidate actions:
//!    - swing bat: Matches right arm raise
//! [3] Pattern comparison for each candidate:
//!    - swing bat: 9
//! </think>
//! <answer>swing bat</answer>
//! ```

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the four simulated tools, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    HumanDetection,
    PoseEstimation,
    ActionExplanation,
    VideoDescription,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::HumanDetection,
        ToolKind::PoseEstimation,
        ToolKind::ActionExplanation,
        ToolKind::VideoDescription,
    ];

    pub fn index(self) -> usize {
        match self {
            ToolKind::HumanDetection => 0,
            ToolKind::PoseEstimation => 1,
            ToolKind::ActionExplanation => 2,
            ToolKind::VideoDescription => 3,
        }
    }

    /// Tag used inside the first-turn `<action>` block.
    pub fn tag(self) -> &'static str {
        match self {
            ToolKind::HumanDetection => "human",
            ToolKind::PoseEstimation => "pose",
            ToolKind::ActionExplanation => "action",
            ToolKind::VideoDescription => "video",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ToolKind> {
        ToolKind::ALL.into_iter().find(|t| t.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::HumanDetection => "detection",
            ToolKind::PoseEstimation => "pose",
            ToolKind::ActionExplanation => "explanation",
            ToolKind::VideoDescription => "description",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A total map `ToolKind -> bool`. Always holds exactly the four keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ToolFlags([bool; 4]);

impl ToolFlags {
    pub const NONE: ToolFlags = ToolFlags([false; 4]);
    pub const ALL: ToolFlags = ToolFlags([true; 4]);

    pub fn from_array(flags: [bool; 4]) -> Self {
        ToolFlags(flags)
    }

    pub fn from_tools(tools: &[ToolKind]) -> Self {
        let mut flags = ToolFlags::NONE;
        for &t in tools {
            flags.set(t, true);
        }
        flags
    }

    pub fn get(&self, tool: ToolKind) -> bool {
        self.0[tool.index()]
    }

    pub fn set(&mut self, tool: ToolKind, on: bool) {
        self.0[tool.index()] = on;
    }

    pub fn as_array(&self) -> [bool; 4] {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &ToolFlags) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(&a, &b)| !a || b)
    }

    /// Tools set to `true`, in canonical order.
    pub fn tools(&self) -> impl Iterator<Item = ToolKind> + '_ {
        ToolKind::ALL.into_iter().filter(|t| self.get(*t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstTurnTrace {
    pub think_text: String,
    pub decisions: ToolFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubMotionMention {
    pub body_part: String,
    pub descriptor: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondTurnTrace {
    /// Free-form body of the `[2]` candidate-matching section.
    pub think_text: String,
    pub submotions: Vec<SubMotionMention>,
    pub candidates: Vec<CandidateScore>,
    pub answer: String,
}

pub const MAX_SCORE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("missing block `{0}`")]
    MissingBlock(String),
    #[error("malformed flag <{tag}>: {raw:?} is not yes/no")]
    MalformedFlag { tag: String, raw: String },
    #[error("duplicate tag `{0}`")]
    DuplicateTag(String),
    #[error("unexpected content: {0:?}")]
    UnexpectedContent(String),
    #[error("malformed entry in {section}: {line:?}")]
    MalformedEntry { section: String, line: String },
    #[error("section {0} has no entries")]
    EmptyList(String),
    #[error("candidate {candidate:?} has non-numeric score {raw:?}")]
    MalformedScore { candidate: String, raw: String },
    #[error("candidate {candidate:?} score {score} outside [0, 10]")]
    ScoreOutOfRange { candidate: String, score: f64 },
    #[error("empty answer")]
    EmptyAnswer,
}

/// Answer canonicalization: trim, then lowercase.
pub fn canonical_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ACTION_OPEN: &str = "<action>";
const ACTION_CLOSE: &str = "</action>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Splits `text` into (think inner, text after `</think>`).
fn split_think(text: &str) -> Result<(&str, &str), TraceError> {
    let open = text
        .find(THINK_OPEN)
        .ok_or_else(|| TraceError::MissingBlock("think".into()))?;
    let body_start = open + THINK_OPEN.len();
    let close = text[body_start..]
        .find(THINK_CLOSE)
        .map(|i| body_start + i)
        .ok_or_else(|| TraceError::MissingBlock("/think".into()))?;
    let inner = &text[body_start..close];
    let rest = &text[close + THINK_CLOSE.len()..];
    if inner.contains(THINK_OPEN) || rest.contains(THINK_OPEN) {
        return Err(TraceError::DuplicateTag("think".into()));
    }
    Ok((inner, rest))
}

fn parse_flag(tag: &str, raw: &str) -> Result<bool, TraceError> {
    match raw.trim().to_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(TraceError::MalformedFlag {
            tag: tag.to_string(),
            raw: raw.trim().to_string(),
        }),
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(32).collect()
}

pub fn parse_first_turn(text: &str) -> Result<FirstTurnTrace, TraceError> {
    let (inner, rest) = split_think(text)?;
    let think_text = inner.trim();
    if think_text.is_empty() {
        return Err(TraceError::MissingBlock("think".into()));
    }

    let open = rest
        .find(ACTION_OPEN)
        .ok_or_else(|| TraceError::MissingBlock("action".into()))?;
    if !rest[..open].trim().is_empty() {
        return Err(TraceError::UnexpectedContent(snippet(rest[..open].trim())));
    }

    let mut seen = [None::<bool>; 4];
    let mut cursor = &rest[open + ACTION_OPEN.len()..];
    loop {
        cursor = cursor.trim_start();
        if cursor.is_empty() {
            return Err(TraceError::MissingBlock("/action".into()));
        }
        if let Some(after) = cursor.strip_prefix(ACTION_CLOSE) {
            cursor = after;
            break;
        }
        let Some(tag_body) = cursor.strip_prefix('<') else {
            return Err(TraceError::UnexpectedContent(snippet(cursor)));
        };
        let Some(end) = tag_body.find('>') else {
            return Err(TraceError::UnexpectedContent(snippet(cursor)));
        };
        let tag = &tag_body[..end];
        let Some(tool) = ToolKind::from_tag(tag) else {
            return Err(TraceError::UnexpectedContent(snippet(cursor)));
        };
        let value_start = &tag_body[end + 1..];
        let closer = format!("</{tag}>");
        let Some(close) = value_start.find(&closer) else {
            return Err(TraceError::MissingBlock(format!("/{tag}")));
        };
        let raw = &value_start[..close];
        if seen[tool.index()].is_some() {
            return Err(TraceError::DuplicateTag(tag.to_string()));
        }
        seen[tool.index()] = Some(parse_flag(tag, raw)?);
        cursor = &value_start[close + closer.len()..];
    }

    if cursor.contains(ACTION_OPEN) {
        return Err(TraceError::DuplicateTag("action".into()));
    }

    let mut flags = ToolFlags::NONE;
    for tool in ToolKind::ALL {
        match seen[tool.index()] {
            Some(v) => flags.set(tool, v),
            None => return Err(TraceError::MissingBlock(tool.tag().into())),
        }
    }
    Ok(FirstTurnTrace {
        think_text: think_text.to_string(),
        decisions: flags,
    })
}

fn section_index(line: &str) -> Option<u32> {
    let t = line.trim_start();
    let rest = t.strip_prefix('[')?;
    let close = rest.find(']')?;
    rest[..close].parse().ok()
}

fn bullet(line: &str) -> Option<&str> {
    line.trim().strip_prefix('-').map(str::trim)
}

pub fn parse_second_turn(text: &str) -> Result<SecondTurnTrace, TraceError> {
    let (inner, rest) = split_think(text)?;

    let open = rest
        .find(ANSWER_OPEN)
        .ok_or_else(|| TraceError::MissingBlock("answer".into()))?;
    let body = &rest[open + ANSWER_OPEN.len()..];
    let close = body
        .find(ANSWER_CLOSE)
        .ok_or_else(|| TraceError::MissingBlock("/answer".into()))?;
    if body[close..].contains(ANSWER_OPEN) {
        return Err(TraceError::DuplicateTag("answer".into()));
    }
    let answer = canonical_label(&body[..close]);

    let mut sections: [Option<Vec<&str>>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in inner.lines() {
        if let Some(idx) = section_index(line) {
            current = match idx {
                1..=3 => {
                    let slot = (idx - 1) as usize;
                    if sections[slot].is_some() {
                        return Err(TraceError::DuplicateTag(format!("[{idx}]")));
                    }
                    sections[slot] = Some(Vec::new());
                    Some(slot)
                }
                _ => None,
            };
            continue;
        }
        if let Some(slot) = current {
            if let Some(lines) = sections[slot].as_mut() {
                lines.push(line);
            }
        }
    }
    let [motions, matching, comparison] = sections;
    let motions = motions.ok_or_else(|| TraceError::MissingBlock("[1]".into()))?;
    let comparison = comparison.ok_or_else(|| TraceError::MissingBlock("[3]".into()))?;

    let mut submotions = Vec::new();
    for line in motions {
        let Some(entry) = bullet(line) else { continue };
        let malformed = || TraceError::MalformedEntry {
            section: "[1]".into(),
            line: line.trim().to_string(),
        };
        let (part, desc) = entry.split_once(':').ok_or_else(malformed)?;
        let (part, desc) = (part.trim(), desc.trim());
        if part.is_empty() || desc.is_empty() {
            return Err(malformed());
        }
        submotions.push(SubMotionMention {
            body_part: part.to_string(),
            descriptor: desc.to_string(),
            rank: submotions.len() + 1,
        });
    }
    if submotions.is_empty() {
        return Err(TraceError::EmptyList("[1]".into()));
    }

    let mut candidates = Vec::new();
    for line in comparison {
        let Some(entry) = bullet(line) else { continue };
        let malformed = || TraceError::MalformedEntry {
            section: "[3]".into(),
            line: line.trim().to_string(),
        };
        let (label, rest) = entry.split_once(':').ok_or_else(malformed)?;
        let label = canonical_label(label);
        if label.is_empty() {
            return Err(malformed());
        }
        let rest = rest.trim();
        let raw_score = rest.split_once(" - ").map_or(rest, |(s, _)| s).trim();
        let score: f64 = match raw_score.parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                return Err(TraceError::MalformedScore {
                    candidate: label,
                    raw: raw_score.to_string(),
                })
            }
        };
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(TraceError::ScoreOutOfRange {
                candidate: label,
                score,
            });
        }
        candidates.push(CandidateScore { label, score });
    }
    if candidates.is_empty() {
        return Err(TraceError::EmptyList("[3]".into()));
    }

    if answer.is_empty() {
        return Err(TraceError::EmptyAnswer);
    }

    let think_text = matching
        .map(|lines| lines.join("\n").trim_end().trim_start_matches('\n').to_string())
        .unwrap_or_default();

    Ok(SecondTurnTrace {
        think_text,
        submotions,
        candidates,
        answer,
    })
}

pub fn serialize_first_turn(t: &FirstTurnTrace) -> String {
    let yn = |b: bool| if b { "yes" } else { "no" };
    let mut out = String::with_capacity(t.think_text.len() + 128);
    let _ = write!(out, "{THINK_OPEN}{}\n{THINK_CLOSE}\n{ACTION_OPEN}\n", t.think_text);
    for tool in ToolKind::ALL {
        let tag = tool.tag();
        let _ = writeln!(out, "<{tag}>{}</{tag}>", yn(t.decisions.get(tool)));
    }
    out.push_str(ACTION_CLOSE);
    out.push('\n');
    out
}

pub fn serialize_second_turn(t: &SecondTurnTrace) -> String {
    let mut out = String::with_capacity(256);
    out.push_str(THINK_OPEN);
    out.push_str("step-by-step reasoning process:\n");
    out.push_str("[1] Observed body parts and movement characteristics:\n");
    for m in &t.submotions {
        let _ = writeln!(out, "   - {}: {}", m.body_part, m.descriptor);
    }
    out.push_str("[2] Matching candidate actions:\n");
    if !t.think_text.is_empty() {
        out.push_str(&t.think_text);
        out.push('\n');
    }
    out.push_str("[3] Pattern comparison for each candidate:\n");
    for c in &t.candidates {
        let _ = writeln!(out, "   - {}: {}", c.label, c.score);
    }
    let _ = write!(out, "{THINK_CLOSE}\n{ANSWER_OPEN}{}{ANSWER_CLOSE}\n", t.answer);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second(sub: &[(&str, &str)], cands: &[(&str, f64)], answer: &str) -> String {
        serialize_second_turn(&SecondTurnTrace {
            think_text: "   - placeholder: Matches nothing".into(),
            submotions: sub
                .iter()
                .enumerate()
                .map(|(i, (b, d))| SubMotionMention {
                    body_part: b.to_string(),
                    descriptor: d.to_string(),
                    rank: i + 1,
                })
                .collect(),
            candidates: cands
                .iter()
                .map(|(l, s)| CandidateScore {
                    label: l.to_string(),
                    score: *s,
                })
                .collect(),
            answer: answer.into(),
        })
    }

    #[test]
    fn first_turn_nested_action_flag() {
        let t = parse_first_turn(
            "<think>ball visible</think><action><human>yes</human> <pose>no</pose>\n<action>yes</action> <video>no</video></action>",
        )
        .unwrap();
        assert_eq!(t.think_text, "ball visible");
        assert!(t.decisions.get(ToolKind::HumanDetection));
        assert!(!t.decisions.get(ToolKind::PoseEstimation));
        assert!(t.decisions.get(ToolKind::ActionExplanation));
        assert!(!t.decisions.get(ToolKind::VideoDescription));
    }

    #[test]
    fn first_turn_all_no() {
        let t = parse_first_turn(
            "<think>t</think><action><human>no</human><pose>no</pose><action>no</action><video>no</video></action>",
        )
        .unwrap();
        assert_eq!(t.decisions, ToolFlags::NONE);
    }

    #[test]
    fn first_turn_bad_flag() {
        let err = parse_first_turn("<think>t</think><action><human>maybe</human>…</action>").unwrap_err();
        assert_eq!(
            err,
            TraceError::MalformedFlag {
                tag: "human".into(),
                raw: "maybe".into()
            }
        );
    }

    #[test]
    fn first_turn_case_and_whitespace() {
        let t = parse_first_turn(
            "<think>x</think>\n<action>\n<human> YES </human><pose>No</pose><action>nO</action><video>\tyes\n</video>\n</action>",
        )
        .unwrap();
        assert_eq!(t.decisions, ToolFlags::from_array([true, false, false, true]));
    }

    #[test]
    fn first_turn_errors() {
        let dup = "<think>t</think><action><human>no</human><human>no</human><pose>no</pose><action>no</action><video>no</video></action>";
        assert_eq!(parse_first_turn(dup).unwrap_err(), TraceError::DuplicateTag("human".into()));
        let missing = "<think>t</think><action><human>no</human><pose>no</pose><action>no</action></action>";
        assert_eq!(parse_first_turn(missing).unwrap_err(), TraceError::MissingBlock("video".into()));
        assert_eq!(parse_first_turn("no tags").unwrap_err(), TraceError::MissingBlock("think".into()));
        assert_eq!(
            parse_first_turn("<think>t</think>").unwrap_err(),
            TraceError::MissingBlock("action".into())
        );
        assert_eq!(
            parse_first_turn("<think>  </think><action></action>").unwrap_err(),
            TraceError::MissingBlock("think".into())
        );
        let unclosed = "<think>t</think><action><human>no</human>";
        assert_eq!(parse_first_turn(unclosed).unwrap_err(), TraceError::MissingBlock("/action".into()));
    }

    #[test]
    fn first_turn_serializes_one_tag_per_line() {
        let t = FirstTurnTrace {
            think_text: "reasoning".into(),
            decisions: ToolFlags::ALL,
        };
        let s = serialize_first_turn(&t);
        for tag in ["human", "pose", "action", "video"] {
            assert!(s.contains(&format!("\n<{tag}>yes</{tag}>\n")), "{s}");
        }
        assert_eq!(parse_first_turn(&s).unwrap(), t);
    }

    #[test]
    fn second_turn_sections() {
        let text = second(
            &[("left arm", "raise"), ("torso", "twist"), ("right foot", "kick")],
            &[("run", 4.0), ("shoot", 9.0)],
            "shoot",
        );
        let t = parse_second_turn(&text).unwrap();
        assert_eq!(t.submotions.len(), 3);
        assert_eq!(t.submotions.iter().map(|m| m.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(
            t.candidates,
            vec![
                CandidateScore { label: "run".into(), score: 4.0 },
                CandidateScore { label: "shoot".into(), score: 9.0 }
            ]
        );
        assert_eq!(t.answer, "shoot");
    }

    #[test]
    fn second_turn_score_out_of_range() {
        let text = second(&[("leg", "bend")], &[("jump", 11.0)], "jump");
        assert!(matches!(
            parse_second_turn(&text).unwrap_err(),
            TraceError::ScoreOutOfRange { score, .. } if score == 11.0
        ));
    }

    #[test]
    fn second_turn_answer_canonicalized() {
        let text = "<think>\n[1] parts:\n - leg: kick\n[3] scores:\n - kick ball: 7 - good match\n</think><answer>  Kick Ball </answer>";
        let t = parse_second_turn(text).unwrap();
        assert_eq!(t.answer, "kick ball");
        assert_eq!(t.candidates[0].score, 7.0);
        assert_eq!(t.think_text, "");
    }

    #[test]
    fn second_turn_errors() {
        let no_answer = "<think>\n[1] a:\n - leg: kick\n[3] b:\n - x: 1\n</think>";
        assert_eq!(parse_second_turn(no_answer).unwrap_err(), TraceError::MissingBlock("answer".into()));
        let empty = "<think>\n[1] a:\n - leg: kick\n[3] b:\n - x: 1\n</think><answer>  </answer>";
        assert_eq!(parse_second_turn(empty).unwrap_err(), TraceError::EmptyAnswer);
        let no_list = "<think>\n[3] b:\n - x: 1\n</think><answer>x</answer>";
        assert_eq!(parse_second_turn(no_list).unwrap_err(), TraceError::MissingBlock("[1]".into()));
        let bad = "<think>\n[1] a:\n - leg kick\n[3] b:\n - x: 1\n</think><answer>x</answer>";
        assert!(matches!(parse_second_turn(bad).unwrap_err(), TraceError::MalformedEntry { .. }));
        let nan = "<think>\n[1] a:\n - leg: kick\n[3] b:\n - x: NaN\n</think><answer>x</answer>";
        assert!(matches!(parse_second_turn(nan).unwrap_err(), TraceError::MalformedScore { .. }));
    }

    #[test]
    fn ranks_are_renumbered() {
        let t = SecondTurnTrace {
            think_text: String::new(),
            submotions: vec![SubMotionMention {
                body_part: "head".into(),
                descriptor: "nod".into(),
                rank: 7,
            }],
            candidates: vec![CandidateScore { label: "nod".into(), score: 10.0 }],
            answer: "nod".into(),
        };
        let s = serialize_second_turn(&t);
        assert_eq!(s.matches("   - head: nod").count(), 1);
        assert_eq!(parse_second_turn(&s).unwrap().submotions[0].rank, 1);
    }

    #[test]
    fn tool_flags_subset() {
        let a = ToolFlags::from_tools(&[ToolKind::PoseEstimation]);
        let b = ToolFlags::from_tools(&[ToolKind::PoseEstimation, ToolKind::HumanDetection]);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        assert!(ToolFlags::NONE.is_subset_of(&a));
        assert_eq!(b.tools().collect::<Vec<_>>(), vec![ToolKind::HumanDetection, ToolKind::PoseEstimation]);
    }
}
