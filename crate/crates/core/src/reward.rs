//! Hierarchical trajectory reward: accuracy, format, tool usage and ranked
//! sub-motion relevance, with tool and sub-motion terms gated on a correct
//! answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{FirstTurnTrace, SecondTurnTrace, ToolFlags, TraceError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("rank {rank} outside 1..={n}")]
    RankOutOfRange { n: usize, rank: usize },
}

/// Component magnitudes and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub c_fmt: f64,
    pub c_tool: f64,
    /// Feed only the binary accuracy reward into the advantage.
    pub binary_only: bool,
    pub use_tool: bool,
    pub use_sub: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c_fmt: 1.0,
            c_tool: 0.5,
            binary_only: false,
            use_tool: true,
            use_sub: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub r_tool: f64,
    pub r_sub: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// The scalar that enters advantage normalization.
    pub fn signal(&self, cfg: &RewardConfig) -> f64 {
        if cfg.binary_only {
            self.r_acc
        } else {
            self.total
        }
    }
}

pub fn accuracy_reward(answer: &str, gold: &str) -> f64 {
    if answer == gold {
        1.0
    } else {
        0.0
    }
}

pub fn format_reward(
    first: &Result<FirstTurnTrace, TraceError>,
    second: &Result<SecondTurnTrace, TraceError>,
    c_fmt: f64,
) -> f64 {
    if first.is_ok() && second.is_ok() {
        c_fmt
    } else {
        0.0
    }
}

/// Nonzero only when something was invoked and every invoked tool was
/// informative for the episode.
pub fn tool_reward(invoked: &ToolFlags, informative: &ToolFlags, c_tool: f64) -> f64 {
    if !invoked.is_empty() && invoked.is_subset_of(informative) {
        c_tool
    } else {
        0.0
    }
}

/// `w_k = n - k + 1`.
pub fn sub_motion_weight(n: usize, k: usize) -> Result<usize, RewardError> {
    if k == 0 || k > n {
        return Err(RewardError::RankOutOfRange { n, rank: k });
    }
    Ok(n - k + 1)
}

/// Weighted fraction of matched ranks, `sum_{k in matched} w_k / sum_k w_k`.
/// Duplicate ranks in `matched` count once.
pub fn sub_motion_reward(n: usize, matched: &[usize]) -> Result<f64, RewardError> {
    if n == 0 {
        return Err(RewardError::RankOutOfRange { n, rank: 0 });
    }
    let mut hit = vec![false; n];
    for &k in matched {
        sub_motion_weight(n, k)?;
        hit[k - 1] = true;
    }
    let numer: usize = hit
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(i, _)| n - i)
        .sum();
    let denom = n * (n + 1) / 2;
    Ok(numer as f64 / denom as f64)
}

/// `total = r_acc + r_format + 1[r_acc > 0] * (r_tool + r_sub)`.
pub fn total_reward(r_acc: f64, r_format: f64, r_tool: f64, r_sub: f64) -> RewardBreakdown {
    let gated = if r_acc > 0.0 { r_tool + r_sub } else { 0.0 };
    RewardBreakdown {
        r_acc,
        r_format,
        r_tool,
        r_sub,
        total: r_acc + r_format + gated,
    }
}

/// Everything the verifier needs to score one completed trajectory.
#[derive(Debug, Clone)]
pub struct Verdict<'a> {
    pub first: &'a Result<FirstTurnTrace, TraceError>,
    pub second: &'a Result<SecondTurnTrace, TraceError>,
    pub gold: &'a str,
    pub informative: ToolFlags,
    /// Ranks of listed sub-motions that belong to the predicted class.
    pub matched_ranks: &'a [usize],
}

pub fn score(v: &Verdict<'_>, cfg: &RewardConfig) -> RewardBreakdown {
    let r_format = format_reward(v.first, v.second, cfg.c_fmt);
    let (Ok(first), Ok(second)) = (v.first, v.second) else {
        return total_reward(0.0, r_format, 0.0, 0.0);
    };
    let r_acc = accuracy_reward(&second.answer, v.gold);
    let r_tool = if cfg.use_tool {
        tool_reward(&first.decisions, &v.informative, cfg.c_tool)
    } else {
        0.0
    };
    let r_sub = if cfg.use_sub {
        sub_motion_reward(second.submotions.len(), v.matched_ranks).unwrap_or(0.0)
    } else {
        0.0
    };
    total_reward(r_acc, r_format, r_tool, r_sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{canonical_label, ToolKind};

    #[test]
    fn accuracy() {
        assert_eq!(accuracy_reward("shoot ball", "shoot ball"), 1.0);
        assert_eq!(accuracy_reward("shoot ball", "kick ball"), 0.0);
        assert_eq!(accuracy_reward(&canonical_label("Turn"), "turn"), 1.0);
    }

    #[test]
    fn format() {
        let ok1 = Ok(FirstTurnTrace {
            think_text: "t".into(),
            decisions: ToolFlags::NONE,
        });
        let ok2 = Ok(SecondTurnTrace {
            think_text: String::new(),
            submotions: vec![],
            candidates: vec![],
            answer: "a".into(),
        });
        let bad1: Result<FirstTurnTrace, _> = Err(TraceError::MalformedFlag {
            tag: "human".into(),
            raw: "maybe".into(),
        });
        let bad2: Result<SecondTurnTrace, _> = Err(TraceError::MissingBlock("answer".into()));
        assert_eq!(format_reward(&ok1, &ok2, 1.0), 1.0);
        assert_eq!(format_reward(&ok1, &bad2, 1.0), 0.0);
        assert_eq!(format_reward(&bad1, &ok2, 1.0), 0.0);
    }

    #[test]
    fn tool_gate() {
        let pose = ToolFlags::from_tools(&[ToolKind::PoseEstimation]);
        let pose_det = ToolFlags::from_tools(&[ToolKind::PoseEstimation, ToolKind::HumanDetection]);
        let pose_desc = ToolFlags::from_tools(&[ToolKind::PoseEstimation, ToolKind::VideoDescription]);
        assert_eq!(tool_reward(&ToolFlags::NONE, &pose, 0.5), 0.0);
        assert_eq!(tool_reward(&pose, &pose_det, 0.5), 0.5);
        assert_eq!(tool_reward(&pose_desc, &pose, 0.5), 0.0);
    }

    #[test]
    fn weights() {
        assert_eq!(sub_motion_weight(4, 1), Ok(4));
        assert_eq!(sub_motion_weight(4, 4), Ok(1));
        assert_eq!(sub_motion_weight(1, 1), Ok(1));
        assert!(sub_motion_weight(4, 5).is_err());
        assert!(sub_motion_weight(4, 0).is_err());
    }

    #[test]
    fn sub_reward_values() {
        assert_eq!(sub_motion_reward(3, &[1, 2, 3]), Ok(1.0));
        assert_eq!(sub_motion_reward(4, &[]), Ok(0.0));
        assert_eq!(sub_motion_reward(4, &[1, 3]), Ok(0.6));
        assert!(sub_motion_reward(4, &[5]).is_err());
    }

    #[test]
    fn totals() {
        assert!((total_reward(1.0, 1.0, 0.5, 0.6).total - 3.1).abs() < 1e-12);
        assert_eq!(total_reward(0.0, 1.0, 0.5, 0.9).total, 1.0);
        assert_eq!(total_reward(0.0, 0.0, 0.5, 1.0).total, 0.0);
    }
}
