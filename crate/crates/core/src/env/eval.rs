//! Top-1 evaluation under base-to-novel splits and across paired taxonomies.

use serde::{Deserialize, Serialize};

use super::episode::{sample_episode, EnvConfig};
use super::protocol::run_episode;
use super::taxonomy::{ClassId, Split, Taxonomy};
use super::EnvError;
use crate::policy::{Mode, PolicyParams};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    Base,
    Novel,
    All,
}

impl std::str::FromStr for SplitSel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(SplitSel::Base),
            "novel" => Ok(SplitSel::Novel),
            "all" => Ok(SplitSel::All),
            other => Err(format!("unknown split {other:?} (base|novel|all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub split: Split,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: SplitSel,
    pub episodes: usize,
    pub accuracy: f64,
    pub base_accuracy: Option<f64>,
    pub novel_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub per_class: Vec<ClassAccuracy>,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

struct Tally {
    correct: Vec<usize>,
    total: Vec<usize>,
}

fn run_split(
    policy: &PolicyParams,
    tax: &Taxonomy,
    cfg: &EnvConfig,
    split: Split,
    episodes: usize,
    seed: u64,
    mode: Mode,
    tally: &mut Tally,
) -> Result<(usize, usize), EnvError> {
    let pool: Vec<ClassId> = tax.split_classes(split);
    if pool.is_empty() {
        return Err(EnvError::EmptySplit);
    }
    let lane = match split {
        Split::Base => 0,
        Split::Novel => 1,
    };
    let mut correct = 0;
    for i in 0..episodes as u64 {
        let mut rng = rng::stream(seed, Purpose::EvalEpisode, &[lane, i]);
        let ep = sample_episode(tax, &pool, cfg, i, &mut rng);
        let r = run_episode(policy, &ep, tax, cfg, mode, &mut rng)?;
        let hit = r.answer() == ep.gold;
        correct += usize::from(hit);
        tally.correct[ep.gold] += usize::from(hit);
        tally.total[ep.gold] += 1;
    }
    Ok((correct, episodes))
}

/// Top-1 accuracy with gold classes drawn from `split`; candidates are
/// retrieved from the whole label space. `All` evaluates `episodes` base and
/// `episodes` novel episodes and reports their harmonic mean.
pub fn evaluate_with_mode(
    policy: &PolicyParams,
    tax: &Taxonomy,
    cfg: &EnvConfig,
    split: SplitSel,
    episodes: usize,
    seed: u64,
    mode: Mode,
) -> Result<EvalReport, EnvError> {
    let mut tally = Tally {
        correct: vec![0; tax.len()],
        total: vec![0; tax.len()],
    };
    let frac = |(c, n): (usize, usize)| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let (accuracy, base, novel, hm) = match split {
        SplitSel::Base => {
            let r = run_split(policy, tax, cfg, Split::Base, episodes, seed, mode, &mut tally)?;
            (frac(r), Some(frac(r)), None, None)
        }
        SplitSel::Novel => {
            let r = run_split(policy, tax, cfg, Split::Novel, episodes, seed, mode, &mut tally)?;
            (frac(r), None, Some(frac(r)), None)
        }
        SplitSel::All => {
            let b = run_split(policy, tax, cfg, Split::Base, episodes, seed, mode, &mut tally)?;
            let n = run_split(policy, tax, cfg, Split::Novel, episodes, seed, mode, &mut tally)?;
            let (ba, na) = (frac(b), frac(n));
            (frac((b.0 + n.0, b.1 + n.1)), Some(ba), Some(na), Some(harmonic_mean(ba, na)))
        }
    };
    let per_class = (0..tax.len())
        .filter(|&c| tally.total[c] > 0)
        .map(|c| ClassAccuracy {
            label: tax.class(c).label.clone(),
            split: tax.split_of(c),
            correct: tally.correct[c],
            total: tally.total[c],
        })
        .collect();
    Ok(EvalReport {
        split,
        episodes: match split {
            SplitSel::All => 2 * episodes,
            _ => episodes,
        },
        accuracy,
        base_accuracy: base,
        novel_accuracy: novel,
        harmonic_mean: hm,
        per_class,
    })
}

/// Deterministic (argmax) evaluation.
pub fn evaluate(
    policy: &PolicyParams,
    tax: &Taxonomy,
    cfg: &EnvConfig,
    split: SplitSel,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EnvError> {
    evaluate_with_mode(policy, tax, cfg, split, episodes, seed, Mode::Argmax)
}

/// Evaluates a policy trained on `source` against `target`'s label space.
pub fn evaluate_cross(
    policy: &PolicyParams,
    source: &Taxonomy,
    target: &Taxonomy,
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EnvError> {
    for t in target.used_tokens() {
        let s = target.token(t);
        if source.lookup_token(&s.body_part, &s.movement).is_none() {
            return Err(EnvError::VocabularyMismatch(s.to_string()));
        }
    }
    evaluate(policy, target, cfg, SplitSel::All, episodes, seed)
}
