//! The two-stage episode protocol: tool selection, context integration,
//! sub-motion ranking, candidate retrieval and scoring.

use rand::Rng;

use super::episode::{apply_tools, rank_by_overlap, AugmentedContext, EnvConfig, Episode};
use super::taxonomy::{ClassId, Taxonomy, TokenId};
use crate::policy::{
    answer_logprob_and_sample, answer_probabilities, rank_submotions, stage1_logprob_and_sample, Bucket,
    HeadActions, HeadLogProbs, Mode, PolicyError, PolicyParams, MATCH_DIM, RANK_DIM,
};
use crate::reward::{self, RewardBreakdown, RewardConfig, Verdict};
use crate::trace::{
    parse_first_turn, parse_second_turn, serialize_first_turn, serialize_second_turn, CandidateScore,
    FirstTurnTrace, SecondTurnTrace, SubMotionMention, ToolFlags,
};

/// One completed pass through the protocol.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub episode_id: u64,
    pub first: FirstTurnTrace,
    pub second: SecondTurnTrace,
    pub first_text: String,
    pub second_text: String,
    pub context: AugmentedContext,
    pub candidates: Vec<ClassId>,
    pub listed: Vec<TokenId>,
    pub actions: HeadActions,
    pub logp: HeadLogProbs,
}

impl Rollout {
    pub fn answer(&self) -> ClassId {
        self.candidates[self.actions.answer]
    }
}

/// Retrieval of 2–3 candidates: the classes with highest overlap with the
/// context, ties broken by label. The third is kept only if it overlaps.
pub fn candidates(tax: &Taxonomy, ctx: &AugmentedContext) -> Vec<ClassId> {
    let ranked = rank_by_overlap(tax, &ctx.tokens);
    let take = if ranked.len() >= 3 && ranked[2].1 > 0.0 { 3 } else { 2 };
    ranked.iter().take(take).map(|(c, _)| *c).collect()
}

pub fn rank_features(tax: &Taxonomy, ctx: &AugmentedContext, candidates: &[ClassId]) -> Vec<[f64; RANK_DIM]> {
    ctx.tokens
        .iter()
        .map(|&t| {
            let restored = f64::from(u8::from(ctx.restored.contains(&t)));
            let earliness = ctx
                .temporal_order
                .as_ref()
                .and_then(|order| {
                    order
                        .iter()
                        .position(|x| *x == t)
                        .map(|p| 1.0 - p as f64 / order.len() as f64)
                })
                .unwrap_or(0.0);
            let support = candidates.iter().filter(|&&c| tax.class_contains(c, t)).count() as f64
                / candidates.len().max(1) as f64;
            let in_top = candidates
                .first()
                .map_or(0.0, |&c| f64::from(u8::from(tax.class_contains(c, t))));
            [restored, earliness, support, in_top]
        })
        .collect()
}

/// Rank-weighted agreement between a listing and one class definition.
fn alignment(tax: &Taxonomy, listed: &[TokenId], class: ClassId) -> f64 {
    let n = listed.len();
    if n == 0 {
        return 0.0;
    }
    let hit: usize = listed
        .iter()
        .enumerate()
        .filter(|(_, t)| tax.class_contains(class, **t))
        .map(|(k, _)| n - k)
        .sum();
    hit as f64 / (n * (n + 1) / 2) as f64
}

pub fn match_features(
    tax: &Taxonomy,
    ctx: &AugmentedContext,
    candidates: &[ClassId],
    listed: &[TokenId],
) -> Vec<[f64; MATCH_DIM]> {
    candidates
        .iter()
        .map(|&c| {
            let size = tax.class(c).submotions.len() as f64;
            let overlap = ctx.tokens.iter().filter(|t| tax.class_contains(c, **t)).count() as f64 / size;
            let top1 = listed
                .first()
                .map_or(0.0, |t| f64::from(u8::from(tax.class_contains(c, *t))));
            let align = if ctx.definitions { alignment(tax, listed, c) } else { 0.0 };
            [overlap, top1, align]
        })
        .collect()
}

pub fn bucket_for(tax: &Taxonomy, ctx: &AugmentedContext) -> Bucket {
    Bucket::from_counts(ctx.observations.len(), tax.class(0).submotions.len())
}

pub(crate) fn first_turn_text(bucket: Bucket, observed: usize) -> String {
    let density = match bucket {
        Bucket::Low => "sparse",
        Bucket::Mid => "moderate",
        Bucket::High => "dense",
    };
    format!(
        "step-by-step reasoning process:\n\
         [1] Video content analysis: {observed} motion cues observed, evidence is {density}\n\
         [2] Pose estimation evaluation: keypoints can recover missing motion cues\n\
         [3] Person detection evaluation: localization can separate background motion\n\
         [4] Noun explanation evaluation: definitions can separate similar actions\n\
         [5] Final tool selection reasoning: decided per tool for {density} evidence"
    )
}

pub(crate) fn matching_text(tax: &Taxonomy, candidates: &[ClassId], listed: &[TokenId]) -> String {
    candidates
        .iter()
        .map(|&c| {
            let k = listed.iter().filter(|t| tax.class_contains(c, **t)).count();
            format!("   - {}: Matches {k} of {} listed sub-motions", tax.class(c).label, listed.len())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn mention(tax: &Taxonomy, t: TokenId, rank: usize) -> SubMotionMention {
    let s = tax.token(t);
    SubMotionMention {
        body_part: s.body_part.clone(),
        descriptor: s.movement.clone(),
        rank,
    }
}

/// Policy acts on one episode: Stage 1 picks tools, the environment integrates
/// their outputs, Stage 2 ranks sub-motions and answers among the retrieved
/// candidates. Both turns are serialized to text.
pub fn run_episode<R: Rng>(
    params: &PolicyParams,
    episode: &Episode,
    tax: &Taxonomy,
    cfg: &EnvConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Rollout, PolicyError> {
    let bucket = Bucket::from_counts(episode.observations.len(), tax.class(0).submotions.len());
    let (tools, lp_tools) = stage1_logprob_and_sample(params, bucket, mode, rng);
    let first = FirstTurnTrace {
        think_text: first_turn_text(bucket, episode.observations.len()),
        decisions: tools,
    };

    let context = apply_tools(tax, episode, tools, &cfg.fidelity, rng);
    let cands = candidates(tax, &context);
    let rf = rank_features(tax, &context, &cands);
    let (ordering, lp_rank) = rank_submotions(params, &rf, mode, rng)?;
    let listed: Vec<TokenId> = ordering.iter().map(|&i| context.tokens[i]).collect();
    let mf = match_features(tax, &context, &cands, &listed);
    let labels: Vec<&str> = cands.iter().map(|&c| tax.class(c).label.as_str()).collect();
    let (answer, lp_answer) = answer_logprob_and_sample(params, &mf, &labels, mode, rng)?;
    let probs = answer_probabilities(params, &mf);

    let second = SecondTurnTrace {
        think_text: matching_text(tax, &cands, &listed),
        submotions: listed.iter().enumerate().map(|(k, &t)| mention(tax, t, k + 1)).collect(),
        candidates: cands
            .iter()
            .zip(&probs)
            .map(|(&c, p)| CandidateScore {
                label: tax.class(c).label.clone(),
                score: (100.0 * p).round() / 10.0,
            })
            .collect(),
        answer: labels[answer].to_string(),
    };

    Ok(Rollout {
        episode_id: episode.id,
        first_text: serialize_first_turn(&first),
        second_text: serialize_second_turn(&second),
        first,
        second,
        actions: HeadActions {
            bucket,
            tools,
            rank_features: rf,
            ordering,
            match_features: mf,
            answer,
        },
        logp: HeadLogProbs {
            tools: lp_tools,
            ranking: lp_rank,
            answer: lp_answer,
        },
        context,
        candidates: cands,
        listed,
    })
}

/// Ranks `k` whose listed sub-motion belongs to `predicted`'s definition.
pub fn match_submotions(tax: &Taxonomy, trace: &SecondTurnTrace, predicted: ClassId) -> Vec<usize> {
    trace
        .submotions
        .iter()
        .filter(|m| {
            tax.lookup_token(&m.body_part, &m.descriptor)
                .is_some_and(|t| tax.class_contains(predicted, t))
        })
        .map(|m| m.rank)
        .collect()
}

/// Rule-based verification of a rollout's emitted text.
pub fn verify(tax: &Taxonomy, episode: &Episode, first_text: &str, second_text: &str, cfg: &RewardConfig) -> RewardBreakdown {
    let first = parse_first_turn(first_text);
    let second = parse_second_turn(second_text);
    let matched = match &second {
        Ok(s) => tax
            .lookup_label(&s.answer)
            .map(|c| match_submotions(tax, s, c))
            .unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    reward::score(
        &Verdict {
            first: &first,
            second: &second,
            gold: &tax.class(episode.gold).label,
            informative: episode.informative,
            matched_ranks: &matched,
        },
        cfg,
    )
}

/// Rebuilds the head actions a trace encodes against a given context.
pub fn actions_from_trace(
    tax: &Taxonomy,
    first: &FirstTurnTrace,
    second: &SecondTurnTrace,
    ctx: &AugmentedContext,
) -> Result<HeadActions, PolicyError> {
    let bad = |msg: String| PolicyError::InconsistentTrace(msg);
    let tools: ToolFlags = first.decisions;
    if tools != ctx.invoked {
        return Err(bad("tool decisions differ from the invoked set".into()));
    }
    let mut cands = Vec::with_capacity(second.candidates.len());
    for c in &second.candidates {
        let id = tax
            .lookup_label(&c.label)
            .ok_or_else(|| bad(format!("unknown candidate {:?}", c.label)))?;
        if cands.contains(&id) {
            return Err(bad(format!("duplicate candidate {:?}", c.label)));
        }
        cands.push(id);
    }
    if cands.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let mut ordering = Vec::with_capacity(second.submotions.len());
    for m in &second.submotions {
        let t = tax
            .lookup_token(&m.body_part, &m.descriptor)
            .ok_or_else(|| bad(format!("unknown sub-motion {}: {}", m.body_part, m.descriptor)))?;
        let pos = ctx
            .tokens
            .iter()
            .position(|x| *x == t)
            .ok_or_else(|| bad(format!("sub-motion {}: {} not in context", m.body_part, m.descriptor)))?;
        if ordering.contains(&pos) {
            return Err(bad(format!("sub-motion {}: {} listed twice", m.body_part, m.descriptor)));
        }
        ordering.push(pos);
    }
    let listed: Vec<TokenId> = ordering.iter().map(|&i| ctx.tokens[i]).collect();
    let answer = second
        .candidates
        .iter()
        .position(|c| c.label == second.answer)
        .ok_or_else(|| bad(format!("answer {:?} is not a candidate", second.answer)))?;
    Ok(HeadActions {
        bucket: bucket_for(tax, ctx),
        tools,
        rank_features: rank_features(tax, ctx, &cands),
        ordering,
        match_features: match_features(tax, ctx, &cands, &listed),
        answer,
    })
}

/// Sequence log-probability of a trace pair under `params`.
pub fn trajectory_logprob(
    params: &PolicyParams,
    tax: &Taxonomy,
    first: &FirstTurnTrace,
    second: &SecondTurnTrace,
    ctx: &AugmentedContext,
) -> Result<f64, PolicyError> {
    let actions = actions_from_trace(tax, first, second, ctx)?;
    Ok(crate::policy::actions_logprob(params, &actions))
}
