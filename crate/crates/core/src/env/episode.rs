//! Episodes (noisy sub-motion evidence) and the four tool simulators.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::taxonomy::{ClassId, Taxonomy, TokenId};
use crate::trace::{ToolFlags, ToolKind};

pub const QUERY: &str = "What kind of human action is shown in the video?";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Probability that each gold sub-motion is missing from the evidence. One
    /// always survives.
    pub drop: f64,
    /// Probability that a look-alike action in the background contributes
    /// its non-shared sub-motions to the evidence.
    pub distractor: f64,
    /// Probability that the surviving gold sub-motions are observed out of order.
    pub shuffle: f64,
}

impl NoiseConfig {
    pub fn uniform(level: f64) -> Self {
        Self {
            drop: level,
            distractor: level,
            shuffle: level,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::uniform(0.4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    /// Probability that detection boxes out each distractor.
    pub detection: f64,
    /// Probability that pose keypoints recover each dropped gold sub-motion.
    pub pose: f64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            detection: 0.9,
            pose: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub noise: NoiseConfig,
    pub fidelity: FidelityConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub gold: ClassId,
    /// What the "video" shows, in observed order.
    pub observations: Vec<TokenId>,
    /// Gold sub-motions missing from `observations` (hidden from the policy).
    pub dropped: Vec<TokenId>,
    /// Injected tokens present in `observations` (hidden from the policy).
    pub distractors: Vec<TokenId>,
    pub query: String,
    pub informative: ToolFlags,
}

/// Tool-augmented context: raw evidence with tool features and text appended.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedContext {
    pub observations: Vec<TokenId>,
    /// Evidence after detection filtering with pose-recovered tokens appended.
    pub tokens: Vec<TokenId>,
    pub removed: Vec<TokenId>,
    pub restored: Vec<TokenId>,
    /// Temporal order of the surviving action sub-motions (video description).
    pub temporal_order: Option<Vec<TokenId>>,
    /// Candidate definitions were attached (action explanation).
    pub definitions: bool,
    pub invoked: ToolFlags,
    /// Invoked tools that were informative and therefore contributed.
    pub applied: ToolFlags,
}

impl AugmentedContext {
    /// Context with no tool contributions.
    pub fn raw(observations: &[TokenId], invoked: ToolFlags) -> Self {
        Self {
            observations: observations.to_vec(),
            tokens: observations.to_vec(),
            removed: Vec::new(),
            restored: Vec::new(),
            temporal_order: None,
            definitions: false,
            invoked,
            applied: ToolFlags::NONE,
        }
    }

    pub fn contains(&self, t: TokenId) -> bool {
        self.tokens.contains(&t)
    }
}

/// Classes ordered by overlap fraction with `tokens`, ties broken by label.
pub fn rank_by_overlap(tax: &Taxonomy, tokens: &[TokenId]) -> Vec<(ClassId, f64)> {
    let mut counts = vec![0usize; tax.len()];
    for &t in tokens {
        for &c in tax.classes_with(t) {
            counts[c] += 1;
        }
    }
    let mut ranked: Vec<(ClassId, f64)> = counts
        .iter()
        .enumerate()
        .map(|(c, &k)| (c, k as f64 / tax.class(c).submotions.len() as f64))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| tax.class(a.0).label.cmp(&tax.class(b.0).label))
    });
    ranked
}

/// Samples an episode whose gold class is drawn uniformly from `pool`.
pub fn sample_episode<R: Rng>(
    tax: &Taxonomy,
    pool: &[ClassId],
    cfg: &EnvConfig,
    id: u64,
    rng: &mut R,
) -> Episode {
    let noise = &cfg.noise;
    let gold = pool[rng.gen_range(0..pool.len())];
    let definition = &tax.class(gold).submotions;

    let mut kept = Vec::with_capacity(definition.len());
    let mut dropped = Vec::new();
    for &t in definition {
        if rng.gen::<f64>() < noise.drop {
            dropped.push(t);
        } else {
            kept.push(t);
        }
    }
    // the video always shows at least one of the action's sub-motions
    if kept.is_empty() {
        let i = rng.gen_range(0..dropped.len());
        kept.push(dropped.remove(i));
    }
    if rng.gen::<f64>() < noise.shuffle {
        kept.shuffle(rng);
    }

    // With probability `distractor` a look-alike action (a class sharing
    // sub-motions with the gold) plays in the background and contributes its
    // other sub-motions. Without any look-alike, one foreign token is used.
    let mut observations = kept;
    let mut distractors = Vec::new();
    if rng.gen::<f64>() < noise.distractor {
        let similar: Vec<ClassId> = (0..tax.len())
            .filter(|&c| c != gold && tax.shared(gold, c) > 0)
            .collect();
        match similar.choose(rng) {
            Some(&c) => distractors.extend(
                tax.class(c)
                    .submotions
                    .iter()
                    .copied()
                    .filter(|t| !definition.contains(t)),
            ),
            None => {
                let foreign: Vec<TokenId> = tax
                    .used_tokens()
                    .filter(|t| !tax.class_contains(gold, *t))
                    .collect();
                distractors.extend(foreign.choose(rng));
            }
        }
        for &t in &distractors {
            let at = rng.gen_range(0..=observations.len());
            observations.insert(at, t);
        }
    }

    let mut informative = ToolFlags::NONE;
    informative.set(
        ToolKind::HumanDetection,
        !distractors.is_empty() && cfg.fidelity.detection > 0.0,
    );
    informative.set(
        ToolKind::PoseEstimation,
        !dropped.is_empty() && cfg.fidelity.pose > 0.0,
    );
    let ranked = rank_by_overlap(tax, &observations);
    let unique_top = ranked[0].0 == gold && ranked[1].1 < ranked[0].1;
    informative.set(ToolKind::ActionExplanation, !unique_top);
    let surviving: Vec<TokenId> = observations
        .iter()
        .copied()
        .filter(|t| definition.contains(t))
        .collect();
    let in_order = surviving.windows(2).all(|w| {
        let pos = |t| definition.iter().position(|d| *d == t);
        pos(w[0]) < pos(w[1])
    });
    informative.set(ToolKind::VideoDescription, !in_order);

    Episode {
        id,
        gold,
        observations,
        dropped,
        distractors,
        query: QUERY.to_string(),
        informative,
    }
}

/// Runs the invoked tools. A tool contributes only when it is informative for
/// the episode; un-invoked and uninformative tools leave the context as is.
pub fn apply_tools<R: Rng>(
    tax: &Taxonomy,
    episode: &Episode,
    decisions: ToolFlags,
    fidelity: &FidelityConfig,
    rng: &mut R,
) -> AugmentedContext {
    let mut ctx = AugmentedContext::raw(&episode.observations, decisions);
    let active = |t: ToolKind| decisions.get(t) && episode.informative.get(t);

    if active(ToolKind::HumanDetection) {
        ctx.applied.set(ToolKind::HumanDetection, true);
        let mut kept = Vec::with_capacity(ctx.tokens.len());
        for &t in &ctx.tokens {
            if episode.distractors.contains(&t) && rng.gen::<f64>() < fidelity.detection {
                ctx.removed.push(t);
            } else {
                kept.push(t);
            }
        }
        ctx.tokens = kept;
    }
    if active(ToolKind::PoseEstimation) {
        ctx.applied.set(ToolKind::PoseEstimation, true);
        for &t in &episode.dropped {
            if rng.gen::<f64>() < fidelity.pose {
                ctx.restored.push(t);
                ctx.tokens.push(t);
            }
        }
    }
    if active(ToolKind::ActionExplanation) {
        ctx.applied.set(ToolKind::ActionExplanation, true);
        ctx.definitions = true;
    }
    if active(ToolKind::VideoDescription) {
        ctx.applied.set(ToolKind::VideoDescription, true);
        let order: Vec<TokenId> = tax
            .class(episode.gold)
            .submotions
            .iter()
            .copied()
            .filter(|t| ctx.tokens.contains(t))
            .collect();
        ctx.temporal_order = Some(order);
    }
    ctx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::taxonomy::{generate_taxonomy, TaxonomyParams};
    use crate::rng::{stream, Purpose};

    fn tax() -> Taxonomy {
        generate_taxonomy(&TaxonomyParams {
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(noise: NoiseConfig, det: f64, pose: f64) -> EnvConfig {
        EnvConfig {
            noise,
            fidelity: FidelityConfig { detection: det, pose },
        }
    }

    fn all(t: &Taxonomy) -> Vec<ClassId> {
        (0..t.len()).collect()
    }

    #[test]
    fn noiseless_episode_is_the_definition() {
        let t = tax();
        let c = cfg(NoiseConfig::uniform(0.0), 1.0, 1.0);
        for i in 0..200 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(1, Purpose::TrainEpisode, &[i]));
            assert_eq!(e.observations, t.class(e.gold).submotions);
            assert_eq!(e.informative, ToolFlags::NONE);
        }
    }

    #[test]
    fn full_drop_makes_pose_informative() {
        let t = tax();
        let c = cfg(
            NoiseConfig {
                drop: 1.0,
                distractor: 0.0,
                shuffle: 0.0,
            },
            1.0,
            1.0,
        );
        let e = sample_episode(&t, &all(&t), &c, 0, &mut stream(2, Purpose::TrainEpisode, &[0]));
        assert!(e.informative.get(ToolKind::PoseEstimation));
        assert_eq!(e.observations.len(), 1);
        assert_eq!(e.dropped.len(), t.class(e.gold).submotions.len() - 1);
    }

    #[test]
    fn empirical_drop_rate() {
        let t = tax();
        let p = 0.3;
        let c = cfg(
            NoiseConfig {
                drop: p,
                distractor: 0.2,
                shuffle: 0.2,
            },
            1.0,
            1.0,
        );
        let (mut dropped, mut total) = (0usize, 0usize);
        for i in 0..10_000 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(4, Purpose::TrainEpisode, &[i]));
            dropped += e.dropped.len();
            total += t.class(e.gold).submotions.len();
        }
        let rate = dropped as f64 / total as f64;
        assert!((rate - p).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn no_tools_is_identity() {
        let t = tax();
        let c = cfg(NoiseConfig::uniform(0.5), 1.0, 1.0);
        for i in 0..100 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(5, Purpose::TrainEpisode, &[i]));
            let ctx = apply_tools(&t, &e, ToolFlags::NONE, &c.fidelity, &mut stream(5, Purpose::Rollout, &[i]));
            assert_eq!(ctx, AugmentedContext::raw(&e.observations, ToolFlags::NONE));
        }
    }

    #[test]
    fn full_fidelity_detection_removes_all_distractors() {
        let t = tax();
        let c = cfg(NoiseConfig::uniform(0.5), 1.0, 1.0);
        for i in 0..200 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(6, Purpose::TrainEpisode, &[i]));
            let ctx = apply_tools(
                &t,
                &e,
                ToolFlags::from_tools(&[ToolKind::HumanDetection]),
                &c.fidelity,
                &mut stream(6, Purpose::Rollout, &[i]),
            );
            assert!(ctx.tokens.iter().all(|x| !e.distractors.contains(x)));
        }
    }

    #[test]
    fn full_fidelity_pose_restores_gold() {
        let t = tax();
        let c = cfg(
            NoiseConfig {
                drop: 0.5,
                distractor: 0.3,
                shuffle: 0.3,
            },
            1.0,
            1.0,
        );
        for i in 0..1000 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(7, Purpose::TrainEpisode, &[i]));
            let ctx = apply_tools(
                &t,
                &e,
                ToolFlags::from_tools(&[ToolKind::PoseEstimation]),
                &c.fidelity,
                &mut stream(7, Purpose::Rollout, &[i]),
            );
            for g in &t.class(e.gold).submotions {
                assert!(ctx.contains(*g));
            }
        }
    }

    #[test]
    fn informativeness_soundness() {
        let t = tax();
        let c = cfg(NoiseConfig::uniform(0.4), 1.0, 1.0);
        for i in 0..500 {
            let e = sample_episode(&t, &all(&t), &c, i, &mut stream(8, Purpose::TrainEpisode, &[i]));
            let raw = AugmentedContext::raw(&e.observations, ToolFlags::NONE);
            for tool in ToolKind::ALL {
                let flags = ToolFlags::from_tools(&[tool]);
                let mut ctx = apply_tools(&t, &e, flags, &c.fidelity, &mut stream(8, Purpose::Rollout, &[i]));
                ctx.invoked = ToolFlags::NONE;
                ctx.applied = ToolFlags::NONE;
                if e.informative.get(tool) {
                    assert_ne!(ctx, raw, "{tool} marked informative but inert");
                } else {
                    assert_eq!(ctx, raw, "{tool} not informative but changed context");
                }
            }
        }
    }

    #[test]
    fn overlap_ranking_ties_are_lexicographic() {
        let t = tax();
        let ranked = rank_by_overlap(&t, &[]);
        let labels: Vec<&str> = ranked.iter().map(|(c, _)| t.class(*c).label.as_str()).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(labels, sorted);
    }
}
