//! Three-head factorized policy standing in for the multimodal model.
//!
//! * tool head: four independent Bernoulli decisions per evidence bucket
//! * ranking head: Plackett–Luce over observed sub-motions
//! * answer head: softmax over candidate match scores
//!
//! A trajectory's log-probability is the sum of the three heads'
//! log-probabilities for the actions it recorded. All gradients are analytic.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};

use crate::trace::{ToolFlags, ToolKind};

pub const NUM_BUCKETS: usize = 3;
pub const NUM_TOOLS: usize = 4;
/// Sub-motion features: pose-recovered, description earliness, candidate
/// support, membership in the top-overlap candidate.
pub const RANK_DIM: usize = 4;
/// Candidate features: overlap fraction, top-1 listed sub-motion match,
/// definition alignment.
pub const MATCH_DIM: usize = 3;
pub const NUM_PARAMS: usize = NUM_BUCKETS * NUM_TOOLS + RANK_DIM + MATCH_DIM;

const TOOL_OFFSET: usize = 0;
const RANK_OFFSET: usize = NUM_BUCKETS * NUM_TOOLS;
const MATCH_OFFSET: usize = RANK_OFFSET + RANK_DIM;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("no observed sub-motions to rank")]
    EmptyObservation,
    #[error("no candidates to score")]
    NoCandidates,
    #[error("trace inconsistent with context: {0}")]
    InconsistentTrace(String),
    #[error("empty dataset")]
    EmptyDataset,
}

/// Evidence-sparsity bucket: observed evidence relative to a class's
/// sub-motion count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Low = 0,
    Mid = 1,
    High = 2,
}

impl Bucket {
    pub fn from_counts(observed: usize, per_class: usize) -> Bucket {
        let ratio = observed as f64 / per_class.max(1) as f64;
        if ratio < 0.75 {
            Bucket::Low
        } else if ratio <= 1.0 {
            Bucket::Mid
        } else {
            Bucket::High
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Sample,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Row-major `[bucket][tool]`.
    pub tool_logits: [[f64; NUM_TOOLS]; NUM_BUCKETS],
    pub rank_weights: [f64; RANK_DIM],
    pub match_weights: [f64; MATCH_DIM],
    /// Divides ranking utilities and candidate scores. Not trained.
    pub temperature: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::uniform()
    }
}

impl PolicyParams {
    /// All-zero weights: every head is uniform.
    pub fn uniform() -> Self {
        Self {
            tool_logits: [[0.0; NUM_TOOLS]; NUM_BUCKETS],
            rank_weights: [0.0; RANK_DIM],
            match_weights: [0.0; MATCH_DIM],
            temperature: 1.0,
        }
    }

    /// Frozen deep copy, used for the old and reference policies.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_PARAMS);
        for row in &self.tool_logits {
            v.extend_from_slice(row);
        }
        v.extend_from_slice(&self.rank_weights);
        v.extend_from_slice(&self.match_weights);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), NUM_PARAMS, "flat parameter length");
        for (b, row) in self.tool_logits.iter_mut().enumerate() {
            row.copy_from_slice(&v[TOOL_OFFSET + b * NUM_TOOLS..TOOL_OFFSET + (b + 1) * NUM_TOOLS]);
        }
        self.rank_weights.copy_from_slice(&v[RANK_OFFSET..RANK_OFFSET + RANK_DIM]);
        self.match_weights.copy_from_slice(&v[MATCH_OFFSET..MATCH_OFFSET + MATCH_DIM]);
    }

    pub fn is_finite(&self) -> bool {
        self.temperature.is_finite() && self.temperature > 0.0 && self.flat().iter().all(|x| x.is_finite())
    }

    /// `theta <- theta - lr * grad`.
    pub fn descend(&mut self, grad: &[f64], lr: f64) {
        if lr == 0.0 {
            return;
        }
        let mut v = self.flat();
        for (p, g) in v.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        self.set_flat(&v);
    }

    pub fn tool_probability(&self, bucket: Bucket, tool: ToolKind) -> f64 {
        sigmoid(self.tool_logits[bucket.index()][tool.index()])
    }
}

/// Every action one trajectory took, with the features each head saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadActions {
    pub bucket: Bucket,
    pub tools: ToolFlags,
    pub rank_features: Vec<[f64; RANK_DIM]>,
    /// Listed item indices into `rank_features`, most relevant first. May be a
    /// prefix of a full ordering.
    pub ordering: Vec<usize>,
    pub match_features: Vec<[f64; MATCH_DIM]>,
    pub answer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadLogProbs {
    pub tools: f64,
    pub ranking: f64,
    pub answer: f64,
}

impl HeadLogProbs {
    pub fn total(&self) -> f64 {
        self.tools + self.ranking + self.answer
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn dot<const D: usize>(w: &[f64; D], x: &[f64; D]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Log-probability of `flags` under the tool head for `bucket`.
pub fn tool_logprob(params: &PolicyParams, bucket: Bucket, flags: ToolFlags) -> f64 {
    let row = &params.tool_logits[bucket.index()];
    ToolKind::ALL
        .iter()
        .map(|&t| {
            let z = row[t.index()];
            if flags.get(t) {
                log_sigmoid(z)
            } else {
                log_sigmoid(-z)
            }
        })
        .sum()
}

pub fn stage1_logprob_and_sample<R: Rng>(
    params: &PolicyParams,
    bucket: Bucket,
    mode: Mode,
    rng: &mut R,
) -> (ToolFlags, f64) {
    let mut flags = ToolFlags::NONE;
    for t in ToolKind::ALL {
        let z = params.tool_logits[bucket.index()][t.index()];
        let on = match mode {
            Mode::Sample => rng.gen::<f64>() < sigmoid(z),
            Mode::Argmax => z > 0.0,
        };
        flags.set(t, on);
    }
    (flags, tool_logprob(params, bucket, flags))
}

pub fn rank_utilities(params: &PolicyParams, features: &[[f64; RANK_DIM]]) -> Vec<f64> {
    features
        .iter()
        .map(|f| dot(&params.rank_weights, f) / params.temperature)
        .collect()
}

/// Plackett–Luce log-probability of a (possibly partial) top-m listing.
pub fn ranking_logprob(utilities: &[f64], ordering: &[usize]) -> f64 {
    let mut remaining = vec![true; utilities.len()];
    let mut logp = 0.0;
    for &pick in ordering {
        let lse = logsumexp(
            utilities
                .iter()
                .zip(&remaining)
                .filter(|(_, &r)| r)
                .map(|(u, _)| *u),
        );
        logp += utilities[pick] - lse;
        remaining[pick] = false;
    }
    logp
}

pub fn rank_submotions<R: Rng>(
    params: &PolicyParams,
    features: &[[f64; RANK_DIM]],
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<usize>, f64), PolicyError> {
    if features.is_empty() {
        return Err(PolicyError::EmptyObservation);
    }
    let u = rank_utilities(params, features);
    let ordering = match mode {
        Mode::Argmax => {
            let mut idx: Vec<usize> = (0..u.len()).collect();
            idx.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
            idx
        }
        Mode::Sample => {
            let mut remaining: Vec<usize> = (0..u.len()).collect();
            let mut ordering = Vec::with_capacity(u.len());
            while !remaining.is_empty() {
                let k = sample_softmax(remaining.iter().map(|&i| u[i]), rng);
                ordering.push(remaining.remove(k));
            }
            ordering
        }
    };
    let logp = ranking_logprob(&u, &ordering);
    Ok((ordering, logp))
}

fn sample_softmax<R: Rng>(scores: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let m = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.map(|s| (s - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

pub fn answer_scores(params: &PolicyParams, features: &[[f64; MATCH_DIM]]) -> Vec<f64> {
    features
        .iter()
        .map(|f| dot(&params.match_weights, f) / params.temperature)
        .collect()
}

pub fn answer_probabilities(params: &PolicyParams, features: &[[f64; MATCH_DIM]]) -> Vec<f64> {
    let s = answer_scores(params, features);
    let lse = logsumexp(s.iter().copied());
    s.iter().map(|x| (x - lse).exp()).collect()
}

pub fn answer_logprob(params: &PolicyParams, features: &[[f64; MATCH_DIM]], answer: usize) -> f64 {
    let s = answer_scores(params, features);
    s[answer] - logsumexp(s.iter().copied())
}

/// Samples (or takes the argmax of) the candidate softmax. Argmax ties go to
/// the lexicographically smallest label.
pub fn answer_logprob_and_sample<R: Rng>(
    params: &PolicyParams,
    features: &[[f64; MATCH_DIM]],
    labels: &[&str],
    mode: Mode,
    rng: &mut R,
) -> Result<(usize, f64), PolicyError> {
    if features.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let s = answer_scores(params, features);
    let pick = match mode {
        Mode::Sample => sample_softmax(s.iter().copied(), rng),
        Mode::Argmax => (0..s.len())
            .max_by(|&a, &b| s[a].total_cmp(&s[b]).then_with(|| labels[b].cmp(labels[a])))
            .unwrap_or(0),
    };
    Ok((pick, answer_logprob(params, features, pick)))
}

pub fn head_logprobs(params: &PolicyParams, a: &HeadActions) -> HeadLogProbs {
    HeadLogProbs {
        tools: tool_logprob(params, a.bucket, a.tools),
        ranking: ranking_logprob(&rank_utilities(params, &a.rank_features), &a.ordering),
        answer: answer_logprob(params, &a.match_features, a.answer),
    }
}

/// Joint log-probability of everything the trajectory did.
pub fn actions_logprob(params: &PolicyParams, a: &HeadActions) -> f64 {
    head_logprobs(params, a).total()
}

/// Adds `scale * d logp / d theta` into `grad` and returns `logp`.
pub fn accumulate_logprob_grad(params: &PolicyParams, a: &HeadActions, scale: f64, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(grad.len(), NUM_PARAMS);
    let temp = params.temperature;

    // tool head: d/dz log Bernoulli(x; sigmoid z) = x - sigmoid(z)
    let b = a.bucket.index();
    for t in ToolKind::ALL {
        let z = params.tool_logits[b][t.index()];
        let x = if a.tools.get(t) { 1.0 } else { 0.0 };
        grad[TOOL_OFFSET + b * NUM_TOOLS + t.index()] += scale * (x - sigmoid(z));
    }

    // ranking head: sum over listed positions of phi_pick - E_remaining[phi]
    let u = rank_utilities(params, &a.rank_features);
    let mut remaining = vec![true; u.len()];
    for &pick in &a.ordering {
        let lse = logsumexp(u.iter().zip(&remaining).filter(|(_, &r)| r).map(|(x, _)| *x));
        let mut expect = [0.0; RANK_DIM];
        for (j, f) in a.rank_features.iter().enumerate() {
            if remaining[j] {
                let p = (u[j] - lse).exp();
                for d in 0..RANK_DIM {
                    expect[d] += p * f[d];
                }
            }
        }
        for d in 0..RANK_DIM {
            grad[RANK_OFFSET + d] += scale * (a.rank_features[pick][d] - expect[d]) / temp;
        }
        remaining[pick] = false;
    }

    // answer head: phi_answer - E[phi]
    let probs = answer_probabilities(params, &a.match_features);
    for d in 0..MATCH_DIM {
        let expect: f64 = probs.iter().zip(&a.match_features).map(|(p, f)| p * f[d]).sum();
        grad[MATCH_OFFSET + d] += scale * (a.match_features[a.answer][d] - expect) / temp;
    }

    actions_logprob(params, a)
}

/// One supervised example: the context features each head sees and the gold
/// reasoning steps (tool flags, ranked sub-motions, answer) as head targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub record_id: u64,
    /// Identifies the task instruction (the two-turn prompt pair).
    pub instruction: u32,
    pub steps: HeadActions,
    pub target: String,
}

/// Mean negative log-likelihood over the dataset and its gradient.
pub fn sft_loss(params: &PolicyParams, data: &[SftExample]) -> Result<(f64, Vec<f64>), PolicyError> {
    if data.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    let scale = -1.0 / data.len() as f64;
    let mut grad = vec![0.0; NUM_PARAMS];
    let mut loss = 0.0;
    for ex in data {
        loss += scale * accumulate_logprob_grad(params, &ex.steps, scale, &mut grad);
    }
    Ok((loss, grad))
}

/// Mean negative log-likelihood only.
pub fn sft_nll(params: &PolicyParams, data: &[SftExample]) -> Result<f64, PolicyError> {
    if data.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    Ok(-data.iter().map(|ex| actions_logprob(params, &ex.steps)).sum::<f64>() / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.5,
        }
    }
}

/// Full-batch gradient descent on the SFT loss. Returns the loss before each
/// step followed by the final loss (`steps + 1` values).
pub fn sft_train(params: &mut PolicyParams, data: &[SftExample], cfg: &SftConfig) -> Result<Vec<f64>, PolicyError> {
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, grad) = sft_loss(params, data)?;
        curve.push(loss);
        params.descend(&grad, cfg.learning_rate);
    }
    curve.push(sft_nll(params, data)?);
    Ok(curve)
}
