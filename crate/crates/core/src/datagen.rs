//! Supervised data construction: gold two-turn traces built from full episode
//! information (tool selection, sub-motion decomposition, candidate selection,
//! match scoring), seeded corruptions, and the rule-based assessment filter.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    actions_from_trace, apply_tools, candidates, first_turn_text, matching_text, mention, sample_episode,
    AugmentedContext, ClassId, EnvConfig, EnvError, Episode, FidelityConfig, Split, SubMotion, Taxonomy, TokenId,
};
use crate::policy::{Bucket, PolicyError, SftExample};
use crate::rng::{self, Purpose};
use crate::trace::{
    canonical_label, parse_first_turn, parse_second_turn, serialize_first_turn, serialize_second_turn,
    CandidateScore, FirstTurnTrace, SecondTurnTrace, ToolFlags, ToolKind, TraceError, MAX_SCORE,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("record {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("record {id}: {msg}")]
    Mismatch { id: u64, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRef {
    /// Fingerprint of the taxonomy's label space.
    pub taxonomy: String,
    /// Seed of the record's episode stream.
    pub seed: u64,
}

/// What the tools produced for the recorded episode. Sub-motions are written
/// as `"body part: movement"`, tools by tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolOutputs {
    pub invoked: Vec<String>,
    pub informative: Vec<String>,
    pub observations: Vec<String>,
    pub context: Vec<String>,
    pub removed: Vec<String>,
    pub restored: Vec<String>,
    pub temporal_order: Option<Vec<String>>,
    pub definitions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

/// Assessment rules, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// (a) either turn fails to parse.
    ParseFailure,
    /// (b) the answer is not one of the scored candidates.
    AnswerNotCandidate,
    /// (c) a scored candidate is not a taxonomy label.
    UnknownCandidate,
    /// (d) a listed sub-motion was neither observed nor restored by a tool.
    UnverifiedSubmotion,
    /// (e) a score outside `[0, 10]`.
    ScoreOutOfRange,
}

impl Reason {
    pub fn rule(self) -> char {
        match self {
            Reason::ParseFailure => 'a',
            Reason::AnswerNotCandidate => 'b',
            Reason::UnknownCandidate => 'c',
            Reason::UnverifiedSubmotion => 'd',
            Reason::ScoreOutOfRange => 'e',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: Outcome,
    pub reason: Option<Reason>,
}

impl Assessment {
    pub const PASS: Assessment = Assessment {
        verdict: Outcome::Pass,
        reason: None,
    };

    pub fn fail(reason: Reason) -> Self {
        Self {
            verdict: Outcome::Fail,
            reason: Some(reason),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Outcome::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub episode: EpisodeRef,
    pub first_turn_text: String,
    pub second_turn_text: String,
    pub tool_outputs: ToolOutputs,
    pub gold_label: String,
    pub assessment: Assessment,
}

/// One line of the assessment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub id: u64,
    pub verdict: Outcome,
    pub reason: Option<Reason>,
}

/// Synthetic defects, each built to trip exactly one assessment rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    BreakSyntax,
    AnswerOffList,
    UnknownCandidate,
    Hallucination,
    ScoreOutOfRange,
}

impl Corruption {
    pub const ALL: [Corruption; 5] = [
        Corruption::BreakSyntax,
        Corruption::AnswerOffList,
        Corruption::UnknownCandidate,
        Corruption::Hallucination,
        Corruption::ScoreOutOfRange,
    ];

    pub fn expected_reason(self) -> Reason {
        match self {
            Corruption::BreakSyntax => Reason::ParseFailure,
            Corruption::AnswerOffList => Reason::AnswerNotCandidate,
            Corruption::UnknownCandidate => Reason::UnknownCandidate,
            Corruption::Hallucination => Reason::UnverifiedSubmotion,
            Corruption::ScoreOutOfRange => Reason::ScoreOutOfRange,
        }
    }

    pub fn from_rule(rule: char) -> Option<Corruption> {
        Corruption::ALL.into_iter().find(|c| c.expected_reason().rule() == rule)
    }
}

/// Stable 64-bit FNV-1a fingerprint of the label space and definitions.
pub fn taxonomy_fingerprint(tax: &Taxonomy) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |s: &str| {
        for b in s.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for c in tax.classes() {
        eat(&c.label);
        for &t in &c.submotions {
            eat(&tax.token(t).to_string());
        }
    }
    format!("{h:016x}")
}

/// `round(10 * fraction)` with halves rounded up.
pub fn match_score(fraction: f64) -> f64 {
    (MAX_SCORE * fraction + 0.5).floor()
}

/// Gold traces for an episode: invoke exactly the informative tools, list the
/// gold sub-motions present in the augmented context in definition order,
/// score each retrieved candidate by its overlap with the gold definition and
/// answer the gold class. When retrieval misses the gold class it takes the
/// last candidate slot.
pub fn build_gold_trace<R: Rng>(
    episode: &Episode,
    tax: &Taxonomy,
    fidelity: &FidelityConfig,
    rng: &mut R,
) -> (FirstTurnTrace, SecondTurnTrace, AugmentedContext) {
    let gold = episode.gold;
    let bucket = Bucket::from_counts(episode.observations.len(), tax.class(0).submotions.len());
    let first = FirstTurnTrace {
        think_text: first_turn_text(bucket, episode.observations.len()),
        decisions: episode.informative,
    };
    let ctx = apply_tools(tax, episode, episode.informative, fidelity, rng);

    let mut cands = candidates(tax, &ctx);
    if !cands.contains(&gold) {
        *cands.last_mut().expect("at least two candidates") = gold;
    }
    let definition = &tax.class(gold).submotions;
    let mut listed: Vec<TokenId> = definition.iter().copied().filter(|t| ctx.contains(*t)).collect();
    if listed.is_empty() {
        listed = ctx.tokens.clone();
    }

    let scored: Vec<CandidateScore> = cands
        .iter()
        .map(|&c| {
            let own = &tax.class(c).submotions;
            let shared = own.iter().filter(|t| definition.contains(t)).count();
            CandidateScore {
                label: tax.class(c).label.clone(),
                score: match_score(shared as f64 / own.len() as f64),
            }
        })
        .collect();
    let second = SecondTurnTrace {
        think_text: matching_text(tax, &cands, &listed),
        submotions: listed.iter().enumerate().map(|(k, &t)| mention(tax, t, k + 1)).collect(),
        candidates: scored,
        answer: tax.class(gold).label.clone(),
    };
    (first, second, ctx)
}

fn tags(flags: ToolFlags) -> Vec<String> {
    flags.tools().map(|t| t.tag().to_string()).collect()
}

fn names(tax: &Taxonomy, tokens: &[TokenId]) -> Vec<String> {
    tokens.iter().map(|&t| tax.token(t).to_string()).collect()
}

pub fn tool_outputs(tax: &Taxonomy, episode: &Episode, ctx: &AugmentedContext) -> ToolOutputs {
    ToolOutputs {
        invoked: tags(ctx.invoked),
        informative: tags(episode.informative),
        observations: names(tax, &ctx.observations),
        context: names(tax, &ctx.tokens),
        removed: names(tax, &ctx.removed),
        restored: names(tax, &ctx.restored),
        temporal_order: ctx.temporal_order.as_ref().map(|o| names(tax, o)),
        definitions: ctx.definitions,
    }
}

fn parse_tags(id: u64, raw: &[String]) -> Result<ToolFlags, DatagenError> {
    let mut flags = ToolFlags::NONE;
    for tag in raw {
        let tool = ToolKind::from_tag(tag).ok_or_else(|| DatagenError::Mismatch {
            id,
            msg: format!("unknown tool {tag:?}"),
        })?;
        flags.set(tool, true);
    }
    Ok(flags)
}

fn parse_tokens(tax: &Taxonomy, id: u64, raw: &[String]) -> Result<Vec<TokenId>, DatagenError> {
    raw.iter()
        .map(|s| {
            SubMotion::parse(s)
                .and_then(|m| tax.lookup_token(&m.body_part, &m.movement))
                .ok_or_else(|| DatagenError::Mismatch {
                    id,
                    msg: format!("unknown sub-motion {s:?}"),
                })
        })
        .collect()
}

/// Rebuilds the augmented context a record was generated against.
pub fn context_from_record(tax: &Taxonomy, record: &DatasetRecord) -> Result<AugmentedContext, DatagenError> {
    let out = &record.tool_outputs;
    let id = record.id;
    let invoked = parse_tags(id, &out.invoked)?;
    let informative = parse_tags(id, &out.informative)?;
    let mut applied = ToolFlags::NONE;
    for t in ToolKind::ALL {
        applied.set(t, invoked.get(t) && informative.get(t));
    }
    Ok(AugmentedContext {
        observations: parse_tokens(tax, id, &out.observations)?,
        tokens: parse_tokens(tax, id, &out.context)?,
        removed: parse_tokens(tax, id, &out.removed)?,
        restored: parse_tokens(tax, id, &out.restored)?,
        temporal_order: out
            .temporal_order
            .as_ref()
            .map(|o| parse_tokens(tax, id, o))
            .transpose()?,
        definitions: out.definitions,
        invoked,
        applied,
    })
}

/// Re-samples the episode a record refers to.
pub fn episode_from_record(tax: &Taxonomy, env: &EnvConfig, record: &DatasetRecord) -> Result<Episode, DatagenError> {
    if record.episode.taxonomy != taxonomy_fingerprint(tax) {
        return Err(DatagenError::Mismatch {
            id: record.id,
            msg: "record was generated against a different taxonomy".into(),
        });
    }
    let base = tax.split_classes(Split::Base);
    if base.is_empty() {
        return Err(EnvError::EmptySplit.into());
    }
    let mut r = rng::Rng::seed_from_u64(record.episode.seed);
    let ep = sample_episode(tax, &base, env, record.id, &mut r);
    if names(tax, &ep.observations) != record.tool_outputs.observations
        || tax.class(ep.gold).label != record.gold_label
    {
        return Err(DatagenError::Mismatch {
            id: record.id,
            msg: "episode does not reproduce under this environment configuration".into(),
        });
    }
    Ok(ep)
}

/// Applies rules (a)–(e) in order; the first rule that trips is the reason.
pub fn assess(tax: &Taxonomy, record: &DatasetRecord) -> Assessment {
    let first = parse_first_turn(&record.first_turn_text);
    let second = parse_second_turn(&record.second_turn_text);
    let second = match (first, second) {
        (_, Err(TraceError::ScoreOutOfRange { .. })) => return Assessment::fail(Reason::ScoreOutOfRange),
        (Ok(_), Ok(s)) => s,
        _ => return Assessment::fail(Reason::ParseFailure),
    };
    let answer = canonical_label(&second.answer);
    if !second.candidates.iter().any(|c| canonical_label(&c.label) == answer) {
        return Assessment::fail(Reason::AnswerNotCandidate);
    }
    if second
        .candidates
        .iter()
        .any(|c| tax.lookup_label(&canonical_label(&c.label)).is_none())
    {
        return Assessment::fail(Reason::UnknownCandidate);
    }
    let out = &record.tool_outputs;
    let verified = |name: &str| out.observations.iter().chain(&out.restored).any(|o| o == name);
    if second
        .submotions
        .iter()
        .any(|m| !verified(&format!("{}: {}", m.body_part, m.descriptor)))
    {
        return Assessment::fail(Reason::UnverifiedSubmotion);
    }
    if second.candidates.iter().any(|c| !(0.0..=MAX_SCORE).contains(&c.score)) {
        return Assessment::fail(Reason::ScoreOutOfRange);
    }
    Assessment::PASS
}

fn renumber(second: &mut SecondTurnTrace) {
    for (k, m) in second.submotions.iter_mut().enumerate() {
        m.rank = k + 1;
    }
}

/// Rewrites a gold record so that it violates `kind`'s rule (and only that
/// rule, given the check order).
pub fn corrupt<R: Rng>(tax: &Taxonomy, record: &mut DatasetRecord, kind: Corruption, rng: &mut R) {
    let Ok(mut second) = parse_second_turn(&record.second_turn_text) else {
        return;
    };
    let answer = canonical_label(&second.answer);
    match kind {
        Corruption::BreakSyntax => match rng.gen_range(0..4) {
            0 => {
                let tool = *ToolKind::ALL.choose(rng).unwrap();
                let tag = tool.tag();
                let text = &record.first_turn_text;
                let on = format!("<{tag}>yes</{tag}>");
                let off = format!("<{tag}>no</{tag}>");
                let bad = format!("<{tag}>maybe</{tag}>");
                record.first_turn_text = text.replace(&on, &bad).replace(&off, &bad);
            }
            1 => record.second_turn_text = record.second_turn_text.replace("</answer>", ""),
            2 => record.first_turn_text = record.first_turn_text.replace("<action>", "<actions>"),
            _ => {
                let c = rng.gen_range(0..second.candidates.len());
                let label = second.candidates[c].label.clone();
                let line = format!("{label}: {}", second.candidates[c].score);
                record.second_turn_text = record.second_turn_text.replace(&line, &format!("{label}: high"));
            }
        },
        Corruption::AnswerOffList => {
            let off: Vec<ClassId> = (0..tax.len())
                .filter(|&c| !second.candidates.iter().any(|s| s.label == tax.class(c).label))
                .collect();
            second.answer = tax.class(*off.choose(rng).unwrap()).label.clone();
            record.second_turn_text = serialize_second_turn(&second);
        }
        Corruption::UnknownCandidate => {
            let others: Vec<usize> = (0..second.candidates.len())
                .filter(|&i| canonical_label(&second.candidates[i].label) != answer)
                .collect();
            let i = *others.choose(rng).unwrap();
            let n = rng.gen_range(1..1000);
            second.candidates[i].label = format!("unlisted action {n}");
            record.second_turn_text = serialize_second_turn(&second);
        }
        Corruption::Hallucination => {
            let out = &record.tool_outputs;
            let unseen: Vec<TokenId> = tax
                .used_tokens()
                .filter(|&t| {
                    let name = tax.token(t).to_string();
                    !out.observations.contains(&name) && !out.restored.contains(&name)
                })
                .collect();
            let t = *unseen.choose(rng).unwrap();
            let at = rng.gen_range(0..=second.submotions.len());
            second.submotions.insert(at, mention(tax, t, 0));
            renumber(&mut second);
            record.second_turn_text = serialize_second_turn(&second);
        }
        Corruption::ScoreOutOfRange => {
            let i = rng.gen_range(0..second.candidates.len());
            second.candidates[i].score = if rng.gen_bool(0.5) {
                MAX_SCORE + f64::from(rng.gen_range(1..6u8))
            } else {
                -f64::from(rng.gen_range(1..6u8))
            };
            record.second_turn_text = serialize_second_turn(&second);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataGenConfig {
    pub records: usize,
    pub env: EnvConfig,
    /// Fraction of records corrupted for filter testing.
    pub corruption_rate: f64,
    /// Corruptions drawn uniformly for each corrupted record.
    pub corruptions: Vec<Corruption>,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            records: 1000,
            env: EnvConfig::default(),
            corruption_rate: 0.0,
            corruptions: vec![Corruption::Hallucination],
            seed: 0,
        }
    }
}

/// All generated records (assessed), with the corruption applied to each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub injected: Vec<Option<Corruption>>,
}

impl Dataset {
    pub fn passing(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.assessment.passed())
    }

    pub fn report(&self) -> Vec<ReportLine> {
        self.records
            .iter()
            .map(|r| ReportLine {
                id: r.id,
                verdict: r.assessment.verdict,
                reason: r.assessment.reason,
            })
            .collect()
    }

    pub fn pass_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.passing().count() as f64 / self.records.len() as f64
    }
}

/// Builds one gold record from its own stream `(seed, id)`.
pub fn gold_record(tax: &Taxonomy, env: &EnvConfig, seed: u64, id: u64) -> DatasetRecord {
    let base = tax.split_classes(Split::Base);
    let episode_seed = rng::derive_seed(seed, Purpose::DataRecord, &[id]);
    let mut r = rng::Rng::seed_from_u64(episode_seed);
    let ep = sample_episode(tax, &base, env, id, &mut r);
    let (first, second, ctx) = build_gold_trace(&ep, tax, &env.fidelity, &mut r);
    DatasetRecord {
        id,
        episode: EpisodeRef {
            taxonomy: taxonomy_fingerprint(tax),
            seed: episode_seed,
        },
        first_turn_text: serialize_first_turn(&first),
        second_turn_text: serialize_second_turn(&second),
        tool_outputs: tool_outputs(tax, &ep, &ctx),
        gold_label: tax.class(ep.gold).label.clone(),
        assessment: Assessment::PASS,
    }
}

/// Generates `records` gold traces over the base split, corrupts the
/// configured fraction and assesses everything.
pub fn build_dataset(tax: &Taxonomy, cfg: &DataGenConfig) -> Result<Dataset, DatagenError> {
    if cfg.records == 0 {
        return Err(DatagenError::InvalidParams("records must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.corruption_rate) {
        return Err(DatagenError::InvalidParams("corruption_rate must lie in [0, 1]".into()));
    }
    if cfg.corruption_rate > 0.0 && cfg.corruptions.is_empty() {
        return Err(DatagenError::InvalidParams("no corruption kinds configured".into()));
    }
    if tax.split_classes(Split::Base).is_empty() {
        return Err(EnvError::EmptySplit.into());
    }
    let mut records = Vec::with_capacity(cfg.records);
    let mut injected = Vec::with_capacity(cfg.records);
    for id in 0..cfg.records as u64 {
        let mut record = gold_record(tax, &cfg.env, cfg.seed, id);
        let mut r = rng::stream(cfg.seed, Purpose::Corruption, &[id]);
        let kind = if r.gen::<f64>() < cfg.corruption_rate {
            let kind = *cfg.corruptions.choose(&mut r).unwrap();
            corrupt(tax, &mut record, kind, &mut r);
            Some(kind)
        } else {
            None
        };
        record.assessment = assess(tax, &record);
        records.push(record);
        injected.push(kind);
    }
    Ok(Dataset { records, injected })
}

pub fn write_records<'a, W: Write>(records: impl IntoIterator<Item = &'a DatasetRecord>, mut w: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_report<W: Write>(lines: &[ReportLine], mut w: W) -> io::Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads line-delimited records; blank lines are skipped.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<DatasetRecord>, DatagenError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatagenError::Format {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Supervised targets for one record: the tool flags, sub-motion listing and
/// answer it encodes, featurized against its recorded context.
pub fn sft_example(tax: &Taxonomy, record: &DatasetRecord) -> Result<SftExample, DatagenError> {
    let bad = |e: TraceError| DatagenError::Mismatch {
        id: record.id,
        msg: e.to_string(),
    };
    let first = parse_first_turn(&record.first_turn_text).map_err(bad)?;
    let second = parse_second_turn(&record.second_turn_text).map_err(bad)?;
    let ctx = context_from_record(tax, record)?;
    let steps = actions_from_trace(tax, &first, &second, &ctx)?;
    Ok(SftExample {
        record_id: record.id,
        instruction: 0,
        steps,
        target: record.gold_label.clone(),
    })
}

/// Like [`sft_example`] but takes the trace at its word, as an unfiltered
/// pipeline would: claimed sub-motions missing from the context are added to
/// it, and an answer missing from the candidate list is appended as a
/// candidate. Traces that do not parse or name unknown labels still fail.
pub fn sft_example_unchecked(tax: &Taxonomy, record: &DatasetRecord) -> Result<SftExample, DatagenError> {
    let bad = |e: TraceError| DatagenError::Mismatch {
        id: record.id,
        msg: e.to_string(),
    };
    let first = parse_first_turn(&record.first_turn_text).map_err(bad)?;
    let mut second = parse_second_turn(&record.second_turn_text).map_err(bad)?;
    let mut ctx = context_from_record(tax, record)?;
    for m in &second.submotions {
        if let Some(t) = tax.lookup_token(&m.body_part, &m.descriptor) {
            if !ctx.contains(t) {
                ctx.tokens.push(t);
            }
        }
    }
    if !second.candidates.iter().any(|c| c.label == second.answer) && tax.lookup_label(&second.answer).is_some() {
        second.candidates.push(CandidateScore {
            label: second.answer.clone(),
            score: 0.0,
        });
    }
    let steps = actions_from_trace(tax, &first, &second, &ctx)?;
    Ok(SftExample {
        record_id: record.id,
        instruction: 0,
        steps,
        target: record.gold_label.clone(),
    })
}

/// Converts every record that can be featurized; the rest are returned by id.
pub fn sft_examples(tax: &Taxonomy, records: &[DatasetRecord]) -> (Vec<SftExample>, Vec<u64>) {
    featurize(tax, records, sft_example)
}

/// [`sft_example_unchecked`] over a record set.
pub fn sft_examples_unchecked(tax: &Taxonomy, records: &[DatasetRecord]) -> (Vec<SftExample>, Vec<u64>) {
    featurize(tax, records, sft_example_unchecked)
}

fn featurize(
    tax: &Taxonomy,
    records: &[DatasetRecord],
    f: fn(&Taxonomy, &DatasetRecord) -> Result<SftExample, DatagenError>,
) -> (Vec<SftExample>, Vec<u64>) {
    let mut ok = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for r in records {
        match f(tax, r) {
            Ok(ex) => ok.push(ex),
            Err(_) => skipped.push(r.id),
        }
    }
    (ok, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_taxonomy, NoiseConfig, TaxonomyParams};

    fn tax() -> Taxonomy {
        generate_taxonomy(&TaxonomyParams {
            seed: 7,
            ..Default::default()
        })
        .unwrap()
    }

    fn noiseless() -> EnvConfig {
        EnvConfig {
            noise: NoiseConfig::uniform(0.0),
            ..Default::default()
        }
    }

    #[test]
    fn scores_round_half_up() {
        assert_eq!(match_score(1.0), 10.0);
        assert_eq!(match_score(0.5), 5.0);
        assert_eq!(match_score(0.25), 3.0);
        assert_eq!(match_score(0.75), 8.0);
        assert_eq!(match_score(0.0), 0.0);
    }

    #[test]
    fn noiseless_gold_trace_answers_gold_with_full_score() {
        let t = tax();
        let env = noiseless();
        for id in 0..100 {
            let rec = gold_record(&t, &env, 3, id);
            let second = parse_second_turn(&rec.second_turn_text).unwrap();
            assert_eq!(second.answer, rec.gold_label);
            let gold = second.candidates.iter().find(|c| c.label == rec.gold_label).unwrap();
            assert_eq!(gold.score, 10.0);
            assert_eq!(assess(&t, &rec), Assessment::PASS);
        }
    }

    #[test]
    fn half_shared_candidate_scores_five() {
        let t = tax();
        let env = noiseless();
        let mut seen = false;
        for id in 0..200 {
            let rec = gold_record(&t, &env, 4, id);
            let gold = t.lookup_label(&rec.gold_label).unwrap();
            let second = parse_second_turn(&rec.second_turn_text).unwrap();
            for c in &second.candidates {
                let other = t.lookup_label(&c.label).unwrap();
                if other != gold && t.shared(gold, other) == 2 {
                    assert_eq!(c.score, 5.0);
                    seen = true;
                }
            }
        }
        assert!(seen);
    }

    #[test]
    fn gold_records_round_trip_and_pass() {
        let t = tax();
        let env = EnvConfig::default();
        for id in 0..300 {
            let rec = gold_record(&t, &env, 5, id);
            let first = parse_first_turn(&rec.first_turn_text).unwrap();
            let second = parse_second_turn(&rec.second_turn_text).unwrap();
            assert_eq!(serialize_first_turn(&first), rec.first_turn_text);
            assert_eq!(serialize_second_turn(&second), rec.second_turn_text);
            assert_eq!(assess(&t, &rec), Assessment::PASS);
            let ep = episode_from_record(&t, &env, &rec).unwrap();
            assert_eq!(first.decisions, ep.informative);
            sft_example(&t, &rec).unwrap();
        }
    }

    #[test]
    fn each_corruption_trips_its_rule() {
        let t = tax();
        let env = EnvConfig::default();
        for id in 0..100 {
            for kind in Corruption::ALL {
                let mut rec = gold_record(&t, &env, 6, id);
                let mut r = rng::stream(6, Purpose::Corruption, &[id]);
                corrupt(&t, &mut rec, kind, &mut r);
                assert_eq!(assess(&t, &rec), Assessment::fail(kind.expected_reason()), "{kind:?}");
            }
        }
    }

    #[test]
    fn assess_is_pure() {
        let t = tax();
        let mut rec = gold_record(&t, &EnvConfig::default(), 1, 0);
        corrupt(&t, &mut rec, Corruption::Hallucination, &mut rng::stream(0, Purpose::Corruption, &[]));
        assert_eq!(assess(&t, &rec), assess(&t, &rec));
    }

    #[test]
    fn dataset_is_deterministic_and_filters_by_rate() {
        let t = tax();
        let cfg = DataGenConfig {
            records: 400,
            corruption_rate: 0.3,
            seed: 9,
            ..Default::default()
        };
        let a = build_dataset(&t, &cfg).unwrap();
        let b = build_dataset(&t, &cfg).unwrap();
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        write_records(a.passing(), &mut fa).unwrap();
        write_records(b.passing(), &mut fb).unwrap();
        assert_eq!(fa, fb);
        for (r, inj) in a.records.iter().zip(&a.injected) {
            assert_eq!(r.assessment.passed(), inj.is_none());
        }
        let back = read_records(fa.as_slice()).unwrap();
        assert_eq!(back.len(), a.passing().count());

        let clean = build_dataset(&t, &DataGenConfig { corruption_rate: 0.0, ..cfg }).unwrap();
        assert_eq!(clean.pass_rate(), 1.0);
    }

    #[test]
    fn rejects_bad_params() {
        let t = tax();
        assert!(build_dataset(&t, &DataGenConfig { records: 0, ..Default::default() }).is_err());
        assert!(build_dataset(&t, &DataGenConfig { corruption_rate: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn unchecked_featurization_trusts_hallucinated_listings() {
        let t = tax();
        let env = EnvConfig::default();
        let mut r = rng::stream(1, Purpose::Corruption, &[]);
        for id in 0..50 {
            let clean = gold_record(&t, &env, 4, id);
            assert_eq!(sft_example(&t, &clean).unwrap(), sft_example_unchecked(&t, &clean).unwrap());
            for kind in [Corruption::Hallucination, Corruption::AnswerOffList] {
                let mut rec = clean.clone();
                corrupt(&t, &mut rec, kind, &mut r);
                assert!(sft_example(&t, &rec).is_err());
                let ex = sft_example_unchecked(&t, &rec).unwrap();
                let second = parse_second_turn(&rec.second_turn_text).unwrap();
                assert_eq!(ex.steps.ordering.len(), second.submotions.len());
            }
            let mut rec = clean.clone();
            corrupt(&t, &mut rec, Corruption::UnknownCandidate, &mut r);
            assert!(sft_example_unchecked(&t, &rec).is_err());
        }
    }
}
