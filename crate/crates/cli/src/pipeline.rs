//! The pipeline stages as library calls, shared by the commands, the ablation
//! grid and the acceptance suite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ovar_core::datagen::{self, Dataset, DatasetRecord};
use ovar_core::env::{evaluate, evaluate_with_mode, generate_taxonomy, Episode, EvalReport, SplitSel, Taxonomy};
use ovar_core::grpo::{self, GrpoConfig, GrpoError, RolloutSetup, StepMetrics};
use ovar_core::policy::{self, Mode, PolicyParams};
use ovar_core::reward::RewardConfig;
use serde::Serialize;

use crate::{CliError, RunConfig};

pub fn taxonomy(cfg: &RunConfig) -> Result<Taxonomy, CliError> {
    generate_taxonomy(&cfg.taxonomy()).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_taxonomy(path: &Path) -> Result<Taxonomy, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Taxonomy::read_jsonl(BufReader::new(f)).map_err(|e| CliError::io(path, e))
}

pub fn write_taxonomy(tax: &Taxonomy, path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    tax.write_jsonl(BufWriter::new(f)).map_err(|e| CliError::io(path, e))
}

pub fn dataset(tax: &Taxonomy, cfg: &RunConfig) -> Result<Dataset, CliError> {
    datagen::build_dataset(tax, &cfg.datagen()?).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    datagen::read_records(BufReader::new(f)).map_err(|e| CliError::io(path, e))
}

/// Writes serializable rows as line-delimited JSON.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SftPoint {
    pub step: usize,
    pub loss: f64,
}

/// SFT from the uniform initialization on the records that featurize.
pub fn sft(tax: &Taxonomy, records: &[DatasetRecord], cfg: &RunConfig) -> Result<(PolicyParams, Vec<SftPoint>), CliError> {
    let (examples, _) = datagen::sft_examples(tax, records);
    let mut params = PolicyParams::uniform();
    if cfg.sft_steps == 0 {
        return Ok((params, Vec::new()));
    }
    let curve = policy::sft_train(&mut params, &examples, &cfg.sft()).map_err(|e| CliError::Io(e.to_string()))?;
    if curve.iter().any(|l| !l.is_finite()) || !params.is_finite() {
        return Err(CliError::Numerical("SFT loss became non-finite".into()));
    }
    let points = curve.into_iter().enumerate().map(|(step, loss)| SftPoint { step, loss }).collect();
    Ok((params, points))
}

/// SFT checkpoint for a configuration, built entirely in memory.
pub fn sft_from_scratch(tax: &Taxonomy, cfg: &RunConfig) -> Result<PolicyParams, CliError> {
    let data = dataset(tax, cfg)?;
    let passing: Vec<DatasetRecord> = data.passing().cloned().collect();
    Ok(sft(tax, &passing, cfg)?.0)
}

fn grpo_error(e: GrpoError) -> CliError {
    match e {
        GrpoError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Numerical(other.to_string()),
    }
}

/// GRPO starting from `reference` (which is also pi_ref).
pub fn train(
    tax: &Taxonomy,
    reference: &PolicyParams,
    prompts: Option<&[Episode]>,
    grpo_cfg: &GrpoConfig,
    reward: &RewardConfig,
    cfg: &RunConfig,
) -> Result<(PolicyParams, Vec<StepMetrics>), CliError> {
    let env = cfg.env();
    let mut policy = reference.snapshot();
    let setup = RolloutSetup {
        taxonomy: tax,
        env: &env,
        reward,
    };
    let log = grpo::train(&mut policy, reference, prompts, setup, grpo_cfg).map_err(grpo_error)?;
    if !policy.is_finite() {
        return Err(CliError::Numerical("policy parameters became non-finite".into()));
    }
    Ok((policy, log))
}

/// GRPO prompts reconstructed from dataset records.
pub fn prompts_from_records(tax: &Taxonomy, records: &[DatasetRecord], cfg: &RunConfig) -> Result<Vec<Episode>, CliError> {
    let env = cfg.env();
    records
        .iter()
        .map(|r| datagen::episode_from_record(tax, &env, r).map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn eval(policy: &PolicyParams, tax: &Taxonomy, split: SplitSel, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    evaluate(policy, tax, &cfg.env(), split, cfg.eval_episodes, cfg.seed).map_err(|e| CliError::Config(e.to_string()))
}

/// The untrained policy acting at random: tool flags, ranking and answer all
/// sampled from the uniform heads.
pub fn uniform_baseline(tax: &Taxonomy, split: SplitSel, cfg: &RunConfig) -> Result<EvalReport, CliError> {
    evaluate_with_mode(
        &PolicyParams::uniform(),
        tax,
        &cfg.env(),
        split,
        cfg.eval_episodes,
        cfg.seed,
        Mode::Sample,
    )
    .map_err(|e| CliError::Config(e.to_string()))
}
