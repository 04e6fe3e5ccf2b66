//! Subcommand definitions and their implementations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use ovar_core::datagen::{self, Outcome, Reason};
use ovar_core::env::{evaluate_cross, Split, SplitSel};
use ovar_core::policy::{load_checkpoint, save_checkpoint, PolicyParams};
use ovar_core::trace::{parse_first_turn, parse_second_turn};

use crate::ablation;
use crate::pipeline;
use crate::{CliError, RunConfig};

fn config_keys_help() -> &'static str {
    static HELP: OnceLock<String> = OnceLock::new();
    HELP.get_or_init(|| {
        let d = RunConfig::default();
        let mut s = String::from("Config keys (key = default; set in --config files or with --set key=value):\n");
        for (_, key, doc) in RunConfig::KEYS {
            s.push_str(&format!("  {key} = {}\n      {doc}\n", d.get(key).unwrap_or_default()));
        }
        s
    })
}

#[derive(Debug, Parser)]
#[command(name = "ovar", version, about = "Tool-augmented GRPO for open-vocabulary action recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat key = value config file (`#` starts a comment).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Common {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a taxonomy file.
    #[command(after_help = config_keys_help())]
    GenTaxonomy {
        #[command(flatten)]
        common: Common,
    },
    /// Generate and assess an SFT dataset; writes passing records and the report.
    #[command(after_help = config_keys_help())]
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised cold start on the dataset; writes a checkpoint and loss curve.
    #[command(after_help = config_keys_help())]
    Sft {
        #[command(flatten)]
        common: Common,
    },
    /// GRPO from the SFT checkpoint (pi_ref = that checkpoint).
    #[command(after_help = config_keys_help())]
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from the uniform policy instead of the SFT checkpoint.
        #[arg(long, default_value_t = false)]
        from_scratch: bool,
        /// Override the KL coefficient.
        #[arg(long, value_name = "BETA")]
        beta: Option<f64>,
    },
    /// Top-1 evaluation of a checkpoint.
    #[command(after_help = config_keys_help())]
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate [default: checkpoint_path].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate: base, novel or all.
        #[arg(long, default_value = "all")]
        split: SplitSel,
        /// Evaluate the untrained uniform policy acting at random instead.
        #[arg(long, default_value_t = false)]
        uniform: bool,
        /// Evaluate against another taxonomy file sharing the vocabulary.
        #[arg(long, value_name = "PATH")]
        target: Option<PathBuf>,
    },
    /// Run the ablation grid and print one accuracy table.
    #[command(after_help = config_keys_help())]
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Parse and assess dataset files; exits 1 if any record fails.
    #[command(after_help = config_keys_help())]
    Lint {
        #[command(flatten)]
        common: Common,
        /// Taxonomy the records refer to [default: taxonomy_path].
        #[arg(long, value_name = "PATH")]
        taxonomy: Option<PathBuf>,
        /// Dataset files to lint.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let say = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| CliError::Io(e.to_string()));
    match &cli.command {
        Command::GenTaxonomy { common } => {
            let cfg = common.load()?;
            let tax = pipeline::taxonomy(&cfg)?;
            pipeline::write_taxonomy(&tax, &cfg.taxonomy_path)?;
            say(
                out,
                format!(
                    "taxonomy: {} classes ({} base, {} novel) -> {}",
                    tax.len(),
                    tax.split_classes(Split::Base).len(),
                    tax.split_classes(Split::Novel).len(),
                    cfg.taxonomy_path.display()
                ),
            )
        }
        Command::GenData { common } => gen_data(&common.load()?, out),
        Command::Sft { common } => {
            let cfg = common.load()?;
            let tax = pipeline::read_taxonomy(&cfg.taxonomy_path)?;
            let records = pipeline::read_records(&cfg.dataset_path)?;
            let (params, curve) = pipeline::sft(&tax, &records, &cfg)?;
            save_checkpoint(&params, &cfg.sft_checkpoint_path).map_err(|e| CliError::io(&cfg.sft_checkpoint_path, e))?;
            pipeline::write_jsonl(&curve, &cfg.sft_metrics_path)?;
            let (first, last) = (curve.first().map(|p| p.loss), curve.last().map(|p| p.loss));
            say(
                out,
                format!(
                    "sft: {} records, {} steps, loss {} -> {} -> {}",
                    records.len(),
                    cfg.sft_steps,
                    first.map_or("n/a".into(), |l| format!("{l:.4}")),
                    last.map_or("n/a".into(), |l| format!("{l:.4}")),
                    cfg.sft_checkpoint_path.display()
                ),
            )
        }
        Command::Train {
            common,
            from_scratch,
            beta,
        } => {
            let mut cfg = common.load()?;
            if let Some(b) = beta {
                cfg.set("kl_coef", &b.to_string())?;
                cfg.validate()?;
            }
            let tax = pipeline::read_taxonomy(&cfg.taxonomy_path)?;
            let reference = if *from_scratch {
                PolicyParams::uniform()
            } else {
                load(&cfg.sft_checkpoint_path)?
            };
            let prompts = if cfg.rl_prompts == "dataset" {
                let records = pipeline::read_records(&cfg.dataset_path)?;
                Some(pipeline::prompts_from_records(&tax, &records, &cfg)?)
            } else {
                None
            };
            let (policy, log) = pipeline::train(&tax, &reference, prompts.as_deref(), &cfg.grpo(), &cfg.reward(), &cfg)?;
            save_checkpoint(&policy, &cfg.checkpoint_path).map_err(|e| CliError::io(&cfg.checkpoint_path, e))?;
            pipeline::write_jsonl(&log, &cfg.metrics_path)?;
            let last = log.last();
            say(
                out,
                format!(
                    "train: {} iterations, final mean_reward {}, mean_kl {} -> {}",
                    log.len(),
                    last.map_or("n/a".into(), |m| format!("{:.4}", m.mean_reward)),
                    last.map_or("n/a".into(), |m| format!("{:.4}", m.mean_kl)),
                    cfg.checkpoint_path.display()
                ),
            )
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            uniform,
            target,
        } => {
            let cfg = common.load()?;
            let tax = pipeline::read_taxonomy(&cfg.taxonomy_path)?;
            let report = if *uniform {
                pipeline::uniform_baseline(&tax, *split, &cfg)?
            } else {
                let policy = load(checkpoint.as_deref().unwrap_or(&cfg.checkpoint_path))?;
                match target {
                    Some(path) => {
                        let target_tax = pipeline::read_taxonomy(path)?;
                        evaluate_cross(&policy, &tax, &target_tax, &cfg.env(), cfg.eval_episodes, cfg.seed)
                            .map_err(|e| CliError::Config(e.to_string()))?
                    }
                    None => pipeline::eval(&policy, &tax, *split, &cfg)?,
                }
            };
            let json = serde_json::to_string(&report).map_err(|e| CliError::Io(e.to_string()))?;
            std::fs::write(&cfg.eval_path, format!("{json}\n")).map_err(|e| CliError::io(&cfg.eval_path, e))?;
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            say(
                out,
                format!(
                    "eval: accuracy {:.4} base_acc {} novel_acc {} hm {} ({} episodes) -> {}",
                    report.accuracy,
                    fmt(report.base_accuracy),
                    fmt(report.novel_accuracy),
                    fmt(report.harmonic_mean),
                    report.episodes,
                    cfg.eval_path.display()
                ),
            )
        }
        Command::Ablate { common } => {
            let cfg = common.load()?;
            let table = ablation::run(&cfg)?;
            let checks = ablation::check_orderings(&table.summary);
            let mut rows: Vec<serde_json::Value> = Vec::new();
            for r in &table.runs {
                rows.push(serde_json::json!({ "kind": "run", "result": r }));
            }
            for s in &table.summary {
                rows.push(serde_json::json!({ "kind": "summary", "result": s }));
            }
            for c in &checks {
                rows.push(serde_json::json!({ "kind": "ordering", "result": c }));
            }
            pipeline::write_jsonl(&rows, &cfg.ablation_path)?;
            say(out, ablation::render_table(&table.summary))?;
            for c in &checks {
                let mark = if c.holds { "ok" } else { "VIOLATED" };
                say(out, format!("{mark:>8}  {}  ({})", c.claim, c.detail))?;
            }
            Ok(())
        }
        Command::Lint { common, taxonomy, paths } => {
            let cfg = common.load()?;
            let tax = pipeline::read_taxonomy(taxonomy.as_deref().unwrap_or(&cfg.taxonomy_path))?;
            lint(&tax, paths, out)
        }
    }
}

fn load(path: &Path) -> Result<PolicyParams, CliError> {
    load_checkpoint(path).map_err(|e| CliError::io(path, e))
}

fn gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tax = pipeline::read_taxonomy(&cfg.taxonomy_path)?;
    let data = pipeline::dataset(&tax, cfg)?;
    let passing: Vec<_> = data.passing().cloned().collect();
    pipeline::write_jsonl(&passing, &cfg.dataset_path)?;
    pipeline::write_jsonl(&data.report(), &cfg.report_path)?;
    let total = data.records.len();
    let mut line = format!(
        "gen-data: {total} records, pass {} ({:.1}%), fail {}",
        passing.len(),
        100.0 * data.pass_rate(),
        total - passing.len()
    );
    for reason in [
        Reason::ParseFailure,
        Reason::AnswerNotCandidate,
        Reason::UnknownCandidate,
        Reason::UnverifiedSubmotion,
        Reason::ScoreOutOfRange,
    ] {
        let n = data
            .records
            .iter()
            .filter(|r| r.assessment.reason == Some(reason))
            .count();
        if n > 0 {
            line.push_str(&format!(", rule ({}) {n}", reason.rule()));
        }
    }
    writeln!(out, "{line} -> {}", cfg.dataset_path.display()).map_err(|e| CliError::Io(e.to_string()))
}

fn lint(tax: &ovar_core::env::Taxonomy, paths: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    let mut failures = 0usize;
    let mut total = 0usize;
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| CliError::Io(e.to_string()));
    for path in paths {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            total += 1;
            let record: datagen::DatasetRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    failures += 1;
                    w(out, format!("{}:{}: malformed record: {e}", path.display(), n + 1))?;
                    continue;
                }
            };
            let verdict = datagen::assess(tax, &record);
            if verdict.verdict == Outcome::Fail {
                failures += 1;
                let reason = verdict.reason.expect("failures carry a reason");
                let detail = match reason {
                    Reason::ParseFailure | Reason::ScoreOutOfRange => parse_first_turn(&record.first_turn_text)
                        .err()
                        .or_else(|| parse_second_turn(&record.second_turn_text).err())
                        .map(|e| format!(": {e}"))
                        .unwrap_or_default(),
                    _ => String::new(),
                };
                w(
                    out,
                    format!(
                        "{}:{}: record {}: rule ({}) {:?}{detail}",
                        path.display(),
                        n + 1,
                        record.id,
                        reason.rule(),
                        reason
                    ),
                )?;
            }
        }
    }
    if total == 0 {
        w(out, "warning: 0 records".into())?;
    }
    w(out, format!("lint: {total} records, {failures} failing"))?;
    if failures > 0 {
        return Err(CliError::Lint(format!("{failures} of {total} records failed")));
    }
    Ok(())
}
