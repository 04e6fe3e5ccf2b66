//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ovar_core::datagen::{Corruption, DataGenConfig};
use ovar_core::env::{EnvConfig, FidelityConfig, NoiseConfig, TaxonomyParams};
use ovar_core::grpo::GrpoConfig;
use ovar_core::policy::SftConfig;
use ovar_core::reward::RewardConfig;

use crate::CliError;

trait Value: Sized {
    fn parse_value(raw: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(raw: &str) -> Result<Self, String> {
                raw.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(u64, usize, f64);

impl Value for bool {
    fn parse_value(raw: &str) -> Result<Self, String> {
        match raw {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err("expected true or false".into()),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for String {
    fn parse_value(raw: &str) -> Result<Self, String> {
        Ok(raw.to_string())
    }
    fn show(&self) -> String {
        self.clone()
    }
}

macro_rules! run_config {
    ($( $section:literal { $( $field:ident : $ty:ty = $default:expr ; $doc:literal )* } )*) => {
        /// Every tunable of a run. Keys are the field names.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($( #[doc = $doc] pub $field: $ty, )*)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($( $field: $default, )*)* }
            }
        }

        impl RunConfig {
            /// `(section, key, doc)` for every key, in file order.
            pub const KEYS: &'static [(&'static str, &'static str, &'static str)] = &[
                $($( ($section, stringify!($field), $doc), )*)*
            ];

            pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
                let raw = raw.trim();
                match key.trim() {
                    $($( stringify!($field) => {
                        self.$field = Value::parse_value(raw)
                            .map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))?;
                    } )*)*
                    other => return Err(CliError::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($( stringify!($field) => Some(self.$field.show()), )*)*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    "run" {
        seed: u64 = 0; "Master seed for taxonomy, data, training and evaluation streams."
    }
    "grpo" {
        group_size: usize = 4; "Trajectories sampled per prompt (G)."
        clip_epsilon: f64 = 0.2; "Ratio clipping range."
        kl_coef: f64 = 0.04; "KL penalty weight (beta)."
        learning_rate: f64 = 0.05; "GRPO step size (the 3B/7B model setting is 5e-7)."
        iterations: usize = 600; "GRPO iterations."
        log_ratio_clamp: f64 = 20.0; "Clamp on log-ratios before exponentiation."
        batch_size: usize = 8; "Prompts per GRPO iteration (also 8 in the 3B/7B model setting)."
        rl_prompts: String = "fresh".to_string(); "Prompt source for GRPO: fresh (sampled base-split episodes) or dataset."
    }
    "taxonomy" {
        num_classes: usize = 18; "Action classes."
        submotions_per_class: usize = 4; "Sub-motions per class."
        overlap: f64 = 0.5; "Fraction of sub-motions shared by adjacent classes."
        base_fraction: f64 = 2.0 / 3.0; "Fraction of classes in the base split."
    }
    "environment" {
        noise_drop: f64 = 0.4; "Probability each gold sub-motion is missing."
        noise_distractor: f64 = 0.4; "Probability a look-alike background action adds distractors."
        noise_shuffle: f64 = 0.4; "Probability surviving sub-motions are observed out of order."
        fidelity_detection: f64 = 0.9; "Probability detection removes each distractor."
        fidelity_pose: f64 = 0.9; "Probability pose estimation restores each dropped sub-motion."
    }
    "reward" {
        c_fmt: f64 = 1.0; "Format reward magnitude."
        c_tool: f64 = 0.5; "Tool reward magnitude."
        binary_only: bool = false; "Use only the accuracy reward as the training signal."
        use_tool_reward: bool = true; "Include the tool-usage reward."
        use_sub_reward: bool = true; "Include the sub-motion reward."
    }
    "data" {
        records: usize = 1000; "Records generated by gen-data (5,000 at full scale)."
        corruption_rate: f64 = 0.0; "Fraction of generated records corrupted for filter testing."
        corruptions: String = "hallucination".to_string(); "Comma-separated corruption kinds: break_syntax, answer_off_list, unknown_candidate, hallucination, score_out_of_range."
    }
    "sft" {
        sft_steps: usize = 200; "Full-batch SFT gradient steps."
        sft_learning_rate: f64 = 0.5; "SFT step size."
    }
    "evaluation" {
        eval_episodes: usize = 1000; "Episodes per evaluated split."
    }
    "ablation" {
        ablation_seeds: usize = 5; "Seeds per ablation cell."
        ablation_cells: String = "full,no_rl,no_sft,no_tool_reward,no_sub_reward,base_rewards_only,g2,g4,g6".to_string(); "Ablation cells to run."
    }
    "paths" {
        taxonomy_path: PathBuf = "taxonomy.jsonl".into(); "Taxonomy file."
        dataset_path: PathBuf = "dataset.jsonl".into(); "Assessed dataset (passing records)."
        report_path: PathBuf = "assessment.jsonl".into(); "Assessment report (all records)."
        sft_checkpoint_path: PathBuf = "sft.ckpt".into(); "Checkpoint written by sft, loaded by train."
        sft_metrics_path: PathBuf = "sft_metrics.jsonl".into(); "SFT loss curve."
        checkpoint_path: PathBuf = "policy.ckpt".into(); "Checkpoint written by train, loaded by eval."
        metrics_path: PathBuf = "metrics.jsonl".into(); "Per-iteration GRPO metrics."
        eval_path: PathBuf = "eval.json".into(); "Evaluation report."
        ablation_path: PathBuf = "ablation.jsonl".into(); "Ablation results."
    }
}

impl Value for PathBuf {
    fn parse_value(raw: &str) -> Result<Self, String> {
        if raw.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(raw))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then `--set key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set {o:?}: expected key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grpo().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must lie in [0, 1]")))
            }
        };
        unit("noise_drop", self.noise_drop)?;
        unit("noise_distractor", self.noise_distractor)?;
        unit("noise_shuffle", self.noise_shuffle)?;
        unit("fidelity_detection", self.fidelity_detection)?;
        unit("fidelity_pose", self.fidelity_pose)?;
        unit("corruption_rate", self.corruption_rate)?;
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(CliError::Config("overlap must lie in [0, 1)".into()));
        }
        if !(self.sft_learning_rate >= 0.0 && self.sft_learning_rate.is_finite()) {
            return Err(CliError::Config("sft_learning_rate must be non-negative".into()));
        }
        if !matches!(self.rl_prompts.as_str(), "fresh" | "dataset") {
            return Err(CliError::Config("rl_prompts must be fresh or dataset".into()));
        }
        self.corruption_kinds()?;
        self.ablation_cell_list()?;
        Ok(())
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_epsilon: self.clip_epsilon,
            kl_coef: self.kl_coef,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            log_ratio_clamp: self.log_ratio_clamp,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn taxonomy(&self) -> TaxonomyParams {
        TaxonomyParams {
            seed: self.seed,
            num_classes: self.num_classes,
            submotions_per_class: self.submotions_per_class,
            overlap: self.overlap,
            base_fraction: self.base_fraction,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            noise: NoiseConfig {
                drop: self.noise_drop,
                distractor: self.noise_distractor,
                shuffle: self.noise_shuffle,
            },
            fidelity: FidelityConfig {
                detection: self.fidelity_detection,
                pose: self.fidelity_pose,
            },
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            c_fmt: self.c_fmt,
            c_tool: self.c_tool,
            binary_only: self.binary_only,
            use_tool: self.use_tool_reward,
            use_sub: self.use_sub_reward,
        }
    }

    pub fn sft(&self) -> SftConfig {
        SftConfig {
            steps: self.sft_steps,
            learning_rate: self.sft_learning_rate,
        }
    }

    pub fn corruption_kinds(&self) -> Result<Vec<Corruption>, CliError> {
        self.corruptions
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                serde_json::from_value(serde_json::Value::String(s.to_string()))
                    .map_err(|_| CliError::Config(format!("unknown corruption kind {s:?}")))
            })
            .collect()
    }

    pub fn datagen(&self) -> Result<DataGenConfig, CliError> {
        Ok(DataGenConfig {
            records: self.records,
            env: self.env(),
            corruption_rate: self.corruption_rate,
            corruptions: self.corruption_kinds()?,
            seed: self.seed,
        })
    }

    pub fn ablation_cell_list(&self) -> Result<Vec<crate::ablation::Cell>, CliError> {
        self.ablation_cells
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(CliError::Config))
            .collect()
    }

    /// The whole configuration as a commented `key = value` file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (sec, key, doc) in Self::KEYS {
            if *sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# [{sec}]");
                section = sec;
            }
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }
}
