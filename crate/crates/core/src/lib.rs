//! Tool-augmented reinforcement learning for open-vocabulary action
//! recognition, at desk scale: a synthetic sub-motion environment, a small
//! factorized policy, a rule-based hierarchical reward, and GRPO.

pub mod datagen;
pub mod env;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trace;

pub use datagen::{assess, build_dataset, build_gold_trace, Assessment, Corruption, DataGenConfig, DatasetRecord, Reason};
pub use env::{evaluate, generate_taxonomy, EnvConfig, Episode, EvalReport, SplitSel, Taxonomy, TaxonomyParams};
pub use grpo::{compute_advantages, grpo_loss, kl_estimate, train, GrpoConfig, StepMetrics, Trajectory};
pub use policy::{sft_loss, PolicyParams};
pub use reward::{sub_motion_reward, total_reward, RewardBreakdown, RewardConfig};
pub use trace::{parse_first_turn, parse_second_turn, FirstTurnTrace, SecondTurnTrace, ToolFlags, ToolKind};
