//! Synthetic open-vocabulary action-recognition environment.

mod episode;
mod eval;
mod protocol;
mod taxonomy;

use thiserror::Error;

pub use episode::{
    apply_tools, rank_by_overlap, sample_episode, AugmentedContext, EnvConfig, Episode, FidelityConfig,
    NoiseConfig, QUERY,
};
pub use eval::{evaluate, evaluate_cross, evaluate_with_mode, harmonic_mean, ClassAccuracy, EvalReport, SplitSel};
pub use protocol::{
    actions_from_trace, bucket_for, candidates, match_features, match_submotions, rank_features, run_episode,
    trajectory_logprob, verify, Rollout,
};
pub(crate) use protocol::{first_turn_text, matching_text, mention};
pub use taxonomy::{
    default_vocabulary, generate_taxonomy, ActionClass, ClassId, Split, SubMotion, Taxonomy, TaxonomyParams,
    TokenId,
};

use crate::policy::PolicyError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("split has no classes")]
    EmptySplit,
    #[error("target sub-motion {0:?} missing from the source vocabulary")]
    VocabularyMismatch(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
