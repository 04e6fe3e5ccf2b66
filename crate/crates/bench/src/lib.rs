//! Shared fixtures for the benchmarks: the reference taxonomy, an SFT
//! checkpoint and one batch of rollout groups.

use ovar_core::datagen::{build_dataset, sft_examples, DataGenConfig};
use ovar_core::env::{generate_taxonomy, sample_episode, EnvConfig, Episode, Taxonomy, TaxonomyParams};
use ovar_core::grpo::{collect_groups, GrpoConfig, RolloutSetup, Trajectory};
use ovar_core::policy::{sft_train, PolicyParams, SftConfig, SftExample};
use ovar_core::reward::RewardConfig;
use ovar_core::rng::{stream, Purpose};

pub struct Fixture {
    pub taxonomy: Taxonomy,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub policy: PolicyParams,
    pub examples: Vec<SftExample>,
    pub episodes: Vec<Episode>,
    pub groups: Vec<Vec<Trajectory>>,
}

impl Fixture {
    pub fn setup(&self) -> RolloutSetup<'_> {
        RolloutSetup {
            taxonomy: &self.taxonomy,
            env: &self.env,
            reward: &self.reward,
        }
    }
}

pub fn fixture() -> Fixture {
    let taxonomy = generate_taxonomy(&TaxonomyParams::default()).expect("default taxonomy");
    let env = EnvConfig::default();
    let data = build_dataset(&taxonomy, &DataGenConfig::default()).expect("default dataset");
    let passing: Vec<_> = data.passing().cloned().collect();
    let (examples, _) = sft_examples(&taxonomy, &passing);
    let mut policy = PolicyParams::uniform();
    sft_train(&mut policy, &examples, &SftConfig::default()).expect("sft");
    let pool: Vec<usize> = (0..taxonomy.len()).collect();
    let grpo = GrpoConfig::default();
    let episodes: Vec<Episode> = (0..grpo.batch_size as u64)
        .map(|i| sample_episode(&taxonomy, &pool, &env, i, &mut stream(0, Purpose::TrainEpisode, &[i])))
        .collect();
    let reward = RewardConfig::default();
    let setup = RolloutSetup {
        taxonomy: &taxonomy,
        env: &env,
        reward: &reward,
    };
    let groups = collect_groups(&policy, &policy, &episodes, setup, &grpo, 0).expect("rollouts");
    Fixture {
        taxonomy,
        env,
        reward,
        grpo,
        policy,
        examples,
        episodes,
        groups,
    }
}
