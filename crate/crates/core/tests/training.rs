use ovar_core::datagen::{build_dataset, sft_examples, DataGenConfig};
use ovar_core::env::{evaluate, generate_taxonomy, EnvConfig, SplitSel, TaxonomyParams};
use ovar_core::grpo::{train, GrpoConfig, RolloutSetup};
use ovar_core::policy::{sft_train, PolicyParams, SftConfig};
use ovar_core::reward::RewardConfig;

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn grpo_from_uniform_raises_reward_and_is_deterministic() {
    let tax = generate_taxonomy(&TaxonomyParams::default()).unwrap();
    let env = EnvConfig::default();
    let reward = RewardConfig::default();
    let setup = RolloutSetup {
        taxonomy: &tax,
        env: &env,
        reward: &reward,
    };
    let cfg = GrpoConfig {
        iterations: 200,
        ..Default::default()
    };
    let start = PolicyParams::uniform();
    let mut a = start.clone();
    let log_a = train(&mut a, &start, None, setup, &cfg).unwrap();
    let mut b = start.clone();
    let log_b = train(&mut b, &start, None, setup, &cfg).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a, b);

    let early = mean(log_a[..20].iter().map(|m| m.mean_reward));
    let late = mean(log_a[180..].iter().map(|m| m.mean_reward));
    assert!(late > early + 0.15, "mean reward {early} -> {late}");
    assert!(log_a.iter().all(|m| (0.0..=1.0).contains(&m.clip_fraction) && m.mean_kl >= 0.0));
}

#[test]
fn sft_then_grpo_does_not_lose_novel_accuracy() {
    let tax = generate_taxonomy(&TaxonomyParams::default()).unwrap();
    let env = EnvConfig::default();
    let data = build_dataset(&tax, &DataGenConfig::default()).unwrap();
    let passing: Vec<_> = data.passing().cloned().collect();
    let (examples, _) = sft_examples(&tax, &passing);
    let mut sft = PolicyParams::uniform();
    let curve = sft_train(&mut sft, &examples, &SftConfig::default()).unwrap();
    assert!(curve.last().unwrap() < curve.first().unwrap());

    let reward = RewardConfig::default();
    let setup = RolloutSetup {
        taxonomy: &tax,
        env: &env,
        reward: &reward,
    };
    let mut policy = sft.clone();
    train(&mut policy, &sft, None, setup, &GrpoConfig { iterations: 300, ..Default::default() }).unwrap();
    let before = evaluate(&sft, &tax, &env, SplitSel::Novel, 500, 0).unwrap().accuracy;
    let after = evaluate(&policy, &tax, &env, SplitSel::Novel, 500, 0).unwrap().accuracy;
    assert!(after >= before, "novel accuracy {before} -> {after}");
}
