mod common;

use common::{fd_check, random_actions, random_params};
use ovar_core::grpo::{compute_advantages, grpo_loss, grpo_objective, kl_estimate, kl_objective, GrpoConfig, Trajectory};
use ovar_core::policy::actions_logprob;
use ovar_core::reward::RewardBreakdown;
use ovar_core::rng::{stream, Purpose};
use proptest::prelude::*;
use rand::Rng;

fn traj(member: usize, logp_theta: f64, logp_old: f64, logp_ref: f64, advantage: f64) -> Trajectory {
    Trajectory {
        episode_id: 0,
        member,
        first_text: String::new(),
        second_text: String::new(),
        actions: None,
        logp_theta,
        logp_old,
        logp_ref,
        reward: RewardBreakdown::default(),
        advantage,
    }
}

fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn kl_is_nonnegative(a in -30.0..0.0f64, b in -30.0..0.0f64) {
        let k = kl_estimate(a, b, 20.0).unwrap();
        prop_assert!(k >= 0.0);
        if a != b {
            prop_assert!(k > 0.0 || (a - b).abs() < 1e-7);
        }
        prop_assert_eq!(kl_estimate(a, a, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn advantages_are_normalized(rewards in proptest::collection::vec(-5.0..5.0f64, 2..9)) {
        let g = rewards.len();
        let adv = compute_advantages(&rewards, g).unwrap();
        let (_, sd) = population_stats(&rewards);
        let (m, s) = population_stats(&adv);
        prop_assert!(m.abs() < 1e-9);
        if sd >= 1e-12 {
            prop_assert!((s - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(adv.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn advantages_ignore_affine_rescaling(
        rewards in proptest::collection::vec(-5.0..5.0f64, 2..9),
        scale in 0.01..100.0f64,
        shift in -50.0..50.0f64,
    ) {
        let g = rewards.len();
        let (_, sd) = population_stats(&rewards);
        prop_assume!(sd > 1e-6);
        let a = compute_advantages(&rewards, g).unwrap();
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        let b = compute_advantages(&moved, g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_ignores_group_order(
        rows in proptest::collection::vec((-5.0..0.0f64, -5.0..0.0f64, -5.0..0.0f64, -2.0..2.0f64), 4),
        rot in 0usize..4,
    ) {
        let cfg = GrpoConfig::default();
        let group: Vec<Trajectory> = rows.iter().enumerate().map(|(i, r)| traj(i, r.0, r.1, r.2, r.3)).collect();
        let mut permuted = group.clone();
        permuted.rotate_left(rot);
        permuted.swap(0, 3);
        let a = grpo_loss(&group, &cfg).unwrap();
        let b = grpo_loss(&permuted, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn group_size_is_enforced() {
    assert!(compute_advantages(&[1.0, 2.0, 3.0], 4).is_err());
    let cfg = GrpoConfig::default();
    let group: Vec<Trajectory> = (0..3).map(|i| traj(i, -1.0, -1.0, -1.0, 0.0)).collect();
    assert!(grpo_loss(&group, &cfg).is_err());
    assert!(kl_estimate(f64::NAN, 0.0, 20.0).is_err());
}

fn random_groups<R: Rng>(params: &ovar_core::policy::PolicyParams, cfg: &GrpoConfig, rng: &mut R) -> Vec<Vec<Trajectory>> {
    let eps = cfg.clip_epsilon;
    (0..2)
        .map(|_| {
            let rewards: Vec<f64> = (0..cfg.group_size).map(|_| rng.gen_range(0.0..3.0)).collect();
            let adv = compute_advantages(&rewards, cfg.group_size).unwrap();
            (0..cfg.group_size)
                .map(|i| {
                    let actions = random_actions(rng);
                    let logp = actions_logprob(params, &actions);
                    // keep the ratio away from the clip kinks, where the
                    // objective is not differentiable
                    let logp_old = loop {
                        let old = logp + rng.gen_range(-0.4..0.4);
                        let rho = (logp - old).exp();
                        if (rho - (1.0 - eps)).abs() > 1e-3 && (rho - (1.0 + eps)).abs() > 1e-3 {
                            break old;
                        }
                    };
                    let mut t = traj(i, logp, logp_old, logp + rng.gen_range(-1.5..1.5), adv[i]);
                    t.actions = Some(actions);
                    t
                })
                .collect()
        })
        .collect()
}

#[test]
fn objective_gradients_match_finite_differences() {
    let cfg = GrpoConfig {
        kl_coef: 0.3,
        ..GrpoConfig::default()
    };
    let mut rng = stream(11, Purpose::Init, &[]);
    let mut worst_loss: f64 = 0.0;
    let mut worst_kl: f64 = 0.0;
    for _ in 0..100 {
        let params = random_params(&mut rng, 1.5);
        let groups = random_groups(&params, &cfg, &mut rng);
        let eval = grpo_objective(&params, &groups, &cfg).unwrap();
        worst_loss = worst_loss.max(fd_check(&params, &eval.grad, 1e-5, 1e-3, |p| {
            grpo_objective(p, &groups, &cfg).unwrap().loss
        }));
        let (_, kl_grad) = kl_objective(&params, &groups, cfg.log_ratio_clamp);
        worst_kl = worst_kl.max(fd_check(&params, &kl_grad, 1e-5, 1e-3, |p| {
            kl_objective(p, &groups, cfg.log_ratio_clamp).0
        }));
    }
    assert!(worst_loss < 1e-4, "grpo objective rel err {worst_loss:e}");
    assert!(worst_kl < 1e-4, "kl rel err {worst_kl:e}");
}

#[test]
fn stored_and_recomputed_losses_agree() {
    let cfg = GrpoConfig::default();
    let mut rng = stream(12, Purpose::Init, &[]);
    let params = random_params(&mut rng, 1.0);
    let groups = random_groups(&params, &cfg, &mut rng);
    let stored: f64 = groups.iter().map(|g| grpo_loss(g, &cfg).unwrap()).sum::<f64>() / groups.len() as f64;
    let eval = grpo_objective(&params, &groups, &cfg).unwrap();
    assert!((stored - eval.loss).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&eval.clip_fraction));
}

#[test]
fn no_clipping_at_the_old_policy() {
    let cfg = GrpoConfig::default();
    let mut rng = stream(13, Purpose::Init, &[]);
    let params = random_params(&mut rng, 1.0);
    let mut groups = random_groups(&params, &cfg, &mut rng);
    for t in groups.iter_mut().flatten() {
        t.logp_old = t.logp_theta;
    }
    assert_eq!(grpo_objective(&params, &groups, &cfg).unwrap().clip_fraction, 0.0);
}
