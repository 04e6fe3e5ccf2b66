//! Random head actions and a finite-difference checker shared by the
//! gradient tests.
#![allow(dead_code)]

use ovar_core::policy::{Bucket, HeadActions, PolicyParams, MATCH_DIM, NUM_PARAMS, RANK_DIM};
use ovar_core::trace::ToolFlags;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_params<R: Rng>(rng: &mut R, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::uniform();
    let v: Vec<f64> = (0..NUM_PARAMS).map(|_| rng.gen_range(-scale..scale)).collect();
    p.set_flat(&v);
    p.temperature = rng.gen_range(0.5..2.0);
    p
}

pub fn random_actions<R: Rng>(rng: &mut R) -> HeadActions {
    let bucket = [Bucket::Low, Bucket::Mid, Bucket::High][rng.gen_range(0..3)];
    let items = rng.gen_range(1..=5);
    let rank_features: Vec<[f64; RANK_DIM]> = (0..items).map(|_| std::array::from_fn(|_| rng.gen())).collect();
    let mut ordering: Vec<usize> = (0..items).collect();
    ordering.shuffle(rng);
    ordering.truncate(rng.gen_range(1..=items));
    let cands = rng.gen_range(2..=4);
    let match_features: Vec<[f64; MATCH_DIM]> = (0..cands).map(|_| std::array::from_fn(|_| rng.gen())).collect();
    HeadActions {
        bucket,
        tools: ToolFlags::from_array(std::array::from_fn(|_| rng.gen())),
        rank_features,
        ordering,
        match_features,
        answer: rng.gen_range(0..cands),
    }
}

/// Relative error with magnitudes below `floor` measured against `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between `grad` and central differences of `f`.
pub fn fd_check(params: &PolicyParams, grad: &[f64], h: f64, floor: f64, f: impl Fn(&PolicyParams) -> f64) -> f64 {
    let base = params.flat();
    let mut worst: f64 = 0.0;
    for i in 0..NUM_PARAMS {
        let mut p = params.clone();
        let mut v = base.clone();
        v[i] = base[i] + h;
        p.set_flat(&v);
        let plus = f(&p);
        v[i] = base[i] - h;
        p.set_flat(&v);
        let minus = f(&p);
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_err(grad[i], fd, floor));
    }
    worst
}
