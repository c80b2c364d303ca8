#![allow(dead_code)]

use acrab::classes::ValueClass;
use acrab::data::stream_rng;
use acrab::mdp::{Policy, RewardKind, TabularMdp, Table};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 99)
}

pub fn simplex(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    // Occasional exact zeros exercise sparse supports.
    let mut x: Vec<f64> = (0..len)
        .map(|_| if rng.random::<f64>() < 0.15 { 0.0 } else { rng.random::<f64>() + 1e-3 })
        .collect();
    if x.iter().all(|v| *v == 0.0) {
        x[rng.random_range(0..len)] = 1.0;
    }
    let t: f64 = x.iter().sum();
    x.iter().map(|v| v / t).collect()
}

pub fn full_simplex(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 0.05).collect();
    let t: f64 = x.iter().sum();
    x.iter().map(|v| v / t).collect()
}

pub fn random_mdp(rng: &mut impl Rng, ns: usize, na: usize, discount: f64) -> TabularMdp {
    let transition = (0..ns).map(|_| (0..na).map(|_| simplex(rng, ns)).collect()).collect();
    let reward = Table::from_fn(ns, na, |_, _| rng.random::<f64>());
    let kinds = (0..ns * na)
        .map(|_| if rng.random::<bool>() { RewardKind::Bernoulli } else { RewardKind::Deterministic })
        .collect();
    TabularMdp::new(transition, reward, kinds, discount, simplex(rng, ns)).unwrap()
}

pub fn random_policy(rng: &mut impl Rng, ns: usize, na: usize) -> Policy {
    let mut t = Table::zeros(ns, na);
    for s in 0..ns {
        for (a, p) in simplex(rng, na).into_iter().enumerate() {
            t[(s, a)] = p;
        }
    }
    Policy::new(t).unwrap()
}

pub fn full_support_policy(rng: &mut impl Rng, ns: usize, na: usize) -> Policy {
    let mut t = Table::zeros(ns, na);
    for s in 0..ns {
        for (a, p) in full_simplex(rng, na).into_iter().enumerate() {
            t[(s, a)] = p;
        }
    }
    Policy::new(t).unwrap()
}

pub fn random_table(rng: &mut impl Rng, ns: usize, na: usize, hi: f64) -> Table {
    Table::from_fn(ns, na, |_, _| rng.random::<f64>() * hi)
}

pub fn random_class(rng: &mut impl Rng, mdp: &TabularMdp, size: usize) -> ValueClass {
    let (ns, na) = mdp.shape();
    let v = mdp.v_max();
    ValueClass::new((0..size).map(|_| random_table(rng, ns, na, v)).collect(), v).unwrap()
}

/// Random dimensions and discount for a seeded instance.
pub fn dims(rng: &mut impl Rng) -> (usize, usize, f64) {
    (rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(0.0..0.95))
}
