//! Instance builders: the two-arm counterexample bandit, the large-ℓ∞
//! coverage bandit, and random covered MDPs with realizable classes.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::classes::{
    audit_realizability_f, audit_w_realizability, audited_q_tables, marginal_weights, AuditPolicySet,
    ValueClass, WeightClass,
};
use crate::data::{exact_mu, stream_rng};
use crate::error::{Error, Result};
use crate::mdp::{compute_q, Policy, RewardKind, TabularMdp, Table};

use super::instance_file::InstanceFile;

/// Quantities of the counterexample bandit that the report needs besides the
/// instance itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleParams {
    pub n: usize,
    pub beta: f64,
    pub delta: f64,
    pub mu_a2: f64,
}

impl CounterexampleParams {
    pub fn new(n: usize, beta: f64) -> Result<Self> {
        if n < 100 {
            return Err(Error::Config(format!("n must be at least 100, got {n}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let delta = (beta / n as f64).min(0.1);
        let mu_a2 = 1.0 / (n as f64 * delta * delta);
        if mu_a2 > 1.0 {
            return Err(Error::Config(format!(
                "mu(a2) = 1/(n·Δ²) = {mu_a2} exceeds 1 (n = {n}, Δ = {delta}); need n·Δ² ≥ 1"
            )));
        }
        Ok(CounterexampleParams { n, beta, delta, mu_a2 })
    }
}

/// Two-arm bandit where squared-Bellman pessimism prefers the worse arm.
///
/// Arm 0 pays `1/2 + Δ` deterministically, arm 1 is Bernoulli(1/2);
/// `Δ = min(β/n, 1/10)` and the behavior puts `1/(nΔ²)` on arm 1.
pub fn build_appendix_d_instance(n: usize, beta: f64) -> Result<InstanceFile> {
    let p = CounterexampleParams::new(n, beta)?;
    let d = p.delta;
    let mdp = TabularMdp::bandit(&[0.5 + d, 0.5], &[RewardKind::Deterministic, RewardKind::Bernoulli])?;
    let behavior = Policy::new(Table::from_row_slice(1, 2, &[1.0 - p.mu_a2, p.mu_a2]))?;
    let pi1 = Policy::deterministic(&[0], 2)?;
    let pi2 = Policy::deterministic(&[1], 2)?;
    let f_class = ValueClass::new(
        vec![
            Table::from_row_slice(1, 2, &[0.5 + d, 0.5]),
            Table::from_row_slice(1, 2, &[0.5 + d, 0.5 + 2.0 * d]),
        ],
        1.0,
    )?;
    let mu = exact_mu(&mdp, &behavior)?;
    let w1 = marginal_weights(&mdp, &pi1, &mu)?;
    let b_w = w1.max().max(1.0);
    let w_class = WeightClass::new(vec![Table::from_element(1, 2, 1.0), w1], b_w)?;
    Ok(InstanceFile {
        provenance: format!("two-arm counterexample bandit n={n} beta={beta} delta={d} mu_a2={}", p.mu_a2),
        mdp,
        behavior,
        target: pi1.clone(),
        f_class,
        w_class,
        audit: AuditPolicySet::new(vec![pi1, pi2])?,
    })
}

/// Two-arm bandit with `μ = (1-ε², ε²)` and target `(1-ε, ε)`: bounded
/// ℓ2 concentrability but ℓ∞ concentrability `1/ε`.
pub fn build_example_27_instance(epsilon: f64) -> Result<InstanceFile> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let e2 = epsilon * epsilon;
    let mdp = TabularMdp::bandit(&[0.5, 0.5], &[RewardKind::Bernoulli, RewardKind::Bernoulli])?;
    let behavior = Policy::new(Table::from_row_slice(1, 2, &[1.0 - e2, e2]))?;
    let target = Policy::new(Table::from_row_slice(1, 2, &[1.0 - epsilon, epsilon]))?;
    let mu = exact_mu(&mdp, &behavior)?;
    let w = marginal_weights(&mdp, &target, &mu)?;
    let b_w = w.max().max(1.0);
    let w_class = WeightClass::new(vec![Table::from_element(1, 2, 1.0), w], b_w)?;
    // Q = r for every policy; the indicator shifts give nonzero Bellman errors.
    let f_class = ValueClass::new(
        vec![
            Table::from_row_slice(1, 2, &[0.5, 0.5]),
            Table::from_row_slice(1, 2, &[0.6, 0.5]),
            Table::from_row_slice(1, 2, &[0.5, 0.6]),
        ],
        1.0,
    )?;
    Ok(InstanceFile {
        provenance: format!("large l-infinity concentrability bandit epsilon={epsilon}"),
        mdp,
        behavior: behavior.clone(),
        target: target.clone(),
        f_class,
        w_class,
        audit: AuditPolicySet::new(vec![target, behavior])?,
    })
}

/// Knobs for [`build_realizable_family_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// Extra random policies added to the audit grid beyond π*, behavior and
    /// uniform.
    pub random_audit: usize,
    pub f_distractors: usize,
    pub w_distractors: usize,
    /// Probability mass the behavior policy puts on π*'s action, spread
    /// evenly otherwise. `None` draws a random full-support behavior.
    pub behavior_greed: Option<f64>,
    pub max_retries: usize,
}

impl FamilyParams {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        FamilyParams {
            n_states,
            n_actions,
            discount: 0.8,
            random_audit: 2,
            f_distractors: 8,
            w_distractors: 4,
            behavior_greed: None,
            max_retries: 20,
        }
    }
}

fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let x: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = x.iter().sum();
    x.into_iter().map(|v| v / total).collect()
}

fn random_policy<R: Rng + ?Sized>(ns: usize, na: usize, rng: &mut R) -> Result<Policy> {
    let mut t = Table::zeros(ns, na);
    for s in 0..ns {
        for (a, p) in random_simplex(na, rng).into_iter().enumerate() {
            t[(s, a)] = p;
        }
    }
    Policy::new(t)
}

/// Deterministic optimal policy by policy iteration (greedy ties to the
/// lowest action).
pub fn optimal_policy(mdp: &TabularMdp) -> Result<Policy> {
    let (ns, na) = mdp.shape();
    let mut actions = vec![0usize; ns];
    for _ in 0..10 * ns * na + 10 {
        let q = compute_q(mdp, &Policy::deterministic(&actions, na)?)?.into_table();
        let mut changed = false;
        for (s, cur) in actions.iter_mut().enumerate() {
            let mut best = *cur;
            for a in 0..na {
                if q[(s, a)] > q[(s, best)] + 1e-12 {
                    best = a;
                }
            }
            if best != *cur {
                *cur = best;
                changed = true;
            }
        }
        if !changed {
            return Policy::deterministic(&actions, na);
        }
    }
    Err(Error::Solve { residual: f64::NAN })
}

fn try_family(params: &FamilyParams, seed: u64, attempt: u64) -> Result<InstanceFile> {
    let (ns, na) = (params.n_states, params.n_actions);
    let mut rng = stream_rng(seed, 1000 + attempt);
    let transition: Vec<Vec<Vec<f64>>> = (0..ns)
        .map(|_| (0..na).map(|_| random_simplex(ns, &mut rng)).collect())
        .collect();
    let reward = Table::from_fn(ns, na, |_, _| rng.random_range(0.1..0.9));
    let kinds = vec![RewardKind::Bernoulli; ns * na];
    let initial = random_simplex(ns, &mut rng);
    let mdp = TabularMdp::new(transition, reward, kinds, params.discount, initial)?;
    let v_max = mdp.v_max();

    let pi_star = optimal_policy(&mdp)?;
    let behavior = match params.behavior_greed {
        Some(g) => {
            if !(0.0..1.0).contains(&g) || na < 2 {
                return Err(Error::Config(format!("behavior_greed must lie in [0, 1), got {g}")));
            }
            let rest = (1.0 - g) / (na - 1) as f64;
            Policy::new(Table::from_fn(ns, na, |s, a| {
                if pi_star.prob(s, a) > 0.5 {
                    g
                } else {
                    rest
                }
            }))?
        }
        None => random_policy(ns, na, &mut rng)?,
    };
    let mut audit = vec![pi_star.clone(), behavior.clone(), Policy::uniform(ns, na)];
    for _ in 0..params.random_audit {
        audit.push(random_policy(ns, na, &mut rng)?);
    }
    let audit = AuditPolicySet::new(audit)?;

    let mut fs = audited_q_tables(&mdp, &audit)?;
    let q_star = fs[0].clone();
    for i in 0..params.f_distractors {
        // Perturbations of Q^{π*} at geometrically spread scales.
        let scale = 0.3 * v_max * 0.5f64.powi(i as i32);
        fs.push(Table::from_fn(ns, na, |s, a| {
            (q_star[(s, a)] + scale * rng.random_range(-1.0..1.0)).clamp(0.0, v_max)
        }));
    }
    let f_class = ValueClass::new(fs, v_max)?;

    let mu = exact_mu(&mdp, &behavior)?;
    let w_star = marginal_weights(&mdp, &pi_star, &mu)?;
    let b_w = w_star.max().max(1.0);
    let cap = mu.l2_norm(&w_star).max(1.0);
    let mut ws = vec![Table::from_element(ns, na, 1.0), w_star];
    for _ in 0..params.w_distractors {
        let raw = Table::from_fn(ns, na, |_, _| rng.random_range(0.0..b_w));
        let norm = mu.l2_norm(&raw);
        let shrink = if norm > cap { cap / norm } else { 1.0 };
        ws.push(raw * shrink);
    }
    let w_class = WeightClass::new(ws, b_w)?;

    let gap = audit_realizability_f(&mdp, &f_class, &audit)?;
    let (w_ok, _) = audit_w_realizability(&mdp, &pi_star, &mu, &w_class)?;
    if gap > 1e-12 || !w_ok {
        return Err(Error::InvalidClass(format!(
            "audit failed: realizability gap {gap}, w-realizable {w_ok}"
        )));
    }
    Ok(InstanceFile {
        provenance: format!(
            "random covered MDP family n_states={ns} n_actions={na} discount={} seed={seed} attempt={attempt}",
            params.discount
        ),
        mdp,
        behavior,
        target: pi_star,
        f_class,
        w_class,
        audit,
    })
}

/// Random MDP with a full-support behavior policy, F containing `Q^π` for
/// every audited policy, and W containing `w^{π*}`. Both audits are checked
/// before returning.
pub fn build_realizable_family_with(params: &FamilyParams, seed: u64) -> Result<InstanceFile> {
    if params.n_states == 0 || params.n_states > 10 || params.n_actions == 0 || params.n_actions > 5 {
        return Err(Error::Config(format!(
            "family dimensions must be 1..=10 states and 1..=5 actions, got {}x{}",
            params.n_states, params.n_actions
        )));
    }
    let mut last = None;
    for attempt in 0..params.max_retries as u64 {
        match try_family(params, seed, attempt) {
            Ok(inst) => return Ok(inst),
            Err(e) if e.is_validation() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidClass(format!(
        "no covered realizable instance after {} attempts (seed {seed}): {}",
        params.max_retries,
        last.map_or_else(|| "no attempts".to_string(), |e| e.to_string())
    )))
}

pub fn build_realizable_family(n_states: usize, n_actions: usize, seed: u64) -> Result<InstanceFile> {
    build_realizable_family_with(&FamilyParams::new(n_states, n_actions), seed)
}
