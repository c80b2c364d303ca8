//! Exact tabular MDP machinery.
//!
//! Everything here is computed by dense linear solves and serves as ground
//! truth for the sampled objectives and solvers built on top of it. Value
//! tables are `n_states × n_actions` matrices indexed `[(s, a)]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// A value, weight or reward table over state-action pairs.
pub type Table = DMatrix<f64>;

const STOCHASTIC_TOL: f64 = 1e-12;
const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// The observed reward is `r(s, a)` itself.
    Deterministic,
    /// The observed reward is Bernoulli with mean `r(s, a)`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `P[s][a][s']`.
    transition: Vec<f64>,
    reward_mean: Table,
    reward_kind: Vec<RewardKind>,
    discount: f64,
    initial_dist: DVector<f64>,
}

impl TabularMdp {
    /// `transition[s][a]` is the next-state distribution of `(s, a)`.
    /// `reward_kind` holds one entry per `(s, a)` in row-major order.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward_mean: Table,
        reward_kind: Vec<RewardKind>,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, row) in transition.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            for (a, next) in row.iter().enumerate() {
                if next.len() != n_states {
                    return Err(Error::InvalidMdp(format!(
                        "P[{s}][{a}] has length {}, expected {n_states}",
                        next.len()
                    )));
                }
                flat.extend_from_slice(next);
            }
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition: flat,
            reward_mean,
            reward_kind,
            discount,
            initial_dist: DVector::from_vec(initial_dist),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// A single-state MDP with `discount = 0`, i.e. a multi-armed bandit.
    pub fn bandit(arm_means: &[f64], kinds: &[RewardKind]) -> Result<Self> {
        let n = arm_means.len();
        TabularMdp::new(
            vec![vec![vec![1.0]; n]],
            Table::from_row_slice(1, n, arm_means),
            kinds.to_vec(),
            0.0,
            vec![1.0],
        )
    }

    fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if self.reward_mean.shape() != (ns, na) {
            return Err(Error::InvalidMdp(format!(
                "reward table has shape {:?}, expected {:?}",
                self.reward_mean.shape(),
                (ns, na)
            )));
        }
        if self.reward_kind.len() != ns * na {
            return Err(Error::InvalidMdp(format!(
                "{} reward kinds for {} state-action pairs",
                self.reward_kind.len(),
                ns * na
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidMdp(format!("discount {} not in [0, 1)", self.discount)));
        }
        if self.initial_dist.len() != ns {
            return Err(Error::InvalidMdp("initial distribution has wrong length".into()));
        }
        check_distribution(self.initial_dist.as_slice())
            .map_err(|m| Error::InvalidMdp(format!("initial distribution: {m}")))?;
        for s in 0..ns {
            for a in 0..na {
                check_distribution(self.next_dist(s, a))
                    .map_err(|m| Error::InvalidMdp(format!("P[{s}][{a}]: {m}")))?;
                let r = self.reward_mean[(s, a)];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidMdp(format!("reward r[{s}][{a}] = {r} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn v_max(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    pub fn reward_mean(&self) -> &Table {
        &self.reward_mean
    }

    pub fn reward_kind(&self, s: usize, a: usize) -> RewardKind {
        self.reward_kind[s * self.n_actions + a]
    }

    pub fn reward_kinds(&self) -> &[RewardKind] {
        &self.reward_kind
    }

    pub fn initial_dist(&self) -> &DVector<f64> {
        &self.initial_dist
    }

    /// `P(· | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_dist(s, a)[next]
    }

    /// Draws one observed reward at `(s, a)`.
    pub fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.reward_mean[(s, a)];
        match self.reward_kind(s, a) {
            RewardKind::Deterministic => mean,
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// True if `r` can be observed at `(s, a)`.
    pub fn reward_in_support(&self, s: usize, a: usize, r: f64) -> bool {
        match self.reward_kind(s, a) {
            RewardKind::Deterministic => r == self.reward_mean[(s, a)],
            RewardKind::Bernoulli => r == 0.0 || r == 1.0,
        }
    }

    /// State-to-state transition matrix under `pi`: `P_pi[s][s'] = Σ_a pi(a|s) P(s'|s,a)`.
    fn state_transition(&self, pi: &Policy) -> DMatrix<f64> {
        let ns = self.n_states;
        let mut p = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..self.n_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (next, &q) in self.next_dist(s, a).iter().enumerate() {
                    p[(s, next)] += w * q;
                }
            }
        }
        p
    }

    /// `E_{s' ~ P(·|s,a)}[v(s')]` for every `(s, a)`.
    pub fn expected_next(&self, v: &DVector<f64>) -> Table {
        Table::from_fn(self.n_states, self.n_actions, |s, a| {
            self.next_dist(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum()
        })
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.shape() != self.shape() {
            return Err(Error::Shape {
                expected: self.shape(),
                got: pi.shape(),
            });
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("entry {x} is not a nonnegative number"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// A stationary stochastic policy, `probs[(s, a)] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Table,
}

impl Policy {
    pub fn new(probs: Table) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            check_distribution(&row).map_err(|m| Error::InvalidPolicy(format!("row {s}: {m}")))?;
        }
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::InvalidPolicy("empty table".into()));
        }
        Ok(Policy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: Table::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Table::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range in state {s}")));
            }
            probs[(s, a)] = 1.0;
        }
        Policy::new(probs)
    }

    pub(crate) fn from_table_unchecked(probs: Table) -> Self {
        Policy { probs }
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.probs.shape()
    }

    /// `f(s, pi) = Σ_a pi(a|s) f(s, a)` for every state.
    pub fn state_values(&self, f: &Table) -> DVector<f64> {
        DVector::from_fn(self.probs.nrows(), |s, _| {
            self.probs.row(s).iter().zip(f.row(s).iter()).map(|(p, x)| p * x).sum()
        })
    }
}

/// Discounted state-action occupancy `d^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    d: Table,
}

impl OccupancyMeasure {
    pub fn table(&self) -> &Table {
        &self.d
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[(s, a)]
    }

    /// `E_d[g(s, a)]`.
    pub fn expect(&self, g: &Table) -> f64 {
        self.d.component_mul(g).sum()
    }

    pub fn state_marginal(&self) -> DVector<f64> {
        DVector::from_fn(self.d.nrows(), |s, _| self.d.row(s).sum())
    }

    /// Max over states of `|d(s) - (1-γ)ρ(s) - γ Σ_{s,a} d(s,a) P(s'|s,a)|`.
    pub fn flow_residual(&self, mdp: &TabularMdp) -> f64 {
        let ns = mdp.n_states();
        let mut inflow = mdp.initial_dist() * (1.0 - mdp.discount());
        for s in 0..ns {
            for a in 0..mdp.n_actions() {
                let mass = self.d[(s, a)];
                for (next, p) in mdp.next_dist(s, a).iter().enumerate() {
                    inflow[next] += mdp.discount() * mass * p;
                }
            }
        }
        (self.state_marginal() - inflow).amax()
    }
}

/// Exact action-value function of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    q: Table,
}

impl QFunction {
    pub fn table(&self) -> &Table {
        &self.q
    }

    pub fn into_table(self) -> Table {
        self.q
    }
}

fn solve_checked(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let x = lhs
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::Solve { residual: f64::INFINITY })?;
    let residual = (&lhs * &x - &rhs).amax();
    if residual.is_nan() || residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::Solve { residual });
    }
    Ok(x)
}

/// Solves `(I - γ P_piᵀ) d_s = (1-γ) ρ` for the state occupancy and spreads it
/// over actions with `pi`.
pub fn compute_occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    mdp.check_policy(pi)?;
    let ns = mdp.n_states();
    let lhs = DMatrix::identity(ns, ns) - mdp.state_transition(pi).transpose() * mdp.discount();
    let rhs = mdp.initial_dist() * (1.0 - mdp.discount());
    let ds = solve_checked(lhs, rhs)?;
    let d = Table::from_fn(ns, mdp.n_actions(), |s, a| ds[s] * pi.prob(s, a));
    Ok(OccupancyMeasure { d })
}

/// State values `V^pi` from `(I - γ P_pi) v = r_pi`.
pub fn compute_v(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    mdp.check_policy(pi)?;
    let ns = mdp.n_states();
    let lhs = DMatrix::identity(ns, ns) - mdp.state_transition(pi) * mdp.discount();
    solve_checked(lhs, pi.state_values(mdp.reward_mean()))
}

/// `Q^pi = r + γ P V^pi`, with the Bellman residual checked.
pub fn compute_q(mdp: &TabularMdp, pi: &Policy) -> Result<QFunction> {
    let v = compute_v(mdp, pi)?;
    let q = mdp.reward_mean() + mdp.expected_next(&v) * mdp.discount();
    let residual = (&q - bellman_apply(mdp, pi, &q)?).amax();
    if residual.is_nan() || residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::Solve { residual });
    }
    Ok(QFunction { q })
}

/// Normalized return `J(pi) = (1-γ) E_ρ[V^pi(s)]`.
pub fn j_value(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let v = compute_v(mdp, pi)?;
    Ok((1.0 - mdp.discount()) * mdp.initial_dist().dot(&v))
}

/// `J(pi)` computed as `E_{d^pi}[r]`, the occupancy route.
pub fn j_value_occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    Ok(compute_occupancy(mdp, pi)?.expect(mdp.reward_mean()))
}

/// `(T^pi f)(s, a) = r(s, a) + γ E_{s'}[f(s', pi)]`.
pub fn bellman_apply(mdp: &TabularMdp, pi: &Policy, f: &Table) -> Result<Table> {
    mdp.check_policy(pi)?;
    if f.shape() != mdp.shape() {
        return Err(Error::Shape {
            expected: mdp.shape(),
            got: f.shape(),
        });
    }
    Ok(mdp.reward_mean() + mdp.expected_next(&pi.state_values(f)) * mdp.discount())
}

/// `f - T^pi f`.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, f: &Table) -> Result<Table> {
    Ok(f - bellman_apply(mdp, pi, f)?)
}

/// Return of the uniform mixture of `policies`, i.e. the mean of their returns.
pub fn mixture_j_value(mdp: &TabularMdp, policies: &[Policy]) -> Result<f64> {
    if policies.is_empty() {
        return Err(Error::Empty("policy list"));
    }
    let mut total = 0.0;
    for pi in policies {
        total += j_value(mdp, pi)?;
    }
    Ok(total / policies.len() as f64)
}

/// Occupancy of the uniform mixture: the average of member occupancies.
pub fn mixture_occupancy(mdp: &TabularMdp, policies: &[Policy]) -> Result<OccupancyMeasure> {
    if policies.is_empty() {
        return Err(Error::Empty("policy list"));
    }
    let mut d = Table::zeros(mdp.n_states(), mdp.n_actions());
    for pi in policies {
        d += compute_occupancy(mdp, pi)?.d;
    }
    d /= policies.len() as f64;
    Ok(OccupancyMeasure { d })
}

/// Monte-Carlo estimate of `J(pi)` from truncated rollouts.
#[derive(Debug, Clone, Copy)]
pub struct RolloutEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub horizon: usize,
    /// Upper bound on `|J_truncated - J|`, i.e. `γ^H`.
    pub truncation_bias: f64,
}

/// Rollout horizon `ceil(log(1e-8) / log γ)`; 1 for `γ = 0`.
pub fn rollout_horizon(discount: f64) -> usize {
    if discount == 0.0 {
        1
    } else {
        (1e-8f64.ln() / discount.ln()).ceil() as usize
    }
}

/// Estimates `J(pi)` by averaging `(1-γ) Σ_t γ^t r_t` over `n_traj` rollouts
/// truncated at [`rollout_horizon`].
pub fn rollout_j_value<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    pi: &Policy,
    n_traj: usize,
    rng: &mut R,
) -> Result<RolloutEstimate> {
    mdp.check_policy(pi)?;
    if n_traj < 2 {
        return Err(Error::Config("need at least two rollouts".into()));
    }
    let horizon = rollout_horizon(mdp.discount());
    let gamma = mdp.discount();
    let rho: Vec<f64> = mdp.initial_dist().iter().copied().collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_traj {
        let mut s = sample_index(&rho, rng);
        let (mut ret, mut disc) = (0.0, 1.0);
        for _ in 0..horizon {
            let row: Vec<f64> = pi.probs.row(s).iter().copied().collect();
            let a = sample_index(&row, rng);
            ret += disc * mdp.sample_reward(s, a, rng);
            disc *= gamma;
            s = sample_index(mdp.next_dist(s, a), rng);
        }
        let g = (1.0 - gamma) * ret;
        sum += g;
        sum_sq += g * g;
    }
    let n = n_traj as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(RolloutEstimate {
        mean,
        std_error: (var / n).sqrt(),
        horizon,
        truncation_bias: gamma.powi(horizon as i32),
    })
}

/// Inverse-CDF draw from a finite distribution.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn single() -> TabularMdp {
        TabularMdp::new(
            vec![vec![vec![1.0]]],
            Table::from_element(1, 1, 1.0),
            vec![RewardKind::Deterministic],
            0.9,
            vec![1.0],
        )
        .unwrap()
    }

    /// s0 -> s1 under a0, s1 absorbing; r(s0)=0, r(s1)=1.
    fn chain(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            Table::from_row_slice(2, 1, &[0.0, 1.0]),
            vec![RewardKind::Deterministic; 2],
            gamma,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn occupancy_single_pair_is_one() {
        let mut mdp = single();
        mdp.discount = 0.5;
        let d = compute_occupancy(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
    }

    #[test]
    fn occupancy_chain_matches_geometric_series() {
        // Oracle: d(s0) = (1-γ) γ^0, d(s1) = (1-γ) Σ_{t≥1} γ^t.
        let gamma: f64 = 0.5;
        let d0 = 1.0 - gamma;
        let d1: f64 = (1..200).map(|t| (1.0 - gamma) * gamma.powi(t)).sum();
        let d = compute_occupancy(&chain(gamma), &Policy::uniform(2, 1)).unwrap();
        assert!(close(d.get(0, 0), d0, 1e-12));
        assert!(close(d.get(1, 0), d1, 1e-12));
        assert!(close(d.table().sum(), 1.0, 1e-12));
    }

    #[test]
    fn q_single_state_is_vmax() {
        let q = compute_q(&single(), &Policy::uniform(1, 1)).unwrap();
        assert!(close(q.table()[(0, 0)], 10.0, 1e-10));
    }

    #[test]
    fn q_zero_reward_is_zero() {
        let mut mdp = chain(0.7);
        mdp.reward_mean.fill(0.0);
        let q = compute_q(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert_eq!(q.table().amax(), 0.0);
    }

    #[test]
    fn q_chain_matches_geometric_series() {
        let gamma: f64 = 0.5;
        let q0: f64 = (1..200).map(|t| gamma.powi(t)).sum();
        let q1: f64 = (0..200).map(|t| gamma.powi(t)).sum();
        let q = compute_q(&chain(gamma), &Policy::uniform(2, 1)).unwrap();
        assert!(close(q.table()[(0, 0)], q0, 1e-12));
        assert!(close(q.table()[(1, 0)], q1, 1e-12));
    }

    #[test]
    fn j_value_cases() {
        let bandit = TabularMdp::bandit(&[0.6, 0.3], &[RewardKind::Deterministic; 2]).unwrap();
        let pi = Policy::deterministic(&[0], 2).unwrap();
        assert!(close(j_value(&bandit, &pi).unwrap(), 0.6, 1e-15));

        let mut ones = chain(0.8);
        ones.reward_mean.fill(1.0);
        assert!(close(j_value(&ones, &Policy::uniform(2, 1)).unwrap(), 1.0, 1e-12));

        let c = chain(0.5);
        let pi = Policy::uniform(2, 1);
        assert!(close(j_value(&c, &pi).unwrap(), 0.5, 1e-12));
        assert!(close(j_value_occupancy(&c, &pi).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn bellman_apply_cases() {
        let c = chain(0.5);
        let pi = Policy::uniform(2, 1);
        let zero = Table::zeros(2, 1);
        assert_eq!(bellman_apply(&c, &pi, &zero).unwrap(), *c.reward_mean());

        let f = Table::from_row_slice(2, 1, &[0.0, 2.0]);
        assert!(close(bellman_apply(&c, &pi, &f).unwrap()[(0, 0)], 1.0, 1e-15));

        let q = compute_q(&c, &pi).unwrap();
        let tq = bellman_apply(&c, &pi, q.table()).unwrap();
        assert!((tq - q.table()).amax() < 1e-12);

        let bad = Table::zeros(3, 1);
        assert!(matches!(bellman_apply(&c, &pi, &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn mixture_j_cases() {
        let bandit = TabularMdp::bandit(&[0.2, 0.6], &[RewardKind::Deterministic; 2]).unwrap();
        let p1 = Policy::deterministic(&[0], 2).unwrap();
        let p2 = Policy::deterministic(&[1], 2).unwrap();
        assert!(close(mixture_j_value(&bandit, std::slice::from_ref(&p1)).unwrap(), 0.2, 1e-15));
        assert!(close(mixture_j_value(&bandit, &[p1.clone(), p1.clone()]).unwrap(), 0.2, 1e-15));
        assert!(close(mixture_j_value(&bandit, &[p1, p2]).unwrap(), 0.4, 1e-15));
        assert_eq!(mixture_j_value(&bandit, &[]), Err(Error::Empty("policy list")));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TabularMdp::bandit(&[1.5], &[RewardKind::Deterministic]).is_err());
        assert!(TabularMdp::new(
            vec![vec![vec![0.5, 0.4]], vec![vec![0.0, 1.0]]],
            Table::zeros(2, 1),
            vec![RewardKind::Deterministic; 2],
            0.5,
            vec![1.0, 0.0],
        )
        .is_err());
        assert!(Policy::new(Table::from_row_slice(1, 2, &[0.7, 0.7])).is_err());
        assert!(Policy::new(Table::from_row_slice(1, 2, &[1.2, -0.2])).is_err());
    }
}
