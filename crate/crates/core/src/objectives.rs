//! Actor and critic objectives.
//!
//! Population versions take the exact data distribution μ; empirical versions
//! take a dataset and are evaluated from its [`DatasetSummary`], which gives
//! the same sums as a pass over the tuples.
//!
//! [`DatasetSummary`]: crate::data::DatasetSummary

use crate::classes::{ValueClass, WeightClass};
use crate::data::{DataDistribution, OfflineDataset};
use crate::error::{Error, Result};
use crate::mdp::{bellman_residual, compute_occupancy, compute_q, Policy, TabularMdp, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    /// `max_w |E_D[w (f - r - γ f(s', pi))]|`.
    WeightedAvgBellman,
    /// `|E_D[f - r - γ f(s', pi)]|`, no weight class.
    RpiAvgBellman,
    /// Squared TD error minus its minimum over F.
    AtacSquared,
}

impl RegularizerKind {
    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::WeightedAvgBellman => "acrab",
            RegularizerKind::RpiAvgBellman => "acrab-rpi",
            RegularizerKind::AtacSquared => "atac",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticObjectiveSpec {
    pub beta: f64,
    pub regularizer: RegularizerKind,
}

impl CriticObjectiveSpec {
    pub fn new(beta: f64, regularizer: RegularizerKind) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(CriticObjectiveSpec { beta, regularizer })
    }
}

/// Value of `L + β E` for one critic candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub l_value: f64,
    pub e_value: f64,
    /// Maximizing weight index, for the weighted regularizer only.
    pub argmax_w: Option<usize>,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn new(l_value: f64, e_value: f64, argmax_w: Option<usize>, beta: f64) -> Self {
        ObjectiveBreakdown {
            l_value,
            e_value,
            argmax_w,
            total: l_value + beta * e_value,
        }
    }
}

fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}

/// Largest `|value|`, lowest index on ties.
fn abs_argmax(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, v) in values.enumerate() {
        let v = v.abs();
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// `L_μ(pi, f) = E_μ[f(s, pi) - f(s, a)]`.
pub fn l_pop(mu: &DataDistribution, pi: &Policy, f: &Table) -> Result<f64> {
    check_shape(mu.table().shape(), f.shape())?;
    check_shape(mu.table().shape(), pi.shape())?;
    let fpi = pi.state_values(f);
    let adv = Table::from_fn(f.nrows(), f.ncols(), |s, a| fpi[s] - f[(s, a)]);
    Ok(mu.expect(&adv))
}

/// `L_D(pi, f) = (1/N) Σ_i (f(s_i, pi) - f(s_i, a_i))`.
pub fn l_emp(dataset: &OfflineDataset, pi: &Policy, f: &Table) -> Result<f64> {
    let sm = dataset.summary();
    check_shape(sm.shape(), f.shape())?;
    check_shape(sm.shape(), pi.shape())?;
    let fpi = pi.state_values(f);
    let adv = Table::from_fn(f.nrows(), f.ncols(), |s, a| fpi[s] - f[(s, a)]);
    Ok(sm.sum_sa(&adv) / sm.n() as f64)
}

/// `E_μ(pi, f) = max_w |E_μ[w (f - T^pi f)]|` and its maximizer.
pub fn e_pop(
    mdp: &TabularMdp,
    mu: &DataDistribution,
    pi: &Policy,
    f: &Table,
    w_class: &WeightClass,
) -> Result<(f64, usize)> {
    let res = bellman_residual(mdp, pi, f)?;
    let weighted = res.component_mul(mu.table());
    Ok(abs_argmax(
        w_class.members().iter().map(|w| w.component_mul(&weighted).sum()),
    ))
}

fn residual_sums(dataset: &OfflineDataset, pi: &Policy, f: &Table) -> Result<Table> {
    let sm = dataset.summary();
    check_shape(sm.shape(), f.shape())?;
    check_shape(sm.shape(), pi.shape())?;
    let v: Vec<f64> = pi.state_values(f).iter().copied().collect();
    Ok(sm.td_residual_sums(f, &v, dataset.discount()))
}

/// Weighted residual sum, accumulated in row-major `(s, a)` order.
fn weighted_sum(w: &Table, sums: &Table) -> f64 {
    let mut acc = 0.0;
    for s in 0..sums.nrows() {
        for a in 0..sums.ncols() {
            acc += w[(s, a)] * sums[(s, a)];
        }
    }
    acc
}

/// `E_D(pi, f) = max_w |(1/N) Σ_i w(s_i,a_i)(f(s_i,a_i) - r_i - γ f(s'_i, pi))|`.
pub fn e_emp(
    dataset: &OfflineDataset,
    pi: &Policy,
    f: &Table,
    w_class: &WeightClass,
) -> Result<(f64, usize)> {
    let sums = residual_sums(dataset, pi, f)?;
    let n = dataset.n() as f64;
    Ok(abs_argmax(
        w_class.members().iter().map(|w| weighted_sum(w, &sums) / n),
    ))
}

/// `|(1/N) Σ_i (f(s_i,a_i) - r_i - γ f(s'_i, pi))|`.
///
/// Accumulates in the same order as [`e_emp`], so the two agree bit for bit
/// when W is `{all-ones}`.
pub fn e_emp_rpi(dataset: &OfflineDataset, pi: &Policy, f: &Table) -> Result<f64> {
    let sums = residual_sums(dataset, pi, f)?;
    let mut acc = 0.0;
    for s in 0..sums.nrows() {
        for a in 0..sums.ncols() {
            acc += 1.0 * sums[(s, a)];
        }
    }
    Ok((acc / dataset.n() as f64).abs())
}

/// `(1/N) Σ_i (g(s_i,a_i) - r_i - γ f(s'_i, pi))²`.
pub fn atac_squared_term(dataset: &OfflineDataset, pi: &Policy, f: &Table, g: &Table) -> Result<f64> {
    let sm = dataset.summary();
    check_shape(sm.shape(), f.shape())?;
    check_shape(sm.shape(), g.shape())?;
    check_shape(sm.shape(), pi.shape())?;
    let v: Vec<f64> = pi.state_values(f).iter().copied().collect();
    Ok(sm.squared_td_sum(g, &v, dataset.discount()) / sm.n() as f64)
}

/// Squared TD error of `f` minus `min_{g ∈ F}` of the same loss with `f`'s
/// bootstrapped target held fixed.
pub fn e_emp_atac(dataset: &OfflineDataset, pi: &Policy, f: &Table, f_class: &ValueClass) -> Result<f64> {
    let own = atac_squared_term(dataset, pi, f, f)?;
    let mut best = f64::INFINITY;
    for g in f_class.members() {
        best = best.min(atac_squared_term(dataset, pi, f, g)?);
    }
    Ok(own - best)
}

/// Terms of the performance-difference decomposition of `J(pi) - J(pi_hat)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfDecomposition {
    /// `E_μ[f - T^{pi_hat} f]`.
    pub data_bellman: f64,
    /// `E_{d^pi}[T^{pi_hat} f - f]`.
    pub target_bellman: f64,
    /// `E_{d^pi}[f(s, pi) - f(s, pi_hat)]`.
    pub policy_gap: f64,
    /// `L_μ(pi_hat, f) - L_μ(pi_hat, Q^{pi_hat})`.
    pub pessimism_gap: f64,
}

impl PerfDecomposition {
    pub fn sum(&self) -> f64 {
        self.data_bellman + self.target_bellman + self.policy_gap + self.pessimism_gap
    }
}

/// Evaluates each decomposition term exactly. `mu` must be an occupancy
/// (of some behavior policy) for the terms to sum to `J(pi) - J(pi_hat)`.
pub fn perf_decomposition(
    mdp: &TabularMdp,
    mu: &DataDistribution,
    pi: &Policy,
    pi_hat: &Policy,
    f: &Table,
) -> Result<PerfDecomposition> {
    let res = bellman_residual(mdp, pi_hat, f)?;
    let d = compute_occupancy(mdp, pi)?;
    let f_pi = pi.state_values(f);
    let f_hat = pi_hat.state_values(f);
    let gap = Table::from_fn(f.nrows(), f.ncols(), |s, _| f_pi[s] - f_hat[s]);
    let q_hat = compute_q(mdp, pi_hat)?;
    Ok(PerfDecomposition {
        data_bellman: mu.expect(&res),
        target_bellman: -d.expect(&res),
        policy_gap: d.expect(&gap),
        pessimism_gap: l_pop(mu, pi_hat, f)? - l_pop(mu, pi_hat, q_hat.table())?,
    })
}
