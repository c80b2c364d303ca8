//! Finite hypothesis classes and the coverage/realizability audits run on them.

use crate::data::DataDistribution;
use crate::error::{Error, Result};
use crate::mdp::{bellman_residual, compute_occupancy, compute_q, OccupancyMeasure, Policy, TabularMdp, Table};

/// Absolute tolerance for membership and realizability checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Bellman-error norms below this are treated as zero by [`c_bellman`].
const ZERO_NORM: f64 = 1e-12;

fn check_members(members: &[Table], bound: f64, what: &str) -> Result<()> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidClass(format!("{what} class is empty")));
    };
    for (i, m) in members.iter().enumerate() {
        if m.shape() != first.shape() {
            return Err(Error::InvalidClass(format!("{what} member {i} has shape {:?}", m.shape())));
        }
        if let Some(x) = m.iter().find(|x| !(**x >= 0.0 && **x <= bound)) {
            return Err(Error::InvalidClass(format!(
                "{what} member {i} has entry {x} outside [0, {bound}]"
            )));
        }
    }
    Ok(())
}

/// Candidate critics `f: S×A → [0, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueClass {
    members: Vec<Table>,
    v_max: f64,
}

impl ValueClass {
    pub fn new(members: Vec<Table>, v_max: f64) -> Result<Self> {
        check_members(&members, v_max, "value")?;
        Ok(ValueClass { members, v_max })
    }

    pub fn members(&self) -> &[Table] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }
}

/// Marginalized importance weights `w: S×A → [0, b_w]`, always including the
/// all-ones table.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightClass {
    members: Vec<Table>,
    b_w: f64,
}

impl WeightClass {
    pub fn new(members: Vec<Table>, b_w: f64) -> Result<Self> {
        check_members(&members, b_w, "weight")?;
        if !members.iter().any(|w| w.iter().all(|x| *x == 1.0)) {
            return Err(Error::MissingAllOnes);
        }
        Ok(WeightClass { members, b_w })
    }

    /// `{all-ones}`.
    pub fn all_ones(n_states: usize, n_actions: usize) -> Self {
        WeightClass {
            members: vec![Table::from_element(n_states, n_actions, 1.0)],
            b_w: 1.0,
        }
    }

    pub fn members(&self) -> &[Table] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn b_w(&self) -> f64 {
        self.b_w
    }
}

/// Policies whose occupancies form the admissible distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditPolicySet {
    members: Vec<Policy>,
}

impl AuditPolicySet {
    pub fn new(members: Vec<Policy>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidClass("audit policy set is empty".into()));
        }
        Ok(AuditPolicySet { members })
    }

    pub fn members(&self) -> &[Policy] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Density ratio `d^target / μ`, zero where both vanish.
pub fn importance_weights(d: &OccupancyMeasure, mu: &DataDistribution) -> Result<Table> {
    let (ns, na) = d.table().shape();
    let mut w = Table::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let (p, q) = (d.get(s, a), mu.get(s, a));
            if q > 0.0 {
                w[(s, a)] = p / q;
            } else if p > 0.0 {
                return Err(Error::Coverage {
                    state: s,
                    action: a,
                    target_mass: p,
                });
            }
        }
    }
    Ok(w)
}

/// `w^target = d^target / μ`.
pub fn marginal_weights(mdp: &TabularMdp, target: &Policy, mu: &DataDistribution) -> Result<Table> {
    importance_weights(&compute_occupancy(mdp, target)?, mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Coefficient {
    /// `‖d/μ‖_{2,μ}`.
    pub value: f64,
    /// `E_{d^target}[w^target]`, which must equal `value²`.
    pub expected_weight: f64,
}

pub fn c_l2(mdp: &TabularMdp, target: &Policy, mu: &DataDistribution) -> Result<L2Coefficient> {
    let d = compute_occupancy(mdp, target)?;
    let w = importance_weights(&d, mu)?;
    Ok(L2Coefficient {
        value: mu.l2_norm(&w),
        expected_weight: d.expect(&w),
    })
}

pub fn c_linf(mdp: &TabularMdp, target: &Policy, mu: &DataDistribution) -> Result<f64> {
    Ok(marginal_weights(mdp, target, mu)?.max())
}

/// `max_f ‖f - T f‖²_{2,d^target} / ‖f - T f‖²_{2,μ}` over members with a
/// nonzero denominator. Returns the value and the maximizing member index
/// (lowest index on ties).
pub fn c_bellman(
    mdp: &TabularMdp,
    target: &Policy,
    mu: &DataDistribution,
    f_class: &ValueClass,
) -> Result<(f64, usize)> {
    let d = compute_occupancy(mdp, target)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, f) in f_class.members().iter().enumerate() {
        let res = bellman_residual(mdp, target, f)?;
        let sq = res.component_mul(&res);
        let den = mu.expect(&sq);
        if den.sqrt() <= ZERO_NORM {
            continue;
        }
        let ratio = d.expect(&sq) / den;
        if best.is_none_or(|(b, _)| ratio > b) {
            best = Some((ratio, i));
        }
    }
    best.ok_or(Error::DegenerateClass)
}

/// All three coefficients for one target. Uncovered targets report infinite
/// `c_l2`/`c_linf`/`c_bellman` and name the offending pair instead of failing.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrabilityReport {
    pub c_l2: f64,
    pub c_linf: f64,
    /// `None` when every member of F has zero Bellman error under μ.
    pub c_bellman: Option<f64>,
    pub witness_f: Option<usize>,
    pub uncovered: Option<(usize, usize)>,
}

impl ConcentrabilityReport {
    pub fn compute(
        mdp: &TabularMdp,
        target: &Policy,
        mu: &DataDistribution,
        f_class: &ValueClass,
    ) -> Result<Self> {
        let l2 = match c_l2(mdp, target, mu) {
            Ok(l2) => l2,
            Err(Error::Coverage { state, action, .. }) => {
                return Ok(ConcentrabilityReport {
                    c_l2: f64::INFINITY,
                    c_linf: f64::INFINITY,
                    c_bellman: Some(f64::INFINITY),
                    witness_f: None,
                    uncovered: Some((state, action)),
                })
            }
            Err(e) => return Err(e),
        };
        let linf = c_linf(mdp, target, mu)?;
        let (c_bellman, witness_f) = match c_bellman(mdp, target, mu, f_class) {
            Ok((v, i)) => (Some(v), Some(i)),
            Err(Error::DegenerateClass) => (None, None),
            Err(e) => return Err(e),
        };
        let slack = 1e-12 * linf.max(1.0);
        if l2.value * l2.value > linf + slack || l2.value > linf + slack {
            return Err(Error::Solve {
                residual: l2.value * l2.value - linf,
            });
        }
        Ok(ConcentrabilityReport {
            c_l2: l2.value,
            c_linf: linf,
            c_bellman,
            witness_f,
            uncovered: None,
        })
    }
}

/// Realizability gap of F over the audit set:
/// `max_pi min_f max_{pi'} ‖f - T^pi f‖²_{2, d^{pi'}}`.
pub fn audit_realizability_f(
    mdp: &TabularMdp,
    f_class: &ValueClass,
    policies: &AuditPolicySet,
) -> Result<f64> {
    let occupancies = policies
        .members()
        .iter()
        .map(|p| compute_occupancy(mdp, p))
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for pi in policies.members() {
        let mut best = f64::INFINITY;
        for f in f_class.members() {
            let res = bellman_residual(mdp, pi, f)?;
            let sq = res.component_mul(&res);
            let err = occupancies.iter().map(|d| d.expect(&sq)).fold(0.0, f64::max);
            best = best.min(err);
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// `C*_{ℓ2} = max_w ‖w‖_{2,μ}`.
pub fn audit_weight_class(w_class: &WeightClass, mu: &DataDistribution) -> Result<f64> {
    if !w_class.members().iter().any(|w| w.iter().all(|x| *x == 1.0)) {
        return Err(Error::MissingAllOnes);
    }
    Ok(w_class
        .members()
        .iter()
        .map(|w| mu.l2_norm(w))
        .fold(0.0, f64::max))
}

/// Whether `w^target` is (within [`MEMBERSHIP_TOL`] in sup-norm) a member of
/// W, and the smallest sup-norm distance found.
pub fn audit_w_realizability(
    mdp: &TabularMdp,
    target: &Policy,
    mu: &DataDistribution,
    w_class: &WeightClass,
) -> Result<(bool, f64)> {
    let w = marginal_weights(mdp, target, mu)?;
    let dist = w_class
        .members()
        .iter()
        .map(|m| (m - &w).amax())
        .fold(f64::INFINITY, f64::min);
    Ok((dist <= MEMBERSHIP_TOL, dist))
}

/// `Q^pi` for every audited policy; convenient for building realizable classes.
pub fn audited_q_tables(mdp: &TabularMdp, policies: &AuditPolicySet) -> Result<Vec<Table>> {
    policies
        .members()
        .iter()
        .map(|p| compute_q(mdp, p).map(|q| q.into_table()))
        .collect()
}

/// Order-of-magnitude statistical envelope
/// `V_max · C*_{ℓ2} · sqrt(ln(|F| |Π| |W| / δ) / N)`.
///
/// |Π| is the audit-set size; this is a reporting convention, not a
/// constant-faithful bound.
pub fn stat_envelope(
    v_max: f64,
    c_star: f64,
    f_len: usize,
    audit_len: usize,
    w_len: usize,
    n: usize,
    delta: f64,
) -> f64 {
    let card = (f_len * audit_len * w_len) as f64;
    v_max * c_star * ((card / delta).ln() / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::exact_mu;
    use crate::mdp::RewardKind;

    fn bandit_pair(mu2: f64, d2: f64) -> (TabularMdp, Policy, DataDistribution) {
        let mdp = TabularMdp::bandit(&[0.5, 0.5], &[RewardKind::Deterministic; 2]).unwrap();
        let behavior = Policy::new(Table::from_row_slice(1, 2, &[1.0 - mu2, mu2])).unwrap();
        let target = Policy::new(Table::from_row_slice(1, 2, &[1.0 - d2, d2])).unwrap();
        let mu = exact_mu(&mdp, &behavior).unwrap();
        (mdp, target, mu)
    }

    #[test]
    fn behavior_has_unit_coefficients() {
        let (mdp, _, mu) = bandit_pair(0.3, 0.3);
        let b = Policy::new(Table::from_row_slice(1, 2, &[0.7, 0.3])).unwrap();
        let l2 = c_l2(&mdp, &b, &mu).unwrap();
        assert!((l2.value - 1.0).abs() < 1e-12);
        assert!((c_linf(&mdp, &b, &mu).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_epsilon_bandit() {
        // μ = (0.99, 0.01), d = (0.9, 0.1).
        let (mdp, target, mu) = bandit_pair(0.01, 0.1);
        let l2 = c_l2(&mdp, &target, &mu).unwrap();
        let oracle = (0.81f64 / 0.99 + 1.0).sqrt();
        assert!((l2.value - oracle).abs() < 1e-12);
        assert!((l2.value - 1.348399).abs() < 1e-6);
        assert!(l2.value <= 2f64.sqrt());
        assert!((l2.expected_weight.sqrt() - l2.value).abs() < 1e-10);
        assert!((c_linf(&mdp, &target, &mu).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn uncovered_target_is_reported() {
        let (mdp, target, mu) = bandit_pair(0.0, 0.1);
        assert!(matches!(
            c_linf(&mdp, &target, &mu),
            Err(Error::Coverage { state: 0, action: 1, .. })
        ));
        let f = ValueClass::new(vec![Table::zeros(1, 2)], 1.0).unwrap();
        let rep = ConcentrabilityReport::compute(&mdp, &target, &mu, &f).unwrap();
        assert_eq!(rep.uncovered, Some((0, 1)));
        assert!(rep.c_linf.is_infinite());
    }

    #[test]
    fn c_bellman_degenerate_and_indicator() {
        let (mdp, target, mu) = bandit_pair(0.2, 0.6);
        let q = compute_q(&mdp, &target).unwrap().into_table();
        let only_q = ValueClass::new(vec![q.clone()], 1.0).unwrap();
        assert_eq!(c_bellman(&mdp, &target, &mu, &only_q), Err(Error::DegenerateClass));

        // Bandit: f - T f = f - r, so q + 0.1·e_{a2} has an indicator residual.
        let mut f = q;
        f[(0, 1)] += 0.1;
        let class = ValueClass::new(vec![f], 1.0).unwrap();
        let (ratio, idx) = c_bellman(&mdp, &target, &mu, &class).unwrap();
        assert_eq!(idx, 0);
        assert!((ratio - 0.6 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn realizability_audit_cases() {
        let mdp_half = TabularMdp::new(
            vec![vec![vec![1.0]]],
            Table::from_element(1, 1, 1.0),
            vec![RewardKind::Deterministic],
            0.5,
            vec![1.0],
        )
        .unwrap();
        let audit = AuditPolicySet::new(vec![Policy::uniform(1, 1)]).unwrap();

        let zero = ValueClass::new(vec![Table::zeros(1, 1)], 2.0).unwrap();
        assert!((audit_realizability_f(&mdp_half, &zero, &audit).unwrap() - 1.0).abs() < 1e-15);

        let q = audited_q_tables(&mdp_half, &audit).unwrap();
        let exact = ValueClass::new(q.clone(), 2.0).unwrap();
        assert_eq!(audit_realizability_f(&mdp_half, &exact, &audit).unwrap(), 0.0);

        // Offset c: residual (1-γ) c, squared (1-γ)² c².
        let shifted = ValueClass::new(vec![q[0].add_scalar(-0.1)], 2.0).unwrap();
        let eps = audit_realizability_f(&mdp_half, &shifted, &audit).unwrap();
        assert!((eps - 0.25 * 0.01).abs() < 1e-14);
    }

    #[test]
    fn weight_class_audits() {
        let (mdp, target, mu) = bandit_pair(0.01, 0.1);
        let ones = Table::from_element(1, 2, 1.0);
        assert_eq!(audit_weight_class(&WeightClass::all_ones(1, 2), &mu).unwrap(), 1.0);
        let doubled = WeightClass::new(vec![ones.clone(), ones.scale(2.0)], 2.0).unwrap();
        assert!((audit_weight_class(&doubled, &mu).unwrap() - 2.0).abs() < 1e-15);

        let w = marginal_weights(&mdp, &target, &mu).unwrap();
        let with_w = WeightClass::new(vec![ones.clone(), w], 10.0).unwrap();
        assert!((audit_weight_class(&with_w, &mu).unwrap() - 1.348399).abs() < 1e-6);

        assert_eq!(
            WeightClass::new(vec![ones.scale(2.0)], 2.0),
            Err(Error::MissingAllOnes)
        );

        let (ok, dist) = audit_w_realizability(&mdp, &target, &mu, &with_w).unwrap();
        assert!(ok && dist < 1e-12);
        let (ok, dist) = audit_w_realizability(&mdp, &target, &mu, &WeightClass::all_ones(1, 2)).unwrap();
        assert!(!ok && dist > 0.0);
    }
}
