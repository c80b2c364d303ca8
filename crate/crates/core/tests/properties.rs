mod common;

use acrab::classes::{c_bellman, c_l2, c_linf, marginal_weights, ValueClass, WeightClass};
use acrab::data::{exact_mu, sample_dataset};
use acrab::experiments::{build_realizable_family, InstanceFile};
use acrab::mdp::{
    bellman_residual, compute_occupancy, compute_q, j_value, j_value_occupancy, mixture_j_value, Policy,
    RewardKind, TabularMdp, Table,
};
use acrab::objectives::{e_emp, e_pop, l_emp, l_pop, perf_decomposition, RegularizerKind};
use acrab::solvers::{measure_regret, npg_update, run_acrab, run_acrab_rpi, IterationRecord, RunRecord, SolverConfig};
use proptest::prelude::*;
use rand::Rng;

use common::*;

fn case_config() -> ProptestConfig {
    ProptestConfig {
        cases: 200,
        ..ProptestConfig::default()
    }
}

/// Naive per-tuple `(1/N) Σ w (f - r - γ f(s', pi))`.
fn naive_weighted_td(ds: &acrab::data::OfflineDataset, pi: &Policy, f: &Table, w: &Table) -> f64 {
    let v = pi.state_values(f);
    ds.tuples()
        .iter()
        .map(|t| w[(t.s, t.a)] * (f[(t.s, t.a)] - t.r - ds.discount() * v[t.s_next]))
        .sum::<f64>()
        / ds.n() as f64
}

fn traces_bit_equal(a: &[IterationRecord], b: &[IterationRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.critic_idx == y.critic_idx
                && x.breakdown.l_value.to_bits() == y.breakdown.l_value.to_bits()
                && x.breakdown.e_value.to_bits() == y.breakdown.e_value.to_bits()
                && x.breakdown.total.to_bits() == y.breakdown.total.to_bits()
                && x.policy.probs().iter().zip(y.policy.probs().iter()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

proptest! {
    #![proptest_config(case_config())]

    #[test]
    fn solves_have_small_residuals(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let pi = random_policy(&mut r, ns, na);
        let d = compute_occupancy(&mdp, &pi).unwrap();
        prop_assert!(d.flow_residual(&mdp) < 1e-10);
        prop_assert!((d.table().sum() - 1.0).abs() < 1e-10);
        prop_assert!(d.table().iter().all(|x| *x >= -1e-12));
        let q = compute_q(&mdp, &pi).unwrap();
        prop_assert!(bellman_residual(&mdp, &pi, q.table()).unwrap().amax() < 1e-10);
        let (a, b) = (j_value(&mdp, &pi).unwrap(), j_value_occupancy(&mdp, &pi).unwrap());
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn performance_decomposition_sums_to_value_gap(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let mu = exact_mu(&mdp, &random_policy(&mut r, ns, na)).unwrap();
        let pi = random_policy(&mut r, ns, na);
        let pi_hat = random_policy(&mut r, ns, na);
        let f = random_table(&mut r, ns, na, mdp.v_max());
        let dec = perf_decomposition(&mdp, &mu, &pi, &pi_hat, &f).unwrap();
        let gap = j_value(&mdp, &pi).unwrap() - j_value(&mdp, &pi_hat).unwrap();
        prop_assert!((dec.sum() - gap).abs() < 1e-9, "{} vs {}", dec.sum(), gap);
    }

    #[test]
    fn true_q_has_zero_weighted_bellman_error(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let mu = exact_mu(&mdp, &full_support_policy(&mut r, ns, na)).unwrap();
        let pi = random_policy(&mut r, ns, na);
        let w = WeightClass::new(vec![Table::from_element(ns, na, 1.0), random_table(&mut r, ns, na, 5.0)], 5.0).unwrap();
        let q = compute_q(&mdp, &pi).unwrap();
        prop_assert!(e_pop(&mdp, &mu, &pi, q.table(), &w).unwrap().0 < 1e-12);
    }

    #[test]
    fn concentrability_ordering(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let mu = exact_mu(&mdp, &full_support_policy(&mut r, ns, na)).unwrap();
        let target = random_policy(&mut r, ns, na);
        let l2 = c_l2(&mdp, &target, &mu).unwrap();
        let linf = c_linf(&mdp, &target, &mu).unwrap();
        let tol = 1e-9 * linf.max(1.0);
        prop_assert!(l2.value * l2.value <= linf + tol);
        prop_assert!(l2.value <= linf + tol);
        prop_assert!(l2.value >= 1.0 - 1e-9);
        prop_assert!((l2.value * l2.value - l2.expected_weight).abs() < 1e-9 * l2.expected_weight.max(1.0));
    }

    #[test]
    fn indicator_class_attains_linf(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let mu = exact_mu(&mdp, &full_support_policy(&mut r, ns, na)).unwrap();
        let target = random_policy(&mut r, ns, na);
        let (value, f) = indicator_witness(&mdp, &target, &mu);
        let class = ValueClass::new(vec![f], mdp.v_max() * 2.0).unwrap();
        let (cb, _) = c_bellman(&mdp, &target, &mu, &class).unwrap();
        prop_assert!((cb - value).abs() < 1e-9 * value.max(1.0), "{cb} vs {value}");
    }

    #[test]
    fn npg_keeps_rows_stochastic_and_positive(seed in any::<u64>(), eta in 1e-3f64..50.0) {
        let mut r = rng(seed);
        let (ns, na, _) = dims(&mut r);
        let pi = full_support_policy(&mut r, ns, na);
        let mut cur = pi;
        for _ in 0..20 {
            let f = random_table(&mut r, ns, na, 20.0);
            cur = npg_update(&cur, &f, eta);
            for s in 0..ns {
                let row: f64 = (0..na).map(|a| cur.prob(s, a)).sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
                prop_assert!((0..na).all(|a| cur.prob(s, a) > 0.0));
            }
        }
    }
}

/// `f` with `f - T^target f` equal to the indicator of the pair where
/// `w^target` peaks; returns that peak and `f`.
fn indicator_witness(mdp: &TabularMdp, target: &Policy, mu: &acrab::data::DataDistribution) -> (f64, Table) {
    let (ns, na) = mdp.shape();
    let w = marginal_weights(mdp, target, mu).unwrap();
    let (mut bs, mut ba) = (0, 0);
    for s in 0..ns {
        for a in 0..na {
            if w[(s, a)] > w[(bs, ba)] {
                (bs, ba) = (s, a);
            }
        }
    }
    // By linearity, Q_r + Q_e (e the indicator reward) has residual e under r.
    let mut e = Table::zeros(ns, na);
    e[(bs, ba)] = 1.0;
    let transition = (0..ns).map(|s| (0..na).map(|a| mdp.next_dist(s, a).to_vec()).collect()).collect();
    let kinds = vec![RewardKind::Deterministic; ns * na];
    let initial: Vec<f64> = mdp.initial_dist().iter().copied().collect();
    let indicator = TabularMdp::new(transition, e, kinds, mdp.discount(), initial).unwrap();
    let f = compute_q(mdp, target).unwrap().into_table() + compute_q(&indicator, target).unwrap().into_table();
    (w[(bs, ba)], f)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn summary_statistics_match_tuple_loops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let behavior = full_support_policy(&mut r, ns, na);
        let ds = sample_dataset(&mdp, &behavior, 300, seed).unwrap();
        let pi = random_policy(&mut r, ns, na);
        let f = random_table(&mut r, ns, na, mdp.v_max());
        let ws = vec![Table::from_element(ns, na, 1.0), random_table(&mut r, ns, na, 3.0)];
        let wc = WeightClass::new(ws.clone(), 3.0).unwrap();
        let (e, idx) = e_emp(&ds, &pi, &f, &wc).unwrap();
        let naive: Vec<f64> = ws.iter().map(|w| naive_weighted_td(&ds, &pi, &f, w).abs()).collect();
        prop_assert!((e - naive[idx]).abs() < 1e-10);
        prop_assert!(naive.iter().all(|x| *x <= e + 1e-10));
        let fpi = pi.state_values(&f);
        let l_naive = ds.tuples().iter().map(|t| fpi[t.s] - f[(t.s, t.a)]).sum::<f64>() / ds.n() as f64;
        prop_assert!((l_emp(&ds, &pi, &f).unwrap() - l_naive).abs() < 1e-10);
    }

    #[test]
    fn robust_variant_equals_all_ones_acrab(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let ds = sample_dataset(&mdp, &full_support_policy(&mut r, ns, na), 200, seed).unwrap();
        let f_class = random_class(&mut r, &mdp, 6);
        let beta = r.random_range(0.0..10.0);
        let a = run_acrab(&ds, &f_class, &WeightClass::all_ones(ns, na),
            &SolverConfig::new(RegularizerKind::WeightedAvgBellman).with_beta(beta).with_k(25)).unwrap();
        let b = run_acrab_rpi(&ds, &f_class,
            &SolverConfig::new(RegularizerKind::RpiAvgBellman).with_beta(beta).with_k(25)).unwrap();
        prop_assert!(traces_bit_equal(&a.iterations, &b.iterations));
    }

    #[test]
    fn runs_are_deterministic_and_mixtures_linear(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na, g) = dims(&mut r);
        let mdp = random_mdp(&mut r, ns, na, g);
        let ds = sample_dataset(&mdp, &full_support_policy(&mut r, ns, na), 200, seed).unwrap();
        let f_class = random_class(&mut r, &mdp, 70);
        let w = WeightClass::new(vec![Table::from_element(ns, na, 1.0), random_table(&mut r, ns, na, 2.0)], 2.0).unwrap();
        let cfg = SolverConfig::new(RegularizerKind::WeightedAvgBellman).with_k(15);
        let a: RunRecord = run_acrab(&ds, &f_class, &w, &cfg).unwrap();
        let b = run_acrab(&ds, &f_class, &w, &cfg).unwrap();
        prop_assert_eq!(a.iterations.len(), 15);
        prop_assert!(traces_bit_equal(&a.iterations, &b.iterations));
        let mean_j = a.iterations.iter().map(|it| j_value(&mdp, &it.policy).unwrap()).sum::<f64>() / 15.0;
        prop_assert!((a.mixture_j(&mdp).unwrap() - mean_j).abs() < 1e-10);
        prop_assert!((mixture_j_value(&mdp, &a.mixture()).unwrap() - mean_j).abs() < 1e-10);
    }

    #[test]
    fn generated_instances_round_trip(seed in 0u64..1000, ns in 1usize..=5, na in 1usize..=4) {
        let inst = build_realizable_family(ns, na, seed).unwrap();
        prop_assert_eq!(InstanceFile::parse(&inst.to_text()).unwrap(), inst);
    }
}

#[test]
fn empirical_objectives_are_unbiased() {
    let mut r = rng(5);
    let mdp = random_mdp(&mut r, 3, 2, 0.7);
    let behavior = full_support_policy(&mut r, 3, 2);
    let mu = exact_mu(&mdp, &behavior).unwrap();
    let pi = random_policy(&mut r, 3, 2);
    let f = random_table(&mut r, 3, 2, mdp.v_max());
    let w = Table::from_element(3, 2, 1.0);
    let pop_l = l_pop(&mu, &pi, &f).unwrap();
    let pop_td = mu.expect(&bellman_residual(&mdp, &pi, &f).unwrap());
    let runs = 400;
    let (mut ls, mut tds) = (Vec::new(), Vec::new());
    for seed in 0..runs {
        let ds = sample_dataset(&mdp, &behavior, 50, seed).unwrap();
        ls.push(l_emp(&ds, &pi, &f).unwrap());
        tds.push(naive_weighted_td(&ds, &pi, &f, &w));
    }
    for (xs, target) in [(ls, pop_l), (tds, pop_td)] {
        let m = xs.iter().sum::<f64>() / runs as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (runs as f64 - 1.0)).sqrt();
        assert!((m - target).abs() < 4.0 * sd / (runs as f64).sqrt(), "{m} vs {target}");
    }
}

#[test]
fn npg_regret_shrinks_with_more_iterations() {
    // Alternating adversarial rewards on a two-armed bandit.
    let mdp = TabularMdp::bandit(&[0.5, 0.5], &[RewardKind::Deterministic, RewardKind::Deterministic]).unwrap();
    let comparator = Policy::deterministic(&[0], 2).unwrap();
    let mut regrets = Vec::new();
    for k in [100usize, 1000, 10000] {
        let eta = (2f64.ln() / k as f64).sqrt();
        let mut pi = Policy::uniform(1, 2);
        let mut iterations = Vec::with_capacity(k);
        for i in 0..k {
            let f = if i % 3 == 2 {
                Table::from_row_slice(1, 2, &[0.0, 1.0])
            } else {
                Table::from_row_slice(1, 2, &[1.0, 0.0])
            };
            let next = npg_update(&pi, &f, eta);
            iterations.push(IterationRecord {
                critic_idx: 0,
                breakdown: acrab::objectives::ObjectiveBreakdown::new(0.0, 0.0, None, 0.0),
                policy: pi,
                critic: f,
            });
            pi = next;
        }
        let rec = RunRecord {
            regularizer: RegularizerKind::WeightedAvgBellman,
            actor: "npg",
            beta: 0.0,
            eta,
            iterations,
            candidates: None,
        };
        let reg = measure_regret(&rec, &comparator, &mdp).unwrap();
        assert!(reg <= (2f64.ln() / k as f64).sqrt() * 2.0 + 1e-12, "k={k} regret={reg}");
        regrets.push(reg);
    }
    assert!(regrets[2] < regrets[0], "{regrets:?}");
}
