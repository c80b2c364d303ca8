//! Offline datasets drawn i.i.d. from a behavior policy's occupancy.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{compute_occupancy, sample_index, OccupancyMeasure, Policy, TabularMdp, Table};

/// Seeded generator for one experiment cell.
///
/// `seed` selects the key and `stream` the ChaCha stream id, so every
/// `(seed, stream)` pair yields an independent, reproducible sequence.
/// Datasets use stream 0 unless a caller splits work across cells.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Exact discounted occupancy of the behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    occupancy: OccupancyMeasure,
}

impl DataDistribution {
    pub fn table(&self) -> &Table {
        self.occupancy.table()
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.occupancy.get(s, a)
    }

    pub fn expect(&self, g: &Table) -> f64 {
        self.occupancy.expect(g)
    }

    pub fn occupancy(&self) -> &OccupancyMeasure {
        &self.occupancy
    }

    /// `‖g‖_{2,μ}`.
    pub fn l2_norm(&self, g: &Table) -> f64 {
        self.expect(&g.component_mul(g)).sqrt()
    }
}

/// Data distribution of `behavior`, i.e. its exact occupancy.
pub fn exact_mu(mdp: &TabularMdp, behavior: &Policy) -> Result<DataDistribution> {
    Ok(DataDistribution {
        occupancy: compute_occupancy(mdp, behavior)?,
    })
}

/// Per-transition sufficient statistics of a dataset.
///
/// Every empirical objective in this crate is a sum over tuples of a function
/// that depends on the reward at most quadratically, so it can be evaluated
/// from these grouped sums instead of a pass over all tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    n_states: usize,
    n_actions: usize,
    n: usize,
    /// Visits of `(s, a)`.
    sa_count: Vec<f64>,
    /// Reward sum per `(s, a)`.
    sa_reward: Vec<f64>,
    /// Tuples per `(s, a, s')`.
    sas_count: Vec<f64>,
    /// Reward sum per `(s, a, s')`.
    sas_reward: Vec<f64>,
    /// Squared-reward sum per `(s, a, s')`.
    sas_reward_sq: Vec<f64>,
}

impl DatasetSummary {
    fn build(n_states: usize, n_actions: usize, tuples: &[Transition]) -> Self {
        let sa = n_states * n_actions;
        let mut sm = DatasetSummary {
            n_states,
            n_actions,
            n: tuples.len(),
            sa_count: vec![0.0; sa],
            sa_reward: vec![0.0; sa],
            sas_count: vec![0.0; sa * n_states],
            sas_reward: vec![0.0; sa * n_states],
            sas_reward_sq: vec![0.0; sa * n_states],
        };
        for t in tuples {
            let i = t.s * n_actions + t.a;
            let j = i * n_states + t.s_next;
            sm.sa_count[i] += 1.0;
            sm.sa_reward[i] += t.r;
            sm.sas_count[j] += 1.0;
            sm.sas_reward[j] += t.r;
            sm.sas_reward_sq[j] += t.r * t.r;
        }
        sm
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    pub fn count(&self, s: usize, a: usize) -> f64 {
        self.sa_count[s * self.n_actions + a]
    }

    /// Empirical state-action frequencies `n(s, a) / N`.
    pub fn frequencies(&self) -> Table {
        let n = self.n as f64;
        Table::from_fn(self.n_states, self.n_actions, |s, a| self.count(s, a) / n)
    }

    /// Mean observed reward at `(s, a)`, `None` if unvisited.
    pub fn mean_reward(&self, s: usize, a: usize) -> Option<f64> {
        let i = s * self.n_actions + a;
        (self.sa_count[i] > 0.0).then(|| self.sa_reward[i] / self.sa_count[i])
    }

    /// `Σ_i x(s_i, a_i)`.
    pub fn sum_sa(&self, x: &Table) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                acc += self.sa_count[s * self.n_actions + a] * x[(s, a)];
            }
        }
        acc
    }

    /// Per-`(s, a)` sums of TD residuals `f(s,a) - r - γ v(s')`, where `v` is
    /// the next-state value `f(s', pi)`.
    pub fn td_residual_sums(&self, f: &Table, v_next: &[f64], discount: f64) -> Table {
        let ns = self.n_states;
        Table::from_fn(ns, self.n_actions, |s, a| {
            let i = s * self.n_actions + a;
            if self.sa_count[i] == 0.0 {
                return 0.0;
            }
            let base = i * ns;
            let next: f64 = (0..ns).map(|x| self.sas_count[base + x] * v_next[x]).sum();
            self.sa_count[i] * f[(s, a)] - self.sa_reward[i] - discount * next
        })
    }

    /// `Σ_i (g(s_i,a_i) - r_i - γ v(s'_i))²`.
    pub fn squared_td_sum(&self, g: &Table, v_next: &[f64], discount: f64) -> f64 {
        let ns = self.n_states;
        let mut acc = 0.0;
        for s in 0..ns {
            for a in 0..self.n_actions {
                let i = s * self.n_actions + a;
                if self.sa_count[i] == 0.0 {
                    continue;
                }
                for (x, &vx) in v_next.iter().enumerate() {
                    let j = i * ns + x;
                    let c = self.sas_count[j];
                    if c == 0.0 {
                        continue;
                    }
                    // Σ (k - r)² = c k² - 2 k Σr + Σr², with k constant in the group.
                    let k = g[(s, a)] - discount * vx;
                    acc += c * k * k - 2.0 * k * self.sas_reward[j] + self.sas_reward_sq[j];
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    tuples: Vec<Transition>,
    discount: f64,
    seed: u64,
    source: String,
    summary: DatasetSummary,
}

impl OfflineDataset {
    /// Builds a dataset from explicit tuples, validating indices and reward
    /// support against `mdp`.
    pub fn from_tuples(
        mdp: &TabularMdp,
        tuples: Vec<Transition>,
        seed: u64,
        source: impl Into<String>,
    ) -> Result<Self> {
        if tuples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        for (i, t) in tuples.iter().enumerate() {
            if t.s >= mdp.n_states() || t.a >= mdp.n_actions() || t.s_next >= mdp.n_states() {
                return Err(Error::Config(format!("tuple {i} has an index out of range")));
            }
            if !mdp.reward_in_support(t.s, t.a, t.r) {
                return Err(Error::Config(format!(
                    "tuple {i}: reward {} outside the support at ({}, {})",
                    t.r, t.s, t.a
                )));
            }
        }
        let summary = DatasetSummary::build(mdp.n_states(), mdp.n_actions(), &tuples);
        Ok(OfflineDataset {
            tuples,
            discount: mdp.discount(),
            seed,
            source: source.into(),
            summary,
        })
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    pub fn n(&self) -> usize {
        self.tuples.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Discount of the MDP the tuples came from.
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn summary(&self) -> &DatasetSummary {
        &self.summary
    }

    /// Writes `s,a,r,s_next` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["s", "a", "r", "s_next"])?;
        for t in &self.tuples {
            wtr.write_record([
                t.s.to_string(),
                t.a.to_string(),
                t.r.to_string(),
                t.s_next.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`OfflineDataset::write_csv`].
    pub fn read_csv<R: Read>(
        mdp: &TabularMdp,
        r: R,
        seed: u64,
        source: impl Into<String>,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "a", "r", "s_next"] {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header s,a,r,s_next".into(),
            });
        }
        let mut tuples = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| Error::Parse {
                line: i + 2,
                msg: msg.to_string(),
            };
            let field = |k: usize| rec.get(k).ok_or_else(|| bad("missing field"));
            tuples.push(Transition {
                s: field(0)?.parse().map_err(|_| bad("bad state"))?,
                a: field(1)?.parse().map_err(|_| bad("bad action"))?,
                r: field(2)?.parse().map_err(|_| bad("bad reward"))?,
                s_next: field(3)?.parse().map_err(|_| bad("bad next state"))?,
            });
        }
        OfflineDataset::from_tuples(mdp, tuples, seed, source)
    }
}

fn draw_tuple<R: Rng + ?Sized>(mdp: &TabularMdp, s: usize, a: usize, rng: &mut R) -> Transition {
    let r = mdp.sample_reward(s, a, rng);
    let s_next = sample_index(mdp.next_dist(s, a), rng);
    Transition { s, a, r, s_next }
}

/// Draws `n` i.i.d. tuples: `(s, a) ~ d^behavior`, then `r ~ R(s, a)` and
/// `s' ~ P(·|s, a)`. Reproducible from `seed`.
pub fn sample_dataset(
    mdp: &TabularMdp,
    behavior: &Policy,
    n: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let mu = exact_mu(mdp, behavior)?;
    let flat: Vec<f64> = (0..mdp.n_states())
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mu.get(s, a))
        .collect();
    let mut rng = stream_rng(seed, 0);
    let na = mdp.n_actions();
    let tuples = (0..n)
        .map(|_| {
            let i = sample_index(&flat, &mut rng);
            draw_tuple(mdp, i / na, i % na, &mut rng)
        })
        .collect();
    OfflineDataset::from_tuples(mdp, tuples, seed, "behavior")
}

/// Like [`sample_dataset`], but the `(s, a)` counts are fixed to the
/// largest-remainder rounding of `n · μ(s, a)`; only rewards and next states
/// are random.
pub fn sample_dataset_stratified(
    mdp: &TabularMdp,
    behavior: &Policy,
    n: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let mu = exact_mu(mdp, behavior)?;
    let na = mdp.n_actions();
    let cells = mdp.n_states() * na;
    let exact: Vec<f64> = (0..cells).map(|i| mu.get(i / na, i % na) * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..cells).collect();
    // Largest fractional part first; ties to the lowest index.
    order.sort_by(|&i, &j| {
        let (fi, fj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[i] += 1;
        short -= 1;
    }
    let mut rng = stream_rng(seed, 0);
    let mut tuples = Vec::with_capacity(n);
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            tuples.push(draw_tuple(mdp, i / na, i % na, &mut rng));
        }
    }
    OfflineDataset::from_tuples(mdp, tuples, seed, "behavior-stratified")
}

/// `(1/N) Σ_i g(tuple_i)`.
pub fn empirical_mean<G: Fn(&Transition) -> f64>(dataset: &OfflineDataset, g: G) -> Result<f64> {
    if dataset.tuples.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    Ok(dataset.tuples.iter().map(g).sum::<f64>() / dataset.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RewardKind;

    fn two_arm(p2: f64) -> (TabularMdp, Policy) {
        let mdp = TabularMdp::bandit(&[0.6, 0.5], &[RewardKind::Deterministic, RewardKind::Bernoulli])
            .unwrap();
        let behavior = Policy::new(Table::from_row_slice(1, 2, &[1.0 - p2, p2])).unwrap();
        (mdp, behavior)
    }

    #[test]
    fn degenerate_support_gives_identical_tuples() {
        let mdp = TabularMdp::bandit(&[0.3], &[RewardKind::Deterministic]).unwrap();
        let ds = sample_dataset(&mdp, &Policy::uniform(1, 1), 5, 7).unwrap();
        assert_eq!(ds.n(), 5);
        for t in ds.tuples() {
            assert_eq!(*t, Transition { s: 0, a: 0, r: 0.3, s_next: 0 });
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let (mdp, b) = two_arm(0.3);
        assert_eq!(
            sample_dataset(&mdp, &b, 500, 11).unwrap(),
            sample_dataset(&mdp, &b, 500, 11).unwrap()
        );
        assert_ne!(
            sample_dataset(&mdp, &b, 500, 11).unwrap().tuples(),
            sample_dataset(&mdp, &b, 500, 12).unwrap().tuples()
        );
    }

    #[test]
    fn zero_size_is_rejected() {
        let (mdp, b) = two_arm(0.3);
        assert_eq!(sample_dataset(&mdp, &b, 0, 1), Err(Error::Empty("dataset")));
    }

    #[test]
    fn empirical_mean_cases() {
        let mdp = TabularMdp::bandit(&[0.5], &[RewardKind::Bernoulli]).unwrap();
        let tuples = [0.0, 1.0, 1.0]
            .iter()
            .map(|&r| Transition { s: 0, a: 0, r, s_next: 0 })
            .collect();
        let ds = OfflineDataset::from_tuples(&mdp, tuples, 0, "hand").unwrap();
        assert_eq!(empirical_mean(&ds, |_| 1.0).unwrap(), 1.0);
        assert_eq!(empirical_mean(&ds, |_| 0.0).unwrap(), 0.0);
        assert!((empirical_mean(&ds, |t| t.r).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_mu_cases() {
        let (mdp, _) = two_arm(0.5);
        let mu = exact_mu(&mdp, &Policy::uniform(1, 2)).unwrap();
        assert_eq!(mu.table(), &Table::from_row_slice(1, 2, &[0.5, 0.5]));
        let det = exact_mu(&mdp, &Policy::deterministic(&[1], 2).unwrap()).unwrap();
        assert_eq!(det.get(0, 0), 0.0);
        assert_eq!(det.get(0, 1), 1.0);
    }

    #[test]
    fn rewards_outside_support_are_rejected() {
        let (mdp, _) = two_arm(0.5);
        let bad = vec![Transition { s: 0, a: 0, r: 0.2, s_next: 0 }];
        assert!(OfflineDataset::from_tuples(&mdp, bad, 0, "x").is_err());
        let bad = vec![Transition { s: 0, a: 1, r: 0.5, s_next: 0 }];
        assert!(OfflineDataset::from_tuples(&mdp, bad, 0, "x").is_err());
    }

    #[test]
    fn stratified_counts_are_exact() {
        let (mdp, b) = two_arm(0.1);
        let ds = sample_dataset_stratified(&mdp, &b, 1000, 3).unwrap();
        assert_eq!(ds.summary().count(0, 1), 100.0);
        assert_eq!(ds.summary().count(0, 0), 900.0);
    }

    #[test]
    fn csv_round_trip() {
        let (mdp, b) = two_arm(0.4);
        let ds = sample_dataset(&mdp, &b, 50, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"s,a,r,s_next\n"));
        let back = OfflineDataset::read_csv(&mdp, buf.as_slice(), 5, "behavior").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn summary_matches_tuple_loop() {
        let (mdp, b) = two_arm(0.4);
        let ds = sample_dataset(&mdp, &b, 300, 9).unwrap();
        let g = Table::from_row_slice(1, 2, &[0.7, 0.2]);
        let v = [0.4];
        let direct: f64 = ds
            .tuples()
            .iter()
            .map(|t| (g[(t.s, t.a)] - t.r - 0.0 * v[t.s_next]).powi(2))
            .sum();
        assert!((ds.summary().squared_td_sum(&g, &v, 0.0) - direct).abs() < 1e-9);
    }
}
