//! Game instances: populations, weights, measures and coupled evaluators.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::total;

/// Label of the absorbing "dead" state and of its only action.
pub const STAR: &str = "star";

/// Tolerance used when checking that probability vectors sum to one.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Payoff criterion of the game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Expected discounted sum with discount factor `beta` in (0, 1).
    Discounted { beta: f64 },
    /// Expected sum of rewards collected until the first visit to `star`.
    Total,
}

impl Criterion {
    pub fn beta(&self) -> Option<f64> {
        match *self {
            Criterion::Discounted { beta } => Some(beta),
            Criterion::Total => None,
        }
    }

    pub fn is_total(&self) -> bool {
        matches!(self, Criterion::Total)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if let Criterion::Discounted { beta } = *self {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "discount factor {beta} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// State space, action space and feasibility correspondence of one population.
///
/// Feasible state-action pairs are numbered consecutively state by state, in
/// increasing action order. Measures and policies are stored in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    index: usize,
    states: Vec<String>,
    actions: Vec<String>,
    feasible: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    pair_actions: Vec<usize>,
    pair_states: Vec<usize>,
    star: Option<usize>,
}

impl PopulationSpec {
    pub fn new(
        index: usize,
        states: Vec<String>,
        actions: Vec<String>,
        mut feasible: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let bad = |reason: String| Error::InvalidPopulation { population: index, reason };
        if states.is_empty() {
            return Err(bad("no states".into()));
        }
        if feasible.len() != states.len() {
            return Err(bad(format!(
                "{} feasibility sets for {} states",
                feasible.len(),
                states.len()
            )));
        }
        for (k, label) in states.iter().enumerate() {
            if states[..k].contains(label) {
                return Err(bad(format!("duplicate state label `{label}`")));
            }
        }
        for (k, label) in actions.iter().enumerate() {
            if actions[..k].contains(label) {
                return Err(bad(format!("duplicate action label `{label}`")));
            }
        }
        for (s, set) in feasible.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                return Err(bad(format!("state `{}` has no feasible action", states[s])));
            }
            if let Some(&a) = set.iter().find(|&&a| a >= actions.len()) {
                return Err(bad(format!("action index {a} out of range")));
            }
        }
        let star = states.iter().position(|l| l == STAR);
        if let Some(s) = star {
            let star_action = actions.iter().position(|l| l == STAR);
            match star_action {
                Some(a) if feasible[s] == [a] => {}
                _ => {
                    return Err(bad(
                        "the `star` state must have exactly the `star` action feasible".into(),
                    ))
                }
            }
        }
        let mut offsets = Vec::with_capacity(states.len() + 1);
        let mut pair_actions = Vec::new();
        let mut pair_states = Vec::new();
        offsets.push(0);
        for (s, set) in feasible.iter().enumerate() {
            pair_actions.extend_from_slice(set);
            pair_states.extend(std::iter::repeat_n(s, set.len()));
            offsets.push(pair_actions.len());
        }
        Ok(Self { index, states, actions, feasible, offsets, pair_actions, pair_states, star })
    }

    /// Population where every action is feasible in every state.
    pub fn full(index: usize, states: Vec<String>, actions: Vec<String>) -> Result<Self> {
        let all: Vec<usize> = (0..actions.len()).collect();
        let feasible = vec![all; states.len()];
        Self::new(index, states, actions, feasible)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_actions.len()
    }

    pub fn feasible(&self, s: usize) -> &[usize] {
        &self.feasible[s]
    }

    /// Pair indices belonging to state `s`.
    pub fn pair_range(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn pair_index(&self, s: usize, a: usize) -> Option<usize> {
        if s >= self.num_states() {
            return None;
        }
        self.feasible[s].binary_search(&a).ok().map(|k| self.offsets[s] + k)
    }

    /// `(state, action)` of pair `p`.
    pub fn pair(&self, p: usize) -> (usize, usize) {
        (self.pair_states[p], self.pair_actions[p])
    }

    pub fn pair_actions(&self) -> &[usize] {
        &self.pair_actions
    }

    pub fn star(&self) -> Option<usize> {
        self.star
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|l| l == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|l| l == label)
    }

    pub(crate) fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Per-population weight `w >= 1` on states.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    values: Vec<Vec<f64>>,
}

impl WeightFunction {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if let Some((s, w)) = v.iter().enumerate().find(|(_, w)| !(**w >= 1.0 && w.is_finite())) {
                return Err(Error::InvalidWeight(format!(
                    "w({s}) = {w} in population {i}; weights must be finite and >= 1"
                )));
            }
        }
        Ok(Self { values })
    }

    /// The constant weight `w = 1`, used for bounded rewards.
    pub fn unit(populations: &[PopulationSpec]) -> Self {
        Self { values: populations.iter().map(|p| vec![1.0; p.num_states()]).collect() }
    }

    pub fn population(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn is_unit(&self) -> bool {
        self.values.iter().flatten().all(|&w| w == 1.0)
    }

    fn check_shape(&self, populations: &[PopulationSpec]) -> Result<()> {
        if self.values.len() != populations.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} populations, model has {}",
                self.values.len(),
                populations.len()
            )));
        }
        for (i, (w, p)) in self.values.iter().zip(populations).enumerate() {
            if w.len() != p.num_states() {
                return Err(Error::ShapeMismatch(format!(
                    "weight of population {i} has {} entries for {} states",
                    w.len(),
                    p.num_states()
                )));
            }
        }
        Ok(())
    }
}

/// `sup_s |h(s)| / w(s)`.
pub fn weighted_norm(h: &[f64], w: &[f64]) -> f64 {
    h.iter().zip(w).map(|(x, w)| x.abs() / w).fold(0.0, f64::max)
}

fn check_probability(v: &[f64], what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidMeasure(format!("{what} has entry {x}")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL * (v.len().max(1) as f64).max(1.0) {
        return Err(Error::InvalidMeasure(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Per-population distribution of private states (the global state).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    parts: Vec<Vec<f64>>,
}

impl GlobalState {
    pub fn new(populations: &[PopulationSpec], parts: Vec<Vec<f64>>) -> Result<Self> {
        if parts.len() != populations.len() {
            return Err(Error::ShapeMismatch(format!(
                "global state has {} populations, model has {}",
                parts.len(),
                populations.len()
            )));
        }
        for (i, (mu, p)) in parts.iter().zip(populations).enumerate() {
            if mu.len() != p.num_states() {
                return Err(Error::ShapeMismatch(format!(
                    "population {i}: {} entries for {} states",
                    mu.len(),
                    p.num_states()
                )));
            }
            check_probability(mu, &format!("state distribution of population {i}"))?;
        }
        Ok(Self { parts })
    }

    pub(crate) fn from_parts_unchecked(parts: Vec<Vec<f64>>) -> Self {
        Self { parts }
    }

    pub fn uniform(populations: &[PopulationSpec]) -> Self {
        Self {
            parts: populations
                .iter()
                .map(|p| vec![1.0 / p.num_states() as f64; p.num_states()])
                .collect(),
        }
    }

    pub fn population(&self, i: usize) -> &[f64] {
        &self.parts[i]
    }

    pub fn parts(&self) -> &[Vec<f64>] {
        &self.parts
    }

    pub fn num_populations(&self) -> usize {
        self.parts.len()
    }

    /// Largest per-population l1 distance.
    pub fn l1_distance(&self, other: &GlobalState) -> f64 {
        self.parts
            .iter()
            .zip(&other.parts)
            .map(|(a, b)| l1(a, b))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-population distribution over feasible state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionMeasure {
    parts: Vec<Vec<f64>>,
}

impl StateActionMeasure {
    /// Builds a measure from per-population vectors indexed by pair.
    pub fn new(populations: &[PopulationSpec], parts: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { parts };
        m.validate(populations)?;
        Ok(m)
    }

    pub(crate) fn from_parts_unchecked(parts: Vec<Vec<f64>>) -> Self {
        Self { parts }
    }

    /// Uniform over the feasible pairs of each population.
    pub fn uniform(populations: &[PopulationSpec]) -> Self {
        Self {
            parts: populations
                .iter()
                .map(|p| vec![1.0 / p.num_pairs() as f64; p.num_pairs()])
                .collect(),
        }
    }

    /// Point mass at one pair per population.
    pub fn vertex(populations: &[PopulationSpec], pairs: &[usize]) -> Self {
        Self {
            parts: populations
                .iter()
                .zip(pairs)
                .map(|(p, &k)| {
                    let mut v = vec![0.0; p.num_pairs()];
                    v[k] = 1.0;
                    v
                })
                .collect(),
        }
    }

    pub fn validate(&self, populations: &[PopulationSpec]) -> Result<()> {
        if self.parts.len() != populations.len() {
            return Err(Error::ShapeMismatch(format!(
                "measure has {} populations, model has {}",
                self.parts.len(),
                populations.len()
            )));
        }
        for (i, (tau, p)) in self.parts.iter().zip(populations).enumerate() {
            if tau.len() != p.num_pairs() {
                return Err(Error::ShapeMismatch(format!(
                    "population {i}: {} entries for {} feasible pairs",
                    tau.len(),
                    p.num_pairs()
                )));
            }
            check_probability(tau, &format!("state-action measure of population {i}"))?;
        }
        Ok(())
    }

    pub fn population(&self, i: usize) -> &[f64] {
        &self.parts[i]
    }

    pub fn parts(&self) -> &[Vec<f64>] {
        &self.parts
    }

    pub fn num_populations(&self) -> usize {
        self.parts.len()
    }

    /// Mass at pair `(s, a)` of population `i`; zero for infeasible pairs.
    pub fn mass(&self, populations: &[PopulationSpec], i: usize, s: usize, a: usize) -> f64 {
        populations[i].pair_index(s, a).map_or(0.0, |p| self.parts[i][p])
    }

    /// State marginal of population `i`.
    pub fn marginal(&self, population: &PopulationSpec) -> Vec<f64> {
        let tau = &self.parts[population.index()];
        (0..population.num_states())
            .map(|s| tau[population.pair_range(s)].iter().sum())
            .collect()
    }

    /// State marginals of every population.
    pub fn marginals(&self, populations: &[PopulationSpec]) -> GlobalState {
        GlobalState::from_parts_unchecked(populations.iter().map(|p| self.marginal(p)).collect())
    }

    /// Sum over populations of the l1 distances.
    pub fn l1_distance(&self, other: &StateActionMeasure) -> f64 {
        self.parts.iter().zip(&other.parts).map(|(a, b)| l1(a, b)).sum()
    }

    /// `(1 - t) * self + t * other`.
    pub fn mix(&self, other: &StateActionMeasure, t: f64) -> StateActionMeasure {
        StateActionMeasure {
            parts: self
                .parts
                .iter()
                .zip(&other.parts)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
                .collect(),
        }
    }

    /// `sum_(s,a) w(s) tau(s,a)` for population `i`.
    pub fn weighted_mass(&self, population: &PopulationSpec, w: &[f64]) -> f64 {
        let tau = &self.parts[population.index()];
        (0..population.num_pairs()).map(|p| w[population.pair(p).0] * tau[p]).sum()
    }
}

/// Reward and transition evaluators coupled to the state-action measure.
///
/// Pair indices follow the owning model's [`PopulationSpec`] numbering.
/// Implementations must be pure and must return probability vectors from
/// [`Dynamics::transition`].
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn reward(&self, i: usize, pair: usize, tau: &StateActionMeasure) -> f64;

    /// Writes `Q^i(. | pair, tau)` into `out` (length `|S^i|`).
    fn transition(&self, i: usize, pair: usize, tau: &StateActionMeasure, out: &mut [f64]);

    /// The tabular coupling behind this evaluator, when there is one. Enables
    /// exact vertex-based validation.
    fn tabular(&self) -> Option<&TabularCoupling> {
        None
    }
}

/// Affine reward / convex-mixture transition coupling, stored densely over
/// feasible pairs.
///
/// Rewards are `b[i][p] + sum_j sum_q K[i][j][p][q] tau^j(q)`. Transitions are
/// `(1 - l[i][p]) P0[i][p] + l[i][p] / N sum_j sum_q tau^j(q) P[i][j][p][q]`.
/// A kernel slice `P[i][j][p][q]` that was never set equals the base row
/// `P0[i][p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCoupling {
    num_pops: usize,
    num_states: Vec<usize>,
    num_pairs: Vec<usize>,
    base_reward: Vec<Vec<f64>>,
    reward_kernel: Vec<Vec<Option<Vec<f64>>>>,
    base_transition: Vec<Vec<f64>>,
    transition_kernel: Vec<Vec<Option<Vec<f64>>>>,
    kernel_set: Vec<Vec<Vec<bool>>>,
    mix: Vec<Vec<f64>>,
    populations: Vec<PopulationSpec>,
}

impl TabularCoupling {
    /// Zero rewards, zero coupling, zero mixing and unset base transitions.
    pub fn zeros(populations: &[PopulationSpec]) -> Self {
        let n = populations.len();
        let num_states: Vec<usize> = populations.iter().map(|p| p.num_states()).collect();
        let num_pairs: Vec<usize> = populations.iter().map(|p| p.num_pairs()).collect();
        Self {
            num_pops: n,
            base_reward: num_pairs.iter().map(|&k| vec![0.0; k]).collect(),
            reward_kernel: vec![vec![None; n]; n],
            base_transition: (0..n).map(|i| vec![0.0; num_pairs[i] * num_states[i]]).collect(),
            transition_kernel: vec![vec![None; n]; n],
            kernel_set: (0..n)
                .map(|i| (0..n).map(|j| vec![false; num_pairs[i] * num_pairs[j]]).collect())
                .collect(),
            mix: num_pairs.iter().map(|&k| vec![0.0; k]).collect(),
            num_states,
            num_pairs,
            populations: populations.to_vec(),
        }
    }

    fn pair(&self, i: usize, s: usize, a: usize) -> Result<usize> {
        let pop = self
            .populations
            .get(i)
            .ok_or_else(|| Error::ShapeMismatch(format!("population {i} out of range")))?;
        pop.pair_index(s, a).ok_or(Error::Infeasible { population: i, state: s, action: a })
    }

    pub fn set_base_reward(&mut self, i: usize, s: usize, a: usize, value: f64) -> Result<()> {
        let p = self.pair(i, s, a)?;
        self.base_reward[i][p] = value;
        Ok(())
    }

    /// Sets `K[i][j][(s,a)][(s',a')]`.
    pub fn set_reward_coupling(
        &mut self,
        i: usize,
        j: usize,
        (s, a): (usize, usize),
        (s2, a2): (usize, usize),
        value: f64,
    ) -> Result<()> {
        let p = self.pair(i, s, a)?;
        let q = self.pair(j, s2, a2)?;
        let cols = self.num_pairs[j];
        let slot = self.reward_kernel[i][j].get_or_insert_with(|| vec![0.0; self.num_pairs[i] * cols]);
        slot[p * cols + q] = value;
        Ok(())
    }

    pub fn set_base_transition(&mut self, i: usize, s: usize, a: usize, row: &[f64]) -> Result<()> {
        let p = self.pair(i, s, a)?;
        let n = self.num_states[i];
        if row.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "base transition row for population {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        self.base_transition[i][p * n..(p + 1) * n].copy_from_slice(row);
        Ok(())
    }

    /// Sets the slice `P[i][j][(s,a)][(s',a')][.]`.
    pub fn set_transition_kernel(
        &mut self,
        i: usize,
        j: usize,
        (s, a): (usize, usize),
        (s2, a2): (usize, usize),
        row: &[f64],
    ) -> Result<()> {
        let p = self.pair(i, s, a)?;
        let q = self.pair(j, s2, a2)?;
        let n = self.num_states[i];
        if row.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "transition kernel row for population {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        let cols = self.num_pairs[j];
        let slot = self.transition_kernel[i][j]
            .get_or_insert_with(|| vec![0.0; self.num_pairs[i] * cols * n]);
        let at = (p * cols + q) * n;
        slot[at..at + n].copy_from_slice(row);
        self.kernel_set[i][j][p * cols + q] = true;
        Ok(())
    }

    pub fn set_mix(&mut self, i: usize, s: usize, a: usize, value: f64) -> Result<()> {
        let p = self.pair(i, s, a)?;
        self.mix[i][p] = value;
        Ok(())
    }

    /// Sets the same mixing weight on every pair of population `i`.
    pub fn set_mix_all(&mut self, i: usize, value: f64) {
        self.mix[i].iter_mut().for_each(|m| *m = value);
    }

    pub fn base_reward(&self, i: usize, pair: usize) -> f64 {
        self.base_reward[i][pair]
    }

    pub fn mix_weight(&self, i: usize, pair: usize) -> f64 {
        self.mix[i][pair]
    }

    pub fn base_row(&self, i: usize, pair: usize) -> &[f64] {
        let n = self.num_states[i];
        &self.base_transition[i][pair * n..(pair + 1) * n]
    }

    /// `K[i][j][p][q]`.
    pub fn reward_coupling(&self, i: usize, j: usize, p: usize, q: usize) -> f64 {
        self.reward_kernel[i][j]
            .as_ref()
            .map_or(0.0, |k| k[p * self.num_pairs[j] + q])
    }

    /// `P[i][j][p][q][.]`; the base row when unset.
    pub fn kernel_row(&self, i: usize, j: usize, p: usize, q: usize) -> &[f64] {
        let n = self.num_states[i];
        let cols = self.num_pairs[j];
        match &self.transition_kernel[i][j] {
            Some(k) if self.kernel_set[i][j][p * cols + q] => {
                let at = (p * cols + q) * n;
                &k[at..at + n]
            }
            _ => self.base_row(i, p),
        }
    }

    fn check(&self, populations: &[PopulationSpec]) -> Result<()> {
        if populations.len() != self.num_pops {
            return Err(Error::ShapeMismatch(format!(
                "coupling built for {} populations, model has {}",
                self.num_pops,
                populations.len()
            )));
        }
        for (i, p) in populations.iter().enumerate() {
            if p.num_pairs() != self.num_pairs[i] || p.num_states() != self.num_states[i] {
                return Err(Error::ShapeMismatch(format!(
                    "coupling tensors for population {i} do not match its spaces"
                )));
            }
        }
        let row_ok = |row: &[f64]| {
            row.iter().all(|x| *x >= 0.0 && x.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL * row.len() as f64
        };
        for (i, pop) in populations.iter().enumerate() {
            for p in 0..pop.num_pairs() {
                let (s, a) = pop.pair(p);
                let row = self.base_row(i, p);
                if !row_ok(row) {
                    return Err(Error::NonStochasticRow {
                        what: "base transition".into(),
                        index: format!("[{i}][{s}][{a}]"),
                        sum: row.iter().sum(),
                    });
                }
                let m = self.mix[i][p];
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::MixOutOfRange { index: format!("[{i}][{s}][{a}]"), value: m });
                }
                for (j, other) in populations.iter().enumerate() {
                    for q in 0..other.num_pairs() {
                        let row = self.kernel_row(i, j, p, q);
                        if !row_ok(row) {
                            let (s2, a2) = other.pair(q);
                            return Err(Error::NonStochasticRow {
                                what: "transition kernel".into(),
                                index: format!("[{i}][{j}][{s}][{a}][{s2}][{a2}]"),
                                sum: row.iter().sum(),
                            });
                        }
                    }
                }
            }
        }
        for row in self.base_reward.iter().flatten() {
            if !row.is_finite() {
                return Err(Error::InvalidArgument("non-finite base reward".into()));
            }
        }
        Ok(())
    }

    /// Extremes of the reward of pair `p` over all measures. The reward is affine
    /// in each population's measure separately, so the extremes are attained at
    /// vertices and decompose per population.
    pub(crate) fn reward_range(&self, i: usize, p: usize) -> (f64, f64) {
        let mut lo = self.base_reward[i][p];
        let mut hi = lo;
        for j in 0..self.num_pops {
            if let Some(k) = &self.reward_kernel[i][j] {
                let cols = self.num_pairs[j];
                let row = &k[p * cols..(p + 1) * cols];
                lo += row.iter().copied().fold(f64::INFINITY, f64::min);
                hi += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        (lo, hi)
    }

    /// Largest `sum_s' w(s') Q(s' | p, tau)` over all measures, with a maximising vertex.
    pub(crate) fn max_weighted_drift(&self, i: usize, p: usize, w: &[f64]) -> (f64, Vec<usize>) {
        let dot = |row: &[f64]| row.iter().zip(w).map(|(q, w)| q * w).sum::<f64>();
        let m = self.mix[i][p];
        let mut total = (1.0 - m) * dot(self.base_row(i, p));
        let mut argmax = Vec::with_capacity(self.num_pops);
        for j in 0..self.num_pops {
            let (best_q, best) = (0..self.num_pairs[j])
                .map(|q| (q, dot(self.kernel_row(i, j, p, q))))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            total += m / self.num_pops as f64 * best;
            argmax.push(best_q);
        }
        (total, argmax)
    }
}

impl Dynamics for TabularCoupling {
    fn reward(&self, i: usize, p: usize, tau: &StateActionMeasure) -> f64 {
        let mut r = self.base_reward[i][p];
        for j in 0..self.num_pops {
            if let Some(k) = &self.reward_kernel[i][j] {
                let cols = self.num_pairs[j];
                r += k[p * cols..(p + 1) * cols]
                    .iter()
                    .zip(tau.population(j))
                    .map(|(k, t)| k * t)
                    .sum::<f64>();
            }
        }
        r
    }

    fn transition(&self, i: usize, p: usize, tau: &StateActionMeasure, out: &mut [f64]) {
        let m = self.mix[i][p];
        let base = self.base_row(i, p);
        out.copy_from_slice(base);
        if m == 0.0 {
            return;
        }
        let n = self.num_states[i];
        let share = m / self.num_pops as f64;
        out.iter_mut().for_each(|x| *x *= 1.0 - m);
        for j in 0..self.num_pops {
            let t = tau.population(j);
            match &self.transition_kernel[i][j] {
                None => out.iter_mut().zip(base).for_each(|(o, b)| *o += share * b),
                Some(_) => {
                    for (q, &mass) in t.iter().enumerate() {
                        if mass == 0.0 {
                            continue;
                        }
                        let row = self.kernel_row(i, j, p, q);
                        for k in 0..n {
                            out[k] += share * mass * row[k];
                        }
                    }
                }
            }
        }
    }

    fn tabular(&self) -> Option<&TabularCoupling> {
        Some(self)
    }
}

/// A multi-population mean-field game on finite spaces.
#[derive(Debug, Clone)]
pub struct GameModel {
    populations: Vec<PopulationSpec>,
    weight: WeightFunction,
    dynamics: Arc<dyn Dynamics>,
}

/// Builds a game whose evaluators realise the tabular coupling formulas.
pub fn build_tabular_model(
    populations: Vec<PopulationSpec>,
    weight: WeightFunction,
    coupling: TabularCoupling,
) -> Result<GameModel> {
    coupling.check(&populations)?;
    GameModel::new(populations, weight, Arc::new(coupling))
}

impl GameModel {
    /// Builds a game around arbitrary evaluators. Population indices are
    /// renumbered to their position.
    pub fn new(
        populations: Vec<PopulationSpec>,
        weight: WeightFunction,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::ShapeMismatch("a game needs at least one population".into()));
        }
        let populations: Vec<_> =
            populations.into_iter().enumerate().map(|(i, p)| p.with_index(i)).collect();
        weight.check_shape(&populations)?;
        Ok(Self { populations, weight, dynamics })
    }

    pub fn populations(&self) -> &[PopulationSpec] {
        &self.populations
    }

    pub fn population(&self, i: usize) -> &PopulationSpec {
        &self.populations[i]
    }

    pub fn num_populations(&self) -> usize {
        self.populations.len()
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn tabular(&self) -> Option<&TabularCoupling> {
        self.dynamics.tabular()
    }

    fn pair_checked(&self, i: usize, s: usize, a: usize) -> Result<usize> {
        let pop = self
            .populations
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("population {i} out of range")))?;
        pop.pair_index(s, a).ok_or(Error::Infeasible { population: i, state: s, action: a })
    }

    /// `r^i(s, a, tau)`.
    pub fn eval_reward(&self, i: usize, s: usize, a: usize, tau: &StateActionMeasure) -> Result<f64> {
        let p = self.pair_checked(i, s, a)?;
        tau.validate(&self.populations)?;
        Ok(self.dynamics.reward(i, p, tau))
    }

    /// `Q^i(. | s, a, tau)`.
    pub fn eval_transition(
        &self,
        i: usize,
        s: usize,
        a: usize,
        tau: &StateActionMeasure,
    ) -> Result<Vec<f64>> {
        let p = self.pair_checked(i, s, a)?;
        tau.validate(&self.populations)?;
        let mut out = vec![0.0; self.populations[i].num_states()];
        self.dynamics.transition(i, p, tau, &mut out);
        Ok(out)
    }

    /// The decision problem of population `i` with the measure held fixed.
    pub fn freeze(&self, i: usize, tau: &StateActionMeasure) -> Mdp {
        let pop = &self.populations[i];
        let n = pop.num_states();
        let mut rewards = Vec::with_capacity(pop.num_pairs());
        let mut transitions = vec![0.0; pop.num_pairs() * n];
        for p in 0..pop.num_pairs() {
            rewards.push(self.dynamics.reward(i, p, tau));
            self.dynamics.transition(i, p, tau, &mut transitions[p * n..(p + 1) * n]);
        }
        Mdp::from_parts(
            i,
            pop.offsets().to_vec(),
            pop.pair_actions().to_vec(),
            rewards,
            transitions,
            self.weight.population(i).to_vec(),
            pop.star(),
        )
    }

    /// Frozen problems of every population.
    pub fn freeze_all(&self, tau: &StateActionMeasure) -> Vec<Mdp> {
        (0..self.num_populations()).map(|i| self.freeze(i, tau)).collect()
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Holds by hypothesis; not verifiable from samples.
    Assumed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub status: CheckStatus,
    pub witness: Option<String>,
}

/// Finite-scale diagnostics of the standing assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `R = max |r(s,a,tau)| / w(s)`.
    pub reward_bound: f64,
    /// Smallest `alpha` with `sum w(s') Q(s'|s,a,tau) <= alpha w(s)`.
    pub weight_factor: f64,
    /// Reward growth constant along flows; bounded rewards need no growth.
    pub growth_factor: f64,
    /// `max_i max_s w(s)`: every state distribution has `int w dmu` below it.
    pub moment_bound: f64,
    /// True when extrema were computed exactly at simplex vertices.
    pub exact: bool,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const MAX_VERTEX_SAMPLES: usize = 256;
const RANDOM_SAMPLES: usize = 32;

/// Measures at which non-tabular evaluators are probed.
pub(crate) fn sample_measures(populations: &[PopulationSpec], seed: u64) -> Vec<StateActionMeasure> {
    let mut out = vec![StateActionMeasure::uniform(populations)];
    let count: usize = populations
        .iter()
        .map(|p| p.num_pairs())
        .try_fold(1usize, |acc, k| acc.checked_mul(k))
        .unwrap_or(usize::MAX);
    if count <= MAX_VERTEX_SAMPLES {
        let mut idx = vec![0usize; populations.len()];
        loop {
            out.push(StateActionMeasure::vertex(populations, &idx));
            let mut k = 0;
            loop {
                if k == idx.len() {
                    break;
                }
                idx[k] += 1;
                if idx[k] < populations[k].num_pairs() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_SAMPLES {
        let parts = populations
            .iter()
            .map(|p| {
                let raw: Vec<f64> = (0..p.num_pairs()).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        out.push(StateActionMeasure::from_parts_unchecked(parts));
    }
    out
}

/// Computes `R`, `alpha` and pass/fail flags of the standing assumptions.
///
/// Tabular couplings are checked exactly (affine extrema sit at vertices);
/// other evaluators are probed at vertices and seeded random measures, and
/// continuity is reported as assumed.
pub fn validate_assumptions(model: &GameModel, criterion: Criterion) -> Result<ValidationReport> {
    validate_assumptions_seeded(model, criterion, 0)
}

/// [`validate_assumptions`] with an explicit seed for the sampled measures.
pub fn validate_assumptions_seeded(model: &GameModel, criterion: Criterion, seed: u64) -> Result<ValidationReport> {
    criterion.check()?;
    let pops = model.populations();
    if criterion.is_total() {
        if let Some(p) = pops.iter().find(|p| p.star().is_none()) {
            return Err(Error::MissingStar { population: p.index() });
        }
    }

    let mut reward_bound = 0.0f64;
    let mut weight_factor = 0.0f64;
    let mut drift_witness = String::new();
    let mut finite = true;
    let exact = model.tabular().is_some();

    if let Some(tab) = model.tabular() {
        for pop in pops {
            let i = pop.index();
            let w = model.weight().population(i);
            for p in 0..pop.num_pairs() {
                let (s, a) = pop.pair(p);
                let (lo, hi) = tab.reward_range(i, p);
                finite &= lo.is_finite() && hi.is_finite();
                reward_bound = reward_bound.max(lo.abs().max(hi.abs()) / w[s]);
                let (drift, vertex) = tab.max_weighted_drift(i, p, w);
                let ratio = drift / w[s];
                if ratio > weight_factor {
                    weight_factor = ratio;
                    drift_witness = format!(
                        "population {i}, state `{}`, action `{}`, vertex {vertex:?}: sum w Q = {drift} vs w(s) = {}",
                        pop.states()[s],
                        pop.actions()[a],
                        w[s]
                    );
                }
            }
        }
    } else {
        for tau in sample_measures(pops, seed) {
            for pop in pops {
                let i = pop.index();
                let w = model.weight().population(i);
                let mut row = vec![0.0; pop.num_states()];
                for p in 0..pop.num_pairs() {
                    let (s, a) = pop.pair(p);
                    let r = model.dynamics().reward(i, p, &tau);
                    finite &= r.is_finite();
                    reward_bound = reward_bound.max(r.abs() / w[s]);
                    model.dynamics().transition(i, p, &tau, &mut row);
                    let drift: f64 = row.iter().zip(w).map(|(q, w)| q * w).sum();
                    let ratio = drift / w[s];
                    if ratio > weight_factor {
                        weight_factor = ratio;
                        drift_witness = format!(
                            "population {i}, state `{}`, action `{}` (sampled measure): sum w Q = {drift} vs w(s) = {}",
                            pop.states()[s],
                            pop.actions()[a],
                            w[s]
                        );
                    }
                }
            }
        }
    }

    let growth_factor = 1.0;
    let moment_bound = pops
        .iter()
        .flat_map(|p| model.weight().population(p.index()).iter().copied())
        .fold(1.0, f64::max);

    let status = |ok: bool| if ok { CheckStatus::Pass } else { CheckStatus::Fail };
    let mut checks = vec![
        AssumptionCheck {
            name: "bounded_reward",
            status: status(finite),
            witness: (!finite).then(|| "non-finite reward".to_string()),
        },
        AssumptionCheck {
            name: "continuity",
            status: if exact { CheckStatus::Pass } else { CheckStatus::Assumed },
            witness: None,
        },
        AssumptionCheck {
            name: "weight_drift",
            status: status(weight_factor <= 1.0 + STOCHASTIC_TOL),
            witness: (weight_factor > 1.0 + STOCHASTIC_TOL).then(|| drift_witness.clone()),
        },
        AssumptionCheck { name: "finite_actions", status: CheckStatus::Pass, witness: None },
    ];
    match criterion {
        Criterion::Discounted { beta } => {
            let ok = weight_factor * beta * growth_factor < 1.0;
            checks.push(AssumptionCheck {
                name: "discounted_contraction",
                status: status(ok),
                witness: (!ok).then(|| format!("alpha * beta * gamma = {}", weight_factor * beta)),
            });
        }
        Criterion::Total => {
            let ok = weight_factor <= growth_factor && weight_factor * growth_factor < 1.0 + STOCHASTIC_TOL;
            checks.push(AssumptionCheck {
                name: "total_growth",
                status: status(ok),
                witness: (!ok).then(|| format!("alpha = {weight_factor}, gamma = {growth_factor}")),
            });
            let mut transience_fail = None;
            'outer: for tau in sample_measures(pops, seed).into_iter().take(1 + MAX_VERTEX_SAMPLES.min(64)) {
                for pop in pops {
                    let mdp = model.freeze(pop.index(), &tau);
                    let (_, report) = total::compute_zeta(&mdp, 1e-10, 100_000)?;
                    if !report.certified {
                        transience_fail = Some(format!(
                            "population {}: taboo series does not converge at a sampled measure",
                            pop.index()
                        ));
                        break 'outer;
                    }
                }
            }
            checks.push(AssumptionCheck {
                name: "transience",
                status: status(transience_fail.is_none()),
                witness: transience_fail,
            });
        }
    }

    Ok(ValidationReport { reward_bound, weight_factor, growth_factor, moment_bound, exact, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn population_rejects_empty_feasible_set() {
        let err = PopulationSpec::new(0, labels(&["x", "y"]), labels(&["a"]), vec![vec![0], vec![]]);
        assert!(matches!(err, Err(Error::InvalidPopulation { .. })));
    }

    #[test]
    fn population_rejects_duplicate_labels() {
        assert!(PopulationSpec::full(0, labels(&["x", "x"]), labels(&["a"])).is_err());
        assert!(PopulationSpec::full(0, labels(&["x"]), labels(&["a", "a"])).is_err());
    }

    #[test]
    fn star_state_must_have_only_star_action() {
        let bad = PopulationSpec::full(0, labels(&["x", STAR]), labels(&["a", STAR]));
        assert!(bad.is_err());
        let ok = PopulationSpec::new(0, labels(&["x", STAR]), labels(&["a", STAR]), vec![vec![0], vec![1]])
            .unwrap();
        assert_eq!(ok.star(), Some(1));
    }

    #[test]
    fn pair_numbering_is_state_major() {
        let p = PopulationSpec::new(0, labels(&["x", "y"]), labels(&["a", "b", "c"]), vec![vec![2, 0], vec![1]])
            .unwrap();
        assert_eq!(p.num_pairs(), 3);
        assert_eq!(p.pair(0), (0, 0));
        assert_eq!(p.pair(1), (0, 2));
        assert_eq!(p.pair(2), (1, 1));
        assert_eq!(p.pair_index(1, 1), Some(2));
        assert_eq!(p.pair_index(1, 0), None);
    }

    #[test]
    fn degenerate_single_state_model() {
        let g1 = fixtures::g1();
        let tau = StateActionMeasure::uniform(g1.populations());
        assert_eq!(g1.eval_reward(0, 0, 0, &tau).unwrap(), 1.0);
        assert_eq!(g1.eval_transition(0, 0, 0, &tau).unwrap(), vec![1.0]);
    }

    #[test]
    fn single_coupling_entry_is_affine() {
        let pops = vec![PopulationSpec::full(0, labels(&["x", "y"]), labels(&["a", "b"])).unwrap()];
        let mut c = TabularCoupling::zeros(&pops);
        for p in 0..4 {
            let (s, a) = pops[0].pair(p);
            c.set_base_transition(0, s, a, &[0.5, 0.5]).unwrap();
            c.set_base_reward(0, s, a, 0.25).unwrap();
        }
        c.set_reward_coupling(0, 0, (0, 1), (1, 0), 3.0).unwrap();
        let weight = WeightFunction::unit(&pops);
        let model = build_tabular_model(pops.clone(), weight, c).unwrap();
        let tau = StateActionMeasure::new(&pops, vec![vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        assert!((model.eval_reward(0, 0, 1, &tau).unwrap() - (0.25 + 3.0 * 0.3)).abs() < 1e-15);
        assert_eq!(model.eval_reward(0, 0, 0, &tau).unwrap(), 0.25);
    }

    #[test]
    fn non_stochastic_base_row_is_reported() {
        let pops = vec![PopulationSpec::full(0, labels(&["x", "y"]), labels(&["a"])).unwrap()];
        let mut c = TabularCoupling::zeros(&pops);
        c.set_base_transition(0, 0, 0, &[0.5, 0.4]).unwrap();
        c.set_base_transition(0, 1, 0, &[0.5, 0.5]).unwrap();
        let err = build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).unwrap_err();
        match err {
            Error::NonStochasticRow { index, sum, .. } => {
                assert_eq!(index, "[0][0][0]");
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mix_out_of_range_is_rejected() {
        let pops = vec![PopulationSpec::full(0, labels(&["x"]), labels(&["a"])).unwrap()];
        let mut c = TabularCoupling::zeros(&pops);
        c.set_base_transition(0, 0, 0, &[1.0]).unwrap();
        c.set_mix(0, 0, 0, 1.5).unwrap();
        let err = build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).unwrap_err();
        assert!(matches!(err, Error::MixOutOfRange { .. }));
    }

    #[test]
    fn setters_reject_infeasible_pairs() {
        let pops = vec![PopulationSpec::new(0, labels(&["x", "y"]), labels(&["a", "b"]), vec![vec![0], vec![1]])
            .unwrap()];
        let mut c = TabularCoupling::zeros(&pops);
        assert!(matches!(c.set_base_reward(0, 0, 1, 1.0), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn eval_rejects_infeasible_action() {
        let g4 = fixtures::g4();
        let tau = StateActionMeasure::uniform(g4.populations());
        let star = g4.population(0).star().unwrap();
        assert!(matches!(g4.eval_reward(0, star, 0, &tau), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn mix_zero_returns_base_row() {
        let g3 = fixtures::g3();
        let tau = StateActionMeasure::new(g3.populations(), vec![vec![0.7, 0.1, 0.1, 0.1]]).unwrap();
        assert_eq!(g3.eval_transition(0, 0, 1, &tau).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn congestion_reward_at_uniform() {
        let g3 = fixtures::g3();
        let tau = StateActionMeasure::uniform(g3.populations());
        assert!((g3.eval_reward(0, 0, 0, &tau).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_mix_at_point_mass_averages_kernel_rows() {
        let pops = vec![
            PopulationSpec::full(0, labels(&["x", "y"]), labels(&["a"])).unwrap(),
            PopulationSpec::full(1, labels(&["u", "v"]), labels(&["a"])).unwrap(),
        ];
        let mut c = TabularCoupling::zeros(&pops);
        for i in 0..2 {
            for s in 0..2 {
                c.set_base_transition(i, s, 0, &[0.5, 0.5]).unwrap();
                c.set_mix(i, s, 0, 1.0).unwrap();
            }
        }
        c.set_transition_kernel(0, 0, (0, 0), (1, 0), &[1.0, 0.0]).unwrap();
        c.set_transition_kernel(0, 1, (0, 0), (0, 0), &[0.2, 0.8]).unwrap();
        let model = build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).unwrap();
        let tau = StateActionMeasure::vertex(&pops, &[1, 0]);
        let q = model.eval_transition(0, 0, 0, &tau).unwrap();
        assert!((q[0] - 0.5 * (1.0 + 0.2)).abs() < 1e-15);
        assert!((q[1] - 0.5 * (0.0 + 0.8)).abs() < 1e-15);
    }

    #[test]
    fn validation_of_trivial_game() {
        let report = validate_assumptions(&fixtures::g1(), Criterion::Discounted { beta: 0.5 }).unwrap();
        assert_eq!(report.reward_bound, 1.0);
        assert_eq!(report.weight_factor, 1.0);
        assert!(report.passed());
    }

    #[test]
    fn validation_flags_weight_drift() {
        let pops = vec![PopulationSpec::full(0, labels(&["x", "y"]), labels(&["a"])).unwrap()];
        let mut c = TabularCoupling::zeros(&pops);
        c.set_base_transition(0, 0, 0, &[0.0, 1.0]).unwrap();
        c.set_base_transition(0, 1, 0, &[0.0, 1.0]).unwrap();
        let weight = WeightFunction::new(vec![vec![1.0, 2.0]]).unwrap();
        let model = build_tabular_model(pops, weight, c).unwrap();
        let report = validate_assumptions(&model, Criterion::Discounted { beta: 0.4 }).unwrap();
        assert_eq!(report.weight_factor, 2.0);
        let check = report.check("weight_drift").unwrap();
        assert_eq!(check.status, CheckStatus::Fail);
        assert!(check.witness.as_ref().unwrap().contains("state `x`"));
    }

    #[test]
    fn total_mode_requires_star() {
        let err = validate_assumptions(&fixtures::g3(), Criterion::Total).unwrap_err();
        assert!(matches!(err, Error::MissingStar { population: 0 }));
        let report = validate_assumptions(&fixtures::g4(), Criterion::Total).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn weights_below_one_rejected() {
        assert!(WeightFunction::new(vec![vec![1.0, 0.5]]).is_err());
    }

    #[test]
    fn measure_validation() {
        let pops = fixtures::g3().populations().to_vec();
        assert!(StateActionMeasure::new(&pops, vec![vec![0.5, 0.5, 0.1, -0.1]]).is_err());
        assert!(StateActionMeasure::new(&pops, vec![vec![0.5, 0.5, 0.1]]).is_err());
        assert!(StateActionMeasure::new(&pops, vec![vec![0.5, 0.4, 0.0, 0.0]]).is_err());
    }
}
