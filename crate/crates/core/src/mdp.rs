//! Single-population decision problem with the population measure held fixed.

use crate::error::{Error, Result};
use crate::model::STOCHASTIC_TOL;

/// A finite MDP over feasible state-action pairs.
///
/// Pairs are numbered state-major; `transitions` holds one row of length
/// `num_states` per pair. `star`, when present, is the absorbing state of the
/// total-payoff criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    population: usize,
    offsets: Vec<usize>,
    actions: Vec<usize>,
    pair_states: Vec<usize>,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
    weight: Vec<f64>,
    star: Option<usize>,
}

impl Mdp {
    /// Validated constructor. Weights only need to be positive here so that
    /// layered embeddings with shrinking weights are representable.
    pub fn new(
        population: usize,
        offsets: Vec<usize>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        weight: Vec<f64>,
        star: Option<usize>,
    ) -> Result<Self> {
        let n = weight.len();
        if offsets.len() != n + 1 || offsets[0] != 0 || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ShapeMismatch("offsets must be increasing with one entry per state".into()));
        }
        let pairs = offsets[n];
        if actions.len() != pairs || rewards.len() != pairs || transitions.len() != pairs * n {
            return Err(Error::ShapeMismatch(format!(
                "{pairs} pairs need as many actions and rewards and {pairs} x {n} transitions"
            )));
        }
        if let Some(s) = star {
            if s >= n || offsets[s + 1] - offsets[s] != 1 {
                return Err(Error::InvalidArgument("star state must have exactly one action".into()));
            }
        }
        if weight.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidWeight("MDP weights must be positive and finite".into()));
        }
        for (p, row) in transitions.chunks(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|q| !(*q >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL * n as f64 {
                return Err(Error::NonStochasticRow {
                    what: "MDP transition".into(),
                    index: format!("pair {p}"),
                    sum,
                });
            }
        }
        Ok(Self::from_parts(population, offsets, actions, rewards, transitions, weight, star))
    }

    pub(crate) fn from_parts(
        population: usize,
        offsets: Vec<usize>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        transitions: Vec<f64>,
        weight: Vec<f64>,
        star: Option<usize>,
    ) -> Self {
        let pair_states = (0..offsets.len() - 1)
            .flat_map(|s| std::iter::repeat_n(s, offsets[s + 1] - offsets[s]))
            .collect();
        Self { population, offsets, actions, pair_states, rewards, transitions, weight, star }
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn num_states(&self) -> usize {
        self.weight.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.actions.len()
    }

    pub fn pair_range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Action label index of pair `p`.
    pub fn action(&self, p: usize) -> usize {
        self.actions[p]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn state_of(&self, p: usize) -> usize {
        self.pair_states[p]
    }

    pub fn reward(&self, p: usize) -> f64 {
        self.rewards[p]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let n = self.num_states();
        &self.transitions[p * n..(p + 1) * n]
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn star(&self) -> Option<usize> {
        self.star
    }

    /// `r(p) + beta * sum_s' Q(s'|p) v(s')`.
    pub fn q_value(&self, p: usize, v: &[f64], beta: f64) -> f64 {
        self.rewards[p] + beta * dot(self.row(p), v)
    }

    /// `max_p sum_s' w(s') Q(s'|p) / w(s)`.
    pub fn weight_factor(&self) -> f64 {
        (0..self.num_pairs())
            .map(|p| dot(self.row(p), &self.weight) / self.weight[self.pair_states[p]])
            .fold(0.0, f64::max)
    }

    /// `max_p |r(p)| / w(s)`.
    pub fn reward_bound(&self) -> f64 {
        (0..self.num_pairs())
            .map(|p| self.rewards[p].abs() / self.weight[self.pair_states[p]])
            .fold(0.0, f64::max)
    }

    /// Same problem with a different weight function.
    pub fn with_weight(mut self, weight: Vec<f64>) -> Result<Self> {
        if weight.len() != self.num_states() || weight.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidWeight("weight must be positive with one entry per state".into()));
        }
        self.weight = weight;
        Ok(self)
    }

    /// Copy with the star row replaced by a self-loop and the star reward
    /// zeroed: dead players stay dead and earn nothing.
    pub fn star_modified(&self) -> Result<Self> {
        let star = self.star.ok_or(Error::MissingStar { population: self.population })?;
        let mut out = self.clone();
        let n = self.num_states();
        let p = self.offsets[star];
        out.rewards[p] = 0.0;
        let row = &mut out.transitions[p * n..(p + 1) * n];
        row.iter_mut().for_each(|q| *q = 0.0);
        row[star] = 1.0;
        Ok(out)
    }

    #[cfg(test)]
    pub(crate) fn set_reward(&mut self, p: usize, r: f64) {
        self.rewards[p] = r;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
