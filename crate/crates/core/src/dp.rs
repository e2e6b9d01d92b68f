//! Dynamic programming on frozen single-population problems.
//!
//! All norms are weighted sup-norms `||h||_w = sup_s |h(s)| / w(s)` with the
//! problem's own weight. For a frozen problem with weight factor `alpha`
//! (see [`Mdp::weight_factor`]) the Bellman operator is a `beta * alpha`
//! contraction in that norm, which is what the stopping rules below use.

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{dot, Mdp};
use crate::model::{weighted_norm, PopulationSpec};

/// Two action values closer than this are treated as equal by greedy selection.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub population: usize,
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(population: usize, n: usize) -> Self {
        Self { population, values: vec![0.0; n] }
    }

    pub fn w_norm(&self, w: &[f64]) -> f64 {
        weighted_norm(&self.values, w)
    }
}

/// Values at times `0..=T`; the last entry is the terminal (tail) value.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFlow {
    pub population: usize,
    pub layers: Vec<ValueFunction>,
}

impl ValueFlow {
    pub fn horizon(&self) -> usize {
        self.layers.len() - 1
    }
}

/// Stochastic kernel from states to feasible actions.
///
/// Row `s` holds probabilities of the feasible actions of `s` in increasing
/// action order, so the flattened rows line up with pair numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    population: usize,
    rows: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(population: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.is_empty() || row.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 * row.len() as f64 {
                return Err(Error::InvalidArgument(format!(
                    "policy row {s} of population {population} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self { population, rows })
    }

    pub(crate) fn from_rows_unchecked(population: usize, rows: Vec<Vec<f64>>) -> Self {
        Self { population, rows }
    }

    /// Uniform over feasible actions, given pair offsets.
    pub fn uniform(population: usize, offsets: &[usize]) -> Self {
        let rows = offsets
            .windows(2)
            .map(|w| vec![1.0 / (w[1] - w[0]) as f64; w[1] - w[0]])
            .collect();
        Self { population, rows }
    }

    pub fn uniform_for(pop: &PopulationSpec) -> Self {
        Self::uniform(pop.index(), pop.offsets())
    }

    /// Deterministic policy choosing the `choice[s]`-th feasible action.
    pub fn deterministic(population: usize, offsets: &[usize], choice: &[usize]) -> Self {
        let rows = offsets
            .windows(2)
            .zip(choice)
            .map(|(w, &k)| {
                let mut row = vec![0.0; w[1] - w[0]];
                row[k] = 1.0;
                row
            })
            .collect();
        Self { population, rows }
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub(crate) fn set_row(&mut self, s: usize, row: Vec<f64>) {
        self.rows[s] = row;
    }

    /// Positions of the actions carrying mass in state `s`.
    pub fn support(&self, s: usize) -> Vec<usize> {
        self.rows[s].iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(k, _)| k).collect()
    }

    pub(crate) fn check_shape(&self, offsets: &[usize]) -> Result<()> {
        let ok = self.rows.len() + 1 == offsets.len()
            && self.rows.iter().zip(offsets.windows(2)).all(|(r, w)| r.len() == w[1] - w[0]);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "policy of population {} does not match the feasible action sets",
                self.population
            )))
        }
    }

    /// Largest per-state l1 distance between two policies.
    pub fn distance(&self, other: &StationaryPolicy) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Time-indexed policies `pi_0, ..., pi_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicyFlow {
    pub population: usize,
    pub layers: Vec<StationaryPolicy>,
}

impl MarkovPolicyFlow {
    pub fn constant(policy: StationaryPolicy, horizon: usize) -> Self {
        Self { population: policy.population(), layers: vec![policy; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.layers.len()
    }
}

impl Mdp {
    /// `r_f(s) = sum_a f(a|s) r(s,a)`.
    pub fn policy_rewards(&self, policy: &StationaryPolicy) -> Vec<f64> {
        (0..self.num_states())
            .map(|s| {
                self.pair_range(s)
                    .zip(policy.row(s))
                    .map(|(p, f)| f * self.reward(p))
                    .sum()
            })
            .collect()
    }

    /// Row-major `M[s][s'] = sum_a f(a|s) Q(s'|s,a)`.
    pub fn policy_matrix(&self, policy: &StationaryPolicy) -> Vec<f64> {
        let n = self.num_states();
        let mut m = vec![0.0; n * n];
        for s in 0..n {
            let out = &mut m[s * n..(s + 1) * n];
            for (p, &f) in self.pair_range(s).zip(policy.row(s)) {
                if f == 0.0 {
                    continue;
                }
                for (o, q) in out.iter_mut().zip(self.row(p)) {
                    *o += f * q;
                }
            }
        }
        m
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount factor {beta} must lie in (0, 1)")))
    }
}

fn check_len(mdp: &Mdp, v: &[f64]) -> Result<()> {
    if v.len() == mdp.num_states() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "value function has {} entries for {} states",
            v.len(),
            mdp.num_states()
        )))
    }
}

fn apply(mdp: &Mdp, beta: f64, v: &[f64]) -> Vec<f64> {
    (0..mdp.num_states())
        .map(|s| {
            mdp.pair_range(s)
                .map(|p| mdp.q_value(p, v, beta))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `(TV)(s) = max_a [ r(s,a) + beta sum_s' V(s') Q(s'|s,a) ]`.
pub fn bellman_apply(mdp: &Mdp, beta: f64, v: &ValueFunction) -> Result<ValueFunction> {
    check_beta(beta)?;
    check_len(mdp, &v.values)?;
    Ok(ValueFunction { population: mdp.population(), values: apply(mdp, beta, &v.values) })
}

/// Output of [`value_iterate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub value: ValueFunction,
    /// Last increment `||u_{n+1} - u_n||_w`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Increment after every sweep.
    pub residuals: Vec<f64>,
    /// The contraction modulus `beta * alpha` used by the stopping rule.
    pub modulus: f64,
}

/// Value iteration from `u_0 = 0`.
///
/// Stops once `||u_{n+1} - u_n||_w <= tol (1 - c) / c` with `c = beta * alpha`,
/// which bounds the distance of the returned iterate to the fixed point by `tol`.
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `converged == false`.
pub fn value_iterate(mdp: &Mdp, beta: f64, tol: f64, max_iter: usize) -> Result<ValueIteration> {
    check_beta(beta)?;
    let modulus = beta * mdp.weight_factor();
    if modulus >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "beta * alpha = {modulus} >= 1; value iteration need not converge"
        )));
    }
    let threshold = tol * (1.0 - modulus) / modulus;
    let w = mdp.weight();
    let mut u = vec![0.0; mdp.num_states()];
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = apply(mdp, beta, &u);
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let delta = weighted_norm(&diff, w);
        u = next;
        residuals.push(delta);
        if delta <= threshold {
            converged = true;
            break;
        }
    }
    Ok(ValueIteration {
        value: ValueFunction { population: mdp.population(), values: u },
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        iterations: residuals.len(),
        converged,
        residuals,
        modulus,
    })
}

/// Deterministic selector of the lowest-index action within [`TIE_TOL`] of the
/// maximum of `r + beta * E[V]`.
pub fn greedy_policy(mdp: &Mdp, beta: f64, v: &ValueFunction) -> StationaryPolicy {
    let choice = greedy_choice(mdp, beta, &v.values);
    StationaryPolicy::deterministic(mdp.population(), mdp.offsets(), &choice)
}

pub(crate) fn greedy_choice(mdp: &Mdp, beta: f64, v: &[f64]) -> Vec<usize> {
    (0..mdp.num_states())
        .map(|s| {
            let values: Vec<f64> = mdp.pair_range(s).map(|p| mdp.q_value(p, v, beta)).collect();
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            values.iter().position(|&x| x >= best - TIE_TOL).unwrap_or(0)
        })
        .collect()
}

/// Expected discounted reward of a stationary policy against the frozen measure.
///
/// Small problems are solved directly from `(I - beta M_f) V = r_f`; larger ones
/// iterate the linear operator to the same a-posteriori tolerance as
/// [`value_iterate`].
pub fn policy_value(mdp: &Mdp, policy: &StationaryPolicy, beta: f64, tol: f64) -> Result<ValueFunction> {
    check_beta(beta)?;
    policy.check_shape(mdp.offsets())?;
    let n = mdp.num_states();
    let r = mdp.policy_rewards(policy);
    let m = mdp.policy_matrix(policy);
    if n <= linalg::DIRECT_SOLVE_LIMIT {
        if let Some(values) = linalg::solve_resolvent(n, &m, beta, &r) {
            return Ok(ValueFunction { population: mdp.population(), values });
        }
    }
    let modulus = beta * mdp.weight_factor();
    if modulus >= 1.0 {
        return Err(Error::InvalidArgument(format!("beta * alpha = {modulus} >= 1")));
    }
    let threshold = tol * (1.0 - modulus) / modulus;
    let mut u = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n).map(|s| r[s] + beta * dot(&m[s * n..(s + 1) * n], &u)).collect();
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        u = next;
        if weighted_norm(&diff, mdp.weight()) <= threshold {
            break;
        }
    }
    Ok(ValueFunction { population: mdp.population(), values: u })
}

/// Optimal value to within `tol`. Value iteration, then for small problems
/// policy iteration from the resulting greedy policy, which makes the value
/// exact up to the linear solve.
pub fn optimal_value(mdp: &Mdp, beta: f64, tol: f64, max_iter: usize) -> Result<ValueFunction> {
    let vi = value_iterate(mdp, beta, tol, max_iter)?;
    if mdp.num_states() > linalg::DIRECT_SOLVE_LIMIT {
        return Ok(vi.value);
    }
    let mut best = vi.value;
    let mut choice = greedy_choice(mdp, beta, &best.values);
    for _ in 0..100 {
        let policy = StationaryPolicy::deterministic(mdp.population(), mdp.offsets(), &choice);
        let v = policy_value(mdp, &policy, beta, tol)?;
        // a policy that evaluates worse than the iterate means round-off has
        // taken over; keep the iterate
        if v.values.iter().zip(&best.values).zip(mdp.weight()).any(|((a, b), w)| *a < *b - tol * w) {
            break;
        }
        best = v;
        let next = greedy_choice(mdp, beta, &best.values);
        if next == choice {
            break;
        }
        choice = next;
    }
    Ok(best)
}

fn check_flow(mdps: &[Mdp], tail: Option<&[f64]>) -> Result<Vec<f64>> {
    let first = mdps.first().ok_or(Error::EmptyFlow)?;
    let n = first.num_states();
    if mdps.iter().any(|m| m.num_states() != n || m.offsets() != first.offsets()) {
        return Err(Error::ShapeMismatch("flow layers disagree on state or action sets".into()));
    }
    match tail {
        Some(t) if t.len() != n => Err(Error::ShapeMismatch(format!(
            "tail has {} entries for {n} states",
            t.len()
        ))),
        Some(t) => Ok(t.to_vec()),
        None => Ok(vec![0.0; n]),
    }
}

fn check_flow_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount factor {beta} must lie in (0, 1]")))
    }
}

/// Backward induction over frozen layers `mdps[t]`, `t = 0..T-1`.
///
/// `V^T = tail` (zero when `None`) and `V^t = T^t V^{t+1}`. `beta = 1` is
/// allowed: finite-horizon total payoff uses it on star-modified layers.
pub fn backward_induction(mdps: &[Mdp], beta: f64, tail: Option<&[f64]>) -> Result<ValueFlow> {
    check_flow_beta(beta)?;
    let tail = check_flow(mdps, tail)?;
    let population = mdps[0].population();
    let mut layers = vec![ValueFunction { population, values: tail }];
    for mdp in mdps.iter().rev() {
        let next = &layers.last().expect("nonempty").values;
        let values = apply(mdp, beta, next);
        layers.push(ValueFunction { population, values });
    }
    layers.reverse();
    Ok(ValueFlow { population, layers })
}

/// Greedy Markov policies: `pi_t` is greedy on layer `t` against `V^{t+1}`.
pub fn flow_greedy(mdps: &[Mdp], values: &ValueFlow, beta: f64) -> Result<MarkovPolicyFlow> {
    if values.layers.len() != mdps.len() + 1 {
        return Err(Error::HorizonMismatch { expected: mdps.len() + 1, got: values.layers.len() });
    }
    let layers = mdps
        .iter()
        .enumerate()
        .map(|(t, mdp)| greedy_policy(mdp, beta, &values.layers[t + 1]))
        .collect();
    Ok(MarkovPolicyFlow { population: values.population, layers })
}

/// Value of a Markov policy flow against frozen layers, with terminal value `tail`.
pub fn flow_policy_value(
    mdps: &[Mdp],
    flow: &MarkovPolicyFlow,
    beta: f64,
    tail: Option<&[f64]>,
) -> Result<ValueFlow> {
    check_flow_beta(beta)?;
    let tail = check_flow(mdps, tail)?;
    if flow.layers.len() != mdps.len() {
        return Err(Error::HorizonMismatch { expected: mdps.len(), got: flow.layers.len() });
    }
    let n = mdps[0].num_states();
    let population = mdps[0].population();
    let mut layers = vec![ValueFunction { population, values: tail }];
    for (mdp, policy) in mdps.iter().zip(&flow.layers).rev() {
        policy.check_shape(mdp.offsets())?;
        let next = &layers.last().expect("nonempty").values;
        let values = (0..n)
            .map(|s| {
                mdp.pair_range(s)
                    .zip(policy.row(s))
                    .map(|(p, f)| f * mdp.q_value(p, next, beta))
                    .sum()
            })
            .collect();
        layers.push(ValueFunction { population, values });
    }
    layers.reverse();
    Ok(ValueFlow { population, layers })
}

/// `L_t = gamma^t R / (1 - alpha beta gamma)`: the w-norm bound on the optimal
/// value at time `t` along any admissible flow.
pub fn flow_value_bound(reward_bound: f64, alpha: f64, beta: f64, gamma: f64, t: usize) -> f64 {
    gamma.powi(t as i32) * reward_bound / (1.0 - alpha * beta * gamma)
}

/// w-norm error from truncating a discounted problem after `horizon` steps
/// with a zero terminal value: `(beta alpha)^T R / (1 - beta alpha)`.
pub fn truncation_bound(reward_bound: f64, alpha: f64, beta: f64, horizon: usize) -> f64 {
    let c = beta * alpha;
    c.powi(horizon as i32) * reward_bound / (1.0 - c)
}
