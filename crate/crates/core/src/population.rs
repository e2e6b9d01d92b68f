//! Measure-level operations: lifting, aggregation, induced chains and their
//! invariant measures, and disintegration.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::dp::StationaryPolicy;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::Mdp;
use crate::model::{l1, GameModel, GlobalState, PopulationSpec, StateActionMeasure};

/// `tau(s, a) = f(a|s) mu(s)` over the feasible pairs.
pub fn lift(policy: &StationaryPolicy, mu: &[f64]) -> Result<Vec<f64>> {
    if policy.num_states() != mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "policy over {} states lifted with a measure over {}",
            policy.num_states(),
            mu.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(policy.rows())
        .flat_map(|(m, row)| row.iter().map(move |f| f * m))
        .collect())
}

/// Lifts every population at once.
pub fn lift_all(policies: &[StationaryPolicy], mu: &GlobalState) -> Result<StateActionMeasure> {
    if policies.len() != mu.num_populations() {
        return Err(Error::ShapeMismatch("one policy per population required".into()));
    }
    let parts = policies
        .iter()
        .enumerate()
        .map(|(i, f)| lift(f, mu.population(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StateActionMeasure::from_parts_unchecked(parts))
}

/// `mu'^i(s') = sum_{(s,a)} Q^i(s'|s,a,tau) tau^i(s,a)` for every population.
pub fn aggregate(model: &GameModel, tau: &StateActionMeasure) -> Result<GlobalState> {
    tau.validate(model.populations())?;
    Ok(aggregate_unchecked(model, tau))
}

pub(crate) fn aggregate_unchecked(model: &GameModel, tau: &StateActionMeasure) -> GlobalState {
    let parts = model
        .populations()
        .iter()
        .map(|pop| {
            let i = pop.index();
            let n = pop.num_states();
            let mut out = vec![0.0; n];
            let mut row = vec![0.0; n];
            for (p, &m) in tau.population(i).iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                model.dynamics().transition(i, p, tau, &mut row);
                for (o, q) in out.iter_mut().zip(&row) {
                    *o += m * q;
                }
            }
            out
        })
        .collect();
    GlobalState::from_parts_unchecked(parts)
}

/// Markov chain on the states of one population induced by a policy at a
/// frozen measure. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyChain {
    pub population: usize,
    n: usize,
    matrix: Vec<f64>,
}

impl PolicyChain {
    pub fn new(population: usize, n: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::ShapeMismatch(format!("chain matrix must be {n} x {n}")));
        }
        for (s, row) in matrix.chunks(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-12 * n as f64 {
                return Err(Error::NonStochasticRow { what: "chain".into(), index: format!("{s}"), sum });
            }
        }
        Ok(Self { population, n, matrix })
    }

    pub fn from_mdp(mdp: &Mdp, policy: &StationaryPolicy) -> Result<Self> {
        policy.check_shape(mdp.offsets())?;
        Ok(Self { population: mdp.population(), n: mdp.num_states(), matrix: mdp.policy_matrix(policy) })
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.matrix[s * self.n..(s + 1) * self.n]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `rho M`.
    pub fn step(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (s, &m) in rho.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, q) in out.iter_mut().zip(self.row(s)) {
                *o += m * q;
            }
        }
        out
    }

    /// `||mu - mu M||_1`.
    pub fn residual(&self, mu: &[f64]) -> f64 {
        l1(mu, &self.step(mu))
    }

    /// Cesaro limit of the chain started at `start` (uniform when `None`).
    ///
    /// Chains with at most 64 states are resolved exactly through their closed
    /// classes: each closed class contributes its stationary law weighted by
    /// the probability of being absorbed into it. Larger chains run the
    /// Cesaro average and return whichever of the average or the current
    /// iterate first meets `tol`.
    pub fn invariant_measure(&self, start: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<InvariantMeasure> {
        let n = self.n;
        let rho0 = match start {
            Some(s) if s.len() != n => {
                return Err(Error::ShapeMismatch(format!("start has {} entries for {n} states", s.len())))
            }
            Some(s) => s.to_vec(),
            None => vec![1.0 / n as f64; n],
        };
        if n <= linalg::DIRECT_SOLVE_LIMIT {
            if let Some(mu) = self.cesaro_limit(&rho0) {
                let residual = self.residual(&mu);
                if residual <= tol {
                    return Ok(InvariantMeasure { measure: mu, residual, iterations: 0, converged: true });
                }
            }
        }
        Ok(self.cesaro_iterate(rho0, tol, max_iter))
    }

    fn cesaro_iterate(&self, rho0: Vec<f64>, tol: f64, max_iter: usize) -> InvariantMeasure {
        let mut rho = rho0;
        let mut sum = vec![0.0; self.n];
        let mut best = InvariantMeasure { measure: rho.clone(), residual: f64::INFINITY, iterations: 0, converged: false };
        for t in 1..=max_iter {
            for (a, b) in sum.iter_mut().zip(&rho) {
                *a += b;
            }
            let next = self.step(&rho);
            let iterate_residual = l1(&rho, &next);
            let avg: Vec<f64> = sum.iter().map(|x| x / t as f64).collect();
            let avg_residual = self.residual(&avg);
            let (cand, res) =
                if iterate_residual < avg_residual { (rho.clone(), iterate_residual) } else { (avg, avg_residual) };
            if res < best.residual {
                best = InvariantMeasure { measure: cand, residual: res, iterations: t, converged: res <= tol };
            }
            if best.converged {
                return best;
            }
            rho = next;
        }
        best.iterations = max_iter;
        best
    }

    /// Exact Cesaro limit via the closed-class decomposition.
    fn cesaro_limit(&self, rho0: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let mut graph = DiGraph::<usize, ()>::with_capacity(n, n * n);
        let nodes: Vec<_> = (0..n).map(|s| graph.add_node(s)).collect();
        for s in 0..n {
            for (t, &q) in self.row(s).iter().enumerate() {
                if q > 0.0 {
                    graph.add_edge(nodes[s], nodes[t], ());
                }
            }
        }
        let mut class_of = vec![usize::MAX; n];
        let components = tarjan_scc(&graph);
        for (c, comp) in components.iter().enumerate() {
            for node in comp {
                class_of[graph[*node]] = c;
            }
        }
        let closed: Vec<Vec<usize>> = components
            .iter()
            .enumerate()
            .filter(|(c, comp)| {
                comp.iter().all(|node| {
                    let s = graph[*node];
                    self.row(s).iter().enumerate().all(|(t, &q)| q == 0.0 || class_of[t] == *c)
                })
            })
            .map(|(_, comp)| {
                let mut states: Vec<usize> = comp.iter().map(|node| graph[*node]).collect();
                states.sort_unstable();
                states
            })
            .collect();

        let mut recurrent = vec![false; n];
        for class in &closed {
            for &s in class {
                recurrent[s] = true;
            }
        }
        let transient: Vec<usize> = (0..n).filter(|s| !recurrent[*s]).collect();

        let mut mu = vec![0.0; n];
        for class in &closed {
            let pi = self.class_stationary(class)?;
            let mut weight: f64 = class.iter().map(|&s| rho0[s]).sum();
            if !transient.is_empty() {
                let h = self.absorption(&transient, class, &recurrent)?;
                weight += transient.iter().zip(&h).map(|(&s, hs)| rho0[s] * hs).sum::<f64>();
            }
            for (&s, p) in class.iter().zip(&pi) {
                mu[s] += weight * p;
            }
        }
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(mu.into_iter().map(|x| (x / total).max(0.0)).collect())
    }

    /// Stationary law of an irreducible closed class: `pi (I - M_C) = 0`,
    /// `sum pi = 1`.
    fn class_stationary(&self, class: &[usize]) -> Option<Vec<f64>> {
        let k = class.len();
        if k == 1 {
            return Some(vec![1.0]);
        }
        let mut a = vec![0.0; k * k];
        for (r, &sr) in class.iter().enumerate() {
            for (c, &sc) in class.iter().enumerate() {
                // transpose of (I - M_C)
                a[c * k + r] = if r == c { 1.0 } else { 0.0 } - self.matrix[sr * self.n + sc];
            }
        }
        for c in 0..k {
            a[(k - 1) * k + c] = 1.0;
        }
        let mut b = vec![0.0; k];
        b[k - 1] = 1.0;
        linalg::solve(k, &a, &b).map(|x| x.into_iter().map(|v| v.max(0.0)).collect())
    }

    /// Probability of eventually entering `class` from each transient state.
    fn absorption(&self, transient: &[usize], class: &[usize], recurrent: &[bool]) -> Option<Vec<f64>> {
        let k = transient.len();
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for (r, &sr) in transient.iter().enumerate() {
            for (c, &sc) in transient.iter().enumerate() {
                a[r * k + c] = if r == c { 1.0 } else { 0.0 } - self.matrix[sr * self.n + sc];
            }
            b[r] = class.iter().map(|&t| self.matrix[sr * self.n + t]).sum();
            debug_assert!(!recurrent[sr]);
        }
        linalg::solve(k, &a, &b)
    }
}

/// Result of [`invariant_measure`].
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMeasure {
    pub measure: Vec<f64>,
    /// `||mu - mu M||_1`.
    pub residual: f64,
    /// Chain steps taken; zero when resolved exactly.
    pub iterations: usize,
    pub converged: bool,
}

/// `M[s][s'] = sum_a f(a|s) Q^i(s'|s,a,tau)`.
pub fn policy_transition_matrix(
    model: &GameModel,
    i: usize,
    policy: &StationaryPolicy,
    tau: &StateActionMeasure,
) -> Result<PolicyChain> {
    tau.validate(model.populations())?;
    PolicyChain::from_mdp(&model.freeze(i, tau), policy)
}

/// Invariant measure of the chain a policy induces at a frozen measure.
pub fn invariant_measure(
    model: &GameModel,
    i: usize,
    policy: &StationaryPolicy,
    tau: &StateActionMeasure,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<InvariantMeasure> {
    policy_transition_matrix(model, i, policy, tau)?.invariant_measure(start, tol, max_iter)
}

/// Splits `tau^i` into its state marginal and the conditional action kernel.
/// States without mass get the uniform kernel.
pub fn disintegrate(population: &PopulationSpec, tau: &[f64]) -> Result<(StationaryPolicy, Vec<f64>)> {
    if tau.len() != population.num_pairs() {
        return Err(Error::ShapeMismatch(format!(
            "measure has {} entries for {} pairs",
            tau.len(),
            population.num_pairs()
        )));
    }
    let mut rows = Vec::with_capacity(population.num_states());
    let mut mu = Vec::with_capacity(population.num_states());
    for s in 0..population.num_states() {
        let part = &tau[population.pair_range(s)];
        let m: f64 = part.iter().sum();
        mu.push(m);
        if m > 0.0 {
            rows.push(part.iter().map(|x| x / m).collect());
        } else {
            rows.push(vec![1.0 / part.len() as f64; part.len()]);
        }
    }
    Ok((StationaryPolicy::from_rows_unchecked(population.index(), rows), mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn chain(rows: &[&[f64]]) -> PolicyChain {
        let n = rows.len();
        PolicyChain::new(0, n, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn deterministic_lift_of_point_mass() {
        let g3 = fixtures::g3();
        let pop = g3.population(0);
        let f = StationaryPolicy::deterministic(0, pop.offsets(), &[1, 0]);
        assert_eq!(lift(&f, &[1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_lift_is_uniform() {
        let g3 = fixtures::g3();
        let f = StationaryPolicy::uniform_for(g3.population(0));
        assert_eq!(lift(&f, &[0.5, 0.5]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn swap_preserves_uniform() {
        let g2 = fixtures::g2();
        let f = StationaryPolicy::uniform_for(g2.population(0));
        let tau = lift_all(&[f], &GlobalState::uniform(g2.populations())).unwrap();
        assert_eq!(aggregate(&g2, &tau).unwrap().population(0), &[0.5, 0.5]);
    }

    #[test]
    fn all_mass_to_one_state() {
        let g3 = fixtures::g3();
        let pop = g3.population(0);
        let f = StationaryPolicy::deterministic(0, pop.offsets(), &[0, 1]);
        let tau = lift_all(&[f], &GlobalState::uniform(g3.populations())).unwrap();
        assert_eq!(aggregate(&g3, &tau).unwrap().population(0), &[1.0, 0.0]);
    }

    #[test]
    fn two_cycle_has_uniform_invariant_measure() {
        let out = chain(&[&[0.0, 1.0], &[1.0, 0.0]]).invariant_measure(Some(&[1.0, 0.0]), 1e-12, 10).unwrap();
        assert!(out.converged);
        assert_eq!(out.measure, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_chain_keeps_start() {
        let out = chain(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]])
            .invariant_measure(None, 1e-12, 10)
            .unwrap();
        for m in &out.measure {
            assert!((m - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn transient_mass_splits_by_absorption() {
        // 0 -> {1, 2} with probabilities 0.25 / 0.75; 1 and 2 absorbing.
        let c = chain(&[&[0.0, 0.25, 0.75], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let out = c.invariant_measure(Some(&[1.0, 0.0, 0.0]), 1e-12, 10).unwrap();
        assert!((out.measure[1] - 0.25).abs() < 1e-14);
        assert!((out.measure[2] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn iterative_path_matches_exact_path() {
        let c = chain(&[&[0.2, 0.8, 0.0], &[0.1, 0.3, 0.6], &[0.5, 0.0, 0.5]]);
        let exact = c.invariant_measure(None, 1e-12, 10).unwrap();
        let iter = c.cesaro_iterate(vec![1.0 / 3.0; 3], 1e-12, 100_000);
        assert!(iter.converged);
        assert!(l1(&exact.measure, &iter.measure) < 1e-10);
    }

    #[test]
    fn disintegrate_off_support_is_uniform() {
        let g3 = fixtures::g3();
        let (g, mu) = disintegrate(g3.population(0), &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mu, vec![1.0, 0.0]);
        assert_eq!(g.row(0), &[0.0, 1.0]);
        assert_eq!(g.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn non_stochastic_chain_rejected() {
        assert!(PolicyChain::new(0, 2, vec![0.5, 0.4, 0.0, 1.0]).is_err());
    }
}
