//! Total-payoff criterion.
//!
//! A population with a `star` state is transient when the expected weighted
//! time spent away from `star` is bounded uniformly over policies. The taboo
//! weight `zeta` measures that time; dividing rewards by `zeta` and tilting
//! the kernel by it turns the total-payoff problem into a discounted one with
//! factor `(L - 1) / L`, `L = ||zeta||_w`.

use std::sync::Arc;

use crate::dp::{self, StationaryPolicy, ValueFunction};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{dot, Mdp};
use crate::model::{Dynamics, GameModel, PopulationSpec, StateActionMeasure, WeightFunction, STAR};

/// Increments are compared this many iterations apart to detect divergence.
pub const DIVERGENCE_WINDOW: usize = 50;
/// Discount used when every non-star state exits immediately.
pub const BETA_FLOOR: f64 = 1e-6;

/// The star-modified evaluator of one population: `Q` away from `star`, the
/// point mass at `star` from `star`.
#[derive(Debug, Clone)]
pub struct StarKernel {
    model: GameModel,
    population: usize,
    star: usize,
}

impl StarKernel {
    pub fn population(&self) -> usize {
        self.population
    }

    pub fn star(&self) -> usize {
        self.star
    }

    /// `Q*(.|s, a, tau)`.
    pub fn transition(&self, s: usize, a: usize, tau: &StateActionMeasure) -> Result<Vec<f64>> {
        if s == self.star {
            let mut row = vec![0.0; self.model.population(self.population).num_states()];
            row[self.star] = 1.0;
            self.model.eval_transition(self.population, s, a, tau)?;
            return Ok(row);
        }
        self.model.eval_transition(self.population, s, a, tau)
    }

    /// Frozen problem with `Q*` and zero reward at `star`.
    pub fn freeze(&self, tau: &StateActionMeasure) -> Mdp {
        self.model
            .freeze(self.population, tau)
            .star_modified()
            .expect("star present")
    }
}

pub fn star_modify(model: &GameModel, i: usize) -> Result<StarKernel> {
    let pop = model
        .populations()
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("population {i} out of range")))?;
    let star = pop.star().ok_or(Error::MissingStar { population: i })?;
    Ok(StarKernel { model: model.clone(), population: i, star })
}

/// `zeta(s) >= w(s)` away from `star`, `zeta(star) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaFunction {
    pub population: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransienceReport {
    /// `||zeta||_w`.
    pub l: f64,
    pub certified: bool,
    /// Increments stopped shrinking over the divergence window.
    pub diverged: bool,
    /// One minus the observed per-step contraction of the increments.
    pub margin: f64,
    pub iterations: usize,
}

fn star_of(mdp: &Mdp) -> Result<usize> {
    mdp.star().ok_or(Error::MissingStar { population: mdp.population() })
}

fn taboo_sweep(mdp: &Mdp, star: usize, prev: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let w = mdp.weight();
    let mut next = vec![0.0; mdp.num_states()];
    let mut choice = vec![0; mdp.num_states()];
    for s in 0..mdp.num_states() {
        if s == star {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for (k, p) in mdp.pair_range(s).enumerate() {
            let v = dot(mdp.row(p), prev) - mdp.row(p)[star] * prev[star];
            if v > best + dp::TIE_TOL {
                best = v;
                choice[s] = k;
            }
        }
        next[s] = w[s] + best;
    }
    (next, choice)
}

/// Exact `zeta` of the policy choosing `choice`: `(I - P_taboo) z = w`.
fn taboo_solve(mdp: &Mdp, star: usize, choice: &[usize]) -> Option<Vec<f64>> {
    let live: Vec<usize> = (0..mdp.num_states()).filter(|&s| s != star).collect();
    let k = live.len();
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for (r, &s) in live.iter().enumerate() {
        let p = mdp.pair_range(s).start + choice[s];
        for (c, &t) in live.iter().enumerate() {
            a[r * k + c] = if r == c { 1.0 } else { 0.0 } - mdp.row(p)[t];
        }
        b[r] = mdp.weight()[s];
    }
    let z = linalg::solve(k, &a, &b)?;
    if z.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return None;
    }
    let mut out = vec![0.0; mdp.num_states()];
    for (&s, v) in live.iter().zip(z) {
        out[s] = v;
    }
    Some(out)
}

/// Taboo weight of a frozen problem with a `star` state.
///
/// Iterates `w_n(s) = max_a [w(s) + sum_{s' != star} w_{n-1}(s') Q*(s'|s,a)]`
/// from `w_0 = w` until the sup-norm increment drops below `tol`. Divergence
/// is declared when an increment is no smaller than the one
/// [`DIVERGENCE_WINDOW`] iterations earlier. Problems with at most 64 states
/// finish with policy iteration on the taboo system so `zeta` is exact.
pub fn compute_zeta(mdp: &Mdp, tol: f64, max_iter: usize) -> Result<(ZetaFunction, TransienceReport)> {
    let star = star_of(mdp)?;
    let w = mdp.weight();
    let mut z: Vec<f64> = (0..mdp.num_states()).map(|s| if s == star { 0.0 } else { w[s] }).collect();
    let mut increments: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut choice = vec![0; mdp.num_states()];
    for n in 0..max_iter {
        let (next, c) = taboo_sweep(mdp, star, &z);
        let d = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next;
        choice = c;
        increments.push(d);
        if !d.is_finite() {
            diverged = true;
            break;
        }
        if d <= tol {
            converged = true;
            break;
        }
        if n >= DIVERGENCE_WINDOW && d >= increments[n - DIVERGENCE_WINDOW] {
            diverged = true;
            break;
        }
    }

    let margin = match increments.len() {
        0 | 1 => 1.0,
        k => {
            let (a, b) = (increments[k - 2], increments[k - 1]);
            if a > 0.0 {
                1.0 - b / a
            } else {
                1.0
            }
        }
    };

    if converged && mdp.num_states() <= linalg::DIRECT_SOLVE_LIMIT {
        z = polish(mdp, star, z, choice);
    }

    let l = (0..mdp.num_states())
        .filter(|&s| s != star)
        .map(|s| z[s] / w[s])
        .fold(1.0, f64::max);
    let report = TransienceReport {
        l,
        certified: converged && !diverged && l.is_finite(),
        diverged,
        margin,
        iterations: increments.len(),
    };
    Ok((ZetaFunction { population: mdp.population(), values: z }, report))
}

/// Policy iteration on the taboo system, started from a near-optimal policy.
fn polish(mdp: &Mdp, star: usize, approx: Vec<f64>, mut choice: Vec<usize>) -> Vec<f64> {
    let mut best = approx;
    for _ in 0..100 {
        let Some(z) = taboo_solve(mdp, star, &choice) else {
            return best;
        };
        if z.iter().zip(&best).any(|(a, b)| *a + 1e-9 * b.abs().max(1.0) < *b) {
            return best;
        }
        best = z;
        let (_, next) = taboo_sweep(mdp, star, &best);
        if next == choice {
            break;
        }
        choice = next;
    }
    best
}

/// Discounted problem equivalent to a transient total-payoff problem.
#[derive(Debug, Clone)]
pub struct TransformedMdp {
    /// Discount factor of the equivalent problem.
    pub beta: f64,
    /// Rewards `r / zeta`, kernel tilted by `zeta`, unit weight.
    pub mdp: Mdp,
    pub zeta: ZetaFunction,
    /// Set when `L <= 1`: every live state exits at once and `beta` is
    /// [`BETA_FLOOR`].
    pub degenerate: bool,
}

/// `(L - 1) / L`, floored at [`BETA_FLOOR`].
pub fn transformed_discount(l: f64) -> f64 {
    ((l - 1.0) / l).max(BETA_FLOOR)
}

/// Builds the discounted problem from `zeta` with `beta = (L - 1) / L`.
pub fn transform_to_discounted(mdp: &Mdp, zeta: &ZetaFunction, l: f64) -> Result<TransformedMdp> {
    transform_with_discount(mdp, zeta, transformed_discount(l), l <= 1.0)
}

/// Same as [`transform_to_discounted`] with an explicit discount, which must be
/// at least the population's own `(L - 1) / L`. Games use the largest factor
/// over their populations.
pub fn transform_with_discount(mdp: &Mdp, zeta: &ZetaFunction, beta: f64, degenerate: bool) -> Result<TransformedMdp> {
    let star = star_of(mdp)?;
    let n = mdp.num_states();
    if zeta.values.len() != n {
        return Err(Error::ShapeMismatch("zeta does not match the state space".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("transformed discount {beta} must lie in (0, 1)")));
    }
    let z = &zeta.values;
    let mut rewards = Vec::with_capacity(mdp.num_pairs());
    let mut rows = vec![0.0; mdp.num_pairs() * n];
    for p in 0..mdp.num_pairs() {
        let s = mdp.state_of(p);
        let out = &mut rows[p * n..(p + 1) * n];
        if s == star {
            rewards.push(0.0);
            out[star] = 1.0;
            continue;
        }
        rewards.push(mdp.reward(p) / z[s]);
        let q = mdp.row(p);
        let mut mass = 0.0;
        for t in 0..n {
            if t != star {
                out[t] = z[t] * q[t] / (beta * z[s]);
                mass += out[t];
            }
        }
        if mass > 1.0 {
            // only round-off can push the live mass past one
            out.iter_mut().for_each(|x| *x /= mass);
            mass = 1.0;
        }
        out[star] = 1.0 - mass;
    }
    let weight = vec![1.0; n];
    let transformed = Mdp::new(
        mdp.population(),
        mdp.offsets().to_vec(),
        mdp.actions().to_vec(),
        rewards,
        rows,
        weight,
        Some(star),
    )?;
    Ok(TransformedMdp { beta, mdp: transformed, zeta: zeta.clone(), degenerate })
}

/// Certified `zeta`, or [`Error::NotTransient`].
pub fn certified_zeta(mdp: &Mdp, tol: f64) -> Result<(ZetaFunction, TransienceReport)> {
    let (zeta, report) = compute_zeta(mdp, tol.min(1e-10), 1_000_000)?;
    if !report.certified {
        return Err(Error::NotTransient { population: mdp.population() });
    }
    Ok((zeta, report))
}

/// Optimal total payoff `V* = V_beta * zeta` with `V*(star) = 0`.
///
/// `beta` overrides the transformed discount (it must be at least the
/// population's own); `None` uses `(L - 1) / L`.
pub fn total_value_with(mdp: &Mdp, tol: f64, beta: Option<f64>) -> Result<ValueFunction> {
    let (zeta, report) = certified_zeta(mdp, tol)?;
    total_value_from(mdp, &zeta, report.l, beta, tol)
}

/// [`total_value_with`] from an already certified `zeta`.
pub fn total_value_from(mdp: &Mdp, zeta: &ZetaFunction, l: f64, beta: Option<f64>, tol: f64) -> Result<ValueFunction> {
    let own = transformed_discount(l);
    let beta = beta.map_or(own, |b| b.max(own));
    let t = transform_with_discount(mdp, zeta, beta, l <= 1.0)?;
    let inner = dp::optimal_value(&t.mdp, t.beta, tol / l, 1_000_000)?;
    let values = inner.values.iter().zip(&zeta.values).map(|(v, z)| v * z).collect();
    Ok(ValueFunction { population: mdp.population(), values })
}

pub fn total_value(mdp: &Mdp, tol: f64) -> Result<ValueFunction> {
    total_value_with(mdp, tol, None)
}

/// Total payoff of a stationary policy: `V = r_f + P_f V` on live states,
/// `V(star) = 0`.
pub fn total_policy_value(mdp: &Mdp, policy: &StationaryPolicy, tol: f64) -> Result<ValueFunction> {
    let star = star_of(mdp)?;
    policy.check_shape(mdp.offsets())?;
    let n = mdp.num_states();
    let mut r = mdp.policy_rewards(policy);
    let mut m = mdp.policy_matrix(policy);
    r[star] = 0.0;
    for s in 0..n {
        m[s * n + star] = 0.0;
        if s == star {
            m[s * n..(s + 1) * n].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    if n <= linalg::DIRECT_SOLVE_LIMIT {
        if let Some(values) = linalg::solve_resolvent(n, &m, 1.0, &r) {
            return Ok(ValueFunction { population: mdp.population(), values });
        }
        return Err(Error::NotTransient { population: mdp.population() });
    }
    let mut v = vec![0.0; n];
    for _ in 0..1_000_000 {
        let next: Vec<f64> = (0..n).map(|s| r[s] + dot(&m[s * n..(s + 1) * n], &v)).collect();
        let delta = crate::model::weighted_norm(
            &next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>(),
            mdp.weight(),
        );
        v = next;
        if delta <= tol * 1e-3 {
            return Ok(ValueFunction { population: mdp.population(), values: v });
        }
    }
    Err(Error::NotTransient { population: mdp.population() })
}

/// Time-layered homogeneous problem built from a flow.
#[derive(Debug, Clone)]
pub struct LayeredMdp {
    pub mdp: Mdp,
    /// Number of flow layers `T`; states exist for layers `0..=T`.
    pub horizon: usize,
    live: Vec<usize>,
    star: usize,
}

impl LayeredMdp {
    /// Index of original state `s` at layer `t`; `None` for the original star.
    pub fn index(&self, s: usize, t: usize) -> Option<usize> {
        let k = self.live.iter().position(|&x| x == s)?;
        (t <= self.horizon).then(|| t * self.live.len() + k)
    }

    pub fn star(&self) -> usize {
        self.star
    }
}

/// Embeds a flow `tau_0..tau_{T-1}` of population `i` on `S x {0..T}`.
///
/// Layer `t < T` pays `r(., ., tau_t)` and moves to layer `t + 1` by
/// `Q*(.|., ., tau_t)`; mass leaving to the original star goes to a single
/// shared star. Layer `T` pays `tail` (zero by default) and exits. State
/// `(s, t)` carries weight `w(s) alpha^{-t}`.
pub fn nonstationary_embed(
    model: &GameModel,
    i: usize,
    flow: &[StateActionMeasure],
    alpha: f64,
    tail: Option<&[f64]>,
) -> Result<LayeredMdp> {
    if flow.is_empty() {
        return Err(Error::EmptyFlow);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight factor {alpha} must be positive")));
    }
    let kernel = star_modify(model, i)?;
    let pop = model.population(i);
    let w = model.weight().population(i);
    let orig_star = kernel.star();
    let live: Vec<usize> = (0..pop.num_states()).filter(|&s| s != orig_star).collect();
    if let Some(t) = tail {
        if t.len() != pop.num_states() {
            return Err(Error::ShapeMismatch("tail does not match the state space".into()));
        }
    }
    let horizon = flow.len();
    let k = live.len();
    let n = k * (horizon + 1) + 1;
    let star = n - 1;

    let mut offsets = vec![0];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut rows = Vec::new();
    let mut weight = Vec::with_capacity(n);
    let frozen: Vec<Mdp> = flow.iter().map(|tau| kernel.freeze(tau)).collect();
    for t in 0..=horizon {
        for &s in &live {
            weight.push(w[s] * alpha.powi(-(t as i32)));
            for p in pop.pair_range(s) {
                actions.push(pop.pair_actions()[p]);
                let mut row = vec![0.0; n];
                if t < horizon {
                    let m = &frozen[t];
                    rewards.push(m.reward(p));
                    for (kk, &s2) in live.iter().enumerate() {
                        row[(t + 1) * k + kk] = m.row(p)[s2];
                    }
                    row[star] = m.row(p)[orig_star];
                } else {
                    rewards.push(tail.map_or(0.0, |v| v[s]));
                    row[star] = 1.0;
                }
                rows.extend(row);
            }
            offsets.push(actions.len());
        }
    }
    weight.push(1.0);
    actions.push(pop.pair_actions()[pop.pair_range(orig_star).start]);
    rewards.push(0.0);
    let mut row = vec![0.0; n];
    row[star] = 1.0;
    rows.extend(row);
    offsets.push(actions.len());

    let mdp = Mdp::new(i, offsets, actions, rewards, rows, weight, Some(star))?;
    Ok(LayeredMdp { mdp, horizon, live, star })
}

/// Evaluators of the finite-horizon embedding.
#[derive(Debug)]
struct HorizonDynamics {
    inner: GameModel,
    horizon: usize,
}

impl HorizonDynamics {
    /// Original pair and layer of an embedded pair; `None` for the star pair.
    fn locate(&self, i: usize, p: usize) -> Option<(usize, usize)> {
        let np = self.inner.population(i).num_pairs();
        (p < np * self.horizon).then(|| (p % np, p / np))
    }

    /// Embedded measure folded onto the original pairs and renormalised by
    /// the mass away from star; uniform when there is none.
    fn collapse(&self, tau: &StateActionMeasure) -> StateActionMeasure {
        let parts = self
            .inner
            .populations()
            .iter()
            .map(|pop| {
                let np = pop.num_pairs();
                let mut out = vec![0.0; np];
                for (p, m) in tau.population(pop.index()).iter().enumerate().take(np * self.horizon) {
                    out[p % np] += m;
                }
                let mass: f64 = out.iter().sum();
                if mass > 0.0 {
                    out.iter_mut().for_each(|x| *x /= mass);
                } else {
                    out.iter_mut().for_each(|x| *x = 1.0 / np as f64);
                }
                out
            })
            .collect();
        StateActionMeasure::from_parts_unchecked(parts)
    }
}

impl Dynamics for HorizonDynamics {
    fn reward(&self, i: usize, pair: usize, tau: &StateActionMeasure) -> f64 {
        match self.locate(i, pair) {
            Some((p, _)) => self.inner.dynamics().reward(i, p, &self.collapse(tau)),
            None => 0.0,
        }
    }

    fn transition(&self, i: usize, pair: usize, tau: &StateActionMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let star = out.len() - 1;
        match self.locate(i, pair) {
            Some((p, t)) if t + 1 < self.horizon => {
                let pop = self.inner.population(i);
                let n = pop.num_states();
                let mut row = vec![0.0; n];
                self.inner.dynamics().transition(i, p, &self.collapse(tau), &mut row);
                out[(t + 1) * n..(t + 2) * n].copy_from_slice(&row);
            }
            _ => out[star] = 1.0,
        }
    }
}

/// Game on `(s, t)`, `t < T`, plus `star`: every step advances `t`, the last
/// layer exits to `star`, rewards ignore `t`, and the coupling sees the
/// embedded measure folded back onto the original pairs. Labels are `s@t`.
pub fn finite_horizon_embed(model: &GameModel, horizon: usize) -> Result<GameModel> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut pops = Vec::with_capacity(model.num_populations());
    let mut weights = Vec::with_capacity(model.num_populations());
    for pop in model.populations() {
        if pop.star().is_some() {
            return Err(Error::InvalidArgument(format!(
                "population {} already has a star state",
                pop.index()
            )));
        }
        let n = pop.num_states();
        let m = pop.num_actions();
        let mut states = Vec::with_capacity(n * horizon + 1);
        let mut feasible = Vec::with_capacity(n * horizon + 1);
        let w = model.weight().population(pop.index());
        let mut weight = Vec::with_capacity(n * horizon + 1);
        for t in 0..horizon {
            for s in 0..n {
                states.push(format!("{}@{t}", pop.states()[s]));
                feasible.push(pop.feasible(s).to_vec());
                weight.push(w[s]);
            }
        }
        states.push(STAR.into());
        feasible.push(vec![m]);
        weight.push(1.0);
        let mut actions = pop.actions().to_vec();
        actions.push(STAR.into());
        pops.push(PopulationSpec::new(pop.index(), states, actions, feasible)?);
        weights.push(weight);
    }
    let dynamics = HorizonDynamics { inner: model.clone(), horizon };
    GameModel::new(pops, WeightFunction::new(weights)?, Arc::new(dynamics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    // Embedded pairs must be numbered layer-major for `HorizonDynamics::locate`.
    fn embedded_pair_layout(pop: &PopulationSpec, horizon: usize, embedded: &PopulationSpec) -> bool {
        let np = pop.num_pairs();
        (0..horizon * np).all(|p| {
            let (s, a) = embedded.pair(p);
            let (s0, a0) = pop.pair(p % np);
            s == (p / np) * pop.num_states() + s0 && a == a0
        })
    }

    fn g4_mdp() -> Mdp {
        let g4 = fixtures::g4();
        g4.freeze(0, &StateActionMeasure::uniform(g4.populations()))
    }

    #[test]
    fn star_kernel_absorbs() {
        let g4 = fixtures::g4();
        let k = star_modify(&g4, 0).unwrap();
        let tau = StateActionMeasure::uniform(g4.populations());
        assert_eq!(k.transition(0, 0, &tau).unwrap(), vec![0.5, 0.5]);
        assert_eq!(k.transition(1, 1, &tau).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn star_modify_needs_star() {
        assert!(matches!(star_modify(&fixtures::g3(), 0), Err(Error::MissingStar { population: 0 })));
    }

    #[test]
    fn zeta_of_geometric_lifetime() {
        let (z, report) = compute_zeta(&g4_mdp(), 1e-12, 10_000).unwrap();
        assert!(report.certified);
        assert_eq!(z.values, vec![2.0, 0.0]);
        assert_eq!(report.l, 2.0);
    }

    #[test]
    fn recurrent_loop_is_flagged() {
        let m = Mdp::new(
            0,
            vec![0, 2, 3],
            vec![0, 1, 2],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0],
            vec![1.0, 1.0],
            Some(1),
        )
        .unwrap();
        let (_, report) = compute_zeta(&m, 1e-10, 10_000).unwrap();
        assert!(report.diverged);
        assert!(!report.certified);
        assert!(matches!(total_value(&m, 1e-8), Err(Error::NotTransient { .. })));
    }

    #[test]
    fn transformed_g4() {
        let m = g4_mdp();
        let (z, report) = compute_zeta(&m, 1e-12, 10_000).unwrap();
        let t = transform_to_discounted(&m, &z, report.l).unwrap();
        assert_eq!(t.beta, 0.5);
        assert_eq!(t.mdp.row(0), &[1.0, 0.0]);
        assert_eq!(t.mdp.reward(0), 0.5);
        assert_eq!(t.mdp.row(1), &[0.0, 1.0]);
        let v = total_value(&m, 1e-10).unwrap();
        assert!((v.values[0] - 2.0).abs() < 1e-9);
        assert_eq!(v.values[1], 0.0);
    }

    #[test]
    fn immediate_exit_is_degenerate() {
        let m = Mdp::new(0, vec![0, 1, 2], vec![0, 1], vec![3.0, 0.0], vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 1.0], Some(1))
            .unwrap();
        let (z, report) = compute_zeta(&m, 1e-12, 100).unwrap();
        assert_eq!(report.l, 1.0);
        let t = transform_to_discounted(&m, &z, report.l).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.beta, BETA_FLOOR);
        assert!((total_value(&m, 1e-10).unwrap().values[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let mut m = g4_mdp();
        m.set_reward(0, 0.0);
        assert_eq!(total_value(&m, 1e-10).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn policy_value_of_g4() {
        let m = g4_mdp();
        let f = StationaryPolicy::uniform(0, m.offsets());
        let v = total_policy_value(&m, &f, 1e-12).unwrap();
        assert!((v.values[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn one_layer_embedding() {
        let g4 = fixtures::g4();
        let tau = StateActionMeasure::uniform(g4.populations());
        let layered = nonstationary_embed(&g4, 0, std::slice::from_ref(&tau), 1.0, None).unwrap();
        assert_eq!(layered.mdp.num_states(), 3);
        let v = total_value(&layered.mdp, 1e-12).unwrap();
        assert!((v.values[layered.index(0, 0).unwrap()] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn horizon_embedding_of_trivial_game() {
        let g1 = fixtures::g1();
        let e = finite_horizon_embed(&g1, 1).unwrap();
        let tau = StateActionMeasure::uniform(e.populations());
        let v = total_value(&e.freeze(0, &tau), 1e-12).unwrap();
        assert!((v.values[0] - 1.0).abs() < 1e-10);
        assert!(finite_horizon_embed(&fixtures::g4(), 2).is_err());
    }

    #[test]
    fn horizon_embedding_layout() {
        let g3 = fixtures::g3();
        let e = finite_horizon_embed(&g3, 3).unwrap();
        assert!(embedded_pair_layout(g3.population(0), 3, e.population(0)));
        assert_eq!(e.population(0).states()[3], "1@1");
    }
}
