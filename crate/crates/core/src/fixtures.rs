//! Small named games and a seeded random game generator.
//!
//! * `g1`: one state, one action, reward 1.
//! * `g2`: two states, one action, deterministic swap.
//! * `g3`: two states, actions `stay` / `move`, reward `-tau_S(s)` (crowd aversion).
//! * `g3_pair`: two copies of `g3` that also dislike the other population.
//! * `g4`: a transient state `x` leaving to `star` with probability 0.5 per step.
//! * `g4_coupled`: `g4` with crowd-averse rewards and a second action.

use rand::Rng;

use crate::model::{build_tabular_model, GameModel, PopulationSpec, TabularCoupling, WeightFunction, STAR};

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn g1() -> GameModel {
    let pops = vec![PopulationSpec::full(0, labels(&["x"]), labels(&["a"])).expect("valid")];
    let mut c = TabularCoupling::zeros(&pops);
    c.set_base_reward(0, 0, 0, 1.0).expect("feasible");
    c.set_base_transition(0, 0, 0, &[1.0]).expect("feasible");
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

pub fn g2() -> GameModel {
    let pops = vec![PopulationSpec::full(0, labels(&["x", "y"]), labels(&["a"])).expect("valid")];
    let mut c = TabularCoupling::zeros(&pops);
    c.set_base_transition(0, 0, 0, &[0.0, 1.0]).expect("feasible");
    c.set_base_transition(0, 1, 0, &[1.0, 0.0]).expect("feasible");
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

fn congestion_population(index: usize) -> PopulationSpec {
    PopulationSpec::full(index, labels(&["0", "1"]), labels(&["stay", "move"])).expect("valid")
}

fn congestion_transitions(c: &mut TabularCoupling, i: usize) {
    for s in 0..2 {
        let mut stay = [0.0; 2];
        stay[s] = 1.0;
        let mut go = [0.0; 2];
        go[1 - s] = 1.0;
        c.set_base_transition(i, s, 0, &stay).expect("feasible");
        c.set_base_transition(i, s, 1, &go).expect("feasible");
    }
}

/// Reward `-(own + cross * other)` state marginal.
fn congestion_rewards(c: &mut TabularCoupling, i: usize, j: usize, weight: f64) {
    for s in 0..2 {
        for a in 0..2 {
            for a2 in 0..2 {
                c.set_reward_coupling(i, j, (s, a), (s, a2), -weight).expect("feasible");
            }
        }
    }
}

pub fn g3() -> GameModel {
    let pops = vec![congestion_population(0)];
    let mut c = TabularCoupling::zeros(&pops);
    congestion_transitions(&mut c, 0);
    congestion_rewards(&mut c, 0, 0, 1.0);
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

/// Two congestion populations; `r^i = -tau^i_S(s) - cross * tau^j_S(s)`.
pub fn g3_pair(cross: f64) -> GameModel {
    let pops = vec![congestion_population(0), congestion_population(1)];
    let mut c = TabularCoupling::zeros(&pops);
    for i in 0..2 {
        congestion_transitions(&mut c, i);
        congestion_rewards(&mut c, i, i, 1.0);
        congestion_rewards(&mut c, i, 1 - i, cross);
    }
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

/// From `x` the single action earns 1 and exits with probability 0.5; the
/// population is reborn at `x` from `star`.
pub fn g4() -> GameModel {
    let pops = vec![PopulationSpec::new(0, labels(&["x", STAR]), labels(&["a", STAR]), vec![vec![0], vec![1]])
        .expect("valid")];
    let mut c = TabularCoupling::zeros(&pops);
    c.set_base_reward(0, 0, 0, 1.0).expect("feasible");
    c.set_base_transition(0, 0, 0, &[0.5, 0.5]).expect("feasible");
    c.set_base_transition(0, 1, 1, &[1.0, 0.0]).expect("feasible");
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

/// `g4` with crowd-averse rewards and a riskier action `b`:
/// `r(x, a) = 1.5 - 0.75 mu(x)`, `r(x, b) = 2 - 4 mu(x)`, exit probabilities
/// 0.5 and 0.75. Playing `a` everywhere is the equilibrium, with `mu(x) = 2/3`.
pub fn g4_coupled() -> GameModel {
    let pops = vec![PopulationSpec::new(
        0,
        labels(&["x", STAR]),
        labels(&["a", "b", STAR]),
        vec![vec![0, 1], vec![2]],
    )
    .expect("valid")];
    let mut c = TabularCoupling::zeros(&pops);
    c.set_base_reward(0, 0, 0, 1.5).expect("feasible");
    c.set_base_reward(0, 0, 1, 2.0).expect("feasible");
    for a in 0..2 {
        for a2 in 0..2 {
            let k = if a == 0 { -0.75 } else { -4.0 };
            c.set_reward_coupling(0, 0, (0, a), (0, a2), k).expect("feasible");
        }
    }
    c.set_base_transition(0, 0, 0, &[0.5, 0.5]).expect("feasible");
    c.set_base_transition(0, 0, 1, &[0.25, 0.75]).expect("feasible");
    c.set_base_transition(0, 1, 2, &[1.0, 0.0]).expect("feasible");
    build_tabular_model(pops.clone(), WeightFunction::unit(&pops), c).expect("valid")
}

/// Parameters of [`RandomGame::sample`]. Ranges are inclusive.
#[derive(Debug, Clone)]
pub struct RandomGame {
    pub populations: (usize, usize),
    pub states: (usize, usize),
    pub actions: (usize, usize),
    /// Reward coupling entries are uniform in `[-coupling, coupling]`.
    pub coupling: f64,
    /// Mixing weights are uniform in `[0, mix]`.
    pub mix: f64,
    /// Weights are uniform in `[1, 1 + weight_spread]`.
    pub weight_spread: f64,
    /// Bonus added to one randomly chosen action per state.
    pub action_gap: f64,
    /// Append a `star` state; every other row exits with probability in
    /// `exit`, and `star` reborn uniformly at random.
    pub star: Option<(f64, f64)>,
    /// Probability that a non-star action is feasible (one is always kept).
    pub feasibility: f64,
}

impl Default for RandomGame {
    fn default() -> Self {
        Self {
            populations: (1, 2),
            states: (2, 5),
            actions: (1, 3),
            coupling: 0.5,
            mix: 0.5,
            weight_spread: 0.0,
            action_gap: 0.0,
            star: None,
            feasibility: 0.8,
        }
    }
}

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.7) { rng.gen::<f64>() + 1e-3 } else { 0.0 }).collect();
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        let mut row = vec![0.0; n];
        row[rng.gen_range(0..n)] = 1.0;
        return row;
    }
    raw.into_iter().map(|x| x / sum).collect()
}

impl RandomGame {
    pub fn decoupled() -> Self {
        Self { coupling: 0.0, mix: 0.0, ..Self::default() }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> GameModel {
        let n_pops = rng.gen_range(self.populations.0..=self.populations.1);
        let mut pops = Vec::with_capacity(n_pops);
        for i in 0..n_pops {
            let n = rng.gen_range(self.states.0..=self.states.1);
            let m = rng.gen_range(self.actions.0..=self.actions.1);
            let mut states: Vec<String> = (0..n).map(|s| format!("s{s}")).collect();
            let mut actions: Vec<String> = (0..m).map(|a| format!("a{a}")).collect();
            let mut feasible: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let keep = rng.gen_range(0..m);
                    (0..m).filter(|&a| a == keep || rng.gen_bool(self.feasibility)).collect()
                })
                .collect();
            if self.star.is_some() {
                states.push(STAR.into());
                actions.push(STAR.into());
                feasible.push(vec![m]);
            }
            pops.push(PopulationSpec::new(i, states, actions, feasible).expect("valid"));
        }

        let mut c = TabularCoupling::zeros(&pops);
        for (i, pop) in pops.iter().enumerate() {
            let n = pop.num_states();
            let star = pop.star();
            let live = if star.is_some() { n - 1 } else { n };
            let row = |rng: &mut R, s: usize| -> Vec<f64> {
                match (self.star, star) {
                    (Some(_), Some(z)) if s == z => {
                        let mut r = random_row(rng, live);
                        r.push(0.0);
                        r
                    }
                    (Some((lo, hi)), Some(z)) => {
                        let exit = rng.gen_range(lo..=hi);
                        let mut r: Vec<f64> = random_row(rng, live).into_iter().map(|x| x * (1.0 - exit)).collect();
                        r.insert(z, exit);
                        r
                    }
                    _ => random_row(rng, n),
                }
            };
            for s in 0..n {
                let preferred = pop.feasible(s)[rng.gen_range(0..pop.feasible(s).len())];
                for &a in pop.feasible(s) {
                    if Some(s) == star {
                        c.set_base_transition(i, s, a, &row(rng, s)).expect("feasible");
                        continue;
                    }
                    let bonus = if a == preferred { self.action_gap } else { 0.0 };
                    c.set_base_reward(i, s, a, rng.gen_range(-1.0..=1.0) + bonus).expect("feasible");
                    c.set_base_transition(i, s, a, &row(rng, s)).expect("feasible");
                    if self.mix > 0.0 {
                        c.set_mix(i, s, a, rng.gen_range(0.0..=self.mix)).expect("feasible");
                    }
                    for (j, other) in pops.iter().enumerate() {
                        for q in 0..other.num_pairs() {
                            let (s2, a2) = other.pair(q);
                            if self.coupling > 0.0 && Some(s2) != other.star() {
                                let k = rng.gen_range(-self.coupling..=self.coupling);
                                c.set_reward_coupling(i, j, (s, a), (s2, a2), k).expect("feasible");
                            }
                            if self.mix > 0.0 {
                                c.set_transition_kernel(i, j, (s, a), (s2, a2), &row(rng, s)).expect("feasible");
                            }
                        }
                    }
                }
            }
        }
        let weight = if self.weight_spread > 0.0 {
            WeightFunction::new(
                pops.iter()
                    .map(|p| (0..p.num_states()).map(|_| 1.0 + rng.gen::<f64>() * self.weight_spread).collect())
                    .collect(),
            )
            .expect("weights >= 1")
        } else {
            WeightFunction::unit(&pops)
        };
        build_tabular_model(pops, weight, c).expect("generated game is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateActionMeasure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_games_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomGame { star: Some((0.2, 0.5)), weight_spread: 0.5, ..RandomGame::default() };
        for _ in 0..20 {
            let g = spec.sample(&mut rng);
            let tau = StateActionMeasure::uniform(g.populations());
            for pop in g.populations() {
                assert!(pop.star().is_some());
                let mdp = g.freeze(pop.index(), &tau);
                for p in 0..mdp.num_pairs() {
                    let sum: f64 = mdp.row(p).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pair_fixture_has_two_populations() {
        assert_eq!(g3_pair(0.5).num_populations(), 2);
    }
}
