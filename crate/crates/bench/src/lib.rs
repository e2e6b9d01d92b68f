//! Instances shared by the benchmarks.

use mfe_core::fixtures::RandomGame;
use mfe_core::GameModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A seeded random game with `states` states per population.
pub fn random_game(seed: u64, populations: usize, states: usize, actions: usize) -> GameModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RandomGame {
        populations: (populations, populations),
        states: (states, states),
        actions: (actions, actions),
        ..RandomGame::default()
    }
    .sample(&mut rng)
}

/// Like [`random_game`] with a `star` state reached at rate 0.2 to 0.5.
pub fn transient_game(seed: u64, states: usize, actions: usize) -> GameModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RandomGame {
        populations: (1, 1),
        states: (states, states),
        actions: (actions, actions),
        star: Some((0.2, 0.5)),
        ..RandomGame::default()
    }
    .sample(&mut rng)
}
