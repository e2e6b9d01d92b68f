//! Test-side oracles. Deliberately naive and independent of the library's
//! solvers: plain Gaussian elimination, exhaustive policy enumeration, power
//! iteration and truncated sums.
#![allow(dead_code)]

use mfe_core::mdp::Mdp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting on a row-major system.
pub fn gauss(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row = a[r * n..(r + 1) * n].to_vec();
            row.push(b[r]);
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|r| m[r][n] / m[r][r]).collect()
}

/// Every deterministic policy as a choice of pair per state.
pub fn deterministic_policies(mdp: &Mdp) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for s in 0..mdp.num_states() {
        let mut next = Vec::new();
        for prefix in &out {
            for p in mdp.pair_range(s) {
                let mut c = prefix.clone();
                c.push(p);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// Discounted value of the deterministic policy choosing `pairs[s]`.
pub fn discounted_value(mdp: &Mdp, pairs: &[usize], beta: f64) -> Vec<f64> {
    let n = mdp.num_states();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        let p = pairs[s];
        for t in 0..n {
            a[s * n + t] = if s == t { 1.0 } else { 0.0 } - beta * mdp.row(p)[t];
        }
        b[s] = mdp.reward(p);
    }
    gauss(n, &a, &b)
}

/// Optimal discounted value by enumerating deterministic policies.
pub fn enumerated_optimum(mdp: &Mdp, beta: f64) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; mdp.num_states()];
    for pol in deterministic_policies(mdp) {
        let v = discounted_value(mdp, &pol, beta);
        for (b, x) in best.iter_mut().zip(v) {
            *b = b.max(x);
        }
    }
    best
}

/// Stationary law of an ergodic chain by power iteration on the transpose.
pub fn power_stationary(n: usize, m: &[f64]) -> Vec<f64> {
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut y = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                y[t] += x[s] * m[s * n + t];
            }
        }
        let sum: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= sum);
        let d: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = y;
        if d < 1e-15 {
            break;
        }
    }
    x
}

/// Exact taboo weight by policy iteration with Gaussian elimination.
pub fn taboo_oracle(mdp: &Mdp) -> Vec<f64> {
    let star = mdp.star().unwrap();
    let n = mdp.num_states();
    let w = mdp.weight();
    let solve = |pairs: &[usize]| {
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for s in 0..n {
            a[s * n + s] = 1.0;
            if s == star {
                continue;
            }
            for t in 0..n {
                if t != star {
                    a[s * n + t] -= mdp.row(pairs[s])[t];
                }
            }
            b[s] = w[s];
        }
        gauss(n, &a, &b)
    };
    let mut pairs: Vec<usize> = (0..n).map(|s| mdp.pair_range(s).start).collect();
    for _ in 0..1000 {
        let z = solve(&pairs);
        let mut changed = false;
        for s in 0..n {
            if s == star {
                continue;
            }
            let val = |p: usize| (0..n).filter(|&t| t != star).map(|t| mdp.row(p)[t] * z[t]).sum::<f64>();
            let cur = val(pairs[s]);
            for p in mdp.pair_range(s) {
                if val(p) > cur + 1e-12 {
                    pairs[s] = p;
                    changed = true;
                }
            }
        }
        if !changed {
            return z;
        }
    }
    panic!("taboo policy iteration did not settle");
}

/// Optimal total reward over `horizon` steps with the star absorbing and
/// paying nothing.
pub fn truncated_total(mdp: &Mdp, horizon: usize) -> Vec<f64> {
    let star = mdp.star().unwrap();
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    for _ in 0..horizon {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if s == star {
                continue;
            }
            next[s] = mdp
                .pair_range(s)
                .map(|p| mdp.reward(p) + (0..n).filter(|&t| t != star).map(|t| mdp.row(p)[t] * v[t]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        v = next;
    }
    v
}

pub fn wnorm(h: &[f64], w: &[f64]) -> f64 {
    h.iter().zip(w).map(|(a, b)| a.abs() / b).fold(0.0, f64::max)
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

use mfe_core::model::{PopulationSpec, StateActionMeasure};
use rand::Rng;

pub fn random_measure<R: Rng>(pops: &[PopulationSpec], rng: &mut R) -> StateActionMeasure {
    let parts = pops
        .iter()
        .map(|p| {
            let raw: Vec<f64> = (0..p.num_pairs()).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    StateActionMeasure::new(pops, parts).unwrap()
}
