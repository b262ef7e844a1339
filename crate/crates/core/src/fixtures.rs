//! Small reference chains used by tests, the acceptance suite and the CLI.

use crate::markov::{build_model, MarkovModel};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
}

/// Two states, unit jump rates both ways, unit killing, `m = (1, 1)`.
/// `Q = [[-2, 1], [1, -2]]`, `u = [[2, 1], [1, 2]] / 3`.
pub fn k2() -> MarkovModel {
    build_model(names(2), vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap()
}

/// A non-symmetric four-state chain with uneven reference weights.
pub fn k4() -> MarkovModel {
    build_model(
        names(4),
        vec![
            vec![0.0, 0.7, 0.3, 1.1],
            vec![0.4, 0.0, 0.9, 0.2],
            vec![0.8, 0.5, 0.0, 0.6],
            vec![0.3, 1.2, 0.4, 0.0],
        ],
        vec![0.5, 0.3, 0.8, 0.4],
        vec![1.0, 0.7, 1.3, 0.9],
    )
    .unwrap()
}

/// Two states that never jump and die at rate one, so `u = I`.
pub fn pure_death() -> MarkovModel {
    build_model(names(2), vec![vec![0.0; 2]; 2], vec![1.0, 1.0], vec![1.0, 1.0]).unwrap()
}

/// Three states on a directed cycle, killed only at `c`.
pub fn cycle3() -> MarkovModel {
    build_model(
        names(3),
        vec![vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 1.5], vec![1.0, 0.0, 0.0]],
        vec![0.0, 0.0, 1.0],
        vec![0.5, 1.0, 2.0],
    )
    .unwrap()
}

/// Nearest-neighbour walk on a ring of `n` sites with uniform killing `beta`.
pub fn ring(n: usize, rate: f64, beta: f64) -> MarkovModel {
    let mut rates = vec![vec![0.0; n]; n];
    for (x, row) in rates.iter_mut().enumerate() {
        row[(x + 1) % n] += rate;
        row[(x + n - 1) % n] += rate;
    }
    build_model(names_long(n), rates, vec![beta; n], vec![1.0; n]).unwrap()
}

fn names_long(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}
