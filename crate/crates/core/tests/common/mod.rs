//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use permfield::markov::PotentialKernel;
use permfield::measure::Measure;

pub fn all_perms(n: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm, independent of the engine's lexicographic walk.
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

pub fn cycles(p: &[usize]) -> usize {
    let mut seen = vec![false; p.len()];
    let mut c = 0;
    for s in 0..p.len() {
        if !seen[s] {
            c += 1;
            let mut j = s;
            while !seen[j] {
                seen[j] = true;
                j = p[j];
            }
        }
    }
    c
}

/// Sum over derangements and over all state assignments x in S^n.
pub fn brute_alpha_perm(u: &PotentialKernel, alpha: f64, nus: &[Measure]) -> f64 {
    let n = nus.len();
    let s = u.len();
    let mut total = 0.0;
    for p in all_perms(n) {
        if p.iter().enumerate().any(|(i, v)| i == *v) {
            continue;
        }
        let w = alpha.powi(cycles(&p) as i32);
        let mut sum = 0.0;
        for code in 0..s.pow(n as u32) {
            let xs: Vec<usize> = (0..n).map(|j| (code / s.pow(j as u32)) % s).collect();
            let mut term = 1.0;
            for j in 0..n {
                term *= nus[j].get(xs[j]) * u.get(xs[j], xs[p[j]]);
            }
            sum += term;
        }
        total += w * sum;
    }
    total
}

/// Midpoint rule for `sup_x int_0^a log(1 / mu(B(x, r))) dr`.
pub fn brute_j(dist: &[Vec<f64>], mu: &[f64], a: f64, cells: usize) -> f64 {
    let h = a / cells as f64;
    (0..dist.len())
        .map(|x| {
            (0..cells)
                .map(|i| {
                    let r = (i as f64 + 0.5) * h;
                    let ball: f64 = (0..dist.len()).filter(|y| dist[x][*y] <= r).map(|y| mu[y]).sum();
                    (1.0 / ball).ln() * h
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
