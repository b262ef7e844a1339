//! Finite signed measures on the state space and their continuous additive
//! functionals along paths.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::markov::{potential_kernel, sample_path, MarkovModel, Path, PotentialKernel};
use crate::mc::{mean_se, par_samples};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    w: Vec<f64>,
}

impl Measure {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::InfiniteMeasure(format!("weight {v}")));
        }
        Ok(Self { w })
    }

    pub fn zero(n: usize) -> Self {
        Self { w: vec![0.0; n] }
    }

    pub fn atom(n: usize, x: usize) -> Self {
        let mut w = vec![0.0; n];
        w[x] = 1.0;
        Self { w }
    }

    /// Builds a measure from weights keyed by state name; missing states get zero.
    pub fn from_named(model: &MarkovModel, atoms: &BTreeMap<String, f64>) -> Result<Self> {
        let mut w = vec![0.0; model.len()];
        for (k, v) in atoms {
            w[model.index_of(k)?] += *v;
        }
        Self::new(w)
    }

    pub fn to_named(&self, model: &MarkovModel) -> BTreeMap<String, f64> {
        model.names().iter().cloned().zip(self.w.iter().cloned()).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn get(&self, x: usize) -> f64 {
        self.w[x]
    }

    pub fn abs(&self) -> Self {
        Self { w: self.w.iter().map(|v| v.abs()).collect() }
    }

    pub fn total_variation(&self) -> f64 {
        self.w.iter().map(|v| v.abs()).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.w.iter().all(|v| *v >= 0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { w: self.w.iter().map(|v| v * c).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { w: self.w.iter().zip(&other.w).map(|(a, b)| a + b).collect() }
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    /// Density of the measure with respect to `m`.
    pub fn density(&self, m: &DVector<f64>) -> Vec<f64> {
        self.w.iter().zip(m.iter()).map(|(a, b)| a / b).collect()
    }
}

/// A named measure as read from or written to JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedMeasure {
    pub name: String,
    pub atoms: BTreeMap<String, f64>,
}

fn check_len(path: &Path, nu: &Measure, m: &DVector<f64>) -> Result<()> {
    if nu.len() != m.len() {
        return Err(Error::Shape(format!("measure has {} states, model has {}", nu.len(), m.len())));
    }
    if path.states.iter().any(|s| *s >= m.len()) {
        return Err(Error::Shape("path visits an unknown state".into()));
    }
    Ok(())
}

/// `L^nu_infty`: holding times weighted by `nu({y}) / m_y`.
pub fn caf_total(path: &Path, nu: &Measure, m: &DVector<f64>) -> Result<f64> {
    check_len(path, nu, m)?;
    Ok(path.states.iter().zip(&path.holding).map(|(s, h)| h * nu.w[*s] / m[*s]).sum())
}

/// `L^nu_t`, piecewise linear in `t` and constant after the lifetime.
pub fn caf_at(path: &Path, nu: &Measure, m: &DVector<f64>, t: f64) -> Result<f64> {
    check_len(path, nu, m)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidTime(t));
    }
    let mut acc = 0.0;
    let mut clock = 0.0;
    for (s, h) in path.states.iter().zip(&path.holding) {
        let dt = h.min(t - clock);
        if dt <= 0.0 {
            break;
        }
        acc += dt * nu.w[*s] / m[*s];
        clock += h;
    }
    Ok(acc)
}

/// Time spent in each state; `caf_total` is its pairing with `nu / m`.
pub fn occupation_times(path: &Path, n: usize) -> Vec<f64> {
    let mut occ = vec![0.0; n];
    for (s, h) in path.states.iter().zip(&path.holding) {
        occ[*s] += h;
    }
    occ
}

/// `E^x L^nu_infty = sum_y u(x, y) nu({y})`.
pub fn revuz_expectation(u: &PotentialKernel, x: usize, nu: &Measure) -> f64 {
    (0..u.len()).map(|y| u.get(x, y) * nu.w[y]).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevuzReport {
    pub start: usize,
    pub exact: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Compares the sample mean of `L^nu_infty` under `P^x` with the kernel value.
pub fn verify_revuz(model: &MarkovModel, x: usize, nu: &Measure, samples: usize, seed: u64) -> Result<RevuzReport> {
    if samples < 2 {
        return Err(Error::Invalid("need at least two samples".into()));
    }
    let u = potential_kernel(model)?;
    let m = model.m();
    let vals: Vec<f64> = par_samples(seed, samples, |_, rng| {
        let p = sample_path(model, x, rng).expect("validated start");
        caf_total(&p, nu, m).expect("validated shape")
    });
    let s = mean_se(&vals);
    let exact = revuz_expectation(&u, x, nu);
    let z = s.z(exact);
    Ok(RevuzReport { start: x, exact, mean: s.mean, se: s.se, z, samples, pass: z.abs() <= 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caf_of_fixed_path() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let p = Path { states: vec![0, 1, 0], holding: vec![0.5, 1.0, 0.25], killed: true };
        let nu = Measure::new(vec![1.0, 4.0]).unwrap();
        assert!((caf_total(&p, &nu, &m).unwrap() - (0.5 + 2.0 + 0.25)).abs() < 1e-15);
        assert!((caf_at(&p, &nu, &m, 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert!((caf_at(&p, &nu, &m, 10.0).unwrap() - 2.75).abs() < 1e-15);
    }
}
