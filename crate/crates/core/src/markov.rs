//! Finite-state transient Markov chains: generator, semigroup, potential
//! kernel, path and bridge sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// JSON form of a chain: `{"states": [...], "rates": [[...]], "kill": [...], "m": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub states: Vec<String>,
    pub rates: Vec<Vec<f64>>,
    pub kill: Vec<f64>,
    pub m: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MarkovModel {
    names: Vec<String>,
    rates: DMatrix<f64>,
    kill: DVector<f64>,
    m: DVector<f64>,
    q: DMatrix<f64>,
    exit: Vec<f64>,
    unif_rate: f64,
    unif: DMatrix<f64>,
    decay_time: f64,
    decay_rate: f64,
    dual_substochastic: bool,
}

pub fn build_model(names: Vec<String>, rates: Vec<Vec<f64>>, kill: Vec<f64>, m: Vec<f64>) -> Result<MarkovModel> {
    let n = names.len();
    if n == 0 {
        return Err(Error::Shape("model has no states".into()));
    }
    if rates.len() != n || rates.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("rates must be {n}x{n}")));
    }
    if kill.len() != n || m.len() != n {
        return Err(Error::Shape(format!("kill and m must have length {n}")));
    }
    let mut r = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let v = rates[x][y];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeRate { from: x, to: y, rate: v });
            }
            r[(x, y)] = v;
        }
        if !(kill[x] >= 0.0) || !kill[x].is_finite() {
            return Err(Error::NegativeKill { state: x, rate: kill[x] });
        }
        if !(m[x] > 0.0) || !m[x].is_finite() {
            return Err(Error::NonpositiveWeight { state: x, weight: m[x] });
        }
    }
    let kill = DVector::from_vec(kill);
    let m = DVector::from_vec(m);
    let mut q = r.clone();
    let mut exit = vec![0.0; n];
    for x in 0..n {
        exit[x] = r.row(x).sum() + kill[x];
        q[(x, x)] = -exit[x];
    }
    check_reaches_killing(&r, &kill)?;

    let unif_rate = exit.iter().cloned().fold(0.0, f64::max);
    let unif = DMatrix::identity(n, n) + &q / unif_rate;

    // Find t0 with ||e^{t0 Q}||_inf <= 1/2, so ||e^{tQ}|| <= 2 exp(-t ln2 / t0).
    let mut t0 = 1.0 / unif_rate;
    let mut tries = 0;
    loop {
        let p = (&q * t0).exp();
        let norm = (0..n).map(|x| p.row(x).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        if norm <= 0.5 {
            break;
        }
        t0 *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::NonTransient("semigroup does not contract".into()));
        }
    }
    let decay_rate = std::f64::consts::LN_2 / t0;

    let mq = m.transpose() * &q;
    let scale = m.iter().cloned().fold(0.0, f64::max) * unif_rate;
    let dual_substochastic = mq.iter().all(|v| *v <= 1e-12 * scale);
    if !dual_substochastic {
        log::warn!("dual process is not substochastic with respect to m");
    }

    Ok(MarkovModel {
        names,
        rates: r,
        kill,
        m,
        q,
        exit,
        unif_rate,
        unif,
        decay_time: t0,
        decay_rate,
        dual_substochastic,
    })
}

fn check_reaches_killing(r: &DMatrix<f64>, kill: &DVector<f64>) -> Result<()> {
    let n = kill.len();
    let mut good: Vec<bool> = kill.iter().map(|k| *k > 0.0).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for x in 0..n {
            if !good[x] && (0..n).any(|y| good[y] && r[(x, y)] > 0.0) {
                good[x] = true;
                changed = true;
            }
        }
    }
    match good.iter().position(|g| !g) {
        Some(x) => Err(Error::InfiniteLifetime(x)),
        None => Ok(()),
    }
}

impl MarkovModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        build_model(spec.states.clone(), spec.rates.clone(), spec.kill.clone(), spec.m.clone())
    }

    pub fn to_spec(&self) -> ModelSpec {
        let n = self.len();
        ModelSpec {
            states: self.names.clone(),
            rates: (0..n).map(|x| (0..n).map(|y| self.rates[(x, y)]).collect()).collect(),
            kill: self.kill.iter().cloned().collect(),
            m: self.m.iter().cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|s| s == name).ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn kill(&self) -> &DVector<f64> {
        &self.kill
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn exit_rate(&self, x: usize) -> f64 {
        self.exit[x]
    }

    /// `||e^{tQ}||_inf <= 2 exp(-decay_rate * t)`.
    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    pub fn decay_time(&self) -> f64 {
        self.decay_time
    }

    pub fn dual_substochastic(&self) -> bool {
        self.dual_substochastic
    }

    /// `P_t = e^{tQ}`, the sub-probability transition matrix.
    pub fn semigroup(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidTime(t));
        }
        Ok((&self.q * t).exp())
    }

    /// Uniformization rate and the substochastic jump matrix `I + Q / rate`.
    pub fn uniformized(&self) -> (f64, &DMatrix<f64>) {
        (self.unif_rate, &self.unif)
    }
}

/// `p_t(x, y) = e^{tQ}(x, y) / m_y`, the density with respect to `m`.
pub fn transition_density(model: &MarkovModel, t: f64) -> Result<DMatrix<f64>> {
    let mut p = model.semigroup(t)?;
    for y in 0..model.len() {
        let my = model.m[y];
        p.column_mut(y).iter_mut().for_each(|v| *v /= my);
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct PotentialKernel {
    u: DMatrix<f64>,
}

impl PotentialKernel {
    /// Wraps an arbitrary kernel matrix, e.g. one computed on a lattice.
    pub fn from_matrix(u: DMatrix<f64>) -> Result<Self> {
        if u.nrows() != u.ncols() {
            return Err(Error::Shape("kernel must be square".into()));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("kernel has non-finite entries".into()));
        }
        Ok(Self { u })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.u[(x, y)]
    }

    /// Same kernel with every entry scaled by `1 + eps * s` for signs `s` drawn from `rng`.
    pub fn perturbed<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Self {
        let u = self.u.map(|v| v * (1.0 + if rng.random::<bool>() { eps } else { -eps }));
        Self { u }
    }
}

/// `u = (-Q)^{-1} diag(1/m)`.
pub fn potential_kernel(model: &MarkovModel) -> Result<PotentialKernel> {
    let n = model.len();
    let neg_q = -model.q.clone();
    let inv = neg_q
        .try_inverse()
        .ok_or_else(|| Error::NonTransient("generator is singular".into()))?;
    let mut u = inv;
    for y in 0..n {
        let my = model.m[y];
        u.column_mut(y).iter_mut().for_each(|v| *v /= my);
    }
    let scale = u.iter().cloned().fold(0.0, f64::max);
    for x in 0..n {
        if !(u[(x, x)] > 0.0) {
            return Err(Error::NonTransient(format!("u({x},{x}) is not positive")));
        }
        for y in 0..n {
            if u[(x, y)] < -1e-12 * scale {
                return Err(Error::NonTransient(format!("u({x},{y}) is negative")));
            }
            u[(x, y)] = u[(x, y)].max(0.0);
        }
    }
    Ok(PotentialKernel { u })
}

/// A right-continuous path as a list of visited states with holding times.
/// `killed` marks a path that ended by jumping to the cemetery; bridges and
/// loops end by being cut at their lifetime instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub states: Vec<usize>,
    pub holding: Vec<f64>,
    pub killed: bool,
}

impl Path {
    pub fn lifetime(&self) -> f64 {
        self.holding.iter().sum()
    }

    pub fn start(&self) -> usize {
        self.states[0]
    }

    /// State occupied at time `t`, `None` once the path is dead.
    pub fn state_at(&self, t: f64) -> Option<usize> {
        let mut acc = 0.0;
        for (s, h) in self.states.iter().zip(&self.holding) {
            acc += h;
            if t < acc {
                return Some(*s);
            }
        }
        None
    }

    pub fn jumps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

pub fn sample_path<R: Rng + ?Sized>(model: &MarkovModel, x: usize, rng: &mut R) -> Result<Path> {
    let n = model.len();
    if x >= n {
        return Err(Error::Shape(format!("state {x} out of range")));
    }
    let mut states = Vec::new();
    let mut holding = Vec::new();
    let mut cur = x;
    loop {
        let e = model.exit[cur];
        let h: f64 = Exp1.sample(rng);
        states.push(cur);
        holding.push(h / e);
        let mut r = rng.random::<f64>() * e;
        let mut next = None;
        for y in 0..n {
            let w = model.rates[(cur, y)];
            if r < w {
                next = Some(y);
                break;
            }
            r -= w;
        }
        match next {
            Some(y) => cur = y,
            None => return Ok(Path { states, holding, killed: true }),
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|w| (w - mx).exp()).sum::<f64>().ln()
}

/// Log-weights `log(Poisson(k; Lt) * (P^k)(x, y))` of the uniformized jump count.
fn jump_count_weights(model: &MarkovModel, x: usize, y: usize, t: f64) -> Vec<f64> {
    let (lam, p) = model.uniformized();
    let n = model.len();
    let lt = lam * t;
    let k_cap = (lt + 20.0 * lt.sqrt() + 60.0).ceil() as usize;
    let mut row = DVector::zeros(n);
    row[x] = 1.0;
    let mut log_scale = 0.0;
    let mut log_pois = -lt;
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for k in 0..=k_cap {
        if k > 0 {
            log_pois += lt.ln() - (k as f64).ln();
            row = p.tr_mul(&row);
            let mx = row.iter().cloned().fold(0.0, f64::max);
            if mx == 0.0 {
                break;
            }
            row /= mx;
            log_scale += mx.ln();
        }
        let lw = if row[y] > 0.0 { log_pois + log_scale + row[y].ln() } else { f64::NEG_INFINITY };
        best = best.max(lw);
        out.push(lw);
        if k as f64 > lt && log_pois + log_scale < best - 45.0 {
            break;
        }
    }
    out
}

/// `log p_t(x, y)` by uniformization; agrees with `transition_density`.
pub fn log_bridge_density(model: &MarkovModel, x: usize, y: usize, t: f64) -> f64 {
    log_sum_exp(&jump_count_weights(model, x, y, t)) - model.m[y].ln()
}

/// Samples the path from `x` conditioned on being alive at `y` at time `t`.
pub fn sample_bridge<R: Rng + ?Sized>(model: &MarkovModel, x: usize, y: usize, t: f64, rng: &mut R) -> Result<Path> {
    let n = model.len();
    if x >= n || y >= n {
        return Err(Error::Shape("bridge endpoint out of range".into()));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(t));
    }
    let lw = jump_count_weights(model, x, y, t);
    let total = log_sum_exp(&lw);
    if !(total > f64::MIN_POSITIVE.ln()) {
        return Err(Error::UnderflowBridge { from: x, to: y, t });
    }
    let mut r = rng.random::<f64>();
    let mut k = lw.len() - 1;
    for (i, w) in lw.iter().enumerate() {
        let p = (w - total).exp();
        if r < p {
            k = i;
            break;
        }
        r -= p;
    }
    while lw[k] == f64::NEG_INFINITY {
        k -= 1;
    }
    if k == 0 {
        return Ok(Path { states: vec![x], holding: vec![t], killed: false });
    }

    let (_, p) = model.uniformized();
    // back[j] is proportional to P^j e_y.
    let mut back: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut col = DVector::zeros(n);
    col[y] = 1.0;
    back.push(col.clone());
    for _ in 1..k {
        col = p * &col;
        let mx = col.iter().cloned().fold(0.0, f64::max);
        col /= mx;
        back.push(col.clone());
    }
    let mut times: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut states = vec![x];
    let mut holding = Vec::new();
    let mut cur = x;
    let mut last_jump = 0.0;
    let mut probs = vec![0.0; n];
    for i in 0..k {
        let b = &back[k - i - 1];
        let mut tot = 0.0;
        for w in 0..n {
            probs[w] = p[(cur, w)] * b[w];
            tot += probs[w];
        }
        let mut r = rng.random::<f64>() * tot;
        let mut next = n;
        for w in 0..n {
            if probs[w] > 0.0 {
                next = w;
                if r < probs[w] {
                    break;
                }
                r -= probs[w];
            }
        }
        if next != cur {
            holding.push(times[i] - last_jump);
            last_jump = times[i];
            states.push(next);
            cur = next;
        }
    }
    holding.push(t - last_jump);
    debug_assert_eq!(cur, y);
    Ok(Path { states, holding, killed: false })
}
