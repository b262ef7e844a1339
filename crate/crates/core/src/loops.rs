//! Loop measure restricted to lifetimes above a cutoff, Poisson loop soups,
//! occupation fields and exact truncated loop moments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::markov::{sample_bridge, MarkovModel, Path};
use crate::measure::{caf_total, Measure};
use crate::quad::{integrate, integrate_to_inf, Tol};
use crate::{Error, Result};

const TAIL_MASS: f64 = 1e-13;
const GRID_CELLS: usize = 1024;
// 5-point Gauss-Legendre on [-1, 1].
const GL_X: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
const GL_W: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(())
}

fn trace_semigroup(model: &MarkovModel, t: f64) -> f64 {
    (model.generator() * t).exp().trace()
}

/// Lifetime beyond which the loop mass is below `TAIL_MASS`, using
/// `tr e^{tQ} <= 2 n exp(-rate t)`.
fn lifetime_cap(model: &MarkovModel, delta: f64) -> f64 {
    let lam = model.decay_rate();
    let n = model.len() as f64;
    let mut t = delta.max(model.decay_time());
    while 2.0 * n * (-lam * t).exp() / (lam * t) > TAIL_MASS {
        t *= 1.25;
    }
    t
}

/// `mu(zeta > delta) = int_delta^inf tr(e^{tQ}) / t dt`.
pub fn loop_measure_mass(model: &MarkovModel, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let ymax = (lifetime_cap(model, delta) / delta).ln();
    let v = integrate(|y| vec![trace_semigroup(model, delta * y.exp())], 0.0, ymax, Tol::default())?;
    Ok(v[0])
}

/// `int_delta^inf sum_y p_t(y, y) nu({y}) dt`, the mean of the uncompensated
/// occupation field per unit intensity.
pub fn centering_term(model: &MarkovModel, nu: &Measure, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidDelta(delta));
    }
    let dens = nu.density(model.m());
    let v = integrate_to_inf(
        |t| {
            let p = (model.generator() * t).exp();
            vec![(0..dens.len()).map(|y| p[(y, y)] * dens[y]).sum()]
        },
        delta,
        Tol::default(),
    )?;
    Ok(v[0])
}

/// Cached inverse-CDF sampler for loops with lifetime above `delta`.
#[derive(Debug, Clone)]
pub struct LoopSampler {
    model: MarkovModel,
    delta: f64,
    mass: f64,
    step: f64,
    edge_density: Vec<f64>,
    cdf: Vec<f64>,
}

impl LoopSampler {
    pub fn new(model: &MarkovModel, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let mass = loop_measure_mass(model, delta)?;
        let ymax = (lifetime_cap(model, delta) / delta).ln();
        let step = ymax / GRID_CELLS as f64;
        let g = |y: f64| trace_semigroup(model, delta * y.exp());
        let edge_density: Vec<f64> = (0..=GRID_CELLS).map(|i| g(i as f64 * step)).collect();
        let mut cdf = Vec::with_capacity(GRID_CELLS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..GRID_CELLS {
            let c = (i as f64 + 0.5) * step;
            let cell: f64 = GL_X.iter().zip(&GL_W).map(|(x, w)| w * g(c + 0.5 * step * x)).sum::<f64>() * 0.5 * step;
            acc += cell;
            cdf.push(acc);
        }
        for v in cdf.iter_mut() {
            *v /= acc;
        }
        Ok(Self { model: model.clone(), delta, mass, step, edge_density, cdf })
    }

    pub fn model(&self) -> &MarkovModel {
        &self.model
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// CDF of the lifetime law on the cached grid, evaluated at `t`.
    pub fn lifetime_cdf(&self, t: f64) -> f64 {
        if t <= self.delta {
            return 0.0;
        }
        let y = (t / self.delta).ln();
        let pos = y / self.step;
        if pos >= GRID_CELLS as f64 {
            return 1.0;
        }
        let i = pos.floor() as usize;
        let s = pos - i as f64;
        let (g0, g1) = (self.edge_density[i], self.edge_density[i + 1]);
        let part = (g0 * s + 0.5 * (g1 - g0) * s * s) / (0.5 * (g0 + g1));
        self.cdf[i] + part * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn sample_lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(GRID_CELLS - 1),
            Err(i) => i.saturating_sub(1).min(GRID_CELLS - 1),
        };
        let width = self.cdf[i + 1] - self.cdf[i];
        let v = if width > 0.0 { ((u - self.cdf[i]) / width).clamp(0.0, 1.0) } else { 0.5 };
        // Invert the trapezoidal density between the cell edges.
        let (g0, g1) = (self.edge_density[i], self.edge_density[i + 1]);
        let c = v * 0.5 * (g0 + g1);
        let disc = (g0 * g0 + 2.0 * (g1 - g0) * c).max(0.0);
        let s = if g0 + disc.sqrt() > 0.0 { 2.0 * c / (g0 + disc.sqrt()) } else { v };
        self.delta * ((i as f64 + s.clamp(0.0, 1.0)) * self.step).exp()
    }

    /// One loop: lifetime, root drawn with weight `e^{tQ}(x, x)`, then a bridge.
    pub fn sample_loop<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Path> {
        let t = self.sample_lifetime(rng);
        let p = self.model.semigroup(t)?;
        let tr = p.trace();
        let mut r = rng.random::<f64>() * tr;
        let n = self.model.len();
        let mut root = n - 1;
        for x in 0..n {
            if r < p[(x, x)] {
                root = x;
                break;
            }
            r -= p[(x, x)];
        }
        sample_bridge(&self.model, root, root, t, rng)
    }

    pub fn sample_soup<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> Result<LoopSoupSample> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidAlpha(alpha));
        }
        let count = Poisson::new(alpha * self.mass)
            .map_err(|e| Error::Invalid(format!("poisson rate: {e}")))?
            .sample(rng) as usize;
        let loops = (0..count).map(|_| self.sample_loop(rng)).collect::<Result<Vec<_>>>()?;
        Ok(LoopSoupSample { alpha, delta: self.delta, loops })
    }
}

/// Poisson sample of loops with lifetime above `delta` at intensity `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSoupSample {
    pub alpha: f64,
    pub delta: f64,
    pub loops: Vec<Path>,
}

impl LoopSoupSample {
    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }
}

pub fn sample_loop_soup<R: Rng + ?Sized>(model: &MarkovModel, alpha: f64, delta: f64, rng: &mut R) -> Result<LoopSoupSample> {
    LoopSampler::new(model, delta)?.sample_soup(alpha, rng)
}

/// `sum_loops L^nu - alpha * centering`, with `centering` from [`centering_term`].
pub fn occupation_field(model: &MarkovModel, soup: &LoopSoupSample, nu: &Measure, centering: f64) -> Result<f64> {
    let mut s = 0.0;
    for l in &soup.loops {
        s += caf_total(l, nu, model.m())?;
    }
    Ok(s - soup.alpha * centering)
}

/// `theta^{rho, phi} = sum_loops L^rho L^phi`.
pub fn theta(model: &MarkovModel, soup: &LoopSoupSample, rho: &Measure, phi: &Measure) -> Result<f64> {
    let mut s = 0.0;
    for l in &soup.loops {
        s += caf_total(l, rho, model.m())? * caf_total(l, phi, model.m())?;
    }
    Ok(s)
}

/// Generator on `n * 2^k` states whose exponential holds, in block
/// `(0, B)`, the sum over orderings of `B` of the time-ordered integrals
/// `int e^{r_1 Q} D_1 e^{(r_2 - r_1) Q} D_2 ... e^{(t - r_k) Q}`, with
/// `D_j = diag(nu_j / m)`.
fn subset_generator(model: &MarkovModel, measures: &[Measure]) -> DMatrix<f64> {
    let n = model.len();
    let k = measures.len();
    let size = n << k;
    let mut a = DMatrix::zeros(size, size);
    let q = model.generator();
    let dens: Vec<Vec<f64>> = measures.iter().map(|nu| nu.density(model.m())).collect();
    for s in 0..(1usize << k) {
        a.view_mut((s * n, s * n), (n, n)).copy_from(q);
        for (j, d) in dens.iter().enumerate() {
            if s & (1 << j) != 0 {
                continue;
            }
            let t = s | (1 << j);
            for x in 0..n {
                a[(s * n + x, t * n + x)] = d[x];
            }
        }
    }
    a
}

/// `Q_t^{x,y}(prod_j L_t^{nu_j})` for the bridge of length `t`, exactly.
pub fn bridge_moment(model: &MarkovModel, x: usize, y: usize, t: f64, measures: &[Measure]) -> Result<f64> {
    let n = model.len();
    let k = measures.len();
    let e = (subset_generator(model, measures) * t).exp();
    let full = (1usize << k) - 1;
    Ok(e[(x, full * n + y)] / model.m()[y])
}

/// `mu(1{zeta > delta} prod_{j in B} L^{nu_j})` for every subset `B` of the
/// measures, indexed by bitmask. `delta = 0` gives the untruncated values
/// (the empty product is then infinite and reported as such).
pub fn truncated_loop_moments(model: &MarkovModel, measures: &[Measure], delta: f64) -> Result<Vec<f64>> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidDelta(delta));
    }
    let k = measures.len();
    if k > 6 {
        return Err(Error::OrderTooLarge { order: k, max: 6 });
    }
    let n = model.len();
    let a = subset_generator(model, measures);
    let subsets = 1usize << k;
    let traces = |t: f64| -> Vec<f64> {
        let e = (&a * t).exp();
        (0..subsets).map(|b| (0..n).map(|x| e[(x, b * n + x)]).sum::<f64>()).collect()
    };
    let mut out = if delta > 0.0 {
        let ymax = (lifetime_cap(model, delta) / delta).ln();
        let mut v = integrate(|y| traces(delta * y.exp()), 0.0, ymax, Tol::default())?;
        // Moments with at least one factor carry extra polynomial weight in t;
        // extend them over the remaining tail.
        let tmax = delta * ymax.exp();
        let tail = integrate_to_inf(
            |t| traces(t).into_iter().map(|v| v / t).collect(),
            tmax,
            Tol::new(1e-16, 1e-10),
        )?;
        for b in 1..subsets {
            v[b] += tail[b];
        }
        v
    } else {
        let mut v = integrate_to_inf(
            |t| {
                if t == 0.0 {
                    return vec![0.0; subsets];
                }
                let mut v: Vec<f64> = traces(t).into_iter().map(|v| v / t).collect();
                v[0] = 0.0;
                v
            },
            0.0,
            Tol::default(),
        )?;
        v[0] = f64::INFINITY;
        v
    };
    if delta > 0.0 {
        out[0] = loop_measure_mass(model, delta)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn two_state_mass_and_centering() {
        let k2 = fixtures::k2();
        let c = centering_term(&k2, &Measure::atom(2, 0), 1.0).unwrap();
        let want = (-1.0f64).exp() / 2.0 + (-3.0f64).exp() / 6.0;
        assert!((c - want).abs() < 1e-10);
        let c0 = centering_term(&k2, &Measure::atom(2, 0), 0.0).unwrap();
        assert!((c0 - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn truncated_moments_reduce_to_centering() {
        let k4 = fixtures::k4();
        let nu = Measure::new(vec![0.3, 1.0, 0.0, 0.5]).unwrap();
        let v = truncated_loop_moments(&k4, std::slice::from_ref(&nu), 0.1).unwrap();
        let c = centering_term(&k4, &nu, 0.1).unwrap();
        assert!((v[1] - c).abs() < 1e-9 * c);
    }
}
