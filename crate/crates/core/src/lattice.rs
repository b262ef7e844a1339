//! Translation-invariant kernels on the discrete torus `Z_N^d`, read as a
//! grid of spacing `1/N` on the unit torus: Fourier-side norms, the
//! (b101)-type tail integral, moduli `phi` and `omega`, and index fits.
//!
//! DFT convention: `f^(k) = sum_x f(x) e^{+2 pi i k.x / N}` (unnormalized),
//! inverse `f(x) = N^{-d} sum_k f^(k) e^{-2 pi i k.x / N}`. The physical
//! frequency of index `k` is `xi = 2 pi k~` with `k~` wrapped to `[-N/2, N/2)`.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::markov::{build_model, MarkovModel, PotentialKernel};
use crate::measure::Measure;
use crate::moments::least_squares;
use crate::quad::{integrate, integrate_to_inf, Tol};
use crate::{Error, Result};

const MAX_SITES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Exponent {
    /// Nearest-neighbour walk: rate `rate` to each neighbour plus `drift`
    /// extra towards `+e_i`. `rate` defaults to `N^2` (diffusive scaling).
    Rw {
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        drift: f64,
    },
    /// `kappa_bar(xi) = scale * |xi|^index`.
    StableSurrogate {
        index: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Explicit values of `kappa_bar` in flattened index order.
    Table { re: Vec<f64>, im: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub exponent: Exponent,
}

#[derive(Debug, Clone)]
pub struct LatticeKernel {
    spec: KernelSpec,
    sites: usize,
    kappa: Vec<Complex64>,
    uhat: Vec<Complex64>,
    u: Vec<f64>,
    gamma: Vec<f64>,
}

/// `N^d`-point transform along every axis; `sign = +1` is the forward
/// convention above, `-1` the unnormalized inverse sum.
pub fn dft(data: &[Complex64], n: usize, d: usize, sign: i32) -> Vec<Complex64> {
    let mut out = data.to_vec();
    let mut planner = FftPlanner::new();
    // rustfft's forward direction uses e^{-i}.
    let dir = if sign > 0 { FftDirection::Inverse } else { FftDirection::Forward };
    let fft = planner.plan_fft(n, dir);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let total = out.len();
        for base in 0..total {
            if (base / stride) % n != 0 {
                continue;
            }
            for (i, v) in line.iter_mut().enumerate() {
                *v = out[base + i * stride];
            }
            fft.process(&mut line);
            for (i, v) in line.iter().enumerate() {
                out[base + i * stride] = *v;
            }
        }
    }
    out
}

/// Circular convolution on `Z_N^d`.
pub fn circular_convolution(a: &[f64], b: &[f64], n: usize, d: usize) -> Vec<f64> {
    let ca: Vec<Complex64> = a.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let cb: Vec<Complex64> = b.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let fa = dft(&ca, n, d, 1);
    let fb = dft(&cb, n, d, 1);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let scale = 1.0 / a.len() as f64;
    dft(&prod, n, d, -1).iter().map(|c| c.re * scale).collect()
}

impl LatticeKernel {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        let KernelSpec { d, n, beta, .. } = spec;
        if d == 0 || n < 2 {
            return Err(Error::InvalidKernel(format!("need d >= 1 and N >= 2, got d = {d}, N = {n}")));
        }
        let sites = n.checked_pow(d as u32).filter(|s| *s <= MAX_SITES).ok_or_else(|| Error::InvalidKernel("torus too large".into()))?;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidKernel(format!("beta must be positive, got {beta}")));
        }
        let mut kbar = vec![Complex64::new(0.0, 0.0); sites];
        match &spec.exponent {
            Exponent::Rw { rate, drift } => {
                let r = rate.unwrap_or((n * n) as f64);
                if !(r >= 0.0) || !(*drift >= 0.0) {
                    return Err(Error::InvalidKernel("walk rates must be non-negative".into()));
                }
                for (idx, v) in kbar.iter_mut().enumerate() {
                    for k in multi_index(idx, n, d) {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                        *v += Complex64::new((2.0 * r + drift) * (1.0 - th.cos()), -drift * th.sin());
                    }
                }
            }
            Exponent::StableSurrogate { index, scale } => {
                if !(*index > 0.0 && *index <= 2.0) || !(*scale > 0.0) {
                    return Err(Error::InvalidKernel(format!("stable index {index} or scale {scale} out of range")));
                }
                for (idx, v) in kbar.iter_mut().enumerate() {
                    let r = freq_radius(idx, n, d);
                    *v = Complex64::new(scale * r.powf(*index), 0.0);
                }
            }
            Exponent::Table { re, im } => {
                if re.len() != sites || im.len() != sites {
                    return Err(Error::InvalidKernel(format!("table needs {sites} entries")));
                }
                for i in 0..sites {
                    kbar[i] = Complex64::new(re[i], im[i]);
                }
            }
        }
        if kbar.iter().any(|v| !v.re.is_finite() || !v.im.is_finite() || v.re < -1e-12) {
            return Err(Error::InvalidKernel("Re kappa_bar must be finite and non-negative".into()));
        }
        if kbar[0].norm() > 1e-12 {
            return Err(Error::InvalidKernel("kappa_bar(0) must vanish".into()));
        }
        let kappa: Vec<Complex64> = kbar.iter().map(|v| v + beta).collect();
        let uhat: Vec<Complex64> = kappa.iter().map(|k| 1.0 / k).collect();
        let scale = 1.0 / sites as f64;
        let u: Vec<f64> = dft(&uhat, n, d, -1).iter().map(|c| c.re * scale).collect();
        let abs: Vec<f64> = uhat.iter().map(|c| c.norm()).collect();
        let gamma = circular_convolution(&abs, &abs, n, d).into_iter().map(|v| v.max(0.0)).collect();
        Ok(Self { spec, sites, kappa, uhat, u, gamma })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn side(&self) -> usize {
        self.spec.n
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn kappa(&self) -> &[Complex64] {
        &self.kappa
    }

    pub fn uhat(&self) -> &[Complex64] {
        &self.uhat
    }

    /// `u(z)`; the kernel is `u(x, y) = u(y - x)`.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// `gamma = |u^| * |u^|`.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `|xi|` for flattened index `idx`.
    pub fn radius(&self, idx: usize) -> f64 {
        freq_radius(idx, self.spec.n, self.spec.d)
    }

    /// Flattened index of `y - x`.
    pub fn difference(&self, x: usize, y: usize) -> usize {
        let (n, d) = (self.spec.n, self.spec.d);
        let a = multi_index(x, n, d);
        let b = multi_index(y, n, d);
        let diff: Vec<usize> = a.iter().zip(&b).map(|(p, q)| (q + n - p) % n).collect();
        flat_index(&diff, n)
    }

    /// Distance on the unit torus between sites.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        let (n, d) = (self.spec.n, self.spec.d);
        let z = multi_index(self.difference(x, y), n, d);
        z.iter().map(|c| (wrap(*c, n) as f64 / n as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Dense `N^d x N^d` kernel matrix `u(x, y) = u(y - x)`.
    pub fn kernel_matrix(&self) -> Result<PotentialKernel> {
        let s = self.sites;
        let mut m = nalgebra::DMatrix::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                m[(x, y)] = self.u[self.difference(x, y)];
            }
        }
        PotentialKernel::from_matrix(m)
    }

    /// The killed walk as a Markov chain with counting reference measure.
    pub fn markov_model(&self) -> Result<MarkovModel> {
        let (n, d) = (self.spec.n, self.spec.d);
        let (rate, drift) = match &self.spec.exponent {
            Exponent::Rw { rate, drift } => (rate.unwrap_or((n * n) as f64), *drift),
            _ => return Err(Error::InvalidKernel("only walk kernels have explicit jump rates".into())),
        };
        let s = self.sites;
        let mut rates = vec![vec![0.0; s]; s];
        for (x, row) in rates.iter_mut().enumerate() {
            let a = multi_index(x, n, d);
            for axis in 0..d {
                let mut up = a.clone();
                up[axis] = (a[axis] + 1) % n;
                let mut down = a.clone();
                down[axis] = (a[axis] + n - 1) % n;
                row[flat_index(&up, n)] += rate + drift;
                row[flat_index(&down, n)] += rate;
            }
            row[x] = 0.0;
        }
        let names = (0..s).map(|i| format!("x{i}")).collect();
        build_model(names, rates, vec![self.spec.beta; s], vec![1.0; s])
    }

    pub fn check_measure(&self, nu: &Measure) -> Result<()> {
        if nu.len() != self.sites {
            return Err(Error::Shape(format!("measure has {} atoms, torus has {}", nu.len(), self.sites)));
        }
        Ok(())
    }

    pub fn fourier(&self, nu: &Measure) -> Result<Vec<Complex64>> {
        self.check_measure(nu)?;
        let c: Vec<Complex64> = nu.weights().iter().map(|v| Complex64::new(*v, 0.0)).collect();
        Ok(dft(&c, self.spec.n, self.spec.d, 1))
    }

    /// `|nu^(k)|^2 gamma(k)`, the weights of every Fourier-side quantity.
    pub fn spectral_weights(&self, nu: &Measure) -> Result<Vec<f64>> {
        Ok(self.fourier(nu)?.iter().zip(&self.gamma).map(|(f, g)| f.norm_sqr() * g).collect())
    }

    /// `nu_h(A) = nu(A - h)` for a lattice shift `h`.
    pub fn translate(&self, nu: &Measure, h: &[usize]) -> Result<Measure> {
        self.check_measure(nu)?;
        let (n, d) = (self.spec.n, self.spec.d);
        if h.len() != d {
            return Err(Error::Shape("shift has wrong dimension".into()));
        }
        let mut w = vec![0.0; self.sites];
        for (x, v) in nu.weights().iter().enumerate() {
            let a = multi_index(x, n, d);
            let b: Vec<usize> = a.iter().zip(h).map(|(p, q)| (p + q) % n).collect();
            w[flat_index(&b, n)] = *v;
        }
        Measure::new(w)
    }

    pub fn norm_gamma2(&self, nu: &Measure) -> Result<f64> {
        Ok(self.spectral_weights(nu)?.iter().sum::<f64>().sqrt())
    }

    /// `max_xi |Im kappa| / Re kappa`.
    pub fn sectorial_constant(&self) -> f64 {
        self.kappa.iter().map(|k| k.im.abs() / k.re).fold(0.0, f64::max)
    }

    /// `(sum_{x,y} u(x - y) u(y - x) nu(x) nu(y))^{1/2}` evaluated spectrally,
    /// with the sectorial constant.
    pub fn norm_sect2(&self, nu: &Measure) -> Result<(f64, f64)> {
        let c = self.sectorial_constant();
        if c >= 1.0 {
            log::warn!("sectorial constant {c} is not below 1");
        }
        let (n, d) = (self.spec.n, self.spec.d);
        let g: Vec<Complex64> = (0..self.sites)
            .map(|z| {
                let neg = flat_index(&multi_index(z, n, d).iter().map(|c| (n - c) % n).collect::<Vec<_>>(), n);
                Complex64::new(self.u[z] * self.u[neg], 0.0)
            })
            .collect();
        let ghat = dft(&g, n, d, 1);
        let f = self.fourier(nu)?;
        let q: f64 = ghat.iter().zip(&f).map(|(a, b)| a.re * b.norm_sqr()).sum::<f64>() / self.sites as f64;
        Ok((q.max(0.0).sqrt(), c))
    }

    /// `phi(delta)^2 = sum_xi min(delta |xi|, 1)^2 |nu^|^2 gamma`.
    pub fn phi_delta(&self, nu: &Measure, delta: f64) -> Result<f64> {
        if !(delta > 0.0) {
            return Err(Error::InvalidDelta(delta));
        }
        let w = self.spectral_weights(nu)?;
        Ok(phi_from_weights(&w, &self.radii(), delta))
    }

    fn radii(&self) -> Vec<f64> {
        (0..self.sites).map(|i| self.radius(i)).collect()
    }

    /// `omega(delta) = phi(delta) log(1/delta) + int_0^delta phi(u)/u du`.
    pub fn omega_delta(&self, nu: &Measure, delta: f64) -> Result<f64> {
        let w = self.spectral_weights(nu)?;
        let r = self.radii();
        let breaks: Vec<f64> = r.iter().filter(|v| **v > 0.0).map(|v| 1.0 / v).collect();
        omega_with_breaks(|x| phi_from_weights(&w, &r, x), delta, &breaks)
    }

    /// Table of `(delta, phi, omega)` on the given cutoffs.
    pub fn modulus_table(&self, nu: &Measure, deltas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        let w = self.spectral_weights(nu)?;
        let r = self.radii();
        let breaks: Vec<f64> = r.iter().filter(|v| **v > 0.0).map(|v| 1.0 / v).collect();
        deltas
            .iter()
            .map(|&dl| Ok((dl, phi_from_weights(&w, &r, dl), omega_with_breaks(|x| phi_from_weights(&w, &r, x), dl, &breaks)?)))
            .collect()
    }

    /// Dyadic-shell sum `sum_j T(2^j)^{1/2} log 2` over `2^j` up to the
    /// Nyquist radius, where `T(x) = sum_{|xi| >= x} |nu^|^2 gamma`; `exact`
    /// integrates `T(x)^{1/2} / x` over `[1, R]` piecewise.
    pub fn b101_integral(&self, nu: &Measure) -> Result<B101> {
        let w = self.spectral_weights(nu)?;
        let mut pairs: Vec<(f64, f64)> = (0..self.sites).map(|i| (self.radius(i), w[i])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let rmax = pairs.last().map(|p| p.0).unwrap_or(0.0);
        let tail = |x: f64| pairs.iter().filter(|p| p.0 >= x).map(|p| p.1).sum::<f64>();
        // Exact: T is constant on (r_i, r_{i+1}].
        let mut value = 0.0;
        let mut radii: Vec<f64> = pairs.iter().map(|p| p.0).filter(|r| *r > 1.0).collect();
        radii.dedup();
        let mut lo = 1.0;
        for r in radii {
            value += tail(r).sqrt() * (r / lo).ln();
            lo = r;
        }
        let mut shells = Vec::new();
        let mut x = 1.0;
        while x <= rmax {
            shells.push((x, tail(x)));
            x *= 2.0;
        }
        let dyadic = shells.iter().map(|s| s.1.sqrt() * std::f64::consts::LN_2).sum();
        Ok(B101 { value: dyadic, exact: value, nyquist_radius: rmax, shells })
    }

    /// Log-log fit of `|kappa|` against `|xi|` on the resolved band
    /// `0 < 2 pi |k~| / N <= pi / 4`, with the kernel inequalities that
    /// depend on the index.
    pub fn tau_fit(&self) -> TauFit {
        let n = self.spec.n as f64;
        let d = self.spec.d as i32;
        let band_hi = n / 8.0 * 2.0 * std::f64::consts::PI;
        let mut pts = Vec::new();
        let mut outer = Vec::new();
        let mut upper: f64 = 0.0;
        let mut lower: f64 = 0.0;
        for i in 1..self.sites {
            let r = self.radius(i);
            let k = self.kappa[i].norm();
            if r <= band_hi + 1e-9 {
                pts.push((r.ln(), k.ln()));
            }
            if r >= n / 4.0 * 2.0 * std::f64::consts::PI - 1e-9 {
                outer.push((r.ln(), k.ln()));
            }
            let g = self.gamma[i];
            upper = upper.max(g * k * k / r.powi(d));
            lower = lower.max(r.powi(d) / (k * k * g));
        }
        let (slope, intercept) = if pts.len() >= 2 { least_squares(&pts) } else { (f64::NAN, f64::NAN) };
        let residual = pts.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
        let nyquist_slope = if outer.len() >= 2 { least_squares(&outer).0 } else { f64::NAN };
        TauFit {
            slope,
            intercept,
            residual,
            band: (2.0 * std::f64::consts::PI, band_hi),
            band_points: pts.len(),
            nyquist_band_slope: nyquist_slope,
            upper_ratio_constant: upper,
            lower_ratio_constant: lower,
            convolution_constant: self.convolution_constant(),
        }
    }

    /// `max_xi sum_l |u^(l)|^2 |u^(xi - l)| / (|u^(xi)| sum_l |u^(l)|^2)`.
    pub fn convolution_constant(&self) -> f64 {
        let (n, d) = (self.spec.n, self.spec.d);
        let abs: Vec<f64> = self.uhat.iter().map(|c| c.norm()).collect();
        let sq: Vec<f64> = abs.iter().map(|v| v * v).collect();
        let total: f64 = sq.iter().sum();
        let conv = circular_convolution(&sq, &abs, n, d);
        conv.iter().zip(&abs).map(|(c, a)| c / (a * total)).fold(0.0, f64::max)
    }

    /// `sum_x u(x)^2` and `N^{-d} sum_xi |u^|^2`, equal under the DFT convention.
    pub fn parseval(&self) -> (f64, f64) {
        let a = self.u.iter().map(|v| v * v).sum();
        let b = self.uhat.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.sites as f64;
        (a, b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct B101 {
    pub value: f64,
    pub exact: f64,
    pub nyquist_radius: f64,
    /// `(x, T(x))` at dyadic `x`.
    pub shells: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// `|xi|` range of the fit.
    pub band: (f64, f64),
    pub band_points: usize,
    /// Slope over the top half of the spectrum, where the lattice symbol saturates.
    pub nyquist_band_slope: f64,
    /// `max gamma |kappa|^2 / |xi|^d`.
    pub upper_ratio_constant: f64,
    /// `max |xi|^d / (|kappa|^2 gamma)`.
    pub lower_ratio_constant: f64,
    pub convolution_constant: f64,
}

pub fn phi_from_weights(w: &[f64], r: &[f64], delta: f64) -> f64 {
    w.iter().zip(r).map(|(wi, ri)| (delta * ri).min(1.0).powi(2) * wi).sum::<f64>().sqrt()
}

/// `omega(delta) = phi(delta) log(1/delta) + int_0^delta phi(u)/u du`, the
/// integral taken in `s = log(delta/u)`.
pub fn omega_with<F: Fn(f64) -> f64>(phi: F, delta: f64) -> Result<f64> {
    omega_with_breaks(phi, delta, &[])
}

/// [`omega_with`] for a `phi` that is smooth between the given points.
pub fn omega_with_breaks<F: Fn(f64) -> f64>(phi: F, delta: f64, breaks: &[f64]) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let mut cuts: Vec<f64> = breaks.iter().filter(|b| **b > 0.0 && **b < delta).map(|b| (delta / b).ln()).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let f = |s: f64| vec![phi(delta * (-s).exp())];
    let tol = Tol::new(1e-15, 1e-13);
    let mut lo = 0.0;
    let mut total = 0.0;
    for c in cuts {
        total += integrate(f, lo, c, tol)?[0];
        lo = c;
    }
    total += integrate_to_inf(f, lo, tol)?[0];
    Ok(phi(delta) * (1.0 / delta).ln() + total)
}

pub fn multi_index(idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    let mut r = idx;
    for i in (0..d).rev() {
        out[i] = r % n;
        r /= n;
    }
    out
}

pub fn flat_index(k: &[usize], n: usize) -> usize {
    k.iter().fold(0, |acc, v| acc * n + v)
}

/// Wrapped coordinate in `[-N/2, N/2)`.
pub fn wrap(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if 2 * k >= n {
        k - n
    } else {
        k
    }
}

pub fn freq_radius(idx: usize, n: usize, d: usize) -> f64 {
    let r2: f64 = multi_index(idx, n, d).iter().map(|k| (wrap(*k, n) as f64).powi(2)).sum();
    2.0 * std::f64::consts::PI * r2.sqrt()
}

/// Templates for the four continuity cases of translated measures: the
/// premises are read off fitted indices and the modulus predicted by the
/// fits is printed next to measured translation differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityTemplate {
    pub case: usize,
    pub premise: String,
    pub premise_holds: bool,
    pub tau_index: f64,
    pub nu_decay_index: f64,
    /// Index at zero of the predicted modulus, when the case gives one.
    pub predicted_index: Option<f64>,
    /// Log-log slope of `||nu_h - nu||_{gamma,2}` against `|h|` at small `|h|`.
    pub measured_index: f64,
    /// `(|h|, phi(|h|), omega(|h|), ||nu_h - nu||_{gamma,2})`.
    pub rows: Vec<(f64, f64, f64, f64)>,
}

impl LatticeKernel {
    /// Decay index of `|nu^|` on the resolved band (0 for an atom).
    pub fn fourier_decay_index(&self, nu: &Measure) -> Result<f64> {
        let f = self.fourier(nu)?;
        let hi = self.spec.n as f64 / 8.0 * 2.0 * std::f64::consts::PI;
        let pts: Vec<(f64, f64)> = (1..self.sites)
            .filter(|i| self.radius(*i) <= hi + 1e-9 && f[*i].norm() > 0.0)
            .map(|i| (self.radius(i).ln(), -f[i].norm().ln()))
            .collect();
        Ok(if pts.len() >= 2 { least_squares(&pts).0 } else { 0.0 })
    }

    pub fn continuity_templates(&self, nu: &Measure) -> Result<Vec<ContinuityTemplate>> {
        let d = self.spec.d as f64;
        let n = self.spec.n;
        let tau = self.tau_fit().slope;
        let beta = self.fourier_decay_index(nu)?;
        let mut rows = Vec::new();
        let mut h = 1usize;
        while h <= n / 4 {
            let mut shift = vec![0; self.spec.d];
            shift[0] = h;
            let delta = h as f64 / n as f64;
            let diff = self.translate(nu, &shift)?.add(&nu.scale(-1.0));
            rows.push((delta, self.phi_delta(nu, delta)?, self.omega_delta(nu, delta)?, self.norm_gamma2(&diff)?));
            h *= 2;
        }
        let pts: Vec<(f64, f64)> = rows.iter().take(3).filter(|r| r.3 > 0.0).map(|r| (r.0.ln(), r.3.ln())).collect();
        let measured = if pts.len() >= 2 { least_squares(&pts).0 } else { f64::NAN };
        let near2 = (tau - 2.0).abs() <= 0.15;
        let cases = vec![
            (1, "tau index in (d/2, d) and |nu^| <= C tau / (|xi|^d log^{3/2+e})", tau > d / 2.0 && tau < d && beta >= d - tau, None),
            (2, "d = 2, tau(|xi|) = |xi|^2 / log^a and |nu^| <= C tau / (|xi|^2 log^{2+e})", self.spec.d == 2 && near2 && beta >= 0.0, None),
            (3, "tau index alpha in (d/2, d), |nu^| <= 1/theta with theta index b, alpha + b > d", tau > d / 2.0 && tau < d && tau + beta > d, Some(tau + beta - d)),
            (4, "d = 2, tau(|xi|) = |xi|^2 / log^a, |nu^| <= 1/theta with theta index b > 0", self.spec.d == 2 && near2 && beta > 0.0, Some(beta)),
        ];
        Ok(cases
            .into_iter()
            .map(|(case, premise, holds, predicted)| ContinuityTemplate {
                case,
                premise: premise.to_string(),
                premise_holds: holds,
                tau_index: tau,
                nu_decay_index: beta,
                predicted_index: predicted,
                measured_index: measured,
                rows: rows.clone(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rw(n: usize, rate: Option<f64>) -> LatticeKernel {
        LatticeKernel::new(KernelSpec { d: 1, n, beta: 1.0, exponent: Exponent::Rw { rate, drift: 0.0 } }).unwrap()
    }

    #[test]
    fn gamma_matches_direct_convolution() {
        let k = rw(8, Some(1.0));
        let a: Vec<f64> = k.uhat().iter().map(|c| c.norm()).collect();
        for x in 0..8 {
            let direct: f64 = (0..8).map(|l| a[l] * a[(x + 8 - l) % 8]).sum();
            assert!((k.gamma()[x] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn parseval_holds() {
        let k = rw(16, None);
        let (a, b) = k.parseval();
        assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = KernelSpec { d: 1, n: 8, beta: 0.0, exponent: Exponent::Rw { rate: None, drift: 0.0 } };
        assert!(LatticeKernel::new(bad).is_err());
        let bad = KernelSpec { d: 1, n: 4, beta: 1.0, exponent: Exponent::Table { re: vec![1.0; 4], im: vec![0.0; 4] } };
        assert!(matches!(LatticeKernel::new(bad), Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn omega_of_linear_phi() {
        let dl: f64 = 0.1;
        let v = omega_with(|u| u, dl).unwrap();
        assert!((v - (dl * (1.0 / dl).ln() + dl)).abs() < 1e-12);
        let v = omega_with(|u| u.sqrt(), dl).unwrap();
        assert!((v - (2.0 * dl.sqrt() + dl.sqrt() * (1.0 / dl).ln())).abs() < 1e-10);
        assert_eq!(omega_with(|_| 0.0, dl).unwrap(), 0.0);
    }
}
