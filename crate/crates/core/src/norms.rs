//! Norms on finite signed measures controlling cyclic kernel integrals, and
//! an empirical prober for the constant in `|cyclic| <= C^n prod ||nu_j||`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::markov::{potential_kernel, MarkovModel, PotentialKernel};
use crate::mc::stream_rng;
use crate::measure::Measure;
use crate::moments::{cyclic_integral, mu_moment};
use crate::quad::{integrate_to_inf, Tol};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Gamma2,
    SqBracket2,
    WNorm,
    PhiNorm,
    U2Inf,
    Zero,
    TwoPd,
    PiUbar,
}

impl NormKind {
    pub const ALL: [NormKind; 8] = [
        NormKind::Gamma2,
        NormKind::SqBracket2,
        NormKind::WNorm,
        NormKind::PhiNorm,
        NormKind::U2Inf,
        NormKind::Zero,
        NormKind::TwoPd,
        NormKind::PiUbar,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            NormKind::Gamma2 => "gamma2",
            NormKind::SqBracket2 => "sq_bracket2",
            NormKind::WNorm => "w_norm",
            NormKind::PhiNorm => "phi_norm",
            NormKind::U2Inf => "u2_inf",
            NormKind::Zero => "zero",
            NormKind::TwoPd => "two_pd",
            NormKind::PiUbar => "pi_ubar",
        }
    }

    /// Norms that need the translation structure of a lattice kernel.
    pub fn is_lattice(&self) -> bool {
        matches!(self, NormKind::Gamma2 | NormKind::SqBracket2)
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormKind::ALL.iter().find(|k| k.tag() == s).copied().ok_or_else(|| Error::UnknownNorm(s.to_string()))
    }
}

pub fn norm_u2_inf(u: &PotentialKernel, nu: &Measure) -> f64 {
    let n = u.len();
    let a = nu.abs();
    let sup = (0..n)
        .map(|x| (0..n).map(|y| (u.get(x, y).powi(2) + u.get(y, x).powi(2)) * a.get(y)).sum::<f64>())
        .fold(0.0, f64::max);
    a.total_variation().max(sup)
}

pub fn norm_zero(u: &PotentialKernel, nu: &Measure) -> f64 {
    let n = u.len();
    let a = nu.abs();
    let sup = (0..n).map(|x| (0..n).map(|y| u.get(x, y) * a.get(y)).sum::<f64>()).fold(0.0, f64::max);
    a.total_variation().max(sup)
}

/// Minimum eigenvalue of the symmetric part of `u`.
pub fn symmetric_min_eigenvalue(u: &PotentialKernel) -> f64 {
    let s = (u.matrix() + u.matrix().transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn norm_two_pd(u: &PotentialKernel, nu: &Measure) -> Result<f64> {
    let scale = u.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = symmetric_min_eigenvalue(u);
    if min < -1e-10 * scale.max(1.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    let n = u.len();
    let a = nu.abs();
    let mut s = 0.0;
    for x in 0..n {
        for y in 0..n {
            s += (u.get(x, y) + u.get(y, x)).powi(2) * a.get(x) * a.get(y);
        }
    }
    Ok(s.sqrt())
}

pub fn norm_pi_ubar(u: &PotentialKernel, nu: &Measure) -> f64 {
    let n = u.len();
    let mut sup = 0.0f64;
    for y in 0..n {
        for z in 0..n {
            let v: f64 = (0..n).map(|x| u.get(y, x) * u.get(x, z) * nu.get(x)).sum();
            sup = sup.max(v.abs());
        }
    }
    nu.total_variation().max(sup)
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().cloned().collect()
}

fn unflatten(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v)
}

/// `w(x, y) = int_0^inf p_s(x, y) / sqrt(pi s) ds`, integrated in `v = sqrt(s)`.
pub fn w_kernel(model: &MarkovModel) -> Result<DMatrix<f64>> {
    let n = model.len();
    let c = 2.0 / std::f64::consts::PI.sqrt();
    let q = model.generator();
    let v = integrate_to_inf(|v| flatten(&((q * (v * v)).exp() * c)), 0.0, Tol::new(1e-15, 1e-12))?;
    let mut w = unflatten(&v, n);
    for y in 0..n {
        let my = model.m()[y];
        w.column_mut(y).iter_mut().for_each(|e| *e /= my);
    }
    Ok(w)
}

/// Largest relative entry error in `sum_y w(x, y) w(y, z) m_y = u(x, z)`.
pub fn w_square_error(model: &MarkovModel, w: &DMatrix<f64>) -> Result<f64> {
    let u = potential_kernel(model)?;
    let ww = w * DMatrix::from_diagonal(model.m()) * w;
    let scale = u.matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((ww - u.matrix()).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale)
}

const W_SQUARE_TOL: f64 = 1e-6;

pub fn norm_w_with(model: &MarkovModel, w: &DMatrix<f64>, nu: &Measure) -> f64 {
    let mm = w * DMatrix::from_diagonal(&nu.as_dvector()) * w;
    let m = model.m();
    let mut s = 0.0;
    for x in 0..model.len() {
        for z in 0..model.len() {
            s += mm[(x, z)].powi(2) * m[x] * m[z];
        }
    }
    s.sqrt()
}

pub fn norm_w(model: &MarkovModel, nu: &Measure) -> Result<f64> {
    let w = w_kernel(model)?;
    let err = w_square_error(model, &w)?;
    if err > W_SQUARE_TOL {
        return Err(Error::QuadratureFailure(format!("W^2 = U violated by {err:.2e}")));
    }
    Ok(norm_w_with(model, &w, nu))
}

/// Solves `A X + X A^T = -C` through the Kronecker system.
fn lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let big = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs).ok_or_else(|| Error::NonTransient("singular Lyapunov system".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// `(Theta_l, Theta_r)` by the Lyapunov route.
pub fn theta_kernels(model: &MarkovModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = model.generator();
    let m = DMatrix::from_diagonal(model.m());
    let minv = DMatrix::from_diagonal(&model.m().map(|v| 1.0 / v));
    let x = lyapunov(q, &minv)?;
    let y = lyapunov(&q.transpose(), &m)?;
    Ok((x * 2.0, &minv * y * 2.0 * &minv))
}

/// `(Theta_l, Theta_r)` by direct quadrature of the defining integrals.
pub fn theta_kernels_quadrature(model: &MarkovModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.len();
    let q = model.generator();
    let m = DMatrix::from_diagonal(model.m());
    let minv = DMatrix::from_diagonal(&model.m().map(|v| 1.0 / v));
    let v = integrate_to_inf(
        |s| {
            let p = (q * (0.5 * s)).exp();
            let l = &p * &minv * p.transpose();
            let r = &minv * p.transpose() * &m * &p * &minv;
            let mut out = flatten(&l);
            out.extend(flatten(&r));
            out
        },
        0.0,
        Tol::new(1e-15, 1e-12),
    )?;
    Ok((unflatten(&v[..n * n], n), unflatten(&v[n * n..], n)))
}

pub fn phi_kernel(model: &MarkovModel) -> Result<DMatrix<f64>> {
    let (l, r) = theta_kernels(model)?;
    Ok(l.component_mul(&r))
}

pub fn norm_phi_with(phi: &DMatrix<f64>, nu: &Measure) -> Result<f64> {
    let v = nu.as_dvector();
    let a = nu.abs().as_dvector();
    let scale = (phi.transpose() * &a).dot(&a);
    let q = (phi.transpose() * &v).dot(&v);
    if q < -1e-10 * scale.max(1e-300) {
        return Err(Error::NotPositiveDefinite(q));
    }
    Ok(q.max(0.0).sqrt())
}

pub fn norm_phi(model: &MarkovModel, nu: &Measure) -> Result<f64> {
    norm_phi_with(&phi_kernel(model)?, nu)
}

/// Evaluates any state-space norm, caching the kernels it needs.
pub struct StateNorms {
    model: MarkovModel,
    u: PotentialKernel,
    w: Option<DMatrix<f64>>,
    phi: Option<DMatrix<f64>>,
}

impl StateNorms {
    pub fn new(model: &MarkovModel) -> Result<Self> {
        Ok(Self { model: model.clone(), u: potential_kernel(model)?, w: None, phi: None })
    }

    pub fn kernel(&self) -> &PotentialKernel {
        &self.u
    }

    pub fn eval(&mut self, kind: NormKind, nu: &Measure) -> Result<f64> {
        match kind {
            NormKind::U2Inf => Ok(norm_u2_inf(&self.u, nu)),
            NormKind::Zero => Ok(norm_zero(&self.u, nu)),
            NormKind::TwoPd => norm_two_pd(&self.u, nu),
            NormKind::PiUbar => Ok(norm_pi_ubar(&self.u, nu)),
            NormKind::WNorm => {
                if self.w.is_none() {
                    let w = w_kernel(&self.model)?;
                    let err = w_square_error(&self.model, &w)?;
                    if err > W_SQUARE_TOL {
                        return Err(Error::QuadratureFailure(format!("W^2 = U violated by {err:.2e}")));
                    }
                    self.w = Some(w);
                }
                Ok(norm_w_with(&self.model, self.w.as_ref().unwrap(), nu))
            }
            NormKind::PhiNorm => {
                if self.phi.is_none() {
                    self.phi = Some(phi_kernel(&self.model)?);
                }
                norm_phi_with(self.phi.as_ref().unwrap(), nu)
            }
            NormKind::Gamma2 | NormKind::SqBracket2 => Err(Error::UnknownNorm(format!("{kind} needs a lattice kernel"))),
        }
    }
}

/// Right side of the mixed bound `prod_{i in A} ||nu_i||_0 prod_{j in B} ||nu_j||_{u^2,inf}`,
/// with `B` given as a bitmask (must be non-empty).
pub fn mixed_cycle_bound(u: &PotentialKernel, measures: &[Measure], b_mask: usize) -> Result<f64> {
    if b_mask == 0 || measures.len() < 2 {
        return Err(Error::Invalid("need n >= 2 and a non-empty B".into()));
    }
    Ok(measures
        .iter()
        .enumerate()
        .map(|(j, nu)| if b_mask & (1 << j) != 0 { norm_u2_inf(u, nu) } else { norm_zero(u, nu) })
        .product())
}

/// Atoms uniform on `[-1, 1]`; with probability 1/2 one sign is dropped.
pub fn random_signed_measure<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Measure {
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    if rng.random::<bool>() {
        let keep_positive = rng.random::<bool>();
        for v in w.iter_mut() {
            if (*v > 0.0) != keep_positive {
                *v = 0.0;
            }
        }
    }
    Measure::new(w).expect("finite weights")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    pub trial: usize,
    pub ratio: f64,
    pub diagonal: bool,
    pub norm_kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub norm_kind: String,
    pub symmetrized: bool,
    pub seed: u64,
    pub trials: usize,
    /// `(n, max ratio, C_n = max ratio^{1/n})`.
    pub per_n: Vec<(usize, f64, f64)>,
    /// `max_n C_n`.
    pub fitted_c: f64,
    /// `max C_n / min C_n - 1` over `n in 3..=n_max`.
    pub spread: f64,
    /// `C_n` is non-increasing beyond `n = 3` up to a 10% allowance.
    pub pass: bool,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn constant(&self, n: usize) -> Option<f64> {
        self.per_n.iter().find(|r| r.0 == n).map(|r| r.2)
    }
}

/// Draws `trials` random tuples for each `n` in `2..=n_max` and records
/// `|cyclic integral| / prod ||nu_j||`. Half of the tuples, chosen at random,
/// repeat a single measure `n` times (`diagonal`); independent tuples alone
/// find the supremum less often as `n` grows. With `symmetrized`, the numerator is
/// the permutation-symmetrized integral divided by `n!`, i.e.
/// `|mu(prod L^{nu_j})| / (n-1)!`.
pub fn proper_constant_probe<F>(
    u: &PotentialKernel,
    label: &str,
    norm: F,
    n_max: usize,
    trials: usize,
    seed: u64,
    symmetrized: bool,
) -> Result<ProbeReport>
where
    F: Fn(&Measure) -> Result<f64> + Sync,
{
    if !(2..=8).contains(&n_max) {
        return Err(Error::OrderTooLarge { order: n_max, max: 8 });
    }
    let dim = u.len();
    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    for n in 2..=n_max {
        let mut best = 0.0f64;
        for trial in 0..trials {
            let mut rng = stream_rng(seed, ((n as u64) << 32) | trial as u64);
            let diagonal = rng.random::<bool>();
            let nus: Vec<Measure> = if diagonal {
                vec![random_signed_measure(&mut rng, dim); n]
            } else {
                (0..n).map(|_| random_signed_measure(&mut rng, dim)).collect()
            };
            let mut denom = 1.0;
            for nu in &nus {
                denom *= norm(nu)?;
            }
            if denom == 0.0 {
                continue;
            }
            let num = if symmetrized {
                let fact: f64 = (1..n).map(|i| i as f64).product();
                mu_moment(u, &nus)?.abs() / fact
            } else {
                cyclic_integral(u, &nus)?.abs()
            };
            let ratio = num / denom;
            best = best.max(ratio);
            rows.push(ProbeRow { n, trial, ratio, diagonal, norm_kind: label.to_string() });
        }
        per_n.push((n, best, best.powf(1.0 / n as f64)));
    }
    let fitted_c = per_n.iter().map(|r| r.2).fold(0.0, f64::max);
    let tail: Vec<f64> = per_n.iter().filter(|r| r.0 >= 3).map(|r| r.2).collect();
    let spread = if tail.is_empty() {
        0.0
    } else {
        tail.iter().cloned().fold(0.0, f64::max) / tail.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0
    };
    let pass = tail.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    Ok(ProbeReport { norm_kind: label.to_string(), symmetrized, seed, trials, per_n, fitted_c, spread, pass, rows })
}
