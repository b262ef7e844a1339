//! Closed-form moments: cyclic integrals, alpha-permanental moments, loop
//! measure moments, Poisson mixed moments and the isomorphism identity.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::markov::PotentialKernel;
use crate::measure::Measure;
use crate::{Error, Result};

pub const MAX_ORDER: usize = 10;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n, max: MAX_ORDER });
    }
    Ok(())
}

fn check_shapes(u: &PotentialKernel, measures: &[Measure]) -> Result<()> {
    for nu in measures {
        if nu.len() != u.len() {
            return Err(Error::Shape(format!("measure has {} states, kernel has {}", nu.len(), u.len())));
        }
    }
    Ok(())
}

/// `B = diag(nu) u`, so that cyclic integrals are traces of products.
pub fn weighted_kernel(u: &PotentialKernel, nu: &Measure) -> DMatrix<f64> {
    let mut b = u.matrix().clone();
    for x in 0..u.len() {
        let w = nu.get(x);
        b.row_mut(x).iter_mut().for_each(|v| *v *= w);
    }
    b
}

/// `int u(x_1, x_2) u(x_2, x_3) ... u(x_n, x_1) prod dnu_j(x_j)`.
pub fn cyclic_integral(u: &PotentialKernel, measures: &[Measure]) -> Result<f64> {
    check_shapes(u, measures)?;
    if measures.is_empty() {
        return Err(Error::Invalid("cyclic integral of no measures".into()));
    }
    let mut p = weighted_kernel(u, &measures[0]);
    for nu in &measures[1..] {
        p *= weighted_kernel(u, nu);
    }
    Ok(p.trace())
}

#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

fn next_permutation(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Sums `alpha^{c(pi)} prod_cycles w(cycle)` over permutations of `0..n`
/// (only fixed-point-free ones when `derangements`). Cycles are passed as
/// `j, pi(j), pi^2(j), ...` starting from their smallest element. Work is
/// split by `pi(0)` and combined by pairwise summation, so the result does
/// not depend on the thread count.
pub fn cycle_sum<W>(n: usize, alpha: f64, derangements: bool, weight: W) -> f64
where
    W: Fn(&[usize]) -> f64 + Sync,
{
    if n == 0 {
        return 1.0;
    }
    let chunks: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|first| {
            if derangements && first == 0 {
                return 0.0;
            }
            let mut rest: Vec<usize> = (0..n).filter(|v| *v != first).collect();
            let mut perm = vec![0usize; n];
            let mut acc = Kahan::default();
            let mut memo: HashMap<u64, f64> = HashMap::new();
            let mut seen = vec![false; n];
            let mut cyc = Vec::with_capacity(n);
            loop {
                perm[0] = first;
                perm[1..].copy_from_slice(&rest);
                let ok = !derangements || perm.iter().enumerate().all(|(i, p)| i != *p);
                if ok {
                    seen.iter_mut().for_each(|s| *s = false);
                    let mut term = 1.0;
                    for start in 0..n {
                        if seen[start] {
                            continue;
                        }
                        cyc.clear();
                        let mut j = start;
                        while !seen[j] {
                            seen[j] = true;
                            cyc.push(j);
                            j = perm[j];
                        }
                        let key = cyc.iter().fold(cyc.len() as u64, |k, v| (k << 4) | *v as u64);
                        let w = *memo.entry(key).or_insert_with(|| weight(&cyc));
                        term *= alpha * w;
                    }
                    acc.add(term);
                }
                if !next_permutation(&mut rest) {
                    break;
                }
            }
            acc.sum
        })
        .collect();
    pairwise_sum(&chunks)
}

/// `E prod_j psi(nu_j)`: the sum over fixed-point-free permutations of
/// `alpha^{c(pi)}` times the product of cyclic integrals along each cycle.
pub fn alpha_permanental_moment(u: &PotentialKernel, alpha: f64, measures: &[Measure]) -> Result<f64> {
    check_alpha(alpha)?;
    check_order(measures.len())?;
    check_shapes(u, measures)?;
    let bs: Vec<DMatrix<f64>> = measures.iter().map(|nu| weighted_kernel(u, nu)).collect();
    Ok(cycle_sum(measures.len(), alpha, true, |cyc| {
        let mut p = bs[cyc[0]].clone();
        for j in &cyc[1..] {
            p *= &bs[*j];
        }
        p.trace()
    }))
}

/// `E prod_j X_{x_j}` for the alpha-permanental process with kernel `u`:
/// the alpha-permanent of `(u(x_i, x_j))`.
pub fn permanental_process_moment(u: &PotentialKernel, alpha: f64, points: &[usize]) -> Result<f64> {
    check_alpha(alpha)?;
    check_order(points.len())?;
    if points.iter().any(|x| *x >= u.len()) {
        return Err(Error::Shape("point out of range".into()));
    }
    Ok(cycle_sum(points.len(), alpha, false, |cyc| {
        (0..cyc.len()).map(|i| u.get(points[cyc[i]], points[cyc[(i + 1) % cyc.len()]])).product()
    }))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// `sum over orderings sigma of prod_j mats[sigma_j]`, by dynamic programming
/// over subsets.
fn ordered_product_sum(mats: &[DMatrix<f64>], dim: usize) -> DMatrix<f64> {
    let k = mats.len();
    let mut f: Vec<DMatrix<f64>> = Vec::with_capacity(1 << k);
    f.push(DMatrix::identity(dim, dim));
    for s in 1usize..(1 << k) {
        let mut acc = DMatrix::zeros(dim, dim);
        for (j, m) in mats.iter().enumerate() {
            if s & (1 << j) != 0 {
                acc += &f[s ^ (1 << j)] * m;
            }
        }
        f.push(acc);
    }
    f.pop().unwrap()
}

/// `mu(prod_j L^{nu_j}) = (1/k) sum_{pi in P_k} cyclic integral of the permuted measures`.
pub fn mu_moment(u: &PotentialKernel, measures: &[Measure]) -> Result<f64> {
    check_order(measures.len())?;
    check_shapes(u, measures)?;
    let k = measures.len();
    if k == 0 {
        return Err(Error::Invalid("mu of the constant function is infinite".into()));
    }
    let bs: Vec<DMatrix<f64>> = measures.iter().map(|nu| weighted_kernel(u, nu)).collect();
    Ok(ordered_product_sum(&bs, u.len()).trace() / k as f64)
}

/// Same value as [`mu_moment`] with the last measure held as the anchor of
/// the cycle and the others permuted.
pub fn mu_moment_anchored(u: &PotentialKernel, measures: &[Measure]) -> Result<f64> {
    check_order(measures.len())?;
    check_shapes(u, measures)?;
    let k = measures.len();
    if k == 0 {
        return Err(Error::Invalid("mu of the constant function is infinite".into()));
    }
    let bs: Vec<DMatrix<f64>> = measures.iter().map(|nu| weighted_kernel(u, nu)).collect();
    let rest = ordered_product_sum(&bs[..k - 1], u.len());
    Ok((&bs[k - 1] * rest).trace())
}

/// `Q^{x,y}(prod_j L^{nu_j}) = sum_{pi} int u(x, y_1) u(y_1, y_2) ... u(y_k, y) prod dnu_{pi(j)}(y_j)`.
pub fn qxy_moment(u: &PotentialKernel, x: usize, y: usize, measures: &[Measure]) -> Result<f64> {
    check_order(measures.len())?;
    check_shapes(u, measures)?;
    if x >= u.len() || y >= u.len() {
        return Err(Error::Shape("endpoint out of range".into()));
    }
    let bs: Vec<DMatrix<f64>> = measures.iter().map(|nu| weighted_kernel(u, nu)).collect();
    let f = ordered_product_sum(&bs, u.len());
    Ok((u.matrix() * f)[(x, y)])
}

/// `Q^rho_phi(prod_j L^{nu_j}) = mu(L^rho L^phi prod_j L^{nu_j})`.
pub fn q_rho_phi_moment(u: &PotentialKernel, rho: &Measure, phi: &Measure, measures: &[Measure]) -> Result<f64> {
    if !rho.is_nonnegative() || !phi.is_nonnegative() {
        return Err(Error::Invalid("rho and phi must be non-negative".into()));
    }
    let mut all = vec![rho.clone(), phi.clone()];
    all.extend_from_slice(measures);
    mu_moment(u, &all)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthFit {
    /// `Q^rho_phi((L^nu)^n) / n!` for `n = 1..=n_max`.
    pub scaled_moments: Vec<f64>,
    pub constant: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Fits `Q^rho_phi((L^nu)^n) / n! ~ A C^n` by least squares in log scale.
pub fn q_rho_phi_growth(u: &PotentialKernel, rho: &Measure, phi: &Measure, nu: &Measure, n_max: usize) -> Result<GrowthFit> {
    if n_max < 2 || n_max + 2 > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: n_max + 2, max: MAX_ORDER });
    }
    let mut vals = Vec::new();
    let mut fact = 1.0;
    for n in 1..=n_max {
        fact *= n as f64;
        let v = q_rho_phi_moment(u, rho, phi, &vec![nu.clone(); n])?;
        vals.push(v / fact);
    }
    let pts: Vec<(f64, f64)> = vals.iter().enumerate().map(|(i, v)| ((i + 1) as f64, v.abs().max(f64::MIN_POSITIVE).ln())).collect();
    let (slope, intercept) = least_squares(&pts);
    let max_residual = pts.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(GrowthFit { scaled_moments: vals, constant: slope.exp(), intercept, max_residual })
}

pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// A product `prod_j L^{nu_j}` summed over the soup, optionally compensated
/// by its mean (only meaningful for a single factor).
#[derive(Debug, Clone)]
pub struct Group {
    pub measures: Vec<Measure>,
    pub centered: bool,
}

impl Group {
    pub fn raw(measures: Vec<Measure>) -> Self {
        Self { measures, centered: false }
    }

    pub fn centered(nu: Measure) -> Self {
        Self { measures: vec![nu], centered: true }
    }
}

/// Visits every set partition of `0..n` as a restricted growth string.
pub fn for_each_set_partition<F: FnMut(&[usize], usize)>(n: usize, mut f: F) {
    if n == 0 {
        f(&[], 0);
        return;
    }
    let mut a = vec![0usize; n];
    let mut b = vec![1usize; n];
    loop {
        let blocks = a.iter().cloned().max().unwrap() + 1;
        f(&a, blocks);
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if a[i] < b[i] {
                a[i] += 1;
                let nb = b[i].max(a[i] + 1);
                for j in i + 1..n {
                    a[j] = 0;
                    b[j] = nb;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// `E prod_g X_g` for Poisson-soup functionals `X_g = sum_loops prod L^{nu}`
/// at intensity `alpha`. Centered groups are expanded as `raw - mean` and
/// each raw product moment is the sum over set partitions of the groups of
/// `prod_blocks alpha mu(prod of all measures in the block)`.
pub fn poisson_mixed_moment(u: &PotentialKernel, alpha: f64, groups: &[Group]) -> Result<f64> {
    check_alpha(alpha)?;
    let g = groups.len();
    let total: usize = groups.iter().map(|gr| gr.measures.len()).sum();
    check_order(total)?;
    for gr in groups {
        check_shapes(u, &gr.measures)?;
        if gr.measures.is_empty() {
            return Err(Error::Invalid("empty group".into()));
        }
    }
    let mut mu_cache: HashMap<usize, f64> = HashMap::new();
    let mu_of = |mask: usize| -> Result<f64> {
        if let Some(v) = mu_cache.get(&mask) {
            return Ok(*v);
        }
        let ms: Vec<Measure> =
            (0..g).filter(|i| mask & (1 << i) != 0).flat_map(|i| groups[i].measures.iter().cloned()).collect();
        let v = mu_moment(u, &ms)?;
        mu_cache.insert(mask, v);
        Ok(v)
    };
    poisson_mixed_by(alpha, groups, mu_of)
}

/// The expansion behind [`poisson_mixed_moment`] with the loop-measure
/// moments supplied by `mu_of(group mask)`.
pub fn poisson_mixed_by<F: FnMut(usize) -> Result<f64>>(alpha: f64, groups: &[Group], mut mu_of: F) -> Result<f64> {
    let g = groups.len();
    let mut raw_cache: HashMap<usize, f64> = HashMap::new();
    let centered: Vec<usize> = (0..g).filter(|i| groups[*i].centered).collect();
    let mut acc = 0.0;
    for sel in 0usize..(1 << centered.len()) {
        // Centered groups in `sel` keep their raw factor, the others contribute -mean.
        let mut coef = 1.0;
        let mut mask = (1usize << g) - 1;
        for (bit, &c) in centered.iter().enumerate() {
            if sel & (1 << bit) == 0 {
                coef *= -alpha * mu_of(1 << c)?;
                mask &= !(1 << c);
            }
        }
        let raw = match raw_cache.get(&mask) {
            Some(v) => *v,
            None => {
                let members: Vec<usize> = (0..g).filter(|i| mask & (1 << i) != 0).collect();
                let mut sum = 0.0;
                let mut err = None;
                for_each_set_partition(members.len(), |labels, blocks| {
                    let mut term = 1.0;
                    for b in 0..blocks {
                        let bm = labels.iter().zip(&members).filter(|(l, _)| **l == b).fold(0, |m, (_, i)| m | (1 << i));
                        match mu_of(bm) {
                            Ok(v) => term *= alpha * v,
                            Err(e) => err = Some(e),
                        }
                    }
                    sum += term;
                });
                if let Some(e) = err {
                    return Err(e);
                }
                raw_cache.insert(mask, sum);
                sum
            }
        };
        acc += coef * raw;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub spec: serde_json::Value,
    pub engine_version: String,
}

impl MomentReport {
    pub fn new(lhs: f64, rhs: f64, spec: serde_json::Value) -> Self {
        let abs_diff = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        let rel_diff = if scale == 0.0 { 0.0 } else { abs_diff / scale };
        Self { lhs, rhs, abs_diff, rel_diff, spec, engine_version: ENGINE_VERSION.to_string() }
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.rel_diff <= rel_tol || self.abs_diff <= rel_tol * 1e-3
    }
}

/// Both sides of the isomorphism identity for `F(x) = prod_j x_j` over the
/// listed factors (repeat a measure for higher powers):
/// `E Q^rho_phi(F(psi(nu) + L^nu)) = (1/alpha) E(theta^{rho,phi} F(psi(nu)))`.
/// The left side expands the product over subsets, with `psi` and the loop
/// independent; the right side is a Poisson mixed moment.
pub fn isomorphism_sides(
    lhs_kernel: &PotentialKernel,
    rhs_kernel: &PotentialKernel,
    alpha: f64,
    rho: &Measure,
    phi: &Measure,
    factors: &[Measure],
) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if !rho.is_nonnegative() || !phi.is_nonnegative() {
        return Err(Error::Invalid("rho and phi must be non-negative".into()));
    }
    let k = factors.len();
    check_order(k + 2)?;
    let mut lhs = 0.0;
    for s in 0usize..(1 << k) {
        let field: Vec<Measure> = (0..k).filter(|j| s & (1 << j) != 0).map(|j| factors[j].clone()).collect();
        let looped: Vec<Measure> = (0..k).filter(|j| s & (1 << j) == 0).map(|j| factors[j].clone()).collect();
        let e_field = if field.is_empty() { 1.0 } else { alpha_permanental_moment(lhs_kernel, alpha, &field)? };
        if e_field == 0.0 {
            continue;
        }
        lhs += e_field * q_rho_phi_moment(lhs_kernel, rho, phi, &looped)?;
    }
    let mut groups = vec![Group::raw(vec![rho.clone(), phi.clone()])];
    groups.extend(factors.iter().cloned().map(Group::centered));
    let rhs = poisson_mixed_moment(rhs_kernel, alpha, &groups)? / alpha;
    Ok((lhs, rhs))
}

pub fn isomorphism_check_i(u: &PotentialKernel, alpha: f64, rho: &Measure, phi: &Measure, factors: &[Measure]) -> Result<MomentReport> {
    let (lhs, rhs) = isomorphism_sides(u, u, alpha, rho, phi, factors)?;
    let spec = serde_json::json!({
        "identity": "isomorphism_i",
        "alpha": alpha,
        "degree": factors.len(),
        "rho": rho.weights(),
        "phi": phi.weights(),
        "factors": factors.iter().map(|f| f.weights().to_vec()).collect::<Vec<_>>(),
    });
    Ok(MomentReport::new(lhs, rhs, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::markov::potential_kernel;

    #[test]
    fn two_state_values() {
        let u = potential_kernel(&fixtures::k2()).unwrap();
        let a = Measure::atom(2, 0);
        assert!((mu_moment(&u, &[a.clone()]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((alpha_permanental_moment(&u, 1.0, &[a.clone(), a.clone()]).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert!((mu_moment(&u, &[a.clone(), a.clone()]).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        let q = q_rho_phi_moment(&u, &a, &a, &[a.clone()]).unwrap();
        assert!((q - 16.0 / 27.0).abs() < 1e-15);
        assert!((qxy_moment(&u, 0, 1, &[]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn set_partitions_are_bell_numbers() {
        for (n, bell) in [(0, 1), (1, 1), (3, 5), (5, 52), (7, 877)] {
            let mut c = 0;
            for_each_set_partition(n, |_, _| c += 1);
            assert_eq!(c, bell);
        }
    }

    #[test]
    fn single_centered_group_has_zero_mean() {
        let u = potential_kernel(&fixtures::k4()).unwrap();
        let nu = Measure::new(vec![0.2, -0.4, 1.0, 0.3]).unwrap();
        let v = poisson_mixed_moment(&u, 0.7, &[Group::centered(nu)]).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn order_cap() {
        let u = potential_kernel(&fixtures::k2()).unwrap();
        let r = alpha_permanental_moment(&u, 1.0, &vec![Measure::atom(2, 0); 11]);
        assert!(matches!(r, Err(Error::OrderTooLarge { .. })));
    }
}
