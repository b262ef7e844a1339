//! Monte Carlo checks of soup statistics against the exact engines.

use serde::{Deserialize, Serialize};

use crate::lattice::LatticeKernel;
use crate::loops::{centering_term, occupation_field, theta, truncated_loop_moments, LoopSampler};
use crate::markov::{potential_kernel, sample_path, MarkovModel, Path, PotentialKernel};
use crate::mc::{mean_se, par_samples};
use crate::measure::Measure;
use crate::moments::{alpha_permanental_moment, isomorphism_sides, poisson_mixed_by, Group};
use crate::{Error, Result};

pub const Z_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub delta: Option<f64>,
    pub exact: f64,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

impl Check {
    fn new(label: String, delta: Option<f64>, exact: f64, values: &[f64]) -> Self {
        let s = mean_se(values);
        let z = s.z(exact);
        Self { label, delta, exact, estimate: s.mean, se: s.se, z, pass: z.abs() <= Z_THRESHOLD }
    }
}

/// Limit value against the truncated exact value at each cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTrace {
    pub label: String,
    pub limit: f64,
    /// `(delta, exact |limit - truncated|, empirical |limit - estimate|)`.
    pub bias: Vec<(f64, f64, f64)>,
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub alpha: f64,
    pub seed: u64,
    pub samples: usize,
    pub delta_schedule: Vec<f64>,
    pub checks: Vec<Check>,
    pub bias: Vec<BiasTrace>,
    pub pass: bool,
}

impl VerificationReport {
    fn finish(mut self) -> Self {
        self.pass = self.checks.iter().all(|c| c.pass) && self.bias.iter().all(|b| b.monotone);
        self
    }

    /// Rows `(label, delta, exact, estimate, se, z)` for CSV output.
    pub fn csv(&self) -> String {
        let mut out = String::from("label,delta,exact,estimate,se,z,pass\n");
        for c in &self.checks {
            let d = c.delta.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{},{}\n", c.label, d, c.exact, c.estimate, c.se, c.z, c.pass));
        }
        out
    }
}

/// Exact `E prod_g X_g` for the soup truncated to lifetimes above `delta`.
pub fn truncated_mixed_moment(model: &MarkovModel, alpha: f64, groups: &[Group], delta: f64) -> Result<f64> {
    let flat: Vec<Measure> = groups.iter().flat_map(|g| g.measures.iter().cloned()).collect();
    let mut offsets = Vec::with_capacity(groups.len());
    let mut acc = 0;
    for g in groups {
        offsets.push((acc, g.measures.len()));
        acc += g.measures.len();
    }
    let table = truncated_loop_moments(model, &flat, delta)?;
    poisson_mixed_by(alpha, groups, |mask| {
        let mut fm = 0usize;
        for (i, (off, len)) in offsets.iter().enumerate() {
            if mask & (1 << i) != 0 {
                fm |= ((1usize << len) - 1) << off;
            }
        }
        Ok(table[fm])
    })
}

fn tuple_label(tuple: &[usize]) -> String {
    format!("psi[{}]", tuple.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
}

/// Mixed moments `E prod_j psi_delta(nu_{t_j})` for each index tuple `t`
/// (order at most 4), estimated from `soups` soups at every cutoff in the
/// schedule. Each estimate is compared with the truncated exact value and,
/// at the finest cutoff, with the permanental limit; the exact bias must
/// shrink along the schedule. Loop counts are checked against
/// `alpha * mass(delta)`.
pub fn verify_permanental_moments(
    model: &MarkovModel,
    alpha: f64,
    measures: &[Measure],
    tuples: &[Vec<usize>],
    soups: usize,
    deltas: &[f64],
    seed: u64,
) -> Result<VerificationReport> {
    if soups < 2 {
        return Err(Error::Invalid("need at least two soups".into()));
    }
    if deltas.is_empty() {
        return Err(Error::Invalid("empty cutoff schedule".into()));
    }
    for t in tuples {
        if t.is_empty() || t.len() > 4 || t.iter().any(|i| *i >= measures.len()) {
            return Err(Error::Invalid(format!("bad moment tuple {t:?}")));
        }
    }
    let u = potential_kernel(model)?;
    let limits: Vec<f64> = tuples
        .iter()
        .map(|t| {
            let ms: Vec<Measure> = t.iter().map(|i| measures[*i].clone()).collect();
            alpha_permanental_moment(&u, alpha, &ms)
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    let mut traces: Vec<BiasTrace> = tuples
        .iter()
        .zip(&limits)
        .map(|(t, l)| BiasTrace { label: tuple_label(t), limit: *l, bias: Vec::new(), monotone: true })
        .collect();
    for (di, &delta) in deltas.iter().enumerate() {
        let sampler = LoopSampler::new(model, delta)?;
        let centers: Vec<f64> = measures.iter().map(|nu| centering_term(model, nu, delta)).collect::<Result<_>>()?;
        let stream_seed = seed.wrapping_add(di as u64 * 0x9E37_79B9);
        let draws: Vec<Result<(usize, Vec<f64>)>> = par_samples(stream_seed, soups, |_, rng| {
            let soup = sampler.sample_soup(alpha, rng)?;
            let psi = measures.iter().zip(&centers).map(|(nu, c)| occupation_field(model, &soup, nu, *c)).collect::<Result<_>>()?;
            Ok((soup.len(), psi))
        });
        let draws: Vec<(usize, Vec<f64>)> = draws.into_iter().collect::<Result<_>>()?;
        let counts: Vec<f64> = draws.iter().map(|d| d.0 as f64).collect();
        checks.push(Check::new("loop_count".into(), Some(delta), alpha * sampler.mass(), &counts));
        for (ti, t) in tuples.iter().enumerate() {
            let vals: Vec<f64> = draws.iter().map(|d| t.iter().map(|i| d.1[*i]).product()).collect();
            let groups: Vec<Group> = t.iter().map(|i| Group::centered(measures[*i].clone())).collect();
            let exact = truncated_mixed_moment(model, alpha, &groups, delta)?;
            let c = Check::new(tuple_label(t), Some(delta), exact, &vals);
            traces[ti].bias.push((delta, (limits[ti] - exact).abs(), (limits[ti] - c.estimate).abs()));
            checks.push(c);
            if di == deltas.len() - 1 {
                checks.push(Check::new(format!("{}_limit", tuple_label(t)), Some(delta), limits[ti], &vals));
            }
        }
    }
    for tr in traces.iter_mut() {
        // Rounding-level differences count as ties.
        let floor = 1e-12 * tr.limit.abs().max(1.0);
        tr.monotone = tr.bias.windows(2).all(|w| w[1].1 <= w[0].1 + floor);
    }
    let report = VerificationReport {
        name: "permanental_moments".into(),
        alpha,
        seed,
        samples: soups,
        delta_schedule: deltas.to_vec(),
        checks,
        bias: traces,
        pass: false,
    };
    Ok(report.finish())
}

/// Estimates `(1/alpha) E(theta^{rho,phi} prod_j psi_delta(nu_j))` from
/// sampled soups and compares it with the closed-form left side of the
/// isomorphism identity (and with the exact truncated right side).
/// `lhs_kernel` overrides the kernel used for the closed form.
#[allow(clippy::too_many_arguments)]
pub fn verify_isomorphism_mc(
    model: &MarkovModel,
    alpha: f64,
    rho: &Measure,
    phi: &Measure,
    factors: &[Measure],
    delta: f64,
    soups: usize,
    seed: u64,
    lhs_kernel: Option<&PotentialKernel>,
) -> Result<VerificationReport> {
    if soups < 2 {
        return Err(Error::Invalid("need at least two soups".into()));
    }
    if factors.len() > 2 {
        return Err(Error::OrderTooLarge { order: factors.len(), max: 2 });
    }
    let u = potential_kernel(model)?;
    let (lhs, _) = isomorphism_sides(lhs_kernel.unwrap_or(&u), &u, alpha, rho, phi, factors)?;
    let mut groups = vec![Group::raw(vec![rho.clone(), phi.clone()])];
    groups.extend(factors.iter().cloned().map(Group::centered));
    let truncated = truncated_mixed_moment(model, alpha, &groups, delta)? / alpha;
    let sampler = LoopSampler::new(model, delta)?;
    let centers: Vec<f64> = factors.iter().map(|nu| centering_term(model, nu, delta)).collect::<Result<_>>()?;
    let vals: Vec<Result<f64>> = par_samples(seed, soups, |_, rng| {
        let soup = sampler.sample_soup(alpha, rng)?;
        let mut v = theta(model, &soup, rho, phi)? / alpha;
        for (nu, c) in factors.iter().zip(&centers) {
            v *= occupation_field(model, &soup, nu, *c)?;
        }
        Ok(v)
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let deg = factors.len();
    let checks = vec![
        Check::new(format!("isomorphism_deg{deg}"), Some(delta), lhs, &vals),
        Check::new(format!("isomorphism_deg{deg}_truncated"), Some(delta), truncated, &vals),
    ];
    let report = VerificationReport {
        name: "isomorphism_mc".into(),
        alpha,
        seed,
        samples: soups,
        delta_schedule: vec![delta],
        checks,
        bias: Vec::new(),
        pass: false,
    };
    Ok(report.finish())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CafDemoRow {
    pub t: f64,
    pub delta: f64,
    pub omega: f64,
    /// Mean and max over paths of `max_{|x-y| <= delta} |L^{nu_x}_t - L^{nu_y}_t|`.
    pub mean_oscillation: f64,
    pub max_oscillation: f64,
    pub ratio: f64,
}

/// Diagnostic only: oscillation of `x -> L^{nu_x}_t` over translates along
/// the first axis, next to `omega(delta)` of the lattice kernel. Nothing is
/// asserted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CafDemoReport {
    pub diagnostic: bool,
    pub paths: usize,
    pub seed: u64,
    pub start: usize,
    pub rows: Vec<CafDemoRow>,
}

fn occupation_until(path: &Path, n: usize, t: f64) -> Vec<f64> {
    let mut occ = vec![0.0; n];
    let mut clock = 0.0;
    for (s, h) in path.states.iter().zip(&path.holding) {
        let dt = h.min(t - clock);
        if dt <= 0.0 {
            break;
        }
        occ[*s] += dt;
        clock += h;
    }
    occ
}

pub fn caf_field_demo(kernel: &LatticeKernel, nu: &Measure, times: &[f64], paths: usize, seed: u64) -> Result<CafDemoReport> {
    let model = kernel.markov_model()?;
    kernel.check_measure(nu)?;
    let n = kernel.side();
    let translates: Vec<Measure> = (0..n)
        .map(|h| {
            let mut shift = vec![0; kernel.d()];
            shift[0] = h;
            kernel.translate(nu, &shift)
        })
        .collect::<Result<_>>()?;
    let mut deltas = Vec::new();
    let mut h = 1;
    while h <= n / 2 {
        deltas.push(h);
        h *= 2;
    }
    let omegas: Vec<f64> = deltas.iter().map(|h| kernel.omega_delta(nu, *h as f64 / n as f64)).collect::<Result<_>>()?;
    let start = 0;
    // osc[path][time][delta]
    let osc: Vec<Result<Vec<Vec<f64>>>> = par_samples(seed, paths, |_, rng| {
        let p = sample_path(&model, start, rng)?;
        Ok(times
            .iter()
            .map(|&t| {
                let occ = occupation_until(&p, model.len(), t);
                let field: Vec<f64> = translates.iter().map(|m| m.weights().iter().zip(&occ).map(|(a, b)| a * b).sum()).collect();
                deltas
                    .iter()
                    .map(|&h| {
                        let mut best: f64 = 0.0;
                        for x in 0..n {
                            for s in 1..=h {
                                best = best.max((field[x] - field[(x + s) % n]).abs());
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect())
    });
    let osc: Vec<Vec<Vec<f64>>> = osc.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for (di, &h) in deltas.iter().enumerate() {
            let vals: Vec<f64> = osc.iter().map(|o| o[ti][di]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let max = vals.iter().cloned().fold(0.0, f64::max);
            let omega = omegas[di];
            let ratio = if omega > 0.0 { max / omega } else { 0.0 };
            rows.push(CafDemoRow { t, delta: h as f64 / n as f64, omega, mean_oscillation: mean, max_oscillation: max, ratio });
        }
    }
    Ok(CafDemoReport { diagnostic: true, paths, seed, start, rows })
}
