//! Majorizing-measure functional and the exponential Orlicz norm.

use crate::{Error, Result};

/// `J(a) = sup_x int_0^a log(1 / mu(B(x, r))) dr` over closed balls. The
/// integrand is piecewise constant between sorted distances from `x`, so the
/// integral is exact.
pub fn j_functional(dist: &[Vec<f64>], mu: &[f64], a: f64) -> Result<f64> {
    let n = dist.len();
    if mu.len() != n || dist.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("distance matrix and weights disagree".into()));
    }
    check_metric(dist)?;
    let total: f64 = mu.iter().sum();
    if mu.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotProbability(format!("total mass {total}")));
    }
    if !(a >= 0.0) {
        return Err(Error::Invalid(format!("integration limit {a}")));
    }
    let mut best: f64 = 0.0;
    for x in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| dist[x][*a].partial_cmp(&dist[x][*b]).unwrap());
        let mut mass = 0.0;
        let mut value = 0.0;
        let mut i = 0;
        while i < n {
            let r = dist[x][order[i]];
            while i < n && dist[x][order[i]] == r {
                mass += mu[order[i]];
                i += 1;
            }
            if r >= a {
                break;
            }
            let next = if i < n { dist[x][order[i]].min(a) } else { a };
            if next > r && mass < 1.0 {
                if mass <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                value += (next - r) * (1.0 / mass).ln();
            }
        }
        best = best.max(value);
    }
    Ok(best)
}

fn check_metric(dist: &[Vec<f64>]) -> Result<()> {
    let n = dist.len();
    let tol = 1e-12 * dist.iter().flatten().cloned().fold(1.0, f64::max);
    for x in 0..n {
        if dist[x][x].abs() > tol {
            return Err(Error::NotAMetric(format!("d({x},{x}) = {}", dist[x][x])));
        }
        for y in 0..n {
            let v = dist[x][y];
            if !v.is_finite() || v < 0.0 || (v - dist[y][x]).abs() > tol {
                return Err(Error::NotAMetric(format!("d({x},{y}) = {v}")));
            }
            for z in 0..n {
                if v > dist[x][z] + dist[z][y] + tol {
                    return Err(Error::NotAMetric(format!("triangle fails at ({x},{z},{y})")));
                }
            }
        }
    }
    Ok(())
}

/// Empirical `||X||_{psi_1} = inf{c > 0 : E[e^{|X|/c} - 1] <= 1}`.
pub fn orlicz_norm(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    let a: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite sample".into()));
    }
    let amax = a.iter().cloned().fold(0.0, f64::max);
    if amax == 0.0 {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    // mean(e^{a/c}) - 2, evaluated in log space.
    let excess = |c: f64| {
        let lse = amax / c + a.iter().map(|v| ((v - amax) / c).exp()).sum::<f64>().ln() - n.ln();
        lse - 2f64.ln()
    };
    let mut lo = amax / 700.0;
    let mut hi = amax / 2f64.ln();
    if excess(lo) <= 0.0 {
        return Err(Error::HeavyTail(lo));
    }
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_variable() {
        let c = orlicz_norm(&[3.0; 10]).unwrap();
        assert!((c - 3.0 / 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_point_space() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        for a in [0.3, 1.0, 4.0] {
            let j = j_functional(&d, &[0.5, 0.5], a).unwrap();
            assert_eq!(j, a.min(1.0) * 2f64.ln());
        }
        assert_eq!(j_functional(&d, &[1.0, 0.0], 2.0).unwrap(), f64::INFINITY);
        assert_eq!(j_functional(&[vec![0.0]], &[1.0], 5.0).unwrap(), 0.0);
        let bad = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(matches!(j_functional(&bad, &[0.5, 0.5], 1.0), Err(Error::NotAMetric(_))));
        assert!(matches!(j_functional(&d, &[0.6, 0.6], 1.0), Err(Error::NotProbability(_))));
    }
}
