//! Adaptive Gauss-Kronrod (7/15) quadrature for vector-valued integrands.

use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tol {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel, max_intervals: 4000 }
    }
}

impl Default for Tol {
    fn default() -> Self {
        Self::new(1e-14, 1e-11)
    }
}

struct Piece {
    a: f64,
    b: f64,
    val: Vec<f64>,
    err: f64,
}

fn kronrod<F: FnMut(f64) -> Vec<f64>>(f: &mut F, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let dim = fc.len();
    let mut gk: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut g: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        for i in 0..dim {
            let s = f1[i] + f2[i];
            gk[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..dim {
        gk[i] *= h;
        g[i] *= h;
        err = err.max((gk[i] - g[i]).abs());
    }
    Piece { a, b, val: gk, err }
}

/// Integrates `f` over `[a, b]`, bisecting the worst interval until the
/// summed error estimate meets `tol` in the max norm.
pub fn integrate<F: FnMut(f64) -> Vec<f64>>(mut f: F, a: f64, b: f64, tol: Tol) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::QuadratureFailure(format!("bad interval [{a}, {b}]")));
    }
    if a == b {
        let dim = f(a).len();
        return Ok(vec![0.0; dim]);
    }
    let mut pieces = vec![kronrod(&mut f, a, b)];
    loop {
        let dim = pieces[0].val.len();
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for p in &pieces {
            for i in 0..dim {
                total[i] += p.val[i];
            }
            err += p.err;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= tol.abs.max(tol.rel * scale) {
            return Ok(total);
        }
        if pieces.len() >= tol.max_intervals {
            return Err(Error::QuadratureFailure(format!(
                "error estimate {err:.3e} after {} intervals",
                pieces.len()
            )));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, be), (i, p)| if p.err > be { (i, p.err) } else { (bi, be) });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            return Err(Error::QuadratureFailure("interval collapsed".into()));
        }
        pieces.push(kronrod(&mut f, p.a, mid));
        pieces.push(kronrod(&mut f, mid, p.b));
    }
}

/// Integrates over `[a, inf)` through `t = a + s / (1 - s)`.
pub fn integrate_to_inf<F: FnMut(f64) -> Vec<f64>>(mut f: F, a: f64, tol: Tol) -> Result<Vec<f64>> {
    integrate(
        |s| {
            let one = 1.0 - s;
            let jac = 1.0 / (one * one);
            let mut v = f(a + s / one);
            for x in v.iter_mut() {
                *x *= jac;
            }
            v
        },
        0.0,
        1.0,
        tol,
    )
}

pub fn integrate_scalar<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> Result<f64> {
    Ok(integrate(|x| vec![f(x)], a, b, tol)?[0])
}
