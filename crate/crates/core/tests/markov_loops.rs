use permfield::fixtures;
use permfield::loops::{bridge_moment, loop_measure_mass, occupation_field, LoopSampler};
use permfield::markov::{log_bridge_density, potential_kernel, sample_bridge, sample_path, transition_density};
use permfield::mc::{mean_se, par_samples, stream_rng};
use permfield::measure::{caf_at, caf_total, occupation_times, verify_revuz, Measure};
use permfield::quad::{integrate, Tol};
use statrs::distribution::{ChiSquared, ContinuousCDF, Exp};

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn first_holding_time_is_exponential() {
    let model = fixtures::k4();
    let x = 2;
    let rate = model.exit_rate(x);
    let hold: Vec<f64> = par_samples(1, 20000, |_, rng| sample_path(&model, x, rng).unwrap().holding[0]);
    let law = Exp::new(rate).unwrap();
    let d = ks_statistic(hold, |t| law.cdf(t));
    // 0.1% asymptotic critical value.
    assert!(d < 1.95 / (20000f64).sqrt(), "KS {d}");
}

#[test]
fn first_jump_destination_frequencies() {
    let model = fixtures::k4();
    let x = 0;
    let n = model.len();
    let dest: Vec<Option<usize>> = par_samples(2, 40000, |_, rng| {
        let p = sample_path(&model, x, rng).unwrap();
        p.states.get(1).copied()
    });
    let mut obs = vec![0.0; n + 1];
    for d in dest {
        match d {
            Some(y) => obs[y] += 1.0,
            None => obs[n] += 1.0,
        }
    }
    let total = model.exit_rate(x);
    let mut exp: Vec<f64> = (0..n).map(|y| model.rates()[(x, y)] / total * 40000.0).collect();
    exp.push(model.kill()[x] / total * 40000.0);
    obs.remove(x);
    exp.remove(x);
    assert!(chi_square_p(&obs, &exp) > 1e-3);
}

#[test]
fn transition_density_is_symmetric_for_symmetric_chains() {
    let model = fixtures::k2();
    let p = transition_density(&model, 0.7).unwrap();
    assert!((p[(0, 1)] - p[(1, 0)]).abs() < 1e-15);
    for (x, y) in [(0, 0), (0, 1)] {
        assert!((log_bridge_density(&model, x, y, 0.7) - p[(x, y)].ln()).abs() < 1e-12);
    }
    let model = fixtures::cycle3();
    let p = transition_density(&model, 1.3).unwrap();
    for x in 0..3 {
        for y in 0..3 {
            assert!((log_bridge_density(&model, x, y, 1.3) - p[(x, y)].ln()).abs() < 1e-10);
        }
    }
}

#[test]
fn bridge_occupation_moments_match_exact_values() {
    let model = fixtures::k4();
    let nu = Measure::new(vec![0.4, 1.0, 0.0, 0.7]).unwrap();
    let (x, y, t) = (1, 3, 1.6);
    let mass = bridge_moment(&model, x, y, t, &[]).unwrap();
    assert!((mass - transition_density(&model, t).unwrap()[(x, y)]).abs() < 1e-13);
    let first = bridge_moment(&model, x, y, t, &[nu.clone()]).unwrap() / mass;
    // Two copies of the same measure count both orderings: E (L^nu)^2.
    let second = bridge_moment(&model, x, y, t, &[nu.clone(), nu.clone()]).unwrap() / mass;
    let vals: Vec<(f64, f64, usize)> = par_samples(3, 40000, |_, rng| {
        let p = sample_bridge(&model, x, y, t, rng).unwrap();
        let l = caf_total(&p, &nu, model.m()).unwrap();
        (l, l * l, *p.states.last().unwrap())
    });
    assert!(vals.iter().all(|v| v.2 == y));
    let l1 = mean_se(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
    let l2 = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
    assert!(l1.z(first).abs() < 4.0, "{l1:?} vs {first}");
    assert!(l2.z(second).abs() < 4.0, "{l2:?} vs {second}");
}

#[test]
fn loop_lifetime_law_matches_loop_measure() {
    let model = fixtures::k4();
    let delta = 0.05;
    let sampler = LoopSampler::new(&model, delta).unwrap();
    let mass = sampler.mass();
    for t in [0.1, 0.5, 2.0, 8.0] {
        let part = integrate(|s| vec![(model.generator() * s).exp().trace() / s], delta, t, Tol::new(1e-14, 1e-12)).unwrap()[0];
        assert!((sampler.lifetime_cdf(t) - part / mass).abs() < 1e-6, "t = {t}");
    }
    let mut rng = stream_rng(4, 0);
    let xs: Vec<f64> = (0..20000).map(|_| sampler.sample_lifetime(&mut rng)).collect();
    assert!(xs.iter().all(|t| *t > delta));
    let d = ks_statistic(xs, |t| sampler.lifetime_cdf(t));
    assert!(d < 1.95 / (20000f64).sqrt(), "KS {d}");
}

#[test]
fn loop_roots_follow_diagonal_weights() {
    let model = fixtures::cycle3();
    let delta = 0.1;
    let sampler = LoopSampler::new(&model, delta).unwrap();
    let n = model.len();
    let weights = permfield::quad::integrate_to_inf(
        |s| {
            let p = (model.generator() * s).exp();
            (0..n).map(|x| p[(x, x)] / s).collect()
        },
        delta,
        Tol::default(),
    )
    .unwrap();
    let total: f64 = weights.iter().sum();
    assert!((total - loop_measure_mass(&model, delta).unwrap()).abs() < 1e-9 * total);
    let roots: Vec<usize> = par_samples(5, 30000, |_, rng| sampler.sample_loop(rng).unwrap().start());
    let mut obs = vec![0.0; n];
    for r in roots {
        obs[r] += 1.0;
    }
    let exp: Vec<f64> = weights.iter().map(|w| w / total * 30000.0).collect();
    assert!(chi_square_p(&obs, &exp) > 1e-3, "{obs:?} {exp:?}");
}

#[test]
fn loops_are_closed_and_soups_count_loops() {
    let model = fixtures::k2();
    let sampler = LoopSampler::new(&model, 0.1).unwrap();
    let counts: Vec<f64> = par_samples(6, 20000, |_, rng| {
        let s = sampler.sample_soup(1.5, rng).unwrap();
        for l in &s.loops {
            assert_eq!(l.start(), *l.states.last().unwrap());
            assert!(l.lifetime() > 0.1);
        }
        s.len() as f64
    });
    let st = mean_se(&counts);
    assert!(st.z(1.5 * sampler.mass()).abs() < 4.0);
}

#[test]
fn centered_field_has_mean_zero() {
    let model = fixtures::k4();
    let nu = Measure::new(vec![1.0, -0.5, 0.2, 0.0]).unwrap();
    let delta = 0.2;
    let c = permfield::loops::centering_term(&model, &nu, delta).unwrap();
    let sampler = LoopSampler::new(&model, delta).unwrap();
    let vals: Vec<f64> = par_samples(7, 20000, |_, rng| occupation_field(&model, &sampler.sample_soup(1.0, rng).unwrap(), &nu, c).unwrap());
    assert!(mean_se(&vals).z(0.0).abs() < 4.0);
}

#[test]
fn caf_is_linear_and_monotone_along_a_path() {
    let model = fixtures::k4();
    let p = sample_path(&model, 0, &mut stream_rng(8, 0)).unwrap();
    let a = Measure::new(vec![0.3, 0.0, 1.0, 0.5]).unwrap();
    let b = Measure::new(vec![0.0, 2.0, 0.1, 0.0]).unwrap();
    let m = model.m();
    let sum = caf_total(&p, &a.add(&b.scale(2.0)), m).unwrap();
    assert!((sum - caf_total(&p, &a, m).unwrap() - 2.0 * caf_total(&p, &b, m).unwrap()).abs() < 1e-12);
    let mut last = 0.0;
    for i in 0..50 {
        let v = caf_at(&p, &a, m, i as f64 * 0.05).unwrap();
        assert!(v >= last);
        last = v;
    }
    assert_eq!(caf_at(&p, &a, m, 0.0).unwrap(), 0.0);
    assert!((caf_at(&p, &a, m, 1e9).unwrap() - caf_total(&p, &a, m).unwrap()).abs() < 1e-12);
    let occ = occupation_times(&p, 4);
    assert!((occ.iter().sum::<f64>() - p.lifetime()).abs() < 1e-12);
}

#[test]
fn revuz_identity_on_cycle() {
    let model = fixtures::cycle3();
    let nu = Measure::new(vec![0.5, 1.0, 0.25]).unwrap();
    let r = verify_revuz(&model, 0, &nu, 20000, 9).unwrap();
    assert!(r.pass, "{r:?}");
    let u = potential_kernel(&model).unwrap();
    assert!((r.exact - (0..3).map(|y| u.get(0, y) * nu.get(y)).sum::<f64>()).abs() < 1e-15);
}
