mod common;

use common::{all_perms, brute_alpha_perm};
use nalgebra::DMatrix;
use permfield::fixtures;
use permfield::loops::truncated_loop_moments;
use permfield::markov::{potential_kernel, PotentialKernel};
use permfield::measure::Measure;
use permfield::moments::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_measure(rng: &mut ChaCha8Rng, n: usize, signed: bool) -> Measure {
    let lo = if signed { -1.0 } else { 0.0 };
    Measure::new((0..n).map(|_| rng.random_range(lo..1.0)).collect()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn alpha_permanental_matches_brute_force() {
    let u = potential_kernel(&fixtures::k4()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 2..=4 {
        for &alpha in &[0.5, 1.0, 2.5] {
            let nus: Vec<Measure> = (0..n).map(|_| random_measure(&mut rng, 4, true)).collect();
            let a = alpha_permanental_moment(&u, alpha, &nus).unwrap();
            let b = brute_alpha_perm(&u, alpha, &nus);
            assert!(rel(a, b) <= 1e-12, "n={n} alpha={alpha}: {a} vs {b}");
        }
    }
}

#[test]
fn mu_moment_routes_agree() {
    let u = potential_kernel(&fixtures::k4()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 1..=6 {
        let nu = random_measure(&mut rng, 4, true);
        let b = weighted_kernel(&u, &nu);
        let fact: f64 = (1..k).map(|i| i as f64).product();
        let want = fact * b.pow(k as u32).trace();
        let got = mu_moment(&u, &vec![nu.clone(); k]).unwrap();
        assert!(rel(got, want) <= 1e-12, "k={k}");

        let nus: Vec<Measure> = (0..k).map(|_| random_measure(&mut rng, 4, true)).collect();
        let brute: f64 = all_perms(k)
            .iter()
            .map(|p| {
                let ms: Vec<Measure> = p.iter().map(|i| nus[*i].clone()).collect();
                cyclic_integral(&u, &ms).unwrap()
            })
            .sum::<f64>()
            / k as f64;
        let a = mu_moment(&u, &nus).unwrap();
        let c = mu_moment_anchored(&u, &nus).unwrap();
        assert!(rel(a, brute) <= 1e-12 && rel(c, brute) <= 1e-12, "k={k}: {a} {c} {brute}");
    }
}

#[test]
fn qxy_trace_against_rho_is_mu() {
    let u = potential_kernel(&fixtures::k4()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for k in 0..=4 {
        let nus: Vec<Measure> = (0..k).map(|_| random_measure(&mut rng, 4, false)).collect();
        let rho = random_measure(&mut rng, 4, false);
        let lhs: f64 = (0..4).map(|x| qxy_moment(&u, x, x, &nus).unwrap() * rho.get(x)).sum();
        let mut all = nus.clone();
        all.push(rho);
        assert!(rel(lhs, mu_moment(&u, &all).unwrap()) <= 1e-12);
    }
}

#[test]
fn qxy_first_moment_is_a_kernel_product() {
    let u = potential_kernel(&fixtures::k2()).unwrap();
    let nu = Measure::new(vec![0.5, 2.0]).unwrap();
    let m = u.matrix();
    let want = (m * DMatrix::from_diagonal(&nu.as_dvector()) * m)[(0, 1)];
    assert!(rel(qxy_moment(&u, 0, 1, &[nu]).unwrap(), want) < 1e-14);
}

fn poisson_oracle(u: &PotentialKernel, alpha: f64, groups: &[Group]) -> f64 {
    // Cumulant form: singleton blocks of centered groups vanish.
    let mut total = 0.0;
    for_each_set_partition(groups.len(), |labels, blocks| {
        let mut term = 1.0;
        for b in 0..blocks {
            let members: Vec<usize> = (0..groups.len()).filter(|i| labels[*i] == b).collect();
            if members.len() == 1 && groups[members[0]].centered {
                term = 0.0;
                break;
            }
            let ms: Vec<Measure> = members.iter().flat_map(|i| groups[*i].measures.clone()).collect();
            term *= alpha * mu_moment(u, &ms).unwrap();
        }
        total += term;
    });
    total
}

#[test]
fn poisson_mixed_matches_cumulant_form() {
    let u = potential_kernel(&fixtures::k4()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for trial in 0..6 {
        let alpha = 0.3 + trial as f64 * 0.4;
        let mut groups = vec![Group::raw(vec![random_measure(&mut rng, 4, false), random_measure(&mut rng, 4, false)])];
        for _ in 0..(trial % 4 + 1) {
            groups.push(Group::centered(random_measure(&mut rng, 4, true)));
        }
        if trial % 2 == 0 {
            groups.push(Group::raw(vec![random_measure(&mut rng, 4, false)]));
        }
        let a = poisson_mixed_moment(&u, alpha, &groups).unwrap();
        let b = poisson_oracle(&u, alpha, &groups);
        assert!(rel(a, b) <= 1e-11, "{a} {b}");
    }
}

#[test]
fn centered_poisson_moments_are_permanental() {
    let u = potential_kernel(&fixtures::k4()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for n in 2..=5 {
        let nus: Vec<Measure> = (0..n).map(|_| random_measure(&mut rng, 4, true)).collect();
        let groups: Vec<Group> = nus.iter().cloned().map(Group::centered).collect();
        let a = poisson_mixed_moment(&u, 1.7, &groups).unwrap();
        let b = alpha_permanental_moment(&u, 1.7, &nus).unwrap();
        assert!(rel(a, b) <= 1e-11, "n={n}");
    }
}

#[test]
fn permanental_process_two_points() {
    let u = potential_kernel(&fixtures::k2()).unwrap();
    // alpha^2 u(a,a) u(b,b) + alpha u(a,b) u(b,a)
    let v = permanental_process_moment(&u, 2.0, &[0, 1]).unwrap();
    assert!(rel(v, 4.0 * 4.0 / 9.0 + 2.0 / 9.0) < 1e-14);
    // Atom measures reduce the field to the process.
    let a = Measure::atom(2, 0);
    let b = Measure::atom(2, 1);
    let raw = poisson_mixed_moment(&u, 2.0, &[Group::raw(vec![a]), Group::raw(vec![b])]).unwrap();
    assert!(rel(raw, v) < 1e-14);
}

#[test]
fn untruncated_loop_moments_match_kernel_formula() {
    let model = fixtures::k4();
    let u = potential_kernel(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let nus: Vec<Measure> = (0..3).map(|_| random_measure(&mut rng, 4, false)).collect();
    let v = truncated_loop_moments(&model, &nus, 0.0).unwrap();
    for mask in 1usize..8 {
        let ms: Vec<Measure> = (0..3).filter(|j| mask & (1 << j) != 0).map(|j| nus[j].clone()).collect();
        let want = mu_moment(&u, &ms).unwrap();
        assert!(rel(v[mask], want) < 1e-8, "mask {mask}: {} vs {want}", v[mask]);
    }
    let small = truncated_loop_moments(&model, &nus, 1e-3).unwrap();
    let big = truncated_loop_moments(&model, &nus, 0.5).unwrap();
    for mask in 1usize..8 {
        assert!(big[mask] < small[mask] && small[mask] < v[mask] * (1.0 + 1e-9), "{} {} {}", big[mask], small[mask], v[mask]);
    }
}

#[test]
fn isomorphism_closed_form_two_states() {
    let u = potential_kernel(&fixtures::k2()).unwrap();
    let a = Measure::atom(2, 0);
    let r = isomorphism_check_i(&u, 1.0, &a, &a, &[]).unwrap();
    assert!((r.lhs - 4.0 / 9.0).abs() < 1e-15 && r.passes(1e-12));
    for deg in 1..=4 {
        let r = isomorphism_check_i(&u, 0.8, &a, &Measure::atom(2, 1), &vec![Measure::new(vec![0.3, 0.9]).unwrap(); deg]).unwrap();
        assert!(r.rel_diff <= 1e-12, "deg {deg}: {r:?}");
    }
}
