use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::{normalize, CostSpec, Grid};
use crate::kernel::{build_kernel, Direction, Kernel};

fn line_kernel(n: usize, gamma: f64) -> Kernel {
    build_kernel(&CostSpec::squared_euclidean(Grid::line(n).unwrap()), gamma).unwrap()
}

fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    normalize((0..n).map(|_| rng.random_range(0.05..1.0)).collect(), None).unwrap()
}

fn dirac_pair(n: usize, at: [usize; 2], jitter: Option<f64>) -> Dictionary {
    let atoms = at
        .iter()
        .map(|&i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            normalize(d, jitter).unwrap()
        })
        .collect();
    Dictionary::new(atoms).unwrap()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn gaussian(n: usize, mean: f64, sigma: f64) -> Vec<f64> {
    let raw = (0..n).map(|i| (-(i as f64 - mean).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    normalize(raw, Some(1e-9)).unwrap()
}

#[test]
fn one_hot_weights_keep_b_at_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = line_kernel(12, 3.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 12), random_hist(&mut rng, 12)]).unwrap();
    let w = [0.0, 1.0];
    let trace = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 7)).unwrap();
    let kb = k.apply(&vec![1.0; 12], Direction::Forward).unwrap();
    let a: Vec<f64> = dict.atom(1).iter().zip(&kb).map(|(d, k)| d / k).collect();
    let expect = k.apply(&a, Direction::Transpose).unwrap();
    for (p, e) in trace.barycenter.iter().zip(&expect) {
        assert!((p - e).abs() <= 1e-14 * e.abs());
    }
    for b in &trace.b_history {
        assert!(b[1].iter().all(|&x| (x - 1.0).abs() < 1e-14));
    }
}

#[test]
fn one_hot_log_domain_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = line_kernel(10, 2.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 10), random_hist(&mut rng, 10)]).unwrap();
    let w = [1.0, 0.0];
    let prob = BarycenterProblem::new(&dict, &w, &k, 5).with_log_domain(true);
    let trace = barycenter_log_domain(&prob).unwrap();
    let lk0 = k.log_apply(&[0.0; 10], Direction::Forward).unwrap();
    let arg: Vec<f64> = dict.atom(0).iter().zip(&lk0).map(|(d, l)| d.ln() - l).collect();
    let expect = k.log_apply(&arg, Direction::Transpose).unwrap();
    for (p, e) in trace.barycenter.iter().zip(&expect) {
        assert!((p.ln() - e).abs() < 1e-12);
    }
}

#[test]
fn permuting_atoms_and_weights_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = line_kernel(16, 2.0);
    let (d1, d2) = (random_hist(&mut rng, 16), random_hist(&mut rng, 16));
    let a = Dictionary::new(vec![d1.clone(), d2.clone()]).unwrap();
    let b = Dictionary::new(vec![d2, d1]).unwrap();
    let pa = barycenter(&BarycenterProblem::new(&a, &[0.3, 0.7], &k, 40)).unwrap();
    let pb = barycenter(&BarycenterProblem::new(&b, &[0.7, 0.3], &k, 40)).unwrap();
    assert_eq!(pa.barycenter, pb.barycenter);
}

#[test]
fn dirac_pair_midpoint_and_interpolation() {
    let k = line_kernel(41, 0.5);
    // Pure Diracs underflow the plain kernel product; a tiny jitter keeps it finite.
    let jittered = dirac_pair(41, [10, 30], Some(1e-9));
    let half = barycenter_forward(&BarycenterProblem::new(&jittered, &[0.5, 0.5], &k, 200)).unwrap();
    assert_eq!(argmax(&half.barycenter), 20);
    let quarter = barycenter_forward(&BarycenterProblem::new(&jittered, &[0.75, 0.25], &k, 200)).unwrap();
    assert!(argmax(&quarter.barycenter).abs_diff(15) <= 1);

    let pure = dirac_pair(41, [10, 30], None);
    let prob = BarycenterProblem::new(&pure, &[0.5, 0.5], &k, 200).with_log_domain(true);
    assert_eq!(argmax(&barycenter_log_domain(&prob).unwrap().barycenter), 20);
    let prob = BarycenterProblem::new(&pure, &[0.75, 0.25], &k, 200).with_log_domain(true);
    assert!(argmax(&barycenter_log_domain(&prob).unwrap().barycenter).abs_diff(15) <= 1);
}

#[test]
fn heavyball_zero_tau_is_bitwise_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = line_kernel(20, 1.5);
    let dict = Dictionary::new((0..3).map(|_| random_hist(&mut rng, 20)).collect()).unwrap();
    let w = [0.2, 0.5, 0.3];
    let plain = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 25)).unwrap();
    let generalized = generalized::generalized_forward(&BarycenterProblem::new(&dict, &w, &k, 25)).unwrap();
    assert_eq!(plain.barycenter, generalized.barycenter);
    assert_eq!(plain.b_history, generalized.b_history);
    assert_eq!(plain.phi_history, generalized.phi_history);
}

#[test]
fn heavyball_shares_the_fixed_point_and_converges_faster() {
    let k = line_kernel(41, 5.0);
    let dict = dirac_pair(41, [10, 30], Some(1e-9));
    let w = [0.5, 0.5];
    let plain = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 1000)).unwrap();
    let hb = barycenter_heavyball(&BarycenterProblem::new(&dict, &w, &k, 1000).with_tau(-0.1)).unwrap();
    let gap = plain
        .barycenter
        .iter()
        .zip(&hb.barycenter)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap < 1e-8, "gap {gap}");

    let r0 = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 50)).unwrap().last_residual();
    let r1 = barycenter_heavyball(&BarycenterProblem::new(&dict, &w, &k, 50).with_tau(-0.1))
        .unwrap()
        .last_residual();
    assert!(r1 <= r0, "tau=-0.1 residual {r1} vs plain {r0}");
}

#[test]
fn positive_tau_is_rejected() {
    let k = line_kernel(5, 1.0);
    let dict = Dictionary::new(vec![vec![0.2; 5]]).unwrap();
    let err = barycenter_heavyball(&BarycenterProblem::new(&dict, &[1.0], &k, 3).with_tau(0.5)).unwrap_err();
    assert!(matches!(err, WdlError::Parameter(_)));
}

#[test]
fn large_rho_recovers_balanced() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = line_kernel(16, 1.0);
    for _ in 0..5 {
        let dict = Dictionary::new(vec![random_hist(&mut rng, 16), random_hist(&mut rng, 16)]).unwrap();
        let t = rng.random_range(0.0..1.0);
        let w = [t, 1.0 - t];
        let bal = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 300)).unwrap();
        let unb = barycenter_unbalanced(&BarycenterProblem::new(&dict, &w, &k, 300).with_rho(1e6)).unwrap();
        let l1: f64 = bal.barycenter.iter().zip(&unb.barycenter).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-4, "L1 {l1}");
    }
}

#[test]
fn single_atom_unbalanced_mass_is_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let k = line_kernel(12, 1.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 12)]).unwrap();
    let trace = barycenter_unbalanced(&BarycenterProblem::new(&dict, &[1.0], &k, 100).with_rho(2.0)).unwrap();
    let mass: f64 = trace.barycenter.iter().sum();
    assert!(mass.is_finite() && mass > 0.0);
    assert!(trace.barycenter.iter().all(|&x| x > 0.0));
}

#[test]
fn unbalanced_keeps_the_empty_third_empty() {
    let n = 60;
    let k = line_kernel(n, 7.0);
    let dict = Dictionary::new(vec![gaussian(n, 8.0, 2.0), gaussian(n, 50.0, 2.0)]).unwrap();
    let w = [0.5, 0.5];
    let middle = |p: &[f64]| p[20..40].iter().sum::<f64>() / p.iter().sum::<f64>();
    let bal = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 100)).unwrap();
    let unb = barycenter_unbalanced(&BarycenterProblem::new(&dict, &w, &k, 100).with_rho(20.0)).unwrap();
    assert!(middle(&bal.barycenter) >= 0.01);
    assert!(middle(&unb.barycenter) < 0.01, "middle mass {}", middle(&unb.barycenter));
}

/// Random 8x8 images, the first supported on the left column and the
/// second on the right column.
fn grid_instance(gamma: f64) -> (Kernel, Dictionary) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = Grid::unit(&[8, 8]).unwrap();
    let k = build_kernel(&CostSpec::squared_euclidean(grid), gamma).unwrap();
    let mut image = |cols: std::ops::Range<usize>| {
        let raw = (0..64)
            .map(|i| if cols.contains(&(i % 8)) { rng.random_range(0.05..1.0) } else { 0.0 })
            .collect();
        normalize(raw, None).unwrap()
    };
    let dict = Dictionary::new(vec![image(0..1), image(7..8)]).unwrap();
    (k, dict)
}

#[test]
fn log_domain_matches_plain() {
    let (k, dict) = grid_instance(2.0);
    let w = [0.4, 0.6];
    let plain = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 30)).unwrap();
    let log = barycenter_log_domain(&BarycenterProblem::new(&dict, &w, &k, 30).with_log_domain(true)).unwrap();
    assert!(log.log_space);
    let err = plain
        .barycenter
        .iter()
        .zip(&log.barycenter)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-8, "err {err}");
}

#[test]
fn log_domain_survives_small_gamma() {
    let (k, dict) = grid_instance(0.05);
    let w = [0.4, 0.6];
    let plain = barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, 30));
    assert!(matches!(plain, Err(WdlError::Instability { .. })));
    let log = barycenter_log_domain(&BarycenterProblem::new(&dict, &w, &k, 30).with_log_domain(true)).unwrap();
    assert!(log.barycenter.iter().all(|x| x.is_finite()));
    assert!(log.b_history.iter().flatten().flatten().all(|x| x.is_finite()));
}

#[test]
fn log_domain_generalized_matches_plain_generalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = line_kernel(15, 2.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 15), random_hist(&mut rng, 15)]).unwrap();
    let w = [0.35, 0.65];
    for (tau, rho) in [(-0.2, f64::INFINITY), (0.0, 5.0), (-0.1, 3.0)] {
        let prob = BarycenterProblem::new(&dict, &w, &k, 40).with_tau(tau).with_rho(rho);
        let plain = barycenter(&prob).unwrap();
        let log = barycenter(&prob.with_log_domain(true)).unwrap();
        for (a, b) in plain.barycenter.iter().zip(&log.barycenter) {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1e-3));
        }
    }
}

#[test]
fn converged_mass_and_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = line_kernel(20, 4.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 20), random_hist(&mut rng, 20)]).unwrap();
    let trace = barycenter_forward(&BarycenterProblem::new(&dict, &[0.5, 0.5], &k, 500)).unwrap();
    let mass: f64 = trace.barycenter.iter().sum();
    assert!((mass - 1.0).abs() <= 1e-3, "mass {mass}");
    assert!(trace.last_residual() <= 1e-10, "residual {}", trace.last_residual());
}

#[test]
fn translation_moves_the_argmax() {
    let n = 50;
    let k = line_kernel(n, 1.0);
    let base = |shift: f64| {
        Dictionary::new(vec![gaussian(n, 10.0 + shift, 2.0), gaussian(n, 24.0 + shift, 3.0)]).unwrap()
    };
    let w = [0.6, 0.4];
    let p0 = barycenter_forward(&BarycenterProblem::new(&base(0.0), &w, &k, 200)).unwrap();
    let p1 = barycenter_forward(&BarycenterProblem::new(&base(7.0), &w, &k, 200)).unwrap();
    assert_eq!(argmax(&p1.barycenter), argmax(&p0.barycenter) + 7);
}

#[test]
fn trace_memory_is_linear_in_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let k = line_kernel(9, 1.0);
    let dict = Dictionary::new(vec![random_hist(&mut rng, 9), random_hist(&mut rng, 9)]).unwrap();
    let w = [0.5, 0.5];
    let len = |l| barycenter_forward(&BarycenterProblem::new(&dict, &w, &k, l)).unwrap().stored_len();
    // (L + 1) b vectors and L phi vectors, S x N each.
    assert_eq!(len(10), (11 + 10) * 2 * 9);
    assert_eq!(len(20) - len(10), 10 * 2 * 2 * 9);
}

#[test]
fn problem_validation() {
    let k = line_kernel(4, 1.0);
    let dict = Dictionary::new(vec![vec![0.25; 4], vec![0.25; 4]]).unwrap();
    assert!(BarycenterProblem::new(&dict, &[0.5, 0.6], &k, 3).validate().is_err());
    assert!(BarycenterProblem::new(&dict, &[0.5, 0.5], &k, 0).validate().is_err());
    assert!(BarycenterProblem::new(&dict, &[0.5, 0.5], &k, 3).with_rho(-1.0).validate().is_err());
    assert!(Dictionary::new(vec![vec![0.5; 2], vec![0.25; 4]]).is_err());
    assert!(solver_registry().get("nope").is_err());
    assert_eq!(solver_name_for(&BarycenterProblem::new(&dict, &[0.5, 0.5], &k, 3).with_tau(-0.1)), "heavyball");
}
