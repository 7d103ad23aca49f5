//! Weight solvers against independent oracles: a normal-equations route for
//! the exact minimum-norm problem and a dense 1-D grid search for the
//! two-member relaxed problem.

use divens::{basis_matrix, solve_exact_weights, solve_relaxed_weights};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

/// Independent least-norm oracle: w = A' (A A')^-1 b over the stacked
/// constraint matrix (ones row atop the basis rows).
fn normal_equations_oracle(l_bar: &[f64], d: usize) -> Vec<f64> {
    let l = l_bar.len();
    let rows = d; // 1 + (d - 1)
    let a = DMatrix::from_fn(rows, l, |i, j| {
        if i == 0 {
            1.0
        } else {
            l_bar[j].powf(i as f64 / d as f64)
        }
    });
    let mut b = DVector::zeros(rows);
    b[0] = 1.0;
    let gram = &a * a.transpose();
    let sol = gram.lu().solve(&b).expect("full row rank instance");
    (a.transpose() * sol).iter().copied().collect()
}

#[test]
fn exact_matches_least_norm_oracle_on_worked_case() {
    // hand expansion: A = [[1,1,1],[1,2,3]], b = (1,0) gives
    // (A A')^-1 b = (7/3, -1) and w = (4/3, 1/3, -2/3)
    let b = basis_matrix(&[1.0, 4.0, 9.0], 2).unwrap();
    let s = solve_exact_weights(&b).unwrap();
    let expected = [4.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0];
    for (w, e) in s.w.iter().zip(expected.iter()) {
        assert!((w - e).abs() < 1e-10, "{w} vs {e}");
    }
    let oracle = normal_equations_oracle(&[1.0, 4.0, 9.0], 2);
    for (w, o) in s.w.iter().zip(oracle.iter()) {
        assert!((w - o).abs() < 1e-10);
    }
}

fn stacked(l_bar: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, l_bar.len(), |i, j| {
        if i == 0 {
            1.0
        } else {
            l_bar[j].powf(i as f64 / d as f64)
        }
    })
}

/// Random instances with separated index values and a capped condition
/// number: the normal-equations oracle squares the conditioning, so a
/// 1e-8 comparison is only meaningful away from near-rank-deficiency
/// (which the full-row-rank precondition excludes anyway).
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    loop {
        let d = rng.random_range(2..=4);
        let l = d + rng.random_range(1..=3);
        let mut l_bar: Vec<f64> = (0..l).map(|_| 0.5 + 8.5 * rng.random::<f64>()).collect();
        l_bar.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if !l_bar.windows(2).all(|w| w[1] - w[0] > 0.6) {
            continue;
        }
        let sv = stacked(&l_bar, d).svd(false, false).singular_values;
        if sv.max() / sv.min() > 1e3 {
            continue;
        }
        return (l_bar, d);
    }
}

#[test]
fn exact_matches_least_norm_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (l_bar, d) = random_instance(&mut rng);
        let basis = basis_matrix(&l_bar, d).unwrap();
        let s = solve_exact_weights(&basis).unwrap();
        let oracle = normal_equations_oracle(&l_bar, d);
        for (w, o) in s.w.iter().zip(oracle.iter()) {
            assert!(
                (w - o).abs() < 1e-8,
                "solver {w} oracle {o} on l_bar {l_bar:?} d {d}"
            );
        }
        assert!((s.sum() - 1.0).abs() < 1e-10);
        for (i, g) in s.gamma_residuals.iter().enumerate() {
            assert!(*g < 1e-8, "gamma {i} = {g}");
        }
    }
}

#[test]
fn exact_solution_is_norm_minimal_under_null_space_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(57);
    for _ in 0..25 {
        let (l_bar, d) = random_instance(&mut rng);
        let basis = basis_matrix(&l_bar, d).unwrap();
        let s = solve_exact_weights(&basis).unwrap();
        let l = l_bar.len();
        let a = stacked(&l_bar, d);
        let gram_inv = (&a * a.transpose()).try_inverse().unwrap();
        // project a random direction onto the constraint null space
        let r = DVector::from_fn(l, |_, _| rng.random::<f64>() - 0.5);
        let delta = &r - a.transpose() * (&gram_inv * (&a * &r));
        let delta_norm = delta.norm();
        if delta_norm < 1e-12 {
            continue;
        }
        let delta = delta * (1e-3 / delta_norm);
        let w = DVector::from_column_slice(&s.w);
        let perturbed = &w + &delta;
        // still feasible up to projection rounding
        assert!((&a * &perturbed - &a * &w).amax() < 1e-8);
        assert!(perturbed.norm() >= w.norm() - 1e-9);
    }
}

/// Dense grid oracle for two-member relaxed instances: w = (w1, 1 - w1)
/// swept at step 1e-5, minimizing the worst scaled residual inside the
/// norm ball.
fn grid_oracle(l_bar: [f64; 2], d: usize, t: usize, eta: f64) -> f64 {
    let tf = t as f64;
    let scales: Vec<f64> = (1..d)
        .map(|i| tf.powf(0.5 - i as f64 / (2.0 * d as f64)))
        .collect();
    let psi: Vec<[f64; 2]> = (1..d)
        .map(|i| {
            [
                l_bar[0].powf(i as f64 / d as f64),
                l_bar[1].powf(i as f64 / d as f64),
            ]
        })
        .collect();
    let mut best = f64::INFINITY;
    let steps = 700_000;
    for j in 0..=steps {
        let w1 = -3.0 + 7.0 * j as f64 / steps as f64;
        let w2 = 1.0 - w1;
        if w1 * w1 + w2 * w2 > eta {
            continue;
        }
        let mut worst = 0.0f64;
        for (s, p) in scales.iter().zip(&psi) {
            worst = worst.max((s * (w1 * p[0] + w2 * p[1])).abs());
        }
        best = best.min(worst);
    }
    best
}

#[test]
fn relaxed_matches_grid_oracle_on_worked_case() {
    let basis = basis_matrix(&[1.0, 4.0], 2).unwrap();
    let s = solve_relaxed_weights(&basis, 100, 10.0).unwrap();
    let oracle = grid_oracle([1.0, 4.0], 2, 100, 10.0);
    let eps = s.epsilon.unwrap();
    assert!((eps - oracle).abs() < 1e-4, "eps {eps} grid {oracle}");
    // the solver is at least as good as the coarser grid
    assert!(eps <= oracle + 1e-9);
}

#[test]
fn relaxed_matches_grid_oracle_on_random_two_member_instances() {
    // ranges keep the objective's Lipschitz constant small enough that the
    // 1e-5 grid resolves the optimum well inside the 1e-4 tolerance
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..20 {
        let l1 = 0.7 + 0.8 * rng.random::<f64>();
        let l2 = l1 + 0.5 + 1.2 * rng.random::<f64>();
        let d = rng.random_range(2..=3);
        let t = rng.random_range(50..=600);
        let eta = 0.55 + 5.0 * rng.random::<f64>();
        let basis = basis_matrix(&[l1, l2], d).unwrap();
        let s = solve_relaxed_weights(&basis, t, eta).unwrap();
        let eps = s.epsilon.unwrap();
        let oracle = grid_oracle([l1, l2], d, t, eta);
        assert!(
            (eps - oracle).abs() < 1e-4,
            "case {case}: eps {eps} grid {oracle} (l=({l1},{l2}) d={d} t={t} eta={eta})"
        );
        assert!(eps <= oracle + 1e-9);
        assert!((s.sum() - 1.0).abs() < 1e-10);
        assert!(s.norm_sq <= eta + 1e-8);
        let tf = t as f64;
        for (i, g) in s.gamma_residuals.iter().enumerate() {
            let scaled = g * tf.powf(0.5 - (i + 1) as f64 / (2.0 * d as f64));
            assert!(scaled <= eps + 1e-8);
        }
    }
}

#[test]
fn relaxed_handles_wide_dimension_range() {
    // exercise the active-set enumeration up to d = 8
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in 2..=8usize {
        let l = d + 2;
        let mut l_bar: Vec<f64> = (0..l).map(|j| 1.0 + j as f64 * 0.4).collect();
        l_bar.iter_mut().for_each(|v| *v += 0.01 * rng.random::<f64>());
        let basis = basis_matrix(&l_bar, d).unwrap();
        let s = solve_relaxed_weights(&basis, 400, 1.0).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-10, "d = {d}");
        assert!(s.norm_sq <= 1.0 + 1e-8);
        let tf = 400f64;
        let eps = s.epsilon.unwrap();
        for (i, g) in s.gamma_residuals.iter().enumerate() {
            let scaled = g * tf.powf(0.5 - (i + 1) as f64 / (2.0 * d as f64));
            assert!(scaled <= eps + 1e-8, "d = {d} term {i}");
        }
    }
}
