mod common;

use common::{dense_normal_system, dense_replay, random_palette, random_w};
use layerbuild::manifold::SparseRowMatrix;
use layerbuild::palette::Palette;
use layerbuild::solver::{
    assemble_normal_system, energy, solve_system, Constraint, ConstraintSet, ConstraintSource, SolverParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_of(system: &layerbuild::solver::NormalSystem) -> DMatrix<f64> {
    let n = system.b.len();
    DMatrix::from_fn(n, n, |r, c| system.a.get(r, c))
}

fn random_colors(rng: &mut ChaCha8Rng, s: usize) -> Vec<[f64; 3]> {
    (0..s).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect()
}

fn random_constraints(rng: &mut ChaCha8Rng, s: usize, n: usize, count: usize) -> ConstraintSet {
    let mut set = ConstraintSet::new();
    for _ in 0..count {
        set.insert(Constraint {
            superpixel: rng.gen_range(0..s),
            layer: rng.gen_range(0..n),
            target: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
            source: ConstraintSource::User,
        })
        .unwrap();
    }
    set
}

#[test]
fn two_by_two_matches_term_by_term_construction() {
    let w = SparseRowMatrix::from_rows(2, vec![vec![(1, 1.0)], vec![(0, 1.0)]]).unwrap();
    let palette = Palette::new(vec![[0.9, 0.1, 0.2], [0.1, 0.3, 0.8]]).unwrap();
    let colors = [[0.7, 0.2, 0.3], [0.2, 0.3, 0.7]];
    let mut constraints = ConstraintSet::new();
    constraints
        .insert(Constraint { superpixel: 0, layer: 0, target: 1.0, source: ConstraintSource::User })
        .unwrap();
    constraints
        .insert(Constraint { superpixel: 1, layer: 0, target: 0.0, source: ConstraintSource::Suppression })
        .unwrap();
    let params = SolverParams::default();
    let sys = assemble_normal_system(&w, &palette, &colors, &constraints, &params).unwrap();
    let (a, b) = dense_normal_system(&w, &palette, &colors, &constraints, &params);
    let got = dense_of(&sys);
    for r in 0..4 {
        assert!((sys.b[r] - b[r]).abs() < 1e-12, "b[{r}]");
        for c in 0..4 {
            assert!((got[(r, c)] - a[(r, c)]).abs() < 1e-12, "A[{r},{c}]");
        }
    }
}

#[test]
fn three_superpixel_replay_matches_dense_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked_with_suppression = 0;
    for _ in 0..20 {
        let w = random_w(&mut rng, 3, 2);
        let palette = random_palette(&mut rng, 2);
        let colors = random_colors(&mut rng, 3);
        let params = SolverParams::default();
        let sol = solve_system(&w, &palette, &colors, &ConstraintSet::new(), &params).unwrap();
        let schedule: Vec<Vec<usize>> = sol.steps.iter().map(|s| s.suppressed_before.clone()).collect();
        if schedule.iter().any(|s| !s.is_empty()) {
            checked_with_suppression += 1;
        }
        let dense = dense_replay(&w, &palette, &colors, &ConstraintSet::new(), &params, &schedule);
        for (a, b) in sol.layers.values().iter().zip(&dense) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
    assert!(checked_with_suppression > 0, "no instance exercised suppression");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn assembled_matrix_is_symmetric_positive_definite(seed in any::<u64>(), s in 1usize..8, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_w(&mut rng, s, 3);
        let palette = random_palette(&mut rng, n);
        let colors = random_colors(&mut rng, s);
        let constraints = random_constraints(&mut rng, s, n, 3);
        let sys = assemble_normal_system(&w, &palette, &colors, &constraints, &SolverParams::default()).unwrap();
        let a = dense_of(&sys);
        prop_assert!((&a - a.transpose()).amax() <= 1e-10);
        for _ in 0..10 {
            let x = DVector::from_fn(s * n, |_, _| rng.gen_range(-1.0..1.0));
            prop_assert!(x.dot(&(&a * &x)) > 0.0);
        }
        let (dense_a, dense_b) = dense_normal_system(&w, &palette, &colors, &constraints, &SolverParams::default());
        prop_assert!((a - dense_a).amax() < 1e-12);
        prop_assert!((DVector::from_vec(sys.b.clone()) - dense_b).amax() < 1e-12);
    }

    #[test]
    fn solve_beats_uniform_and_meets_residual(seed in any::<u64>(), s in 2usize..15, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_w(&mut rng, s, 4);
        let palette = random_palette(&mut rng, n);
        let colors = random_colors(&mut rng, s);
        let constraints = random_constraints(&mut rng, s, n, 2);
        let params = SolverParams::default();
        let sol = solve_system(&w, &palette, &colors, &constraints, &params).unwrap();
        prop_assert!(sol.converged());
        for step in &sol.steps {
            prop_assert!(step.relative_residual <= params.cg_tolerance);
        }
        // energy is measured against the final constraint set, suppression included
        let uniform = vec![1.0 / n as f64; s * n];
        let solved = energy(&w, &palette, &colors, &sol.constraints, &params, sol.layers.values()).unwrap();
        let base = energy(&w, &palette, &colors, &sol.constraints, &params, &uniform).unwrap();
        prop_assert!(solved.total() <= base.total() + 1e-12);
    }

    #[test]
    fn repeated_solves_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_w(&mut rng, 10, 4);
        let palette = random_palette(&mut rng, 3);
        let colors = random_colors(&mut rng, 10);
        let params = SolverParams::default();
        let a = solve_system(&w, &palette, &colors, &ConstraintSet::new(), &params).unwrap();
        let b = solve_system(&w, &palette, &colors, &ConstraintSet::new(), &params).unwrap();
        prop_assert_eq!(a.layers.values(), b.layers.values());
    }
}
