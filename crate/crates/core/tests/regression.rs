use nalgebra::{DMatrix, DVector};
use porkcast_core::linalg::Matrix;
use porkcast_core::models::regression::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn problem(seed: u64, n: usize, d: usize) -> (Matrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) + 3.0).collect()).collect();
    let y = rows
        .iter()
        .map(|r| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.7 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * e
        })
        .collect();
    (Matrix::from_rows(&rows), y)
}

/// Normal equations of the intercept-augmented system with an unpenalized
/// first coordinate, solved by nalgebra's LU.
fn normal_equations(x: &Matrix<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut lhs = a.transpose() * &a;
    for j in 1..=d {
        lhs[(j, j)] += alpha;
    }
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let beta = lhs.lu().solve(&rhs).unwrap();
    (beta.iter().skip(1).copied().collect(), beta[0])
}

/// Cyclic coordinate descent on the raw objective, intercept included.
fn coordinate_descent(x: &Matrix<f64>, y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    let mut w = vec![0.0; d];
    let mut b = y.iter().sum::<f64>() / n as f64;
    let mut r: Vec<f64> = y.iter().map(|v| v - b).collect();
    for _ in 0..20_000 {
        let mut moved: f64 = 0.0;
        for j in 0..d {
            let (mut num, mut den) = (0.0, alpha);
            for i in 0..n {
                num += x[(i, j)] * (r[i] + x[(i, j)] * w[j]);
                den += x[(i, j)] * x[(i, j)];
            }
            let new = num / den;
            for i in 0..n {
                r[i] -= x[(i, j)] * (new - w[j]);
            }
            moved = moved.max((new - w[j]).abs());
            w[j] = new;
        }
        let shift = r.iter().sum::<f64>() / n as f64;
        r.iter_mut().for_each(|v| *v -= shift);
        b += shift;
        if moved.max(shift.abs()) < 1e-13 {
            break;
        }
    }
    (w, b)
}

#[test]
fn ridge_matches_two_independent_solvers() {
    for seed in 0..100 {
        let (x, y) = problem(seed, 50, 8);
        let alpha = [0.01, 0.1, 1.0, 10.0][seed as usize % 4];
        let m = ridge_fit(&x, &y, alpha).unwrap();
        let (w_ne, b_ne) = normal_equations(&x, &y, alpha);
        let (w_cd, b_cd) = coordinate_descent(&x, &y, alpha);
        for j in 0..8 {
            assert!((m.weights[j] - w_ne[j]).abs() < 1e-8, "seed {seed} coef {j}");
            assert!((m.weights[j] - w_cd[j]).abs() < 1e-6, "seed {seed} coef {j}");
        }
        assert!((m.intercept - b_ne).abs() < 1e-8);
        assert!((m.intercept - b_cd).abs() < 1e-6);
    }
}

#[test]
fn ridge_is_a_minimum_along_random_directions() {
    let (x, y) = problem(77, 50, 8);
    let alpha = 0.5;
    let m = ridge_fit(&x, &y, alpha).unwrap();
    let f0 = ridge_objective(&x, &y, &m.weights, m.intercept, alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let dir: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        for h in [1e-4, 1e-2, 1.0] {
            let w: Vec<f64> = m.weights.iter().zip(&dir).map(|(a, d)| a + h * d).collect();
            assert!(ridge_objective(&x, &y, &w, m.intercept + h * dir[8], alpha) >= f0 - 1e-12);
        }
    }
}

#[test]
fn alpha_one_grid_search_oracle() {
    // one feature: scan slope and intercept on a fine grid
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
    let y = [1.0, 2.9, 5.1, 7.0];
    let m = ridge_fit(&x, &y, 1.0).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=800 {
        let w = i as f64 * 0.005;
        // optimal intercept for fixed slope is the mean residual
        let b = (0..4).map(|k| y[k] - w * k as f64).sum::<f64>() / 4.0;
        let f = ridge_objective(&x, &y, &[w], b, 1.0);
        if f < best.0 {
            best = (f, w, b);
        }
    }
    assert!((m.weights[0] - best.1).abs() <= 0.005);
    assert!((m.intercept - best.2).abs() <= 0.01);
    // centered: Sxy = 10.1, Sxx = 5, slope = Sxy / (Sxx + 1)
    assert!((m.weights[0] - 10.1 / 6.0).abs() < 1e-12);
}

#[test]
fn invalid_ridge_inputs() {
    let (x, y) = problem(1, 10, 2);
    assert!(matches!(ridge_fit(&x, &y, -1.0), Err(porkcast_core::models::ModelError::InvalidHyperparameter(_))));
    assert!(ridge_fit(&x, &y[..5], 1.0).is_err());
    assert!(ridge_fit(&Matrix::<f64>::zeros(0, 2), &[], 1.0).is_err());
    let mut bad = y.clone();
    bad[0] = f64::NAN;
    assert!(ridge_fit(&x, &bad, 1.0).is_err());
    let m = ridge_fit(&x, &y, 1.0).unwrap();
    assert!(linear_predict(&m, &Matrix::zeros(3, 5)).is_err());
}

#[test]
fn f32_ridge_tracks_f64() {
    let (x, y) = problem(9, 50, 4);
    let m64 = ridge_fit(&x, &y, 1.0).unwrap();
    let x32 = Matrix::from_vec(50, 4, x.as_slice().iter().map(|&v| v as f32).collect());
    let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let m32 = ridge_fit(&x32, &y32, 1.0f32).unwrap();
    for (a, b) in m64.weights.iter().zip(&m32.weights) {
        assert!((a - *b as f64).abs() < 1e-3);
    }
}

#[test]
fn svr_is_locally_optimal_and_beats_the_zero_model() {
    let (x, y) = problem(4, 60, 3);
    let (c, eps) = (1.0, 0.05);
    let (m, rep) = svr_fit(&x, &y, c, eps, 0, SvrOptions::default()).unwrap();
    let f = svr_objective(&x, &y, &m.weights, m.intercept, c, eps);
    assert!((f - rep.objective).abs() < 1e-9 * f.max(1.0));
    // the zero-slope model with its best intercept is a feasible point
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[30];
    assert!(f <= svr_objective(&x, &y, &[0.0; 3], median, c, eps));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let d: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = m.weights.iter().zip(&d).map(|(a, b)| a + 1e-2 * b).collect();
        let g = svr_objective(&x, &y, &w, m.intercept + 1e-2 * d[3], c, eps);
        assert!(g >= f - 1e-3 * f, "{g} < {f}");
    }
    assert!(svr_fit(&x, &y, 0.0, eps, 0, SvrOptions::default()).is_err());
    assert!(svr_fit(&x, &y, c, -0.1, 0, SvrOptions::default()).is_err());
}

#[test]
fn svr_with_wide_tube_fits_nothing() {
    // every target lies inside the tube around a constant: w = 0 is optimal
    let x = Matrix::<f64>::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
    let y = [1.0f64, 1.1, 0.9];
    let (m, _) = svr_fit(&x, &y, 1.0, 0.5, 0, SvrOptions::default()).unwrap();
    assert!(m.weights[0].abs() < 1e-3);
    let p = linear_predict(&m, &x).unwrap();
    assert!(p.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 0.5 + 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn more_penalty_never_grows_the_weights(seed in any::<u64>(), a1 in 1e-4f64..100.0, a2 in 1e-4f64..100.0) {
        let (x, y) = problem(seed, 30, 5);
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let norm = |a: f64| {
            let m = ridge_fit(&x, &y, a).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>()
        };
        prop_assert!(norm(hi) <= norm(lo) * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn ridge_predictions_shift_with_the_target(seed in any::<u64>(), c in -5.0f64..5.0, alpha in 0.0f64..10.0) {
        let (x, y) = problem(seed, 30, 4);
        let a = ridge_fit(&x, &y, alpha).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let b = ridge_fit(&x, &shifted, alpha).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            prop_assert!((u - v).abs() < 1e-8);
        }
        prop_assert!((b.intercept - a.intercept - c).abs() < 1e-8);
    }
}
