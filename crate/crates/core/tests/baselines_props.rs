use proptest::prelude::*;
use synthlab::baselines::{
    decompose, fit_decomp_linear, fit_linear_direct, last_value, moving_average, ridge_fit, seasonal_naive, training_windows, BaselineKind, BaselineModel,
    BaselineSpec,
};
use synthlab::{ForecastError, Forecaster};

/// Gaussian elimination with partial pivoting; solves `a · x = b` for
/// every column of `b` (n × m, row-major).
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize, m: usize) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
        }
        for k in 0..m {
            b.swap(col * m + k, piv * m + k);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                b[r * m + k] -= f * b[col * m + k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..m {
            let mut s = b[col * m + k];
            for j in col + 1..n {
                s -= a[col * n + j] * b[j * m + k];
            }
            b[col * m + k] = s / a[col * n + col];
        }
    }
    b
}

/// Ridge with an unpenalized intercept via an augmented design
/// `[1, x]` and a penalty matrix that skips the intercept column.
fn ridge_oracle(x: &[f64], y: &[f64], n: usize, p: usize, h: usize, ridge: f64) -> (Vec<f64>, Vec<f64>) {
    let q = p + 1;
    let row = |i: usize, j: usize| if j == 0 { 1.0 } else { x[i * p + j - 1] };
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q * h];
    for i in 0..n {
        for j in 0..q {
            for k in 0..q {
                a[j * q + k] += row(i, j) * row(i, k);
            }
            for k in 0..h {
                b[j * h + k] += row(i, j) * y[i * h + k];
            }
        }
    }
    for j in 1..q {
        a[j * q + j] += ridge;
    }
    let sol = solve(a, b, q, h);
    let bias = sol[..h].to_vec();
    // weights as P × H row-major
    (sol[h..].to_vec(), bias)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_matches_dense_solve(seed in any::<u64>(), n in 12usize..40, p in 1usize..6, h in 1usize..4, ridge in prop_oneof![Just(1e-6), 0.01f64..2.0]) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n * h).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (w, b) = ridge_fit(&x, &y, n, p, h, ridge).unwrap();
        let (wo, bo) = ridge_oracle(&x, &y, n, p, h, ridge);
        for (a, e) in w.iter().zip(&wo).chain(b.iter().zip(&bo)) {
            prop_assert!((a - e).abs() <= 1e-8 * (1.0 + e.abs()), "{a} vs {e}");
        }
    }

    #[test]
    fn decomposition_sums_back(x in prop::collection::vec(-100.0f64..100.0, 1..80), k in 0usize..6) {
        let kernel = 2 * k + 1;
        let (trend, rem) = decompose(&x, kernel);
        for i in 0..x.len() {
            prop_assert!((trend[i] + rem[i] - x[i]).abs() <= 1e-12 * (1.0 + x[i].abs()));
        }
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(moving_average(&x, kernel).iter().all(|m| *m >= lo - 1e-9 && *m <= hi + 1e-9));
    }

    #[test]
    fn seasonal_naive_repeats_last_period(x in prop::collection::vec(-5.0f64..5.0, 1..60), period in 1usize..20, h in 1usize..50) {
        let f = seasonal_naive(&x, period, h).unwrap();
        prop_assert_eq!(f.len(), h);
        if x.len() >= period {
            for t in 0..h {
                prop_assert_eq!(f[t], x[x.len() - period + t % period]);
            }
        } else {
            prop_assert!(f.iter().all(|v| *v == *x.last().unwrap()));
        }
    }

    #[test]
    fn window_stack_shape(len in 2usize..60, l in 1usize..10, h in 1usize..10) {
        let s: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let (x, y, n) = training_windows(&[&s], l, h);
        prop_assert_eq!(n, (len + 1).saturating_sub(l + h));
        prop_assert_eq!(x.len(), n * l);
        prop_assert_eq!(y.len(), n * h);
        for i in 0..n {
            prop_assert_eq!(y[i * h], x[i * l + l - 1] + 1.0);
        }
    }
}

#[test]
fn linear_models_continue_a_line() {
    let line: Vec<f64> = (0..300).map(|t| 0.5 * t as f64 - 3.0).collect();
    let lin = fit_linear_direct(&[&line], 16, 8, 1e-9).unwrap();
    let dl = fit_decomp_linear(&[&line], 16, 8, 5, 1e-9).unwrap();
    let window = &line[200..216];
    for (i, (a, b)) in lin.apply(window).iter().zip(dl.apply(window)).enumerate() {
        let want = 0.5 * (216 + i) as f64 - 3.0;
        assert!((a - want).abs() < 1e-5, "{a} vs {want}");
        assert!((b - want).abs() < 1e-5, "{b} vs {want}");
    }
}

#[test]
fn fitted_model_rejects_short_history() {
    let s: Vec<f64> = (0..100).map(|t| (t as f64 * 0.3).sin()).collect();
    let model = BaselineSpec::new(BaselineKind::Linear, 24, 12).fit_model(&[&s], 6).unwrap();
    assert!(matches!(model.forecast(&s[..10], 6), Err(ForecastError::InsufficientData { needed: 24, available: 10 })));
    assert!(matches!(model.forecast(&s, 7), Err(ForecastError::HorizonOverflow { .. })));
    assert_eq!(model.forecast(&s, 6).unwrap().len(), 6);
}

#[test]
fn naive_models_have_no_horizon_cap() {
    let m = BaselineModel::Snaive { period: 4 };
    assert_eq!(m.max_horizon(), None);
    assert_eq!(m.forecast(&[1.0, 2.0, 3.0, 4.0, 5.0], 6).unwrap(), vec![2.0, 3.0, 4.0, 5.0, 2.0, 3.0]);
    assert_eq!(last_value(&[1.0, 9.0], 3).unwrap(), vec![9.0; 3]);
    assert!(last_value(&[], 3).is_err());
}
