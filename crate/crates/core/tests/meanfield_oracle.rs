//! Cross-validation of the mean-field pipeline against an independent
//! implementation whose inner solver is dense LU factorization instead of
//! power iteration, plus frozen high-precision reference values.

use aoi_core::{
    analyze, build_age_threshold_aloha, build_pure_aloha, solve_fixed_point, temporal_variance,
    AgeThresholdParams, AnalysisSettings, ProtocolSpec,
};
use approx::assert_abs_diff_eq;

fn tight(num_users: u32) -> AnalysisSettings {
    let mut s = AnalysisSettings::new(num_users);
    s.fp_threshold = 1e-12;
    s.stat_dist_tol = 1e-13;
    s.fp_max_iters = 200_000;
    s
}

/// Stationary distribution by direct linear solve: stack the stationarity
/// equations `(P^T − I) μ = 0` with the last row replaced by normalization
/// `Σ μ = 1`, and run Gaussian elimination with partial pivoting.
fn lu_stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n - 1 {
        for j in 0..n {
            a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[n - 1][j] = 1.0;
    }
    a[n - 1][n] = 1.0;

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        assert!(diag.abs() > 1e-14, "singular system");
        for row in 0..n {
            if row != col {
                let factor = a[row][col] / diag;
                if factor != 0.0 {
                    for k in col..=n {
                        let sub = factor * a[col][k];
                        a[row][k] -= sub;
                    }
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

fn mix(spec: &ProtocolSpec, gamma0: f64) -> Vec<Vec<f64>> {
    let s = spec.num_states;
    let mut p = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in 0..s {
            p[i][j] = gamma0 * spec.m0[i][j] + (1.0 - gamma0) * spec.m1[i][j];
        }
    }
    p
}

fn matvec(p: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let xi = x[i];
        if xi != 0.0 {
            for j in 0..n {
                y[j] += xi * p[i][j];
            }
        }
    }
    y
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Independent fixed-point iteration: identical update rule and stopping
/// criterion, dense LU inner solve.
fn oracle_fixed_point(spec: &ProtocolSpec, num_users: u32, threshold: f64) -> (Vec<f64>, f64) {
    let s = spec.num_states;
    let tx = spec.tx_state - 1;
    let mut mu_bar: Vec<f64> = vec![0.0; s];
    mu_bar[0] = 1.0;
    for _ in 0..100_000 {
        let g0 = (1.0 - mu_bar[tx]).max(0.0).powi(num_users as i32 - 1);
        let mu = lu_stationary(&mix(spec, g0));
        let diff = l1(&mu_bar, &mu);
        let g0p = (1.0 - mu[tx]).max(0.0).powi(num_users as i32 - 1);
        let residual = l1(&matvec(&mix(spec, g0p), &mu), &mu);
        if diff < threshold && residual <= threshold {
            return (mu, g0p);
        }
        mu_bar = mu;
    }
    panic!("oracle fixed point did not converge");
}

/// Independent covariance-series evaluation (dense matrix products).
fn oracle_v2(spec: &ProtocolSpec, mu: &[f64], gamma0: f64, k_max: u32, term_tol: f64) -> f64 {
    let tx = spec.tx_state - 1;
    let m = mu[tx] * gamma0;
    let p = mix(spec, gamma0);
    let mut r = spec.m0[tx].clone();
    let mut total = 0.0;
    let mut streak = 0;
    for k in 2..=k_max {
        if k > 2 {
            r = matvec(&p, &r);
        }
        let term = (gamma0 * r[tx] - m) * m;
        total += term;
        if term.abs() < term_tol {
            streak += 1;
            if streak == 3 {
                break;
            }
        } else {
            streak = 0;
        }
    }
    (m - m * m + 2.0 * total).max(0.0)
}

#[test]
fn frozen_reference_values_lbop_and_spgp_at_25_users() {
    // Values frozen from an independent implementation run at tight
    // tolerance (fixed-point threshold 1e-12, dense inner solve).
    let lbop = build_age_threshold_aloha(&AgeThresholdParams {
        threshold: 55,
        tx_prob: 4.69 / 25.0,
    })
    .unwrap();
    let sol = analyze(&lbop, &tight(25)).unwrap();
    assert_abs_diff_eq!(sol.mu[0], 0.02970821397123921, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.mu[1], 0.12865113555562988, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.mu[2], 0.015302557281329607, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.gamma0, 0.4849048382338991, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.mean_rate, 0.014405656689941811, epsilon = 1e-9);
    assert_abs_diff_eq!(
        sol.temporal_variance.unwrap(),
        0.02396479255290273,
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(sol.aoi_approx.unwrap(), 92.9486911655587, epsilon = 5e-5);

    let spgp = build_age_threshold_aloha(&AgeThresholdParams {
        threshold: 54,
        tx_prob: 4.43 / 25.0,
    })
    .unwrap();
    let sol = analyze(&spgp, &tight(25)).unwrap();
    assert_abs_diff_eq!(sol.mu[0], 0.029822121216806413, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.gamma0, 0.4835404733022807, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.mean_rate, 0.014420202608052561, epsilon = 1e-9);
    assert_abs_diff_eq!(
        sol.temporal_variance.unwrap(),
        0.02371058594152175,
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(sol.aoi_approx.unwrap(), 92.18600846148244, epsilon = 5e-5);

    // The published closed-form baselines at N = 25 land within a percent
    // of each other, with the shorter-threshold rule slightly ahead.
    assert!(92.18600846148244 < 92.9486911655587);
}

#[test]
fn production_solver_matches_dense_lu_oracle() {
    let points: &[(u32, f64, u32)] = &[
        (1, 0.5, 2),
        (3, 0.9, 3),
        (5, 0.1, 5),
        (8, 0.6, 4),
        (10, 0.2, 5),
        (25, 0.3, 10),
        (40, 0.05, 20),
        (55, 4.69 / 25.0, 25),
    ];
    for &(h, p, n) in points {
        let spec = build_age_threshold_aloha(&AgeThresholdParams {
            threshold: h,
            tx_prob: p,
        })
        .unwrap();
        let mut settings = tight(n);
        settings.cov_k_max = 2000;
        settings.cov_term_tol = 1e-13;

        let sol = solve_fixed_point(&spec, &settings).unwrap();
        let (mu_o, g0_o) = oracle_fixed_point(&spec, n, settings.fp_threshold);

        let max_mu_diff = sol
            .mu
            .iter()
            .zip(&mu_o)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            max_mu_diff < 1e-10,
            "H={h} p={p} N={n}: mu disagreement {max_mu_diff}"
        );
        assert_abs_diff_eq!(sol.gamma0, g0_o, epsilon = 1e-10);

        let tv = temporal_variance(&spec, &sol.mu, sol.gamma0, &settings).unwrap();
        let v2_o = oracle_v2(&spec, &mu_o, g0_o, settings.cov_k_max, settings.cov_term_tol);
        assert_abs_diff_eq!(tv.v2, v2_o, epsilon = 1e-9);

        // Contract invariants of every returned solution.
        assert!(sol.converged);
        assert!(sol.residual <= settings.fp_threshold);
        assert_abs_diff_eq!(sol.mu.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            sol.mean_rate,
            sol.mu[0] * sol.gamma0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(sol.gamma0 + sol.gamma1, 1.0, epsilon = 1e-15);
    }
}

#[test]
fn single_user_aoi_is_exactly_inverse_rate() {
    // With one user there is no contention: deliveries are Bernoulli(p),
    // the approximation is exact, and AoI = 1/p.
    let spec = build_pure_aloha(0.37).unwrap();
    let sol = analyze(&spec, &AnalysisSettings::new(1)).unwrap();
    assert_eq!(sol.gamma0, 1.0);
    assert_abs_diff_eq!(sol.mean_rate, 0.37, epsilon = 1e-12);
    assert_abs_diff_eq!(sol.aoi_approx.unwrap(), 1.0 / 0.37, epsilon = 1e-9);
}

#[test]
fn default_tolerance_solution_is_close_to_tight_solution() {
    // The default fixed-point threshold (1e-6) must land near the tightly
    // converged solution: the outer iteration's terminal contraction keeps
    // the excess error within a couple of orders of the threshold.
    let spec = build_age_threshold_aloha(&AgeThresholdParams {
        threshold: 55,
        tx_prob: 4.69 / 25.0,
    })
    .unwrap();
    let default_sol = analyze(&spec, &AnalysisSettings::new(25)).unwrap();
    let tight_sol = analyze(&spec, &tight(25)).unwrap();
    assert_abs_diff_eq!(default_sol.mean_rate, tight_sol.mean_rate, epsilon = 1e-5);
    assert_abs_diff_eq!(
        default_sol.aoi_approx.unwrap(),
        tight_sol.aoi_approx.unwrap(),
        epsilon = 0.1
    );
}
