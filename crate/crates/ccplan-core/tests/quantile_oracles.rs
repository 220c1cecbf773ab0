//! Quantile functions against integration-based oracles.
//!
//! Each distribution is checked on a 50-point grid: the oracle CDF is
//! composite Gauss-Legendre quadrature of the density (see `common`), and
//! oracle quantiles come from bisection against it, so no special-function
//! code is shared with the implementation under test.

mod common;

use ccplan_core::stats::{
    chi2_quantile, f_quantile, hotelling_t2_quantile, norm_inv_cdf, rng_for, student_t_quantile,
};
use common::{
    assert_oracles_match_closed_forms, bisect_quantile, chi2_cdf_oracle, empirical_quantile,
    f_cdf_oracle, normal_cdf_oracle, student_t_cdf_oracle,
};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[test]
fn oracle_quadrature_matches_closed_forms() {
    assert_oracles_match_closed_forms();
}

/// 50 probabilities spanning the working range plus both tails.
fn p_grid() -> Vec<f64> {
    let mut ps: Vec<f64> = (1..=46).map(|i| i as f64 / 47.0).collect();
    ps.extend_from_slice(&[1e-4, 1e-3, 0.999, 0.9999]);
    assert_eq!(ps.len(), 50);
    ps
}

#[test]
fn normal_quantile_matches_integration_oracle() {
    for p in p_grid() {
        let q = norm_inv_cdf(p).unwrap();
        // The implementation promises |CDF(q) - p| <= 1e-12.
        let round_trip = normal_cdf_oracle(q);
        assert!(
            (round_trip - p).abs() <= 1e-12,
            "p = {p}: oracle CDF of quantile came back {round_trip}"
        );
    }
}

#[test]
fn chi2_quantile_matches_integration_oracle() {
    let dofs = [1u64, 2, 3, 5, 10, 59, 199, 999];
    let mut checked = 0;
    for &k in &dofs {
        for &p in &[0.05, 0.25, 0.5, 0.9, 0.95, 0.999, 0.9995] {
            if checked >= 50 {
                break;
            }
            let q = chi2_quantile(k as f64, p).unwrap();
            let kf = k as f64;
            let hi = (kf + 20.0 * (2.0 * kf).sqrt()).max(30.0);
            let oracle = bisect_quantile(|x| chi2_cdf_oracle(k, x), p, 0.0, hi);
            assert!(
                (q - oracle).abs() <= 1e-9 * oracle.max(1.0),
                "k = {k}, p = {p}: {q} vs oracle {oracle}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 50);
}

#[test]
fn chi2_tail_value_feeds_the_variance_radius() {
    // k = 999 at the 0.9995 tail: the 1 - 999/q expression this value feeds
    // must match the oracle to well under the bound's own scale.
    let q = chi2_quantile(999.0, 0.9995).unwrap();
    let oracle = bisect_quantile(|x| chi2_cdf_oracle(999, x), 0.9995, 500.0, 1500.0);
    let impl_ratio = 1.0 - 999.0 / q;
    let oracle_ratio = 1.0 - 999.0 / oracle;
    assert!((impl_ratio - oracle_ratio).abs() < 1e-9);
}

#[test]
fn student_t_quantile_matches_integration_oracle() {
    let dofs = [1u64, 2, 5, 10, 30, 58, 120, 1258];
    let mut checked = 0;
    for &k in &dofs {
        for &p in &[0.55, 0.75, 0.9, 0.975, 0.995, 0.999, 0.9995] {
            if checked >= 50 {
                break;
            }
            let q = student_t_quantile(k as f64, p).unwrap();
            // Cauchy quantiles blow up fast; give the bracket room.
            let hi = if k == 1 { 1e5 } else { 60.0 };
            let oracle = bisect_quantile(|x| student_t_cdf_oracle(k, x), p, 0.0, hi);
            assert!(
                (q - oracle).abs() <= 1e-8 * oracle.abs().max(1.0),
                "k = {k}, p = {p}: {q} vs oracle {oracle}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 50);
}

#[test]
fn f_quantile_matches_integration_oracle() {
    let cells = [
        (1u64, 7u64),
        (2, 30),
        (3, 10),
        (3, 57),
        (3, 997),
        (5, 55),
        (6, 6),
        (10, 120),
    ];
    let mut checked = 0;
    for &(d1, d2) in &cells {
        for &p in &[0.1, 0.5, 0.9, 0.95, 0.99, 0.999, 0.9995] {
            if checked >= 50 {
                break;
            }
            let q = f_quantile(d1 as f64, d2 as f64, p).unwrap();
            let oracle = bisect_quantile(|x| f_cdf_oracle(d1, d2, x), p, 0.0, 1e6);
            assert!(
                (q - oracle).abs() <= 1e-8 * oracle.max(1.0),
                "d = ({d1}, {d2}), p = {p}: {q} vs oracle {oracle}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 50);
}

#[test]
fn f_quantile_identities_hold() {
    // F(1, k) is the square of the two-sided t quantile.
    for &(k, p) in &[(7.0, 0.95), (30.0, 0.99), (997.0, 0.999)] {
        let f = f_quantile(1.0, k, p).unwrap();
        let t = student_t_quantile(k, (1.0 + p) / 2.0).unwrap();
        assert!((f - t * t).abs() < 1e-7 * t * t, "k = {k}, p = {p}");
    }
    // Reciprocal identity between the two orderings.
    for &(d1, d2, p) in &[(3.0, 11.0, 0.9), (5.0, 55.0, 0.999), (2.0, 9.0, 0.55)] {
        let a = f_quantile(d1, d2, p).unwrap();
        let b = f_quantile(d2, d1, 1.0 - p).unwrap();
        assert!((a * b - 1.0).abs() < 1e-7, "({d1}, {d2}), p = {p}");
    }
}

#[test]
fn f_tail_matches_monte_carlo_ratio_quantile() {
    // Empirical 0.999 quantile of 1e6 draws of (chi2_3/3)/(chi2_997/997).
    let mut rng = rng_for(20_260_822, "f-mc-oracle", 0);
    let g_num = Gamma::new(1.5, 2.0).unwrap();
    let g_den = Gamma::new(498.5, 2.0).unwrap();
    let n = 1_000_000;
    let mut ratios: Vec<f64> = (0..n)
        .map(|_| (g_num.sample(&mut rng) / 3.0) / (g_den.sample(&mut rng) / 997.0))
        .collect();
    let mc = empirical_quantile(&mut ratios, 0.999);
    let q = f_quantile(3.0, 997.0, 0.999).unwrap();
    assert!(
        (q - mc).abs() < 0.04 * q,
        "implementation {q} vs MC quantile {mc}"
    );
}

#[test]
fn hotelling_quantile_matches_simulated_sample_sets() {
    // T2 for dimension 3 with m = 999 (sample count 1000) at p = 0.999,
    // against the empirical quantile of 1e5 simulated sample sets. T2 is
    // affine-invariant, so standard normal data loses no generality.
    let n_sets = 100_000usize;
    let n_s = 1_000usize;
    let mut rng = rng_for(20_260_822, "t2-mc-oracle", 0);
    let mut t2: Vec<f64> = Vec::with_capacity(n_sets);
    for _ in 0..n_sets {
        let mut sum = [0.0f64; 3];
        let mut outer = [[0.0f64; 3]; 3];
        let mut rows = Vec::with_capacity(n_s);
        for _ in 0..n_s {
            let x: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            for i in 0..3 {
                sum[i] += x[i];
            }
            rows.push(x);
        }
        let mean = [
            sum[0] / n_s as f64,
            sum[1] / n_s as f64,
            sum[2] / n_s as f64,
        ];
        for x in &rows {
            for i in 0..3 {
                for j in 0..3 {
                    outer[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        let c = n_s as f64 - 1.0;
        let s = [
            [outer[0][0] / c, outer[0][1] / c, outer[0][2] / c],
            [outer[1][0] / c, outer[1][1] / c, outer[1][2] / c],
            [outer[2][0] / c, outer[2][1] / c, outer[2][2] / c],
        ];
        // 3x3 inverse by adjugate.
        let det = s[0][0] * (s[1][1] * s[2][2] - s[1][2] * s[2][1])
            - s[0][1] * (s[1][0] * s[2][2] - s[1][2] * s[2][0])
            + s[0][2] * (s[1][0] * s[2][1] - s[1][1] * s[2][0]);
        let adj = [
            [
                s[1][1] * s[2][2] - s[1][2] * s[2][1],
                s[0][2] * s[2][1] - s[0][1] * s[2][2],
                s[0][1] * s[1][2] - s[0][2] * s[1][1],
            ],
            [
                s[1][2] * s[2][0] - s[1][0] * s[2][2],
                s[0][0] * s[2][2] - s[0][2] * s[2][0],
                s[0][2] * s[1][0] - s[0][0] * s[1][2],
            ],
            [
                s[1][0] * s[2][1] - s[1][1] * s[2][0],
                s[0][1] * s[2][0] - s[0][0] * s[2][1],
                s[0][0] * s[1][1] - s[0][1] * s[1][0],
            ],
        ];
        let mut quad = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                quad += mean[i] * adj[i][j] / det * mean[j];
            }
        }
        t2.push(n_s as f64 * quad);
    }
    let mc = empirical_quantile(&mut t2, 0.999);
    let q = hotelling_t2_quantile(3, 999, 0.999).unwrap();
    assert!(
        (q - mc).abs() < 0.05 * q,
        "implementation {q} vs MC quantile {mc}"
    );
    // The case-study regime value reduces to the same F relation.
    let case = hotelling_t2_quantile(3, 1258, 1.0 - 1e-3).unwrap();
    let by_f = 3.0 * 1258.0 / 1256.0 * f_quantile(3.0, 1256.0, 1.0 - 1e-3).unwrap();
    assert!((case - by_f).abs() < 1e-9 * by_f);
}

#[test]
fn quantile_cdf_round_trips_and_monotonicity() {
    let grid: Vec<f64> = (1..=39).map(|i| i as f64 / 40.0).collect();
    let mut prev = f64::NEG_INFINITY;
    for &p in &grid {
        let q = norm_inv_cdf(p).unwrap();
        assert!(q > prev);
        prev = q;
        assert!((ccplan_core::stats::norm_cdf(q) - p).abs() < 1e-12);
    }
    let mut prev = 0.0;
    for &p in &grid {
        let q = chi2_quantile(5.0, p).unwrap();
        assert!(q > prev);
        prev = q;
        assert!((ccplan_core::stats::chi2_cdf(5.0, q).unwrap() - p).abs() < 1e-8);
    }
    let mut prev = f64::NEG_INFINITY;
    for &p in &grid {
        let q = student_t_quantile(8.0, p).unwrap();
        assert!(q > prev);
        prev = q;
        assert!((ccplan_core::stats::student_t_cdf(8.0, q).unwrap() - p).abs() < 1e-8);
    }
    let mut prev = 0.0;
    for &p in &grid {
        let q = f_quantile(4.0, 17.0, p).unwrap();
        assert!(q > prev);
        prev = q;
        assert!((ccplan_core::stats::f_cdf(4.0, 17.0, q).unwrap() - p).abs() < 1e-8);
    }
}
