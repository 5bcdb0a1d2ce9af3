//! Statistical cross-checks between independent estimators.

use std::sync::Arc;

use kac_core::chaos::{gaussian_moment, marginal_moments};
use kac_core::kinematics::{weight_big_w, KernelSpec};
use kac_core::process::ProcessKind;
use kac_core::rng::stream_rng;
use kac_core::sampling::{sample_invariant_gauss, sample_invariant_recursive};
use kac_core::spectral::basis::marginal_moment;
use kac_core::spectral::decompose::{null_space_function, random_sumform, recursion_check};
use kac_core::spectral::dirichlet::dirichlet_conjugate;
use kac_core::spectral::ladder::{conjugate_lower_explicit, gap_ladder};
use kac_core::spectral::trial::default_family;
use kac_core::spectral::variational::variational_gap;
use kac_core::spectral::{SingleParticleBasis, TrialFunction};
use kac_core::stats::{ks_test, MeanAcc};
use statrs::distribution::{Beta, ContinuousCDF};

/// `|v_1|^2 / (N-1)` is Beta(3/2, (3N-6)/2) under the uniform measure.
fn speed_cdf(n: usize) -> impl Fn(f64) -> f64 {
    let b = Beta::new(1.5, (3.0 * n as f64 - 6.0) / 2.0).unwrap();
    move |x| b.cdf((x / (n - 1) as f64).clamp(0.0, 1.0))
}

#[test]
fn both_samplers_have_the_exact_speed_law() {
    for n in [4, 9, 30] {
        let mut rng = stream_rng(8001, n as u64);
        let mut rec: Vec<f64> = (0..20_000)
            .map(|_| sample_invariant_recursive(n, &mut rng).unwrap().velocities[0].norm_squared())
            .collect();
        let mut gau: Vec<f64> =
            (0..20_000).map(|_| sample_invariant_gauss(n, &mut rng).unwrap().velocities[0].norm_squared()).collect();
        let (_, p_rec) = ks_test(&mut rec, speed_cdf(n));
        let (_, p_gau) = ks_test(&mut gau, speed_cdf(n));
        assert!(p_rec > 1e-3, "recursive N={n}: p={p_rec}");
        assert!(p_gau > 1e-3, "gauss N={n}: p={p_gau}");
    }
}

#[test]
fn fourth_moment_drifts_to_the_gaussian_value() {
    let target = gaussian_moment(2);
    let mut last = f64::INFINITY;
    for n in [8, 16, 32, 64, 128] {
        let d = (marginal_moment(n, 2) - target).abs();
        assert!(d < last, "N={n}");
        last = d;
        let mut rng = stream_rng(8002, n as u64);
        let r = &marginal_moments(n, &[4], 100_000, &mut rng).unwrap()[0];
        assert!(r.pass, "N={n}: {} vs {}", r.estimate, r.reference);
    }
}

#[test]
fn null_space_form_is_the_weighted_norm() {
    // P_k h = 0 for every k, so D_alpha(h) = E[W^(alpha) h^2] at every alpha
    let n = 4;
    let mut rng = stream_rng(8003, 0);
    let h = null_space_function(n, 200_000, &mut rng).unwrap();
    for alpha in [0.0, 1.0, 2.0] {
        let d = dirichlet_conjugate(&h, n, alpha, 40_000, &mut rng).unwrap();
        let mut acc = MeanAcc::new();
        for _ in 0..200_000 {
            let s = sample_invariant_recursive(n, &mut rng).unwrap();
            acc.push(weight_big_w(&s, alpha).unwrap() * h.eval(&s.velocities).powi(2));
        }
        let e = acc.estimate();
        let se = (d.stderr.powi(2) + e.stderr.powi(2)).sqrt();
        // the fitted projection leaves an O(n_fit^{-1/2}) residual
        assert!((d.value - e.value).abs() < 4.0 * se + 0.01 * e.value, "alpha={alpha}: {d:?} vs {e:?}");
    }
}

#[test]
fn weighted_form_dominates_scaled_quadratic_form() {
    let n = 5;
    let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
    let mut rng = stream_rng(8004, 0);
    let f = TrialFunction::from(random_sumform(&basis, &mut rng));
    let d2 = dirichlet_conjugate(&f, n, 2.0, 40_000, &mut stream_rng(8004, 1)).unwrap();
    for alpha in [0.0, 1.0] {
        let da = dirichlet_conjugate(&f, n, alpha, 40_000, &mut stream_rng(8004, 1)).unwrap();
        let c = ((n as f64 - 1.0) / n as f64).powf(1.0 - alpha / 2.0);
        let se = (da.stderr.powi(2) + (c * d2.stderr).powi(2)).sqrt();
        assert!(da.value >= c * d2.value - 3.0 * se, "alpha={alpha}: {} < {}", da.value, c * d2.value);
    }
}

#[test]
fn conjugate_gap_exceeds_explicit_bound() {
    let n = 5;
    let alpha = 1.0;
    let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
    let family = default_family(&basis);
    let kernel = KernelSpec::uniform(alpha).unwrap();
    let mut rng = stream_rng(8005, 0);
    let r = variational_gap(n, &kernel, ProcessKind::Conjugate, &family, &Default::default(), 100_000, 4, &mut rng)
        .unwrap();
    let bound = conjugate_lower_explicit(n, alpha).unwrap();
    assert!(r.report.estimate >= bound - 3.0 * r.report.stderr, "{} < {bound}", r.report.estimate);
}

#[test]
fn recursion_holds_for_random_sum_forms() {
    for (n, alpha) in [(4, 0.0), (5, 1.0), (6, 2.0)] {
        let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
        let mut rng = stream_rng(8006, n as u64);
        let f = TrialFunction::from(random_sumform(&basis, &mut rng));
        let kernel = KernelSpec::uniform(alpha).unwrap();
        let r = recursion_check(&f, n, &kernel, 40_000, &mut rng).unwrap();
        assert!(r.pass, "N={n} alpha={alpha}: z={}", r.z);
    }
}

#[test]
fn ladder_from_explicit_bounds_stays_positive() {
    let rungs =
        gap_ladder(40, 4.0, |n| if n < 4 { 1.0 / 3.0 } else { conjugate_lower_explicit(n, 1.0).unwrap() }).unwrap();
    assert_eq!(rungs.len(), 38);
    assert!(rungs.iter().all(|r| r.kac_lower > 0.0 && r.conjugate_lower > 0.0));
    for w in rungs.windows(2) {
        let ratio = w[1].kac_lower / w[0].kac_lower;
        let expect = w[1].n as f64 / (w[1].n as f64 - 1.0) * w[1].conjugate_lower;
        assert!((ratio - expect).abs() < 1e-12);
    }
}
