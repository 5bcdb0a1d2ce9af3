//! Property tests for structural invariants.

use std::sync::Arc;

use kac_core::kinematics::{
    big_w_lower_bound, big_w_upper_bound, normalize_to_unit, post_collision_pair, scale_from_unit, weight_big_w,
    KernelSpec, ParticleState, Vec3,
};
use kac_core::process::{conjugate_step, kac_step};
use kac_core::rng::stream_rng;
use kac_core::sampling::{lift_tk, sample_invariant_gauss, sample_invariant_recursive, sample_nu};
use kac_core::spectral::decompose::{random_sumform, trial_decompose};
use kac_core::spectral::SingleParticleBasis;
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn unit3() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter_map("nonzero", |v| {
        let n = v.norm();
        (n > 1e-3).then(|| v / n)
    })
}

fn on_unit_manifold(s: &ParticleState, tol: f64) -> bool {
    let n = s.n() as f64;
    let e = s.velocities.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
    let p = s.velocities.iter().sum::<Vec3>() / n;
    (e - 1.0).abs() < tol && p.norm() < tol
}

proptest! {
    #[test]
    fn collision_conserves_pair_energy_and_momentum(vi in vec3(5.0), vj in vec3(5.0), sigma in unit3()) {
        let (a, b) = post_collision_pair(&vi, &vj, &sigma);
        let scale = 1.0 + vi.norm_squared() + vj.norm_squared();
        prop_assert!(((a + b) - (vi + vj)).norm() < 1e-12 * scale);
        prop_assert!((a.norm_squared() + b.norm_squared() - vi.norm_squared() - vj.norm_squared()).abs() < 1e-12 * scale);
        // the relative speed is preserved and the new relative velocity is along sigma
        prop_assert!(((a - b).norm() - (vi - vj).norm()).abs() < 1e-12 * scale);
        prop_assert!(((a - b) - sigma * (vi - vj).norm()).norm() < 1e-12 * scale);
    }

    #[test]
    fn normalize_and_scale_are_inverse(seed in 0u64..1000, n in 2usize..12, e in 1.0f64..5.0, p in vec3(0.5)) {
        let mut rng = stream_rng(seed, 1);
        let unit = sample_invariant_recursive(n, &mut rng).unwrap();
        let s = scale_from_unit(&unit, e, p).unwrap();
        prop_assert!(s.validate(1e-9).ok);
        let back = normalize_to_unit(&s).unwrap();
        for (x, y) in back.velocities.iter().zip(&unit.velocities) {
            prop_assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn samplers_land_on_the_manifold(seed in 0u64..1000, n in 2usize..40) {
        let mut rng = stream_rng(seed, 2);
        prop_assert!(on_unit_manifold(&sample_invariant_recursive(n, &mut rng).unwrap(), 1e-10));
        prop_assert!(on_unit_manifold(&sample_invariant_gauss(n, &mut rng).unwrap(), 1e-10));
    }

    #[test]
    fn lift_lands_on_the_manifold(seed in 0u64..1000, n in 3usize..20, k in 0usize..20) {
        let k = k % n;
        let mut rng = stream_rng(seed, 3);
        let inner = sample_invariant_recursive(n - 1, &mut rng).unwrap();
        let v = sample_nu(n, &mut rng).unwrap();
        let s = lift_tk(&inner, &v, k).unwrap();
        prop_assert!(on_unit_manifold(&s, 1e-10));
        prop_assert!((s.velocities[k] - v.get() * ((n - 1) as f64).sqrt()).norm() < 1e-12);
    }

    #[test]
    fn process_steps_stay_on_the_manifold(seed in 0u64..1000, n in 2usize..10, alpha in 0.0f64..2.0) {
        let mut rng = stream_rng(seed, 4);
        let kernel = KernelSpec::uniform(alpha).unwrap();
        let mut s = sample_invariant_recursive(n, &mut rng).unwrap();
        for _ in 0..20 {
            s = kac_step(&s, &kernel, &mut rng).unwrap().0;
        }
        prop_assert!(on_unit_manifold(&s, 1e-9));
        if n >= 3 {
            for _ in 0..20 {
                s = conjugate_step(&s, alpha, &mut rng).unwrap().0;
            }
            prop_assert!(on_unit_manifold(&s, 1e-9));
        }
    }

    #[test]
    fn big_w_respects_its_bounds(seed in 0u64..1000, n in 3usize..30, alpha in 0.0f64..2.0) {
        let mut rng = stream_rng(seed, 5);
        let s = sample_invariant_recursive(n, &mut rng).unwrap();
        let w = weight_big_w(&s, alpha).unwrap();
        prop_assert!(w >= big_w_lower_bound(n, alpha) - 1e-12);
        prop_assert!(w <= 1.0 + 1e-12);
        prop_assert!(big_w_upper_bound(n, alpha) <= 1.0);
    }

    #[test]
    fn decomposition_is_idempotent(seed in 0u64..1000, n in 3usize..8) {
        let mut rng = stream_rng(seed, 6);
        let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
        let f = random_sumform(&basis, &mut rng);
        let d = trial_decompose(&f).unwrap();
        let again = trial_decompose(&d.p()).unwrap();
        prop_assert!((&again.g.coeffs - &d.g.coeffs).norm() < 1e-12);
        prop_assert!((&again.s.coeffs - &d.s.coeffs).norm() < 1e-12);
        for (_, t) in &again.shifts {
            prop_assert!(t.abs() < 1e-12);
        }
        // on the manifold the decomposition does not change the function
        let x = sample_invariant_recursive(n, &mut rng).unwrap();
        prop_assert!((f.eval(&x.velocities) - d.p().eval(&x.velocities)).abs() < 1e-9);
    }
}
