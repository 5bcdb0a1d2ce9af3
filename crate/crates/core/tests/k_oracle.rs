//! Exact K eigenvalues by deterministic quadrature, used as an independent
//! oracle for the closed forms and for the Monte Carlo Galerkin spectrum.
//!
//! Given `v_2 = v`, particle 1 is `p + s y` with `p = -v/(N-1)`,
//! `s^2 = (N - |v|^2)/(N-1) - |p|^2` and `y` a single particle of the
//! (N-1)-particle uniform measure, for which `|y|^2 = (N-2) B` with
//! `B ~ Beta(3/2, (3N-9)/2)` (`|y| = 1` when N = 3). K acts on each zonal
//! sector `h_l(x) |x|^{2r}` as a triangular map, so its eigenvalues are the
//! diagonal coefficients. The angular average uses Gauss-Legendre nodes; the
//! radial average fits the (even) polynomial in `|y|` and applies the Beta
//! moments; the outer polynomial in `|v|^2` is recovered by interpolation.

use kac_core::rng::stream_rng;
use kac_core::spectral::kspec::{k_spectrum, kappa_conserved, kappa_upper, mu0_closed, Mode};
use kac_core::spectral::SingleParticleBasis;
use nalgebra::{DMatrix, DVector};

const R_MAX: usize = 3;

fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    (1..=m)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (m as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let w = 2.0 / ((1.0 - x * x) * dp * dp);
                    return (x, w);
                }
            }
        })
        .collect()
}

/// Zonal solid harmonic of degree `l` times `|x|^{2r}`, from `(x_z, |x|^2)`.
fn phi(l: usize, r: usize, z: f64, r2: f64) -> f64 {
    let h = match l {
        0 => 1.0,
        1 => z,
        2 => 1.5 * z * z - 0.5 * r2,
        _ => unreachable!(),
    };
    h * r2.powi(r as i32)
}

fn solve(x: &[f64], y: &[f64]) -> Vec<f64> {
    let d = x.len();
    let a = DMatrix::from_fn(d, d, |i, j| x[i].powi(j as i32));
    let c = a.lu().solve(&DVector::from_row_slice(y)).expect("distinct nodes");
    c.iter().copied().collect()
}

/// `E B^k` for `B ~ Beta(a, b)`; `b = 0` means `B = 1`.
fn beta_moment(a: f64, b: f64, k: usize) -> f64 {
    (0..k).map(|i| (a + i as f64) / (a + b + i as f64)).product()
}

/// `K phi_{l,r}(t e_z)`.
fn k_phi(n: usize, l: usize, r: usize, t: f64) -> f64 {
    let nf = n as f64;
    let pz = -t / (nf - 1.0);
    let s2 = (nf - t * t) / (nf - 1.0) - pz * pz;
    let s = s2.max(0.0).sqrt();
    let nodes = gauss_legendre(16);
    let angular = |rho: f64| -> f64 {
        nodes
            .iter()
            .map(|&(c, w)| {
                let z = pz + s * rho * c;
                let r2 = pz * pz + 2.0 * pz * s * rho * c + s2 * rho * rho;
                0.5 * w * phi(l, r, z, r2)
            })
            .sum()
    };
    let deg = (l + 2 * r) / 2 + 1;
    let u: Vec<f64> = (0..=deg).map(|i| 0.2 + 0.3 * i as f64).collect();
    let vals: Vec<f64> = u.iter().map(|&u| angular(u.sqrt())).collect();
    let coef = solve(&u, &vals);
    let m = (nf - 2.0) as usize;
    let b = (3.0 * nf - 9.0) / 2.0;
    coef.iter().enumerate().map(|(k, c)| c * (m as f64).powi(k as i32) * beta_moment(1.5, b, k)).sum()
}

/// Triangular matrix of K on `{h_l |x|^{2r}}_{r <= R_MAX}`; column `r` holds
/// the coefficients of `K phi_{l,r}`.
fn k_matrix(n: usize, l: usize) -> DMatrix<f64> {
    let d = R_MAX + 1;
    let tmax2 = (n - 1) as f64;
    let t2: Vec<f64> = (0..d).map(|i| tmax2 * (0.15 + 0.2 * i as f64)).collect();
    let mut m = DMatrix::zeros(d, d);
    for r in 0..d {
        let y: Vec<f64> = t2
            .iter()
            .map(|&t2| {
                let t = t2.sqrt();
                k_phi(n, l, r, t) / phi(l, 0, t, t2)
            })
            .collect();
        for (i, c) in solve(&t2, &y).into_iter().enumerate() {
            m[(i, r)] = c;
        }
    }
    m
}

fn exact_eigenvalues(n: usize, l: usize) -> Vec<f64> {
    let m = k_matrix(n, l);
    (0..=R_MAX).map(|r| m[(r, r)]).collect()
}

#[test]
fn k_is_triangular_on_each_sector() {
    for n in [3, 4, 6] {
        for l in 0..=2 {
            let m = k_matrix(n, l);
            for r in 0..=R_MAX {
                for i in r + 1..=R_MAX {
                    assert!(m[(i, r)].abs() < 1e-8, "N={n} l={l} ({i},{r}) = {}", m[(i, r)]);
                }
            }
        }
    }
}

#[test]
fn three_particle_table() {
    let expect = [[1.0, -0.5, 0.0], [-0.5, 0.5, -0.25], [0.25, -0.375, 13.0 / 40.0]];
    for (l, row) in expect.iter().enumerate() {
        let got = exact_eigenvalues(3, l);
        for (r, e) in row.iter().enumerate() {
            assert!((got[r] - e).abs() < 1e-9, "l={l} r={r}: {} vs {e}", got[r]);
        }
    }
}

#[test]
fn closed_forms_match_quadrature() {
    for n in 3..=10 {
        let l0 = exact_eigenvalues(n, 0);
        let l1 = exact_eigenvalues(n, 1);
        let l2 = exact_eigenvalues(n, 2);
        assert!((l0[0] - 1.0).abs() < 1e-9);
        // |v|^2 and v are conserved
        assert!((l0[1] - kappa_conserved(n)).abs() < 1e-9);
        assert!((l1[0] - kappa_conserved(n)).abs() < 1e-9);
        // largest non-trivial eigenvalue is the l = 1, |v|^2 v mode
        let others: Vec<f64> = l0[2..].iter().chain(&l1[1..]).chain(&l2[..]).copied().collect();
        let top = others.iter().copied().fold(f64::MIN, f64::max);
        assert!((top - kappa_upper(n)).abs() < 1e-9, "N={n}: {top}");
        assert!((l1[1] - kappa_upper(n)).abs() < 1e-9);
        // mu0 is the largest P0 block eigenvalue
        let nf = n as f64;
        let mut mu = (1.0 - kappa_conserved(n)) / nf;
        for k in &others {
            mu = mu.max((1.0 + (nf - 1.0) * k) / nf).max((1.0 - k) / nf);
        }
        assert!((mu - mu0_closed(n)).abs() < 1e-9, "N={n}: {mu} vs {}", mu0_closed(n));
    }
}

#[test]
fn documented_lower_bound_violation() {
    assert!((exact_eigenvalues(4, 1)[2] + 29.0 / 243.0).abs() < 1e-9);
    assert!((exact_eigenvalues(8, 1)[2] + 563.0 / 50421.0).abs() < 1e-9);
}

#[test]
fn monte_carlo_spectrum_matches_exact_values() {
    let n = 3;
    let mut exact: Vec<f64> = Vec::new();
    for l in 0..=2 {
        exact.extend(exact_eigenvalues(n, l).iter().take(3));
    }
    let basis = SingleParticleBasis::default_for(n).unwrap();
    let mut rng = stream_rng(7001, 0);
    let spec = k_spectrum(&basis, 200_000, &mut rng).unwrap();
    for (e, mode) in spec.eigenvalues.iter().zip(&spec.modes) {
        let d = exact.iter().map(|x| (x - e).abs()).fold(f64::INFINITY, f64::min);
        assert!(d < 0.02, "MC eigenvalue {e} ({mode:?}) is {d} from every exact value");
    }
    let top = spec.largest_other().unwrap();
    assert!((top - kappa_upper(n)).abs() < 0.02);
    assert!(spec.of_mode(Mode::Constant).len() == 1);
}
