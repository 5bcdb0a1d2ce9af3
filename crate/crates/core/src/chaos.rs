//! Chaoticity diagnostics: single-particle moments against the Gaussian
//! limit, conditional fourth moments, weight deviations and pair
//! correlations.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::{weight_pow, Vec3};
use crate::rng::par_chunks;
use crate::sampling::{fill_conditional_slice, fill_invariant_recursive, RadialLawNu};
use crate::spectral::basis::{marginal_moment, SingleParticleBasis};
use crate::spectral::kspec::{k_apply, kappa_upper};
use crate::stats::{Estimate, MeanAcc};

/// Where a reference value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// A value stated in the published analysis.
    Published,
    /// A value derived independently (closed form or exact algebra).
    Derived,
    /// A sanity value that holds by construction.
    Trivial,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Published => "published",
            Provenance::Derived => "derived",
            Provenance::Trivial => "trivial",
        }
    }
}

/// One Monte Carlo moment compared against a reference at 3 sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub observable: String,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: f64,
    pub provenance: Provenance,
    pub pass: bool,
}

impl MomentReport {
    pub fn new(n: usize, observable: impl Into<String>, est: Estimate, reference: f64, provenance: Provenance) -> Self {
        let pass = (est.value - reference).abs() <= 3.0 * est.stderr + 1e-12 * reference.abs().max(1.0);
        Self { n, observable: observable.into(), estimate: est.value, stderr: est.stderr, reference, provenance, pass }
    }
}

/// Write reports as CSV: `N,observable,estimate,stderr,reference,provenance_tag,pass`.
pub fn write_moment_csv<W: Write>(w: &mut W, reports: &[MomentReport]) -> Result<()> {
    writeln!(w, "N,observable,estimate,stderr,reference,provenance_tag,pass")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.n,
            r.observable,
            r.estimate,
            r.stderr,
            r.reference,
            r.provenance.tag(),
            if r.pass { "pass" } else { "fail" }
        )?;
    }
    Ok(())
}

/// `E|g|^{2m}` for an isotropic Gaussian with per-component variance 1/3.
pub fn gaussian_moment(m: u32) -> f64 {
    (0..m).map(|i| (3.0 + 2.0 * i as f64) / 3.0).product()
}

/// Monte Carlo `E|v_1|^{order}` under sigma_N for even orders, against the
/// exact finite-N value. The Gaussian limit is `gaussian_moment(order / 2)`.
pub fn marginal_moments<R: Rng + ?Sized>(
    n: usize,
    orders: &[u32],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<MomentReport>> {
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    if let Some(o) = orders.iter().find(|o| *o % 2 != 0 || **o == 0) {
        return Err(KacError::InvalidArgument(format!("order {o} must be even and positive")));
    }
    let k = orders.len();
    let accs = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut v = vec![Vec3::zeros(); n];
            let mut accs = vec![MeanAcc::new(); k];
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                let r2 = v[0].norm_squared();
                for (acc, &o) in accs.iter_mut().zip(orders) {
                    acc.push(r2.powi(o as i32 / 2));
                }
            }
            accs
        },
        |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
    )
    .unwrap_or_else(|| vec![MeanAcc::new(); k]);
    Ok(orders
        .iter()
        .zip(accs)
        .map(|(&o, acc)| {
            let prov = if o == 2 { Provenance::Trivial } else { Provenance::Derived };
            MomentReport::new(n, format!("E|v1|^{o}"), acc.estimate(), marginal_moment(n, o / 2), prov)
        })
        .collect())
}

/// Fourth moment `E|p + s y|^4` of a particle on an affinely scaled
/// `m`-particle manifold: mean `p`, spread `s^2`, `y` under sigma_m.
fn affine_moment4(p: &Vec3, s2: f64, m: usize) -> f64 {
    let p2 = p.norm_squared();
    p2 * p2 + 10.0 / 3.0 * p2 * s2 + s2 * s2 * marginal_moment(m, 2)
}

/// Conditional fourth moment given one or two fixed particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondMoment {
    #[serde(rename = "N")]
    pub n: usize,
    pub estimate: Estimate,
    /// The bound-function value `S` the deviation is measured against.
    pub s_value: f64,
    /// Exact conditional moment from the affine structure of the slice.
    pub exact: f64,
}

impl CondMoment {
    pub fn deviation(&self) -> f64 {
        (self.estimate.value - self.s_value).abs()
    }
}

/// `S(v) = (N^2 + |v|^4 - 2N|v|^2)/(N-1)^2`.
pub fn s_one(n: usize, v: &Vec3) -> f64 {
    let nf = n as f64;
    let a = v.norm_squared();
    (nf * nf + a * a - 2.0 * nf * a) / ((nf - 1.0) * (nf - 1.0))
}

/// `S(v, w) = (N^2 + |v|^4 + |w|^4 + 2N|v|^2 + 2N|w|^2 + 2|v|^2|w|^2)/(N-2)^2`.
pub fn s_two(n: usize, v: &Vec3, w: &Vec3) -> f64 {
    let nf = n as f64;
    let a = v.norm_squared();
    let b = w.norm_squared();
    (nf * nf + a * a + b * b + 2.0 * nf * a + 2.0 * nf * b + 2.0 * a * b) / ((nf - 2.0) * (nf - 2.0))
}

/// Exact `E{|v_1|^4 | v_N = v}`.
pub fn cond_moment4_one_exact(n: usize, v: &Vec3) -> Result<f64> {
    let nf = n as f64;
    let a = v.norm_squared();
    if n < 3 || a > (nf - 1.0) * (1.0 + 1e-12) {
        return Err(KacError::Domain(format!("|v|^2 = {a} not in [0, N-1] or N < 3")));
    }
    let p = -v / (nf - 1.0);
    let e = (nf - a) / (nf - 1.0);
    let s2 = (e - p.norm_squared()).max(0.0);
    Ok(affine_moment4(&p, s2, n - 1))
}

/// Monte Carlo `E{|v_1|^4 | v_N = v}` with `S(v)` and the exact value.
pub fn cond_moment4_one<R: Rng + ?Sized>(n: usize, v: &Vec3, n_samples: usize, rng: &mut R) -> Result<CondMoment> {
    let exact = cond_moment4_one_exact(n, v)?;
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut buf = vec![Vec3::zeros(); n];
            let mut acc = MeanAcc::new();
            for _ in 0..count {
                fill_conditional_slice(&mut buf, n - 1, v, r).expect("checked domain");
                let s: f64 = buf[..n - 1].iter().map(|x| x.norm_squared().powi(2)).sum();
                acc.push(s / (n - 1) as f64);
            }
            acc
        },
        MeanAcc::merge,
    )
    .ok_or_else(|| KacError::InvalidArgument("n_samples must be >= 1".into()))?;
    Ok(CondMoment { n, estimate: acc.estimate(), s_value: s_one(n, v), exact })
}

/// Centre and spread of the remaining `N-2` particles given `(v, w)`.
fn two_slice(n: usize, v: &Vec3, w: &Vec3) -> Result<(Vec3, f64)> {
    if n < 4 {
        return Err(KacError::TooFewParticles(n, 4));
    }
    let m = n as f64 - 2.0;
    let p = -(v + w) / m;
    let e = (n as f64 - v.norm_squared() - w.norm_squared()) / m;
    let s2 = e - p.norm_squared();
    if s2 < -1e-12 {
        return Err(KacError::Domain(format!("(v, w) cannot be extended to a state: spread {s2}")));
    }
    Ok((p, s2.max(0.0)))
}

/// Exact `E{|v_1|^4 | (v_{N-1}, v_N) = (v, w)}`.
pub fn cond_moment4_two_exact(n: usize, v: &Vec3, w: &Vec3) -> Result<f64> {
    let (p, s2) = two_slice(n, v, w)?;
    Ok(affine_moment4(&p, s2, n - 2))
}

/// Monte Carlo `E{|v_1|^4 | (v_{N-1}, v_N) = (v, w)}` with `S(v, w)` and the
/// exact value. The remaining particles are `p + s y` with `y` under
/// sigma_{N-2}.
pub fn cond_moment4_two<R: Rng + ?Sized>(
    n: usize,
    v: &Vec3,
    w: &Vec3,
    n_samples: usize,
    rng: &mut R,
) -> Result<CondMoment> {
    let (p, s2) = two_slice(n, v, w)?;
    let exact = affine_moment4(&p, s2, n - 2);
    let s = s2.sqrt();
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut y = vec![Vec3::zeros(); n - 2];
            let mut acc = MeanAcc::new();
            for _ in 0..count {
                fill_invariant_recursive(&mut y, r).expect("n - 2 >= 2");
                let t: f64 = y.iter().map(|x| (p + x * s).norm_squared().powi(2)).sum();
                acc.push(t / (n - 2) as f64);
            }
            acc
        },
        MeanAcc::merge,
    )
    .ok_or_else(|| KacError::InvalidArgument("n_samples must be >= 1".into()))?;
    Ok(CondMoment { n, estimate: acc.estimate(), s_value: s_two(n, v, w), exact })
}

/// The default one-axis grid of `|v|` values: `0, 0.5, 1, 1.5, sqrt((N-1)/2)`.
pub fn v_grid(n: usize) -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, ((n as f64 - 1.0) / 2.0).sqrt()]
}

/// Supremum of the Monte Carlo `K|v|^8` over `|v|` in `grid` along the x axis.
pub fn k_v8_sup<R: Rng + ?Sized>(
    n: usize,
    grid: &[f64],
    n_samples: usize,
    rng: &mut R,
) -> Result<(f64, Vec<Estimate>)> {
    let phi = |x: &Vec3| x.norm_squared().powi(4);
    let mut out = Vec::with_capacity(grid.len());
    for &a in grid {
        out.push(k_apply(&phi, &Vec3::new(a, 0.0, 0.0), n, n_samples, rng)?);
    }
    let sup = out.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    Ok((sup, out))
}

/// `(E|w_N(v_k)^{alpha/2} - 1|^p)^{1/p}` with a delta-method error.
pub fn wdev_lp<R: Rng + ?Sized>(n: usize, alpha: f64, p: f64, n_samples: usize, rng: &mut R) -> Result<Estimate> {
    if !(p >= 1.0) {
        return Err(KacError::InvalidArgument(format!("p = {p} must be >= 1")));
    }
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    if alpha == 0.0 {
        return Ok(Estimate { value: 0.0, stderr: 0.0, n: n_samples as u64 });
    }
    let nu = RadialLawNu::new(n)?;
    let root = ((n - 1) as f64).sqrt();
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut acc = MeanAcc::new();
            for _ in 0..count {
                let v = nu.sample(r).get() * root;
                let w = weight_pow(&v, n, alpha).unwrap_or(0.0);
                acc.push((w - 1.0).abs().powf(p));
            }
            acc
        },
        MeanAcc::merge,
    )
    .ok_or_else(|| KacError::InvalidArgument("n_samples must be >= 1".into()))?;
    let m = acc.mean();
    let value = m.powf(1.0 / p);
    let stderr = if m > 0.0 { acc.stderr() * value / (p * m) } else { 0.0 };
    Ok(Estimate { value, stderr, n: acc.count() })
}

/// Pair correlations under sigma_N: `E[v_1 . v_2]`, `E[|v_1|^2 |v_2|^2]`
/// against exact algebra, and `E[phi(v_1) phi(v_2)]` for every basis member
/// orthogonal to `1, v, |v|^2`, compared with the bound
/// `(5N-3)/(3(N-1)^3)` on its absolute value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointChaosReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub moments: Vec<MomentReport>,
    /// `(basis index, correlation estimate)` for the high modes.
    pub high_mode_correlations: Vec<(usize, Estimate)>,
    pub bound: f64,
    pub within_bound: bool,
    pub max_abs_covariance: f64,
}

pub fn joint_chaos_test<R: Rng + ?Sized>(n: usize, n_samples: usize, rng: &mut R) -> Result<JointChaosReport> {
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let basis = SingleParticleBasis::default_for(n)?;
    let high: Vec<usize> = (5..basis.len()).collect();
    let nh = high.len();
    let accs = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut v = vec![Vec3::zeros(); n];
            let mut accs = vec![MeanAcc::new(); 2 + nh];
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                accs[0].push(v[0].dot(&v[1]));
                accs[1].push(v[0].norm_squared() * v[1].norm_squared());
                for (a, &i) in accs[2..].iter_mut().zip(&high) {
                    let f = &basis.functions[i];
                    a.push(f.eval(&v[0]) * f.eval(&v[1]));
                }
            }
            accs
        },
        |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
    )
    .ok_or_else(|| KacError::InvalidArgument("n_samples must be >= 1".into()))?;
    let nf = n as f64;
    let m4 = marginal_moment(n, 2);
    let dot = accs[0].estimate();
    let sq = accs[1].estimate();
    let moments = vec![
        MomentReport::new(n, "E[v1.v2]", dot, -1.0 / (nf - 1.0), Provenance::Derived),
        MomentReport::new(n, "E[|v1|^2|v2|^2]", sq, (nf - m4) / (nf - 1.0), Provenance::Derived),
    ];
    let bound = kappa_upper(n);
    let high_mode_correlations: Vec<(usize, Estimate)> =
        high.iter().zip(&accs[2..]).map(|(&i, a)| (i, a.estimate())).collect();
    let within_bound = high_mode_correlations.iter().all(|(_, e)| e.value.abs() <= bound + 3.0 * e.stderr);
    let max_abs_covariance = high_mode_correlations
        .iter()
        .map(|(_, e)| e.value.abs())
        .chain([dot.value.abs(), (sq.value - 1.0).abs()])
        .fold(0.0, f64::max);
    Ok(JointChaosReport { n, moments, high_mode_correlations, bound, within_bound, max_abs_covariance })
}

/// Least-squares constant `C` of `deviation ~ C/N` over an N-sweep, the
/// per-N values `N * deviation`, and whether every per-N value lies within
/// +-50% of `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CFit {
    pub c: f64,
    pub scaled: Vec<(usize, f64)>,
    pub stable: bool,
}

pub fn fit_c(points: &[(usize, f64)]) -> Result<CFit> {
    if points.is_empty() {
        return Err(KacError::InvalidArgument("empty sweep".into()));
    }
    let scaled: Vec<(usize, f64)> = points.iter().map(|&(n, d)| (n, n as f64 * d)).collect();
    let c = scaled.iter().map(|s| s.1).sum::<f64>() / scaled.len() as f64;
    let stable = scaled.iter().all(|&(_, s)| (s - c).abs() <= 0.5 * c.abs());
    Ok(CFit { c, scaled, stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn gaussian_moments() {
        assert!((gaussian_moment(1) - 1.0).abs() < 1e-15);
        assert!((gaussian_moment(2) - 5.0 / 3.0).abs() < 1e-15);
        assert!((gaussian_moment(3) - 35.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn s_values() {
        assert!((s_one(8, &Vec3::zeros()) - 64.0 / 49.0).abs() < 1e-15);
        assert!((s_two(8, &Vec3::zeros(), &Vec3::zeros()) - 16.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn three_particle_moments() {
        let mut rng = stream_rng(60, 0);
        let r = marginal_moments(3, &[2, 4, 6], 200_000, &mut rng).unwrap();
        assert!((r[0].reference - 1.0).abs() < 1e-15);
        assert!((r[1].reference - 1.25).abs() < 1e-14);
        assert!((r[2].reference - 1.75).abs() < 1e-14);
        assert!(r.iter().all(|m| m.pass), "{r:?}");
    }

    #[test]
    fn odd_orders_rejected() {
        let mut rng = stream_rng(61, 0);
        assert!(marginal_moments(3, &[3], 10, &mut rng).is_err());
    }

    #[test]
    fn conditional_one_matches_exact() {
        let mut rng = stream_rng(62, 0);
        for a in v_grid(8) {
            let c = cond_moment4_one(8, &Vec3::new(a, 0.0, 0.0), 100_000, &mut rng).unwrap();
            assert!(c.estimate.within(c.exact, 4.0), "{a}: {c:?}");
        }
    }

    #[test]
    fn conditional_one_boundary_is_degenerate() {
        let mut rng = stream_rng(63, 0);
        let v = Vec3::new(7f64.sqrt(), 0.0, 0.0);
        let c = cond_moment4_one(8, &v, 1000, &mut rng).unwrap();
        let forced = (7f64.sqrt() / 7.0).powi(4);
        assert!((c.exact - forced).abs() < 1e-12);
        assert!((c.estimate.value - forced).abs() < 1e-9);
    }

    #[test]
    fn conditional_one_outside_domain() {
        let mut rng = stream_rng(64, 0);
        assert!(cond_moment4_one(8, &Vec3::new(3.0, 0.0, 0.0), 10, &mut rng).is_err());
    }

    #[test]
    fn conditional_two_matches_exact_and_rejects_infeasible() {
        let mut rng = stream_rng(65, 0);
        for a in [0.0, 0.5, 1.0, 1.5, (0.9 * 3.0f64).sqrt()] {
            let v = Vec3::new(a, 0.0, 0.0);
            let c = cond_moment4_two(8, &v, &v, 100_000, &mut rng).unwrap();
            assert!(c.estimate.value.is_finite());
            assert!(c.estimate.within(c.exact, 4.0), "{a}: {c:?}");
        }
        let v = Vec3::new(2.0, 0.0, 0.0);
        assert!(cond_moment4_two(8, &v, &v, 10, &mut rng).is_err());
    }

    #[test]
    fn isotropy_spot_check() {
        let mut rng = stream_rng(66, 0);
        let a = cond_moment4_one(8, &Vec3::new(1.0, 0.0, 0.0), 100_000, &mut rng).unwrap();
        let b = cond_moment4_one(8, &Vec3::new(0.0, 0.6, 0.8), 100_000, &mut rng).unwrap();
        let se = (a.estimate.stderr.powi(2) + b.estimate.stderr.powi(2)).sqrt();
        assert!((a.estimate.value - b.estimate.value).abs() < 4.0 * se);
        assert!((a.exact - b.exact).abs() < 1e-12);
    }

    #[test]
    fn weight_deviation_alpha_zero_and_two() {
        let mut rng = stream_rng(67, 0);
        assert_eq!(wdev_lp(8, 0.0, 2.0, 100, &mut rng).unwrap().value, 0.0);
        // w - 1 = (N - 1 - N|v|^2)/(N-1)^2, so its second moment follows from
        // E|v|^2 = 1 and E|v|^4.
        let n = 8.0;
        let m4 = marginal_moment(8, 2);
        let exact = (((n - 1.0) * (n - 1.0) - 2.0 * n * (n - 1.0) + n * n * m4) / (n - 1.0).powi(4)).sqrt();
        let e = wdev_lp(8, 2.0, 2.0, 400_000, &mut rng).unwrap();
        assert!(e.within(exact, 4.0), "{e:?} vs {exact}");
    }

    #[test]
    fn joint_chaos_small_n() {
        let mut rng = stream_rng(68, 0);
        let r = joint_chaos_test(4, 200_000, &mut rng).unwrap();
        assert!(r.moments.iter().all(|m| m.pass), "{:?}", r.moments);
        assert!(r.within_bound);
    }

    #[test]
    fn c_fit() {
        let f = fit_c(&[(8, 0.5), (16, 0.25), (32, 0.125)]).unwrap();
        assert!((f.c - 4.0).abs() < 1e-12 && f.stable);
        let g = fit_c(&[(8, 0.5), (16, 0.5), (32, 0.5)]).unwrap();
        assert!(!g.stable);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let r = MomentReport::new(3, "x", Estimate { value: 1.0, stderr: 0.1, n: 10 }, 1.0, Provenance::Trivial);
        let mut out = Vec::new();
        write_moment_csv(&mut out, &[r]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 2);
        assert!(s.lines().nth(1).unwrap().ends_with("trivial,pass"));
    }
}
