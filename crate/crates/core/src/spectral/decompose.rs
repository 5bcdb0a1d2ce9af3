//! Trial-function decomposition `f = g + s + h`, the action of `P_k` on the
//! conserved part `s`, and construction of functions in the common null
//! space of the `P_k`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::{post_collision_pair, sample_scatter_direction, weight_pow, KernelSpec, ParticleState, Vec3};
use crate::rng::par_chunks;
use crate::sampling::{
    fill_conditional_slice, fill_invariant_recursive, lift_in_place, sample_invariant_recursive, RadialLawNu,
};
use crate::spectral::basis::SingleParticleBasis;
use crate::spectral::dirichlet::{dirichlet_kac, Frame};
use crate::spectral::trial::{SumForm, TrialFunction};
use crate::stats::{bonferroni_z, combined_stderr, Estimate, MeanAcc};

#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Coefficients only on basis members beyond eta_0..eta_4.
    pub g: SumForm,
    /// Coefficients only on eta_1..eta_4, summing to zero over particles.
    pub s: SumForm,
    /// Null-space part; absent for sum-form inputs.
    pub h: Option<TrialFunction>,
    /// Per-member mean `t_i = (1/N) sum_j a[j, i]` removed from the conserved
    /// coefficients.
    pub shifts: Vec<(usize, f64)>,
    /// `sum_k ||psi_k||^2` and `sum_k ||varphi_k||^2` (exact by orthonormality).
    pub s_component_norm2: f64,
    pub g_component_norm2: f64,
}

impl Decomposition {
    /// Reassemble `g + s` as a single sum form.
    pub fn p(&self) -> SumForm {
        SumForm { basis: self.g.basis.clone(), coeffs: &self.g.coeffs + &self.s.coeffs }
    }
}

/// Split a mean-zero sum form into its high-mode part `g` and its
/// conserved-mode part `s`. Subtracting the particle average of each
/// conserved coefficient does not change the function on the manifold,
/// since `sum_j v_j = 0` and `sum_j (|v_j|^2 - 1) = 0`.
pub fn trial_decompose(f: &SumForm) -> Result<Decomposition> {
    if !f.is_mean_zero() {
        return Err(KacError::InvalidArgument("every phi_j must be orthogonal to the constants".into()));
    }
    let n = f.n();
    let conserved = f.basis.conserved_indices();
    let mut g = SumForm::zeros(f.basis.clone());
    let mut s = SumForm::zeros(f.basis.clone());
    let mut shifts = Vec::new();
    for i in 1..f.basis.len() {
        if conserved.contains(&i) {
            let t = f.coeffs.column(i).sum() / n as f64;
            shifts.push((i, t));
            for j in 0..n {
                s.coeffs[(j, i)] = f.coeffs[(j, i)] - t;
            }
        } else {
            for j in 0..n {
                g.coeffs[(j, i)] = f.coeffs[(j, i)];
            }
        }
    }
    let s_component_norm2 = s.component_norm2();
    let g_component_norm2 = g.component_norm2();
    Ok(Decomposition { g, s, h: None, shifts, s_component_norm2, g_component_norm2 })
}

/// Bounds `(c_N, C_N)` with `c_N sum ||phi_k||^2 <= ||f||^2 <= C_N sum ||phi_k||^2`
/// for decomposed sum forms.
pub fn sandwich_bounds(n: usize) -> (f64, f64) {
    let m = n as f64 - 1.0;
    let nf = n as f64;
    (1.0 - (7.0 * nf - 3.0) / (3.0 * m * m * m), 1.0 + (5.0 * nf - 3.0) / (3.0 * m * m))
}

/// Monte Carlo `E[f g]` under sigma_N.
pub fn inner_product<R: Rng + ?Sized>(
    f: &TrialFunction,
    g: &TrialFunction,
    n: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut v = vec![Vec3::zeros(); n];
            let mut acc = MeanAcc::new();
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                acc.push(f.eval(&v) * g.eval(&v));
            }
            acc
        },
        MeanAcc::merge,
    )
    .unwrap_or_default();
    Ok(acc.estimate())
}

/// Random mean-zero sum form with independent standard normal coefficients.
pub fn random_sumform<R: Rng + ?Sized>(basis: &Arc<SingleParticleBasis>, rng: &mut R) -> SumForm {
    use rand_distr::{Distribution, StandardNormal};
    let mut coeffs = DMatrix::zeros(basis.n, basis.len());
    for j in 0..basis.n {
        for i in 1..basis.len() {
            coeffs[(j, i)] = StandardNormal.sample(rng);
        }
    }
    SumForm { basis: basis.clone(), coeffs }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PkSReport {
    pub n: usize,
    pub comparisons: usize,
    pub threshold_z: f64,
    /// Factor the identity is checked against and the worst |z| for it.
    pub factor_stated: f64,
    pub max_z_stated: f64,
    /// Factor `N/(N-1)` that follows from `sum_j psi_j = 0` and the K
    /// eigenvalue `-1/(N-1)` on conserved functions.
    pub factor_derived: f64,
    pub max_z_derived: f64,
    pub pass_stated: bool,
    pub pass_derived: bool,
}

/// Compare a Monte Carlo `P_k s` against `c psi_k(v_k)` at `n_states`
/// sampled states for every k, with `c = (N-2)/(N-1)` and `c = N/(N-1)`.
pub fn verify_pk_s<R: Rng + ?Sized>(s: &SumForm, n_states: usize, n_inner: usize, rng: &mut R) -> Result<PkSReport> {
    let n = s.n();
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let nf = n as f64;
    let stated = (nf - 2.0) / (nf - 1.0);
    let derived = nf / (nf - 1.0);
    let f = TrialFunction::SumForm(s.clone());
    let mut max_s: f64 = 0.0;
    let mut max_d: f64 = 0.0;
    let mut comparisons = 0;
    for _ in 0..n_states {
        let state = sample_invariant_recursive(n, rng)?;
        for k in 0..n {
            let (est, se) = pk_with_error(&f, &state, k, n_inner, rng)?;
            let psi = s.phi(k, &state.velocities[k]);
            let z = |c: f64| {
                let d = est - c * psi;
                if se > 0.0 {
                    (d / se).abs()
                } else if d.abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            };
            max_s = max_s.max(z(stated));
            max_d = max_d.max(z(derived));
            comparisons += 1;
        }
    }
    let threshold_z = bonferroni_z(comparisons);
    Ok(PkSReport {
        n,
        comparisons,
        threshold_z,
        factor_stated: stated,
        max_z_stated: max_s,
        factor_derived: derived,
        max_z_derived: max_d,
        pass_stated: max_s <= threshold_z,
        pass_derived: max_d <= threshold_z,
    })
}

/// `P_k f` at `state` with the standard error of the slice average.
pub fn pk_with_error<R: Rng + ?Sized>(
    f: &TrialFunction,
    state: &ParticleState,
    k: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_inner < 2 {
        return Err(KacError::InvalidArgument("need at least 2 inner samples".into()));
    }
    let mut buf = state.velocities.clone();
    let fixed = state.velocities[k];
    let mut acc = MeanAcc::new();
    for _ in 0..n_inner {
        fill_conditional_slice(&mut buf, k, &fixed, rng)?;
        acc.push(f.eval(&buf));
    }
    Ok((acc.mean(), acc.stderr()))
}

/// A function annihilated by every `P_k`: the z component of `v_1 x v_2`
/// (exactly in the null space: given `v_1` it averages to
/// `v_1 x E[v_2 | v_1]`, parallel vectors; given any other `v_k` it is odd
/// under exchanging particles 1 and 2) plus `(v_1 . v_2)^2` minus its
/// least-squares projection onto sums of single-particle functions. By the
/// symmetries of that seed the projection lies in the span of 1,
/// `r(v_1) + r(v_2)`, `q(v_1) + q(v_2)` and `sum_{j>=3} q(v_j)` with `r`, `q`
/// the radial basis members of degree 2 and 4; the coefficients are fitted
/// on `n_fit` samples. For N = 3 the second part vanishes identically.
pub fn null_space_function<R: Rng + ?Sized>(n: usize, n_fit: usize, rng: &mut R) -> Result<TrialFunction> {
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let basis = Arc::new(SingleParticleBasis::new(n, 4, 0)?);
    let feats = {
        let b = basis.clone();
        move |v: &[Vec3]| -> [f64; 4] {
            let r = |x: &Vec3| b.functions[1].eval(x);
            let q = |x: &Vec3| b.functions[2].eval(x);
            [1.0, r(&v[0]) + r(&v[1]), q(&v[0]) + q(&v[1]), v[2..].iter().map(q).sum()]
        }
    };
    let seed_fn = |v: &[Vec3]| v[0].dot(&v[1]).powi(2);
    let (xtx, xty) = par_chunks(
        rng,
        n_fit,
        |r, count| {
            let mut v = vec![Vec3::zeros(); n];
            let mut xtx = DMatrix::<f64>::zeros(4, 4);
            let mut xty = DVector::<f64>::zeros(4);
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                let x = DVector::from_row_slice(&feats(&v));
                xtx += &x * x.transpose();
                xty += &x * seed_fn(&v);
            }
            (xtx, xty)
        },
        |(a, b), (c, d)| (a + c, b + d),
    )
    .ok_or_else(|| KacError::InvalidArgument("n_fit must be >= 1".into()))?;
    let coef = xtx.cholesky().ok_or_else(|| KacError::Singular("null-space fit".into()))?.solve(&xty);
    let c: [f64; 4] = [coef[0], coef[1], coef[2], coef[3]];
    Ok(TrialFunction::opaque("null-space", true, move |v| {
        let x = feats(v);
        let cross = v[0].x * v[1].y - v[0].y * v[1].x;
        cross + seed_fn(v) - (0..4).map(|i| c[i] * x[i]).sum::<f64>()
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecursionReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    /// `E_{N,alpha}(f, f)` evaluated directly.
    pub direct: Estimate,
    /// `(N/(N-1)) (1/N) sum_k E[w^{alpha/2}(v_k) E_{N-1,alpha}(f | v_k)]`.
    pub recursive: Estimate,
    pub z: f64,
    pub pass: bool,
}

/// Check the recursion of the Kac Dirichlet form through conditional forms.
/// The right side draws `v_k` from the radial law, an inner state from
/// sigma_{N-1}, collides two inner particles and lifts both inner states.
pub fn recursion_check<R: Rng + ?Sized>(
    f: &TrialFunction,
    n: usize,
    kernel: &KernelSpec,
    n_samples: usize,
    rng: &mut R,
) -> Result<RecursionReport> {
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let direct = dirichlet_kac(f, f, n, kernel, &Frame::default(), n_samples, rng)?;
    let nu = RadialLawNu::new(n)?;
    let alpha = kernel.alpha;
    let nf = n as f64;
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut acc = MeanAcc::new();
            let mut inner = vec![Vec3::zeros(); n - 1];
            let mut x = vec![Vec3::zeros(); n];
            let mut xp = vec![Vec3::zeros(); n];
            for _ in 0..count {
                let k = r.random_range(0..n);
                let v = nu.sample(r).get();
                fill_invariant_recursive(&mut inner, r).expect("n - 1 >= 2");
                let a = r.random_range(0..n - 1);
                let mut b = r.random_range(0..n - 2);
                if b >= a {
                    b += 1;
                }
                let rel = inner[a] - inner[b];
                let g = rel.norm();
                let dir = if g > 0.0 { rel / g } else { Vec3::x() };
                let sigma = sample_scatter_direction(&dir, kernel, r);
                let (ya, yb) = post_collision_pair(&inner[a], &inner[b], &sigma);
                let fill = |out: &mut [Vec3], ya: Vec3, yb: Vec3| {
                    let mut idx = 0;
                    for (j, slot) in out.iter_mut().enumerate() {
                        if j == k {
                            continue;
                        }
                        *slot = if idx == a {
                            ya
                        } else if idx == b {
                            yb
                        } else {
                            inner[idx]
                        };
                        idx += 1;
                    }
                    lift_in_place(out, k, &v);
                };
                fill(&mut x, inner[a], inner[b]);
                fill(&mut xp, ya, yb);
                let w = weight_pow(&x[k], n, alpha).unwrap_or(0.0);
                let d = f.eval(&xp) - f.eval(&x);
                let cond = 0.5 * (nf - 1.0) * g.powf(alpha) * d * d;
                acc.push(nf / (nf - 1.0) * w * cond);
            }
            acc
        },
        MeanAcc::merge,
    )
    .ok_or_else(|| KacError::InvalidArgument("n_samples must be >= 1".into()))?;
    let recursive = acc.estimate();
    let se = combined_stderr(&direct, &recursive);
    let diff = (direct.value - recursive.value).abs();
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(RecursionReport { n, alpha, direct, recursive, z, pass: z <= 3.0 })
}
