//! Monte Carlo Dirichlet forms of the Kac process and the conjugate process
//! over a family of trial functions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::{
    binom2, post_collision_pair, rel_speed_pow, sample_scatter_direction, uniform_sphere, weight_pow, KernelSpec, Vec3,
};
use crate::rng::par_chunks;
use crate::sampling::{fill_conditional_slice, fill_invariant_recursive};
use crate::spectral::trial::{FamilyEval, TrialFunction};
use crate::stats::Estimate;

/// Energy and momentum per particle of the manifold the forms are taken on.
/// States are drawn on S_{N,1,0} and carried over by the affine map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub energy: f64,
    pub momentum: Vec3,
}

impl Default for Frame {
    fn default() -> Self {
        Self { energy: 1.0, momentum: Vec3::zeros() }
    }
}

/// Sampling effort for the form estimators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FormOpts {
    /// Kac: pairs per state; all pairs are used when there are at most this many.
    pub pairs_per_sample: usize,
    /// Conjugate: frozen coordinates per state; all are used when N is at most this.
    pub coords_per_sample: usize,
    /// Conjugate: slice draws in each of the two independent inner estimates.
    pub inner_samples: usize,
}

impl Default for FormOpts {
    fn default() -> Self {
        Self { pairs_per_sample: 28, coords_per_sample: 16, inner_samples: 1 }
    }
}

/// Monte Carlo estimates of the Dirichlet matrix `A` and covariance matrix
/// `B` over a trial family, with elementwise standard errors of `A`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormMatrices {
    pub dirichlet: DMatrix<f64>,
    pub dirichlet_se: DMatrix<f64>,
    pub second_moment: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub n_samples: usize,
}

impl FormMatrices {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }

    pub fn entry(&self, a: usize, b: usize) -> Estimate {
        Estimate { value: self.dirichlet[(a, b)], stderr: self.dirichlet_se[(a, b)], n: self.n_samples as u64 }
    }

    /// Sample-weighted average of several independent estimates.
    pub fn pool(parts: &[FormMatrices]) -> FormMatrices {
        let total: usize = parts.iter().map(|p| p.n_samples).sum();
        let m = parts[0].dirichlet.nrows();
        let mut out = FormMatrices {
            dirichlet: DMatrix::zeros(m, m),
            dirichlet_se: DMatrix::zeros(m, m),
            second_moment: DMatrix::zeros(m, m),
            mean: DVector::zeros(m),
            n_samples: total,
        };
        for p in parts {
            let w = p.n_samples as f64 / total as f64;
            out.dirichlet += &p.dirichlet * w;
            out.second_moment += &p.second_moment * w;
            out.mean += &p.mean * w;
            out.dirichlet_se += p.dirichlet_se.map(|s| (s * w) * (s * w));
        }
        out.dirichlet_se = out.dirichlet_se.map(f64::sqrt);
        out
    }
}

#[derive(Clone)]
struct Acc {
    n: usize,
    a: DMatrix<f64>,
    a2: DMatrix<f64>,
    m2: DMatrix<f64>,
    m1: DVector<f64>,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            n: 0,
            a: DMatrix::zeros(m, m),
            a2: DMatrix::zeros(m, m),
            m2: DMatrix::zeros(m, m),
            m1: DVector::zeros(m),
        }
    }

    fn push(&mut self, x: &DMatrix<f64>, vals: &[f64]) {
        self.n += 1;
        self.a += x;
        self.a2 += x.component_mul(x);
        let v = DVector::from_column_slice(vals);
        self.m2 += &v * v.transpose();
        self.m1 += v;
    }

    fn merge(mut self, o: Acc) -> Acc {
        self.n += o.n;
        self.a += o.a;
        self.a2 += o.a2;
        self.m2 += o.m2;
        self.m1 += o.m1;
        self
    }

    fn finish(self) -> FormMatrices {
        let n = self.n as f64;
        let mean_a = &self.a / n;
        let var = (&self.a2 / n - mean_a.component_mul(&mean_a)).map(|v| v.max(0.0));
        let se = var.map(|v| (v * n / (n - 1.0).max(1.0) / n).sqrt());
        FormMatrices {
            dirichlet: mean_a,
            dirichlet_se: se,
            second_moment: self.m2 / n,
            mean: self.m1 / n,
            n_samples: self.n,
        }
    }
}

fn scale_into(v: &mut [Vec3], frame: &Frame) {
    let s = (frame.energy - frame.momentum.norm_squared()).sqrt();
    for x in v.iter_mut() {
        *x = frame.momentum + *x * s;
    }
}

/// Kac Dirichlet matrix `E(f_a, f_b)` and covariance over `family`.
///
/// `E(f, g) = (N/2) E_pair E[|v_i - v_j|^alpha (f - f o R)(g - g o R)]` with
/// the pair uniform and the scattering direction drawn from `b`.
pub fn kac_form_matrices<R: Rng + ?Sized>(
    family: &[TrialFunction],
    n: usize,
    kernel: &KernelSpec,
    frame: &Frame,
    opts: &FormOpts,
    n_samples: usize,
    rng: &mut R,
) -> Result<FormMatrices> {
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    if frame.energy <= frame.momentum.norm_squared() {
        return Err(KacError::DegenerateEnergy { energy: frame.energy, p2: frame.momentum.norm_squared() });
    }
    if family.is_empty() || n_samples < 2 {
        return Err(KacError::InvalidArgument("need a non-empty family and >= 2 samples".into()));
    }
    let m = family.len();
    let npairs = binom2(n) as usize;
    let all_pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let use_all = npairs <= opts.pairs_per_sample.max(1);
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut acc = Acc::new(m);
            let mut fe = FamilyEval::new(family);
            let mut v = vec![Vec3::zeros(); n];
            let mut vals = vec![0.0; m];
            let mut delta = vec![0.0; m];
            let mut x = DMatrix::<f64>::zeros(m, m);
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                scale_into(&mut v, frame);
                fe.eval_all(&v, &mut vals);
                x.fill(0.0);
                let reps = if use_all { npairs } else { opts.pairs_per_sample };
                for p in 0..reps {
                    let (i, j) = if use_all { all_pairs[p] } else { all_pairs[r.random_range(0..npairs)] };
                    let g = v[i] - v[j];
                    let gn = g.norm();
                    let reference = if gn > 0.0 { g / gn } else { uniform_sphere(r) };
                    let sigma = sample_scatter_direction(&reference, kernel, r);
                    let (a, b) = post_collision_pair(&v[i], &v[j], &sigma);
                    fe.pair_delta_all(&v, &vals, i, j, &a, &b, &mut delta);
                    let w = rel_speed_pow(gn, kernel.alpha);
                    for c in 0..m {
                        let dc = w * delta[c];
                        for d in c..m {
                            x[(c, d)] += dc * delta[d];
                        }
                    }
                }
                let scale = 0.5 * n as f64 / reps as f64;
                for c in 0..m {
                    for d in c..m {
                        let val = x[(c, d)] * scale;
                        x[(c, d)] = val;
                        x[(d, c)] = val;
                    }
                }
                acc.push(&x, &vals);
            }
            acc
        },
        Acc::merge,
    )
    .expect("n_samples >= 1");
    Ok(acc.finish())
}

/// Conjugate Dirichlet matrix `D(f_a, f_b) = (1/N) sum_k E[w^{alpha/2}(v_k)
/// (f_a - P_k f_a)(f_b - P_k f_b)]` and covariance over `family`.
///
/// Each `P_k f` is replaced by two independent slice averages and the
/// product is symmetrized across them, which removes the inner-variance bias
/// of naive squaring.
pub fn conjugate_form_matrices<R: Rng + ?Sized>(
    family: &[TrialFunction],
    n: usize,
    alpha: f64,
    opts: &FormOpts,
    n_samples: usize,
    rng: &mut R,
) -> Result<FormMatrices> {
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    if family.is_empty() || n_samples < 2 {
        return Err(KacError::InvalidArgument("need a non-empty family and >= 2 samples".into()));
    }
    let m = family.len();
    let inner = opts.inner_samples.max(1);
    let use_all = n <= opts.coords_per_sample.max(1);
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut acc = Acc::new(m);
            let mut fe = FamilyEval::new(family);
            let mut v = vec![Vec3::zeros(); n];
            let mut buf = vec![Vec3::zeros(); n];
            let mut vals = vec![0.0; m];
            let mut tmp = vec![0.0; m];
            let mut m1 = vec![0.0; m];
            let mut m2 = vec![0.0; m];
            let mut x = DMatrix::<f64>::zeros(m, m);
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                fe.eval_all(&v, &mut vals);
                x.fill(0.0);
                let reps = if use_all { n } else { opts.coords_per_sample };
                for p in 0..reps {
                    let k = if use_all { p } else { r.random_range(0..n) };
                    let w = weight_pow(&v[k], n, alpha).expect("sampled state is on the manifold");
                    for target in [&mut m1, &mut m2] {
                        target.fill(0.0);
                        for _ in 0..inner {
                            buf.copy_from_slice(&v);
                            fill_conditional_slice(&mut buf, k, &v[k], r).expect("on manifold");
                            fe.eval_all(&buf, &mut tmp);
                            for c in 0..m {
                                target[c] += tmp[c];
                            }
                        }
                        for c in 0..m {
                            target[c] = vals[c] - target[c] / inner as f64;
                        }
                    }
                    for c in 0..m {
                        for d in c..m {
                            x[(c, d)] += 0.5 * w * (m1[c] * m2[d] + m2[c] * m1[d]);
                        }
                    }
                }
                for c in 0..m {
                    for d in c..m {
                        let val = x[(c, d)] / reps as f64;
                        x[(c, d)] = val;
                        x[(d, c)] = val;
                    }
                }
                acc.push(&x, &vals);
            }
            acc
        },
        Acc::merge,
    )
    .expect("n_samples >= 1");
    Ok(acc.finish())
}

/// Kac Dirichlet form `E_{N,alpha}(f, g)` on the manifold given by `frame`.
pub fn dirichlet_kac<R: Rng + ?Sized>(
    f: &TrialFunction,
    g: &TrialFunction,
    n: usize,
    kernel: &KernelSpec,
    frame: &Frame,
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let fam = [f.clone(), g.clone()];
    let m = kac_form_matrices(&fam, n, kernel, frame, &FormOpts::default(), n_samples, rng)?;
    Ok(m.entry(0, 1))
}

/// Conjugate Dirichlet form `D_{N,alpha}(f, f)`.
pub fn dirichlet_conjugate<R: Rng + ?Sized>(
    f: &TrialFunction,
    n: usize,
    alpha: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let fam = [f.clone()];
    let m = conjugate_form_matrices(&fam, n, alpha, &FormOpts::default(), n_samples, rng)?;
    Ok(m.entry(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn constant_has_zero_forms() {
        let mut rng = stream_rng(30, 0);
        let c = TrialFunction::constant(3.0);
        let k = KernelSpec::uniform(1.0).unwrap();
        let e = dirichlet_kac(&c, &c, 4, &k, &Frame::default(), 100, &mut rng).unwrap();
        assert_eq!(e.value, 0.0);
        let d = dirichlet_conjugate(&c, 4, 1.0, 100, &mut rng).unwrap();
        assert!(d.value.abs() < 1e-24);
    }

    #[test]
    fn two_particle_form_is_closed_form() {
        // N = 2: E(f, f) = 2^{alpha+1} Var f for every f
        let mut rng = stream_rng(31, 0);
        let f = TrialFunction::opaque("v1z", true, |v| 3f64.sqrt() * v[0].z);
        for alpha in [0.0, 1.0, 2.0] {
            let k = KernelSpec::uniform(alpha).unwrap();
            let m = kac_form_matrices(
                std::slice::from_ref(&f),
                2,
                &k,
                &Frame::default(),
                &FormOpts::default(),
                200_000,
                &mut rng,
            )
            .unwrap();
            let ratio = m.dirichlet[(0, 0)] / m.covariance()[(0, 0)];
            let exact = 2f64.powf(alpha + 1.0);
            assert!((ratio / exact - 1.0).abs() < 0.02, "alpha {alpha}: {ratio}");
        }
    }

    #[test]
    fn kac_form_is_symmetric() {
        let mut rng = stream_rng(32, 0);
        let f = TrialFunction::opaque("a", true, |v| v[0].x * v[1].y);
        let g = TrialFunction::opaque("b", false, |v| v[0].norm_squared() + v[2].z);
        let k = KernelSpec::uniform(1.0).unwrap();
        let fg = dirichlet_kac(&f, &g, 4, &k, &Frame::default(), 20_000, &mut stream_rng(5, 0)).unwrap();
        let gf = dirichlet_kac(&g, &f, 4, &k, &Frame::default(), 20_000, &mut stream_rng(5, 0)).unwrap();
        assert!((fg.value - gf.value).abs() < 1e-12);
        let _ = &mut rng;
    }

    #[test]
    fn conjugate_form_on_eta4_difference_at_alpha_zero() {
        let mut rng = stream_rng(33, 0);
        for n in [3usize, 5] {
            let f = TrialFunction::eta4_difference(n).unwrap();
            let m = conjugate_form_matrices(&[f], n, 0.0, &FormOpts::default(), 100_000, &mut rng).unwrap();
            let ratio = m.dirichlet[(0, 0)] / m.covariance()[(0, 0)];
            let exact = 1.0 - 1.0 / (n as f64 - 1.0);
            assert!((ratio - exact).abs() < 0.02, "N={n}: {ratio} vs {exact}");
        }
    }
}
