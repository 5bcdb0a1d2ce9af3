//! Single-particle polynomial basis orthonormal under the one-coordinate
//! marginal of sigma_N.
//!
//! Members are `q(|v|^2) * H_lm(v)` where `H_lm` is a real solid harmonic of
//! degree `l` scaled so that its square averages to `|v|^{2l}` over the unit
//! sphere, and `q` is a polynomial in `|v|^2`. Different `(l, m)` are
//! orthogonal by rotation invariance; within one `(l, m)` the radial factors
//! are Gram-Schmidt orthonormalized against exact marginal moments.

use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::Vec3;
use crate::sampling::beta_moment;

/// Largest angular degree with hard-coded harmonics.
pub const MAX_ANGULAR: usize = 3;

/// Number of real harmonics of degree `l`.
fn harmonic_count(l: usize) -> usize {
    2 * l + 1
}

/// Real solid harmonic `(l, m)` with unit mean square on the unit sphere.
/// For `l = 1` the order is x, y, z.
fn solid_harmonic(l: usize, m: usize, v: &Vec3) -> f64 {
    let (x, y, z) = (v.x, v.y, v.z);
    match (l, m) {
        (0, _) => 1.0,
        (1, 0) => SQRT3 * x,
        (1, 1) => SQRT3 * y,
        (1, 2) => SQRT3 * z,
        (2, 0) => SQRT15 * x * y,
        (2, 1) => SQRT15 * y * z,
        (2, 2) => SQRT15 * x * z,
        (2, 3) => 0.5 * 5f64.sqrt() * (2.0 * z * z - x * x - y * y),
        (2, 4) => 0.5 * SQRT15 * (x * x - y * y),
        (3, 0) => (35.0f64 / 8.0).sqrt() * y * (3.0 * x * x - y * y),
        (3, 1) => 105f64.sqrt() * x * y * z,
        (3, 2) => (21.0f64 / 8.0).sqrt() * y * (4.0 * z * z - x * x - y * y),
        (3, 3) => 0.5 * 7f64.sqrt() * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
        (3, 4) => (21.0f64 / 8.0).sqrt() * x * (4.0 * z * z - x * x - y * y),
        (3, 5) => 0.5 * 105f64.sqrt() * z * (x * x - y * y),
        (3, 6) => (35.0f64 / 8.0).sqrt() * x * (x * x - 3.0 * y * y),
        _ => unreachable!("harmonic ({l},{m}) not tabulated"),
    }
}

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT15: f64 = 3.872_983_346_207_417;

/// One basis member.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisFn {
    pub ell: usize,
    pub m: usize,
    /// Degree of the radial polynomial in `|v|^2`.
    pub r: usize,
    /// Coefficients of the radial polynomial in `|v|^2`, lowest first.
    pub radial: Vec<f64>,
}

impl BasisFn {
    pub fn eval(&self, v: &Vec3) -> f64 {
        let r2 = v.norm_squared();
        let q = self.radial.iter().rev().fold(0.0, |acc, c| acc * r2 + c);
        q * solid_harmonic(self.ell, self.m, v)
    }
}

/// Orthonormal single-particle basis for a given N.
///
/// Index 0 is the constant, 1..=3 are `sqrt(3) v_x, sqrt(3) v_y, sqrt(3) v_z`
/// and 4 is `C_N (|v|^2 - 1)`. The rest follow by total degree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingleParticleBasis {
    pub n: usize,
    pub radial_deg: usize,
    pub angular_deg: usize,
    pub functions: Vec<BasisFn>,
}

/// `E|v|^{2m}` for one coordinate under sigma_N.
pub fn marginal_moment(n: usize, m: u32) -> f64 {
    if n == 2 {
        return 1.0;
    }
    let nf = n as f64;
    (nf - 1.0).powi(m as i32) * beta_moment(1.5, (3.0 * nf - 6.0) / 2.0, m)
}

impl SingleParticleBasis {
    /// Basis with radial polynomials of degree `<= radial_deg / 2` in `|v|^2`
    /// and angular degree `<= angular_deg`. For N = 2 every coordinate has
    /// `|v| = 1`, so only radial degree 0 is kept.
    pub fn new(n: usize, radial_deg: usize, angular_deg: usize) -> Result<Self> {
        if n < 2 {
            return Err(KacError::TooFewParticles(n, 2));
        }
        if angular_deg > MAX_ANGULAR {
            return Err(KacError::InvalidArgument(format!("angular degree {angular_deg} exceeds {MAX_ANGULAR}")));
        }
        let rmax = if n == 2 { 0 } else { radial_deg / 2 };
        let mut functions = Vec::new();
        for ell in 0..=angular_deg {
            let radials = radial_family(n, ell, rmax)?;
            for m in 0..harmonic_count(ell) {
                for (r, radial) in radials.iter().enumerate() {
                    functions.push(BasisFn { ell, m, r, radial: radial.clone() });
                }
            }
        }
        functions.sort_by_key(|f| (2 * f.r + f.ell, f.ell, f.r, f.m));
        Ok(Self { n, radial_deg, angular_deg, functions })
    }

    pub fn default_for(n: usize) -> Result<Self> {
        Self::new(n, 4, 2)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Evaluate every member at `v` into `out`.
    pub fn eval_into(&self, v: &Vec3, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.functions) {
            *o = f.eval(v);
        }
    }

    pub fn eval_all(&self, v: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(v, &mut out);
        out
    }

    /// Normalization constant of eta_4 = C_N (|v|^2 - 1).
    pub fn eta4_constant(&self) -> Option<f64> {
        self.functions.get(4).filter(|f| f.ell == 0 && f.r == 1).map(|f| f.radial[1])
    }

    /// Indices of the conserved members eta_1..eta_4 present in the basis.
    pub fn conserved_indices(&self) -> Vec<usize> {
        (1..self.len().min(5))
            .filter(|&i| {
                let f = &self.functions[i];
                (f.ell == 1 && f.r == 0) || (f.ell == 0 && f.r == 1)
            })
            .collect()
    }
}

/// Orthonormal radial polynomials `q_0..q_rmax` in `|v|^2` for angular
/// degree `ell`: `E[q_a q_b |v|^{2 ell}] = delta_ab` (the harmonic factor
/// contributes its unit mean square).
fn radial_family(n: usize, ell: usize, rmax: usize) -> Result<Vec<Vec<f64>>> {
    // Gram matrix of the monomials |v|^{2i} with weight |v|^{2 ell}.
    let dim = rmax + 1;
    let g = |i: usize, j: usize| marginal_moment(n, (ell + i + j) as u32);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for r in 0..dim {
        // start from the monomial and remove earlier components
        let mut c = vec![0.0; r + 1];
        c[r] = 1.0;
        for q in &out {
            let mut ip = 0.0;
            for (i, qi) in q.iter().enumerate() {
                ip += qi * g(i, r);
            }
            for (i, qi) in q.iter().enumerate() {
                c[i] -= ip * qi;
            }
        }
        let mut norm2 = 0.0;
        for (i, ci) in c.iter().enumerate() {
            for (j, cj) in c.iter().enumerate() {
                norm2 += ci * cj * g(i, j);
            }
        }
        if norm2 <= 1e-12 {
            return Err(KacError::Singular(format!("radial degree {r} at l={ell}, N={n}")));
        }
        let s = norm2.sqrt();
        c.iter_mut().for_each(|x| *x /= s);
        out.push(c);
    }
    Ok(out)
}
