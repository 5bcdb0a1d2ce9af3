//! Trial functions on the state manifold and batched evaluation of trial
//! families.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{KacError, Result};
use crate::kinematics::Vec3;
use crate::spectral::basis::SingleParticleBasis;

/// Evaluator of an opaque trial function on the velocity list.
pub type Evaluator = Arc<dyn Fn(&[Vec3]) -> f64 + Send + Sync>;

/// `f(v) = sum_j sum_i a[j, i] eta_i(v_j)`.
#[derive(Clone, Debug)]
pub struct SumForm {
    pub basis: Arc<SingleParticleBasis>,
    /// N x B coefficient matrix.
    pub coeffs: DMatrix<f64>,
}

impl SumForm {
    pub fn new(basis: Arc<SingleParticleBasis>, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != basis.n || coeffs.ncols() != basis.len() {
            return Err(KacError::InvalidArgument(format!(
                "coefficient matrix {}x{} does not match N={} and basis size {}",
                coeffs.nrows(),
                coeffs.ncols(),
                basis.n,
                basis.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(KacError::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Arc<SingleParticleBasis>) -> Self {
        let coeffs = DMatrix::zeros(basis.n, basis.len());
        Self { basis, coeffs }
    }

    /// `eta_i(v_j)`.
    pub fn single(basis: Arc<SingleParticleBasis>, j: usize, i: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[(j, i)] = 1.0;
        f
    }

    /// `sum_j eta_i(v_j)`.
    pub fn symmetric(basis: Arc<SingleParticleBasis>, i: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs.column_mut(i).fill(1.0);
        f
    }

    /// `eta_i(v_a) - eta_i(v_b)`.
    pub fn difference(basis: Arc<SingleParticleBasis>, i: usize, a: usize, b: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[(a, i)] = 1.0;
        f.coeffs[(b, i)] = -1.0;
        f
    }

    pub fn n(&self) -> usize {
        self.basis.n
    }

    /// Every single-particle component is orthogonal to the constants.
    pub fn is_mean_zero(&self) -> bool {
        self.coeffs.column(0).iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, v: &[Vec3]) -> f64 {
        let mut buf = vec![0.0; self.basis.len()];
        let mut total = 0.0;
        for (j, vj) in v.iter().enumerate() {
            self.basis.eval_into(vj, &mut buf);
            total += self.coeffs.row(j).iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    }

    /// Single-particle component `phi_j(x) = sum_i a[j, i] eta_i(x)`.
    pub fn phi(&self, j: usize, x: &Vec3) -> f64 {
        let e = self.basis.eval_all(x);
        self.coeffs.row(j).iter().zip(&e).map(|(a, b)| a * b).sum()
    }

    /// `sum_j ||phi_j||^2` in the marginal norm (exact by orthonormality).
    pub fn component_norm2(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// Opaque function with a label.
#[derive(Clone)]
pub struct Opaque {
    pub name: String,
    pub mean_zero: bool,
    pub eval: Evaluator,
}

impl fmt::Debug for Opaque {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Opaque").field("name", &self.name).field("mean_zero", &self.mean_zero).finish()
    }
}

#[derive(Clone, Debug)]
pub enum TrialFunction {
    SumForm(SumForm),
    Opaque(Opaque),
}

impl From<SumForm> for TrialFunction {
    fn from(s: SumForm) -> Self {
        TrialFunction::SumForm(s)
    }
}

impl TrialFunction {
    pub fn opaque(name: &str, mean_zero: bool, f: impl Fn(&[Vec3]) -> f64 + Send + Sync + 'static) -> Self {
        TrialFunction::Opaque(Opaque { name: name.to_string(), mean_zero, eval: Arc::new(f) })
    }

    pub fn constant(c: f64) -> Self {
        Self::opaque("constant", c == 0.0, move |_| c)
    }

    pub fn eval(&self, v: &[Vec3]) -> f64 {
        match self {
            TrialFunction::SumForm(s) => s.eval(v),
            TrialFunction::Opaque(o) => (o.eval)(v),
        }
    }

    pub fn is_mean_zero(&self) -> bool {
        match self {
            TrialFunction::SumForm(s) => s.is_mean_zero(),
            TrialFunction::Opaque(o) => o.mean_zero,
        }
    }

    /// Pointwise sum `self + other` as an opaque function.
    pub fn plus(&self, other: &TrialFunction) -> TrialFunction {
        let (a, b) = (self.clone(), other.clone());
        let mz = a.is_mean_zero() && b.is_mean_zero();
        Self::opaque("sum", mz, move |v| a.eval(v) + b.eval(v))
    }

    /// Linear combination of trial functions.
    pub fn combination(parts: &[TrialFunction], weights: &[f64]) -> TrialFunction {
        let parts: Vec<_> = parts.to_vec();
        let weights: Vec<_> = weights.to_vec();
        let mz = parts.iter().all(|p| p.is_mean_zero());
        Self::opaque("combination", mz, move |v| parts.iter().zip(&weights).map(|(p, w)| w * p.eval(v)).sum())
    }

    /// `eta_4(v_1) - eta_4(v_2)` for N particles.
    pub fn eta4_difference(n: usize) -> Result<TrialFunction> {
        let basis = Arc::new(SingleParticleBasis::new(n, 2, 0)?);
        if basis.len() < 2 {
            return Err(KacError::InvalidArgument("eta_4 needs N >= 3".into()));
        }
        let c = basis.functions[1].radial[1];
        let b0 = basis.functions[1].radial[0];
        Ok(Self::opaque("eta4(v1)-eta4(v2)", true, move |v| {
            let e = |x: &Vec3| b0 + c * x.norm_squared();
            e(&v[0]) - e(&v[1])
        }))
    }
}

/// Default variational family: `sum_j eta_i(v_j)` and `eta_i(v_1) - eta_i(v_2)`
/// over the non-constant basis members.
pub fn default_family(basis: &Arc<SingleParticleBasis>) -> Vec<TrialFunction> {
    let mut out = Vec::new();
    for i in 1..basis.len() {
        out.push(SumForm::symmetric(basis.clone(), i).into());
    }
    for i in 1..basis.len() {
        out.push(SumForm::difference(basis.clone(), i, 0, 1).into());
    }
    out
}

/// Batched evaluation of a family of trial functions with cached
/// single-particle features for the sum-form members.
pub struct FamilyEval<'a> {
    family: &'a [TrialFunction],
    basis: Option<Arc<SingleParticleBasis>>,
    /// Sparse coefficients (particle, basis index, value) per member.
    sparse: Vec<Vec<(usize, usize, f64)>>,
    feats: Vec<f64>,
    bsize: usize,
    tmp_i: Vec<f64>,
    tmp_j: Vec<f64>,
    scratch: Vec<Vec3>,
}

impl<'a> FamilyEval<'a> {
    pub fn new(family: &'a [TrialFunction]) -> Self {
        let basis = family.iter().find_map(|f| match f {
            TrialFunction::SumForm(s) => Some(s.basis.clone()),
            _ => None,
        });
        let sparse = family
            .iter()
            .map(|f| match f {
                TrialFunction::SumForm(s) => {
                    let mut nz = Vec::new();
                    for j in 0..s.coeffs.nrows() {
                        for i in 0..s.coeffs.ncols() {
                            let c = s.coeffs[(j, i)];
                            if c != 0.0 {
                                nz.push((j, i, c));
                            }
                        }
                    }
                    nz
                }
                _ => Vec::new(),
            })
            .collect();
        let bsize = basis.as_ref().map(|b| b.len()).unwrap_or(0);
        for f in family {
            if let (TrialFunction::SumForm(s), Some(b)) = (f, &basis) {
                assert!(
                    s.basis.n == b.n && s.basis.len() == b.len(),
                    "sum-form members of one family must share a basis"
                );
            }
        }
        Self {
            family,
            basis,
            sparse,
            feats: Vec::new(),
            bsize,
            tmp_i: vec![0.0; bsize],
            tmp_j: vec![0.0; bsize],
            scratch: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.family.len()
    }

    pub fn is_empty(&self) -> bool {
        self.family.is_empty()
    }

    /// Evaluate all members at `v`; also refreshes the feature cache used by
    /// [`Self::pair_delta_all`].
    pub fn eval_all(&mut self, v: &[Vec3], out: &mut [f64]) {
        if let Some(b) = &self.basis {
            self.feats.resize(v.len() * self.bsize, 0.0);
            for (j, vj) in v.iter().enumerate() {
                b.eval_into(vj, &mut self.feats[j * self.bsize..(j + 1) * self.bsize]);
            }
        }
        for (a, f) in self.family.iter().enumerate() {
            out[a] = match f {
                TrialFunction::SumForm(_) => {
                    self.sparse[a].iter().map(|&(j, i, c)| c * self.feats[j * self.bsize + i]).sum()
                }
                TrialFunction::Opaque(o) => (o.eval)(v),
            };
        }
    }

    /// `f(v') - f(v)` for every member, where `v'` replaces particles `i` and
    /// `j` by `vi_new` and `vj_new`. Requires a preceding [`Self::eval_all`]
    /// at `v` and the values it produced in `base`.
    #[allow(clippy::too_many_arguments)]
    pub fn pair_delta_all(
        &mut self,
        v: &[Vec3],
        base: &[f64],
        i: usize,
        j: usize,
        vi_new: &Vec3,
        vj_new: &Vec3,
        out: &mut [f64],
    ) {
        if let Some(b) = &self.basis {
            b.eval_into(vi_new, &mut self.tmp_i);
            b.eval_into(vj_new, &mut self.tmp_j);
            for t in 0..self.bsize {
                self.tmp_i[t] -= self.feats[i * self.bsize + t];
                self.tmp_j[t] -= self.feats[j * self.bsize + t];
            }
        }
        let mut have_scratch = false;
        for (a, f) in self.family.iter().enumerate() {
            out[a] = match f {
                TrialFunction::SumForm(_) => self.sparse[a]
                    .iter()
                    .map(|&(p, t, c)| {
                        if p == i {
                            c * self.tmp_i[t]
                        } else if p == j {
                            c * self.tmp_j[t]
                        } else {
                            0.0
                        }
                    })
                    .sum(),
                TrialFunction::Opaque(o) => {
                    if !have_scratch {
                        self.scratch.clear();
                        self.scratch.extend_from_slice(v);
                        self.scratch[i] = *vi_new;
                        self.scratch[j] = *vj_new;
                        have_scratch = true;
                    }
                    (o.eval)(&self.scratch) - base[a]
                }
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::post_collision_pair;
    use crate::rng::stream_rng;
    use crate::sampling::sample_invariant_gauss;

    #[test]
    fn family_eval_matches_direct_evaluation() {
        let n = 5;
        let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
        let mut fam = default_family(&basis);
        fam.push(TrialFunction::opaque("dot", true, |v| v[0].dot(&v[1])));
        let mut fe = FamilyEval::new(&fam);
        let mut rng = stream_rng(3, 0);
        let s = sample_invariant_gauss(n, &mut rng).unwrap();
        let mut vals = vec![0.0; fam.len()];
        fe.eval_all(&s.velocities, &mut vals);
        for (a, f) in fam.iter().enumerate() {
            assert!((vals[a] - f.eval(&s.velocities)).abs() < 1e-12);
        }
        let sigma = crate::kinematics::uniform_sphere(&mut rng);
        let (i, j) = (1, 3);
        let (a, b) = post_collision_pair(&s.velocities[i], &s.velocities[j], &sigma);
        let mut d = vec![0.0; fam.len()];
        fe.pair_delta_all(&s.velocities, &vals, i, j, &a, &b, &mut d);
        let mut moved = s.velocities.clone();
        moved[i] = a;
        moved[j] = b;
        for (k, f) in fam.iter().enumerate() {
            assert!((d[k] - (f.eval(&moved) - vals[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn conserved_sums_vanish_on_the_manifold() {
        let n = 6;
        let basis = Arc::new(SingleParticleBasis::default_for(n).unwrap());
        let mut rng = stream_rng(4, 0);
        let s = sample_invariant_gauss(n, &mut rng).unwrap();
        for i in 1..=4 {
            assert!(SumForm::symmetric(basis.clone(), i).eval(&s.velocities).abs() < 1e-12);
        }
        assert!(SumForm::symmetric(basis.clone(), 5).eval(&s.velocities).abs() > 1e-6);
    }

    #[test]
    fn sumform_shape_is_checked() {
        let basis = Arc::new(SingleParticleBasis::default_for(3).unwrap());
        assert!(SumForm::new(basis.clone(), DMatrix::zeros(2, basis.len())).is_err());
        let mut c = DMatrix::zeros(3, basis.len());
        c[(0, 0)] = f64::NAN;
        assert!(SumForm::new(basis, c).is_err());
    }
}
