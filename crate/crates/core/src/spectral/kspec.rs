//! The correlation operator `K phi(v) = E{phi(v_1) | v_2 = v}` and the
//! block spectrum of P^(0) it determines.
//!
//! Each sector `(l, m)` with radial degree bounded is K-invariant, so a
//! Galerkin matrix over the orthonormal basis carries exact eigenvalues up to
//! Monte Carlo error.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::Vec3;
use crate::rng::par_chunks;
use crate::sampling::{fill_conditional_slice, fill_invariant_recursive};
use crate::spectral::basis::SingleParticleBasis;
use crate::stats::{Estimate, MeanAcc};

/// Monte Carlo `K phi(v)`: average of `phi` over the other coordinates of
/// uniform draws from the slice `v_2 = v` (all of them share the law of `v_1`).
pub fn k_apply<R: Rng + ?Sized>(
    phi: &(dyn Fn(&Vec3) -> f64 + Sync),
    v: &Vec3,
    n: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    if v.norm_squared() > (n - 1) as f64 * (1.0 + 1e-12) {
        return Err(KacError::Domain(format!("|v|^2 = {} exceeds N-1", v.norm_squared())));
    }
    let k = 1;
    let acc = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut buf = vec![Vec3::zeros(); n];
            let mut acc = MeanAcc::new();
            for _ in 0..count {
                fill_conditional_slice(&mut buf, k, v, r).expect("checked domain");
                let s: f64 = buf.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| phi(x)).sum();
                acc.push(s / (n - 1) as f64);
            }
            acc
        },
        MeanAcc::merge,
    )
    .unwrap_or_default();
    Ok(acc.estimate())
}

/// What an eigenvector of the K Galerkin matrix is dominated by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Constant,
    Conserved,
    Other,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KSpectrum {
    pub n: usize,
    pub n_samples: usize,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors in basis coordinates.
    pub eigenvectors: DMatrix<f64>,
    pub modes: Vec<Mode>,
    /// Monte Carlo Gram matrix of the basis under the marginal.
    pub gram: DMatrix<f64>,
    /// Monte Carlo cross matrix `E[eta_a(v_1) eta_b(v_2)]`.
    pub cross: DMatrix<f64>,
}

impl KSpectrum {
    /// Eigenvalues of a given mode kind, descending.
    pub fn of_mode(&self, mode: Mode) -> Vec<f64> {
        self.eigenvalues.iter().zip(&self.modes).filter(|(_, m)| **m == mode).map(|(e, _)| *e).collect()
    }

    /// Most negative eigenvalue outside the constant and conserved span.
    pub fn most_negative_other(&self) -> Option<f64> {
        self.of_mode(Mode::Other).into_iter().reduce(f64::min)
    }

    pub fn largest_other(&self) -> Option<f64> {
        self.of_mode(Mode::Other).into_iter().reduce(f64::max)
    }
}

/// Monte Carlo Gram and cross matrices over `n_samples` states, using every
/// particle and every ordered pair of each state.
pub fn k_matrices<R: Rng + ?Sized>(
    basis: &SingleParticleBasis,
    n_samples: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = basis.n;
    let b = basis.len();
    if n_samples == 0 {
        return Err(KacError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let (g, c) = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut g = DMatrix::<f64>::zeros(b, b);
            let mut c = DMatrix::<f64>::zeros(b, b);
            let mut v = vec![Vec3::zeros(); n];
            let mut feats = DMatrix::<f64>::zeros(n, b);
            let mut row = vec![0.0; b];
            for _ in 0..count {
                fill_invariant_recursive(&mut v, r).expect("n >= 2");
                for (j, vj) in v.iter().enumerate() {
                    basis.eval_into(vj, &mut row);
                    for (t, x) in row.iter().enumerate() {
                        feats[(j, t)] = *x;
                    }
                }
                let ff = feats.transpose() * &feats;
                let s = feats.row_sum();
                g += &ff;
                c += s.transpose() * &s - ff;
            }
            (g, c)
        },
        |(g1, c1), (g2, c2)| (g1 + g2, c1 + c2),
    )
    .expect("n_samples >= 1");
    let g = g / (n_samples * n) as f64;
    let c = c / (n_samples * n * (n - 1)) as f64;
    Ok((g, c))
}

/// Solve `C x = kappa G x` after discarding Gram directions below
/// `1e-8 * trace(G)`. Returns eigenvalues (descending) and G-orthonormal
/// eigenvectors.
pub fn generalized_symmetric_eigen(c: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let b = g.nrows();
    let gs = (g + g.transpose()) * 0.5;
    let cs = (c + c.transpose()) * 0.5;
    let eg = SymmetricEigen::new(gs.clone());
    let trace = gs.trace();
    let keep: Vec<usize> = (0..b).filter(|&i| eg.eigenvalues[i] > 1e-8 * trace).collect();
    if keep.is_empty() {
        return Err(KacError::Singular("Gram matrix has no usable directions".into()));
    }
    let mut w = DMatrix::<f64>::zeros(b, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let s = 1.0 / eg.eigenvalues[i].sqrt();
        w.set_column(col, &(eg.eigenvectors.column(i) * s));
    }
    let m = w.transpose() * cs * &w;
    let m = (&m + m.transpose()) * 0.5;
    let em = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..keep.len()).collect();
    order.sort_by(|&a, &bb| em.eigenvalues[bb].total_cmp(&em.eigenvalues[a]));
    let vals = order.iter().map(|&i| em.eigenvalues[i]).collect();
    let mut vecs = DMatrix::<f64>::zeros(b, keep.len());
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &(&w * em.eigenvectors.column(i)));
    }
    Ok((vals, vecs))
}

/// Galerkin spectrum of K on the span of `basis`.
pub fn k_spectrum<R: Rng + ?Sized>(basis: &SingleParticleBasis, n_samples: usize, rng: &mut R) -> Result<KSpectrum> {
    let (gram, cross) = k_matrices(basis, n_samples, rng)?;
    let (eigenvalues, eigenvectors) = generalized_symmetric_eigen(&cross, &gram)?;
    let conserved = basis.conserved_indices();
    let modes = (0..eigenvalues.len())
        .map(|col| {
            let x = eigenvectors.column(col);
            let total = x.norm_squared();
            let w0 = x[0] * x[0] / total;
            let wc: f64 = conserved.iter().map(|&i| x[i] * x[i]).sum::<f64>() / total;
            if w0 > 0.5 {
                Mode::Constant
            } else if wc > 0.5 {
                Mode::Conserved
            } else {
                Mode::Other
            }
        })
        .collect();
    Ok(KSpectrum { n: basis.n, n_samples, eigenvalues, eigenvectors, modes, gram, cross })
}

/// Eigenvalue of K on the conserved functions eta_1..eta_4.
pub fn kappa_conserved(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

/// Largest K eigenvalue outside constants and conserved functions.
pub fn kappa_upper(n: usize) -> f64 {
    let m = n as f64 - 1.0;
    (5.0 * n as f64 - 3.0) / (3.0 * m * m * m)
}

/// Most negative K eigenvalue outside the conserved functions.
pub fn kappa_lower(n: usize) -> f64 {
    let m = n as f64 - 1.0;
    -(7.0 * n as f64 - 3.0) / (3.0 * m.powi(4))
}

/// Closed form `mu^(0) = (3N-1) / (3 (N-1)^2)`.
pub fn mu0_closed(n: usize) -> f64 {
    let m = n as f64 - 1.0;
    (3.0 * n as f64 - 1.0) / (3.0 * m * m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct P0Spectrum {
    pub n: usize,
    pub mu0: f64,
    pub gap0: f64,
    /// Candidate eigenvalues of P^(0) with the K eigenvalue they came from.
    pub candidates: Vec<(f64, f64)>,
}

/// Block spectrum of P^(0) from K eigenvalues: a K eigenfunction `phi` with
/// eigenvalue `kappa` yields `sum_j phi(v_j)` with eigenvalue
/// `(1 + (N-1) kappa) / N` and the antisymmetric combinations with
/// `(1 - kappa) / N`. Constants and the (identically zero) symmetric sums
/// of conserved functions are excluded.
pub fn p0_from_modes(n: usize, kappas: &[(f64, Mode)]) -> Result<P0Spectrum> {
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let nf = n as f64;
    let mut candidates = Vec::new();
    for &(k, mode) in kappas {
        match mode {
            Mode::Constant => {}
            Mode::Conserved => candidates.push(((1.0 - k) / nf, k)),
            Mode::Other => {
                candidates.push(((1.0 + (nf - 1.0) * k) / nf, k));
                candidates.push(((1.0 - k) / nf, k));
            }
        }
    }
    let mu0 = candidates
        .iter()
        .map(|c| c.0)
        .reduce(f64::max)
        .ok_or_else(|| KacError::InvalidArgument("no non-trivial K eigenvalues".into()))?;
    Ok(P0Spectrum { n, mu0, gap0: 1.0 - mu0, candidates })
}

/// P^(0) block spectrum from the closed-form K eigenvalues.
pub fn p0_block_spectrum_closed(n: usize) -> Result<P0Spectrum> {
    p0_from_modes(
        n,
        &[
            (1.0, Mode::Constant),
            (kappa_conserved(n), Mode::Conserved),
            (kappa_upper(n), Mode::Other),
            (kappa_lower(n), Mode::Other),
        ],
    )
}

/// P^(0) block spectrum from a Monte Carlo K spectrum.
pub fn p0_block_spectrum(spec: &KSpectrum) -> Result<P0Spectrum> {
    let modes: Vec<_> = spec.eigenvalues.iter().copied().zip(spec.modes.iter().copied()).collect();
    p0_from_modes(spec.n, &modes)
}
