//! Variational (Rayleigh-Ritz) upper bounds on spectral gaps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::KernelSpec;
use crate::process::ProcessKind;
use crate::spectral::dirichlet::{conjugate_form_matrices, kac_form_matrices, FormMatrices, FormOpts, Frame};
use crate::spectral::kspec::generalized_symmetric_eigen;
use crate::spectral::report::GapReport;
use crate::spectral::trial::{SumForm, TrialFunction};
use crate::stats::replica_estimate;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariationalResult {
    pub report: GapReport,
    /// Minimizing combination over the family (covariance-normalized).
    pub minimizer: DVector<f64>,
    /// Smallest Rayleigh quotient of every replica.
    pub replica_values: Vec<f64>,
    pub pooled: FormMatrices,
}

/// Smallest generalized eigenvalue of `(A, Cov)`, with its eigenvector.
pub fn smallest_ratio(m: &FormMatrices) -> Result<(f64, DVector<f64>)> {
    let (vals, vecs) = generalized_symmetric_eigen(&m.dirichlet, &m.covariance())?;
    let last = vals.len() - 1;
    Ok((vals[last], vecs.column(last).into_owned()))
}

/// Rayleigh quotient of the single function `f`: `A / Var f`.
pub fn rayleigh_quotient(m: &FormMatrices, idx: usize) -> f64 {
    m.dirichlet[(idx, idx)] / m.covariance()[(idx, idx)]
}

/// Form matrices of the requested process.
pub fn form_matrices<R: Rng + ?Sized>(
    process: ProcessKind,
    family: &[TrialFunction],
    n: usize,
    kernel: &KernelSpec,
    opts: &FormOpts,
    n_samples: usize,
    rng: &mut R,
) -> Result<FormMatrices> {
    match process {
        ProcessKind::Kac => kac_form_matrices(family, n, kernel, &Frame::default(), opts, n_samples, rng),
        ProcessKind::Conjugate => conjugate_form_matrices(family, n, kernel.alpha, opts, n_samples, rng),
    }
}

/// Variational gap estimate over `family`: the smallest generalized
/// eigenvalue of the Dirichlet matrix against the covariance matrix (which
/// removes the constant direction). The sample budget is split over
/// `replicas`; the point estimate uses the pooled matrices and the error bar
/// the spread of replica estimates.
#[allow(clippy::too_many_arguments)]
pub fn variational_gap<R: Rng + ?Sized>(
    n: usize,
    kernel: &KernelSpec,
    process: ProcessKind,
    family: &[TrialFunction],
    opts: &FormOpts,
    n_samples: usize,
    replicas: usize,
    rng: &mut R,
) -> Result<VariationalResult> {
    if replicas < 2 {
        return Err(KacError::InvalidArgument("need at least 2 replicas for an error bar".into()));
    }
    if family.iter().any(|f| !f.is_mean_zero()) {
        // constant parts are harmless (covariance removes them) but flag misuse
        return Err(KacError::InvalidArgument("trial family must be mean-zero".into()));
    }
    let per = (n_samples / replicas).max(2);
    let mut parts = Vec::with_capacity(replicas);
    let mut replica_values = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let m = form_matrices(process, family, n, kernel, opts, per, rng)?;
        replica_values.push(smallest_ratio(&m)?.0);
        parts.push(m);
    }
    let pooled = FormMatrices::pool(&parts);
    let (estimate, minimizer) = smallest_ratio(&pooled)?;
    let spread = replica_estimate(&replica_values);
    let method = match process {
        ProcessKind::Kac => "variational-kac",
        ProcessKind::Conjugate => "variational-conjugate",
    };
    let report = GapReport {
        method: method.into(),
        n,
        alpha: kernel.alpha,
        estimate,
        stderr: spread.stderr,
        n_samples: per * replicas,
        seed: None,
        basis: None,
        flag: None,
        note: None,
    };
    Ok(VariationalResult { report, minimizer, replica_values, pooled })
}

/// Turn a minimizer over `family` into a single trial function.
/// Sum forms over one basis collapse into a single sum form.
pub fn combine(family: &[TrialFunction], coeffs: &DVector<f64>) -> TrialFunction {
    let forms: Option<Vec<&SumForm>> = family
        .iter()
        .map(|f| match f {
            TrialFunction::SumForm(s) => Some(s),
            _ => None,
        })
        .collect();
    if let Some(forms) = forms {
        if let Some(first) = forms.first() {
            if forms.iter().all(|s| Arc::ptr_eq(&s.basis, &first.basis)) {
                let mut out = SumForm::zeros(first.basis.clone());
                for (s, c) in forms.iter().zip(coeffs.iter()) {
                    out.coeffs += &s.coeffs * *c;
                }
                return TrialFunction::SumForm(out);
            }
        }
    }
    TrialFunction::combination(family, coeffs.as_slice())
}

/// Dense matrix as CSV rows.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::spectral::basis::SingleParticleBasis;
    use crate::spectral::trial::{default_family, SumForm};
    use std::sync::Arc;

    #[test]
    fn two_particle_kac_gap_is_closed_form() {
        let mut rng = stream_rng(40, 0);
        let basis = Arc::new(SingleParticleBasis::new(2, 0, 1).unwrap());
        let fam: Vec<TrialFunction> = (1..4).map(|i| SumForm::single(basis.clone(), 0, i).into()).collect();
        let k = KernelSpec::uniform(1.0).unwrap();
        let r = variational_gap(2, &k, ProcessKind::Kac, &fam, &FormOpts::default(), 80_000, 4, &mut rng).unwrap();
        assert!((r.report.estimate / 4.0 - 1.0).abs() < 0.03, "{}", r.report.estimate);
    }

    #[test]
    fn conjugate_gap_three_particles_alpha_zero() {
        let mut rng = stream_rng(41, 0);
        let basis = Arc::new(SingleParticleBasis::default_for(3).unwrap());
        let fam = default_family(&basis);
        let k = KernelSpec::uniform(0.0).unwrap();
        let r =
            variational_gap(3, &k, ProcessKind::Conjugate, &fam, &FormOpts::default(), 40_000, 4, &mut rng).unwrap();
        assert!((r.report.estimate - 1.0 / 3.0).abs() < 0.03, "{}", r.report.estimate);
    }

    #[test]
    fn non_mean_zero_family_is_rejected() {
        let mut rng = stream_rng(42, 0);
        let fam = [TrialFunction::constant(1.0)];
        let k = KernelSpec::uniform(0.0).unwrap();
        assert!(variational_gap(3, &k, ProcessKind::Kac, &fam, &FormOpts::default(), 100, 2, &mut rng).is_err());
    }

    #[test]
    fn combine_collapses_shared_basis_sum_forms() {
        let mut rng = stream_rng(43, 0);
        let basis = Arc::new(SingleParticleBasis::default_for(4).unwrap());
        let fam = default_family(&basis);
        let c = DVector::from_fn(fam.len(), |i, _| (i as f64 * 0.37).sin());
        let f = combine(&fam, &c);
        assert!(matches!(f, TrialFunction::SumForm(_)));
        let opaque: Vec<TrialFunction> = fam
            .iter()
            .map(|g| {
                let g = g.clone();
                TrialFunction::opaque("wrapped", true, move |v| g.eval(v))
            })
            .collect();
        let slow = combine(&opaque, &c);
        assert!(matches!(slow, TrialFunction::Opaque(_)));
        for _ in 0..20 {
            let s = crate::sampling::sample_invariant_recursive(4, &mut rng).unwrap();
            assert!((f.eval(&s.velocities) - slow.eval(&s.velocities)).abs() < 1e-10);
        }
    }
}
