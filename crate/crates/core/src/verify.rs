//! The acceptance criteria as runnable checks.
//!
//! Each criterion draws from its own stream `stream_rng(seed, id)` so that
//! criteria can be run singly or together with identical results.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chaos::{
    cond_moment4_one, cond_moment4_two, fit_c, k_v8_sup, marginal_moments, v_grid, MomentReport, Provenance,
};
use crate::error::{KacError, Result};
use crate::kinematics::{big_w_lower_bound, uniform_sphere, weight_big_w, KernelSpec, ParticleState, Vec3};
use crate::process::{simulate, Observable, ProcessKind, Recording, SimSpec, Stop};
use crate::rng::{par_chunks, stream_rng, KacRng};
use crate::sampling::{fill_gauss, fill_invariant_recursive, sample_invariant_recursive};
use crate::spectral::autocorr::{autocorr_gap, FitWindow};
use crate::spectral::basis::SingleParticleBasis;
use crate::spectral::decompose::{
    inner_product, null_space_function, random_sumform, sandwich_bounds, trial_decompose, verify_pk_s,
};
use crate::spectral::dirichlet::{dirichlet_kac, FormOpts, Frame};
use crate::spectral::kspec::{
    k_spectrum, kappa_lower, kappa_upper, mu0_closed, p0_block_spectrum, p0_block_spectrum_closed, Mode,
};
use crate::spectral::ladder::conjugate_lower_explicit;
use crate::spectral::trial::{default_family, SumForm, TrialFunction};
use crate::spectral::variational::{combine, rayleigh_quotient, variational_gap};
use crate::stats::{bonferroni_z, linear_fit, Estimate, MeanAcc};

/// One numerical check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: f64,
    pub provenance: Provenance,
    pub pass: bool,
    /// Diagnostic checks are reported but do not decide the criterion.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub diagnostic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        stderr: f64,
        reference: f64,
        provenance: Provenance,
        pass: bool,
    ) -> Self {
        Self { name: name.into(), estimate, stderr, reference, provenance, pass, diagnostic: false, note: None }
    }

    /// Pass iff the estimate is within 3 standard errors of the reference.
    pub fn sigma3(name: impl Into<String>, est: Estimate, reference: f64, provenance: Provenance) -> Self {
        let pass = est.z(reference) <= 3.0;
        Self::new(name, est.value, est.stderr, reference, provenance, pass)
    }

    /// Pass iff the estimate is within `tol` of the reference.
    pub fn tolerance(name: impl Into<String>, est: f64, reference: f64, tol: f64, provenance: Provenance) -> Self {
        let pass = (est - reference).abs() <= tol;
        Self::new(name, est, 0.0, reference, provenance, pass)
    }

    pub fn diagnostic(mut self) -> Self {
        self.diagnostic = true;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

impl From<MomentReport> for Check {
    fn from(m: MomentReport) -> Self {
        let name = format!("N={} {}", m.n, m.observable);
        Check::new(name, m.estimate, m.stderr, m.reference, m.provenance, m.pass)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub seconds: f64,
}

/// Sample sizes and N-lists for the criteria.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Samples per statistical check.
    pub n_samples: usize,
    /// N values for the weight identities and the P^(0) spectrum.
    pub n_list: Vec<usize>,
    /// Replicas for variational error bars.
    pub replicas: usize,
    /// Samples per N in the Kac-gap sweep.
    pub sweep_samples: usize,
    /// N values of the Kac-gap sweep.
    pub sweep: Vec<usize>,
    /// Multiplier on simulated time horizons.
    pub sim_scale: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            n_samples: 1_000_000,
            n_list: vec![3, 4, 8],
            replicas: 8,
            sweep_samples: 200_000,
            sweep: (3..=16).collect(),
            sim_scale: 1.0,
        }
    }
}

impl VerifyConfig {
    /// Defaults with every sample size and simulated horizon scaled to a
    /// budget of `n_samples` per statistical check.
    pub fn scaled(seed: u64, n_samples: usize) -> Self {
        let f = n_samples as f64 / 1e6;
        Self { seed, n_samples, sweep_samples: (n_samples / 5).max(1000), sim_scale: f, ..Self::default() }
    }
}

pub const CRITERIA: [(u32, &str); 13] = [
    (1, "collision conservation"),
    (2, "weight identities"),
    (3, "sampler cross-validation"),
    (4, "three-particle moments"),
    (5, "K spectrum at N=3"),
    (6, "P^(0) spectrum"),
    (7, "conjugate relaxation"),
    (8, "two-particle closed form"),
    (9, "scaling law"),
    (10, "conditional moments"),
    (11, "trial decomposition"),
    (12, "explicit conjugate bound"),
    (13, "Kac gap sweep"),
];

/// Run criterion `id`.
pub fn run_criterion(id: u32, cfg: &VerifyConfig) -> Result<CriterionResult> {
    let title =
        CRITERIA.iter().find(|c| c.0 == id).ok_or_else(|| KacError::InvalidArgument(format!("no criterion {id}")))?.1;
    let mut rng = stream_rng(cfg.seed, id as u64);
    let start = Instant::now();
    let checks = match id {
        1 => conservation(cfg, &mut rng)?,
        2 => weights(cfg, &mut rng)?,
        3 => samplers(cfg, &mut rng)?,
        4 => three_particle_moments(cfg, &mut rng)?,
        5 => k_spectrum_three(cfg, &mut rng)?,
        6 => p0_spectrum(cfg, &mut rng)?,
        7 => conjugate_relaxation(cfg, &mut rng)?,
        8 => two_particles(cfg, &mut rng)?,
        9 => scaling(cfg, &mut rng)?,
        10 => conditional_moments(cfg, &mut rng)?,
        11 => decomposition(cfg, &mut rng)?,
        12 => explicit_bound(cfg, &mut rng)?,
        _ => gap_sweep(cfg, &mut rng)?,
    };
    if checks.is_empty() {
        return Err(KacError::InvalidArgument(format!("criterion {id} produced no checks")));
    }
    let pass = checks.iter().filter(|c| !c.diagnostic).all(|c| c.pass);
    Ok(CriterionResult { id, title: title.to_string(), checks, pass, seconds: start.elapsed().as_secs_f64() })
}

pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<CriterionResult>> {
    CRITERIA.iter().map(|c| run_criterion(c.0, cfg)).collect()
}

/// 10^6 random collisions on an N=8 state: per-collision relative change of
/// pair momentum, pair energy and relative speed, and the drift of the
/// whole state.
fn conservation(_cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let collisions = 1_000_000;
    let mut st = sample_invariant_recursive(8, rng)?;
    let (mut dp, mut de, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..collisions {
        let i = rng.random_range(0..8);
        let mut j = rng.random_range(0..7);
        if j >= i {
            j += 1;
        }
        let sigma = uniform_sphere(rng);
        let (a, b) = (st.velocities[i], st.velocities[j]);
        st.collide(i, j, &sigma)?;
        let (a2, b2) = (st.velocities[i], st.velocities[j]);
        let scale = a.norm() + b.norm();
        dp = dp.max(((a2 + b2) - (a + b)).norm() / scale);
        let e = a.norm_squared() + b.norm_squared();
        de = de.max((a2.norm_squared() + b2.norm_squared() - e).abs() / e);
        let g = (a - b).norm();
        if g > 0.0 {
            dg = dg.max(((a2 - b2).norm() - g).abs() / g);
        }
    }
    let diag = st.validate(1e-12);
    Ok(vec![
        Check::tolerance("pair momentum, max relative change", dp, 0.0, 1e-12, Provenance::Published),
        Check::tolerance("pair energy, max relative change", de, 0.0, 1e-12, Provenance::Published),
        Check::tolerance("relative speed, max relative change", dg, 0.0, 1e-12, Provenance::Published),
        Check::tolerance(
            "state energy drift after 1e6 collisions",
            diag.energy_defect,
            0.0,
            1e-12,
            Provenance::Trivial,
        ),
        Check::tolerance(
            "state momentum drift after 1e6 collisions",
            diag.momentum_defect,
            0.0,
            1e-12,
            Provenance::Trivial,
        ),
    ])
}

fn weights(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let states = 10_000;
    let mut out = Vec::new();
    let mut ns = cfg.n_list.clone();
    for n in [3, 4] {
        if !ns.contains(&n) {
            ns.push(n);
        }
    }
    for &n in &ns {
        if n < 3 {
            continue;
        }
        let m = n as f64 - 1.0;
        let w2_ref = 1.0 - 1.0 / (m * m);
        let (mut d0, mut d2, mut w1_min) = (0.0f64, 0.0f64, f64::INFINITY);
        for _ in 0..states {
            let st = sample_invariant_recursive(n, rng)?;
            d0 = d0.max((weight_big_w(&st, 0.0)? - 1.0).abs());
            d2 = d2.max((weight_big_w(&st, 2.0)? - w2_ref).abs());
            w1_min = w1_min.min(weight_big_w(&st, 1.0)?);
        }
        out.push(Check::tolerance(format!("N={n} max |W^(0) - 1|"), d0, 0.0, 1e-12, Provenance::Published));
        out.push(Check::tolerance(
            format!("N={n} max |W^(2) - (1 - 1/(N-1)^2)|"),
            d2,
            0.0,
            1e-12,
            Provenance::Published,
        ));
        let floor = match n {
            3 => Some(21.0 / 32.0),
            4 => Some(64.0 / 81.0),
            _ => None,
        };
        if let Some(floor) = floor {
            out.push(Check::new(
                format!("N={n} min W^(1)"),
                w1_min,
                0.0,
                floor,
                Provenance::Published,
                w1_min >= floor,
            ));
        }
        let general = big_w_lower_bound(n, 1.0);
        out.push(
            Check::new(
                format!("N={n} min W^(1) above the general bound"),
                w1_min,
                0.0,
                general,
                Provenance::Derived,
                w1_min >= general,
            )
            .diagnostic(),
        );
    }
    Ok(out)
}

const SAMPLER_OBS: [&str; 4] = ["E|v1|^2", "E|v1|^4", "E v1.v2", "E|v1|^2|v2|^2"];

fn sampler_moments(n: usize, gauss: bool, n_samples: usize, rng: &mut KacRng) -> Vec<Estimate> {
    let accs = par_chunks(
        rng,
        n_samples,
        |r, count| {
            let mut v = vec![Vec3::zeros(); n];
            let mut accs = [MeanAcc::new(); 4];
            for _ in 0..count {
                if gauss {
                    fill_gauss(&mut v, r);
                } else {
                    fill_invariant_recursive(&mut v, r).expect("n >= 2");
                }
                let a = v[0].norm_squared();
                let b = v[1].norm_squared();
                accs[0].push(a);
                accs[1].push(a * a);
                accs[2].push(v[0].dot(&v[1]));
                accs[3].push(a * b);
            }
            accs
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = x.merge(y);
            }
            a
        },
    )
    .expect("n_samples >= 1");
    accs.iter().map(|a| a.estimate()).collect()
}

fn samplers(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [3, 8, 32] {
        let rec = sampler_moments(n, false, cfg.n_samples, rng);
        let gau = sampler_moments(n, true, cfg.n_samples, rng);
        for ((name, a), b) in SAMPLER_OBS.iter().zip(&rec).zip(&gau) {
            let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
            let pass = (a.value - b.value).abs() <= 3.0 * se;
            out.push(Check::new(
                format!("N={n} {name} recursive vs projection"),
                a.value,
                se,
                b.value,
                Provenance::Derived,
                pass,
            ));
        }
    }
    Ok(out)
}

fn three_particle_moments(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    Ok(marginal_moments(3, &[4, 6], cfg.n_samples, rng)?
        .into_iter()
        .map(|mut m| {
            m.provenance = Provenance::Published;
            m.into()
        })
        .collect())
}

const SPECTRAL_TOL: f64 = 0.01;

fn k_spectrum_three(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let basis = SingleParticleBasis::default_for(3)?;
    let spec = k_spectrum(&basis, cfg.n_samples, rng)?;
    let near = |x: f64| spec.eigenvalues.iter().filter(|e| (*e - x).abs() <= SPECTRAL_TOL).count();
    let mut out = vec![
        Check::tolerance("largest eigenvalue", spec.eigenvalues[0], 1.0, SPECTRAL_TOL, Provenance::Published),
        Check::new("multiplicity of eigenvalue 1", near(1.0) as f64, 0.0, 1.0, Provenance::Published, near(1.0) == 1),
        Check::new(
            "multiplicity of eigenvalue -1/2",
            near(-0.5) as f64,
            0.0,
            4.0,
            Provenance::Published,
            near(-0.5) == 4,
        ),
    ];
    let conserved = spec.of_mode(Mode::Conserved);
    out.push(Check::new(
        "conserved modes at -1/2",
        conserved.len() as f64,
        0.0,
        4.0,
        Provenance::Published,
        conserved.len() == 4 && conserved.iter().all(|e| (e + 0.5).abs() <= SPECTRAL_TOL),
    ));
    let mut asc = spec.eigenvalues.clone();
    asc.sort_by(f64::total_cmp);
    out.push(Check::tolerance("second most negative eigenvalue", asc[4], -0.375, SPECTRAL_TOL, Provenance::Published));
    let (lo, hi) = (kappa_lower(3), kappa_upper(3));
    let others = spec.of_mode(Mode::Other);
    let excess = others.iter().map(|&e| (lo - e).max(e - hi).max(0.0)).fold(0.0, f64::max);
    out.push(
        Check::tolerance(
            "remaining eigenvalues outside [lower, upper], max excess",
            excess,
            0.0,
            SPECTRAL_TOL,
            Provenance::Published,
        )
        .with_note(format!("{} eigenvalues, range [{lo:.6}, {hi:.6}]", others.len())),
    );
    Ok(out)
}

fn p0_spectrum(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &n in &cfg.n_list {
        if n < 3 {
            continue;
        }
        let target = mu0_closed(n);
        let closed = p0_block_spectrum_closed(n)?;
        out.push(Check::tolerance(
            format!("N={n} mu0 from closed-form kappa"),
            closed.mu0,
            target,
            SPECTRAL_TOL,
            Provenance::Published,
        ));
        let spec = k_spectrum(&SingleParticleBasis::default_for(n)?, cfg.n_samples, rng)?;
        let mc = p0_block_spectrum(&spec)?;
        out.push(Check::tolerance(
            format!("N={n} mu0 from Monte Carlo K"),
            mc.mu0,
            target,
            SPECTRAL_TOL,
            Provenance::Published,
        ));
        out.push(Check::tolerance(
            format!("N={n} conjugate gap 1 - mu0 from Monte Carlo K"),
            mc.gap0,
            1.0 - target,
            SPECTRAL_TOL,
            Provenance::Published,
        ));
        let stated = match n {
            3 => Some(1.0 / 3.0),
            4 => Some(16.0 / 27.0),
            _ => None,
        };
        if let Some(g) = stated {
            out.push(Check::tolerance(
                format!("N={n} conjugate gap value"),
                closed.gap0,
                g,
                1e-12,
                Provenance::Published,
            ));
        }
    }
    Ok(out)
}

/// Long stationary run recorded on a grid and the fitted decay rate of
/// observable 0.
fn relaxation_rate(
    state: ParticleState,
    process: ProcessKind,
    kernel: KernelSpec,
    f: TrialFunction,
    dt: f64,
    t_max: f64,
    rng: &mut KacRng,
) -> Result<crate::spectral::report::GapReport> {
    let alpha = kernel.alpha;
    let spec = SimSpec {
        process,
        kernel,
        stop: Stop { t_max: Some(t_max), max_events: None },
        recording: Recording::Grid(dt),
        keep_events: false,
    };
    let traj = simulate(&state, &spec, &[Observable::new("f", f)], rng)?;
    autocorr_gap(&traj, 0, alpha, &FitWindow::default())
}

fn conjugate_relaxation(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let start = sample_invariant_recursive(3, rng)?;
    let r = relaxation_rate(
        start,
        ProcessKind::Conjugate,
        KernelSpec::uniform(0.0)?,
        TrialFunction::eta4_difference(3)?,
        0.25,
        200_000.0 * cfg.sim_scale,
        rng,
    )?;
    let pass = r.flag.is_none() && (r.estimate - 0.5).abs() <= 0.05;
    Ok(vec![Check::new(
        "N=3 alpha=0 decay rate of eta4(v1)-eta4(v2)",
        r.estimate,
        r.stderr,
        0.5,
        Provenance::Derived,
        pass,
    )])
}

const N2_NOTE: &str =
    "value under the Dirichlet form used here; the alternative normalization with half this form gives 2 at alpha=1";

fn two_particles(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let basis = Arc::new(SingleParticleBasis::default_for(2)?);
    let family = default_family(&basis);
    let mut out = Vec::new();
    for alpha in [0.0, 1.0, 2.0] {
        let target = 2f64.powf(alpha + 1.0);
        let kernel = KernelSpec::uniform(alpha)?;
        let v = variational_gap(
            2,
            &kernel,
            ProcessKind::Kac,
            &family,
            &FormOpts::default(),
            cfg.n_samples,
            cfg.replicas,
            rng,
        )?;
        let est = v.report.estimate;
        out.push(
            Check::new(
                format!("alpha={alpha} variational"),
                est,
                v.report.stderr,
                target,
                Provenance::Derived,
                (est / target - 1.0).abs() <= 0.02,
            )
            .with_note(format!("{N2_NOTE}; halved: {:.5}", est / 2.0)),
        );
        let f: TrialFunction = SumForm::single(basis.clone(), 0, 1).into();
        let start = sample_invariant_recursive(2, rng)?;
        let r = relaxation_rate(
            start,
            ProcessKind::Kac,
            kernel.clone(),
            f,
            0.1 / target,
            200_000.0 * cfg.sim_scale / target,
            rng,
        )?;
        let pass = r.flag.is_none() && (r.estimate / target - 1.0).abs() <= 0.02;
        out.push(
            Check::new(
                format!("alpha={alpha} autocorrelation"),
                r.estimate,
                r.stderr,
                target,
                Provenance::Derived,
                pass,
            )
            .with_note(format!("{N2_NOTE}; halved: {:.5}", r.estimate / 2.0)),
        );
    }
    Ok(out)
}

fn scaling(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let n = 4;
    let kernel = KernelSpec::uniform(1.0)?;
    let base = |v: &[Vec3]| v[0].x * v[1].y + v[0].norm_squared() * v[2].norm_squared() - v[3].z;
    let unit = TrialFunction::opaque("f", false, base);
    let unit_est = dirichlet_kac(&unit, &unit, n, &kernel, &Frame::default(), cfg.n_samples, rng)?;
    let mut out = Vec::new();
    for (energy, momentum) in [(4.0, Vec3::zeros()), (2.0, Vec3::new(0.5, 0.0, 0.0))] {
        let s = (energy - momentum.norm_squared()).sqrt();
        let pulled = TrialFunction::opaque("f o affine^-1", false, move |x| {
            let v: Vec<Vec3> = x.iter().map(|y| (y - momentum) / s).collect();
            base(&v)
        });
        let frame = Frame { energy, momentum };
        let e = dirichlet_kac(&pulled, &pulled, n, &kernel, &frame, cfg.n_samples, rng)?;
        let factor = s.powf(kernel.alpha);
        let reference = factor * unit_est.value;
        let se = (e.stderr.powi(2) + (factor * unit_est.stderr).powi(2)).sqrt();
        let pass = (e.value - reference).abs() <= 3.0 * se;
        out.push(Check::new(
            format!(
                "E={energy} p=({},{},{}) form vs (E-|p|^2)^(alpha/2) x unit form",
                momentum.x, momentum.y, momentum.z
            ),
            e.value,
            se,
            reference,
            Provenance::Published,
            pass,
        ));
    }
    Ok(out)
}

fn conditional_moments(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let ns = [8usize, 16, 32];
    let per_point = cfg.n_samples / 4;
    let mut one_dev = Vec::new();
    let mut two_dev = Vec::new();
    let mut sups = Vec::new();
    let mut one_z: f64 = 0.0;
    let mut two_z: f64 = 0.0;
    let mut comparisons = 0;
    for &n in &ns {
        let mut worst: f64 = 0.0;
        for a in v_grid(n) {
            let c = cond_moment4_one(n, &Vec3::new(a, 0.0, 0.0), per_point, rng)?;
            worst = worst.max(c.deviation());
            one_z = one_z.max(c.estimate.z(c.exact));
            comparisons += 1;
        }
        one_dev.push((n, worst));
        let mut worst: f64 = 0.0;
        let edge = (0.9 * (n as f64 - 2.0) / 2.0).sqrt();
        for a in [0.0, 0.5, 1.0, 1.5, edge] {
            let v = Vec3::new(a, 0.0, 0.0);
            let c = cond_moment4_two(n, &v, &v, per_point, rng)?;
            worst = worst.max(c.deviation());
            two_z = two_z.max(c.estimate.z(c.exact));
            comparisons += 1;
        }
        two_dev.push((n, worst));
        sups.push((n, k_v8_sup(n, &v_grid(n), per_point, rng)?.0));
    }
    let describe =
        |pts: &[(usize, f64)]| pts.iter().map(|(n, x)| format!("N={n}: {x:.4}")).collect::<Vec<_>>().join(", ");
    let one = fit_c(&one_dev)?;
    let two = fit_c(&two_dev)?;
    let sup_mean = sups.iter().map(|s| s.1).sum::<f64>() / sups.len() as f64;
    let sup_stable = sups.iter().all(|s| (s.1 - sup_mean).abs() <= 0.5 * sup_mean);
    let zmax = bonferroni_z(comparisons);
    Ok(vec![
        Check::new(
            "one fixed particle: N x max|E - S(v)| stable within 50%",
            one.c,
            0.0,
            one.c,
            Provenance::Published,
            one.stable,
        )
        .with_note(format!("N x deviation {}", describe(&one.scaled))),
        Check::new(
            "two fixed particles: N x max|E - S(v,w)| stable within 50%",
            two.c,
            0.0,
            two.c,
            Provenance::Published,
            two.stable,
        )
        .with_note(format!("N x deviation {}", describe(&two.scaled))),
        Check::new(
            "sup of K|v|^8 on the grid stable within 50% over N",
            sup_mean,
            0.0,
            sup_mean,
            Provenance::Published,
            sup_stable,
        )
        .with_note(format!("sup {}", describe(&sups))),
        Check::new(
            "one fixed particle: Monte Carlo vs exact slice moment, max |z|",
            one_z,
            0.0,
            zmax,
            Provenance::Derived,
            one_z <= zmax,
        )
        .diagnostic(),
        Check::new(
            "two fixed particles: Monte Carlo vs exact slice moment, max |z|",
            two_z,
            0.0,
            zmax,
            Provenance::Derived,
            two_z <= zmax,
        )
        .diagnostic(),
    ])
}

fn decomposition(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let trials = 20;
    for n in [3usize, 8] {
        let basis = Arc::new(SingleParticleBasis::default_for(n)?);
        let (lo, hi) = sandwich_bounds(n);
        let mut worst_lo = f64::INFINITY;
        let mut worst_hi = f64::INFINITY;
        let per = cfg.n_samples / trials;
        for _ in 0..trials {
            let f = random_sumform(&basis, rng);
            let d = trial_decompose(&f)?;
            let total = d.s_component_norm2 + d.g_component_norm2;
            let tf: TrialFunction = f.into();
            let norm = inner_product(&tf, &tf, n, per, rng)?;
            // Slack in units of the standard error; negative means violated.
            worst_lo = worst_lo.min((norm.value - lo * total) / norm.stderr + 3.0);
            worst_hi = worst_hi.min((hi * total - norm.value) / norm.stderr + 3.0);
        }
        out.push(
            Check::new(
                format!("N={n} sandwich lower side, min slack (sigma)"),
                worst_lo,
                0.0,
                0.0,
                Provenance::Published,
                worst_lo >= 0.0,
            )
            .with_note(format!("{trials} random sum forms")),
        );
        out.push(
            Check::new(
                format!("N={n} sandwich upper side, min slack (sigma)"),
                worst_hi,
                0.0,
                0.0,
                Provenance::Published,
                worst_hi >= 0.0,
            )
            .with_note(format!("{trials} random sum forms")),
        );

        let f = random_sumform(&basis, rng);
        let d = trial_decompose(&f)?;
        let states = if n == 8 { 100 } else { 40 };
        let pk = verify_pk_s(&d.s, states, 2000, rng)?;
        out.push(
            Check::new(
                format!("N={n} P_k s = ((N-2)/(N-1)) psi_k, max |z|"),
                pk.max_z_stated,
                0.0,
                pk.threshold_z,
                Provenance::Published,
                pk.pass_stated,
            )
            .with_note(format!("{} comparisons, Bonferroni threshold", pk.comparisons)),
        );
        out.push(
            Check::new(
                format!("N={n} P_k s = (N/(N-1)) psi_k, max |z|"),
                pk.max_z_derived,
                0.0,
                pk.threshold_z,
                Provenance::Derived,
                pk.pass_derived,
            )
            .diagnostic(),
        );

        let h = null_space_function(n, 4 * cfg.n_samples, rng)?;
        let g: TrialFunction = d.g.clone().into();
        let s: TrialFunction = d.s.clone().into();
        for (name, a, b) in [("<g,s>", &g, &s), ("<g,h>", &g, &h), ("<s,h>", &s, &h)] {
            let e = inner_product(a, b, n, cfg.n_samples, rng)?;
            // Absolute floor for products that vanish pointwise up to rounding.
            let pass = e.value.abs() <= 3.0 * e.stderr + 1e-12;
            out.push(Check::new(format!("N={n} {name}"), e.value, e.stderr, 0.0, Provenance::Published, pass));
        }
    }
    Ok(out)
}

fn explicit_bound(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let n = 4;
    let bound = conjugate_lower_explicit(n, 2.0)?;
    let basis = Arc::new(SingleParticleBasis::default_for(n)?);
    let family = default_family(&basis);
    let kernel = KernelSpec::uniform(2.0)?;
    let v = variational_gap(
        n,
        &kernel,
        ProcessKind::Conjugate,
        &family,
        &FormOpts::default(),
        cfg.n_samples,
        cfg.replicas,
        rng,
    )?;
    let se = v.report.stderr;
    let floor = bound - 3.0 * se;
    let replica_min = v.replica_values.iter().copied().fold(f64::INFINITY, f64::min);
    let member_min = (0..family.len())
        .filter(|&i| v.pooled.covariance()[(i, i)] > 1e-8)
        .map(|i| rayleigh_quotient(&v.pooled, i))
        .fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::new(
            "pooled minimal Rayleigh quotient >= 28/81 - 3 sigma",
            v.report.estimate,
            se,
            bound,
            Provenance::Published,
            v.report.estimate >= floor,
        ),
        Check::new(
            "replica minimal Rayleigh quotients >= 28/81 - 3 sigma",
            replica_min,
            se,
            bound,
            Provenance::Published,
            replica_min >= floor,
        ),
        Check::new(
            "family member Rayleigh quotients >= 28/81 - 3 sigma",
            member_min,
            se,
            bound,
            Provenance::Published,
            member_min >= floor,
        ),
    ])
}

/// Raw Kac-gap estimates are halved so that N=2 matches the alternative
/// normalization before the 0.1 floor is applied.
pub const NORMALIZATION_ADJUST: f64 = 0.5;

fn gap_sweep(cfg: &VerifyConfig, rng: &mut KacRng) -> Result<Vec<Check>> {
    let kernel = KernelSpec::uniform(1.0)?;
    let mut var_pts = Vec::new();
    let mut ac_pts = Vec::new();
    for &n in &cfg.sweep {
        let basis = Arc::new(SingleParticleBasis::default_for(n)?);
        let family = default_family(&basis);
        let v = variational_gap(
            n,
            &kernel,
            ProcessKind::Kac,
            &family,
            &FormOpts::default(),
            cfg.sweep_samples,
            cfg.replicas,
            rng,
        )?;
        var_pts.push((n, v.report.estimate * NORMALIZATION_ADJUST, v.report.stderr * NORMALIZATION_ADJUST));
        let f = combine(&family, &v.minimizer);
        let start = sample_invariant_recursive(n, rng)?;
        let r = relaxation_rate(start, ProcessKind::Kac, kernel.clone(), f, 0.05, 20_000.0 * cfg.sim_scale, rng)?;
        ac_pts.push((n, r.estimate * NORMALIZATION_ADJUST, r.stderr * NORMALIZATION_ADJUST));
    }
    let mut out = Vec::new();
    for (label, pts) in [("variational", &var_pts), ("autocorrelation", &ac_pts)] {
        let min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let listing = pts.iter().map(|(n, x, s)| format!("N={n}: {x:.4}+-{s:.4}")).collect::<Vec<_>>().join(", ");
        out.push(
            Check::new(
                format!("{label}: min adjusted gap over the sweep >= 0.1"),
                min,
                0.0,
                0.1,
                Provenance::Published,
                min >= 0.1,
            )
            .with_note(listing),
        );
        let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let s: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let finite = y.iter().chain(&s).all(|v| v.is_finite());
        let (_, slope, se) = linear_fit(&x, &y, &s);
        out.push(Check::new(
            format!("{label}: slope in N >= -3 sigma"),
            slope,
            se,
            0.0,
            Provenance::Published,
            finite && slope >= -3.0 * se,
        ));
        let inv: Vec<f64> = x.iter().map(|n| 1.0 / n).collect();
        let (limit, _, _) = linear_fit(&inv, &y, &s);
        out.push(
            Check::new(
                format!("{label}: large-N limit of a + b/N fit >= 0.1"),
                limit,
                0.0,
                0.1,
                Provenance::Derived,
                finite && limit >= 0.1,
            )
            .diagnostic(),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            n_samples: 20_000,
            replicas: 2,
            sweep_samples: 10_000,
            sweep: vec![3, 4],
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn unknown_criterion_is_an_error() {
        assert!(run_criterion(14, &small()).is_err());
    }

    #[test]
    fn deterministic_criteria_pass_at_small_size() {
        for id in [2, 4] {
            let r = run_criterion(id, &small()).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn criteria_are_reproducible() {
        let a = run_criterion(4, &small()).unwrap();
        let b = run_criterion(4, &small()).unwrap();
        assert_eq!(a.checks, b.checks);
    }

    #[test]
    fn diagnostic_checks_do_not_decide() {
        let c = Check::new("x", 0.0, 0.0, 0.0, Provenance::Derived, false).diagnostic();
        assert!(c.diagnostic);
        let json = serde_json::to_string(&Check::new("y", 0.0, 0.0, 0.0, Provenance::Derived, true)).unwrap();
        assert!(!json.contains("diagnostic"));
    }
}
