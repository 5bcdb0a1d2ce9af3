//! The experiments behind each subcommand. Each returns its checks and the
//! detail files it wrote.
//!
//! Seeds: job `i` of a run (the i-th entry of the N list, or criterion `i`
//! of verify-all) draws from `stream_rng(seed, i)`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kac_core::chaos::{joint_chaos_test, marginal_moments, write_moment_csv, MomentReport, Provenance};
use kac_core::kinematics::KernelSpec;
use kac_core::process::{simulate, Observable, ProcessKind, Recording, SimSpec, Stop};
use kac_core::rng::stream_rng;
use kac_core::sampling::{sample_invariant_recursive, write_states};
use kac_core::spectral::basis::{marginal_moment, SingleParticleBasis};
use kac_core::spectral::dirichlet::FormOpts;
use kac_core::spectral::kspec::{k_spectrum, kappa_conserved, mu0_closed, p0_block_spectrum, Mode};
use kac_core::spectral::report::BasisInfo;
use kac_core::spectral::trial::{default_family, SumForm, TrialFunction};
use kac_core::spectral::variational::{matrix_csv, variational_gap};
use kac_core::stats::MeanAcc;
use kac_core::verify::{run_criterion, Check, VerifyConfig};

use crate::config::{Experiment, ExperimentConfig, Process};
use crate::HarnessError;

pub struct Outcome {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

/// Note attached to N=2 Kac gap reports.
pub const N2_NOTE: &str = "closed form 2^(alpha+1) under the Dirichlet form used here; \
the alternative normalization (half this form) gives 2 at alpha=1; both values are reported";

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    fs::create_dir_all(out).map_err(|source| HarnessError::Io { path: out.to_path_buf(), source })?;
    match cfg.experiment {
        Experiment::Sample => sample(cfg, out),
        Experiment::Simulate => simulate_exp(cfg, out),
        Experiment::Gap => gap(cfg, out),
        Experiment::Spectrum => spectrum(cfg, out),
        Experiment::Chaos => chaos(cfg, out),
        Experiment::VerifyAll => verify_all(cfg),
    }
}

fn write_file(path: PathBuf, text: String) -> Result<PathBuf, HarnessError> {
    fs::write(&path, text).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn sigma_check(name: String, est: kac_core::stats::Estimate, reference: f64, prov: Provenance, sigma: f64) -> Check {
    let pass = est.z(reference) <= sigma;
    Check::new(name, est.value, est.stderr, reference, prov, pass)
}

fn sample(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let mut checks = Vec::new();
    let mut files = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let states =
            (0..cfg.n_samples).map(|_| sample_invariant_recursive(n, &mut rng)).collect::<Result<Vec<_>, _>>()?;
        let path = out.join(format!("states_N{n}.kacs"));
        let file = fs::File::create(&path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        write_states(&mut BufWriter::new(file), &states)?;
        files.push(path);
        let mut m4 = MeanAcc::new();
        let mut defect: f64 = 0.0;
        for s in &states {
            m4.push(s.velocities[0].norm_squared().powi(2));
            let d = s.validate(1e-12);
            defect = defect.max(d.energy_defect).max(d.momentum_defect);
        }
        checks.push(Check::new(
            format!("N={n} max constraint defect"),
            defect,
            0.0,
            0.0,
            Provenance::Trivial,
            defect <= 1e-12,
        ));
        checks.push(sigma_check(
            format!("N={n} E|v1|^4"),
            m4.estimate(),
            marginal_moment(n, 2),
            Provenance::Derived,
            cfg.tolerance.sigma,
        ));
    }
    Ok(Outcome { checks, files })
}

fn process_kind(p: Process) -> ProcessKind {
    match p {
        Process::Kac => ProcessKind::Kac,
        Process::Conjugate => ProcessKind::Conjugate,
    }
}

fn simulate_exp(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let mut checks = Vec::new();
    let mut files = Vec::new();
    let kernel = KernelSpec::uniform(cfg.alpha)?;
    for (i, &n) in cfg.n.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let start = sample_invariant_recursive(n, &mut rng)?;
        let basis = Arc::new(SingleParticleBasis::new(n, 2, 0)?);
        let mut obs = vec![Observable::new("v1x", SumForm::single(basis.clone(), 0, 1).into())];
        if n >= 3 {
            obs.push(Observable::new("eta4_diff", TrialFunction::eta4_difference(n)?));
        }
        let spec = SimSpec {
            process: process_kind(cfg.process),
            kernel: kernel.clone(),
            stop: Stop { t_max: Some(cfg.t_max), max_events: None },
            recording: Recording::Grid(cfg.dt),
            keep_events: false,
        };
        let traj = simulate(&start, &spec, &obs, &mut rng)?;
        let path = out.join(format!("trajectory_N{n}.csv"));
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        files.push(write_file(path, String::from_utf8_lossy(&buf).into_owned())?);
        let d = traj.final_state.validate(1e-9);
        let defect = d.energy_defect.max(d.momentum_defect);
        checks.push(Check::new(
            format!("N={n} final-state constraint defect"),
            defect,
            0.0,
            0.0,
            Provenance::Trivial,
            defect <= 1e-9,
        ));
        checks.push(Check::new(
            format!("N={n} events in [0, t_max]"),
            traj.event_count as f64,
            0.0,
            0.0,
            Provenance::Trivial,
            traj.event_count > 0,
        ));
    }
    Ok(Outcome { checks, files })
}

fn gap(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let mut checks = Vec::new();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    let kernel = KernelSpec::uniform(cfg.alpha)?;
    let process = process_kind(cfg.process);
    let pname = match cfg.process {
        Process::Kac => "kac",
        Process::Conjugate => "conjugate",
    };
    for (i, &n) in cfg.n.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let basis = Arc::new(SingleParticleBasis::default_for(n)?);
        let family = default_family(&basis);
        let v = variational_gap(
            n,
            &kernel,
            process,
            &family,
            &FormOpts::default(),
            cfg.n_samples,
            cfg.replicas.max(2),
            &mut rng,
        )?;
        let mut report = v.report.clone().with_seed(cfg.seed);
        report.basis = Some(BasisInfo { radial_deg: basis.radial_deg, angular_deg: basis.angular_deg });
        let name = format!("N={n} alpha={} {pname} variational gap", cfg.alpha);
        match (cfg.process, n) {
            (Process::Kac, 2) => {
                let closed = 2f64.powf(cfg.alpha + 1.0);
                report.note = Some(format!("{N2_NOTE}; halved estimate {:.6}", report.estimate / 2.0));
                let pass = (report.estimate / closed - 1.0).abs() <= cfg.tolerance.relative;
                checks.push(
                    Check::new(name, report.estimate, report.stderr, closed, Provenance::Derived, pass)
                        .with_note(report.note.clone().unwrap_or_default()),
                );
            }
            (Process::Conjugate, _) if cfg.alpha == 0.0 && n >= 3 => {
                let exact = 1.0 - mu0_closed(n);
                let pass =
                    (report.estimate - exact).abs() <= cfg.tolerance.sigma * report.stderr + cfg.tolerance.spectral;
                checks.push(Check::new(name, report.estimate, report.stderr, exact, Provenance::Published, pass));
            }
            _ => {
                let pass = report.estimate > 0.0 && report.estimate.is_finite();
                checks.push(
                    Check::new(name, report.estimate, report.stderr, 0.0, Provenance::Trivial, pass)
                        .with_note("upper bound; checked for positivity only"),
                );
            }
        }
        if cfg.dump_matrices {
            files.push(write_file(out.join(format!("dirichlet_N{n}.csv")), matrix_csv(&v.pooled.dirichlet))?);
            files.push(write_file(out.join(format!("covariance_N{n}.csv")), matrix_csv(&v.pooled.covariance()))?);
        }
        reports.push(report);
    }
    let mut csv = String::from("method,N,alpha,estimate,stderr,n_samples,seed,radial_deg,angular_deg,note\n");
    for r in &reports {
        let b = r.basis.unwrap_or(BasisInfo { radial_deg: 0, angular_deg: 0 });
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},\"{}\"\n",
            r.method,
            r.n,
            r.alpha,
            r.estimate,
            r.stderr,
            r.n_samples,
            r.seed.unwrap_or(0),
            b.radial_deg,
            b.angular_deg,
            r.note.clone().unwrap_or_default()
        ));
    }
    files.push(write_file(out.join("gap.csv"), csv)?);
    files.push(write_file(out.join("gap.json"), serde_json::to_string_pretty(&reports)? + "\n")?);
    Ok(Outcome { checks, files })
}

fn spectrum(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let mut checks = Vec::new();
    let mut files = Vec::new();
    let tol = cfg.tolerance.spectral;
    for (i, &n) in cfg.n.iter().enumerate() {
        if n < 3 {
            return Err(HarnessError::Usage(format!("N: the spectrum experiment needs N >= 3 (got {n})")));
        }
        let mut rng = stream_rng(cfg.seed, i as u64);
        let spec = k_spectrum(&SingleParticleBasis::default_for(n)?, cfg.n_samples, &mut rng)?;
        let mut csv = String::from("index,eigenvalue,mode\n");
        for (k, (e, m)) in spec.eigenvalues.iter().zip(&spec.modes).enumerate() {
            csv.push_str(&format!("{k},{e},{m:?}\n"));
        }
        files.push(write_file(out.join(format!("spectrum_N{n}.csv")), csv)?);
        let conserved = spec.of_mode(Mode::Conserved);
        let kc = kappa_conserved(n);
        let worst = conserved.iter().map(|e| (e - kc).abs()).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("N={n} four conserved eigenvalues at -1/(N-1)"),
            conserved.len() as f64,
            0.0,
            4.0,
            Provenance::Published,
            conserved.len() == 4 && worst <= tol,
        ));
        let p0 = p0_block_spectrum(&spec)?;
        let mu0 = mu0_closed(n);
        checks.push(Check::new(
            format!("N={n} mu0"),
            p0.mu0,
            0.0,
            mu0,
            Provenance::Published,
            (p0.mu0 - mu0).abs() <= tol,
        ));
    }
    Ok(Outcome { checks, files })
}

fn chaos(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, HarnessError> {
    let mut rows: Vec<MomentReport> = Vec::new();
    let mut checks = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, i as u64);
        rows.extend(marginal_moments(n, &[2, 4, 6], cfg.n_samples, &mut rng)?);
        if n >= 3 {
            let j = joint_chaos_test(n, cfg.n_samples, &mut rng)?;
            let worst = j.high_mode_correlations.iter().map(|(_, e)| e.value.abs()).fold(0.0, f64::max);
            checks.push(Check::new(
                format!("N={n} high-mode pair correlations within the K bound"),
                worst,
                0.0,
                j.bound,
                Provenance::Published,
                j.within_bound,
            ));
            rows.extend(j.moments);
        }
    }
    let sigma = cfg.tolerance.sigma;
    for r in &rows {
        let pass = (r.estimate - r.reference).abs() <= sigma * r.stderr + 1e-12;
        checks.push(Check::new(
            format!("N={} {}", r.n, r.observable),
            r.estimate,
            r.stderr,
            r.reference,
            r.provenance,
            pass,
        ));
    }
    let mut buf = Vec::new();
    write_moment_csv(&mut buf, &rows)?;
    let files = vec![write_file(out.join("chaos.csv"), String::from_utf8_lossy(&buf).into_owned())?];
    Ok(Outcome { checks, files })
}

fn verify_all(cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    let vc = VerifyConfig {
        n_list: cfg.n.clone(),
        replicas: cfg.replicas.max(2),
        ..VerifyConfig::scaled(cfg.seed, cfg.n_samples)
    };
    let mut checks = Vec::new();
    for (id, title) in kac_core::verify::CRITERIA {
        match run_criterion(id, &vc) {
            Ok(r) => {
                for mut c in r.checks {
                    c.name = format!("criterion {id:02} ({title}): {}", c.name);
                    checks.push(c);
                }
            }
            // A criterion that cannot be evaluated at this budget is a failed check.
            Err(e) => checks.push(
                Check::new(format!("criterion {id:02} ({title})"), f64::NAN, 0.0, f64::NAN, Provenance::Trivial, false)
                    .with_note(e.to_string()),
            ),
        }
    }
    Ok(Outcome { checks, files: Vec::new() })
}
