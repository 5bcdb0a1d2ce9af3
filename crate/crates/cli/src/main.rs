use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kac_gap::config::{parse, validate, Experiment, ExperimentConfig};
use kac_gap::{run, HarnessError};

/// Run a kac-core experiment and write a JSON summary with CSV details.
#[derive(Debug, Parser)]
#[command(name = "kac-gap", version)]
struct Cli {
    /// sample, simulate, gap, spectrum, chaos or verify-all
    experiment: Experiment,
    /// Configuration file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
            parse(&text, cli.experiment)?
        }
        None => ExperimentConfig::defaults(cli.experiment),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    let problems = validate(&cfg);
    if !problems.is_empty() {
        let lines = problems.into_iter().map(|(f, m)| format!("{f}: {m}")).collect();
        return Err(kac_gap::ConfigError(lines).into());
    }
    Ok(cfg)
}

fn threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var("KAC_GAP_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage(format!("KAC_GAP_THREADS: expected a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Usage(format!("KAC_GAP_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|_| configure(&cli)).and_then(|cfg| run(&cfg, &cfg.output));
    match result {
        Ok(summary) => {
            for c in &summary.checks {
                let tag = if c.pass {
                    "pass"
                } else if c.diagnostic {
                    "diag"
                } else {
                    "FAIL"
                };
                println!("{tag} {}: {:.6} (reference {:.6})", c.name, c.estimate, c.reference);
            }
            println!(
                "run {}: {} checks, report in {}",
                summary.run_id,
                summary.checks.len(),
                summary.files[0].display()
            );
            if summary.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("kac-gap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
