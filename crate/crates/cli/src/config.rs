//! Experiment configuration: a flat key-value file with one section per
//! experiment. Top-level keys are shared defaults; keys in the section
//! named after the experiment override them.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sample,
    Simulate,
    Gap,
    Spectrum,
    Chaos,
    VerifyAll,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Sample,
        Experiment::Simulate,
        Experiment::Gap,
        Experiment::Spectrum,
        Experiment::Chaos,
        Experiment::VerifyAll,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Simulate => "simulate",
            Experiment::Gap => "gap",
            Experiment::Spectrum => "spectrum",
            Experiment::Chaos => "chaos",
            Experiment::VerifyAll => "verify-all",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Kac,
    Conjugate,
}

/// Overrides of the default pass criteria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Standard errors allowed between a Monte Carlo estimate and its reference.
    pub sigma: f64,
    /// Absolute tolerance for spectral comparisons.
    pub spectral: f64,
    /// Relative tolerance for closed-form gap comparisons.
    pub relative: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { sigma: 3.0, spectral: 0.01, relative: 0.02 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub alpha: f64,
    pub kernel: String,
    pub process: Process,
    pub n_samples: usize,
    pub replicas: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Simulation horizon and grid spacing.
    pub t_max: f64,
    pub dt: f64,
    /// Write the form matrices of the gap experiment as CSV.
    pub dump_matrices: bool,
    pub tolerance: Tolerance,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        Self {
            experiment,
            n: vec![3, 4, 8],
            alpha: 1.0,
            kernel: "uniform".into(),
            process: Process::Kac,
            n_samples: if experiment == Experiment::VerifyAll { 1_000_000 } else { 100_000 },
            replicas: 4,
            seed: 1,
            output: PathBuf::from("kac-gap-out"),
            t_max: 100.0,
            dt: 0.1,
            dump_matrices: false,
            tolerance: Tolerance::default(),
        }
    }
}

/// Every problem found in a configuration, each prefixed with its field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

const KEYS: [&str; 13] = [
    "experiment",
    "N",
    "alpha",
    "kernel",
    "process",
    "n_samples",
    "replicas",
    "seed",
    "output",
    "t_max",
    "dt",
    "dump_matrices",
    "tolerance",
];

struct Reader<'a> {
    errors: &'a mut Vec<String>,
    prefix: String,
}

impl Reader<'_> {
    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn fail(&mut self, key: &str, msg: impl fmt::Display) {
        let p = self.path(key);
        self.errors.push(format!("{p}: {msg}"));
    }

    fn float(&mut self, v: &Value, key: &str) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.fail(key, "expected a number");
                None
            }
        }
    }

    fn uint(&mut self, v: &Value, key: &str) -> Option<u64> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.fail(key, "expected a non-negative integer");
                None
            }
        }
    }

    fn string(&mut self, v: &Value, key: &str) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.fail(key, "expected a string");
                None
            }
        }
    }

    fn apply(&mut self, table: &Table, cfg: &mut ExperimentConfig) {
        for (key, v) in table {
            match key.as_str() {
                "experiment" => {
                    if let Some(s) = self.string(v, key) {
                        if s != cfg.experiment.name() {
                            self.fail(key, format!("section is for '{s}' but '{}' was requested", cfg.experiment));
                        }
                    }
                }
                "N" => {
                    let items: Vec<Value> = match v {
                        Value::Array(a) => a.clone(),
                        other => vec![other.clone()],
                    };
                    let parsed: Vec<Option<u64>> = items.iter().map(|x| self.uint(x, key)).collect();
                    if parsed.iter().all(Option::is_some) {
                        cfg.n = parsed.into_iter().map(|x| x.unwrap() as usize).collect();
                    }
                }
                "alpha" => cfg.alpha = self.float(v, key).unwrap_or(cfg.alpha),
                "kernel" => cfg.kernel = self.string(v, key).unwrap_or_else(|| cfg.kernel.clone()),
                "process" => match self.string(v, key).as_deref() {
                    Some("kac") => cfg.process = Process::Kac,
                    Some("conjugate") => cfg.process = Process::Conjugate,
                    Some(other) => self.fail(key, format!("unknown process '{other}' (kac or conjugate)")),
                    None => {}
                },
                "n_samples" => cfg.n_samples = self.uint(v, key).map_or(cfg.n_samples, |x| x as usize),
                "replicas" => cfg.replicas = self.uint(v, key).map_or(cfg.replicas, |x| x as usize),
                "seed" => cfg.seed = self.uint(v, key).unwrap_or(cfg.seed),
                "output" => {
                    if let Some(s) = self.string(v, key) {
                        cfg.output = PathBuf::from(s);
                    }
                }
                "t_max" => cfg.t_max = self.float(v, key).unwrap_or(cfg.t_max),
                "dt" => cfg.dt = self.float(v, key).unwrap_or(cfg.dt),
                "dump_matrices" => match v {
                    Value::Boolean(b) => cfg.dump_matrices = *b,
                    _ => self.fail(key, "expected true or false"),
                },
                "tolerance" => match v {
                    Value::Table(t) => {
                        for (k, x) in t {
                            let sub = format!("tolerance.{k}");
                            let val = self.float(x, &sub);
                            match (k.as_str(), val) {
                                ("sigma", Some(x)) => cfg.tolerance.sigma = x,
                                ("spectral", Some(x)) => cfg.tolerance.spectral = x,
                                ("relative", Some(x)) => cfg.tolerance.relative = x,
                                (_, None) => {}
                                _ => self.fail(&sub, "unknown key (sigma, spectral, relative)"),
                            }
                        }
                    }
                    _ => self.fail(key, "expected a table"),
                },
                other if Experiment::from_str(other).is_ok() => {}
                other => self.fail(other, format!("unknown key (expected one of {})", KEYS.join(", "))),
            }
        }
    }
}

/// Resolve the configuration of `experiment` from the file contents `text`.
pub fn parse(text: &str, experiment: Experiment) -> Result<ExperimentConfig, ConfigError> {
    let root: Table =
        text.parse().map_err(|e: toml::de::Error| ConfigError(vec![format!("config: {}", e.message())]))?;
    let mut cfg = ExperimentConfig::defaults(experiment);
    let mut errors = Vec::new();
    Reader { errors: &mut errors, prefix: String::new() }.apply(&root, &mut cfg);
    match root.get(experiment.name()) {
        Some(Value::Table(section)) => {
            Reader { errors: &mut errors, prefix: experiment.name().to_string() }.apply(section, &mut cfg);
        }
        Some(_) => errors.push(format!("{}: expected a section", experiment.name())),
        None => {}
    }
    let section = root.get(experiment.name()).and_then(Value::as_table);
    for (field, msg) in validate(&cfg) {
        let top = field.split('.').next().unwrap_or(field);
        match section {
            Some(t) if t.contains_key(top) => errors.push(format!("{}.{field}: {msg}", experiment.name())),
            _ => errors.push(format!("{field}: {msg}")),
        }
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError(errors))
    }
}

/// Domain checks on a resolved configuration as `(field, message)` pairs.
pub fn validate(cfg: &ExperimentConfig) -> Vec<(&'static str, String)> {
    let mut e = Vec::new();
    if cfg.n.is_empty() {
        e.push(("N", "at least one particle count is required".to_string()));
    }
    for &n in &cfg.n {
        if n < 2 {
            e.push(("N", format!("particle count {n} is below 2")));
        }
    }
    if !(0.0..=2.0).contains(&cfg.alpha) {
        e.push(("alpha", format!("alpha out of [0,2] (got {})", cfg.alpha)));
    }
    if cfg.kernel != "uniform" {
        e.push(("kernel", format!("unknown kernel '{}' (supported: uniform)", cfg.kernel)));
    }
    if cfg.replicas < 1 {
        e.push(("replicas", "must be >= 1".to_string()));
    }
    if cfg.n_samples < 1 {
        e.push(("n_samples", "must be >= 1".to_string()));
    }
    if cfg.t_max.is_nan() || cfg.t_max <= 0.0 {
        e.push(("t_max", "must be positive".to_string()));
    }
    if !(cfg.dt > 0.0 && cfg.dt < cfg.t_max) {
        e.push(("dt", "must be positive and below t_max".to_string()));
    }
    let t = &cfg.tolerance;
    if !(t.sigma > 0.0 && t.spectral > 0.0 && t.relative > 0.0) {
        e.push(("tolerance", "all tolerances must be positive".to_string()));
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_overrides_top_level() {
        let text = "seed = 5\nalpha = 0.5\n[gap]\nN = 2\nalpha = 1\n[chaos]\nalpha = 2\n";
        let c = parse(text, Experiment::Gap).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.n, vec![2]);
        assert_eq!(c.alpha, 1.0);
        let c = parse(text, Experiment::Chaos).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.n, vec![3, 4, 8]);
    }

    #[test]
    fn alpha_out_of_range_names_the_field() {
        let err = parse("[gap]\nalpha = 3\n", Experiment::Gap).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].starts_with("gap.alpha: alpha out of [0,2]"), "{err}");
    }

    #[test]
    fn every_problem_is_reported() {
        let err = parse("N = [1, 3]\nreplicas = 0\nbogus = 1\n[gap]\nkernel = 'x'\n", Experiment::Gap).unwrap_err();
        let text = err.to_string();
        for needle in ["bogus: unknown key", "N: particle count 1", "replicas: must be", "kernel: unknown kernel"] {
            assert!(text.contains(needle), "{text}");
        }
    }

    #[test]
    fn type_errors_and_tolerances() {
        let err = parse("alpha = 'high'\n", Experiment::Gap).unwrap_err();
        assert!(err.0[0].starts_with("alpha: expected a number"));
        let c = parse("[spectrum.tolerance]\nspectral = 0.05\n", Experiment::Spectrum).unwrap();
        assert_eq!(c.tolerance.spectral, 0.05);
        assert_eq!(c.tolerance.sigma, 3.0);
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("bogus".parse::<Experiment>().is_err());
    }

    #[test]
    fn malformed_text_is_an_error() {
        assert!(parse("alpha = = 1", Experiment::Gap).is_err());
    }
}
