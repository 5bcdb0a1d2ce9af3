//! Small statistics toolkit: streaming moments, batch error bars, and
//! goodness-of-fit statistics.

use serde::{Deserialize, Serialize};

/// Streaming mean and variance (Welford), mergeable across chunks.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MeanAcc {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: Self) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
        self
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean(), stderr: self.stderr(), n: self.n }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, n: 0 }
    }

    /// Number of standard errors separating the estimate from `reference`.
    pub fn z(&self, reference: f64) -> f64 {
        let d = (self.value - reference).abs();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, reference: f64, sigmas: f64) -> bool {
        (self.value - reference).abs() <= sigmas * self.stderr
    }
}

/// Combined standard error of two independent estimates.
pub fn combined_stderr(a: &Estimate, b: &Estimate) -> f64 {
    (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

/// Mean and standard error of a set of replica (batch) values.
pub fn replica_estimate(values: &[f64]) -> Estimate {
    let mut acc = MeanAcc::new();
    for &v in values {
        acc.push(v);
    }
    acc.estimate()
}

/// One-sample Kolmogorov-Smirnov statistic of `sample` against `cdf`, and
/// the asymptotic p-value.
pub fn ks_test(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    sample.sort_by(|a, b| a.total_cmp(b));
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    (d, kolmogorov_sf((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Weighted least-squares fit of `y = a + b x`; returns `(a, b, se_b)`.
pub fn linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64, f64) {
    let w: Vec<f64> = sigma.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let b = (sw * sxy - sx * sy) / det;
    let a = (sy - b * sx) / sw;
    (a, b, (sw / det).sqrt())
}

/// Two-sided z threshold keeping the family-wise false-alarm rate of `m`
/// comparisons at the single-comparison 3-sigma level (Bonferroni).
pub fn bonferroni_z(m: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let level = 2.0 * (1.0 - Normal::standard().cdf(3.0));
    Normal::standard().inverse_cdf(1.0 - level / (2.0 * m.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bonferroni_threshold() {
        assert!((bonferroni_z(1) - 3.0).abs() < 1e-9);
        assert!(bonferroni_z(100) > 4.0 && bonferroni_z(100) < 4.5);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut a = MeanAcc::new();
        let mut b = MeanAcc::new();
        for (i, &x) in xs.iter().enumerate() {
            if i < 400 {
                a.push(x)
            } else {
                b.push(x)
            }
        }
        let m = a.merge(b);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((m.mean() - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1.36) ~ 0.05, Q(1.63) ~ 0.01
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (a, b, _) = linear_fit(&x, &y, &[1.0; 4]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }
}
