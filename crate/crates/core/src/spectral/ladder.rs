//! The gap ladder linking Kac gaps at successive N through conjugate gaps.

use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// Explicit lower bound on the conjugate gap for N >= 4:
/// `((N-1)/N)^{1 - alpha/2} (1 - 1/(N-1) - (8/3)/(N-1)^2 - (2/3)/(N-1)^3)`.
pub fn conjugate_lower_explicit(n: usize, alpha: f64) -> Result<f64> {
    if n < 4 {
        return Err(KacError::TooFewParticles(n, 4));
    }
    let m = n as f64 - 1.0;
    let core = 1.0 - 1.0 / m - (8.0 / 3.0) / (m * m) - (2.0 / 3.0) / (m * m * m);
    Ok((m / n as f64).powf(1.0 - alpha / 2.0) * core)
}

/// Asymptotic form `1 - 1/N - C / N^{3/2}` with a caller-chosen constant.
pub fn conjugate_lower_asymptotic(n: usize, c: f64) -> f64 {
    let nf = n as f64;
    1.0 - 1.0 / nf - c / nf.powf(1.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    #[serde(rename = "N")]
    pub n: usize,
    pub conjugate_lower: f64,
    pub kac_lower: f64,
}

/// Iterate `Delta_N >= (N/(N-1)) Delta_{N-1} hat Delta_N` from the N=2 seed
/// up to `n_max`.
pub fn gap_ladder(n_max: usize, seed_gap_2: f64, conjugate_lower: impl Fn(usize) -> f64) -> Result<Vec<LadderRung>> {
    if !(seed_gap_2 > 0.0) {
        return Err(KacError::InvalidArgument(format!("seed gap {seed_gap_2} must be positive")));
    }
    if n_max < 3 {
        return Err(KacError::InvalidArgument("n_max must be >= 3".into()));
    }
    let mut out = Vec::with_capacity(n_max - 2);
    let mut gap = seed_gap_2;
    for n in 3..=n_max {
        let c = conjugate_lower(n);
        if !(c > 0.0) {
            return Err(KacError::InvalidArgument(format!("conjugate lower bound {c} at N={n} must be positive")));
        }
        gap *= n as f64 / (n as f64 - 1.0) * c;
        out.push(LadderRung { n, conjugate_lower: c, kac_lower: gap });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_bound_at_four() {
        assert!((conjugate_lower_explicit(4, 2.0).unwrap() - 28.0 / 81.0).abs() < 1e-15);
        assert!(conjugate_lower_explicit(3, 2.0).is_err());
    }

    #[test]
    fn unit_conjugate_gaps_grow_linearly() {
        let l = gap_ladder(10, 2.0, |_| 1.0).unwrap();
        for r in &l {
            assert!((r.kac_lower - r.n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn telescoping_ladder_is_constant() {
        let l = gap_ladder(50, 4.0, |n| 1.0 - 1.0 / n as f64).unwrap();
        for r in &l {
            assert!((r.kac_lower - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        assert!(gap_ladder(5, 0.0, |_| 1.0).is_err());
        assert!(gap_ladder(5, 1.0, |n| if n == 4 { -0.1 } else { 1.0 }).is_err());
    }
}
