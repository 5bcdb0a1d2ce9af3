//! Relaxation-rate estimation from the stationary autocorrelation of an
//! observable recorded on a uniform time grid.

use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::process::Trajectory;
use crate::spectral::report::GapReport;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitWindow {
    /// The fit starts at the first lag whose autocorrelation is below this.
    pub upper: f64,
    /// The fit ends before the first lag whose autocorrelation is below this.
    pub lower: f64,
    /// Jackknife blocks.
    pub blocks: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { upper: 0.8, lower: 0.1, blocks: 16 }
    }
}

/// Per-block lagged sums of the centered series.
struct BlockSums {
    /// sums[b][lag]
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<f64>>,
}

fn block_sums(x: &[f64], blocks: usize, max_lag: usize) -> BlockSums {
    let len = x.len() / blocks;
    let mut sums = vec![vec![0.0; max_lag + 1]; blocks];
    let mut counts = vec![vec![0.0; max_lag + 1]; blocks];
    for b in 0..blocks {
        let xs = &x[b * len..(b + 1) * len];
        for lag in 0..=max_lag.min(len.saturating_sub(1)) {
            let mut s = 0.0;
            for t in 0..len - lag {
                s += xs[t] * xs[t + lag];
            }
            sums[b][lag] = s;
            counts[b][lag] = (len - lag) as f64;
        }
    }
    BlockSums { sums, counts }
}

/// Normalized autocorrelation using all blocks except `skip`.
fn rho(bs: &BlockSums, skip: Option<usize>, max_lag: usize) -> Vec<f64> {
    let mut c = vec![0.0; max_lag + 1];
    for (lag, cl) in c.iter_mut().enumerate() {
        let mut s = 0.0;
        let mut n = 0.0;
        for b in 0..bs.sums.len() {
            if Some(b) == skip {
                continue;
            }
            s += bs.sums[b][lag];
            n += bs.counts[b][lag];
        }
        *cl = if n > 0.0 { s / n } else { f64::NAN };
    }
    let c0 = c[0];
    c.iter().map(|v| v / c0).collect()
}

/// Least-squares slope of `log rho` against time over `lags`.
fn fit_rate(rho: &[f64], lags: &[usize], dt: f64) -> f64 {
    let xs: Vec<f64> = lags.iter().map(|&l| l as f64 * dt).collect();
    let ys: Vec<f64> = lags.iter().map(|&l| rho[l].max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -sxy / sxx
}

/// Exponential-decay rate of the autocorrelation of `series` sampled every
/// `dt`, with a jackknife error over contiguous blocks. Non-decaying or
/// non-exponential inputs come back flagged with a NaN estimate.
pub fn autocorr_rate(series: &[f64], dt: f64, window: &FitWindow) -> Result<(f64, f64, Option<String>)> {
    if !(dt > 0.0) {
        return Err(KacError::InvalidArgument("grid spacing must be positive".into()));
    }
    if window.blocks < 2 || series.len() < 16 * window.blocks {
        return Err(KacError::InvalidArgument("series too short for the jackknife blocks".into()));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if !(var > 0.0) {
        return Err(KacError::InvalidArgument("observable has zero variance".into()));
    }
    // Lags are searched up to a quarter block, doubling the range until the
    // autocorrelation drops below the lower window edge.
    let block_len = x.len() / window.blocks;
    let cap = (block_len / 4).max(2);
    let mut max_lag = cap.min(64);
    let (bs, full) = loop {
        let bs = block_sums(&x, window.blocks, max_lag);
        let full = rho(&bs, None, max_lag);
        if max_lag >= cap || full[1..].iter().any(|&r| r < window.lower) {
            break (bs, full);
        }
        max_lag = (2 * max_lag).min(cap);
    };
    let start = match (1..=max_lag).find(|&l| full[l] < window.upper) {
        Some(s) => s,
        None => return Ok((f64::NAN, f64::NAN, Some("autocorrelation does not decay within the lag range".into()))),
    };
    let stop = (start..=max_lag).find(|&l| full[l] < window.lower).unwrap_or(max_lag + 1);
    let lags: Vec<usize> = (start..stop).collect();
    if lags.len() < 3 {
        return Ok((
            f64::NAN,
            f64::NAN,
            Some(format!("only {} lags in the fit window; not an exponential decay", lags.len())),
        ));
    }
    let rate = fit_rate(&full, &lags, dt);
    if !(rate > 0.0) {
        return Ok((f64::NAN, f64::NAN, Some("non-positive fitted rate".into())));
    }
    let b = window.blocks as f64;
    let loo: Vec<f64> = (0..window.blocks).map(|k| fit_rate(&rho(&bs, Some(k), max_lag), &lags, dt)).collect();
    let m = loo.iter().sum::<f64>() / b;
    let se = ((b - 1.0) / b * loo.iter().map(|r| (r - m) * (r - m)).sum::<f64>()).sqrt();
    Ok((rate, se, None))
}

/// Relaxation-rate report for observable column `column` of a trajectory
/// recorded on a uniform grid.
pub fn autocorr_gap(traj: &Trajectory, column: usize, alpha: f64, window: &FitWindow) -> Result<GapReport> {
    if column >= traj.observable_names.len() {
        return Err(KacError::IndexOutOfRange { index: column, n: traj.observable_names.len() });
    }
    if traj.samples.len() < 3 {
        return Err(KacError::InvalidArgument("trajectory too short".into()));
    }
    let dt = traj.samples[1].t - traj.samples[0].t;
    let uniform = traj.samples.windows(2).all(|w| ((w[1].t - w[0].t) - dt).abs() < 1e-9 * dt.max(1.0));
    if !uniform {
        return Err(KacError::InvalidArgument("autocorrelation needs grid recording".into()));
    }
    let series = traj.series(column);
    let (rate, se, flag) = autocorr_rate(&series, dt, window)?;
    Ok(GapReport {
        method: "autocorrelation".into(),
        n: traj.initial.n(),
        alpha,
        estimate: rate,
        stderr: se,
        n_samples: series.len(),
        seed: None,
        basis: None,
        flag,
        note: None,
    })
}
