//! Event-driven simulators for the Kac collision process and the conjugate
//! process, and the Monte Carlo conditional expectation P_k.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::kinematics::{
    binom2, pair_rate_raw, post_collision_pair, rel_speed_pow, sample_scatter_direction, uniform_sphere, weight_pow,
    KernelSpec, ParticleState, Vec3,
};
use crate::sampling::fill_conditional_slice;
use crate::spectral::trial::TrialFunction;

/// Events between re-projections onto the constraint manifold.
pub const REPROJECT_EVERY: u64 = 1_000_000;

/// Above this N the Kac simulator selects pairs by thinning instead of a
/// rate table.
pub const REJECTION_ABOVE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpKind {
    KacCollision { i: usize, j: usize, sigma: Vec3 },
    ConjugateResample { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub kind: JumpKind,
    pub wait: f64,
    pub t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessKind {
    Kac,
    Conjugate,
}

fn exp_wait<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    // Exp1 can return exactly 0 with negligible probability; keep waits > 0
    e.max(f64::MIN_POSITIVE) / rate
}

/// Total Kac rate `Lambda = sum_{i<j} pair_rate`.
pub fn kac_total_rate(state: &ParticleState, alpha: f64) -> f64 {
    let v = &state.velocities;
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += pair_rate_raw(&v[i], &v[j], n, alpha);
        }
    }
    s
}

/// Collide `(i, j)` in place with a fresh scattering direction.
fn collide_pair<R: Rng + ?Sized>(v: &mut [Vec3], i: usize, j: usize, kernel: &KernelSpec, rng: &mut R) -> Vec3 {
    let g = v[i] - v[j];
    let gn = g.norm();
    let reference = if gn > 0.0 { g / gn } else { uniform_sphere(rng) };
    let sigma = sample_scatter_direction(&reference, kernel, rng);
    let (a, b) = post_collision_pair(&v[i], &v[j], &sigma);
    v[i] = a;
    v[j] = b;
    sigma
}

/// One step of the Kac process by direct enumeration of all pair rates.
pub fn kac_step<R: Rng + ?Sized>(
    state: &ParticleState,
    kernel: &KernelSpec,
    rng: &mut R,
) -> Result<(ParticleState, JumpEvent)> {
    let mut sim = KacSimulator::new(state.clone(), kernel.clone())?;
    let ev = sim.step(rng)?;
    Ok((sim.state, ev))
}

/// Stateful Kac simulator with an incrementally updated rate table, or
/// thinning against the bound `(2 sqrt(N-1))^alpha` for large N.
#[derive(Clone, Debug)]
pub struct KacSimulator {
    pub state: ParticleState,
    pub kernel: KernelSpec,
    pub t: f64,
    events: u64,
    table: Option<RateTable>,
}

#[derive(Clone, Debug)]
struct RateTable {
    n: usize,
    rates: Vec<f64>,
    row_sums: Vec<f64>,
}

impl RateTable {
    fn build(v: &[Vec3], alpha: f64) -> Self {
        let n = v.len();
        let mut rates = vec![0.0; n * n];
        let mut row_sums = vec![0.0; n];
        for i in 0..n {
            for j in i + 1..n {
                let r = pair_rate_raw(&v[i], &v[j], n, alpha);
                rates[i * n + j] = r;
                rates[j * n + i] = r;
                row_sums[i] += r;
                row_sums[j] += r;
            }
        }
        Self { n, rates, row_sums }
    }

    fn total(&self) -> f64 {
        0.5 * self.row_sums.iter().sum::<f64>()
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let n = self.n;
        let twice: f64 = self.row_sums.iter().sum();
        let mut u = rng.random::<f64>() * twice;
        let mut row = n - 1;
        for (i, s) in self.row_sums.iter().enumerate() {
            if u < *s {
                row = i;
                break;
            }
            u -= s;
        }
        let mut last = None;
        for j in 0..n {
            let r = self.rates[row * n + j];
            if j == row || r <= 0.0 {
                continue;
            }
            last = Some(j);
            if u < r {
                break;
            }
            u -= r;
        }
        last.map(|j| (row.min(j), row.max(j)))
    }

    fn update(&mut self, v: &[Vec3], alpha: f64, i: usize, j: usize) {
        let n = self.n;
        for &a in &[i, j] {
            for k in 0..n {
                if k == a || (a == j && k == i) {
                    continue;
                }
                let r = pair_rate_raw(&v[a], &v[k], n, alpha);
                let old = self.rates[a * n + k];
                self.rates[a * n + k] = r;
                self.rates[k * n + a] = r;
                self.row_sums[a] += r - old;
                self.row_sums[k] += r - old;
            }
        }
    }

    fn refresh_sums(&mut self) {
        let n = self.n;
        for i in 0..n {
            self.row_sums[i] = (0..n).filter(|&j| j != i).map(|j| self.rates[i * n + j]).sum();
        }
    }
}

impl KacSimulator {
    pub fn new(state: ParticleState, kernel: KernelSpec) -> Result<Self> {
        let n = state.n();
        let table = if n <= REJECTION_ABOVE { Some(RateTable::build(&state.velocities, kernel.alpha)) } else { None };
        Ok(Self { state, kernel, t: 0.0, events: 0, table })
    }

    /// Current total rate.
    pub fn total_rate(&self) -> f64 {
        match &self.table {
            Some(t) => t.total(),
            None => kac_total_rate(&self.state, self.kernel.alpha),
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<JumpEvent> {
        Ok(self.step_bounded(f64::INFINITY, rng)?.expect("unbounded step always jumps"))
    }

    /// Step unless the next jump falls after `t_limit`, in which case the
    /// state is left untouched (exact by memorylessness).
    pub fn step_bounded<R: Rng + ?Sized>(&mut self, t_limit: f64, rng: &mut R) -> Result<Option<JumpEvent>> {
        let n = self.state.n();
        let alpha = self.kernel.alpha;
        let (i, j, wait) = match &self.table {
            Some(table) => {
                let total = table.total();
                if !(total > 0.0) {
                    return Err(KacError::ZeroRate);
                }
                let wait = exp_wait(total, rng);
                if self.t + wait > t_limit {
                    return Ok(None);
                }
                let (i, j) = table.pick(rng).ok_or(KacError::ZeroRate)?;
                (i, j, wait)
            }
            None => {
                let pair_bound = n as f64 / binom2(n) * rel_speed_pow(2.0 * ((n - 1) as f64).sqrt(), alpha);
                let bound = binom2(n) * pair_bound;
                let mut wait = 0.0;
                loop {
                    wait += exp_wait(bound, rng);
                    if self.t + wait > t_limit {
                        return Ok(None);
                    }
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    let (i, j) = (i.min(j), i.max(j));
                    let r = pair_rate_raw(&self.state.velocities[i], &self.state.velocities[j], n, alpha);
                    if rng.random::<f64>() * pair_bound < r {
                        break (i, j, wait);
                    }
                    if wait > 1e300 {
                        return Err(KacError::ZeroRate);
                    }
                }
            }
        };
        let sigma = collide_pair(&mut self.state.velocities, i, j, &self.kernel, rng);
        self.events += 1;
        self.t += wait;
        if let Some(table) = &mut self.table {
            table.update(&self.state.velocities, alpha, i, j);
        }
        if self.events.is_multiple_of(REPROJECT_EVERY) {
            self.state.reproject();
            if let Some(table) = &mut self.table {
                *table = RateTable::build(&self.state.velocities, alpha);
            }
        } else if self.events.is_multiple_of(4096) {
            if let Some(table) = &mut self.table {
                table.refresh_sums();
            }
        }
        Ok(Some(JumpEvent { kind: JumpKind::KacCollision { i, j, sigma }, wait, t: self.t }))
    }
}

/// Conjugate rates `lambda_k = w_N(v_k)^{alpha/2} / N`.
pub fn conjugate_rates(state: &ParticleState, alpha: f64) -> Result<Vec<f64>> {
    let n = state.n();
    state.velocities.iter().map(|v| Ok(weight_pow(v, n, alpha)? / n as f64)).collect()
}

/// One conjugate jump: freeze `v_k` with probability proportional to
/// `lambda_k` and redraw the rest uniformly on the slice.
pub fn conjugate_step<R: Rng + ?Sized>(
    state: &ParticleState,
    alpha: f64,
    rng: &mut R,
) -> Result<(ParticleState, JumpEvent)> {
    let mut s = state.clone();
    let ev = conjugate_step_bounded(&mut s, alpha, 0.0, f64::INFINITY, rng)?;
    Ok((s, ev.expect("unbounded step always jumps")))
}

fn conjugate_step_bounded<R: Rng + ?Sized>(
    state: &mut ParticleState,
    alpha: f64,
    t: f64,
    t_limit: f64,
    rng: &mut R,
) -> Result<Option<JumpEvent>> {
    let n = state.n();
    if n < 3 {
        return Err(KacError::TooFewParticles(n, 3));
    }
    let rates = conjugate_rates(state, alpha)?;
    let total: f64 = rates.iter().sum();
    if !(total > 0.0) {
        return Err(KacError::ZeroRate);
    }
    let wait = exp_wait(total, rng);
    if t + wait > t_limit {
        return Ok(None);
    }
    let mut u = rng.random::<f64>() * total;
    let mut k = n - 1;
    for (idx, r) in rates.iter().enumerate() {
        if u < *r {
            k = idx;
            break;
        }
        u -= r;
    }
    while rates[k] <= 0.0 {
        k -= 1;
    }
    let fixed = state.velocities[k];
    fill_conditional_slice(&mut state.velocities, k, &fixed, rng)?;
    Ok(Some(JumpEvent { kind: JumpKind::ConjugateResample { k }, wait, t: t + wait }))
}

/// Stopping rule; the run ends at whichever limit is hit first.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Stop {
    pub t_max: Option<f64>,
    pub max_events: Option<u64>,
}

/// When observables are recorded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Recording {
    /// After every event (and at t = 0).
    EventTimes,
    /// On the grid `0, dt, 2 dt, ...`.
    Grid(f64),
}

#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub f: TrialFunction,
}

impl Observable {
    pub fn new(name: &str, f: TrialFunction) -> Self {
        Self { name: name.to_string(), f }
    }
}

#[derive(Clone, Debug)]
pub struct SimSpec {
    pub process: ProcessKind,
    pub kernel: KernelSpec,
    pub stop: Stop,
    pub recording: Recording,
    /// Keep the event list (disable for long runs that only need series).
    pub keep_events: bool,
}

/// One recorded observable row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Index into `Trajectory::events` of the event just applied, if any.
    pub event: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: ParticleState,
    pub final_state: ParticleState,
    pub events: Vec<JumpEvent>,
    pub event_count: u64,
    pub observable_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub t_end: f64,
}

impl Trajectory {
    /// Time series of observable column `c`.
    pub fn series(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.values[c]).collect()
    }

    /// CSV with columns `t, event_kind, idx_a, idx_b` and one per observable.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "t,event_kind,idx_a,idx_b")?;
        for n in &self.observable_names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            let (kind, a, b) = match s.event.and_then(|e| self.events.get(e)) {
                Some(JumpEvent { kind: JumpKind::KacCollision { i, j, .. }, .. }) => ("kac", *i as i64, *j as i64),
                Some(JumpEvent { kind: JumpKind::ConjugateResample { k }, .. }) => ("conjugate", *k as i64, -1),
                None => ("sample", -1, -1),
            };
            write!(w, "{},{kind},{a},{b}", s.t)?;
            for v in &s.values {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Run a process from `state` and record observables.
pub fn simulate<R: Rng + ?Sized>(
    state: &ParticleState,
    spec: &SimSpec,
    observables: &[Observable],
    rng: &mut R,
) -> Result<Trajectory> {
    if spec.stop.t_max.is_none() && spec.stop.max_events.is_none() {
        return Err(KacError::InvalidArgument("simulation needs t_max or max_events".into()));
    }
    if let Recording::Grid(dt) = spec.recording {
        if !(dt > 0.0) {
            return Err(KacError::InvalidArgument("grid spacing must be positive".into()));
        }
    }
    if spec.process == ProcessKind::Conjugate && state.n() < 3 {
        return Err(KacError::TooFewParticles(state.n(), 3));
    }
    let eval = |v: &[Vec3]| -> Vec<f64> { observables.iter().map(|o| o.f.eval(v)).collect() };
    let t_max = spec.stop.t_max.unwrap_or(f64::INFINITY);
    let max_events = spec.stop.max_events.unwrap_or(u64::MAX);
    let mut traj = Trajectory {
        initial: state.clone(),
        final_state: state.clone(),
        events: Vec::new(),
        event_count: 0,
        observable_names: observables.iter().map(|o| o.name.clone()).collect(),
        samples: Vec::new(),
        t_end: 0.0,
    };
    let mut current = eval(&state.velocities);
    traj.samples.push(Sample { t: 0.0, event: None, values: current.clone() });
    let mut next_grid = 1u64;

    let mut runner = match spec.process {
        ProcessKind::Kac => Runner::Kac(KacSimulator::new(state.clone(), spec.kernel.clone())?),
        ProcessKind::Conjugate => Runner::Conjugate(state.clone(), 0.0, 0),
    };
    let mut count = 0u64;
    while count < max_events {
        let Some(ev) = runner.step_bounded(spec.kernel.alpha, t_max, rng)? else { break };
        // grid points strictly before the jump see the pre-jump state
        if let Recording::Grid(dt) = spec.recording {
            while (next_grid as f64) * dt < ev.t {
                traj.samples.push(Sample { t: next_grid as f64 * dt, event: None, values: current.clone() });
                next_grid += 1;
            }
        }
        count += 1;
        current = eval(&runner.state().velocities);
        let idx = if spec.keep_events {
            traj.events.push(ev);
            Some(traj.events.len() - 1)
        } else {
            None
        };
        if spec.recording == Recording::EventTimes {
            traj.samples.push(Sample { t: ev.t, event: idx, values: current.clone() });
        }
    }
    let t_last = runner.time();
    let stopped_by_time = count < max_events;
    traj.t_end = if stopped_by_time { t_max } else { t_last };
    if let Recording::Grid(dt) = spec.recording {
        while (next_grid as f64) * dt <= traj.t_end {
            traj.samples.push(Sample { t: next_grid as f64 * dt, event: None, values: current.clone() });
            next_grid += 1;
        }
    }
    traj.final_state = runner.into_state();
    traj.event_count = count;
    Ok(traj)
}

enum Runner {
    Kac(KacSimulator),
    /// state, time, event count
    Conjugate(ParticleState, f64, u64),
}

impl Runner {
    fn step_bounded<R: Rng + ?Sized>(&mut self, alpha: f64, t_max: f64, rng: &mut R) -> Result<Option<JumpEvent>> {
        match self {
            Runner::Kac(sim) => sim.step_bounded(t_max, rng),
            Runner::Conjugate(s, t, count) => {
                let ev = conjugate_step_bounded(s, alpha, *t, t_max, rng)?;
                if let Some(e) = &ev {
                    *t = e.t;
                    *count += 1;
                    if *count % REPROJECT_EVERY == 0 {
                        s.reproject();
                    }
                }
                Ok(ev)
            }
        }
    }

    fn state(&self) -> &ParticleState {
        match self {
            Runner::Kac(sim) => &sim.state,
            Runner::Conjugate(s, _, _) => s,
        }
    }

    fn time(&self) -> f64 {
        match self {
            Runner::Kac(sim) => sim.t,
            Runner::Conjugate(_, t, _) => *t,
        }
    }

    fn into_state(self) -> ParticleState {
        match self {
            Runner::Kac(sim) => sim.state,
            Runner::Conjugate(s, _, _) => s,
        }
    }
}

/// Monte Carlo estimate of `P_k f` at `state`: the average of `f` over
/// `n_samples` uniform draws from the slice through `state` with `v_k` fixed.
pub fn estimate_pk<R: Rng + ?Sized>(
    f: &TrialFunction,
    state: &ParticleState,
    k: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(KacError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let mut buf = state.velocities.clone();
    let fixed = state.velocities[k];
    let mut s = 0.0;
    for _ in 0..n_samples {
        fill_conditional_slice(&mut buf, k, &fixed, rng)?;
        s += f.eval(&buf);
    }
    Ok(s / n_samples as f64)
}

/// Monte Carlo `L f(v)` for the Kac generator: `sum_{i<j} rate_ij E_sigma[f(R v) - f(v)]`
/// with `n_sigma` directions per pair.
pub fn kac_generator_apply<R: Rng + ?Sized>(
    f: &TrialFunction,
    state: &ParticleState,
    kernel: &KernelSpec,
    n_sigma: usize,
    rng: &mut R,
) -> f64 {
    let v = &state.velocities;
    let n = v.len();
    let f0 = f.eval(v);
    let mut buf = v.clone();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let rate = pair_rate_raw(&v[i], &v[j], n, kernel.alpha);
            let mut acc = 0.0;
            for _ in 0..n_sigma {
                buf[i] = v[i];
                buf[j] = v[j];
                collide_pair(&mut buf, i, j, kernel, rng);
                acc += f.eval(&buf) - f0;
            }
            buf[i] = v[i];
            buf[j] = v[j];
            total += rate * acc / n_sigma as f64;
        }
    }
    total
}

/// Monte Carlo `L f(v)` for the conjugate generator: `sum_k lambda_k (P_k f - f)`.
pub fn conjugate_generator_apply<R: Rng + ?Sized>(
    f: &TrialFunction,
    state: &ParticleState,
    alpha: f64,
    n_inner: usize,
    rng: &mut R,
) -> Result<f64> {
    let rates = conjugate_rates(state, alpha)?;
    let f0 = f.eval(&state.velocities);
    let mut total = 0.0;
    for (k, r) in rates.iter().enumerate() {
        total += r * (estimate_pk(f, state, k, n_inner, rng)? - f0);
    }
    Ok(total)
}
