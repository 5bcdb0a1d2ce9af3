//! Particle states on the energy-momentum sphere, binary collision kinematics,
//! and the rate and weight functions built on them.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// A velocity in three dimensions.
pub type Vec3 = Vector3<f64>;

/// Default absolute tolerance on constraint defects.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Rounding slack below zero tolerated by [`weight_w`] before it errors.
const WEIGHT_CLAMP: f64 = 1e-12;

/// `N choose 2`.
pub fn binom2(n: usize) -> f64 {
    (n * (n - 1)) as f64 / 2.0
}

/// N velocities together with the energy and momentum per particle that
/// define the manifold they live on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub velocities: Vec<Vec3>,
    pub energy: f64,
    pub momentum: Vec3,
}

/// Constraint defects of a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub energy_defect: f64,
    pub momentum_defect: f64,
    pub ok: bool,
}

impl ParticleState {
    pub fn new(velocities: Vec<Vec3>, energy: f64, momentum: Vec3) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(KacError::TooFewParticles(velocities.len(), 2));
        }
        let p2 = momentum.norm_squared();
        if energy.partial_cmp(&p2) != Some(std::cmp::Ordering::Greater) {
            return Err(KacError::DegenerateEnergy { energy, p2 });
        }
        Ok(Self { velocities, energy, momentum })
    }

    /// State on the unit manifold (E = 1, p = 0).
    pub fn unit(velocities: Vec<Vec3>) -> Result<Self> {
        Self::new(velocities, 1.0, Vec3::zeros())
    }

    /// State whose E and p are read off the velocities themselves.
    pub fn from_velocities(velocities: Vec<Vec3>) -> Result<Self> {
        let n = velocities.len().max(1) as f64;
        let momentum = velocities.iter().sum::<Vec3>() / n;
        let energy = velocities.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
        Self::new(velocities, energy, momentum)
    }

    pub fn n(&self) -> usize {
        self.velocities.len()
    }

    pub fn validate(&self, tol: f64) -> Diagnostics {
        validate(self, tol)
    }

    /// Pull the velocities back onto the manifold: subtract the momentum
    /// defect and rescale the thermal part to the nominal energy.
    pub fn reproject(&mut self) {
        let n = self.n() as f64;
        let mean = self.velocities.iter().sum::<Vec3>() / n;
        let thermal = self.velocities.iter().map(|v| (v - mean).norm_squared()).sum::<f64>() / n;
        let target = self.energy - self.momentum.norm_squared();
        if thermal <= 0.0 {
            return;
        }
        let scale = (target / thermal).sqrt();
        for v in &mut self.velocities {
            *v = self.momentum + (*v - mean) * scale;
        }
    }

    pub fn apply_collision(&self, event: &CollisionEvent) -> Result<ParticleState> {
        let mut out = self.clone();
        out.collide(event.i, event.j, &event.sigma)?;
        Ok(out)
    }

    /// In-place version of [`ParticleState::apply_collision`].
    pub fn collide(&mut self, i: usize, j: usize, sigma: &Vec3) -> Result<()> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(KacError::IndexOutOfRange { index: idx, n });
            }
        }
        if i == j {
            return Err(KacError::BadPair(i, j));
        }
        let (a, b) = post_collision_pair(&self.velocities[i], &self.velocities[j], sigma);
        self.velocities[i] = a;
        self.velocities[j] = b;
        Ok(())
    }
}

pub fn validate(state: &ParticleState, tol: f64) -> Diagnostics {
    let n = state.n() as f64;
    let e = state.velocities.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
    let p = state.velocities.iter().sum::<Vec3>() / n;
    let energy_defect = (e - state.energy).abs();
    let momentum_defect = (p - state.momentum).norm();
    Diagnostics { energy_defect, momentum_defect, ok: energy_defect <= tol && momentum_defect <= tol }
}

/// Post-collision velocities in the sigma parameterization. Equal incoming
/// velocities are returned unchanged.
pub fn post_collision_pair(vi: &Vec3, vj: &Vec3, sigma: &Vec3) -> (Vec3, Vec3) {
    let rel = vi - vj;
    let g = rel.norm();
    if g == 0.0 {
        return (*vi, *vj);
    }
    let center = (vi + vj) * 0.5;
    let half = sigma * (0.5 * g);
    (center + half, center - half)
}

/// A binary collision of particles `i < j` with scattering direction `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub i: usize,
    pub j: usize,
    pub sigma: Vec3,
    pub time: f64,
}

impl CollisionEvent {
    pub fn new(i: usize, j: usize, sigma: Vec3, time: f64) -> Result<Self> {
        if i >= j {
            return Err(KacError::BadPair(i, j));
        }
        if ((sigma.norm() - 1.0).abs()) > 1e-9 {
            return Err(KacError::Domain(format!("|sigma| = {} is not 1", sigma.norm())));
        }
        Ok(Self { i, j, sigma, time })
    }
}

/// Rate `N (N choose 2)^-1 |v_i - v_j|^alpha` of the clock for pair (i, j).
pub fn pair_rate(state: &ParticleState, i: usize, j: usize, alpha: f64) -> f64 {
    pair_rate_raw(&state.velocities[i], &state.velocities[j], state.n(), alpha)
}

#[inline]
pub(crate) fn pair_rate_raw(vi: &Vec3, vj: &Vec3, n: usize, alpha: f64) -> f64 {
    let g = (vi - vj).norm();
    n as f64 / binom2(n) * rel_speed_pow(g, alpha)
}

#[inline]
pub(crate) fn rel_speed_pow(g: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else if alpha == 1.0 {
        g
    } else if alpha == 2.0 {
        g * g
    } else {
        g.powf(alpha)
    }
}

/// Map a state on S_{N,E,p} to S_{N,1,0}.
pub fn normalize_to_unit(state: &ParticleState) -> Result<ParticleState> {
    let p2 = state.momentum.norm_squared();
    let t = state.energy - p2;
    if t <= 0.0 {
        return Err(KacError::DegenerateEnergy { energy: state.energy, p2 });
    }
    let s = 1.0 / t.sqrt();
    let velocities = state.velocities.iter().map(|v| (v - state.momentum) * s).collect();
    ParticleState::unit(velocities)
}

/// Inverse of [`normalize_to_unit`]: carry a unit-manifold state to S_{N,E,p}.
pub fn scale_from_unit(state: &ParticleState, energy: f64, momentum: Vec3) -> Result<ParticleState> {
    let p2 = momentum.norm_squared();
    if energy <= p2 {
        return Err(KacError::DegenerateEnergy { energy, p2 });
    }
    let s = (energy - p2).sqrt();
    let velocities = state.velocities.iter().map(|v| momentum + v * s).collect();
    ParticleState::new(velocities, energy, momentum)
}

/// Single-particle weight `(N^2 - (1+|v|^2) N) / (N-1)^2`.
pub fn weight_w(v: &Vec3, n: usize) -> Result<f64> {
    let nf = n as f64;
    let raw = (nf * nf - (1.0 + v.norm_squared()) * nf) / ((nf - 1.0) * (nf - 1.0));
    if raw >= 0.0 {
        Ok(raw)
    } else if raw > -WEIGHT_CLAMP {
        Ok(0.0)
    } else {
        Err(KacError::Domain(format!("|v|^2 = {} exceeds N-1 = {}", v.norm_squared(), n - 1)))
    }
}

/// `w_N(v)^{alpha/2}`.
pub fn weight_pow(v: &Vec3, n: usize, alpha: f64) -> Result<f64> {
    let w = weight_w(v, n)?;
    Ok(if alpha == 0.0 {
        1.0
    } else if alpha == 2.0 {
        w
    } else {
        w.powf(alpha / 2.0)
    })
}

/// `W^(alpha) = (1/N) sum_k w_N(v_k)^{alpha/2}`.
pub fn weight_big_w(state: &ParticleState, alpha: f64) -> Result<f64> {
    let n = state.n();
    let mut s = 0.0;
    for v in &state.velocities {
        s += weight_pow(v, n, alpha)?;
    }
    Ok(s / n as f64)
}

/// Pointwise lower bound on `W^(alpha)` valid on all of S_N.
pub fn big_w_lower_bound(n: usize, alpha: f64) -> f64 {
    let m = n as f64 - 1.0;
    let nf = n as f64;
    let a = alpha / 2.0;
    1.0 - (1.0 - a) * nf * (m * m + 1.0) / m.powi(4) - a / (m * m) + (1.0 - a) * (nf + 1.0) / m.powi(3)
}

/// Pointwise upper bound on `W^(alpha)`; attained in mean by Jensen.
pub fn big_w_upper_bound(n: usize, alpha: f64) -> f64 {
    let m = n as f64 - 1.0;
    (1.0 - 1.0 / (m * m)).powf(alpha / 2.0)
}

/// Scattering law of the collision direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scatter {
    /// `b = 1`: sigma uniform on the sphere.
    Uniform,
    Tabulated(TabulatedDensity),
}

/// Collision kernel: rate exponent alpha and scattering density b.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub scatter: Scatter,
}

impl KernelSpec {
    pub fn new(alpha: f64, scatter: Scatter) -> Result<Self> {
        if !(0.0..=2.0).contains(&alpha) {
            return Err(KacError::InvalidArgument(format!("alpha {alpha} out of [0,2]")));
        }
        Ok(Self { alpha, scatter })
    }

    /// Hard spheres with uniform scattering, or any other exponent.
    pub fn uniform(alpha: f64) -> Result<Self> {
        Self::new(alpha, Scatter::Uniform)
    }

    /// `b(cos theta)`.
    pub fn b(&self, t: f64) -> f64 {
        match &self.scatter {
            Scatter::Uniform => 1.0,
            Scatter::Tabulated(d) => d.density(t),
        }
    }
}

/// Even, piecewise-linear density on a uniform grid over [-1, 1], normalized
/// so that `(1/2) * integral = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedDensity {
    values: Vec<f64>,
    /// Cumulative mass at the right edge of each cell, normalized to 1.
    cumulative: Vec<f64>,
}

impl TabulatedDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        if m < 2 {
            return Err(KacError::InvalidKernel("need at least two grid values".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(KacError::InvalidKernel("values must be finite and non-negative".into()));
        }
        let scale = values.iter().cloned().fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(KacError::InvalidKernel("density vanishes identically".into()));
        }
        for i in 0..m / 2 {
            if (values[i] - values[m - 1 - i]).abs() > 1e-9 * scale {
                return Err(KacError::InvalidKernel(format!("not even at grid index {i}")));
            }
        }
        let h = 2.0 / (m - 1) as f64;
        let mut cumulative = Vec::with_capacity(m - 1);
        let mut acc = 0.0;
        for c in 0..m - 1 {
            acc += 0.5 * h * (values[c] + values[c + 1]);
            cumulative.push(acc);
        }
        // (1/2) * integral must be 1
        let norm = 2.0 / acc;
        let values = values.into_iter().map(|v| v * norm).collect();
        for c in &mut cumulative {
            *c /= acc;
        }
        Ok(Self { values, cumulative })
    }

    fn step(&self) -> f64 {
        2.0 / (self.values.len() - 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn density(&self, t: f64) -> f64 {
        let t = t.clamp(-1.0, 1.0);
        let h = self.step();
        let x = (t + 1.0) / h;
        let c = (x.floor() as usize).min(self.values.len() - 2);
        let f = x - c as f64;
        self.values[c] * (1.0 - f) + self.values[c + 1] * f
    }

    /// Inverse-CDF draw of the cosine `t` with law `b(t)/2` on [-1, 1].
    pub fn sample_cos<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let c = self.cumulative.partition_point(|&x| x < u).min(self.cumulative.len() - 1);
        let lo = if c == 0 { 0.0 } else { self.cumulative[c - 1] };
        let h = self.step();
        let b0 = self.values[c];
        let slope = (self.values[c + 1] - b0) / h;
        // mass in the cell in units of the (1/2)-normalized density
        let target = (u - lo) * 2.0;
        let disc = (b0 * b0 + 2.0 * slope * target).max(0.0);
        let denom = b0 + disc.sqrt();
        let x = if denom > 0.0 { 2.0 * target / denom } else { 0.0 };
        (-1.0 + (c as f64) * h + x.clamp(0.0, h)).clamp(-1.0, 1.0)
    }
}

/// Uniform point on the unit sphere.
pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let r = v.norm();
        if r > 1e-12 {
            return v / r;
        }
    }
}

/// Two unit vectors completing `e` to a right-handed orthonormal frame.
pub fn orthonormal_frame(e: &Vec3) -> (Vec3, Vec3) {
    let helper = if e.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = e.cross(&helper).normalize();
    let b = e.cross(&a);
    (a, b)
}

/// Draw the post-collision direction sigma given the unit relative velocity.
pub fn sample_scatter_direction<R: Rng + ?Sized>(reference: &Vec3, kernel: &KernelSpec, rng: &mut R) -> Vec3 {
    match &kernel.scatter {
        Scatter::Uniform => uniform_sphere(rng),
        Scatter::Tabulated(d) => {
            let t = d.sample_cos(rng);
            let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            let (a, b) = orthonormal_frame(reference);
            let s = (1.0 - t * t).max(0.0).sqrt();
            reference * t + (a * phi.cos() + b * phi.sin()) * s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats::{ks_test, MeanAcc};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn validate_examples() {
        let s = ParticleState::unit(vec![v(1., 0., 0.), v(-1., 0., 0.)]).unwrap();
        let d = s.validate(1e-12);
        assert!(d.ok && d.energy_defect == 0.0 && d.momentum_defect == 0.0);
        let s = ParticleState::unit(vec![v(1., 0., 0.), v(1., 0., 0.)]).unwrap();
        let d = s.validate(1e-9);
        assert!(!d.ok);
        assert!((d.momentum_defect - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collision_examples() {
        let (a, b) = post_collision_pair(&v(1., 0., 0.), &v(-1., 0., 0.), &v(0., 1., 0.));
        assert_eq!((a, b), (v(0., 1., 0.), v(0., -1., 0.)));
        let vi = v(0.3, -1.2, 0.5);
        let vj = v(-0.7, 0.1, 0.2);
        let sigma = (vi - vj).normalize();
        let (a, b) = post_collision_pair(&vi, &vj, &sigma);
        assert!((a - vi).norm() < 1e-15 && (b - vj).norm() < 1e-15);
        // equal velocities: no jump
        let (a, b) = post_collision_pair(&vi, &vi, &v(0., 0., 1.));
        assert_eq!((a, b), (vi, vi));
    }

    #[test]
    fn apply_collision_checks_indices() {
        let s = ParticleState::unit(vec![v(1., 0., 0.), v(-1., 0., 0.)]).unwrap();
        let ev = CollisionEvent { i: 0, j: 5, sigma: v(0., 0., 1.), time: 0.0 };
        assert!(matches!(s.apply_collision(&ev), Err(KacError::IndexOutOfRange { .. })));
        assert!(CollisionEvent::new(1, 0, v(0., 0., 1.), 0.0).is_err());
        assert!(CollisionEvent::new(0, 1, v(0., 0., 2.), 0.0).is_err());
    }

    #[test]
    fn pair_rate_examples() {
        let s = ParticleState::unit(vec![v(1., 0., 0.), v(-1., 0., 0.)]).unwrap();
        assert_eq!(pair_rate(&s, 0, 1, 1.0), 4.0);
        assert_eq!(pair_rate(&s, 0, 1, 2.0), 8.0);
        let s3 = ParticleState::from_velocities(vec![v(1., 2., 0.), v(0., -1., 3.), v(2., 0., 0.5)]).unwrap();
        let total: f64 = [(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| pair_rate(&s3, i, j, 0.0)).sum();
        assert!((total - 3.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let s = ParticleState::unit(vec![v(1., 0., 0.), v(-1., 0., 0.)]).unwrap();
        assert_eq!(normalize_to_unit(&s).unwrap(), s);
        let s4 = ParticleState::new(vec![v(2., 0., 0.), v(-2., 0., 0.)], 4.0, Vec3::zeros()).unwrap();
        let u = normalize_to_unit(&s4).unwrap();
        assert_eq!(u.velocities, vec![v(1., 0., 0.), v(-1., 0., 0.)]);
        assert!(ParticleState::new(vec![v(1., 0., 0.), v(1., 0., 0.)], 1.0, v(1., 0., 0.)).is_err());
        let back = scale_from_unit(&u, 4.0, Vec3::zeros()).unwrap();
        assert_eq!(back, s4);
    }

    #[test]
    fn weight_examples() {
        assert!(weight_w(&v(2f64.sqrt(), 0., 0.), 3).unwrap().abs() < 1e-15);
        assert_eq!(weight_w(&Vec3::zeros(), 3).unwrap(), 1.5);
        assert!((weight_w(&v(1., 0., 0.), 4).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(weight_w(&v(2., 0., 0.), 3).is_err());
        // rounding just past the boundary clamps
        let edge = v((2.0f64).sqrt() * (1.0 + 1e-15), 0., 0.);
        assert_eq!(weight_w(&edge, 3).unwrap(), 0.0);
    }

    #[test]
    fn lower_bounds_at_small_n() {
        assert!((big_w_lower_bound(3, 1.0) - 21.0 / 32.0).abs() < 1e-15);
        assert!((big_w_lower_bound(4, 1.0) - 64.0 / 81.0).abs() < 1e-15);
        assert!((big_w_upper_bound(3, 2.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn tabulated_density_validation() {
        assert!(TabulatedDensity::new(vec![1.0]).is_err());
        assert!(TabulatedDensity::new(vec![1.0, -1.0, 1.0]).is_err());
        assert!(TabulatedDensity::new(vec![1.0, 2.0, 3.0]).is_err());
        assert!(TabulatedDensity::new(vec![0.0, 0.0]).is_err());
        let d = TabulatedDensity::new(vec![3.0, 3.0, 3.0]).unwrap();
        assert!((d.density(0.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tabulated_inverse_cdf_matches_density() {
        // b(t) proportional to 1 + t^2 sampled on a fine grid
        let m = 201;
        let vals: Vec<f64> = (0..m)
            .map(|i| {
                let t = -1.0 + 2.0 * i as f64 / (m - 1) as f64;
                1.0 + t * t
            })
            .collect();
        let d = TabulatedDensity::new(vals).unwrap();
        let mut rng = stream_rng(3, 0);
        let mut xs: Vec<f64> = (0..20000).map(|_| d.sample_cos(&mut rng)).collect();
        // CDF of (1+t^2)/(8/3) on [-1,1]
        let cdf = |t: f64| ((t + t.powi(3) / 3.0) + 4.0 / 3.0) / (8.0 / 3.0);
        let (_, p) = ks_test(&mut xs, cdf);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn uniform_scatter_statistics() {
        let k = KernelSpec::uniform(1.0).unwrap();
        let flat = KernelSpec::new(1.0, Scatter::Tabulated(TabulatedDensity::new(vec![1.0; 5]).unwrap())).unwrap();
        let reference = v(0., 0.6, 0.8);
        let mut rng = stream_rng(11, 0);
        let mut mean = [MeanAcc::new(), MeanAcc::new(), MeanAcc::new()];
        let mut cos_u = Vec::new();
        let mut cos_t = Vec::new();
        for i in 0..200_000 {
            let s = sample_scatter_direction(&reference, &k, &mut rng);
            assert!((s.norm() - 1.0).abs() < 1e-12);
            for c in 0..3 {
                mean[c].push(s[c]);
            }
            if i < 20000 {
                cos_u.push(s.dot(&reference));
                cos_t.push(sample_scatter_direction(&reference, &flat, &mut rng).dot(&reference));
            }
        }
        for m in &mean {
            assert!(m.estimate().within(0.0, 3.5));
        }
        let (_, p) = ks_test(&mut cos_u, |t| (t + 1.0) / 2.0);
        assert!(p > 1e-3);
        let (_, p) = ks_test(&mut cos_t, |t| (t + 1.0) / 2.0);
        assert!(p > 1e-3);
    }
}
