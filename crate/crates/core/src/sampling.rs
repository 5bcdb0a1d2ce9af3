//! Exact samplers for the uniform measure on S_{N,1,0}, the radial law of a
//! single scaled coordinate, and the conditional slices obtained by freezing
//! one coordinate.
//!
//! The workhorse is the lifting map: given `y` on S_{N-1,1,0} and `v` in the
//! unit ball, slot `k` receives `sqrt(N-1) v` and every other slot receives
//! `beta(v) y_j - v / sqrt(N-1)` with `beta^2 = N (1 - |v|^2) / (N-1)`.
//! If `y` is uniform and `v` has law `nu_N`, the result is uniform on S_N.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{KacError, Result};
use crate::kinematics::{uniform_sphere, ParticleState, Vec3};

/// A point of the closed unit ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallPoint(Vec3);

impl BallPoint {
    pub fn new(v: Vec3) -> Result<Self> {
        let r2 = v.norm_squared();
        if r2 > 1.0 + 1e-12 {
            return Err(KacError::Domain(format!("|v|^2 = {r2} exceeds 1")));
        }
        Ok(Self(v))
    }

    pub fn get(&self) -> Vec3 {
        self.0
    }
}

/// Radial law `nu_N`: density on the ball proportional to `(1-|v|^2)^{(3N-8)/2}`.
#[derive(Clone, Copy, Debug)]
pub struct RadialLawNu {
    n: usize,
    beta: Beta<f64>,
}

impl RadialLawNu {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(KacError::TooFewParticles(n, 3));
        }
        // radial marginal r^2 (1-r^2)^{(3N-8)/2} dr  =>  r^2 ~ Beta(3/2, (3N-6)/2)
        let beta =
            Beta::new(1.5, (3.0 * n as f64 - 6.0) / 2.0).map_err(|e| KacError::InvalidArgument(e.to_string()))?;
        Ok(Self { n, beta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> BallPoint {
        let r2: f64 = self.beta.sample(rng);
        BallPoint(uniform_sphere(rng) * r2.sqrt())
    }

    /// `E |v|^{2m}` under `nu_N`: the Beta(3/2, (3N-6)/2) moments.
    pub fn radial_moment(&self, m: u32) -> f64 {
        beta_moment(1.5, (3.0 * self.n as f64 - 6.0) / 2.0, m)
    }
}

/// `E[X^m]` for X ~ Beta(a, b).
pub fn beta_moment(a: f64, b: f64, m: u32) -> f64 {
    (0..m).map(|i| (a + i as f64) / (a + b + i as f64)).product()
}

pub fn sample_nu<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<BallPoint> {
    Ok(RadialLawNu::new(n)?.sample(rng))
}

/// `beta(v)^2 = N (1 - |v|^2) / (N-1)`.
fn beta_sq(n: usize, v: &Vec3) -> f64 {
    let nf = n as f64;
    (nf / (nf - 1.0) * (1.0 - v.norm_squared())).max(0.0)
}

/// Lift `inner` (N-1 particles on S_{N-1,1,0}) and `v` into an N-particle
/// state with the new coordinate at slot `k`.
pub fn lift_tk(inner: &ParticleState, v: &BallPoint, k: usize) -> Result<ParticleState> {
    let n = inner.n() + 1;
    if k >= n {
        return Err(KacError::IndexOutOfRange { index: k, n });
    }
    if inner.energy != 1.0 || inner.momentum != Vec3::zeros() {
        return Err(KacError::InvalidArgument("inner state must lie on S_{N-1,1,0}".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&inner.velocities[..k]);
    out.push(Vec3::zeros());
    out.extend_from_slice(&inner.velocities[k..]);
    lift_in_place(&mut out, k, &v.0);
    ParticleState::unit(out)
}

/// In-place lift: `buf[j]` for `j != k` hold the inner state, `buf[k]` is
/// overwritten.
pub(crate) fn lift_in_place(buf: &mut [Vec3], k: usize, v: &Vec3) {
    let n = buf.len();
    let root = ((n - 1) as f64).sqrt();
    let b = beta_sq(n, v).sqrt();
    let shift = v / root;
    for (j, y) in buf.iter_mut().enumerate() {
        if j != k {
            *y = *y * b - shift;
        }
    }
    buf[k] = v * root;
}

/// Recursive sampler built from the factorization of sigma_N.
pub fn sample_invariant_recursive<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ParticleState> {
    let mut buf = vec![Vec3::zeros(); n];
    fill_invariant_recursive(&mut buf, rng)?;
    ParticleState::unit(buf)
}

pub fn fill_invariant_recursive<R: Rng + ?Sized>(buf: &mut [Vec3], rng: &mut R) -> Result<()> {
    let n = buf.len();
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    let u = uniform_sphere(rng);
    buf[0] = u;
    buf[1] = -u;
    for m in 3..=n {
        let v = RadialLawNu::new(m)?.sample(rng);
        lift_in_place(&mut buf[..m], m - 1, &v.0);
    }
    Ok(())
}

/// Recursive sampler followed by a uniform random relabelling, for
/// statistics that are not symmetric in the particle labels.
pub fn sample_invariant_exchangeable<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ParticleState> {
    let mut s = sample_invariant_recursive(n, rng)?;
    s.velocities.shuffle(rng);
    Ok(s)
}

/// Independent oracle sampler: project 3N Gaussians onto the zero-momentum
/// subspace and rescale to energy N.
pub fn sample_invariant_gauss<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ParticleState> {
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    let mut buf = vec![Vec3::zeros(); n];
    fill_gauss(&mut buf, rng);
    ParticleState::unit(buf)
}

/// Fill `buf` with a uniform sample of S_{len,1,0}.
pub fn fill_gauss<R: Rng + ?Sized>(buf: &mut [Vec3], rng: &mut R) {
    let n = buf.len();
    loop {
        for v in buf.iter_mut() {
            *v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        }
        let mean = buf.iter().sum::<Vec3>() / n as f64;
        let mut e = 0.0;
        for v in buf.iter_mut() {
            *v -= mean;
            e += v.norm_squared();
        }
        if e > 1e-300 {
            let s = (n as f64 / e).sqrt();
            for v in buf.iter_mut() {
                *v *= s;
            }
            return;
        }
    }
}

/// Fill `buf` (length N) with a uniform draw from the slice of S_N on which
/// coordinate `k` equals `v_fixed`.
pub fn fill_conditional_slice<R: Rng + ?Sized>(buf: &mut [Vec3], k: usize, v_fixed: &Vec3, rng: &mut R) -> Result<()> {
    let n = buf.len();
    if n < 2 {
        return Err(KacError::TooFewParticles(n, 2));
    }
    if k >= n {
        return Err(KacError::IndexOutOfRange { index: k, n });
    }
    let root = ((n - 1) as f64).sqrt();
    let r2 = v_fixed.norm_squared();
    if r2 > (n - 1) as f64 * (1.0 + 1e-12) {
        return Err(KacError::Domain(format!("|v|^2 = {r2} exceeds N-1 = {}", n - 1)));
    }
    let u = v_fixed / root;
    // inner sample on S_{N-1} in the slots other than k
    buf.swap(k, n - 1);
    fill_gauss(&mut buf[..n - 1], rng);
    buf.swap(k, n - 1);
    lift_in_place(buf, k, &u);
    buf[k] = *v_fixed;
    Ok(())
}

pub fn sample_conditional_slice<R: Rng + ?Sized>(
    v_fixed: &Vec3,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<ParticleState> {
    let mut buf = vec![Vec3::zeros(); n];
    fill_conditional_slice(&mut buf, k, v_fixed, rng)?;
    ParticleState::unit(buf)
}

/// Projection `pi_k(v) = v_k / sqrt(N-1)` into the unit ball.
pub fn project_to_ball(state: &ParticleState, k: usize) -> BallPoint {
    BallPoint(state.velocities[k] / ((state.n() - 1) as f64).sqrt())
}

const MAGIC: &[u8; 4] = b"KACS";

/// Write states in the binary dump format: a 16-byte header (magic, u32 N,
/// u32 count, 4 reserved zero bytes) followed by little-endian f64 triples,
/// row-major by particle.
pub fn write_states<W: Write>(w: &mut W, states: &[ParticleState]) -> Result<()> {
    let n = states.first().map(|s| s.n()).unwrap_or(0);
    if states.iter().any(|s| s.n() != n) {
        return Err(KacError::InvalidArgument("all states must have the same N".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(states.len() as u32).to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    for s in states {
        for v in &s.velocities {
            for c in v.iter() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read back a dump written by [`write_states`]. States are tagged E=1, p=0.
pub fn read_states<R: Read>(r: &mut R) -> Result<Vec<ParticleState>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(KacError::Format("bad magic".into()));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        let mut vs = Vec::with_capacity(n);
        for _ in 0..n {
            let mut c = [0.0; 3];
            for x in &mut c {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            vs.push(Vec3::new(c[0], c[1], c[2]));
        }
        out.push(ParticleState::unit(vs)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn nu_requires_three_particles() {
        let mut rng = stream_rng(0, 0);
        assert!(sample_nu(2, &mut rng).is_err());
        assert!(sample_nu(3, &mut rng).is_ok());
    }

    #[test]
    fn lift_boundary_cases() {
        let inner = ParticleState::unit(vec![Vec3::new(1., 0., 0.), Vec3::new(-1., 0., 0.)]).unwrap();
        let s = lift_tk(&inner, &BallPoint::new(Vec3::zeros()).unwrap(), 1).unwrap();
        let b = (1.5f64).sqrt();
        assert_eq!(s.velocities[1], Vec3::zeros());
        assert!((s.velocities[0] - Vec3::new(b, 0., 0.)).norm() < 1e-15);
        assert!(s.validate(1e-12).ok);

        let e = Vec3::new(0., 0., 1.);
        let s = lift_tk(&inner, &BallPoint::new(e).unwrap(), 0).unwrap();
        let root = 2f64.sqrt();
        assert!((s.velocities[0] - e * root).norm() < 1e-15);
        assert!((s.velocities[1] + e / root).norm() < 1e-15);
        assert!((s.velocities[2] + e / root).norm() < 1e-15);
        assert!(s.validate(1e-12).ok);
        assert!(BallPoint::new(Vec3::new(1.1, 0., 0.)).is_err());
    }

    #[test]
    fn two_particle_base_case() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let s = sample_invariant_recursive(2, &mut rng).unwrap();
            assert!((s.velocities[0].norm() - 1.0).abs() < 1e-14);
            assert_eq!(s.velocities[1], -s.velocities[0]);
        }
    }

    #[test]
    fn slice_at_zero_for_three_particles() {
        let mut rng = stream_rng(2, 0);
        for k in 0..3 {
            let s = sample_conditional_slice(&Vec3::zeros(), k, 3, &mut rng).unwrap();
            let others: Vec<_> = (0..3).filter(|&j| j != k).map(|j| s.velocities[j]).collect();
            assert!((others[0] + others[1]).norm() < 1e-14);
            assert!((others[0].norm_squared() - 1.5).abs() < 1e-13);
            assert_eq!(s.velocities[k], Vec3::zeros());
        }
        assert!(sample_conditional_slice(&Vec3::new(1.5, 0., 0.), 0, 3, &mut rng).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = stream_rng(4, 0);
        let states: Vec<_> = (0..5).map(|_| sample_invariant_gauss(4, &mut rng).unwrap()).collect();
        let mut bytes = Vec::new();
        write_states(&mut bytes, &states).unwrap();
        assert_eq!(bytes.len(), 16 + 5 * 4 * 3 * 8);
        assert_eq!(&bytes[..4], b"KACS");
        let back = read_states(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, states);
        bytes[0] = b'X';
        assert!(read_states(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn beta_moments() {
        // Beta(3/2,3/2): mean 1/2
        assert!((beta_moment(1.5, 1.5, 1) - 0.5).abs() < 1e-15);
    }
}
