//! Time-periodic velocity fields and the diffusion intensity.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest spatial dimension handled by the built-in stack buffers.
pub const MAX_DIM: usize = 3;

/// Rectangular domain `[lo_1, hi_1] x ... x [lo_d, hi_d]` with per-axis periodicity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, periodic: Vec<bool>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || d > MAX_DIM || hi.len() != d || periodic.len() != d {
            return Err(Error::Config(format!(
                "domain needs 1..={MAX_DIM} axes with matching lo/hi/periodic lengths"
            )));
        }
        for k in 0..d {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::Config(format!("axis {k}: need finite lo < hi")));
            }
        }
        Ok(Self { lo, hi, periodic })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }

    /// Wraps periodic coordinates into `[lo, hi)`; other axes are untouched.
    pub fn wrap(&self, x: &mut [f64]) {
        for k in 0..self.dim() {
            if self.periodic[k] {
                x[k] = wrap_coord(x[k], self.lo[k], self.hi[k]);
            }
        }
    }

    /// Membership after wrapping periodic axes (closed on non-periodic axes).
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|k| self.periodic[k] || (x[k] >= self.lo[k] && x[k] <= self.hi[k]))
    }
}

pub(crate) fn wrap_coord(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let mut y = x;
    if y < lo || y >= hi {
        y = lo + (x - lo).rem_euclid(w);
        // rem_euclid can round up to exactly w
        if y >= hi {
            y = lo;
        }
    }
    y
}

/// A velocity field `v(t, x)` that is periodic in time with period `tau`.
///
/// Implementations must be pure; evaluation happens concurrently from many
/// threads.
pub trait VectorField: Send + Sync {
    fn domain(&self) -> &Domain;

    fn period(&self) -> f64;

    /// Velocity at an already wrapped point.
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn name(&self) -> &str {
        "custom"
    }

    fn dim(&self) -> usize {
        self.domain().dim()
    }

    /// Velocity at `x`, wrapping periodic coordinates first.
    fn evaluate(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let dom = self.domain();
        let d = dom.dim();
        let mut buf = [0.0; MAX_DIM];
        buf[..d].copy_from_slice(&x[..d]);
        dom.wrap(&mut buf[..d]);
        self.velocity(t, &buf[..d], out);
    }
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn domain(&self) -> &Domain {
        (**self).domain()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).velocity(t, x, out)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn domain(&self) -> &Domain {
        (**self).domain()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).velocity(t, x, out)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Noise intensity `eps` of `dx = v dt + eps dW`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    eps: f64,
}

impl DiffusionSpec {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::Config(format!("diffusion eps must be finite and >= 0, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn none() -> Self {
        Self { eps: 0.0 }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

/// Double gyre on `[0,2] x [0,1]`.
#[derive(Clone, Debug)]
pub struct DoubleGyre {
    pub amplitude: f64,
    pub alpha: f64,
    pub omega: f64,
    domain: Domain,
}

impl DoubleGyre {
    pub fn new(amplitude: f64, alpha: f64, omega: f64) -> Result<Self> {
        if !(amplitude.is_finite() && alpha.is_finite() && omega.is_finite()) {
            return Err(Error::Config("double gyre parameters must be finite".into()));
        }
        if omega <= 0.0 {
            return Err(Error::Config(format!("double gyre needs omega > 0, got {omega}")));
        }
        let domain = Domain::new(vec![0.0, 0.0], vec![2.0, 1.0], vec![false, false])?;
        Ok(Self { amplitude, alpha, omega, domain })
    }
}

impl Default for DoubleGyre {
    fn default() -> Self {
        Self::new(0.25, 0.25, 2.0 * PI).unwrap()
    }
}

impl VectorField for DoubleGyre {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    fn name(&self) -> &str {
        "double_gyre"
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = self.alpha * (self.omega * t).sin();
        let (px, py) = (x[0], x[1]);
        let f = s * px * px + (1.0 - 2.0 * s) * px;
        let dfdx = 2.0 * s * px + 1.0 - 2.0 * s;
        let (sf, cf) = (PI * f).sin_cos();
        let (sy, cy) = (PI * py).sin_cos();
        let pa = PI * self.amplitude;
        out[0] = -pa * sf * cy;
        out[1] = pa * cf * sy * dfdx;
    }
}

/// Parameters of the perturbed Bickley jet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BickleyParams {
    pub u0: f64,
    pub l: f64,
    pub a2: f64,
    pub a3: f64,
    pub r_e: f64,
    pub c2: f64,
    pub c3: f64,
    /// Common period of the two waves. When absent it is derived from the
    /// phase speeds.
    pub period: Option<f64>,
}

impl Default for BickleyParams {
    fn default() -> Self {
        let u0 = 5.4138;
        Self {
            u0,
            l: 1.77,
            a2: 0.1,
            a3: 0.3,
            r_e: 6.371,
            c2: 0.2054 * u0,
            c3: 0.4108 * u0,
            period: Some(9.0),
        }
    }
}

/// Bickley jet on `[0, pi r_e) x [-4, 4]`, periodic in x.
///
/// The wave frequencies `k_n c_n` are snapped to exact multiples of
/// `2 pi / tau` so the field is periodic to rounding error.
#[derive(Clone, Debug)]
pub struct BickleyJet {
    pub params: BickleyParams,
    k: [f64; 2],
    freq: [f64; 2],
    tau: f64,
    domain: Domain,
}

const SNAP_TOL: f64 = 1e-3;

impl BickleyJet {
    pub fn new(params: BickleyParams) -> Result<Self> {
        let p = &params;
        let all = [p.u0, p.l, p.a2, p.a3, p.r_e, p.c2, p.c3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("Bickley parameters must be finite".into()));
        }
        if p.r_e <= 0.0 {
            return Err(Error::Config(format!("Bickley jet needs r_e > 0, got {}", p.r_e)));
        }
        if p.l <= 0.0 {
            return Err(Error::Config(format!("Bickley jet needs L > 0, got {}", p.l)));
        }
        let k = [4.0 / p.r_e, 6.0 / p.r_e];
        let raw = [k[0] * p.c2, k[1] * p.c3];
        let tau = match p.period {
            Some(tau) if tau > 0.0 && tau.is_finite() => tau,
            Some(tau) => return Err(Error::Config(format!("invalid Bickley period {tau}"))),
            None => common_period(raw)?,
        };
        let mut freq = [0.0; 2];
        for n in 0..2 {
            let cycles = raw[n] * tau / (2.0 * PI);
            let m = cycles.round();
            if raw[n] != 0.0 && ((cycles - m).abs() > SNAP_TOL * cycles.abs().max(1.0) || m == 0.0) {
                return Err(Error::Config(format!(
                    "wave {} with k*c = {} is not periodic with period {tau}",
                    n + 2,
                    raw[n]
                )));
            }
            freq[n] = 2.0 * PI * m / tau;
        }
        let domain = Domain::new(vec![0.0, -4.0], vec![PI * p.r_e, 4.0], vec![true, false])?;
        Ok(Self { params, k, freq, tau, domain })
    }

    /// Wave number `k_n = 2n / r_e` for n = 2, 3.
    pub fn wave_numbers(&self) -> [f64; 2] {
        self.k
    }

    /// Snapped angular frequencies `k_n c_n`.
    pub fn frequencies(&self) -> [f64; 2] {
        self.freq
    }

    /// Stream function value.
    pub fn stream_function(&self, t: f64, x: f64, y: f64) -> f64 {
        let p = &self.params;
        let th = (y / p.l).tanh();
        let sech2 = 1.0 - th * th;
        let waves = p.a2 * (self.k[0] * x - self.freq[0] * t).cos()
            + p.a3 * (self.k[1] * x - self.freq[1] * t).cos();
        -p.u0 * p.l * th + p.u0 * p.l * sech2 * waves
    }
}

fn common_period(raw: [f64; 2]) -> Result<f64> {
    let base = raw.iter().find(|w| **w != 0.0).copied();
    let Some(w0) = base else {
        return Err(Error::Config("Bickley jet with zero phase speeds has no period".into()));
    };
    let t0 = 2.0 * PI / w0.abs();
    for m in 1..=64 {
        let tau = m as f64 * t0;
        let ok = raw.iter().all(|w| {
            let c = w * tau / (2.0 * PI);
            (c - c.round()).abs() <= SNAP_TOL * c.abs().max(1.0)
        });
        if ok {
            return Ok(tau);
        }
    }
    Err(Error::Config("Bickley phase speeds have no common period".into()))
}

impl Default for BickleyJet {
    fn default() -> Self {
        Self::new(BickleyParams::default()).unwrap()
    }
}

impl VectorField for BickleyJet {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn period(&self) -> f64 {
        self.tau
    }

    fn name(&self) -> &str {
        "bickley_jet"
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let p = &self.params;
        let th = (x[1] / p.l).tanh();
        let sech2 = 1.0 - th * th;
        let (s2, c2) = (self.k[0] * x[0] - self.freq[0] * t).sin_cos();
        let (s3, c3) = (self.k[1] * x[0] - self.freq[1] * t).sin_cos();
        let waves = p.a2 * c2 + p.a3 * c3;
        let dwaves = -(p.a2 * self.k[0] * s2 + p.a3 * self.k[1] * s3);
        // dPsi/dy = -U0 sech^2 - 2 U0 sech^2 tanh * waves
        out[0] = p.u0 * sech2 * (1.0 + 2.0 * th * waves);
        out[1] = p.u0 * p.l * sech2 * dwaves;
    }
}

/// `v(t, x) = 0.3 cos t` on the unit circle `[0, 1)`.
#[derive(Clone, Debug)]
pub struct RotatingInterval {
    domain: Domain,
}

impl Default for RotatingInterval {
    fn default() -> Self {
        Self { domain: Domain::new(vec![0.0], vec![1.0], vec![true]).unwrap() }
    }
}

impl VectorField for RotatingInterval {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn period(&self) -> f64 {
        2.0 * PI
    }

    fn name(&self) -> &str {
        "rotating_interval"
    }

    fn velocity(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.3 * t.cos();
    }
}

pub fn double_gyre(amplitude: f64, alpha: f64, omega: f64) -> Result<DoubleGyre> {
    DoubleGyre::new(amplitude, alpha, omega)
}

pub fn bickley_jet(params: BickleyParams) -> Result<BickleyJet> {
    BickleyJet::new(params)
}

pub fn rotating_interval() -> RotatingInterval {
    RotatingInterval::default()
}

/// Field given by a closure `f(t, x, out)`.
pub struct FnField<F> {
    domain: Domain,
    period: f64,
    name: String,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(domain: Domain, period: f64, f: F) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        Ok(Self { domain, period, name: "custom".into(), f })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn period(&self) -> f64 {
        self.period
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

/// The zero field on a domain, with an arbitrary nominal period.
pub fn zero_field(domain: Domain, period: f64) -> Result<impl VectorField> {
    FnField::new(domain, period, |_t, _x, out: &mut [f64]| out.fill(0.0)).map(|f| f.named("zero"))
}

/// Central-difference divergence at `(t, x)` with step `h`.
pub fn divergence_fd(field: &dyn VectorField, t: f64, x: &[f64], h: f64) -> f64 {
    let d = field.dim();
    let mut div = 0.0;
    let mut xp = [0.0; MAX_DIM];
    let mut xm = [0.0; MAX_DIM];
    let mut vp = [0.0; MAX_DIM];
    let mut vm = [0.0; MAX_DIM];
    for k in 0..d {
        xp[..d].copy_from_slice(&x[..d]);
        xm[..d].copy_from_slice(&x[..d]);
        xp[k] += h;
        xm[k] -= h;
        field.evaluate(t, &xp[..d], &mut vp[..d]);
        field.evaluate(t, &xm[..d], &mut vm[..d]);
        div += (vp[k] - vm[k]) / (2.0 * h);
    }
    div
}
