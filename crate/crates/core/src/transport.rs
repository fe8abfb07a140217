//! Deterministic transport: outflow through moving boundaries, box-level flux
//! from the Ulam generator, and survivor sets under the flow.

use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmented::{AugmentedGenerator, Scheme};
use crate::error::{Error, Result};
use crate::fields::{VectorField, MAX_DIM};
use crate::grid::gauss_legendre_interval;

/// Finite-difference step for missing parametrization derivatives.
pub const FD_STEP: f64 = 1e-6;

pub type ParamFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Writes `D_r a` column by column: `out[j][..d]` is `d a / d r_j`.
pub type TangentFn = Arc<dyn Fn(f64, &[f64], &mut [[f64; MAX_DIM]; MAX_DIM]) + Send + Sync>;

/// One smooth piece `a(t, r)`, `r` in a `(d-1)`-dimensional rectangle, of the
/// boundary of a time-periodic family of sets.
#[derive(Clone)]
pub struct BoundaryPiece {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    position: ParamFn,
    time_derivative: Option<ParamFn>,
    tangents: Option<TangentFn>,
    /// `+1` if the normal built from the tangents points outward, `-1` otherwise.
    pub orientation: f64,
}

impl BoundaryPiece {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, position: ParamFn, orientation: f64) -> Self {
        Self { lo, hi, position, time_derivative: None, tangents: None, orientation }
    }

    pub fn with_time_derivative(mut self, f: ParamFn) -> Self {
        self.time_derivative = Some(f);
        self
    }

    pub fn with_tangents(mut self, f: TangentFn) -> Self {
        self.tangents = Some(f);
        self
    }

    fn n_params(&self) -> usize {
        self.lo.len()
    }

    fn eval(&self, t: f64, r: &[f64], d: usize) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        (self.position)(t, r, &mut x[..d]);
        x
    }

    fn d_t(&self, t: f64, r: &[f64], d: usize) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        match &self.time_derivative {
            Some(f) => f(t, r, &mut out[..d]),
            None => {
                let (p, m) = (self.eval(t + FD_STEP, r, d), self.eval(t - FD_STEP, r, d));
                for k in 0..d {
                    out[k] = (p[k] - m[k]) / (2.0 * FD_STEP);
                }
            }
        }
        out
    }

    fn d_r(&self, t: f64, r: &[f64], d: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        match &self.tangents {
            Some(f) => f(t, r, &mut out),
            None => {
                let mut rr = [0.0; MAX_DIM];
                rr[..r.len()].copy_from_slice(r);
                for j in 0..r.len() {
                    rr[j] = r[j] + FD_STEP;
                    let p = self.eval(t, &rr[..r.len()], d);
                    rr[j] = r[j] - FD_STEP;
                    let m = self.eval(t, &rr[..r.len()], d);
                    rr[j] = r[j];
                    for k in 0..d {
                        out[j][k] = (p[k] - m[k]) / (2.0 * FD_STEP);
                    }
                }
            }
        }
        out
    }
}

/// Boundary of a `tau`-periodic family `{A_t}` in `R^d` as a union of pieces.
#[derive(Clone)]
pub struct MovingBoundaryFamily {
    pub dim: usize,
    pub period: f64,
    pub pieces: Vec<BoundaryPiece>,
}

/// Composite Gauss rule: `panels` equal panels with `nodes` points each.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub panels: usize,
    pub nodes: usize,
}

impl Quadrature {
    pub fn new(panels: usize, nodes: usize) -> Self {
        Self { panels: panels.max(1), nodes: nodes.max(1) }
    }

    pub fn rule(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(self.panels * self.nodes);
        let mut w = Vec::with_capacity(self.panels * self.nodes);
        let h = (b - a) / self.panels as f64;
        for p in 0..self.panels {
            let (px, pw) = gauss_legendre_interval(self.nodes, a + p as f64 * h, a + (p + 1) as f64 * h);
            x.extend(px);
            w.extend(pw);
        }
        (x, w)
    }
}

fn det(mut m: [[f64; MAX_DIM + 1]; MAX_DIM + 1], n: usize) -> f64 {
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap()).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

/// Determinant of a small square matrix given row-major (`n <= 4`).
pub fn small_det(a: &[f64], n: usize) -> f64 {
    assert!(n <= MAX_DIM + 1 && a.len() == n * n);
    let mut m = [[0.0; MAX_DIM + 1]; MAX_DIM + 1];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i * n + j];
        }
    }
    det(m, n)
}

/// Gram determinant `det(T^T T)` of the columns `t[..k]` (each of length `d`).
fn gram(t: &[[f64; MAX_DIM + 1]], k: usize, d: usize) -> f64 {
    let mut g = [[0.0; MAX_DIM + 1]; MAX_DIM + 1];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = (0..d).map(|c| t[i][c] * t[j][c]).sum();
        }
    }
    det(g, k)
}

/// Unit normal orthogonal to the `d - 1` tangents, times `orientation`.
fn normal(tan: &[[f64; MAX_DIM]; MAX_DIM], d: usize, orientation: f64) -> Result<[f64; MAX_DIM]> {
    let mut n = [0.0; MAX_DIM];
    match d {
        1 => n[0] = 1.0,
        2 => {
            n[0] = tan[0][1];
            n[1] = -tan[0][0];
        }
        3 => {
            let (a, b) = (tan[0], tan[1]);
            n[0] = a[1] * b[2] - a[2] * b[1];
            n[1] = a[2] * b[0] - a[0] * b[2];
            n[2] = a[0] * b[1] - a[1] * b[0];
        }
        _ => return Err(Error::Config(format!("unsupported dimension {d}"))),
    }
    let len = n[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 || !len.is_finite() {
        return Err(Error::Degenerate("boundary parametrization has rank-deficient tangents".into()));
    }
    n.iter_mut().for_each(|x| *x *= orientation / len);
    Ok(n)
}

/// Per-node data shared by both flux formulas.
struct Node {
    v: [f64; MAX_DIM],
    dta: [f64; MAX_DIM],
    n: [f64; MAX_DIM],
    tangents: [[f64; MAX_DIM]; MAX_DIM],
}

impl MovingBoundaryFamily {
    pub fn new(dim: usize, period: f64, pieces: Vec<BoundaryPiece>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 1..={MAX_DIM}, got {dim}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        for p in &pieces {
            if p.lo.len() != dim - 1 || p.hi.len() != dim - 1 {
                return Err(Error::DimensionMismatch { expected: dim - 1, got: p.lo.len() });
            }
        }
        Ok(Self { dim, period, pieces })
    }

    fn node(&self, piece: &BoundaryPiece, field: &dyn VectorField, t: f64, r: &[f64]) -> Result<Node> {
        let d = self.dim;
        let x = piece.eval(t, r, d);
        let mut v = [0.0; MAX_DIM];
        field.evaluate(t, &x[..d], &mut v[..d]);
        let tangents = piece.d_r(t, r, d);
        let n = normal(&tangents, d, piece.orientation)?;
        Ok(Node { v, dta: piece.d_t(t, r, d), n, tangents })
    }

    /// Tensor-product quadrature of `f(piece, t, r)` over `[0, tau) x R` for every piece.
    fn integrate(
        &self,
        space: Quadrature,
        time: Quadrature,
        f: impl Fn(&BoundaryPiece, f64, &[f64]) -> Result<f64> + Sync,
    ) -> Result<f64> {
        let (tx, tw) = time.rule(0.0, self.period);
        let mut total = 0.0;
        for piece in &self.pieces {
            let k = piece.n_params();
            let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..k).map(|j| space.rule(piece.lo[j], piece.hi[j])).collect();
            let per_axis = rules.first().map_or(1, |r| r.0.len());
            let count = per_axis.pow(k as u32);
            let partial: Result<Vec<f64>> = (0..tx.len())
                .into_par_iter()
                .map(|it| {
                    let mut s = 0.0;
                    let mut r = [0.0; MAX_DIM];
                    for idx in 0..count {
                        let mut w = tw[it];
                        let mut rest = idx;
                        for (j, (rx, rw)) in rules.iter().enumerate() {
                            r[j] = rx[rest % per_axis];
                            w *= rw[rest % per_axis];
                            rest /= per_axis;
                        }
                        s += w * f(piece, tx[it], &r[..k])?;
                    }
                    Ok(s)
                })
                .collect();
            total += partial?.iter().sum::<f64>();
        }
        Ok(total)
    }

    /// `int_0^tau int_{dA_t} <v - w, n_t>^+ dsigma dt` in the `(t, r)` parametrization.
    pub fn cumulative_outflow(&self, field: &dyn VectorField, space: Quadrature, time: Quadrature) -> Result<f64> {
        let d = self.dim;
        self.integrate(space, time, |piece, t, r| {
            let nd = self.node(piece, field, t, r)?;
            let k = d - 1;
            let mut cols = [[0.0; MAX_DIM + 1]; MAX_DIM + 1];
            for j in 0..k {
                cols[j][..d].copy_from_slice(&nd.tangents[j][..d]);
            }
            let g = gram(&cols, k, d);
            if g <= 0.0 || !g.is_finite() {
                return Err(Error::Degenerate(format!("zero Gram determinant at t={t}, r={r:?}")));
            }
            let flux: f64 = (0..d).map(|c| (nd.v[c] - nd.dta[c]) * nd.n[c]).sum();
            Ok(flux.max(0.0) * g.sqrt())
        })
    }

    /// Outflow of the augmented field `(1, v)` through the boundary of the
    /// augmented set `{(t, x) : x in A_t}`, with the augmented normal and the
    /// Gram determinant of `(t, r) -> (t, a(t, r))`.
    pub fn instantaneous_augmented_outflow(&self, field: &dyn VectorField, space: Quadrature, time: Quadrature) -> Result<f64> {
        let d = self.dim;
        self.integrate(space, time, |piece, t, r| {
            let nd = self.node(piece, field, t, r)?;
            let nw: f64 = (0..d).map(|c| nd.n[c] * nd.dta[c]).sum();
            let scale = (1.0 + nw * nw).sqrt();
            // augmented Jacobian columns: (1, D_t a) and (0, D_r a)
            let mut cols = [[0.0; MAX_DIM + 1]; MAX_DIM + 1];
            cols[0][0] = 1.0;
            cols[0][1..=d].copy_from_slice(&nd.dta[..d]);
            for j in 0..d - 1 {
                cols[j + 1][1..=d].copy_from_slice(&nd.tangents[j][..d]);
            }
            let g_aug = gram(&cols, d, d + 1);
            if g_aug <= 0.0 || !g_aug.is_finite() {
                return Err(Error::Degenerate(format!("zero augmented Gram determinant at t={t}, r={r:?}")));
            }
            let vn: f64 = (0..d).map(|c| nd.v[c] * nd.n[c]).sum();
            let flux = (-nw + vn) / scale;
            Ok(flux.max(0.0) * g_aug.sqrt())
        })
    }

    /// Both fluxes and their difference.
    pub fn flux_report(&self, field: &dyn VectorField, space: Quadrature, time: Quadrature) -> Result<FluxReport> {
        let cumulative = self.cumulative_outflow(field, space, time)?;
        let instantaneous = self.instantaneous_augmented_outflow(field, space, time)?;
        let abs_diff = (cumulative - instantaneous).abs();
        Ok(FluxReport {
            cumulative,
            instantaneous,
            abs_diff,
            rel_diff: abs_diff / cumulative.abs().max(instantaneous.abs()).max(f64::MIN_POSITIVE),
            space,
            time,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxReport {
    pub cumulative: f64,
    pub instantaneous: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    pub space: Quadrature,
    pub time: Quadrature,
}

/// Moving interval `[c(t) - w/2, c(t) + w/2]` on the line with centre velocity `c'`.
pub fn moving_interval(
    period: f64,
    centre: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    centre_dot: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    width: f64,
) -> MovingBoundaryFamily {
    let end = |sign: f64| {
        let (c, cd) = (centre.clone(), centre_dot.clone());
        BoundaryPiece::new(vec![], vec![], Arc::new(move |t, _r, out| out[0] = c(t) + sign * 0.5 * width), sign)
            .with_time_derivative(Arc::new(move |t, _r, out| out[0] = cd(t)))
    };
    MovingBoundaryFamily { dim: 1, period, pieces: vec![end(-1.0), end(1.0)] }
}

/// The rotating-interval family `A_t = [0.3 + 0.2 sin t, 0.7 + 0.2 sin t]`.
pub fn rotating_interval_family() -> MovingBoundaryFamily {
    moving_interval(2.0 * PI, |t| 0.5 + 0.2 * t.sin(), |t| 0.2 * t.cos(), 0.4)
}

/// Interval advected by `v = 0.3 cos t`, so the boundary moves with the flow.
pub fn advected_interval_family() -> MovingBoundaryFamily {
    moving_interval(2.0 * PI, |t| 0.5 + 0.3 * t.sin(), |t| 0.3 * t.cos(), 0.4)
}

/// Circle of radius `radius` around `centre(t)`, counterclockwise in `r in [0, 2 pi]`.
pub fn moving_circle(
    period: f64,
    centre: impl Fn(f64) -> [f64; 2] + Send + Sync + Clone + 'static,
    centre_dot: impl Fn(f64) -> [f64; 2] + Send + Sync + 'static,
    radius: f64,
) -> MovingBoundaryFamily {
    let c = centre.clone();
    let piece = BoundaryPiece::new(
        vec![0.0],
        vec![2.0 * PI],
        Arc::new(move |t, r, out| {
            let z = c(t);
            out[0] = z[0] + radius * r[0].cos();
            out[1] = z[1] + radius * r[0].sin();
        }),
        1.0,
    )
    .with_time_derivative(Arc::new(move |t, _r, out| {
        let z = centre_dot(t);
        out[0] = z[0];
        out[1] = z[1];
    }))
    .with_tangents(Arc::new(move |_t, r, out| {
        out[0][0] = -radius * r[0].sin();
        out[0][1] = radius * r[0].cos();
    }));
    MovingBoundaryFamily { dim: 2, period, pieces: vec![piece] }
}

/// Flux out of time-dependent box sets read off the Ulam augmented generator:
/// `h * sum_l sum_{j in S_l, i notin S_l} m(B_j) G_l[i, j]` over spatial
/// transitions of each slab (the time-advance coupling is not counted).
pub fn box_family_flux(g: &AugmentedGenerator, inside: &[Vec<bool>]) -> Result<f64> {
    if g.scheme != Scheme::Ulam {
        return Err(Error::UnsupportedScheme("box flux needs Ulam generator entries"));
    }
    if inside.len() != g.n_slices() {
        return Err(Error::DimensionMismatch { expected: g.n_slices(), got: inside.len() });
    }
    let h = g.grid.step();
    let mut total = 0.0;
    for (slice, set) in g.slices.iter().zip(inside) {
        if set.len() != g.n_boxes() {
            return Err(Error::DimensionMismatch { expected: g.n_boxes(), got: set.len() });
        }
        let m = slice.box_volume;
        for (i, j, v) in slice.matrix.triplets() {
            if i != j && set[j] && !set[i] {
                total += h * m * v;
            }
        }
    }
    Ok(total)
}

/// [`box_family_flux`] plus the time-advance coupling of the augmented
/// generator: a box in `S_{l-1}` but not in `S_l` contributes `m(B_j)`.
/// On smooth moving sets the staircase boundary does not net local in- and
/// outflow, so this overestimates the continuum flux at any resolution.
pub fn augmented_box_family_flux(g: &AugmentedGenerator, inside: &[Vec<bool>]) -> Result<f64> {
    let spatial = box_family_flux(g, inside)?;
    let n = inside.len();
    let mut dropped = 0usize;
    for l in 0..n {
        let prev = &inside[(l + n - 1) % n];
        dropped += prev.iter().zip(&inside[l]).filter(|(a, b)| **a && !**b).count();
    }
    let m = g.slices.first().map_or(0.0, |s| s.box_volume);
    Ok(spatial + m * dropped as f64)
}

/// Survival of a uniformly seeded ensemble inside a family of sets.
#[derive(Clone, Debug)]
pub struct SurvivorRecord {
    pub anchor: f64,
    pub step: f64,
    pub domain_volume: f64,
    pub points: Vec<[f64; MAX_DIM]>,
    /// Substep index at which each point first left the family (`None`: survived).
    pub exit_step: Vec<Option<usize>>,
    /// Same, with membership checked only at `s + k tau`.
    pub poincare_exit_step: Vec<Option<usize>>,
    pub n_steps: usize,
    pub period: f64,
}

impl SurvivorRecord {
    fn step_of(&self, r: f64) -> usize {
        (((r - self.anchor) / self.step) + 1e-9).floor().clamp(0.0, self.n_steps as f64) as usize
    }

    /// Survival mask at time `r` (densely sampled).
    pub fn mask(&self, r: f64) -> Vec<bool> {
        let k = self.step_of(r);
        self.exit_step.iter().map(|e| e.is_none_or(|e| e > k)).collect()
    }

    /// Survival mask at time `r` when membership is checked only at `s + k tau`.
    pub fn poincare_mask(&self, r: f64) -> Vec<bool> {
        let k = self.step_of(r);
        self.poincare_exit_step.iter().map(|e| e.is_none_or(|e| e > k)).collect()
    }

    /// `vol(X) * survivors(r) / N`.
    pub fn measure(&self, r: f64) -> f64 {
        let alive = self.mask(r).iter().filter(|&&a| a).count();
        self.domain_volume * alive as f64 / self.points.len() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.anchor + k as f64 * self.step).collect()
    }

    /// Survivor measures at every substep.
    pub fn measures(&self) -> Vec<f64> {
        let mut dead = vec![0usize; self.n_steps + 2];
        for e in self.exit_step.iter().flatten() {
            dead[*e] += 1;
        }
        let n = self.points.len() as f64;
        let mut alive = self.points.len();
        (0..=self.n_steps)
            .map(|k| {
                alive -= dead[k];
                self.domain_volume * alive as f64 / n
            })
            .collect()
    }

    /// Writes `t,survivor_fraction` rows.
    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let m = self.measures();
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "# N = {}, h = {}", self.points.len(), self.step)?;
            writeln!(w, "t,survivor_fraction")?;
            for (t, v) in self.times().iter().zip(&m) {
                writeln!(w, "{t:.10},{:.10}", v / self.domain_volume)?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }
}

fn rk4_step(field: &dyn VectorField, t: f64, x: &mut [f64], h: f64) {
    let d = x.len();
    let mut k = [[0.0; MAX_DIM]; 4];
    let mut y = [0.0; MAX_DIM];
    field.evaluate(t, x, &mut k[0][..d]);
    for c in 0..d {
        y[c] = x[c] + 0.5 * h * k[0][c];
    }
    field.evaluate(t + 0.5 * h, &y[..d], &mut k[1][..d]);
    for c in 0..d {
        y[c] = x[c] + 0.5 * h * k[1][c];
    }
    field.evaluate(t + 0.5 * h, &y[..d], &mut k[2][..d]);
    for c in 0..d {
        y[c] = x[c] + h * k[2][c];
    }
    field.evaluate(t + h, &y[..d], &mut k[3][..d]);
    for c in 0..d {
        x[c] += h / 6.0 * (k[0][c] + 2.0 * k[1][c] + 2.0 * k[2][c] + k[3][c]);
    }
    field.domain().wrap(x);
}

/// Integrates `n` uniform points from `s` to `t` with RK4 steps of (at most)
/// `h`, checking `inside(r, x)` at every substep.
pub fn survivor_evolve(
    field: &dyn VectorField,
    inside: &(dyn Fn(f64, &[f64]) -> bool + Sync),
    s: f64,
    t: f64,
    n: usize,
    h: f64,
    seed: u64,
) -> Result<SurvivorRecord> {
    if !(h > 0.0) || !(t >= s) || n == 0 {
        return Err(Error::Config(format!("survivor_evolve needs h > 0, t >= s, n >= 1 (h={h}, s={s}, t={t}, n={n})")));
    }
    let dom = field.domain().clone();
    let d = dom.dim();
    let n_steps = ((t - s) / h).ceil() as usize;
    let step = if n_steps == 0 { h } else { (t - s) / n_steps as f64 };
    let tau = field.period();
    // substeps at which s + k tau falls (nearest)
    let poincare: Vec<usize> = (0..)
        .map(|k| ((k as f64 * tau) / step).round() as usize)
        .take_while(|&k| k <= n_steps)
        .collect();
    let results: Vec<([f64; MAX_DIM], Option<usize>, Option<usize>)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut x = [0.0; MAX_DIM];
            for c in 0..d {
                x[c] = dom.lo[c] + rng.random::<f64>() * dom.width(c);
            }
            let start = x;
            let mut exit = None;
            let mut pexit = None;
            let mut next_p = 0usize;
            for k in 0..=n_steps {
                let r = s + k as f64 * step;
                if k > 0 {
                    rk4_step(field, r - step, &mut x[..d], step);
                }
                let ok = inside(r, &x[..d]);
                if !ok && exit.is_none() {
                    exit = Some(k);
                }
                if next_p < poincare.len() && poincare[next_p] == k {
                    next_p += 1;
                    if !ok && pexit.is_none() {
                        pexit = Some(k);
                    }
                }
                if exit.is_some() && next_p >= poincare.len() {
                    break;
                }
                if exit.is_some() && pexit.is_some() {
                    break;
                }
            }
            (start, exit, pexit)
        })
        .collect();
    Ok(SurvivorRecord {
        anchor: s,
        step,
        domain_volume: dom.volume(),
        points: results.iter().map(|r| r.0).collect(),
        exit_step: results.iter().map(|r| r.1).collect(),
        poincare_exit_step: results.iter().map(|r| r.2).collect(),
        n_steps,
        period: tau,
    })
}

/// Outcome of the determinant-identity check over random trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub k: usize,
    pub trials: usize,
    pub max_rel_error: f64,
    pub failures: usize,
    pub tol: f64,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Both sides of `(1 + (n^T m)^2) det(M^T M) = det([[1 + m^T m, m^T M], [M^T m, M^T M]])`
/// for `M` (`k x (k-1)`, column-major columns), `m`, and a unit `n` orthogonal to `range(M)`.
pub fn det_identity_sides(cols: &[[f64; MAX_DIM + 1]], m: &[f64], n: &[f64]) -> (f64, f64) {
    let k = m.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let nm = dot(n, m);
    let lhs = (1.0 + nm * nm) * gram(cols, k - 1, k);
    let mut big = vec![0.0; k * k];
    big[0] = 1.0 + dot(m, m);
    for j in 0..k - 1 {
        let mm = dot(m, &cols[j][..k]);
        big[j + 1] = mm;
        big[(j + 1) * k] = mm;
        for i in 0..k - 1 {
            big[(i + 1) * k + j + 1] = dot(&cols[i][..k], &cols[j][..k]);
        }
    }
    (lhs, small_det(&big, k))
}

/// Random trials of the determinant identity used for the augmented Gram determinant.
pub fn det_identity_check(k: usize, trials: usize, tol: f64, seed: u64) -> Result<IdentityReport> {
    if !(2..=MAX_DIM + 1).contains(&k) {
        return Err(Error::Config(format!("k must be in 2..={}, got {k}", MAX_DIM + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let mut cols = [[0.0; MAX_DIM + 1]; MAX_DIM + 1];
        for c in cols.iter_mut().take(k - 1) {
            for x in c.iter_mut().take(k) {
                *x = rng.sample(StandardNormal);
            }
        }
        let m: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        // n: a random vector orthogonalized against range(M), twice for stability
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for c in cols.iter().take(k - 1) {
            let mut u = c[..k].to_vec();
            for _ in 0..2 {
                for b in &basis {
                    let p: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
                    u.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let l = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            basis.push(u.iter().map(|x| x / l).collect());
        }
        let mut n: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = n.iter().zip(b).map(|(x, y)| x * y).sum();
                n.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let l = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        n.iter_mut().for_each(|x| *x /= l);
        let (lhs, rhs) = det_identity_sides(&cols, &m, &n);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        max_rel = max_rel.max(rel);
        if !(rel <= tol) {
            failures += 1;
        }
    }
    Ok(IdentityReport { k, trials, max_rel_error: max_rel, failures, tol })
}
