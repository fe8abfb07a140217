//! Uniform box partitions of the domain and the augmented time x space grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{wrap_coord, Domain, MAX_DIM};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "need at least one node");
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(q, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_q(x), P_q'(x))` by the three-term recurrence.
fn legendre(q: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=q {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if q == 0 {
        return (1.0, 0.0);
    }
    let d = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(q: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(q);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|x| c + h * x).collect(), w.iter().map(|w| h * w).collect())
}

/// Face `f` of a box: axis `f / 2`, lower side for even `f`, upper for odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Face(pub usize);

impl Face {
    pub fn new(axis: usize, upper: bool) -> Self {
        Face(2 * axis + upper as usize)
    }
    pub fn axis(self) -> usize {
        self.0 / 2
    }
    pub fn is_upper(self) -> bool {
        self.0 % 2 == 1
    }
    pub fn opposite(self) -> Self {
        Face(self.0 ^ 1)
    }
    /// Sign of the outward normal along `axis()`.
    pub fn normal_sign(self) -> f64 {
        if self.is_upper() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Uniform partition of a rectangular domain into `n_1 x ... x n_d` boxes.
///
/// Boxes are numbered with axis 0 varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPartition {
    counts: Vec<usize>,
    domain: Domain,
    widths: Vec<f64>,
    strides: Vec<usize>,
}

impl BoxPartition {
    pub fn new(domain: Domain, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::DimensionMismatch { expected: domain.dim(), got: counts.len() });
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("box counts must be positive".into()));
        }
        let widths = (0..domain.dim()).map(|k| domain.width(k) / counts[k] as f64).collect();
        let mut strides = vec![1; counts.len()];
        for k in 1..counts.len() {
            strides[k] = strides[k - 1] * counts[k - 1];
        }
        Ok(Self { counts, domain, widths, strides })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn n_boxes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Volume of every box.
    pub fn box_volume(&self) -> f64 {
        self.widths.iter().product()
    }

    /// (d-1)-volume of a face normal to `axis`; 1 in one dimension.
    pub fn face_area(&self, axis: usize) -> f64 {
        (0..self.dim()).filter(|&k| k != axis).map(|k| self.widths[k]).product()
    }

    pub fn multi_index(&self, i: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for k in 0..self.dim() {
            m[k] = (i / self.strides[k]) % self.counts[k];
        }
        m
    }

    pub fn linear_index(&self, m: &[usize]) -> usize {
        (0..self.dim()).map(|k| m[k] * self.strides[k]).sum()
    }

    pub fn box_lower(&self, i: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(i);
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim() {
            x[k] = self.domain.lo[k] + m[k] as f64 * self.widths[k];
        }
        x
    }

    pub fn centroid(&self, i: usize) -> [f64; MAX_DIM] {
        let mut x = self.box_lower(i);
        for k in 0..self.dim() {
            x[k] += 0.5 * self.widths[k];
        }
        x
    }

    /// Box across face `f`, or `None` on a non-periodic boundary.
    pub fn neighbor(&self, i: usize, f: Face) -> Option<usize> {
        let k = f.axis();
        let m = (i / self.strides[k]) % self.counts[k];
        let n = self.counts[k];
        let m2 = if f.is_upper() {
            if m + 1 < n {
                m + 1
            } else if self.domain.periodic[k] {
                0
            } else {
                return None;
            }
        } else if m > 0 {
            m - 1
        } else if self.domain.periodic[k] {
            n - 1
        } else {
            return None;
        };
        Some(i - m * self.strides[k] + m2 * self.strides[k])
    }

    pub fn faces(&self) -> impl Iterator<Item = Face> {
        (0..2 * self.dim()).map(Face)
    }

    /// Box containing `x`. Cells are lower-closed; `hi` on a non-periodic axis
    /// belongs to the last box.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        let mut idx = 0;
        for k in 0..self.dim() {
            let (lo, hi) = (self.domain.lo[k], self.domain.hi[k]);
            let mut c = x[k];
            if self.domain.periodic[k] {
                c = wrap_coord(c, lo, hi);
            } else if !(c >= lo && c <= hi) {
                return Err(Error::Domain { point: x[..self.dim()].to_vec(), axis: k });
            }
            let mut m = ((c - lo) / self.widths[k]).floor() as usize;
            if m >= self.counts[k] {
                m = self.counts[k] - 1;
            }
            idx += m * self.strides[k];
        }
        Ok(idx)
    }

    /// Tensor Gauss-Legendre rule with `q` nodes per axis on face `f` of box `i`.
    pub fn face_quadrature(&self, i: usize, f: Face, q: usize) -> Vec<([f64; MAX_DIM], f64)> {
        let rule = FaceRule::new(q);
        let mut out = Vec::new();
        rule.for_each(self, i, f, |x, w| out.push((x, w)));
        out
    }
}

/// Precomputed reference face rule reused across many faces.
#[derive(Clone, Debug)]
pub struct FaceRule {
    q: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FaceRule {
    pub fn new(q: usize) -> Self {
        assert!(q >= 1);
        let (x, w) = gauss_legendre(q);
        // map to [0, 1]
        let nodes = x.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let weights = w.iter().map(|w| 0.5 * w).collect();
        Self { q, nodes, weights }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.q
    }

    /// Visits `(point, weight)` for every node on face `f` of box `i`.
    pub fn for_each(&self, part: &BoxPartition, i: usize, f: Face, mut visit: impl FnMut([f64; MAX_DIM], f64)) {
        let d = part.dim();
        let axis = f.axis();
        let lower = part.box_lower(i);
        let w = part.widths();
        let mut base = lower;
        if f.is_upper() {
            base[axis] += w[axis];
        }
        let tang: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
        match tang.len() {
            0 => visit(base, 1.0),
            1 => {
                let a = tang[0];
                for (n, wt) in self.nodes.iter().zip(&self.weights) {
                    let mut x = base;
                    x[a] += n * w[a];
                    visit(x, wt * w[a]);
                }
            }
            2 => {
                let (a, b) = (tang[0], tang[1]);
                for (na, wa) in self.nodes.iter().zip(&self.weights) {
                    for (nb, wb) in self.nodes.iter().zip(&self.weights) {
                        let mut x = base;
                        x[a] += na * w[a];
                        x[b] += nb * w[b];
                        visit(x, wa * wb * w[a] * w[b]);
                    }
                }
            }
            _ => unreachable!("dimension is capped at {MAX_DIM}"),
        }
    }
}

/// Time discretization of the augmented grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeGrid {
    /// `n_t` slabs of width `h = tau / n_t`.
    Ulam { n_t: usize },
    /// `M` (odd) Fourier collocation nodes `t_l = tau * l / M`.
    Collocation { m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGrid {
    pub partition: BoxPartition,
    pub time: TimeGrid,
    pub period: f64,
}

impl AugmentedGrid {
    pub fn new(partition: BoxPartition, time: TimeGrid, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {period}")));
        }
        match time {
            TimeGrid::Ulam { n_t } if n_t == 0 => {
                return Err(Error::Config("Ulam time grid needs n_t >= 1".into()))
            }
            TimeGrid::Collocation { m } if m % 2 == 0 => {
                return Err(Error::Config(format!("collocation needs an odd number of nodes, got {m}")))
            }
            _ => {}
        }
        Ok(Self { partition, time, period })
    }

    pub fn ulam(partition: BoxPartition, n_t: usize, period: f64) -> Result<Self> {
        Self::new(partition, TimeGrid::Ulam { n_t }, period)
    }

    pub fn collocation(partition: BoxPartition, m: usize, period: f64) -> Result<Self> {
        Self::new(partition, TimeGrid::Collocation { m }, period)
    }

    pub fn n_slices(&self) -> usize {
        match self.time {
            TimeGrid::Ulam { n_t } => n_t,
            TimeGrid::Collocation { m } => m,
        }
    }

    pub fn n_boxes(&self) -> usize {
        self.partition.n_boxes()
    }

    pub fn len(&self) -> usize {
        self.n_slices() * self.n_boxes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slab width for Ulam grids, node spacing for collocation grids.
    pub fn step(&self) -> f64 {
        self.period / self.n_slices() as f64
    }

    pub fn slice_time(&self, l: usize) -> f64 {
        l as f64 * self.step()
    }

    pub fn slice_times(&self) -> Vec<f64> {
        (0..self.n_slices()).map(|l| self.slice_time(l)).collect()
    }

    pub fn index(&self, slice: usize, b: usize) -> usize {
        slice * self.n_boxes() + b
    }

    pub fn split(&self, g: usize) -> (usize, usize) {
        (g / self.n_boxes(), g % self.n_boxes())
    }

    pub fn scheme_name(&self) -> &'static str {
        match self.time {
            TimeGrid::Ulam { .. } => "ulam",
            TimeGrid::Collocation { .. } => "hybrid",
        }
    }
}
