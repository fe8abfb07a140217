//! Time-parametrized coherent families built from augmented eigenvectors.

use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::augmented::{lagrange_basis, Scheme};
use crate::error::{Error, Result};
use crate::grid::{AugmentedGrid, TimeGrid};
use crate::spectral::EigenPair;

type C = Complex64;

/// Sign-set family `A_t^{+-}` derived from one eigenpair.
#[derive(Clone, Debug)]
pub struct CoherentFamily {
    pub grid: AugmentedGrid,
    pub scheme: Scheme,
    pub eigenvalue: C,
    /// Only used when the eigenvalue is complex.
    pub phase: f64,
    /// Anchor time `s` of the phase rotation.
    pub anchor: f64,
    vector: Vec<C>,
}

/// Box indices of `A_t^+` and `A_t^-` at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct SignSets {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

fn is_real(mu: C) -> bool {
    mu.im.abs() <= 1e-10 * (1.0 + mu.norm())
}

impl CoherentFamily {
    pub fn from_eigenpair(pair: &EigenPair, grid: &AugmentedGrid, phase: f64) -> Result<Self> {
        if pair.vector.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: pair.vector.len() });
        }
        let scheme = match grid.time {
            TimeGrid::Ulam { .. } => Scheme::Ulam,
            TimeGrid::Collocation { .. } => Scheme::Hybrid,
        };
        let phase = if is_real(pair.value) { 0.0 } else { phase.rem_euclid(2.0 * PI) };
        Ok(Self { grid: grid.clone(), scheme, eigenvalue: pair.value, phase, anchor: 0.0, vector: pair.vector.clone() })
    }

    pub fn with_anchor(mut self, s: f64) -> Self {
        self.anchor = s;
        self
    }

    pub fn n_boxes(&self) -> usize {
        self.grid.n_boxes()
    }

    /// Slab containing `t` (Ulam); node spacing tolerance guards round-off.
    pub fn slab_of(&self, t: f64) -> usize {
        let n = self.grid.n_slices();
        let h = self.grid.step();
        ((t.rem_euclid(self.grid.period) / h + 1e-9).floor() as usize) % n
    }

    /// The eigenvector's time slice `f_t` (complex box coefficients).
    pub fn slice(&self, t: f64) -> Vec<C> {
        let n = self.n_boxes();
        match self.grid.time {
            TimeGrid::Ulam { .. } => {
                let l = self.slab_of(t);
                self.vector[l * n..(l + 1) * n].to_vec()
            }
            TimeGrid::Collocation { m } => {
                let tau = self.grid.period;
                let tt = t.rem_euclid(tau);
                let mut out = vec![C::new(0.0, 0.0); n];
                for l in 0..m {
                    let w = lagrange_basis(m, tau, l, tt);
                    if w == 0.0 {
                        continue;
                    }
                    for (o, z) in out.iter_mut().zip(&self.vector[l * n..(l + 1) * n]) {
                        *o += w * z;
                    }
                }
                out
            }
        }
    }

    /// `Re(e^{i phase + mu (t - s)} f_t)`: the predicted push-forward of the
    /// phase slice at `s` to time `t >= s`.
    pub fn evolve_slice(&self, s: f64, t: f64) -> Vec<f64> {
        let f = self.slice(t);
        let mu = if is_real(self.eigenvalue) { C::new(self.eigenvalue.re, 0.0) } else { self.eigenvalue };
        let z = (C::new(0.0, self.phase) + mu * (t - s)).exp();
        f.iter().map(|v| (z * v).re).collect()
    }

    /// `Re(e^{i phase + i beta (t - s)} f_t)`, whose signs define `A_t^{+-}`.
    pub fn sign_field(&self, t: f64) -> Vec<f64> {
        let f = self.slice(t);
        let beta = if is_real(self.eigenvalue) { 0.0 } else { self.eigenvalue.im };
        let z = C::from_polar(1.0, self.phase + beta * (t - self.anchor));
        f.iter().map(|v| (z * v).re).collect()
    }

    /// `A_t^+ = {g >= level}` and `A_t^- = {g <= -level}` on box values `g`
    /// (boxes with value exactly zero belong to both when `level = 0`).
    pub fn sets(&self, t: f64, level: Option<f64>) -> SignSets {
        let lv = level.unwrap_or(0.0).abs();
        let g = self.sign_field(t);
        SignSets {
            plus: (0..g.len()).filter(|&i| g[i] >= lv).collect(),
            minus: (0..g.len()).filter(|&i| g[i] <= -lv).collect(),
        }
    }

    /// Escape-rate upper bound `-Re mu`.
    pub fn decay_rate_bound(&self) -> f64 {
        -self.eigenvalue.re
    }

    /// Period `2 pi / |beta|` of the phase rotation, if the eigenvalue is complex.
    pub fn phase_period(&self) -> Option<f64> {
        (!is_real(self.eigenvalue)).then(|| 2.0 * PI / self.eigenvalue.im.abs())
    }

    /// Writes box centroids and `Re(e^{i phase} f_t)` as CSV (`x[,y[,z]],value`).
    pub fn write_slice_csv(&self, t: f64, path: &Path, header: &[String]) -> Result<()> {
        let part = &self.grid.partition;
        let vals = self.sign_field(t);
        let axes = ["x", "y", "z"];
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "# t = {t}, eigenvalue = {} {:+}i, phase = {}", self.eigenvalue.re, self.eigenvalue.im, self.phase)?;
            writeln!(w, "{},value", axes[..part.dim()].join(","))?;
            for (i, v) in vals.iter().enumerate() {
                let c = part.centroid(i);
                for x in &c[..part.dim()] {
                    write!(w, "{x:.10e},")?;
                }
                writeln!(w, "{v:.10e}")?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    /// Writes `t,set,box` rows for the requested times.
    pub fn write_sets_csv(&self, times: &[f64], level: Option<f64>, path: &Path, header: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for h in header {
                writeln!(w, "# {h}")?;
            }
            writeln!(w, "t,set,box")?;
            for &t in times {
                let s = self.sets(t, level);
                for b in &s.plus {
                    writeln!(w, "{t},+,{b}")?;
                }
                for b in &s.minus {
                    writeln!(w, "{t},-,{b}")?;
                }
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }
}
