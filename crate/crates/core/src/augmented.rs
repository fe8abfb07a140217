//! Discretized augmented generator on `tau S^1 x X`.
//!
//! Both schemes share the form `blockdiag(G(t_l)) + C (x) I` over the
//! slice-major index `(slice, box)`. For Ulam `C` is the backward-difference
//! circulant; for the hybrid scheme `C = -D` with `D` the Fourier spectral
//! differentiation matrix, so both discretize `-d/dt + G_t`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::generator::{self, GeneratorMatrix};
use crate::grid::{AugmentedGrid, TimeGrid};
use crate::linalg::sparse::{CscMatrix, TripletBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ulam,
    Hybrid,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ulam => "ulam",
            Scheme::Hybrid => "hybrid",
        }
    }
}

/// How Ulam slice generators sample the time-dependent drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceSampling {
    /// Velocity evaluated at the slab's left endpoint `l h`.
    #[default]
    LeftEndpoint,
    /// Face fluxes averaged over the slab `[l h, (l+1) h]`, i.e. Gauss
    /// quadrature on the space-time faces of the 3-D boxes.
    SlabAverage,
}

#[derive(Clone, Debug)]
pub struct AugmentedGenerator {
    pub grid: AugmentedGrid,
    pub scheme: Scheme,
    pub slices: Vec<GeneratorMatrix>,
    /// Nonzeros `(l, m, C_lm)` of the time coupling.
    coupling: Vec<(usize, usize, f64)>,
    pub eps: f64,
    pub quadrature: usize,
    pub sampling: Option<SliceSampling>,
}

/// Fourier spectral differentiation matrix for `M` (odd) equispaced nodes on a
/// period `tau`, row-major: `D[l][m] = l_m'(t_l)`.
pub fn spectral_diff_matrix(m: usize, tau: f64) -> Result<Vec<f64>> {
    if m % 2 == 0 {
        return Err(Error::Config(format!("spectral differentiation needs odd M, got {m}")));
    }
    let mut d = vec![0.0; m * m];
    for l in 0..m {
        for k in 0..m {
            if l != k {
                let diff = l as i64 - k as i64;
                let sign = if diff.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                d[l * m + k] = PI / tau * sign / (PI * diff as f64 / m as f64).sin();
            }
        }
    }
    Ok(d)
}

/// Trigonometric Lagrange basis function `l_k(t)` on `M` equispaced nodes.
pub fn lagrange_basis(m: usize, tau: f64, k: usize, t: f64) -> f64 {
    // l_k(t) = (1/M) sum_{|j| <= (M-1)/2} exp(2 pi i j (t - t_k) / tau)
    let s = 2.0 * PI * (t - tau * k as f64 / m as f64) / tau;
    let half = s / 2.0;
    let den = m as f64 * half.sin();
    if den.abs() < 1e-14 {
        // removable singularity at nodes congruent to t_k
        let c = (m as f64 * half).cos() / half.cos();
        return c;
    }
    (m as f64 * half).sin() / den
}

/// Nonzeros of the Ulam backward-difference circulant.
fn ulam_coupling(n_t: usize, h: f64) -> Vec<(usize, usize, f64)> {
    let mut c = Vec::with_capacity(2 * n_t);
    for l in 0..n_t {
        let prev = (l + n_t - 1) % n_t;
        if prev == l {
            // single slab: constant in time, no coupling
            continue;
        }
        c.push((l, l, -1.0 / h));
        c.push((l, prev, 1.0 / h));
    }
    c
}

impl AugmentedGenerator {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn n_slices(&self) -> usize {
        self.grid.n_slices()
    }

    pub fn n_boxes(&self) -> usize {
        self.grid.n_boxes()
    }

    pub fn coupling(&self) -> &[(usize, usize, f64)] {
        &self.coupling
    }

    /// Dense `n_s x n_s` time coupling, row-major.
    pub fn coupling_dense(&self) -> Vec<f64> {
        let s = self.n_slices();
        let mut c = vec![0.0; s * s];
        for &(l, m, v) in &self.coupling {
            c[l * s + m] += v;
        }
        c
    }

    fn check_len(&self, x: usize, y: usize) -> Result<()> {
        if x != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: x });
        }
        if y != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: y });
        }
        Ok(())
    }

    /// `y = G x` using the block structure.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.check_len(x.len(), y.len())?;
        let n = self.n_boxes();
        let coupling = &self.coupling;
        y.par_chunks_mut(n).enumerate().for_each(|(l, yl)| {
            self.slices[l].matrix.matvec(&x[l * n..(l + 1) * n], yl);
            for &(r, m, c) in coupling.iter().filter(|e| e.0 == l) {
                debug_assert_eq!(r, l);
                let xm = &x[m * n..(m + 1) * n];
                yl.iter_mut().zip(xm).for_each(|(y, x)| *y += c * x);
            }
        });
        Ok(())
    }

    pub fn matvec_complex(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<()> {
        self.check_len(x.len(), y.len())?;
        let n = self.n_boxes();
        let coupling = &self.coupling;
        y.par_chunks_mut(n).enumerate().for_each(|(l, yl)| {
            self.slices[l].matrix.matvec_complex(&x[l * n..(l + 1) * n], yl);
            for &(_, m, c) in coupling.iter().filter(|e| e.0 == l) {
                let xm = &x[m * n..(m + 1) * n];
                yl.iter_mut().zip(xm).for_each(|(y, x)| *y += x * c);
            }
        });
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n()];
        self.matvec(x, &mut y)?;
        Ok(y)
    }

    /// Assembled sparse form (for factorization and export).
    pub fn to_sparse(&self) -> CscMatrix {
        let n = self.n_boxes();
        let total = self.n();
        let nnz: usize = self.slices.iter().map(|s| s.matrix.nnz()).sum::<usize>() + self.coupling.len() * n;
        let mut tb = TripletBuilder::with_capacity(total, total, nnz);
        for (l, s) in self.slices.iter().enumerate() {
            for (r, c, v) in s.matrix.triplets() {
                tb.push(l * n + r, l * n + c, v);
            }
        }
        for &(l, m, c) in &self.coupling {
            for i in 0..n {
                tb.push(l * n + i, m * n + i, c);
            }
        }
        tb.build()
    }

    pub fn header_lines(&self) -> Vec<String> {
        let p = &self.grid.partition;
        let mut h = vec![
            format!("scheme {}", self.scheme.name()),
            format!("grid counts={:?} lo={:?} hi={:?} periodic={:?}", p.counts(), p.domain().lo, p.domain().hi, p.domain().periodic),
            format!("period {}", self.grid.period),
        ];
        match self.grid.time {
            TimeGrid::Ulam { n_t } => h.push(format!("n_t {n_t}")),
            TimeGrid::Collocation { m } => h.push(format!("M {m}")),
        }
        if let Some(s) = self.sampling {
            h.push(format!("slice sampling {s:?}"));
        }
        h.push(format!("eps {}", self.eps));
        h.push(format!("quadrature {}", self.quadrature));
        h.push("index slice-major: global = slice * n_boxes + box".into());
        h
    }

    pub fn write_matrix_market(&self, path: &Path, extra: &[String]) -> Result<()> {
        let mut h = self.header_lines();
        h.extend_from_slice(extra);
        self.to_sparse().write_matrix_market(path, &h)
    }
}

fn slice_generators(
    grid: &AugmentedGrid,
    field: &dyn VectorField,
    eps: f64,
    q: usize,
    sampling: SliceSampling,
) -> Result<Vec<GeneratorMatrix>> {
    let part = &grid.partition;
    let diff = generator::assemble_diffusion(part, eps)?;
    let h = grid.step();
    (0..grid.n_slices())
        .into_par_iter()
        .map(|l| {
            let t = grid.slice_time(l);
            let drift = match sampling {
                SliceSampling::LeftEndpoint => generator::assemble_drift(part, field, t, q)?,
                SliceSampling::SlabAverage => generator::assemble_drift_slab(part, field, t, t + h, q)?,
            };
            Ok(GeneratorMatrix {
                matrix: drift.matrix.add(&diff.matrix),
                box_volume: drift.box_volume,
                meta: generator::GeneratorMeta { time: drift.meta.time, eps, quadrature: q },
            })
        })
        .collect()
}

fn check_period(grid: &AugmentedGrid, field: &dyn VectorField) -> Result<()> {
    let (a, b) = (grid.period, field.period());
    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
        return Err(Error::Config(format!("grid period {a} differs from field period {b}")));
    }
    Ok(())
}

/// Ulam scheme with left-endpoint slice times.
pub fn assemble_ulam(grid: &AugmentedGrid, field: &dyn VectorField, eps: f64, q: usize) -> Result<AugmentedGenerator> {
    assemble_ulam_with(grid, field, eps, q, SliceSampling::LeftEndpoint)
}

pub fn assemble_ulam_with(
    grid: &AugmentedGrid,
    field: &dyn VectorField,
    eps: f64,
    q: usize,
    sampling: SliceSampling,
) -> Result<AugmentedGenerator> {
    let TimeGrid::Ulam { n_t } = grid.time else {
        return Err(Error::Config("Ulam assembly needs an Ulam time grid".into()));
    };
    check_period(grid, field)?;
    let slices = slice_generators(grid, field, eps, q, sampling)?;
    Ok(AugmentedGenerator {
        grid: grid.clone(),
        scheme: Scheme::Ulam,
        slices,
        coupling: ulam_coupling(n_t, grid.step()),
        eps,
        quadrature: q,
        sampling: Some(sampling),
    })
}

/// Hybrid Fourier-collocation (time) x Ulam (space) scheme.
pub fn assemble_hybrid(grid: &AugmentedGrid, field: &dyn VectorField, eps: f64, q: usize) -> Result<AugmentedGenerator> {
    let TimeGrid::Collocation { m } = grid.time else {
        return Err(Error::Config("hybrid assembly needs a collocation time grid".into()));
    };
    check_period(grid, field)?;
    let d = spectral_diff_matrix(m, grid.period)?;
    let slices = slice_generators(grid, field, eps, q, SliceSampling::LeftEndpoint)?;
    let mut coupling = Vec::new();
    for l in 0..m {
        for k in 0..m {
            let v = d[l * m + k];
            if v != 0.0 {
                coupling.push((l, k, -v));
            }
        }
    }
    Ok(AugmentedGenerator {
        grid: grid.clone(),
        scheme: Scheme::Hybrid,
        slices,
        coupling,
        eps,
        quadrature: q,
        sampling: None,
    })
}

/// Companion eigenvalue offsets `-lambda_k` of the Ulam scheme,
/// `lambda_k = (1 - omega^{-k}) / h` with `omega = exp(2 pi i h / tau)`.
pub fn ulam_companion_shift(n_t: usize, tau: f64, k: i64) -> Complex64 {
    let h = tau / n_t as f64;
    let omega_mk = Complex64::from_polar(1.0, -2.0 * PI * h * k as f64 / tau);
    -(Complex64::new(1.0, 0.0) - omega_mk) / h
}

/// Companion offsets `-2 pi i k / tau` of the hybrid scheme.
pub fn hybrid_companion_shift(tau: f64, k: i64) -> Complex64 {
    Complex64::new(0.0, -2.0 * PI * k as f64 / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Domain, DoubleGyre, FnField};
    use crate::grid::BoxPartition;
    use proptest::prelude::*;

    fn gyre_grid(nx: usize, ny: usize, time: TimeGrid) -> AugmentedGrid {
        let g = DoubleGyre::default();
        let p = BoxPartition::new(g.domain().clone(), vec![nx, ny]).unwrap();
        AugmentedGrid::new(p, time, 1.0).unwrap()
    }

    fn inf_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn diff_matrix_single_node_is_zero() {
        assert_eq!(spectral_diff_matrix(1, 3.0).unwrap(), vec![0.0]);
        assert!(spectral_diff_matrix(4, 1.0).is_err());
    }

    #[test]
    fn diff_matrix_matches_lagrange_basis_derivatives() {
        // oracle: central finite differences of the trigonometric Lagrange basis
        for &(m, tau) in &[(3usize, 1.0), (7, 9.0), (11, 2.5)] {
            let d = spectral_diff_matrix(m, tau).unwrap();
            let h = 1e-6 * tau;
            for l in 0..m {
                let tl = tau * l as f64 / m as f64;
                for k in 0..m {
                    assert!((lagrange_basis(m, tau, k, tl) - if k == l { 1.0 } else { 0.0 }).abs() < 1e-12);
                    let fd = (lagrange_basis(m, tau, k, tl + h) - lagrange_basis(m, tau, k, tl - h)) / (2.0 * h);
                    assert!((fd - d[l * m + k]).abs() < 1e-6 * (1.0 + fd.abs()), "m={m} l={l} k={k}");
                }
            }
        }
    }

    #[test]
    fn diff_matrix_differentiates_sine_exactly() {
        for &(m, tau) in &[(3usize, 1.0), (21, 9.0)] {
            let d = spectral_diff_matrix(m, tau).unwrap();
            let w = 2.0 * PI / tau;
            for l in 0..m {
                let s: f64 = (0..m).map(|k| d[l * m + k] * (w * tau * k as f64 / m as f64).sin()).sum();
                let tl = tau * l as f64 / m as f64;
                assert!((s - w * (w * tl).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ulam_autonomous_constant_in_time() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![false, false]).unwrap();
        let f = FnField::new(dom.clone(), 1.0, |_t, x: &[f64], out: &mut [f64]| {
            out[0] = x[1] - 0.5;
            out[1] = 0.5 - x[0];
        })
        .unwrap();
        let p = BoxPartition::new(dom, vec![6, 6]).unwrap();
        let grid = AugmentedGrid::ulam(p, 3, 1.0).unwrap();
        let a = assemble_ulam(&grid, &f, 0.05, 4).unwrap();
        let fvec: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        let gf = a.slices[0].matrix.mul_vec(&fvec);
        let x: Vec<f64> = fvec.iter().cycle().take(108).copied().collect();
        let y = a.apply(&x).unwrap();
        for l in 0..3 {
            for i in 0..36 {
                assert!((y[l * 36 + i] - gf[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ulam_equivariant_shift_is_exact() {
        let grid = gyre_grid(20, 10, TimeGrid::Ulam { n_t: 6 });
        let a = assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let n = 200;
        for k in [-2i64, 1, 3] {
            let lam = ulam_companion_shift(6, 1.0, k);
            let x: Vec<Complex64> = (0..6 * n)
                .map(|g| Complex64::from_polar(1.0, 2.0 * PI * (g / n) as f64 * k as f64 / 6.0))
                .collect();
            let mut y = vec![Complex64::new(0.0, 0.0); 6 * n];
            a.matvec_complex(&x, &mut y).unwrap();
            for g in 0..6 * n {
                assert!((y[g] - lam * x[g]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn hybrid_single_node_reduces_to_spatial() {
        let grid = gyre_grid(6, 3, TimeGrid::Collocation { m: 1 });
        let a = assemble_hybrid(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let g = generator::assemble(&grid.partition, &DoubleGyre::default(), 0.0, 0.1, 4).unwrap();
        assert_eq!(a.to_sparse().pruned(), g.matrix.pruned());
    }

    #[test]
    fn hybrid_companion_shift_is_exact_within_band() {
        // G(t)1 = 0 and D differentiates trigonometric modes with |k| <= (M-1)/2 exactly
        let m = 5;
        let grid = gyre_grid(20, 10, TimeGrid::Collocation { m });
        let a = assemble_hybrid(&grid, &DoubleGyre::default(), 0.1, 4).unwrap();
        let n = 200;
        for k in [-2i64, -1, 1, 2] {
            let x: Vec<Complex64> =
                (0..m * n).map(|g| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * (g / n) as f64 / m as f64)).collect();
            let mut y = vec![Complex64::new(0.0, 0.0); m * n];
            a.matvec_complex(&x, &mut y).unwrap();
            let shift = hybrid_companion_shift(1.0, k);
            for g in 0..m * n {
                assert!((y[g] - shift * x[g]).norm() < 1e-10, "k={k}");
            }
        }
    }

    #[test]
    fn kernel_and_matvec_oracle() {
        for time in [TimeGrid::Ulam { n_t: 5 }, TimeGrid::Collocation { m: 5 }] {
            let grid = gyre_grid(20, 10, time);
            let a = match time {
                TimeGrid::Ulam { .. } => assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).unwrap(),
                TimeGrid::Collocation { .. } => assemble_hybrid(&grid, &DoubleGyre::default(), 0.1, 4).unwrap(),
            };
            let ones = vec![1.0; a.n()];
            assert!(inf_norm(&a.apply(&ones).unwrap()) <= 1e-10);
            let s = a.to_sparse();
            let x: Vec<f64> = (0..a.n()).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
            let y1 = a.apply(&x).unwrap();
            let y2 = s.mul_vec(&x);
            for i in 0..a.n() {
                assert!((y1[i] - y2[i]).abs() <= 1e-13 * (1.0 + y2[i].abs()));
            }
            // mass conservation on the augmented grid
            let colsum = s.weighted_col_sums(&vec![1.0; a.n()]);
            assert!(inf_norm(&colsum) <= 1e-10);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let grid = gyre_grid(3, 2, TimeGrid::Ulam { n_t: 2 });
        let a = assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 2).unwrap();
        let mut y = vec![0.0; a.n()];
        assert!(a.matvec(&[1.0; 3], &mut y).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn matvec_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, seed in 0u64..1000) {
            let grid = gyre_grid(5, 3, TimeGrid::Collocation { m: 3 });
            let g = assemble_hybrid(&grid, &DoubleGyre::default(), 0.1, 2).unwrap();
            let n = g.n();
            let u: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let w: Vec<f64> = (0..n).map(|i| ((i as u64 * 13 + 3 * seed) % 11) as f64 - 5.0).collect();
            let comb: Vec<f64> = u.iter().zip(&w).map(|(u, w)| a * u + b * w).collect();
            let lhs = g.apply(&comb).unwrap();
            let gu = g.apply(&u).unwrap();
            let gw = g.apply(&w).unwrap();
            let scale = 1.0 + a.abs() * inf_norm(&gu) + b.abs() * inf_norm(&gw);
            for i in 0..n {
                let rhs = a * gu[i] + b * gw[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-13 * scale);
            }
        }
    }
}
