//! Spatial Ulam (upwind) generator `G(t) = G_drift(t) + G_diff` on a box partition.
//!
//! Coefficients are taken with respect to the normalized indicators
//! `1_{B_i} / m(B_i)`, so `G` maps coefficient vectors from the left and
//! conserves `sum_i m(B_i) u_i`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{VectorField, MAX_DIM};
use crate::grid::{gauss_legendre_interval, BoxPartition, Face, FaceRule};
use crate::linalg::sparse::{CscMatrix, TripletBuilder};

/// Default Gauss nodes per face axis.
pub const DEFAULT_QUADRATURE: usize = 4;

/// When the velocity is sampled for the drift part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSample {
    /// Point evaluation at `t`.
    Instant { t: f64 },
    /// Face fluxes averaged over `[t0, t1]` with Gauss nodes in time.
    Slab { t0: f64, t1: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub time: Option<TimeSample>,
    pub eps: f64,
    pub quadrature: usize,
}

#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub matrix: CscMatrix,
    pub box_volume: f64,
    pub meta: GeneratorMeta,
}

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// `sum_i m(B_i) G_ij` for every column.
    pub fn column_mass(&self) -> Vec<f64> {
        let w = vec![self.box_volume; self.n()];
        self.matrix.weighted_col_sums(&w)
    }

    /// `G 1`.
    pub fn apply_to_ones(&self) -> Vec<f64> {
        self.matrix.mul_vec(&vec![1.0; self.n()])
    }

    pub fn header_lines(&self, part: &BoxPartition) -> Vec<String> {
        let mut h = vec![
            format!("grid counts={:?} lo={:?} hi={:?} periodic={:?}", part.counts(), part.domain().lo, part.domain().hi, part.domain().periodic),
            "basis normalized box indicators, coefficients multiplied from the left".to_string(),
        ];
        match self.meta.time {
            Some(TimeSample::Instant { t }) => h.push(format!("t {t}")),
            Some(TimeSample::Slab { t0, t1 }) => h.push(format!("t slab [{t0}, {t1}]")),
            None => h.push("t independent".into()),
        }
        h.push(format!("eps {}", self.meta.eps));
        h.push(format!("quadrature {}", self.meta.quadrature));
        h
    }

    pub fn write_matrix_market(&self, part: &BoxPartition, path: &Path, extra: &[String]) -> Result<()> {
        let mut h = self.header_lines(part);
        h.extend_from_slice(extra);
        self.matrix.write_matrix_market(path, &h)
    }
}

fn check_dims(part: &BoxPartition, field: &dyn VectorField) -> Result<()> {
    if part.dim() != field.dim() {
        return Err(Error::DimensionMismatch { expected: part.dim(), got: field.dim() });
    }
    Ok(())
}

/// Upwind drift generator at time `t`.
pub fn assemble_drift(part: &BoxPartition, field: &dyn VectorField, t: f64, q: usize) -> Result<GeneratorMatrix> {
    check_dims(part, field)?;
    let matrix = drift_matrix(part, field, &[t], &[1.0], q)?;
    Ok(GeneratorMatrix {
        matrix,
        box_volume: part.box_volume(),
        meta: GeneratorMeta { time: Some(TimeSample::Instant { t }), eps: 0.0, quadrature: q },
    })
}

/// Drift generator with face fluxes averaged over `[t0, t1]` (`q` Gauss nodes in time).
pub fn assemble_drift_slab(part: &BoxPartition, field: &dyn VectorField, t0: f64, t1: f64, q: usize) -> Result<GeneratorMatrix> {
    check_dims(part, field)?;
    if !(t1 > t0) {
        return Err(Error::Config(format!("empty time slab [{t0}, {t1}]")));
    }
    let (ts, ws) = gauss_legendre_interval(q, t0, t1);
    let ws: Vec<f64> = ws.iter().map(|w| w / (t1 - t0)).collect();
    let matrix = drift_matrix(part, field, &ts, &ws, q)?;
    Ok(GeneratorMatrix {
        matrix,
        box_volume: part.box_volume(),
        meta: GeneratorMeta { time: Some(TimeSample::Slab { t0, t1 }), eps: 0.0, quadrature: q },
    })
}

/// Each internal face is visited once, from the box on its lower side. Fluxes
/// in the positive and negative axis direction move mass to the upper and
/// lower neighbor respectively. Faces on non-periodic boundaries carry no flux.
fn drift_matrix(part: &BoxPartition, field: &dyn VectorField, ts: &[f64], tw: &[f64], q: usize) -> Result<CscMatrix> {
    if q == 0 {
        return Err(Error::Config("quadrature order must be >= 1".into()));
    }
    let n = part.n_boxes();
    let d = part.dim();
    let rule = FaceRule::new(q);
    let inv_m = 1.0 / part.box_volume();
    let per_box: Vec<Vec<(usize, usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::with_capacity(4 * d);
            let mut v = [0.0; MAX_DIM];
            for k in 0..d {
                let f = Face::new(k, true);
                let Some(b) = part.neighbor(a, f) else { continue };
                let (mut plus, mut minus) = (0.0, 0.0);
                for (&t, &wt) in ts.iter().zip(tw) {
                    rule.for_each(part, a, f, |x, w| {
                        field.evaluate(t, &x[..d], &mut v[..d]);
                        let vk = v[k];
                        if vk > 0.0 {
                            plus += wt * w * vk;
                        } else {
                            minus -= wt * w * vk;
                        }
                    });
                }
                plus *= inv_m;
                minus *= inv_m;
                out.push((b, a, plus));
                out.push((a, a, -plus));
                out.push((a, b, minus));
                out.push((b, b, -minus));
            }
            out
        })
        .collect();
    let mut tb = TripletBuilder::with_capacity(n, n, per_box.iter().map(Vec::len).sum());
    for entries in per_box {
        for (r, c, v) in entries {
            tb.push(r, c, v);
        }
    }
    Ok(tb.build())
}

/// `(eps^2 / 2) Delta_n`: central differences on centroids, Neumann closure by
/// mirrored ghosts on non-periodic boundaries, wrap-around on periodic axes.
pub fn assemble_diffusion(part: &BoxPartition, eps: f64) -> Result<GeneratorMatrix> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config(format!("eps must be >= 0, got {eps}")));
    }
    let n = part.n_boxes();
    let d = part.dim();
    let mut tb = TripletBuilder::with_capacity(n, n, n * (2 * d + 1));
    if eps > 0.0 {
        let coef: Vec<f64> = part.widths().iter().map(|w| 0.5 * eps * eps / (w * w)).collect();
        for i in 0..n {
            for f in part.faces() {
                if let Some(j) = part.neighbor(i, f) {
                    let c = coef[f.axis()];
                    tb.push(i, j, c);
                    tb.push(i, i, -c);
                }
            }
        }
    }
    Ok(GeneratorMatrix {
        matrix: tb.build(),
        box_volume: part.box_volume(),
        meta: GeneratorMeta { time: None, eps, quadrature: 0 },
    })
}

/// `G(t) = G_drift(t) + G_diff`.
pub fn assemble(part: &BoxPartition, field: &dyn VectorField, t: f64, eps: f64, q: usize) -> Result<GeneratorMatrix> {
    let drift = assemble_drift(part, field, t, q)?;
    combine(drift, assemble_diffusion(part, eps)?)
}

/// Slab-averaged drift plus diffusion.
pub fn assemble_slab(part: &BoxPartition, field: &dyn VectorField, t0: f64, t1: f64, eps: f64, q: usize) -> Result<GeneratorMatrix> {
    let drift = assemble_drift_slab(part, field, t0, t1, q)?;
    combine(drift, assemble_diffusion(part, eps)?)
}

fn combine(drift: GeneratorMatrix, diff: GeneratorMatrix) -> Result<GeneratorMatrix> {
    Ok(GeneratorMatrix {
        matrix: drift.matrix.add(&diff.matrix),
        box_volume: drift.box_volume,
        meta: GeneratorMeta { time: drift.meta.time, eps: diff.meta.eps, quadrature: drift.meta.quadrature },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{zero_field, Domain, DoubleGyre, FnField, VectorField};
    use proptest::prelude::*;

    fn gyre_part(nx: usize, ny: usize) -> BoxPartition {
        let g = DoubleGyre::default();
        BoxPartition::new(g.domain().clone(), vec![nx, ny]).unwrap()
    }

    fn inf_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn zero_field_gives_zero_matrix() {
        let part = gyre_part(5, 3);
        let z = zero_field(part.domain().clone(), 1.0).unwrap();
        let g = assemble(&part, &z, 0.0, 0.0, 4).unwrap();
        assert!(g.matrix.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_dimensional_transport_example() {
        let dom = Domain::new(vec![0.0], vec![1.0], vec![true]).unwrap();
        let part = BoxPartition::new(dom.clone(), vec![4]).unwrap();
        let f = FnField::new(dom, 1.0, |_t, _x, out: &mut [f64]| out[0] = 1.0).unwrap();
        let g = assemble_drift(&part, &f, 0.0, 1).unwrap();
        // oracle: unit flux through each right face, scaled by 1/m = 4
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j {
                    -4.0
                } else if i == (j + 1) % 4 {
                    4.0
                } else {
                    0.0
                };
                assert_eq!(g.matrix.get(i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn diffusion_stencil_example() {
        let dom = Domain::new(vec![0.0], vec![1.0], vec![false]).unwrap();
        let part = BoxPartition::new(dom, vec![3]).unwrap();
        let g = assemble_diffusion(&part, 1.0).unwrap();
        let c = 0.5 * 9.0;
        let dense = g.matrix.to_dense();
        let oracle = [[-c, c, 0.0], [c, -2.0 * c, c], [0.0, c, -c]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((dense[i][j] - oracle[i][j]).abs() < 1e-12);
            }
        }
        let zero = assemble_diffusion(&part, 0.0).unwrap();
        assert_eq!(zero.matrix.nnz(), 0);
    }

    #[test]
    fn double_gyre_constant_kernel() {
        let part = gyre_part(20, 10);
        let g = assemble_drift(&part, &DoubleGyre::default(), 0.3, 4).unwrap();
        assert!(inf_norm(&g.apply_to_ones()) <= 1e-10);
    }

    #[test]
    fn double_gyre_full_generator_invariants() {
        let part = gyre_part(100, 50);
        let g = assemble(&part, &DoubleGyre::default(), 0.0, 0.1, 4).unwrap();
        assert!(inf_norm(&g.apply_to_ones()) <= 1e-10);
        assert!(inf_norm(&g.column_mass()) <= 1e-10);
    }

    #[test]
    fn slab_average_keeps_invariants() {
        let part = gyre_part(20, 10);
        let g = assemble_slab(&part, &DoubleGyre::default(), 0.1, 0.2, 0.1, 4).unwrap();
        assert!(inf_norm(&g.apply_to_ones()) <= 1e-10);
        assert!(inf_norm(&g.column_mass()) <= 1e-10);
    }

    #[test]
    fn assembly_is_deterministic() {
        let part = gyre_part(30, 15);
        let a = assemble(&part, &DoubleGyre::default(), 0.37, 0.1, 4).unwrap();
        let b = assemble(&part, &DoubleGyre::default(), 0.37, 0.1, 4).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let part = gyre_part(4, 4);
        let r = crate::fields::rotating_interval();
        assert!(assemble_drift(&part, &r, 0.0, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generator_structure(nx in 2usize..12, ny in 2usize..12, t in 0.0..1.0f64, eps in 0.0..0.3f64, q in 1usize..5) {
            let part = gyre_part(nx, ny);
            let g = assemble(&part, &DoubleGyre::default(), t, eps, q).unwrap();
            let m = &g.matrix;
            let mut dmax = 0.0f64;
            for (r, c, v) in m.triplets() {
                if r == c {
                    prop_assert!(v <= 0.0);
                    dmax = dmax.max(-v);
                } else {
                    prop_assert!(v >= 0.0);
                }
            }
            prop_assert!(inf_norm(&g.column_mass()) <= 1e-10 * (1.0 + dmax));
            if dmax > 0.0 {
                let h = 0.999 / dmax;
                for (r, c, v) in m.triplets() {
                    let e = if r == c { 1.0 + h * v } else { h * v };
                    prop_assert!(e >= -1e-12);
                }
            }
        }
    }
}
