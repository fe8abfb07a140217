use std::f64::consts::PI;

use augflow::augmented::{assemble_hybrid, assemble_ulam};
use augflow::fields::zero_field;
use augflow::generator::assemble;
use augflow::spectral::{eigs, eigs_augmented, EigsOptions, Mode};
use augflow::*;

fn gyre_domain() -> Domain {
    DoubleGyre::default().domain().clone()
}

/// Nonzero eigenvalues of the pure-diffusion generator, largest real part first.
fn diffusion_spectrum(nx: usize, ny: usize, eps: f64, k: usize) -> Vec<f64> {
    let part = BoxPartition::new(gyre_domain(), vec![nx, ny]).unwrap();
    let still = zero_field(gyre_domain(), 1.0).unwrap();
    let g = assemble(&part, &still, 0.0, eps, 4).unwrap();
    let r = eigs(&g.matrix, None, &EigsOptions::new(k, Mode::SmallestMagnitude)).unwrap();
    assert!(r.converged);
    let mut vals: Vec<f64> = r.pairs.iter().map(|p| {
        assert!(p.value.im.abs() < 1e-10);
        p.value.re
    }).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!(vals[0].abs() < 1e-10, "kernel missing: {vals:?}");
    vals.remove(0);
    vals
}

#[test]
fn pure_diffusion_neumann_modes() {
    let eps = 0.1;
    let vals = diffusion_spectrum(100, 50, eps, 4);
    let first = -0.5 * eps * eps * PI * PI / 4.0;
    let second = -0.5 * eps * eps * PI * PI;
    assert!((vals[0] / first - 1.0).abs() < 0.02, "{vals:?}");
    // next distinct value; cos(pi x) and cos(pi y) share it
    let next = vals.iter().copied().find(|v| (v - vals[0]).abs() > 1e-6).unwrap();
    assert!((next / second - 1.0).abs() < 0.02, "{vals:?}");
}

#[test]
fn pure_diffusion_converges_at_second_order() {
    let eps = 0.1;
    let exact = -0.5 * eps * eps * PI * PI / 4.0;
    let coarse = (diffusion_spectrum(20, 10, eps, 2)[0] - exact).abs();
    let fine = (diffusion_spectrum(40, 20, eps, 2)[0] - exact).abs();
    let order = (coarse / fine).log2();
    assert!(order >= 1.7, "observed order {order} ({coarse:e} -> {fine:e})");
}

#[test]
fn ulam_and_hybrid_agree_on_subdominant_eigenvalue() {
    let gyre = DoubleGyre::default();
    let part = BoxPartition::new(gyre_domain(), vec![20, 10]).unwrap();
    let subdominant = |g: &AugmentedGenerator| {
        let r = eigs_augmented(g, &EigsOptions::new(4, Mode::LargestReal)).unwrap();
        r.pairs.iter().map(|p| p.value).filter(|z| z.norm() > 1e-8).max_by(|a, b| a.re.partial_cmp(&b.re).unwrap()).unwrap()
    };
    let ulam = subdominant(&assemble_ulam(&AugmentedGrid::ulam(part.clone(), 120, 1.0).unwrap(), &gyre, 0.1, 4).unwrap());
    let hybrid = subdominant(&assemble_hybrid(&AugmentedGrid::collocation(part, 21, 1.0).unwrap(), &gyre, 0.1, 4).unwrap());
    assert!((ulam - hybrid).norm() <= 0.02 * hybrid.norm(), "{ulam} vs {hybrid}");
}

#[test]
fn augmented_spectrum_on_tiny_grid_is_stable() {
    // dense check of every eigenvalue for both schemes
    let gyre = DoubleGyre::default();
    let part = BoxPartition::new(gyre_domain(), vec![6, 3]).unwrap();
    for g in [
        assemble_ulam(&AugmentedGrid::ulam(part.clone(), 8, 1.0).unwrap(), &gyre, 0.1, 4).unwrap(),
        assemble_hybrid(&AugmentedGrid::collocation(part.clone(), 7, 1.0).unwrap(), &gyre, 0.1, 4).unwrap(),
    ] {
        let dense = g.to_sparse().to_dense();
        let n = dense.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| dense[i][j]);
        for z in m.complex_eigenvalues().iter() {
            assert!(z.re <= 1e-8, "{:?}: {z}", g.scheme);
        }
    }
}
