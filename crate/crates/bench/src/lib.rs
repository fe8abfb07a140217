//! Shared fixtures for the benchmarks.

use augflow::augmented::assemble_ulam;
use augflow::{AugmentedGenerator, AugmentedGrid, BoxPartition, DoubleGyre, VectorField};

pub fn gyre_partition(nx: usize, ny: usize) -> BoxPartition {
    BoxPartition::new(DoubleGyre::default().domain().clone(), vec![nx, ny]).expect("valid partition")
}

pub fn gyre_ulam(nx: usize, ny: usize, n_t: usize) -> AugmentedGenerator {
    let grid = AugmentedGrid::ulam(gyre_partition(nx, ny), n_t, 1.0).expect("valid grid");
    assemble_ulam(&grid, &DoubleGyre::default(), 0.1, 4).expect("assembly")
}
