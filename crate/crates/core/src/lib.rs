//! Transport in time-periodic flows and SDEs via the augmented generator.
//!
//! The pipeline: assemble an Ulam/upwind discretization of the generator on
//! time-augmented phase space ([`augmented`]), compute leading eigenpairs
//! ([`spectral`]), turn eigenvectors into coherent families ([`coherent`]),
//! and check the resulting escape-rate bounds with flux computations
//! ([`transport`]) and stochastic simulation ([`stochastic`]).

pub mod augmented;
pub mod coherent;
pub mod error;
pub mod fields;
pub mod generator;
pub mod grid;
pub mod linalg;
pub mod spectral;
pub mod stochastic;
pub mod transport;

pub use augmented::{AugmentedGenerator, Scheme, SliceSampling};

pub use error::{Error, Result};
pub use fields::{BickleyJet, BickleyParams, DiffusionSpec, Domain, DoubleGyre, RotatingInterval, VectorField};
pub use generator::GeneratorMatrix;
pub use grid::{AugmentedGrid, BoxPartition, TimeGrid};
pub use linalg::sparse::CscMatrix;
pub use coherent::{CoherentFamily, SignSets};
pub use spectral::{EigenPair, EigsOptions, Mode, SpectrumReport};
pub use num_complex::Complex64;

