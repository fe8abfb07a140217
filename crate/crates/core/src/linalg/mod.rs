//! Sparse storage, direct factorization and the Krylov eigensolver.

pub mod arnoldi;
pub mod multifrontal;
pub mod ordering;
pub mod sparse;
