//! Numerical extension of symplectic embeddings of starlike domains to
//! global symplectomorphisms of `R^{2n}`.

pub mod embedding;
pub mod extension;
pub mod flow;
pub mod geometry;
pub mod hamiltonian;
pub mod homotopy;
pub mod linalg;
pub mod mapdsl;
pub mod quadrature;
pub mod sampling;
pub mod verify;
