//! Numerical laboratory for Hamiltonian dynamics on model symplectic surfaces:
//! flows and their algebra, Hofer-type length functionals, second variation of
//! length, growth functionals, flux, Lagrangian suspensions, a Cauchy-Riemann
//! solution family and a small Morse complex over Z/2.

pub mod error;
pub mod flow;
pub mod flux;
pub mod geodesics;
pub mod geometry;
pub mod dbar;
pub mod growth;
pub mod hamiltonian;
pub mod hofer;
pub mod lagrangian;
pub mod morse;
pub mod quadrature;
pub mod report;

pub use error::{HoferError, Result};
pub use flow::{FlowMap, MonodromyMatrix, Scheme, Trajectory};
pub use geometry::{BoxRegion, Grid, ManifoldKind, ManifoldSpec};
pub use hamiltonian::{Hamiltonian, NormalizedHamiltonian};
pub use report::Report;
