//! Cavity fields as synthetic matter: split-operator quantum dynamics of
//! one or two cavity modes coupled to a few-level atom, organized around
//! the gauge potentials the atom induces in the field quadrature plane.
//!
//! Conventions: hbar = 1, rates in rad/ns, quadratures dimensionless with
//! [X_k, P_k] = +i. The momentum (P) representation is primary: states are
//! spinor fields over a uniform P grid and the coupling is diagonal there.

pub type C64 = num_complex::Complex64;

pub mod cli;
pub mod config;
pub mod field;
pub mod gauge;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod propagator;
pub mod validate;
