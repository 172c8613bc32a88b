//! Numerical calculus for constant-coefficient Kolmogorov operators
//! `A u = tr(Q D^2 u) + <BX, Du>`: explicit heat kernels, semigroups,
//! fractional powers, Besov seminorms and the Li-Yau/Harnack machinery of
//! the associated extension problem.

pub mod besov;
pub mod error;
pub mod extension;
pub mod fractional;
pub mod inequalities;
pub mod kernel;
pub mod linalg;
pub mod operator;
pub mod quadrature;
pub mod semigroup;
pub mod special;
pub mod suite;
pub mod testfuncs;

pub use error::{Error, Result};
pub use operator::{OperatorSpec, GramianBundle, KernelConstants};
