//! Numerical gluing of pseudoholomorphic maps on overlapping planar domains.
//!
//! Two maps defined on the pieces of a good pair are blended with a cut-off, and the
//! blend is corrected to an exact solution of `dbar f + A(f) conj(d f) = 0` by a Newton
//! iteration with a frozen right inverse built from the Cauchy–Green operator. In the
//! integrable case the one-step Cauchy–Green formula serves as an oracle.

pub mod acstruct;
pub mod calculus;
pub mod cousin;
pub mod cauchy;
pub mod error;
pub mod grid;
pub mod probe;
pub mod scenario;
pub mod solver;
pub mod transition;

pub use calculus::{d_z, d_zbar, lp_norm, w1p_norm, Field, NormConfig};
pub use cauchy::CauchyOperator;
pub use error::{GlueError, Result};
pub use grid::{build_cutoffs, build_domain, GoodPair, GridDomain, Lattice, Shape};
pub use num_complex::Complex64;
