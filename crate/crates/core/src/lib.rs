//! Traveling-wave solitons of multitime Rayleigh and Van der Pol PDEs.
//!
//! The crate is organised bottom-up:
//!
//! - [`coefficients`]: geometric structures, speed vectors and the reduction
//!   to ODE coefficients `a, b, c` (Rayleigh) or `a, c, d` (Van der Pol);
//! - [`geometry`]: multitime functions, the box operator and PDE residuals;
//! - [`closed_form`]: the closed-form soliton families;
//! - [`series`]: power-series solitons for affine coefficients;
//! - [`oracle`]: numerical cross-checks (ODE integrator, spectral PDE
//!   solver, residual sweeps, decay checks);
//! - [`cli`]: the `mrayleigh` command line.

mod chebyshev;
pub mod cli;
pub mod closed_form;
pub mod coefficients;
pub mod error;
pub mod geometry;
pub mod oracle;
pub mod output;
pub mod series;

pub use error::{Error, Result};
