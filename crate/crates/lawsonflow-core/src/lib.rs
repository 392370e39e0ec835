//! Numerics for O(p)xO(q)-equivariant hypersurfaces evolving by mean
//! curvature near a Lawson cone.
//!
//! Everything here works on profile curves in the first quadrant of the
//! (x1, y1)-plane: a curve is rotated through the product of spheres
//! S^(p-1) x S^(q-1) to produce a hypersurface in R^(p+q), and mean
//! curvature flow of the hypersurface reduces to a quasilinear parabolic
//! equation for the curve. The modules split along the pipeline:
//!
//! - [`cone`]: dimension bookkeeping for the cone y = mu*x (slopes,
//!   decay exponents, eigenvalue ladder, derived scheduling constants);
//! - [`specfn`]: the special functions the spectral theory needs
//!   (Kummer M, modified Bessel I, log-Gamma, normalization constants);
//! - [`profile`]: the minimal "bowl" profile asymptotic to the cone,
//!   solved as an ODE and pushed through the chart rotation;
//! - [`spectral`]: the weighted Hilbert space on the half-line, its
//!   eigenfunctions, the linearized/quadratic operators, heat kernel;
//! - [`initdata`]: gluing profile, low-mode packet, and outer cap into
//!   admissible initial curves;
//! - [`evolve`]: semi-implicit steppers in the three time frames, the
//!   multi-chart flow driver, the mode-projection map and its shooter;
//! - [`diagnose`]: curvature reports, rate fits, comparison barriers.
//!
//! The crate is `no_std` (with `alloc`); float transcendentals come from
//! [`libm`] so results are bit-reproducible across hosts. All IO lives in
//! the companion CLI crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cone;
pub mod diagnose;
pub mod evolve;
pub mod initdata;
pub mod numerics;
pub mod profile;
pub mod specfn;
pub mod spectral;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
