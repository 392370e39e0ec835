//! Spectral theory of the linearized rescaled flow on the Gaussian-weighted
//! half line: the space H = L^2((0, inf); y^(n-2) e^(-y^2/4) dy), the
//! eigenpairs of
//!
//!   L v = v'' + ((n-2)/y - y/2) v' + ((n-2)/y^2 + 1/2) v,
//!
//! the quadratic remainder Q with L + Q equal to the full rescaled
//! right-hand side (drift included — it lives inside L), weighted
//! quadrature, Fourier analysis in the eigenbasis, and the closed-form
//! heat kernel of L built from a modified Bessel function.

use crate::cone::ConeParams;
use crate::numerics::{
    graded_breaks_toward_zero, second_derivative_3pt, slopes_3pt, PanelRule,
};
use crate::specfn::{eigenfunction_coeffs, kummer_m, log_bessel_i, normalization_c};
use crate::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Quadrature cut: the weight tail beyond here is below 1e-16 of the mass
/// for every dimension this crate accepts (n <= ~12).
const DEFAULT_Y_CUT: f64 = 16.0;
/// Geometric grading levels toward the origin (integrands carry y^(2 alpha)).
const DEFAULT_GRADING_LEVELS: u32 = 12;
/// Gauss-Legendre points per panel.
const PANEL_ORDER: usize = 32;
/// ln of the smallest positive normal f64, used as the underflow floor.
const LOG_UNDERFLOW: f64 = -745.0;

/// Weighted quadrature over (0, y_cut] with the measure of H attached.
#[derive(Debug, Clone)]
pub struct WeightedQuadrature {
    pub cone: ConeParams,
    pub y_cut: f64,
    rule: PanelRule,
}

impl WeightedQuadrature {
    pub fn new(cone: &ConeParams) -> Result<Self> {
        Self::with_cut(cone, DEFAULT_Y_CUT, DEFAULT_GRADING_LEVELS)
    }

    pub fn with_cut(cone: &ConeParams, y_cut: f64, levels: u32) -> Result<Self> {
        if !(y_cut > 1.0) || levels < 2 {
            return Err(Error::ParameterError(format!(
                "quadrature needs y_cut > 1 and >= 2 grading levels, got ({y_cut}, {levels})"
            )));
        }
        let breaks = graded_breaks_toward_zero(y_cut, levels);
        let rule = PanelRule::from_breakpoints(&breaks, PANEL_ORDER)?;
        Ok(WeightedQuadrature {
            cone: *cone,
            y_cut,
            rule,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    /// The measure density y^(n-2) e^(-y^2/4).
    pub fn weight(&self, y: f64) -> f64 {
        libm::exp((f64::from(self.cone.n) - 2.0) * libm::log(y) - 0.25 * y * y)
    }

    /// Integral of f against the weighted measure.
    pub fn integrate_weighted(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let n2 = f64::from(self.cone.n) - 2.0;
        self.rule.integrate(|y| {
            f(y) * libm::exp(n2 * libm::log(y) - 0.25 * y * y)
        })
    }

    /// Integral of f with no weight (plain dz), over the same panels.
    pub fn integrate_plain(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.rule.integrate(|y| f(y))
    }

    /// The inner product of H.
    pub fn inner_product_h(
        &self,
        mut f: impl FnMut(f64) -> f64,
        mut g: impl FnMut(f64) -> f64,
    ) -> f64 {
        let n2 = f64::from(self.cone.n) - 2.0;
        self.rule.integrate(|y| {
            f(y) * g(y) * libm::exp(n2 * libm::log(y) - 0.25 * y * y)
        })
    }

    /// Fourier coefficients <f, phi_j> for j = 0..=j_max.
    pub fn fourier_coeffs(
        &self,
        f: impl Fn(f64) -> f64,
        j_max: u32,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(j_max as usize + 1);
        for j in 0..=j_max {
            // Hoist the eigenfunction into a closure so failures surface
            // once, not per node.
            let c = normalization_c(&self.cone, j)?;
            let b = self.cone.kummer_b();
            let alpha = self.cone.alpha;
            let coeff = self.inner_product_h(&f, |y| {
                c * libm::pow(y, alpha)
                    * kummer_m(-f64::from(j), b, 0.25 * y * y).unwrap_or(f64::NAN)
            });
            if !coeff.is_finite() {
                return Err(Error::NonConvergence(format!(
                    "Fourier coefficient {j} failed to evaluate"
                )));
            }
            out.push(coeff);
        }
        Ok(out)
    }
}

/// One eigenpair of L: eigenvalue lambda_i = -(1-alpha)/2 + i and the
/// eigenfunction phi_i = c_i y^alpha M(-i, b; y^2/4), carried here in the
/// explicit even-polynomial form (stable for the packet-sized indices;
/// use [`eigenfunction_eval`] for large i).
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub index: u32,
    pub lambda: f64,
    pub c: f64,
    /// K_{i,j} >= 0 with phi_i = c y^alpha sum_j (-1)^j K_{i,j} y^(2j).
    pub coeffs: Vec<f64>,
    alpha: f64,
}

pub fn eigen_pair(cone: &ConeParams, index: u32) -> Result<EigenPair> {
    if index > 16 {
        return Err(Error::ParameterError(format!(
            "explicit polynomial eigenpairs supported for index <= 16, got {index}"
        )));
    }
    Ok(EigenPair {
        index,
        lambda: cone.lambda(index),
        c: normalization_c(cone, index)?,
        coeffs: eigenfunction_coeffs(index, cone.kummer_b()),
        alpha: cone.alpha,
    })
}

impl EigenPair {
    pub fn eval(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::DomainError(format!(
                "eigenfunctions are defined for y > 0, got {y}"
            )));
        }
        let y2 = y * y;
        let mut poly = 0.0;
        let mut sign = 1.0;
        let mut power = 1.0;
        for &k in &self.coeffs {
            poly += sign * k * power;
            sign = -sign;
            power *= y2;
        }
        Ok(self.c * libm::pow(y, self.alpha) * poly)
    }
}

/// Evaluate phi_j(y) stably for any index (Laguerre recurrence inside).
pub fn eigenfunction_eval(cone: &ConeParams, j: u32, y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::DomainError(format!(
            "eigenfunctions are defined for finite y > 0, got {y}"
        )));
    }
    let c = normalization_c(cone, j)?;
    let m = kummer_m(-f64::from(j), cone.kummer_b(), 0.25 * y * y)?;
    Ok(c * libm::pow(y, cone.alpha) * m)
}

fn check_operator_mesh(mesh: &[f64], v: &[f64]) -> Result<()> {
    if mesh.len() != v.len() {
        return Err(Error::DimensionError(format!(
            "mesh/value length mismatch: {} vs {}",
            mesh.len(),
            v.len()
        )));
    }
    if mesh.len() < 6 {
        return Err(Error::MeshTooCoarse(format!(
            "operator stencils need >= 4 interior points, got {} nodes",
            mesh.len()
        )));
    }
    if mesh[0] <= 0.0 || mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DomainError(
            "operator mesh must be strictly increasing and positive".into(),
        ));
    }
    Ok(())
}

/// Discrete image of the linearized operator L (drift included). The two
/// boundary entries are NaN: one-sided stencils are not accurate enough
/// to be worth trusting, so they are marked rather than returned quietly.
pub fn apply_l(cone: &ConeParams, mesh: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_operator_mesh(mesh, v)?;
    let d1 = slopes_3pt(mesh, v);
    let d2 = second_derivative_3pt(mesh, v);
    let n2 = f64::from(cone.n) - 2.0;
    let m = mesh.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i == 0 || i == m - 1 {
            out.push(f64::NAN);
            continue;
        }
        let y = mesh[i];
        out.push(
            d2[i] + (n2 / y - 0.5 * y) * d1[i] + (n2 / (y * y) + 0.5) * v[i],
        );
    }
    Ok(out)
}

/// Discrete image of the quadratic remainder Q:
///
///   Q v = -v'^2 v''/(1+v'^2)
///         + (n-2) [ (v/y)^2 (v/y^2 + v'/y) + (mu - 1/mu)(v/y)(v/y^2) ]
///           / ((1 - mu v/y)(1 + (1/mu) v/y)),
///
/// so that L v + Q v reproduces the full rescaled right-hand side.
/// Boundary entries are NaN, as in [`apply_l`].
pub fn apply_q(cone: &ConeParams, mesh: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_operator_mesh(mesh, v)?;
    let d1 = slopes_3pt(mesh, v);
    let d2 = second_derivative_3pt(mesh, v);
    let mu = cone.mu;
    let n2 = f64::from(cone.n) - 2.0;
    let m = mesh.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i == 0 || i == m - 1 {
            out.push(f64::NAN);
            continue;
        }
        let y = mesh[i];
        let w = v[i] / y;
        let f1 = 1.0 - mu * w;
        let f2 = 1.0 + w / mu;
        if f1 <= 0.0 || f2 <= 0.0 {
            return Err(Error::ConeBreach(format!(
                "graph touches a cone ray at y = {y}: v/y = {w}"
            )));
        }
        let vp = d1[i];
        let curvature = -vp * vp * d2[i] / (1.0 + vp * vp);
        let radial = n2 * (w * w * (v[i] / (y * y) + vp / y)
            + (mu - 1.0 / mu) * w * (v[i] / (y * y)))
            / (f1 * f2);
        out.push(curvature + radial);
    }
    Ok(out)
}

/// The full right-hand side of the type-I rescaled equation, evaluated
/// directly from the quotient form
///
///   v''/(1+v'^2) + (p-1)(mu+v')/(y - mu v) - (q-1)(1-mu v')/(mu y + v)
///   + (1/2)(-y v' + v),
///
/// with the same stencils as the operator splitting. This is the reference
/// evaluator: algebraically equal to L + Q, but cancellation-prone for
/// |v| << y^alpha tails, so production stepping uses the split form.
pub fn full_type1_rhs(cone: &ConeParams, mesh: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_operator_mesh(mesh, v)?;
    let d1 = slopes_3pt(mesh, v);
    let d2 = second_derivative_3pt(mesh, v);
    let mu = cone.mu;
    let p1 = f64::from(cone.p) - 1.0;
    let q1 = f64::from(cone.q) - 1.0;
    let m = mesh.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        if i == 0 || i == m - 1 {
            out.push(f64::NAN);
            continue;
        }
        let y = mesh[i];
        let denom1 = y - mu * v[i];
        let denom2 = mu * y + v[i];
        if denom1 <= 0.0 || denom2 <= 0.0 {
            return Err(Error::ConeBreach(format!(
                "graph crossed a coordinate ray at y = {y}"
            )));
        }
        let vp = d1[i];
        out.push(
            d2[i] / (1.0 + vp * vp) + p1 * (mu + vp) / denom1
                - q1 * (1.0 - mu * vp) / denom2
                + 0.5 * (-y * vp + v[i]),
        );
    }
    Ok(out)
}

/// ln K(y, z, s) for the heat kernel of L:
///
///   K = (z/y)^(n/2-1) sqrt(yz) e^((n-1)s/4) / (2(1-e^{-s}))
///       * I_gamma( e^{-s/2} y z / (2(1-e^{-s})) )
///       * exp( -(e^{-s} y^2 + z^2) / (4(1-e^{-s})) ),
///
/// with gamma = (n-3)/2 + alpha. Everything is assembled in log space so
/// the Bessel growth and the Gaussian decay cancel analytically.
pub fn heat_kernel_log(cone: &ConeParams, y: f64, z: f64, s: f64) -> Result<f64> {
    if !(y > 0.0 && z > 0.0 && s > 0.0) {
        return Err(Error::DomainError(format!(
            "heat kernel needs y, z, s > 0, got ({y}, {z}, {s})"
        )));
    }
    let n = f64::from(cone.n);
    let gamma = 0.5 * (n - 3.0) + cone.alpha;
    let om = -libm::expm1(-s); // 1 - e^{-s}, accurate for small s
    let arg = libm::exp(-0.5 * s) * y * z / (2.0 * om);
    let log_i = log_bessel_i(gamma, arg)?;
    Ok((0.5 * n - 1.0) * (libm::log(z) - libm::log(y))
        + 0.5 * (libm::log(y) + libm::log(z))
        + 0.25 * (n - 1.0) * s
        - libm::log(2.0 * om)
        + log_i
        - (libm::exp(-s) * y * y + z * z) / (4.0 * om))
}

/// K(y, z, s); returns exactly 0 when the value underflows f64 (the
/// Gaussian factor wins), which is a documented limit, not an error.
pub fn heat_kernel(cone: &ConeParams, y: f64, z: f64, s: f64) -> Result<f64> {
    let lk = heat_kernel_log(cone, y, z, s)?;
    if lk < LOG_UNDERFLOW {
        return Ok(0.0);
    }
    Ok(libm::exp(lk))
}

/// The comparison shape C-free envelope
///
///   y^alpha s^(-(n-1)/2 - alpha) z^(n-2+alpha) (1 + c yz/s)^(-(n/2-1+alpha))
///   exp( -(e^{-s/2} y - z)^2 / (4s) ),     c = e^{-1/2}/2,
///
/// against which the kernel is bounded by a constant for s <= 1.
pub fn heat_kernel_bound_shape(cone: &ConeParams, y: f64, z: f64, s: f64) -> f64 {
    let n = f64::from(cone.n);
    let alpha = cone.alpha;
    let c = 0.5 * libm::exp(-0.5);
    let shift = libm::exp(-0.5 * s) * y - z;
    let log_shape = alpha * libm::log(y)
        - (0.5 * (n - 1.0) + alpha) * libm::log(s)
        + (n - 2.0 + alpha) * libm::log(z)
        - (0.5 * n - 1.0 + alpha) * libm::log1p(c * y * z / s)
        - shift * shift / (4.0 * s);
    if log_shape < LOG_UNDERFLOW {
        return 0.0;
    }
    libm::exp(log_shape)
}

/// Panel breakpoints for integrals of K(y, ., s) against slowly varying
/// factors: the graded base panels plus refinement around the Gaussian
/// bump centered at e^{-s/2} y with standard deviation sqrt(2(1-e^{-s})).
pub fn kernel_panels(y: f64, s: f64, y_cut: f64) -> Result<PanelRule> {
    let mut breaks = graded_breaks_toward_zero(y_cut, DEFAULT_GRADING_LEVELS);
    let center = libm::exp(-0.5 * s) * y;
    let sigma = libm::sqrt(-2.0 * libm::expm1(-s));
    for off in [-6.0, -4.0, -2.5, -1.5, -0.75, 0.0, 0.75, 1.5, 2.5, 4.0, 6.0] {
        let b = center + off * sigma;
        if b > 1e-12 && b < y_cut * (1.0 - 1e-12) {
            breaks.push(b);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
    PanelRule::from_breakpoints(&breaks, PANEL_ORDER)
}

/// Propagate f by the heat semigroup: (e^{sL} f)(y) = int K(y,z,s) f(z) dz
/// (plain dz — the weight is built into the kernel's asymmetry).
pub fn propagate(
    cone: &ConeParams,
    f: &dyn Fn(f64) -> f64,
    s: f64,
    y: f64,
    y_cut: f64,
) -> Result<f64> {
    let rule = kernel_panels(y, s, y_cut)?;
    let mut err: Option<Error> = None;
    let value = rule.integrate(|z| match heat_kernel(cone, y, z, s) {
        Ok(k) => k * f(z),
        Err(e) => {
            err = Some(e);
            f64::NAN
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(value)
}
