//! Special functions for the weighted spectral theory: confluent
//! hypergeometric (Kummer) M, modified Bessel I, log-Gamma, and the
//! normalization constants of the eigenfunction family.
//!
//! Conventions follow DLMF chapters 13 (Kummer) and 10 (Bessel). Nothing
//! here is asymptotics-blind: every routine states the region it trusts
//! and fails loudly outside it instead of degrading silently.

use crate::cone::ConeParams;
use crate::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Series term budget; generous for every argument the crate produces.
const MAX_SERIES_TERMS: usize = 500;
/// Relative-term stopping threshold for power series.
const SERIES_EPS: f64 = 1e-16;
/// Modified Bessel I switches from the ascending series to the large-x
/// asymptotic expansion here; both branches agree to ~1e-12 nearby.
const BESSEL_ASYMPTOTIC_CUTOFF: f64 = 25.0;

/// Natural log of the Gamma function for strictly positive arguments.
///
/// Thin domain-checked wrapper over the musl-derived implementation in
/// `libm`, which is good to a few ulp — comfortably past the 1e-12 the
/// callers need. Restricting to x > 0 sidesteps the reflection branch and
/// its sign bookkeeping, which nothing here requires.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!(
            "log_gamma requires finite x > 0, got {x}"
        )));
    }
    Ok(libm::lgamma(x))
}

/// Kummer's confluent hypergeometric function M(a, b; x).
///
/// For non-positive integer `a = -j` the series terminates: the value is a
/// degree-j polynomial, evaluated through the generalized-Laguerre forward
/// recurrence (M(-j, b; x) = j! / (b)_j * L_j^{(b-1)}(x)), which stays
/// stable where naive summation of the alternating polynomial loses all
/// precision for j beyond ~15. Otherwise the ascending series is summed
/// with a relative-term cutoff.
///
/// Requires b > 0 (the pole lattice of 1/Gamma(b) is excluded wholesale;
/// every b in this crate is alpha + (n-1)/2 > 0).
pub fn kummer_m(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::DomainError(format!(
            "kummer_m requires b > 0, got b = {b}"
        )));
    }
    if !a.is_finite() || !x.is_finite() {
        return Err(Error::DomainError(format!(
            "kummer_m requires finite arguments, got a = {a}, x = {x}"
        )));
    }
    if a <= 0.0 && a == libm::floor(a) {
        let j = (-a) as u32;
        if f64::from(j) != -a {
            return Err(Error::DomainError(format!(
                "polynomial degree -a = {} too large for exact integer handling",
                -a
            )));
        }
        return kummer_m_poly(j, b, x);
    }
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for m in 0..MAX_SERIES_TERMS {
        let mf = m as f64;
        term *= (a + mf) / (b + mf) * x / (mf + 1.0);
        sum += term;
        if term.abs() <= SERIES_EPS * sum.abs().max(1.0) {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence(format!(
        "Kummer series did not settle in {MAX_SERIES_TERMS} terms (a={a}, b={b}, x={x})"
    )))
}

/// Terminating Kummer case M(-j, b; x) via the Laguerre three-term
/// recurrence; exact for j = 0, 1 and stable for large degrees.
pub(crate) fn kummer_m_poly(j: u32, b: f64, x: f64) -> Result<f64> {
    let a = b - 1.0; // Laguerre parameter
    match j {
        0 => return Ok(1.0),
        1 => return Ok(1.0 - x / b),
        _ => {}
    }
    let mut lm1 = 1.0f64; // L_0
    let mut l = 1.0 + a - x; // L_1
    for k in 1..j {
        let kf = f64::from(k);
        let lp1 = ((2.0 * kf + 1.0 + a - x) * l - (kf + a) * lm1) / (kf + 1.0);
        lm1 = l;
        l = lp1;
    }
    // M = Gamma(j+1) Gamma(b) / Gamma(b+j) * L_j^{(a)}(x); all log-gamma
    // arguments are positive so the scale factor never misbehaves.
    let jf = f64::from(j);
    let scale = libm::exp(libm::lgamma(jf + 1.0) + libm::lgamma(b) - libm::lgamma(b + jf));
    Ok(scale * l)
}

/// Modified Bessel function of the first kind, I_nu(x), for nu >= 0, x >= 0.
///
/// Ascending series below [`BESSEL_ASYMPTOTIC_CUTOFF`] (all terms positive,
/// so no cancellation at any x — the cutoff exists purely because the
/// series needs O(x) terms); beyond it the standard large-argument
/// expansion, truncated at its smallest term. Overflows for x beyond ~700
/// are reported; use [`log_bessel_i`] there.
pub fn bessel_i(nu: f64, x: f64) -> Result<f64> {
    let log = log_bessel_i(nu, x)?;
    if log > 708.0 {
        return Err(Error::DomainError(format!(
            "I_{nu}({x}) overflows f64; use log_bessel_i"
        )));
    }
    Ok(libm::exp(log))
}

/// ln I_nu(x) for nu >= 0, x >= 0 (with ln I_nu(0) = -inf for nu > 0,
/// 0 for nu = 0). This is the overflow-safe entry point the heat kernel
/// uses; the kernel's Gaussian factor cancels the e^x growth analytically
/// so only logs ever meet.
pub fn log_bessel_i(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::DomainError(format!(
            "log_bessel_i requires nu >= 0, got {nu}"
        )));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!(
            "log_bessel_i requires x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    // The asymptotic expansion needs x to dominate nu^2; the series has no
    // upper limit, so large orders simply stay on the series branch.
    if x <= BESSEL_ASYMPTOTIC_CUTOFF || nu * nu > 2.0 * x {
        if x > 600.0 {
            return Err(Error::NonConvergence(format!(
                "series branch impractical at x = {x} with nu = {nu}"
            )));
        }
        // I_nu(x) = (x/2)^nu / Gamma(nu+1) * sum_m t_m,
        // t_0 = 1, t_{m+1} = t_m * (x^2/4) / ((m+1)(nu+m+1)).
        let q = 0.25 * x * x;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for m in 0..MAX_SERIES_TERMS {
            let mf = m as f64;
            term *= q / ((mf + 1.0) * (nu + mf + 1.0));
            sum += term;
            if term <= SERIES_EPS * sum {
                let prefix = nu * libm::log(0.5 * x) - libm::lgamma(nu + 1.0);
                return Ok(prefix + libm::log(sum));
            }
        }
        return Err(Error::NonConvergence(format!(
            "Bessel series did not settle in {MAX_SERIES_TERMS} terms (nu={nu}, x={x})"
        )));
    }
    // I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k with
    // a_k = prod_{j=1..k} (4 nu^2 - (2j-1)^2) / (k! 8^k); truncate at the
    // smallest term (superasymptotic), which at x >= 25 and the orders used
    // here is far below 1e-13 relative.
    let mu4 = 4.0 * nu * nu;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut last_mag = f64::INFINITY;
    for k in 1..MAX_SERIES_TERMS {
        let kf = k as f64;
        term *= -(mu4 - (2.0 * kf - 1.0) * (2.0 * kf - 1.0)) / (8.0 * kf * x);
        if term.abs() >= last_mag {
            break; // smallest term reached; adding more diverges
        }
        last_mag = term.abs();
        sum += term;
        if term.abs() <= SERIES_EPS * sum.abs() {
            break;
        }
    }
    if !(sum > 0.0) {
        return Err(Error::NonConvergence(format!(
            "asymptotic Bessel sum lost positivity (nu={nu}, x={x})"
        )));
    }
    Ok(x - 0.5 * libm::log(2.0 * core::f64::consts::PI * x) + libm::log(sum))
}

/// Normalization constant c_j making c_j * y^alpha * M(-j, b; y^2/4) a unit
/// vector in the weighted space L^2((0,inf); y^(n-2) e^(-y^2/4) dy):
///
///   c_j = 2^(-(n-2+2 alpha)/2) / Gamma(b) * sqrt(Gamma(b+j) / Gamma(j+1)).
///
/// Evaluated entirely in log space so large j stays exact; j is capped at
/// 200 by policy (far past anything the quadrature rules are sized for).
pub fn normalization_c(cone: &ConeParams, j: u32) -> Result<f64> {
    if j > 200 {
        return Err(Error::ParameterError(format!(
            "eigenfunction index {j} beyond supported range (<= 200)"
        )));
    }
    let b = cone.kummer_b();
    let jf = f64::from(j);
    let n = f64::from(cone.n);
    let log_c = -0.5 * (n - 2.0 + 2.0 * cone.alpha) * libm::log(2.0) - libm::lgamma(b)
        + 0.5 * (libm::lgamma(b + jf) - libm::lgamma(jf + 1.0));
    Ok(libm::exp(log_c))
}

/// Coefficients K_{l,j} of the even-polynomial form of mode l:
///
///   M(-l, b; y^2/4) = sum_{j=0..l} (-1)^j K_{l,j} y^(2j),
///   K_{l,j} = binom(l, j) / ((b)_j 4^j),
///
/// returned as the positive values [K_{l,0} = 1, ..., K_{l,l}].
pub fn eigenfunction_coeffs(l: u32, b: f64) -> Vec<f64> {
    let mut ks = Vec::with_capacity(l as usize + 1);
    ks.push(1.0f64);
    let lf = f64::from(l);
    for j in 1..=l {
        let jf = f64::from(j);
        let prev = *ks.last().unwrap();
        ks.push(prev * (lf - jf + 1.0) / (jf * (b + jf - 1.0) * 4.0));
    }
    ks
}
