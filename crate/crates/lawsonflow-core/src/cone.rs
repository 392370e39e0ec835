//! Cone geometry and the exponent/eigenvalue bookkeeping derived from it.
//!
//! The double cone over S^(p-1) x S^(q-1) intersects the profile quadrant
//! in the ray y = mu*x with mu = sqrt((q-1)/(p-1)); it is minimal exactly
//! because (p-1)*mu = (q-1)/mu. Profiles asymptotic to the ray decay like
//! r^alpha where alpha is the larger root of x(x-1) + (n-2)(x+1) = 0 with
//! n = p + q, and the second root alpha_hat controls the next-order
//! correction. The
//! discriminant n^2 - 10n + 17 is positive only for n >= 8, which is where
//! all of this analysis lives.

use crate::{Error, Result};
use alloc::format;

/// Default graph-region radius rho (outer end of the rotated-ray chart).
pub const DEFAULT_RHO: f64 = 0.05;
/// Default inner/intermediate matching parameter beta.
pub const DEFAULT_BETA: f64 = 20.0;
/// Default admissibility constant Lambda.
pub const DEFAULT_LAMBDA: f64 = 1.0e4;
/// Default intermediate/outer matching parameter R.
pub const DEFAULT_R: f64 = 10.0;
/// Default corner-rounding half-width for the outer cap.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default tip-decay exponent varsigma at n = 8 (must sit strictly below
/// (n-3+2*alpha)/(2(1-alpha)) = 1/6 there).
pub const DEFAULT_VARSIGMA_N8: f64 = 1.0 / 7.0;

/// Dimensions of the two sphere factors plus everything derived from them
/// that does not depend on a mode index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    /// Dimension of the first sphere factor (rotates the x-coordinate).
    pub p: u32,
    /// Dimension of the second sphere factor (rotates the y-coordinate).
    pub q: u32,
    /// Ambient dimension minus one: n = p + q.
    pub n: u32,
    /// Cone slope mu = sqrt((q-1)/(p-1)).
    pub mu: f64,
    /// Larger root of x(x-1) + (n-2)(x+1) = 0; lies in [-2, -1).
    pub alpha: f64,
    /// Smaller root of the same quadratic.
    pub alpha_hat: f64,
    /// Second-order decay exponent max(2*alpha - 1, alpha_hat); equals
    /// alpha_hat at n = 8 and 2*alpha - 1 for n >= 9.
    pub alpha_tilde: f64,
}

impl ConeParams {
    /// Validates (p, q) and computes slope and decay exponents.
    ///
    /// Requires p, q >= 3 (both sphere factors at least a 2-sphere) and
    /// p + q >= 8 (real roots). The quadratic is solved with the stable
    /// branch: the large-magnitude root directly, the small-magnitude one
    /// through the product of roots, so no cancellation occurs for large n.
    pub fn new(p: u32, q: u32) -> Result<Self> {
        if p < 3 || q < 3 {
            return Err(Error::DimensionError(format!(
                "need p >= 3 and q >= 3, got (p, q) = ({p}, {q})"
            )));
        }
        if p + q < 8 {
            return Err(Error::DimensionError(format!(
                "need n = p + q >= 8 for real decay exponents, got n = {}",
                p + q
            )));
        }
        if p > 10_000 || q > 10_000 {
            return Err(Error::DimensionError(format!(
                "dimensions out of supported range: (p, q) = ({p}, {q})"
            )));
        }
        let n = p + q;
        let nf = f64::from(n);
        let mu = libm::sqrt(f64::from(q - 1) / f64::from(p - 1));

        // x^2 + (n-3)x + (n-2) = 0; both roots negative. The sum branch
        // -(B + sqrt(D))/2 is exact for alpha_hat; alpha = C / alpha_hat.
        let b = nf - 3.0;
        let c = nf - 2.0;
        let disc = nf * nf - 10.0 * nf + 17.0;
        let alpha_hat = -0.5 * (b + libm::sqrt(disc));
        let alpha = c / alpha_hat;
        let alpha_tilde = (2.0 * alpha - 1.0).max(alpha_hat);

        Ok(ConeParams { p, q, n, mu, alpha, alpha_hat, alpha_tilde })
    }

    /// Offset b = alpha + (n-1)/2 of the confluent-hypergeometric family
    /// attached to this cone (second parameter of the Kummer functions).
    pub fn kummer_b(&self) -> f64 {
        self.alpha + 0.5 * (f64::from(self.n) - 1.0)
    }

    /// Eigenvalue of mode j on the weighted half-line:
    /// lambda_j = -(1 - alpha)/2 + j.
    pub fn lambda(&self, j: u32) -> f64 {
        -0.5 * (1.0 - self.alpha) + f64::from(j)
    }
}

/// Mode-indexed scheduling constants for a flow driven by mode `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralExponents {
    /// Driving mode index (l >= 2, so the mode decays).
    pub l: u32,
    /// Kummer offset b = alpha + (n-1)/2.
    pub b: f64,
    /// Decay rate of the driving mode, lambda_l = -(1-alpha)/2 + l > 0.
    pub lambda_l: f64,
    /// Tip-scale exponent sigma_l = lambda_l / (1 - alpha): the tip shrinks
    /// like (-t)^(1/2 + sigma_l).
    pub sigma_l: f64,
    /// Tip-relaxation exponent bound varsigma.
    pub varsigma: f64,
    /// Interior-convergence exponent kappa.
    pub kappa: f64,
    /// Tip-convergence exponent varrho.
    pub varrho: f64,
}

impl SpectralExponents {
    /// Derives the mode-l constants.
    ///
    /// `l` must be at least 2 (the first mode with positive decay rate for
    /// every admissible cone) and at most 8 (a policy cap: beyond that the
    /// packet degrees grow past what the quadrature rules are sized for).
    pub fn new(cone: &ConeParams, l: u32) -> Result<Self> {
        if !(2..=8).contains(&l) {
            return Err(Error::ParameterError(format!(
                "mode index l must lie in 2..=8, got {l}"
            )));
        }
        let alpha = cone.alpha;
        let n = f64::from(cone.n);
        let lambda_l = cone.lambda(l);
        let sigma_l = lambda_l / (1.0 - alpha);

        let varsigma = if cone.n == 8 {
            DEFAULT_VARSIGMA_N8
        } else {
            1.0f64.min((n - 3.0 + 2.0 * alpha) / (2.0 * (1.0 - alpha)))
        };
        let kappa = 0.5f64
            .min((n - 1.0 + 2.0 * alpha) / (6.0 * (1.0 - alpha)))
            .min(varsigma)
            .min(1.0 / (lambda_l + 1.0));
        let varrho = (kappa * (1.0 - alpha) / 2.0).min(0.2);

        Ok(SpectralExponents { l, b: cone.kummer_b(), lambda_l, sigma_l, varsigma, kappa, varrho })
    }
}

/// Which way [`rotate_chart`] turns the quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// Plane coordinates to ray-chart coordinates: the cone ray y = mu*x
    /// lands on the positive horizontal axis.
    ToRayChart,
    /// Ray-chart coordinates back to plane coordinates.
    FromRayChart,
}

/// Rotates a point of the profile quadrant by the angle that aligns the
/// cone ray with the horizontal axis (or back).
///
/// Forward: (x, y) -> ((x + mu*y, -mu*x + y)) / sqrt(1 + mu^2). The map is
/// orthogonal, so the inverse is its transpose.
pub fn rotate_chart(point: (f64, f64), mu: f64, direction: Rotation) -> (f64, f64) {
    let norm = libm::sqrt(1.0 + mu * mu);
    let (x, y) = point;
    match direction {
        Rotation::ToRayChart => ((x + mu * y) / norm, (-mu * x + y) / norm),
        Rotation::FromRayChart => ((x - mu * y) / norm, (mu * x + y) / norm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_residual(cone: &ConeParams, x: f64) -> f64 {
        let n = f64::from(cone.n);
        x * (x - 1.0) + (n - 2.0) * (x + 1.0)
    }

    #[test]
    fn four_four_exponents_are_integers() {
        let c = ConeParams::new(4, 4).unwrap();
        assert_eq!(c.n, 8);
        assert!((c.mu - 1.0).abs() < 1e-15);
        assert!((c.alpha + 2.0).abs() < 1e-14);
        assert!((c.alpha_hat + 3.0).abs() < 1e-14);
        // At n = 8 the max picks alpha_hat (= -3) over 2*alpha - 1 (= -5).
        assert!((c.alpha_tilde + 3.0).abs() < 1e-14);
        assert!((c.kummer_b() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn four_five_exponents_match_closed_form() {
        let c = ConeParams::new(4, 5).unwrap();
        // alpha = (3 - 9 + sqrt(8))/2 = -3 + sqrt(2)
        let sqrt2 = libm::sqrt(2.0);
        assert!((c.alpha - (-3.0 + sqrt2)).abs() < 1e-14);
        assert!((c.alpha_hat - (-3.0 - sqrt2)).abs() < 1e-14);
        // n >= 9 picks the 2*alpha - 1 branch.
        assert!((c.alpha_tilde - (2.0 * c.alpha - 1.0)).abs() < 1e-15);
        assert!((c.alpha_tilde - (-7.0 + 2.0 * sqrt2)).abs() < 1e-13);
    }

    #[test]
    fn rejects_dimensions_outside_regime() {
        assert!(matches!(ConeParams::new(2, 6), Err(Error::DimensionError(_))));
        assert!(matches!(ConeParams::new(6, 2), Err(Error::DimensionError(_))));
        assert!(matches!(ConeParams::new(3, 4), Err(Error::DimensionError(_))));
        assert!(matches!(ConeParams::new(4, 3), Err(Error::DimensionError(_))));
        assert!(ConeParams::new(3, 5).is_ok());
        assert!(ConeParams::new(5, 3).is_ok());
    }

    #[test]
    fn roots_satisfy_quadratic_and_vieta() {
        for p in 3..30u32 {
            for q in 3..30u32 {
                if p + q < 8 {
                    continue;
                }
                let c = ConeParams::new(p, q).unwrap();
                let n = f64::from(c.n);
                assert!(quadratic_residual(&c, c.alpha).abs() < 1e-11 * n * n);
                assert!(quadratic_residual(&c, c.alpha_hat).abs() < 1e-11 * n * n);
                // Vieta: sum 3 - n, product n - 2.
                assert!((c.alpha + c.alpha_hat - (3.0 - n)).abs() < 1e-10);
                assert!((c.alpha * c.alpha_hat - (n - 2.0)).abs() < 1e-10);
                assert!((-2.0..-1.0).contains(&c.alpha));
                // Minimality of the ray: (p-1)*mu = (q-1)/mu.
                let lhs = f64::from(p - 1) * c.mu;
                let rhs = f64::from(q - 1) / c.mu;
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stable_branch_survives_large_dimensions() {
        let c = ConeParams::new(5_000, 5_000).unwrap();
        let n = f64::from(c.n);
        // Direct -B + sqrt(D) here would cancel ~7 digits; the product
        // branch keeps the small root at full precision.
        let res = quadratic_residual(&c, c.alpha);
        assert!(res.abs() < 1e-9, "residual {res:e}");
        assert!((c.alpha * c.alpha_hat - (n - 2.0)).abs() / (n - 2.0) < 1e-15);
    }

    #[test]
    fn alpha_tilde_branch_splits_at_n_nine() {
        for (p, q) in [(4u32, 4u32), (3, 5)] {
            let c = ConeParams::new(p, q).unwrap();
            assert_eq!(c.n, 8);
            assert_eq!(c.alpha_tilde, c.alpha_hat);
        }
        for n in 9..40u32 {
            let c = ConeParams::new(4, n - 4).unwrap();
            assert!(2.0 * c.alpha - 1.0 > c.alpha_hat);
            assert_eq!(c.alpha_tilde, 2.0 * c.alpha - 1.0);
        }
    }

    #[test]
    fn eigenvalue_ladder_and_mode_constants() {
        let c = ConeParams::new(4, 4).unwrap();
        assert!((c.lambda(0) + 1.5).abs() < 1e-15);
        assert!((c.lambda(1) + 0.5).abs() < 1e-15);
        assert!((c.lambda(2) - 0.5).abs() < 1e-15);
        assert!((c.lambda(4) - 2.5).abs() < 1e-15);
        // lambda_0 < lambda_1 < 0 < lambda_2 for every admissible cone.
        for (p, q) in [(4, 4), (4, 5), (5, 5), (3, 5), (6, 9)] {
            let c = ConeParams::new(p, q).unwrap();
            assert!(c.lambda(0) < c.lambda(1));
            assert!(c.lambda(1) < 0.0);
            assert!(c.lambda(2) > 0.0);
        }

        let e4 = SpectralExponents::new(&c, 4).unwrap();
        assert!((e4.lambda_l - 2.5).abs() < 1e-15);
        assert!((e4.sigma_l - 2.5 / 3.0).abs() < 1e-15);
        // kappa = min(1/2, 3/18, 1/7, 2/7) = 1/7; varrho = min(3/14, 1/5).
        assert!((e4.varsigma - 1.0 / 7.0).abs() < 1e-15);
        assert!((e4.kappa - 1.0 / 7.0).abs() < 1e-15);
        assert!((e4.varrho - 0.2).abs() < 1e-15);

        let e2 = SpectralExponents::new(&c, 2).unwrap();
        assert!((e2.lambda_l - 0.5).abs() < 1e-15);
        assert!((e2.sigma_l - 1.0 / 6.0).abs() < 1e-15);

        assert!(SpectralExponents::new(&c, 1).is_err());
        assert!(SpectralExponents::new(&c, 9).is_err());
    }

    #[test]
    fn varsigma_follows_dimension() {
        let c9 = ConeParams::new(4, 5).unwrap();
        let e = SpectralExponents::new(&c9, 3).unwrap();
        let expect = (9.0 - 3.0 + 2.0 * c9.alpha) / (2.0 * (1.0 - c9.alpha));
        assert!(expect < 1.0);
        assert!((e.varsigma - expect).abs() < 1e-15);
        // n = 8 sits strictly below its sup bound 1/6.
        let c8 = ConeParams::new(4, 4).unwrap();
        let e8 = SpectralExponents::new(&c8, 4).unwrap();
        assert!(e8.varsigma < 1.0 / 6.0);
    }

    #[test]
    fn rotation_sends_ray_to_axis_and_inverts() {
        let mu = libm::sqrt(2.0);
        for i in 1..20 {
            let x = 0.3 * f64::from(i);
            let (u, v) = rotate_chart((x, mu * x), mu, Rotation::ToRayChart);
            assert!((v).abs() < 1e-14 * (1.0 + x));
            assert!((u - x * libm::sqrt(1.0 + mu * mu)).abs() < 1e-13 * (1.0 + x));
            let back = rotate_chart((u, v), mu, Rotation::FromRayChart);
            assert!((back.0 - x).abs() < 1e-13 * (1.0 + x));
            assert!((back.1 - mu * x).abs() < 1e-13 * (1.0 + x));
        }
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rotation_roundtrip_is_identity(
            x in -10.0f64..10.0,
            y in -10.0f64..10.0,
            mu in 0.2f64..5.0,
        ) {
            let fwd = rotate_chart((x, y), mu, Rotation::ToRayChart);
            let back = rotate_chart(fwd, mu, Rotation::FromRayChart);
            let scale = 1.0 + x.abs() + y.abs();
            prop_assert!((back.0 - x).abs() < 1e-13 * scale);
            prop_assert!((back.1 - y).abs() < 1e-13 * scale);
            // Orthogonality: lengths preserved.
            let r0 = libm::hypot(x, y);
            let r1 = libm::hypot(fwd.0, fwd.1);
            prop_assert!((r0 - r1).abs() < 1e-13 * scale);
        }
    }
}
