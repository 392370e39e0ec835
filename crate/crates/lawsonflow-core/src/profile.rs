//! The tip profile: the rotationally invariant minimal hypersurface
//! asymptotic to the cone from the smooth side, its scaling family, and
//! the chart rotations and reductions built on top of it.
//!
//! The profile curve solves, in the first quadrant with arclength-free
//! graph coordinates (r, psi_hat),
//!
//!   psi_hat'' / (1 + psi_hat'^2) + (p-1) psi_hat'/r - (q-1)/psi_hat = 0,
//!
//! with psi_hat(0) = c0 > 0, psi_hat'(0) = 0, and approaches the ray
//! psi_hat = mu r at rate r^alpha. Everything downstream needs the excess
//! h = psi_hat - mu r far more accurately than psi_hat itself, so h is the
//! integrated state: using (p-1) mu^2 = q-1 the right-hand side collapses
//! to an expression that vanishes identically on the cone,
//!
//!   h'' = -(1 + (mu + h')^2) (q-1) (mu h + mu r h' + h h')
//!         / (mu^2 r (mu r + h)),
//!
//! which evaluates the small far-field residual without catastrophic
//! cancellation.

use crate::cone::ConeParams;
use crate::numerics::{fit_line, integrate_dp54, SampledFn};
use crate::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Record-mesh resolution: geometric spacing, this many points per decade.
const POINTS_PER_DECADE: f64 = 64.0;
/// Start radius as a fraction of the tip height; the two-term interior
/// series carries the solution across [0, r0] with O(r0^6) error.
const START_FRACTION: f64 = 1e-3;

/// A solved tip profile on a geometric mesh from the axis to the far field.
#[derive(Debug, Clone)]
pub struct ProfileSolution {
    pub cone: ConeParams,
    /// Radii; mesh[0] = 0 exactly.
    pub mesh: Vec<f64>,
    /// Profile height psi_hat at each radius.
    pub psi_hat: Vec<f64>,
    /// First derivative d psi_hat / dr (zero on the axis).
    pub d1: Vec<f64>,
    /// Second derivative, evaluated from the equation, not by differencing.
    pub d2: Vec<f64>,
    /// Cone excess h = psi_hat - mu r (positive, decaying like r^alpha).
    pub excess: Vec<f64>,
    /// psi_hat(0) = c0.
    pub tip_height: f64,
    /// Asymptotic coefficient: (psi_hat - mu r) / r^alpha ->
    /// k (1 + mu^2)^((alpha+1)/2), Richardson-extrapolated over the last
    /// three dyadic checkpoints of the mesh.
    pub k: f64,
}

/// The same profile rewritten over the rotated coordinate along the cone
/// ray: the ray becomes the horizontal axis and the profile the graph of
/// psi(x) = (psi_hat - mu r)/sqrt(1 + mu^2), with psi / x^alpha -> k.
#[derive(Debug, Clone)]
pub struct RotatedProfile {
    pub cone: ConeParams,
    /// Rotated abscissa; starts at mu c0 / sqrt(1 + mu^2) > 0.
    pub x: Vec<f64>,
    pub psi: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Same asymptotic coefficient as the parent solution.
    pub k: f64,
}

/// Trajectory of the scale-invariant reduction W(s) = psi(e^s)/e^s,
/// Z = W' = psi'(e^s) - W on a uniform s-grid.
#[derive(Debug, Clone)]
pub struct AutonomousTrack {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

fn interior_series(cone: &ConeParams, c0: f64) -> (f64, f64) {
    // psi_hat = c0 + A r^2 + B r^4 + O(r^6) with
    // A = (q-1)/(2 p c0), B = A^2 (4 A - p/c0) / (2 (p + 2)).
    let p = f64::from(cone.p);
    let q = f64::from(cone.q);
    let a = (q - 1.0) / (2.0 * p * c0);
    let b = a * a * (4.0 * a - p / c0) / (2.0 * (p + 2.0));
    (a, b)
}

fn excess_rhs(cone: &ConeParams, r: f64, h: f64, hp: f64) -> f64 {
    let mu = cone.mu;
    let q = f64::from(cone.q);
    let slope = mu + hp;
    let numer = mu * h + mu * r * hp + h * hp;
    -(1.0 + slope * slope) * (q - 1.0) * numer / (mu * mu * r * (mu * r + h))
}

/// Extract the asymptotic coefficient from excess samples at the three
/// dyadic checkpoints r_max/4, r_max/2, r_max (which the solver mesh
/// contains exactly), removing the leading correction by Richardson
/// extrapolation with an empirically estimated correction exponent.
pub fn extract_k(cone: &ConeParams, mesh: &[f64], excess: &[f64]) -> Result<f64> {
    let r_max = *mesh.last().ok_or_else(|| {
        Error::SpanTooShort("empty mesh in coefficient extraction".into())
    })?;
    let locate = |target: f64| -> Result<usize> {
        mesh.iter()
            .position(|&r| (r - target).abs() <= 1e-9 * target)
            .ok_or_else(|| {
                Error::SpanTooShort(format!(
                    "mesh lacks dyadic checkpoint {target} needed for extrapolation"
                ))
            })
    };
    let i1 = locate(0.25 * r_max)?;
    let i2 = locate(0.5 * r_max)?;
    let i4 = mesh.len() - 1;
    let geom = libm::pow(1.0 + cone.mu * cone.mu, -0.5 * (cone.alpha + 1.0));
    let kk = |i: usize| excess[i] * libm::pow(mesh[i], -cone.alpha) * geom;
    let (k1, k2, k4) = (kk(i1), kk(i2), kk(i4));
    let d21 = k2 - k1;
    let d42 = k4 - k2;
    if d21.abs() <= 1e-13 * k4.abs() {
        return Ok(k4); // already converged to round-off
    }
    let ratio = d42 / d21; // = 2^gamma for a single-power correction
    if !(ratio > 1e-6 && ratio < 0.95) {
        return Ok(k4); // correction not a clean power; trust the far point
    }
    Ok(k4 + d42 * ratio / (1.0 - ratio))
}

/// Solve the tip profile with tip height `c0` out to radius `r_max`.
///
/// The mesh is geometric (64 points per decade) from r0 = c0/1000 to
/// `r_max`, with the exact dyadic checkpoints r_max/4 and r_max/2 merged
/// in for the coefficient extrapolation, and r = 0 prepended. `r_max`
/// must give the excess room to settle: at least 50 (c0 + 1).
pub fn solve_tip_profile(cone: &ConeParams, c0: f64, r_max: f64) -> Result<ProfileSolution> {
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::ParameterError(format!(
            "tip height must be positive and finite, got {c0}"
        )));
    }
    if !(r_max >= 50.0 * (c0 + 1.0)) {
        return Err(Error::SpanTooShort(format!(
            "r_max = {r_max} too small to reach the asymptotic regime for c0 = {c0}; need >= {}",
            50.0 * (c0 + 1.0)
        )));
    }
    let mu = cone.mu;
    let r0 = START_FRACTION * c0;

    let mut mesh = Vec::new();
    let growth = libm::pow(10.0, 1.0 / POINTS_PER_DECADE);
    let mut r = r0;
    while r < r_max * (1.0 - 1e-12) {
        mesh.push(r);
        r *= growth;
    }
    mesh.push(0.25 * r_max);
    mesh.push(0.5 * r_max);
    mesh.push(r_max);
    mesh.sort_by(f64::total_cmp);
    mesh.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());

    let (a2, a4) = interior_series(cone, c0);
    let h0 = c0 + a2 * r0 * r0 + a4 * r0 * r0 * r0 * r0 - mu * r0;
    let hp0 = 2.0 * a2 * r0 + 4.0 * a4 * r0 * r0 * r0 - mu;

    let blowup_cap = 10.0 * (c0 + 1.0);
    let states = integrate_dp54(
        |r, y: &[f64; 2]| [y[1], excess_rhs(cone, r, y[0], y[1])],
        r0,
        [h0, hp0],
        &mesh,
        1e-12,
        1e-14,
        |r, y: &[f64; 2]| {
            if y[0] <= 0.0 {
                return Err(Error::ConeBreach(format!(
                    "profile crossed the cone at r = {r}"
                )));
            }
            if y[0] > blowup_cap || y[1].abs() > blowup_cap {
                return Err(Error::IntegrationBlowup(format!(
                    "excess left the trust region at r = {r}"
                )));
            }
            Ok(())
        },
    )?;

    let m = mesh.len() + 1;
    let mut full_mesh = Vec::with_capacity(m);
    let mut psi_hat = Vec::with_capacity(m);
    let mut d1 = Vec::with_capacity(m);
    let mut d2 = Vec::with_capacity(m);
    let mut excess = Vec::with_capacity(m);
    full_mesh.push(0.0);
    psi_hat.push(c0);
    d1.push(0.0);
    d2.push((f64::from(cone.q) - 1.0) / (f64::from(cone.p) * c0));
    excess.push(c0);
    for (i, y) in states.iter().enumerate() {
        let r = mesh[i];
        full_mesh.push(r);
        psi_hat.push(mu * r + y[0]);
        d1.push(mu + y[1]);
        d2.push(excess_rhs(cone, r, y[0], y[1]));
        excess.push(y[0]);
    }

    let k = extract_k(cone, &full_mesh, &excess)?;
    Ok(ProfileSolution {
        cone: *cone,
        mesh: full_mesh,
        psi_hat,
        d1,
        d2,
        excess,
        tip_height: c0,
        k,
    })
}

impl ProfileSolution {
    /// The member of the scaling family with asymptotic coefficient
    /// `factor * self.k`: r and psi_hat stretch by factor^(1/(1-alpha)),
    /// slopes are invariant, curvatures shrink by the same stretch.
    pub fn scaled(&self, factor: f64) -> Result<ProfileSolution> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::ParameterError(format!(
                "scaling factor must be positive, got {factor}"
            )));
        }
        let lam = libm::pow(factor, 1.0 / (1.0 - self.cone.alpha));
        Ok(ProfileSolution {
            cone: self.cone,
            mesh: self.mesh.iter().map(|r| lam * r).collect(),
            psi_hat: self.psi_hat.iter().map(|v| lam * v).collect(),
            d1: self.d1.clone(),
            d2: self.d2.iter().map(|v| v / lam).collect(),
            excess: self.excess.iter().map(|v| lam * v).collect(),
            tip_height: lam * self.tip_height,
            k: factor * self.k,
        })
    }

    /// Derivative of the scaling family with respect to its coefficient,
    /// evaluated on this member's mesh:
    /// (psi_hat - r psi_hat') / (k (1 - alpha)); strictly positive, which
    /// is what makes coefficient-shooting monotone.
    pub fn k_derivative(&self) -> Vec<f64> {
        let denom = self.k * (1.0 - self.cone.alpha);
        self.mesh
            .iter()
            .zip(self.psi_hat.iter().zip(self.d1.iter()))
            .map(|(&r, (&v, &vp))| (v - r * vp) / denom)
            .collect()
    }

    /// Cubic-Hermite view of psi_hat(r) with the solver's exact slopes.
    pub fn sampled(&self) -> Result<SampledFn> {
        SampledFn::with_slopes(self.mesh.clone(), self.psi_hat.clone(), self.d1.clone())
    }

    /// Cubic-Hermite view of the excess h(r) = psi_hat - mu r.
    pub fn sampled_excess(&self) -> Result<SampledFn> {
        let slopes = self.d1.iter().map(|&v| v - self.cone.mu).collect();
        SampledFn::with_slopes(self.mesh.clone(), self.excess.clone(), slopes)
    }
}

/// Rescale so the asymptotic coefficient is exactly 1.
pub fn normalize_profile(sol: &ProfileSolution) -> Result<ProfileSolution> {
    sol.scaled(1.0 / sol.k)
}

/// Rotate the profile graph so the cone ray becomes the horizontal axis.
///
/// The map is the orthogonal rotation by -arctan(mu); for the tip profile
/// the Jacobian factor 1 + mu psi_hat' is >= 1, so the rotated curve is
/// always a graph. A fold (non-increasing rotated abscissa) is reported as
/// an error for inputs that are not actual profile solutions.
pub fn rotated_profile(sol: &ProfileSolution) -> Result<RotatedProfile> {
    let mu = sol.cone.mu;
    let root = libm::sqrt(1.0 + mu * mu);
    let m = sol.mesh.len();
    let mut x = Vec::with_capacity(m);
    let mut psi = Vec::with_capacity(m);
    let mut d1 = Vec::with_capacity(m);
    let mut d2 = Vec::with_capacity(m);
    for i in 0..m {
        let jac = 1.0 + mu * sol.d1[i];
        if jac <= 0.0 {
            return Err(Error::ChartFold(format!(
                "rotated chart folds at r = {}: 1 + mu psi_hat' = {jac}",
                sol.mesh[i]
            )));
        }
        x.push((sol.mesh[i] + mu * sol.psi_hat[i]) / root);
        psi.push(sol.excess[i] / root);
        d1.push((sol.d1[i] - mu) / jac);
        d2.push(sol.d2[i] * root * root * root / (jac * jac * jac));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::ChartFold(
            "rotated abscissa failed to increase monotonically".into(),
        ));
    }
    Ok(RotatedProfile {
        cone: sol.cone,
        x,
        psi,
        d1,
        d2,
        k: sol.k,
    })
}

impl RotatedProfile {
    /// Cubic-Hermite view of psi(x) with exact slopes.
    pub fn sampled(&self) -> Result<SampledFn> {
        SampledFn::with_slopes(self.x.clone(), self.psi.clone(), self.d1.clone())
    }

    /// Scaling-family derivative on this chart's mesh:
    /// (psi - x psi') / (k (1 - alpha)), the rotated twin of
    /// [`ProfileSolution::k_derivative`].
    pub fn k_derivative_on_mesh(&self) -> Vec<f64> {
        let denom = self.k * (1.0 - self.cone.alpha);
        self.x
            .iter()
            .zip(self.psi.iter().zip(self.d1.iter()))
            .map(|(&x, (&v, &vp))| (v - x * vp) / denom)
            .collect()
    }
}

/// Log-log fit of the cone excess over a radius window: returns
/// (slope, amplitude, slope standard error), where
/// excess ~ amplitude * r^slope. For a converged profile the slope is
/// alpha and the amplitude k (1 + mu^2)^((alpha+1)/2).
pub fn decay_rate_fit(
    sol: &ProfileSolution,
    window: (f64, f64),
) -> Result<(f64, f64, f64)> {
    let (lo, hi) = window;
    let r_max = *sol.mesh.last().unwrap();
    if !(lo > 0.0 && hi > lo) || hi > r_max * (1.0 + 1e-12) {
        return Err(Error::WindowUncovered(format!(
            "fit window [{lo}, {hi}] not inside (0, {r_max}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &r) in sol.mesh.iter().enumerate() {
        if r >= lo && r <= hi && sol.excess[i] > 0.0 {
            xs.push(libm::log(r));
            ys.push(libm::log(sol.excess[i]));
        }
    }
    if xs.len() < 8 {
        return Err(Error::SpanTooShort(format!(
            "only {} mesh points in fit window [{lo}, {hi}]",
            xs.len()
        )));
    }
    let (slope, intercept, stderr) = fit_line(&xs, &ys)?;
    Ok((slope, libm::exp(intercept), stderr))
}

/// Right-hand side of the scale-invariant reduction: for W = psi(x)/x,
/// Z = x dW/dx + W - W = psi' - W, the flow in s = ln x is
///
///   W' = Z,
///   Z' = -Z - (n-2) (1 + (W+Z)^2) [(1 + (1/mu - mu) W)(W + Z) + W]
///        / ((1 - mu W)(1 + W/mu)).
///
/// The linearization at the cone equilibrium (0,0) has eigenvalues
/// alpha - 1 and alpha_hat - 1.
pub fn autonomous_rhs(cone: &ConeParams, w: f64, z: f64) -> Result<(f64, f64)> {
    let mu = cone.mu;
    let f1 = 1.0 - mu * w;
    let f2 = 1.0 + w / mu;
    if f1 <= 0.0 || f2 <= 0.0 {
        return Err(Error::DenominatorBreach(format!(
            "reduction leaves the sector: (1 - mu W, 1 + W/mu) = ({f1}, {f2})"
        )));
    }
    let n2 = f64::from(cone.n) - 2.0;
    let slope = w + z;
    let bracket = (1.0 + (1.0 / mu - mu) * w) * slope + w;
    let zp = -z - n2 * (1.0 + slope * slope) * bracket / (f1 * f2);
    Ok((z, zp))
}

/// Sample the reduction along a rotated profile on a uniform s-grid.
pub fn autonomous_reduction(
    rp: &RotatedProfile,
    s_lo: f64,
    s_hi: f64,
    steps: usize,
) -> Result<AutonomousTrack> {
    if steps < 8 {
        return Err(Error::ParameterError(format!(
            "reduction needs >= 8 samples, got {steps}"
        )));
    }
    if !(s_hi > s_lo) {
        return Err(Error::ParameterError(format!(
            "empty s-range [{s_lo}, {s_hi}]"
        )));
    }
    let graph = rp.sampled()?;
    let (x_lo, x_hi) = graph.domain();
    if libm::exp(s_lo) < x_lo * (1.0 - 1e-12) || libm::exp(s_hi) > x_hi * (1.0 + 1e-12) {
        return Err(Error::WindowUncovered(format!(
            "s-range maps to [{}, {}], outside the chart [{x_lo}, {x_hi}]",
            libm::exp(s_lo),
            libm::exp(s_hi)
        )));
    }
    let mut s = Vec::with_capacity(steps);
    let mut w = Vec::with_capacity(steps);
    let mut z = Vec::with_capacity(steps);
    let ds = (s_hi - s_lo) / (steps as f64 - 1.0);
    for i in 0..steps {
        let si = s_lo + ds * i as f64;
        let x = libm::exp(si).clamp(x_lo, x_hi);
        let (v, vp) = graph.eval_with_deriv(x);
        s.push(si);
        w.push(v / x);
        z.push(vp - v / x);
    }
    Ok(AutonomousTrack { s, w, z })
}
