//! Assembly of the initial profile curve: a dilated minimal-surface core at
//! the tip, a low-mode eigenfunction packet in the intermediate band, smooth
//! cutoffs joining the two, a straight cone segment, and a spherical cap
//! closing the curve on the axis — plus the weighted-derivative
//! admissibility check that the evolution relies on.
//!
//! In the rotated chart the curve is
//!
//!   u(x) = lam * psi_k0(x / lam) * (1 - eta((z - beta/2)/(beta/2)))
//!        + packet(x) * eta((z - beta/2)/(beta/2)) * eta((2 rho - x)/rho),
//!
//! with z = x / lam, lam = (-t0)^(1/2 + sigma_l), and k0 = 1 + sum(a). The
//! packet is the time-t0 snapshot of the driving mode plus its free lower
//! modes; its x^alpha coefficient matches the far field of the scaled
//! profile exactly, which is what makes the blend band harmless.

use crate::cone::{ConeParams, SpectralExponents};
use crate::numerics::SampledFn;
use crate::profile::{rotated_profile, ProfileSolution};
use crate::specfn::eigenfunction_coeffs;
use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Sample density of the rotated chart (geometric spacing).
const CHART_POINTS_PER_DECADE: f64 = 96.0;
/// Nodes across the cap's corner-rounding band (quintic blend).
const BLEND_POINTS: usize = 65;
/// Nodes along the spherical arc, uniform in circle angle so the spacing
/// grades like sqrt(2 - x) toward the vertical-tangent end.
const ARC_POINTS: usize = 129;
/// Dense audit grid for the a-posteriori concavity check of the blend.
const BLEND_AUDIT_POINTS: usize = 2001;

/// Default intermediate-region outer radius.
pub const DEFAULT_RHO: f64 = 0.05;
/// Default inner cutoff scale (in self-similar units).
pub const DEFAULT_BETA: f64 = 20.0;
/// Default admissibility weight constant.
pub const DEFAULT_LAMBDA_ADM: f64 = 1e4;
/// Default type-II comparison window radius.
pub const DEFAULT_R_WINDOW: f64 = 10.0;
/// Default corner-rounding half-width of the outer cap. The ray meets the
/// radius-2 circle at a right angle, and the quintic rounds that corner
/// concavely at every accepted width: to leading order in delta its scaled
/// curvature is -6 (mu + 1/mu) w xi (1 - xi) <= 0.
pub const DEFAULT_DELTA: f64 = 0.05;

fn bump(x: f64) -> f64 {
    if x > 0.0 {
        libm::exp(-1.0 / x)
    } else {
        0.0
    }
}

fn bump_d1(x: f64) -> f64 {
    if x > 0.0 {
        bump(x) / (x * x)
    } else {
        0.0
    }
}

fn bump_d2(x: f64) -> f64 {
    if x > 0.0 {
        bump(x) * (1.0 / (x * x) - 2.0 / x) / (x * x)
    } else {
        0.0
    }
}

/// The smooth transition: 0 for x <= 0, 1 for x >= 1, realized as the
/// symmetric bump quotient g(x) / (g(x) + g(1-x)) with g(x) = exp(-1/x).
/// All derivatives vanish at both plateau edges, and
/// eta(x) + eta(1-x) = 1 by construction.
pub fn cutoff_eta(x: f64) -> f64 {
    let g = bump(x);
    let h = bump(1.0 - x);
    let d = g + h;
    if d == 0.0 {
        // Unreachable for finite x (one of the two is positive), but a NaN
        // input lands here and should propagate as a quiet zero plateau.
        return if x >= 1.0 { 1.0 } else { 0.0 };
    }
    g / d
}

/// First derivative of [`cutoff_eta`], in closed form.
pub fn cutoff_eta_d1(x: f64) -> f64 {
    let g = bump(x);
    let h = bump(1.0 - x);
    let gp = bump_d1(x);
    let hp = bump_d1(1.0 - x);
    let d = g + h;
    if d == 0.0 {
        return 0.0;
    }
    (gp * h + g * hp) / (d * d)
}

/// Second derivative of [`cutoff_eta`], in closed form.
pub fn cutoff_eta_d2(x: f64) -> f64 {
    let g = bump(x);
    let h = bump(1.0 - x);
    let gp = bump_d1(x);
    let hp = bump_d1(1.0 - x);
    let gpp = bump_d2(x);
    let hpp = bump_d2(1.0 - x);
    let d = g + h;
    if d == 0.0 {
        return 0.0;
    }
    // eta' = n / d^2 with n = g'h + g h~' where h~'(x) = -h'(1-x); the sign
    // conventions below keep everything in terms of the evaluated bumps.
    let n = gp * h + g * hp;
    let np = gpp * h - g * hpp;
    let dp = gp - hp;
    (np * d - 2.0 * n * dp) / (d * d * d)
}

/// The intermediate-band perturbation: the time-t0 snapshot of the driving
/// mode l (unit amplitude) plus the l free lower modes, stored and
/// evaluated in the polynomial form
///
///   packet(x) = sum_{m=0}^{l} A_m (-t0)^{l-m} x^{alpha+2m},
///   A_m = (-1)^m sum_{j=m}^{l} K_{j,m} a_j,   a_l = 1,  K_{j,0} = 1,
///
/// which is exactly (-t0)^{1/2+lambda_l} (phi_l(x/sqrt(-t0))/c_l
/// + sum_{j<l} a_j phi_j(x/sqrt(-t0))/c_j) but free of the huge
/// intermediate powers that the eigenfunction route would produce.
#[derive(Debug, Clone)]
pub struct LowModePacket {
    alpha: f64,
    l: u32,
    t0: f64,
    coeffs: Vec<f64>,
}

impl LowModePacket {
    pub fn new(
        cone: &ConeParams,
        exps: &SpectralExponents,
        a: &[f64],
        t0: f64,
    ) -> Result<Self> {
        if a.len() != exps.l as usize {
            return Err(Error::DimensionError(format!(
                "mode l = {} needs {} free amplitudes, got {}",
                exps.l,
                exps.l,
                a.len()
            )));
        }
        if !(t0 < 0.0) || !t0.is_finite() {
            return Err(Error::DomainError(format!(
                "initial time must be finite and negative, got {t0}"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("amplitudes must be finite".into()));
        }
        let l = exps.l as usize;
        let mut acc = vec![0.0f64; l + 1];
        for j in 0..=l {
            let aj = if j == l { 1.0 } else { a[j] };
            let ks = eigenfunction_coeffs(j as u32, exps.b);
            for (m, &k) in ks.iter().enumerate() {
                acc[m] += k * aj;
            }
        }
        for (m, c) in acc.iter_mut().enumerate() {
            if m % 2 == 1 {
                *c = -*c;
            }
        }
        Ok(LowModePacket { alpha: cone.alpha, l: exps.l, t0, coeffs: acc })
    }

    /// The signed coefficients A_0..A_l of the polynomial form.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// (value, d/dx, d^2/dx^2) at x > 0 in one pass.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let tau = -self.t0;
        let x2 = x * x;
        let mut pw = libm::pow(x, self.alpha);
        let mut tp = libm::pow(tau, f64::from(self.l));
        let (mut f, mut f1, mut f2) = (0.0f64, 0.0f64, 0.0f64);
        for (m, &am) in self.coeffs.iter().enumerate() {
            let e = self.alpha + 2.0 * m as f64;
            let c = am * tp;
            f += c * pw;
            f1 += c * e * pw;
            f2 += c * e * (e - 1.0) * pw;
            pw *= x2;
            tp /= tau;
        }
        (f, f1 / x, f2 / x2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_all(x).0
    }
}

/// Packet value at a single point; see [`LowModePacket`] for the bulk API.
pub fn low_mode_packet(
    cone: &ConeParams,
    exps: &SpectralExponents,
    a: &[f64],
    t0: f64,
    x: f64,
) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::DomainError(format!(
            "packet is defined for x > 0, got {x}"
        )));
    }
    Ok(LowModePacket::new(cone, exps, a, t0)?.eval(x))
}

/// One chart of the assembled curve: abscissa, graph value, and the first
/// two derivatives, all analytic (no differencing of the stored values).
#[derive(Debug, Clone)]
pub struct ChartSamples {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl ChartSamples {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Cubic Hermite interpolant of the graph value.
    pub fn interpolant(&self) -> Result<SampledFn> {
        SampledFn::with_slopes(self.x.clone(), self.v.clone(), self.d1.clone())
    }
}

/// Scale factor between rotated-chart x and the self-similar variable z.
fn dilation(exps: &SpectralExponents, t0: f64) -> f64 {
    libm::pow(-t0, 0.5 + exps.sigma_l)
}

/// The initial time that puts the inner cutoff completion at rho/4:
/// beta * (-t0)^(1/2+sigma_l) = rho/4.
pub fn default_t0(exps: &SpectralExponents, rho: f64, beta: f64) -> f64 {
    -libm::pow(rho / (4.0 * beta), 1.0 / (0.5 + exps.sigma_l))
}

/// Builds the rotated-chart graph u(x, t0) on [x_tip, 1]: scaled minimal
/// profile inside the inner cutoff band, the low-mode packet between the
/// bands, and exactly zero beyond 2 rho. `profile` may carry any far-field
/// amplitude; it is rescaled to k0 = 1 + sum(a) internally (an exact family
/// map, no re-solve).
pub fn build_initial_u(
    cone: &ConeParams,
    exps: &SpectralExponents,
    a: &[f64],
    t0: f64,
    rho: f64,
    beta: f64,
    profile: &ProfileSolution,
) -> Result<ChartSamples> {
    if profile.cone.p != cone.p || profile.cone.q != cone.q {
        return Err(Error::ParameterError(format!(
            "profile was solved for ({}, {}), not ({}, {})",
            profile.cone.p, profile.cone.q, cone.p, cone.q
        )));
    }
    if !(t0 < 0.0) || !t0.is_finite() {
        return Err(Error::DomainError(format!(
            "initial time must be finite and negative, got {t0}"
        )));
    }
    if !(rho > 0.0 && beta > 0.0) {
        return Err(Error::ParameterError(format!(
            "rho and beta must be positive, got rho = {rho}, beta = {beta}"
        )));
    }
    if 2.0 * rho >= 1.0 {
        return Err(Error::ParameterClash(format!(
            "outer cutoff band must finish inside the chart: 2 rho = {} >= 1",
            2.0 * rho
        )));
    }
    let a_norm = libm::sqrt(a.iter().map(|v| v * v).sum());
    let a_bound = libm::pow(beta, cone.alpha_tilde - cone.alpha);
    if !(a_norm < a_bound) {
        return Err(Error::ConstraintViolation(format!(
            "|a| < beta^(alpha_tilde - alpha) violated: {a_norm:e} >= {a_bound:e}"
        )));
    }
    let lam = dilation(exps, t0);
    if beta * lam >= rho {
        return Err(Error::ParameterClash(format!(
            "region boundaries invert: beta*(-t0)^(1/2+sigma_l) = {:e} >= rho = {rho:e}",
            beta * lam
        )));
    }
    let k0 = 1.0 + a.iter().sum::<f64>();
    if !(k0 > 0.0) {
        return Err(Error::ParameterError(format!(
            "far-field amplitude k0 = 1 + sum(a) = {k0} must be positive"
        )));
    }

    let prof_k0 = profile.scaled(k0 / profile.k)?;
    let rot = rotated_profile(&prof_k0)?;
    let z_hi = *rot.x.last().unwrap();
    if z_hi < beta {
        return Err(Error::SpanTooShort(format!(
            "rotated profile reaches z = {z_hi:.2} < beta = {beta}; solve the \
             profile to a larger radius"
        )));
    }
    let z_lo = rot.x[0];
    let psi_val = SampledFn::with_slopes(rot.x.clone(), rot.psi.clone(), rot.d1.clone())?;
    let psi_d1 = SampledFn::with_slopes(rot.x.clone(), rot.d1.clone(), rot.d2.clone())?;
    let psi_d2 = SampledFn::new(rot.x.clone(), rot.d2.clone())?;

    let packet = LowModePacket::new(cone, exps, a, t0)?;

    let x_lo = z_lo * lam;
    let decades = libm::log10(1.0 / x_lo);
    let count = (decades * CHART_POINTS_PER_DECADE) as usize + 2;
    let step = libm::pow(1.0 / x_lo, 1.0 / (count - 1) as f64);

    let mut xs = Vec::with_capacity(count);
    let mut vs = Vec::with_capacity(count);
    let mut d1s = Vec::with_capacity(count);
    let mut d2s = Vec::with_capacity(count);
    let mut x = x_lo;
    for i in 0..count {
        if i == count - 1 {
            x = 1.0;
        }
        // Inner cutoff runs over z in [beta/2, beta] in self-similar units.
        let z = (x / lam).max(z_lo);
        let arg1 = (z - 0.5 * beta) / (0.5 * beta);
        let darg1 = 2.0 / (beta * lam);
        let e1 = cutoff_eta(arg1);
        let e1p = cutoff_eta_d1(arg1) * darg1;
        let e1pp = cutoff_eta_d2(arg1) * darg1 * darg1;
        // Outer cutoff shuts the packet down over x in [rho, 2 rho].
        let arg2 = (2.0 * rho - x) / rho;
        let e2 = cutoff_eta(arg2);
        let e2p = -cutoff_eta_d1(arg2) / rho;
        let e2pp = cutoff_eta_d2(arg2) / (rho * rho);

        let (up, up1, up2) = if e1 < 1.0 {
            let p0 = psi_val.eval(z);
            let p1 = psi_d1.eval(z);
            let p2 = psi_d2.eval(z);
            (lam * p0, p1, p2 / lam)
        } else {
            (0.0, 0.0, 0.0)
        };
        let (pk, pk1, pk2) = if e1 > 0.0 && e2 > 0.0 {
            packet.eval_all(x)
        } else {
            (0.0, 0.0, 0.0)
        };

        let one_m = 1.0 - e1;
        let v = up * one_m + pk * e1 * e2;
        let d1 = up1 * one_m - up * e1p + pk1 * e1 * e2 + pk * (e1p * e2 + e1 * e2p);
        let d2 = up2 * one_m - 2.0 * up1 * e1p - up * e1pp
            + pk2 * e1 * e2
            + 2.0 * pk1 * (e1p * e2 + e1 * e2p)
            + pk * (e1pp * e2 + 2.0 * e1p * e2p + e1 * e2pp);
        xs.push(x);
        vs.push(v);
        d1s.push(d1);
        d2s.push(d2);
        x *= step;
    }
    Ok(ChartSamples { x: xs, v: vs, d1: d1s, d2: d2s })
}

/// Builds the outer cap graph on [1/(2 sqrt(1+mu^2)), 2): the cone segment
/// of slope mu, a quintic corner-rounding band of half-width delta, and the
/// radius-2 circular arc. The ray meets the circle at a right angle, so the
/// blend genuinely rounds a corner; concavity is audited a posteriori and a
/// violation is reported as BlendFailure (a regression guard on the
/// junction data — the quintic itself is concave at every feasible width).
/// The arc's vertical-tangent endpoint (2, 0) is not representable in graph
/// derivatives and is left to the curve assembler.
pub fn build_outer_cap(cone: &ConeParams, delta: f64) -> Result<ChartSamples> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::DomainError(format!(
            "blend half-width must be positive, got {delta}"
        )));
    }
    if delta > 0.2 {
        return Err(Error::ParameterError(format!(
            "blend half-width capped at 0.2, got {delta}"
        )));
    }
    let mu = cone.mu;
    let root = libm::sqrt(1.0 + mu * mu);
    let x1 = 2.0 / root;
    let x_lo = 0.5 / root;
    let j0 = x1 - delta;
    let j1 = x1 + delta;
    if j1 >= 2.0 || j0 <= x_lo {
        return Err(Error::ParameterError(format!(
            "blend band [{j0}, {j1}] must sit inside ({x_lo}, 2)"
        )));
    }

    // Quintic Hermite over xi = (x - j0)/w, w = 2 delta, matching value,
    // slope, and curvature of the ray at j0 and of the arc at j1.
    let w = 2.0 * delta;
    let arc_v = libm::sqrt(4.0 - j1 * j1);
    let c0 = mu * j0;
    let c1 = w * mu;
    let c2 = 0.0;
    let aa = arc_v - c0 - c1 - c2;
    let bb = w * (-j1 / arc_v) - c1 - 2.0 * c2;
    let cc = w * w * (-4.0 / (arc_v * arc_v * arc_v)) - 2.0 * c2;
    let c3 = 10.0 * aa - 4.0 * bb + 0.5 * cc;
    let c4 = -15.0 * aa + 7.0 * bb - cc;
    let c5 = 6.0 * aa - 3.0 * bb + 0.5 * cc;
    let blend = |xi: f64| -> (f64, f64, f64) {
        let v = c0 + xi * (c1 + xi * (c2 + xi * (c3 + xi * (c4 + xi * c5))));
        let d1 = c1 + xi * (2.0 * c2 + xi * (3.0 * c3 + xi * (4.0 * c4 + xi * 5.0 * c5)));
        let d2 = 2.0 * c2 + xi * (6.0 * c3 + xi * (12.0 * c4 + xi * 20.0 * c5));
        (v, d1 / w, d2 / (w * w))
    };

    for i in 0..BLEND_AUDIT_POINTS {
        let xi = i as f64 / (BLEND_AUDIT_POINTS - 1) as f64;
        let (_, _, d2) = blend(xi);
        if d2 > 1e-9 {
            return Err(Error::BlendFailure(format!(
                "corner blend is convex at x = {:.6} (u'' = {d2:.3e}); the ray \
                 meets the circle at a right angle, widen delta (= {delta})",
                j0 + xi * w
            )));
        }
    }

    let mut xs = Vec::new();
    let mut vs = Vec::new();
    let mut d1s = Vec::new();
    let mut d2s = Vec::new();
    let straight = (CHART_POINTS_PER_DECADE as usize) + 1;
    for i in 0..straight {
        let x = x_lo + (j0 - x_lo) * i as f64 / (straight - 1) as f64;
        xs.push(x);
        vs.push(mu * x);
        d1s.push(mu);
        d2s.push(0.0);
    }
    for i in 1..BLEND_POINTS {
        let xi = i as f64 / (BLEND_POINTS - 1) as f64;
        let (v, d1, d2) = blend(xi);
        xs.push(j0 + xi * w);
        vs.push(v);
        d1s.push(d1);
        d2s.push(d2);
    }
    let theta1 = libm::asin(0.5 * j1);
    let theta_span = 0.5 * core::f64::consts::PI - theta1;
    for i in 1..ARC_POINTS {
        let theta = theta1 + theta_span * i as f64 / ARC_POINTS as f64;
        let x = 2.0 * libm::sin(theta);
        let v = 2.0 * libm::cos(theta);
        xs.push(x);
        vs.push(v);
        d1s.push(-x / v);
        d2s.push(-4.0 / (v * v * v));
    }
    Ok(ChartSamples { x: xs, v: vs, d1: d1s, d2: d2s })
}

/// Everything `assemble_initial_curve` needs beyond the cone and a solved
/// profile, bundled so the defaults live in one place.
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub l: u32,
    pub a: Vec<f64>,
    pub t0: f64,
    pub rho: f64,
    pub beta: f64,
    pub lambda_adm: f64,
    pub r_window: f64,
    pub delta: f64,
}

impl InitConfig {
    /// Desk-scale defaults: a = 0 and t0 placed by [`default_t0`].
    pub fn defaults(cone: &ConeParams, l: u32) -> Result<Self> {
        let exps = SpectralExponents::new(cone, l)?;
        Ok(InitConfig {
            l,
            a: vec![0.0; l as usize],
            t0: default_t0(&exps, DEFAULT_RHO, DEFAULT_BETA),
            rho: DEFAULT_RHO,
            beta: DEFAULT_BETA,
            lambda_adm: DEFAULT_LAMBDA_ADM,
            r_window: DEFAULT_R_WINDOW,
            delta: DEFAULT_DELTA,
        })
    }
}

/// The assembled initial curve: three overlapping graph charts, the glued
/// plane polyline, and the parameters that produced them.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub cone: ConeParams,
    pub exps: SpectralExponents,
    pub a: Vec<f64>,
    pub t0: f64,
    pub rho: f64,
    pub beta: f64,
    pub lambda_adm: f64,
    pub r_window: f64,
    pub delta: f64,
    /// Far-field amplitude of the scaled profile core, 1 + sum(a).
    pub k0: f64,
    /// Graph over the rotated ray on [x_tip, 1].
    pub rotated: ChartSamples,
    /// Plane graph (x^1, u_hat(x^1)) near the axis, covering the curve up
    /// to the middle of the inner cutoff band.
    pub tip: ChartSamples,
    /// Plane graph of the cone segment + corner blend + spherical arc.
    pub cap: ChartSamples,
    /// The embedded profile polyline in the plane, tip to (2, 0).
    pub plane: Vec<[f64; 2]>,
}

impl InitialData {
    /// Admissibility of the freshly built rotated chart at t = t0.
    pub fn admissibility(&self) -> Result<AdmissibilityReport> {
        admissibility_check(
            &self.rotated,
            &self.cone,
            &self.exps,
            self.t0,
            self.rho,
            self.beta,
            self.lambda_adm,
        )
    }
}

/// Builds all three charts, verifies that they agree where they overlap,
/// glues the plane polyline, and checks it is embedded and stays in the
/// closed first quadrant (tip on the vertical axis, cap end on the
/// horizontal one).
pub fn assemble_initial_curve(
    cone: &ConeParams,
    cfg: &InitConfig,
    profile: &ProfileSolution,
) -> Result<InitialData> {
    let exps = SpectralExponents::new(cone, cfg.l)?;
    let rotated = build_initial_u(cone, &exps, &cfg.a, cfg.t0, cfg.rho, cfg.beta, profile)?;
    let cap = build_outer_cap(cone, cfg.delta)?;
    let k0 = 1.0 + cfg.a.iter().sum::<f64>();
    let lam = dilation(&exps, cfg.t0);
    let mu = cone.mu;
    let root = libm::sqrt(1.0 + mu * mu);

    // Tip chart: the scaled profile as a plane graph, out to the middle of
    // the inner cutoff band (where the rotated chart is still exactly the
    // scaled profile, so the overlap comparison below is meaningful).
    let prof_k0 = profile.scaled(k0 / profile.k)?;
    let mut cut = 0;
    for i in 0..prof_k0.mesh.len() {
        if (prof_k0.mesh[i] + mu * prof_k0.psi_hat[i]) / root <= 0.5 * cfg.beta {
            cut = i;
        } else {
            break;
        }
    }
    if cut < 10 {
        return Err(Error::ChartCoverage(format!(
            "tip chart would cover only {cut} cells of the rotated chart"
        )));
    }
    let tip = ChartSamples {
        x: prof_k0.mesh[..=cut].iter().map(|r| lam * r).collect(),
        v: prof_k0.psi_hat[..=cut].iter().map(|p| lam * p).collect(),
        d1: prof_k0.d1[..=cut].to_vec(),
        d2: prof_k0.d2[..=cut].iter().map(|d| d / lam).collect(),
    };

    // Overlap consistency: rotate each tip sample into the ray chart and
    // compare against the rotated chart's interpolant.
    let rot_interp = rotated.interpolant()?;
    for i in 0..tip.len() {
        let xr = (tip.x[i] + mu * tip.v[i]) / root;
        let ur = (tip.v[i] - mu * tip.x[i]) / root;
        let got = rot_interp.eval(xr);
        if (got - ur).abs() > 1e-6 {
            return Err(Error::OverlapMismatch(format!(
                "tip and rotated charts disagree at x = {xr:.6e}: {got:.6e} vs {ur:.6e}"
            )));
        }
    }
    let cap_overlap = cap
        .x
        .iter()
        .zip(&cap.v)
        .filter(|(x, v)| libm::sqrt(*x * *x + *v * *v) <= 1.0)
        .count();
    if cap_overlap < 10 {
        return Err(Error::ChartCoverage(format!(
            "cap chart shares only {cap_overlap} cells with the rotated chart"
        )));
    }

    // First-quadrant slope margins in the band where the packet lives; the
    // bound fails by design at the tip (where u' -> -mu), so it is checked
    // exactly where the construction promises it.
    let margin = 0.5 * mu.min(1.0 / mu);
    let band_lo = 0.5 * cfg.beta * lam;
    let band_hi = 2.0 * cfg.rho;
    for i in 0..rotated.len() {
        let x = rotated.x[i];
        if x < band_lo || x > band_hi {
            continue;
        }
        let ratio = rotated.v[i] / x;
        if ratio.abs() > margin || rotated.d1[i].abs() > margin {
            return Err(Error::ConstraintViolation(format!(
                "first-quadrant margin exceeded at x = {x:.4e}: |u/x| = {:.3e}, \
                 |u'| = {:.3e} > {margin:.3e}",
                ratio.abs(),
                rotated.d1[i].abs()
            )));
        }
    }

    // Glue the plane polyline: rotated chart back to plane coordinates,
    // then the cap beyond radius 1, then the exact axis endpoint. The polar
    // angle is constant along the straight cone segment, so the
    // embeddedness argument switches criteria exactly where the corner
    // blend begins: radius grows strictly up to there, and polar angle
    // falls strictly from there to the axis.
    let j0 = 2.0 / root - cfg.delta;
    let mut plane = Vec::with_capacity(rotated.len() + cap.len() + 1);
    let mut blend_start = usize::MAX;
    for i in 0..rotated.len() {
        let (x, u) = (rotated.x[i], rotated.v[i]);
        plane.push([(x - mu * u) / root, (mu * x + u) / root]);
    }
    for i in 0..cap.len() {
        let (x, v) = (cap.x[i], cap.v[i]);
        if libm::sqrt(x * x + v * v) > 1.0 {
            if blend_start == usize::MAX && x > j0 * (1.0 + 1e-14) {
                blend_start = plane.len();
            }
            plane.push([x, v]);
        }
    }
    plane.push([2.0, 0.0]);
    if blend_start == usize::MAX || blend_start == 0 {
        return Err(Error::CurveDegenerate(
            "cap blend never entered the polyline".into(),
        ));
    }
    for i in 1..blend_start {
        let r = libm::hypot(plane[i][0], plane[i][1]);
        let rp = libm::hypot(plane[i - 1][0], plane[i - 1][1]);
        if r <= rp {
            return Err(Error::CurveDegenerate(format!(
                "plane radius fails to increase at node {i} (r = {r:.6})"
            )));
        }
    }
    for i in blend_start..plane.len() {
        let ang = libm::atan2(plane[i][1], plane[i][0]);
        let prev = libm::atan2(plane[i - 1][1], plane[i - 1][0]);
        if ang >= prev {
            return Err(Error::CurveDegenerate(format!(
                "polar angle fails to decrease at node {i} (theta = {ang:.6})"
            )));
        }
    }
    for (i, p) in plane.iter().enumerate() {
        let x_ok = if i == 0 { p[0].abs() <= 1e-12 } else { p[0] > 0.0 };
        let y_ok = if i == plane.len() - 1 { p[1] == 0.0 } else { p[1] > 0.0 };
        if !x_ok || !y_ok {
            return Err(Error::CurveDegenerate(format!(
                "node {i} = ({:.6e}, {:.6e}) leaves the first quadrant",
                p[0], p[1]
            )));
        }
    }

    Ok(InitialData {
        cone: *cone,
        exps,
        a: cfg.a.clone(),
        t0: cfg.t0,
        rho: cfg.rho,
        beta: cfg.beta,
        lambda_adm: cfg.lambda_adm,
        r_window: cfg.r_window,
        delta: cfg.delta,
        k0,
        rotated,
        tip,
        cap,
        plane,
    })
}

/// Outcome of the weighted-derivative admissibility check
///
///   x^i |d^i u / dx^i| < Lambda ((-t)^l x^alpha + x^(2 lambda_l + 1)),
///   i = 0, 1, 2,  on  beta (-t)^(1/2+sigma_l) <= x <= rho.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// Per-derivative-order verdicts.
    pub pass: [bool; 3],
    /// Worst ratio x^i |d^i u| / weight per order.
    pub max_ratio: [f64; 3],
    /// Abscissa of the worst ratio per order.
    pub worst_x: [f64; 3],
    /// The constant the ratios were compared against.
    pub lambda_adm: f64,
    /// Lambda over the overall worst ratio (how much headroom remains).
    pub margin: f64,
    /// Number of chart nodes inside the check window.
    pub nodes: usize,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|&p| p)
    }
}

/// Runs the admissibility check on a rotated-chart sample set at time t.
pub fn admissibility_check(
    chart: &ChartSamples,
    cone: &ConeParams,
    exps: &SpectralExponents,
    t: f64,
    rho: f64,
    beta: f64,
    lambda_adm: f64,
) -> Result<AdmissibilityReport> {
    if !(t < 0.0) || !t.is_finite() {
        return Err(Error::DomainError(format!(
            "admissibility is a pre-singularity check, needs t < 0, got {t}"
        )));
    }
    if !(lambda_adm > 0.0) {
        return Err(Error::ParameterError(format!(
            "weight constant must be positive, got {lambda_adm}"
        )));
    }
    let tau = -t;
    let x_lo = beta * libm::pow(tau, 0.5 + exps.sigma_l);
    let tau_l = libm::pow(tau, f64::from(exps.l));
    let mut max_ratio = [0.0f64; 3];
    let mut worst_x = [f64::NAN; 3];
    let mut nodes = 0usize;
    for i in 0..chart.len() {
        let x = chart.x[i];
        if x < x_lo || x > rho {
            continue;
        }
        nodes += 1;
        let weight = tau_l * libm::pow(x, cone.alpha)
            + libm::pow(x, 2.0 * exps.lambda_l + 1.0);
        let terms = [
            chart.v[i].abs(),
            x * chart.d1[i].abs(),
            x * x * chart.d2[i].abs(),
        ];
        for (j, &term) in terms.iter().enumerate() {
            let ratio = term / weight;
            if ratio > max_ratio[j] {
                max_ratio[j] = ratio;
                worst_x[j] = x;
            }
        }
    }
    if nodes == 0 {
        return Err(Error::WindowUncovered(format!(
            "no chart nodes inside [{x_lo:.4e}, {rho:.4e}]"
        )));
    }
    let overall = max_ratio[0].max(max_ratio[1]).max(max_ratio[2]);
    Ok(AdmissibilityReport {
        pass: [
            max_ratio[0] < lambda_adm,
            max_ratio[1] < lambda_adm,
            max_ratio[2] < lambda_adm,
        ],
        max_ratio,
        worst_x,
        lambda_adm,
        margin: if overall > 0.0 { lambda_adm / overall } else { f64::INFINITY },
        nodes,
    })
}
