//! Curvature diagnostics over evolving states: pointwise mean-curvature and
//! second-fundamental-form evaluations in every chart, per-snapshot sup
//! reports with the tip-scale compensation, least-squares blow-up-rate
//! fits, exact frame rescalings and their inverse, sup-distances to the
//! cone and to the bowl profiles, polynomial comparison barriers for the
//! mode-driven region, and the dimension/mode criterion for bounded mean
//! curvature at the pinch.
//!
//! Conventions: curvatures are signed against the outward normal of the
//! enclosed region (a shrinking sphere has negative mean curvature), but
//! reports carry magnitudes. Report entries are always in unrescaled
//! ambient units — tip-chart curvatures are divided by the dilation, radii
//! multiplied by it — so numbers from different charts compare directly.
//! Everything here is a pure function of immutable snapshots; nothing
//! mutates a [`FlowState`], so callers can fan work out across snapshots.

use crate::cone::{ConeParams, SpectralExponents};
use crate::evolve::{
    curve_kinematics, ChartFunction, ChartKind, FlowState, HandoffMaps, TimeFrame,
};
use crate::numerics::{fit_line, second_derivative_3pt, SampledFn};
use crate::profile::ProfileSolution;
use crate::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Slack on the weighted-sup feasibility inequality, which is an exact zero
/// at the boundary exponent and would otherwise flip on round-off.
const FEASIBILITY_SLACK: f64 = 1e-12;
/// A fitted blow-up slope this close to -1/2 is flagged as type I.
const TYPE_ONE_BAND: f64 = 0.05;
/// Snapshots required before a blow-up-rate fit is attempted.
const RATE_FIT_MIN_SNAPSHOTS: usize = 10;
/// Snapshots required inside the fitted decade.
const RATE_FIT_MIN_KEPT: usize = 5;

// ---------------------------------------------------------------------------
// Pointwise curvature functionals
// ---------------------------------------------------------------------------

fn check_graph_point(cone: &ConeParams, x: f64, u: f64, d1: f64, d2: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() || !u.is_finite() || !d1.is_finite() || !d2.is_finite() {
        return Err(Error::DomainError(format!(
            "curvature evaluation needs finite data on x > 0, got x = {x:.6e}"
        )));
    }
    let den1 = x - cone.mu * u;
    let den2 = cone.mu * x + u;
    if !(den1 > 0.0) || !(den2 > 0.0) {
        return Err(Error::DenominatorBreach(format!(
            "graph point (x, u) = ({x:.6e}, {u:.6e}) is on or past a symmetry axis"
        )));
    }
    Ok((den1, den2))
}

/// Mean curvature of the rotated hypersurface at one point of a graph over
/// the cone ray, from the chart value and its two derivatives. Signed
/// against the outward normal; the cone section `u = 0` gives exactly zero.
pub fn mean_curvature_graph(cone: &ConeParams, x: f64, u: f64, d1: f64, d2: f64) -> Result<f64> {
    let (den1, den2) = check_graph_point(cone, x, u, d1, d2)?;
    let p1 = f64::from(cone.p - 1);
    let q1 = f64::from(cone.q - 1);
    let mu = cone.mu;
    let g2 = 1.0 + d1 * d1;
    Ok((d2 / g2 + p1 * (mu + d1) / den1 - q1 * (1.0 - mu * d1) / den2) / libm::sqrt(g2))
}

/// Norm of the second fundamental form at one point of a graph over the
/// cone ray: the profile curvature plus the two families of rotation
/// curvatures, combined in quadrature. Returns |A| (not its square).
pub fn second_fundamental_norm(
    cone: &ConeParams,
    x: f64,
    u: f64,
    d1: f64,
    d2: f64,
) -> Result<f64> {
    let (den1, den2) = check_graph_point(cone, x, u, d1, d2)?;
    let p1 = f64::from(cone.p - 1);
    let q1 = f64::from(cone.q - 1);
    let mu = cone.mu;
    let g2 = 1.0 + d1 * d1;
    let t0 = d2 / g2;
    let t1 = (mu + d1) / den1;
    let t2 = (1.0 - mu * d1) / den2;
    Ok(libm::sqrt((t0 * t0 + p1 * t1 * t1 + q1 * t2 * t2) / g2))
}

/// Mean curvature and |A| for a graph `w(z)` over the first rotation axis
/// (the tip chart's shape): the curve (z, w(z)) swept by both sphere
/// factors. At z = 0 the graph is even, the slope vanishes, and the
/// slope-over-radius ratio of the first family has limit w'', so the axis
/// point uses the reflected formulas and ignores `d1`.
pub fn radial_graph_curvatures(
    cone: &ConeParams,
    z: f64,
    w: f64,
    d1: f64,
    d2: f64,
) -> Result<(f64, f64)> {
    if !(z >= 0.0) || !z.is_finite() || !d1.is_finite() || !d2.is_finite() {
        return Err(Error::DomainError(format!(
            "radial graph curvatures need finite data on z >= 0, got z = {z:.6e}"
        )));
    }
    if !(w > 0.0) {
        return Err(Error::DenominatorBreach(format!(
            "rotation radius must stay positive, got w = {w:.6e} at z = {z:.6e}"
        )));
    }
    let p1 = f64::from(cone.p - 1);
    let q1 = f64::from(cone.q - 1);
    if z == 0.0 {
        let h = f64::from(cone.p) * d2 - q1 / w;
        let a2 = f64::from(cone.p) * d2 * d2 + q1 / (w * w);
        return Ok((h, libm::sqrt(a2)));
    }
    let g2 = 1.0 + d1 * d1;
    let t0 = d2 / g2;
    let t1 = d1 / z;
    let t2 = 1.0 / w;
    let h = (t0 + p1 * t1 - q1 * t2) / libm::sqrt(g2);
    let a = libm::sqrt((t0 * t0 + p1 * t1 * t1 + q1 * t2 * t2) / g2);
    Ok((h, a))
}

/// The quadratic remainder of the graph flow about the cone section: the
/// full right-hand side minus its linearization u'' + (n-2)(u'/x + u/x^2).
/// The same pointwise expression serves the rescaled frame, where the
/// drift lives entirely in the linear operator.
pub fn quadratic_remainder(cone: &ConeParams, x: f64, u: f64, d1: f64, d2: f64) -> Result<f64> {
    check_graph_point(cone, x, u, d1, d2)?;
    let mu = cone.mu;
    let n2 = f64::from(cone.n) - 2.0;
    let w = u / x;
    let f1 = 1.0 - mu * w;
    let f2 = 1.0 + w / mu;
    let curvature = -d1 * d1 * d2 / (1.0 + d1 * d1);
    let radial = n2 * (w * w * (u / (x * x) + d1 / x) + (mu - 1.0 / mu) * w * (u / (x * x)))
        / (f1 * f2);
    Ok(curvature + radial)
}

// ---------------------------------------------------------------------------
// Jacobi potential
// ---------------------------------------------------------------------------

/// Which stationary hypersurface carries the Jacobi-field potential |A|^2.
#[derive(Debug, Clone, Copy)]
pub enum JacobiSurface<'a> {
    /// The minimal cone itself.
    Cone(&'a ConeParams),
    /// A solved bowl profile asymptotic to its cone.
    Profile(&'a ProfileSolution),
}

/// |A|^2 on the cone or on a bowl profile at the given ambient radius (the
/// distance of the surface point from the origin). On the cone this is the
/// exact inverse square (n-2)/radius^2; on a bowl the radius is first
/// traced back to the profile parameter along the curve, which is monotone
/// because the height grows with the leaf radius.
pub fn jacobi_potential(surface: JacobiSurface<'_>, radius: f64) -> Result<f64> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::DomainError(format!(
            "potential radius must be positive and finite, got {radius:.6e}"
        )));
    }
    match surface {
        JacobiSurface::Cone(cone) => {
            let n2 = f64::from(cone.n) - 2.0;
            Ok(n2 / (radius * radius))
        }
        JacobiSurface::Profile(sol) => {
            let f = sol.sampled()?;
            let r_hi = *sol.mesh.last().ok_or_else(|| {
                Error::SpanTooShort("profile solution has an empty mesh".into())
            })?;
            let g_hi = libm::hypot(r_hi, *sol.psi_hat.last().unwrap());
            let g_lo = sol.tip_height;
            let slack = 1e-9 * g_hi;
            if radius < g_lo - slack || radius > g_hi + slack {
                return Err(Error::DomainError(format!(
                    "ambient radius {radius:.6e} outside the bowl's [{g_lo:.6e}, {g_hi:.6e}]"
                )));
            }
            let target = radius.clamp(g_lo, g_hi);
            let mut lo = 0.0_f64;
            let mut hi = r_hi;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if libm::hypot(mid, f.eval(mid)) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * r_hi {
                    break;
                }
            }
            let r = 0.5 * (lo + hi);
            let d1 = SampledFn::new(sol.mesh.clone(), sol.d1.clone())?;
            let d2 = SampledFn::new(sol.mesh.clone(), sol.d2.clone())?;
            let (_, a) = radial_graph_curvatures(&sol.cone, r, f.eval(r), d1.eval(r), d2.eval(r))?;
            Ok(a * a)
        }
    }
}

// ---------------------------------------------------------------------------
// Per-snapshot curvature reports
// ---------------------------------------------------------------------------

/// Weighted mean-curvature sup over the parabolic core |x| <= sqrt(-t),
/// with the weight (1 + |x|/dilation)^a and the exponent's feasibility
/// against the decay budget of the driving mode.
#[derive(Debug, Clone, Copy)]
pub struct WeightedH {
    /// Weight exponent.
    pub a: f64,
    /// sup of the weighted |H| over the core region.
    pub value: f64,
    /// sup of the bare |H| over the same region.
    pub plain: f64,
    /// Whether the exponent leaves the decay budget nonnegative; an
    /// infeasible exponent still produces a finite sup, it just carries no
    /// boundedness guarantee as t -> 0.
    pub feasible: bool,
    /// Curve samples inside the region.
    pub samples: usize,
}

/// Curvature summary of one snapshot, in ambient units.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureReport {
    pub t: f64,
    /// sup |A| over all charts (nodes plus mid-cell reconstruction).
    pub sup_a: f64,
    /// sup |H| over the same samples.
    pub sup_h: f64,
    /// (-t)^(1/2 + sigma_l) * sup |A|: the tip-compensated norm whose
    /// positive limit marks the slow blow-up.
    pub type2_a: f64,
    /// Ambient radius where sup |A| was attained.
    pub radius_a: f64,
    /// Ambient radius where sup |H| was attained.
    pub radius_h: f64,
    /// Weighted |H| sup, when a weight exponent was requested.
    pub weighted_h: Option<WeightedH>,
}

struct CurvSample {
    radius: f64,
    h: f64,
    a: f64,
}

/// Ambient length per chart unit for a chart expressed in `frame` at time t.
fn frame_scale(exps: &SpectralExponents, t: f64, frame: TimeFrame) -> f64 {
    match frame {
        TimeFrame::Original => 1.0,
        TimeFrame::TypeOne => libm::sqrt(-t),
        TimeFrame::TypeTwo => libm::pow(-t, 0.5 + exps.sigma_l),
    }
}

/// Nodes plus mid-cell quadratic reconstruction of a graph chart: between
/// nodes the value is the cell average corrected by the reconstructed
/// second derivative, the slope is the exact chord slope, and the second
/// derivative is the cell average. Node-only sups under-report between-node
/// peaks near the tip, which is what the midpoints are for.
fn graph_refine(
    mesh: &[f64],
    values: &[f64],
    d1: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d2 = second_derivative_3pt(mesh, values);
    let n = mesh.len();
    let m = 2 * n - 1;
    let mut xs = Vec::with_capacity(m);
    let mut vs = Vec::with_capacity(m);
    let mut ss = Vec::with_capacity(m);
    let mut cs = Vec::with_capacity(m);
    for i in 0..n {
        xs.push(mesh[i]);
        vs.push(values[i]);
        ss.push(d1[i]);
        cs.push(d2[i]);
        if i + 1 < n {
            let h = mesh[i + 1] - mesh[i];
            let c = 0.5 * (d2[i] + d2[i + 1]);
            xs.push(mesh[i] + 0.5 * h);
            vs.push(0.5 * (values[i] + values[i + 1]) - 0.125 * h * h * c);
            ss.push((values[i + 1] - values[i]) / h);
            cs.push(c);
        }
    }
    (xs, vs, ss, cs)
}

/// The cap polyline with quadratic midpoints spliced in, componentwise
/// along the chord parameter.
fn polyline_refine(sigma: &[f64], xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let xpp = second_derivative_3pt(sigma, xs);
    let ypp = second_derivative_3pt(sigma, ys);
    let n = xs.len();
    let mut ox = Vec::with_capacity(2 * n - 1);
    let mut oy = Vec::with_capacity(2 * n - 1);
    for i in 0..n {
        ox.push(xs[i]);
        oy.push(ys[i]);
        if i + 1 < n {
            let h = sigma[i + 1] - sigma[i];
            ox.push(0.5 * (xs[i] + xs[i + 1]) - 0.0625 * h * h * (xpp[i] + xpp[i + 1]));
            oy.push(0.5 * (ys[i] + ys[i + 1]) - 0.0625 * h * h * (ypp[i] + ypp[i + 1]));
        }
    }
    (ox, oy)
}

/// Mean curvature and |A| at every node of a parametric curve, with the
/// axis-node limits matching the kinematics' reflected stencils.
fn parametric_norms(cone: &ConeParams, xs: &[f64], ys: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let kin = curve_kinematics(cone, xs, ys)?;
    let p1 = f64::from(cone.p - 1);
    let q1 = f64::from(cone.q - 1);
    let last = xs.len() - 1;
    let mut norms = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let k = kin.kappa[i];
        let a2 = if i == 0 && xs[0] == 0.0 {
            f64::from(cone.p) * k * k + q1 / (ys[0] * ys[0])
        } else if i == last && ys[last] == 0.0 {
            f64::from(cone.q) * k * k + p1 / (xs[last] * xs[last])
        } else {
            let cx = kin.nx[i] / xs[i];
            let cy = kin.ny[i] / ys[i];
            k * k + p1 * cx * cx + q1 * cy * cy
        };
        norms.push(libm::sqrt(a2));
    }
    Ok((kin.v, norms))
}

/// Ambient-unit curvature samples (radius, |H|, |A|) over every chart.
fn curvature_samples(state: &FlowState) -> Result<Vec<CurvSample>> {
    if !(state.t < 0.0) {
        return Err(Error::DomainError(format!(
            "curvature samples need t < 0, got t = {:.6e}",
            state.t
        )));
    }
    if state.charts.is_empty() {
        return Err(Error::ParameterClash(
            "curvature sampling needs at least one chart".into(),
        ));
    }
    let cone = &state.cone;
    let mut out = Vec::new();
    for chart in &state.charts {
        let f = frame_scale(&state.exps, state.t, chart.frame);
        match chart.kind {
            ChartKind::RotatedRay => {
                let (xs, vs, ss, cs) = graph_refine(&chart.mesh, &chart.values, &chart.d1);
                for j in 0..xs.len() {
                    let h = mean_curvature_graph(cone, xs[j], vs[j], ss[j], cs[j])?;
                    let a = second_fundamental_norm(cone, xs[j], vs[j], ss[j], cs[j])?;
                    out.push(CurvSample {
                        radius: f * libm::hypot(xs[j], vs[j]),
                        h: h.abs() / f,
                        a: a / f,
                    });
                }
            }
            ChartKind::TipRadial => {
                let (xs, vs, ss, cs) = graph_refine(&chart.mesh, &chart.values, &chart.d1);
                for j in 0..xs.len() {
                    let (h, a) = radial_graph_curvatures(cone, xs[j], vs[j], ss[j], cs[j])?;
                    out.push(CurvSample {
                        radius: f * libm::hypot(xs[j], vs[j]),
                        h: h.abs() / f,
                        a: a / f,
                    });
                }
            }
            ChartKind::OuterParametric => {
                let (rx, ry) = polyline_refine(&chart.mesh, &chart.values, &chart.aux);
                let (hs, norms) = parametric_norms(cone, &rx, &ry)?;
                for j in 0..rx.len() {
                    out.push(CurvSample {
                        radius: f * libm::hypot(rx[j], ry[j]),
                        h: hs[j].abs() / f,
                        a: norms[j] / f,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Weighted |H| sup over the parabolic core |x| <= sqrt(-t). The exponent
/// must sit in the open admissible band (-alpha, 1 - alpha); outside the
/// feasibility inequality the sup still computes but `feasible` is false.
pub fn weighted_h_sup(state: &FlowState, a: f64) -> Result<WeightedH> {
    let alpha = state.cone.alpha;
    if !(a > -alpha) || !(a < 1.0 - alpha) {
        return Err(Error::ParameterError(format!(
            "weight exponent must lie in ({:.4}, {:.4}), got {a:.4}",
            -alpha,
            1.0 - alpha
        )));
    }
    let lam = state.dilation();
    let edge = libm::sqrt(-state.t);
    let feasible =
        state.exps.lambda_l * (1.0 - a / (1.0 - alpha)) - 0.5 >= -FEASIBILITY_SLACK;
    let mut value = 0.0_f64;
    let mut plain = 0.0_f64;
    let mut samples = 0usize;
    for s in curvature_samples(state)? {
        if s.radius <= edge {
            samples += 1;
            plain = plain.max(s.h);
            value = value.max(libm::pow(1.0 + s.radius / lam, a) * s.h);
        }
    }
    if samples == 0 {
        return Err(Error::ChartCoverage(format!(
            "no curve samples inside the parabolic core |x| <= {edge:.4e}"
        )));
    }
    Ok(WeightedH {
        a,
        value,
        plain,
        feasible,
        samples,
    })
}

/// Curvature summary of one snapshot: sup |A| and sup |H| over every chart
/// (nodes plus mid-cell reconstruction), their ambient radii, the
/// tip-compensated |A|, and optionally the weighted |H| sup at the given
/// exponent.
pub fn curvature_report(
    state: &FlowState,
    weight_exponent: Option<f64>,
) -> Result<CurvatureReport> {
    let samples = curvature_samples(state)?;
    let mut sup_a = 0.0_f64;
    let mut sup_h = 0.0_f64;
    let mut radius_a = 0.0_f64;
    let mut radius_h = 0.0_f64;
    for s in &samples {
        if s.a > sup_a {
            sup_a = s.a;
            radius_a = s.radius;
        }
        if s.h > sup_h {
            sup_h = s.h;
            radius_h = s.radius;
        }
    }
    if !sup_a.is_finite() || !sup_h.is_finite() {
        return Err(Error::DomainError(
            "curvature sups failed to stay finite".into(),
        ));
    }
    let weighted_h = match weight_exponent {
        Some(a) => Some(weighted_h_sup(state, a)?),
        None => None,
    };
    Ok(CurvatureReport {
        t: state.t,
        sup_a,
        sup_h,
        type2_a: state.dilation() * sup_a,
        radius_a,
        radius_h,
        weighted_h,
    })
}

// ---------------------------------------------------------------------------
// Frame rescalings
// ---------------------------------------------------------------------------

fn frame_power(exps: &SpectralExponents, frame: TimeFrame) -> f64 {
    match frame {
        TimeFrame::Original => 0.0,
        TimeFrame::TypeOne => 0.5,
        TimeFrame::TypeTwo => 0.5 + exps.sigma_l,
    }
}

fn convert_chart(
    exps: &SpectralExponents,
    t: f64,
    chart: &ChartFunction,
    target: TimeFrame,
) -> Result<ChartFunction> {
    let ratio = libm::pow(-t, frame_power(exps, chart.frame) - frame_power(exps, target));
    let scale = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| ratio * x).collect() };
    match chart.kind {
        ChartKind::OuterParametric => {
            let mut new = ChartFunction::parametric(scale(&chart.values), scale(&chart.aux))?;
            new.frame = target;
            Ok(new)
        }
        kind => {
            // The graph constructor pins the tip chart to its zoomed frame
            // and keeps the ray chart out of it; a rescaled snapshot is an
            // analysis view, not a steppable state, so build under the
            // constructor's frame and retag. The steppers still refuse any
            // frame outside their own contracts.
            let build = match kind {
                ChartKind::TipRadial => TimeFrame::TypeTwo,
                ChartKind::RotatedRay if target == TimeFrame::TypeTwo => TimeFrame::Original,
                _ => target,
            };
            let mut new = ChartFunction::graph(kind, build, scale(&chart.mesh), scale(&chart.values))?;
            new.frame = target;
            Ok(new)
        }
    }
}

fn with_converted_charts(state: &FlowState, charts: Vec<ChartFunction>) -> FlowState {
    FlowState {
        cone: state.cone,
        exps: state.exps,
        t: state.t,
        t0: state.t0,
        rho: state.rho,
        beta: state.beta,
        charts,
        // Handoff data is frame-specific Dirichlet glue; a rescaled view
        // starts with none rather than stale values.
        handoff: HandoffMaps::default(),
        diag: state.diag.clone(),
    }
}

/// Express every chart of a snapshot in the requested time frame: lengths
/// divide by sqrt(-t) for the parabolic zoom and by (-t)^(1/2 + sigma_l)
/// for the tip zoom. The change of variables is exact (one scale factor),
/// so composing with [`unrescale_state`] returns the input to round-off.
pub fn rescale_state(state: &FlowState, frame: TimeFrame) -> Result<FlowState> {
    if !(state.t < 0.0) {
        return Err(Error::DomainError(format!(
            "rescaling needs t < 0, got t = {:.6e}",
            state.t
        )));
    }
    let mut charts = Vec::with_capacity(state.charts.len());
    for ch in &state.charts {
        charts.push(convert_chart(&state.exps, state.t, ch, frame)?);
    }
    Ok(with_converted_charts(state, charts))
}

/// Return every chart to the frame the flow driver evolves it in: the ray
/// chart and the cap in original ambient units, the tip chart in its zoom.
pub fn unrescale_state(state: &FlowState) -> Result<FlowState> {
    if !(state.t < 0.0) {
        return Err(Error::DomainError(format!(
            "rescaling needs t < 0, got t = {:.6e}",
            state.t
        )));
    }
    let mut charts = Vec::with_capacity(state.charts.len());
    for ch in &state.charts {
        let target = match ch.kind {
            ChartKind::RotatedRay | ChartKind::OuterParametric => TimeFrame::Original,
            ChartKind::TipRadial => TimeFrame::TypeTwo,
        };
        charts.push(convert_chart(&state.exps, state.t, ch, target)?);
    }
    Ok(with_converted_charts(state, charts))
}

// ---------------------------------------------------------------------------
// Blow-up-rate fit
// ---------------------------------------------------------------------------

/// Least-squares blow-up rate from a snapshot series.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// Slope of log sup|A| against log(-t) over the last decade.
    pub slope: f64,
    /// Standard error of the slope from the residual variance.
    pub stderr: f64,
    /// The slow rate -(1/2 + sigma_l) the driving mode predicts.
    pub expected: f64,
    /// slope - expected.
    pub deviation: f64,
    /// Whether the fit sits in the band around the parabolic rate -1/2.
    pub type_one: bool,
    /// Snapshots inside the fitted decade.
    pub used: usize,
}

/// Fit log sup|A| against log(-t) by ordinary least squares over the last
/// decade of available (-t); earlier snapshots only establish the span.
/// The confidence band comes from the residual variance alone, with no
/// autocorrelation correction.
pub fn blowup_rate_fit(exps: &SpectralExponents, series: &[CurvatureReport]) -> Result<RateFit> {
    if series.len() < RATE_FIT_MIN_SNAPSHOTS {
        return Err(Error::SpanTooShort(format!(
            "rate fit needs >= {RATE_FIT_MIN_SNAPSHOTS} snapshots, got {}",
            series.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for r in series {
        if !(r.t < 0.0) || !r.t.is_finite() || !(r.sup_a > 0.0) || !r.sup_a.is_finite() {
            return Err(Error::DomainError(format!(
                "rate fit needs t < 0 and sup|A| > 0, got (t, sup) = ({:.3e}, {:.3e})",
                r.t, r.sup_a
            )));
        }
        lo = lo.min(-r.t);
        hi = hi.max(-r.t);
    }
    if hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::SpanTooShort(format!(
            "snapshots span a factor {:.3} in (-t), need >= 10",
            hi / lo
        )));
    }
    let cut = 10.0 * lo * (1.0 + 1e-9);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in series {
        if -r.t <= cut {
            xs.push(libm::log(-r.t));
            ys.push(libm::log(r.sup_a));
        }
    }
    if xs.len() < RATE_FIT_MIN_KEPT {
        return Err(Error::SpanTooShort(format!(
            "only {} snapshots inside the final decade, need >= {RATE_FIT_MIN_KEPT}",
            xs.len()
        )));
    }
    let (slope, _, stderr) = fit_line(&xs, &ys)?;
    let expected = -(0.5 + exps.sigma_l);
    Ok(RateFit {
        slope,
        stderr,
        expected,
        deviation: slope - expected,
        type_one: (slope + 0.5).abs() < TYPE_ONE_BAND,
        used: xs.len(),
    })
}

// ---------------------------------------------------------------------------
// Convergence metrics
// ---------------------------------------------------------------------------

/// What a rescaled snapshot is compared against.
#[derive(Debug, Clone, Copy)]
pub enum ConvergenceTarget<'a> {
    /// The flat fixed point of the parabolic frame: the ray chart against
    /// the zero graph.
    Cone,
    /// A bowl profile, compared against the tip chart in tip units.
    Profile(&'a ProfileSolution),
}

/// C^0 and C^1 sup-distances over a comparison window.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceMetric {
    pub c0: f64,
    pub c1: f64,
    /// Chart nodes inside the window.
    pub samples: usize,
}

/// Sup-distance of a snapshot's chart to a stationary target over a window
/// in the chart's own abscissa. Samples chart nodes (the chart's slopes are
/// the C^1 data; no reconstruction is interposed between the state and the
/// target).
pub fn convergence_metric(
    state: &FlowState,
    target: ConvergenceTarget<'_>,
    window: (f64, f64),
) -> Result<ConvergenceMetric> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::DomainError(format!(
            "comparison window must be finite with lo < hi, got [{lo:.4e}, {hi:.4e}]"
        )));
    }
    let slack = 1e-12 * (1.0 + hi.abs());
    match target {
        ConvergenceTarget::Cone => {
            let ch = state.chart(ChartKind::RotatedRay).ok_or_else(|| {
                Error::ParameterClash("cone comparison needs a ray chart".into())
            })?;
            if ch.mesh[0] > lo + slack || *ch.mesh.last().unwrap() < hi - slack {
                return Err(Error::WindowUncovered(format!(
                    "ray chart covers [{:.4e}, {:.4e}], window asks [{lo:.4e}, {hi:.4e}]",
                    ch.mesh[0],
                    ch.mesh.last().unwrap()
                )));
            }
            let mut c0 = 0.0_f64;
            let mut c1 = 0.0_f64;
            let mut samples = 0usize;
            for i in 0..ch.len() {
                if ch.mesh[i] >= lo && ch.mesh[i] <= hi {
                    samples += 1;
                    c0 = c0.max(ch.values[i].abs());
                    c1 = c1.max(ch.d1[i].abs());
                }
            }
            if samples < 2 {
                return Err(Error::WindowUncovered(format!(
                    "window [{lo:.4e}, {hi:.4e}] holds only {samples} ray nodes"
                )));
            }
            Ok(ConvergenceMetric { c0, c1, samples })
        }
        ConvergenceTarget::Profile(sol) => {
            let ch = state.chart(ChartKind::TipRadial).ok_or_else(|| {
                Error::ParameterClash("bowl comparison needs a tip chart".into())
            })?;
            let r_hi = *sol.mesh.last().unwrap();
            if ch.mesh[0] > lo + slack || *ch.mesh.last().unwrap() < hi - slack {
                return Err(Error::WindowUncovered(format!(
                    "tip chart covers [{:.4e}, {:.4e}], window asks [{lo:.4e}, {hi:.4e}]",
                    ch.mesh[0],
                    ch.mesh.last().unwrap()
                )));
            }
            if r_hi < hi - slack {
                return Err(Error::WindowUncovered(format!(
                    "bowl profile reaches {r_hi:.4e}, window asks {hi:.4e}"
                )));
            }
            let psi = sol.sampled()?;
            let psi1 = SampledFn::new(sol.mesh.clone(), sol.d1.clone())?;
            let mut c0 = 0.0_f64;
            let mut c1 = 0.0_f64;
            let mut samples = 0usize;
            for i in 0..ch.len() {
                let z = ch.mesh[i];
                if z >= lo && z <= hi {
                    samples += 1;
                    c0 = c0.max((ch.values[i] - psi.eval(z)).abs());
                    c1 = c1.max((ch.d1[i] - psi1.eval(z)).abs());
                }
            }
            if samples < 2 {
                return Err(Error::WindowUncovered(format!(
                    "window [{lo:.4e}, {hi:.4e}] holds only {samples} tip nodes"
                )));
            }
            Ok(ConvergenceMetric { c0, c1, samples })
        }
    }
}

// ---------------------------------------------------------------------------
// Comparison barriers
// ---------------------------------------------------------------------------

/// Which side of the comparison principle a barrier sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSide {
    /// Residual nonnegative: caps solutions from above.
    Super,
    /// Residual nonpositive: props them from below.
    Sub,
}

/// Two-power comparison barrier C0 (x^(2 lambda_l + 1) - C (-t) x^(2
/// lambda_l - 1)) for the mode-driven region between the tip scale and the
/// fixed outer radius. The correction constant C is chosen by the side and
/// the sign of C0: the combination that makes the linear residual a full
/// M1 x^(2 lambda_l - 1) away from zero.
#[derive(Debug, Clone, Copy)]
pub struct SubSuperSolution {
    pub side: BarrierSide,
    /// Leading amplitude; its sign is the mode amplitude's.
    pub c0: f64,
    /// Correction constant, either 0 or 2 M1.
    pub c: f64,
    /// (2 lambda + 1)(2 lambda) + (n - 2)(2 lambda + 2): the linear
    /// operator's action on the leading power.
    pub m1: f64,
    /// (2 lambda - 1)(2 lambda - 2) + (n - 2)(2 lambda): its action on the
    /// correction power.
    pub m2: f64,
    /// Leading exponent 2 lambda_l + 1.
    pub power_hi: f64,
    /// Correction exponent 2 lambda_l - 1.
    pub power_lo: f64,
}

impl SubSuperSolution {
    pub fn new(
        cone: &ConeParams,
        exps: &SpectralExponents,
        side: BarrierSide,
        c0: f64,
    ) -> Result<Self> {
        if !c0.is_finite() || c0 == 0.0 {
            return Err(Error::ParameterError(format!(
                "barrier amplitude must be finite and nonzero, got {c0:.4e}"
            )));
        }
        let n2 = f64::from(cone.n) - 2.0;
        let tl = 2.0 * exps.lambda_l;
        let m1 = (tl + 1.0) * tl + n2 * (tl + 2.0);
        let m2 = (tl - 1.0) * (tl - 2.0) + n2 * tl;
        if !(m1 > 0.0) || !(m2 > 0.0) {
            return Err(Error::ConstraintViolation(format!(
                "barrier constants must be positive, got M1 = {m1:.4e}, M2 = {m2:.4e}"
            )));
        }
        let c = if (c0 > 0.0) == (side == BarrierSide::Super) {
            2.0 * m1
        } else {
            0.0
        };
        Ok(SubSuperSolution {
            side,
            c0,
            c,
            m1,
            m2,
            power_hi: tl + 1.0,
            power_lo: tl - 1.0,
        })
    }

    /// Barrier value at (x, t).
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        self.c0 * (libm::pow(x, self.power_hi) - self.c * (-t) * libm::pow(x, self.power_lo))
    }

    /// Exact spatial derivative.
    pub fn eval_d1(&self, x: f64, t: f64) -> f64 {
        self.c0
            * (self.power_hi * libm::pow(x, self.power_hi - 1.0)
                - self.c * (-t) * self.power_lo * libm::pow(x, self.power_lo - 1.0))
    }

    /// Exact second spatial derivative.
    pub fn eval_d2(&self, x: f64, t: f64) -> f64 {
        self.c0
            * (self.power_hi * (self.power_hi - 1.0) * libm::pow(x, self.power_hi - 2.0)
                - self.c
                    * (-t)
                    * self.power_lo
                    * (self.power_lo - 1.0)
                    * libm::pow(x, self.power_lo - 2.0))
    }

    /// (d/dt - linearization) applied to the barrier, in closed form: both
    /// powers are eigendirections of the linear part, so no differencing
    /// enters.
    pub fn linear_residual(&self, x: f64, t: f64) -> f64 {
        self.c0
            * libm::pow(x, self.power_lo)
            * (self.c - self.m1 + self.c * self.m2 * (-t) / (x * x))
    }
}

/// Sign pattern of a barrier's full residual over a space-time grid.
#[derive(Debug, Clone, Copy)]
pub struct SignReport {
    pub side: BarrierSide,
    /// Whether the residual kept the side's sign at every grid point.
    pub holds: bool,
    pub min_residual: f64,
    pub max_residual: f64,
    pub samples: usize,
    /// Location of the residual nearest a sign violation.
    pub worst_x: f64,
    pub worst_t: f64,
}

/// Evaluate (d/dt - linearization - quadratic remainder) of a barrier over
/// a log-spaced grid of the comparison region {2 R sqrt(-t) < x <
/// outer_radius} for t in the window, and report the sign pattern: a
/// supersolution's residual must be nonnegative everywhere, a
/// subsolution's nonpositive.
pub fn subsuper_residual(
    cone: &ConeParams,
    sol: &SubSuperSolution,
    t_window: (f64, f64),
    inner_scale: f64,
    outer_radius: f64,
    grid: (usize, usize),
) -> Result<SignReport> {
    let (t0, t_hat) = t_window;
    let (nt, nx) = grid;
    if !(t0 < t_hat) || !(t_hat < 0.0) {
        return Err(Error::DomainError(format!(
            "time window must satisfy t0 < t_hat < 0, got [{t0:.4e}, {t_hat:.4e}]"
        )));
    }
    if !(inner_scale > 0.0) || !(outer_radius > 0.0) {
        return Err(Error::ParameterError(format!(
            "region scales must be positive, got R = {inner_scale:.4e}, rho = {outer_radius:.4e}"
        )));
    }
    let x_in0 = 2.0 * inner_scale * libm::sqrt(-t0);
    if !(x_in0 < outer_radius * (1.0 - 1e-12)) {
        return Err(Error::ConstraintViolation(format!(
            "inner edge 2 R sqrt(-t0) = {x_in0:.4e} reaches the outer radius {outer_radius:.4e}; \
             shrink R or move t0 toward zero"
        )));
    }
    if nt < 2 || nx < 2 {
        return Err(Error::MeshTooCoarse(format!(
            "residual grid needs >= 2 points per axis, got ({nt}, {nx})"
        )));
    }
    let lt0 = libm::log(-t0);
    let lt1 = libm::log(-t_hat);
    let mut min_residual = f64::INFINITY;
    let mut max_residual = f64::NEG_INFINITY;
    let mut worst = (0.0_f64, 0.0_f64, f64::NEG_INFINITY);
    let mut samples = 0usize;
    for i in 0..nt {
        let t = -libm::exp(lt0 + (lt1 - lt0) * i as f64 / (nt - 1) as f64);
        let x_lo = 2.0 * inner_scale * libm::sqrt(-t);
        let lx0 = libm::log(x_lo);
        let lx1 = libm::log(outer_radius);
        for j in 0..nx {
            let x = libm::exp(lx0 + (lx1 - lx0) * j as f64 / (nx - 1) as f64);
            let u = sol.eval(x, t);
            let d1 = sol.eval_d1(x, t);
            let d2 = sol.eval_d2(x, t);
            let residual = sol.linear_residual(x, t) - quadratic_remainder(cone, x, u, d1, d2)?;
            samples += 1;
            min_residual = min_residual.min(residual);
            max_residual = max_residual.max(residual);
            let badness = match sol.side {
                BarrierSide::Super => -residual,
                BarrierSide::Sub => residual,
            };
            if badness > worst.2 {
                worst = (x, t, badness);
            }
        }
    }
    let holds = match sol.side {
        BarrierSide::Super => min_residual >= 0.0,
        BarrierSide::Sub => max_residual <= 0.0,
    };
    Ok(SignReport {
        side: sol.side,
        holds,
        min_residual,
        max_residual,
        samples,
        worst_x: worst.0,
        worst_t: worst.1,
    })
}

// ---------------------------------------------------------------------------
// Bounded mean curvature at the pinch
// ---------------------------------------------------------------------------

/// How the mean curvature behaves as t -> 0 for a given dimension and
/// driving mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HBoundedness {
    /// sup |H| stays finite up to the singular time.
    Bounded,
    /// sup |H| may grow like (-t)^(-e): (-t)^(e + eps) |H| stays bounded
    /// for every eps > 0.
    PowerRate(f64),
}

/// The cone's slow decay exponent depends only on the total dimension, so
/// dimension-level queries borrow any factor split.
fn alpha_for_dimension(n: u32) -> Result<f64> {
    if n < 8 {
        return Err(Error::DimensionError(format!(
            "decay exponents are real for n >= 8 only, got n = {n}"
        )));
    }
    Ok(ConeParams::new(3, n - 3)?.alpha)
}

fn checked_mode(l: u32) -> Result<f64> {
    if l < 2 {
        return Err(Error::DomainError(format!(
            "only modes l >= 2 drive decaying perturbations, got l = {l}"
        )));
    }
    Ok(f64::from(l))
}

/// Whether the mode-l pinch keeps its mean curvature bounded: true exactly
/// when the mode index clears the full decay width 1 - alpha, i.e. when
/// the tip scale shrinks faster than the parabolic one by more than the
/// curvature costs.
pub fn bounded_h_criterion(n: u32, l: u32) -> Result<bool> {
    let lf = checked_mode(l)?;
    let alpha = alpha_for_dimension(n)?;
    Ok(lf > 1.0 - alpha)
}

/// The boundedness class with its rate: bounded past the criterion,
/// otherwise the power e = 1/2 - sigma_l such that (-t)^(e + eps) |H|
/// stays bounded for every eps > 0 (zero exactly on the marginal mode).
pub fn h_boundedness_class(n: u32, l: u32) -> Result<HBoundedness> {
    let lf = checked_mode(l)?;
    let alpha = alpha_for_dimension(n)?;
    if lf > 1.0 - alpha {
        return Ok(HBoundedness::Bounded);
    }
    let lambda = lf - 0.5 * (1.0 - alpha);
    let sigma = lambda / (1.0 - alpha);
    Ok(HBoundedness::PowerRate((0.5 - sigma).max(0.0)))
}
