//! Shared numerical kernels: tridiagonal solves, composite Gauss-Legendre
//! panels, monotone-mesh interpolation, divided-difference stencils, an
//! embedded Runge-Kutta 5(4) integrator, and least-squares line fits.
//!
//! These are deliberately small, allocation-light routines; the heavier
//! domain logic in the neighboring modules composes them.

use crate::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Solves a tridiagonal system in O(n) by the Thomas algorithm.
///
/// `sub` and `sup` have length n-1 (sub[i] multiplies x[i] in row i+1,
/// sup[i] multiplies x[i+1] in row i). No pivoting: callers supply
/// diagonally dominant systems (implicit diffusion rows), which the
/// algorithm handles stably. Fails on a vanishing pivot or non-finite
/// input rather than returning garbage.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || sub.len() != n - 1 || sup.len() != n - 1 || rhs.len() != n {
        return Err(Error::SolveFailure(format!(
            "tridiagonal shape mismatch: diag {}, sub {}, sup {}, rhs {}",
            n,
            sub.len(),
            sup.len(),
            rhs.len()
        )));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::SolveFailure(format!("zero or non-finite pivot at row 0: {pivot}")));
    }
    c[0] = sup.first().copied().unwrap_or(0.0) / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SolveFailure(format!(
                "zero or non-finite pivot at row {i}: {pivot}"
            )));
        }
        if i < n - 1 {
            c[i] = sup[i] / pivot;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let xi = x[i] - c[i] * x[i + 1];
        x[i] = xi;
    }
    Ok(x)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Newton iteration on P_n with the Chebyshev-like initial guess; converges
/// to machine precision in a handful of steps for any practical order.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for k in 0..n.div_ceil(2) {
        let mut x = libm::cos(core::f64::consts::PI * (k as f64 + 0.75) / (nf + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            // Recurrence (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 1..n {
                let jf = j as f64;
                let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = -x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - k] = x;
        weights[n - 1 - k] = weights[k];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// A composite quadrature rule: absolute nodes and weights accumulated over
/// panels. Integration of a closure is a weighted sum.
#[derive(Debug, Clone)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    /// Builds a composite Gauss-Legendre rule over consecutive panels
    /// `[breaks[i], breaks[i+1]]` with `order` points per panel.
    pub fn from_breakpoints(breaks: &[f64], order: usize) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::ParameterError("need at least one panel".into()));
        }
        for w in breaks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::ParameterError(format!(
                    "panel breakpoints must increase: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let (xs, ws) = gauss_legendre(order);
        let panels = breaks.len() - 1;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for w in breaks.windows(2) {
            let half = 0.5 * (w[1] - w[0]);
            let mid = 0.5 * (w[1] + w[0]);
            for (x, wt) in xs.iter().zip(&ws) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
        Ok(PanelRule { nodes, weights })
    }

    /// Integrates a closure over the rule's support.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(x);
        }
        acc
    }
}

/// Geometrically graded breakpoints from `lo` down toward 0 and up to `hi`:
/// returns `{0? no} [tiny, ..., hi]` starting at `hi * ratio^-levels`.
///
/// The first breakpoint is strictly positive; integrands vanishing at the
/// origin lose nothing because the omitted sliver carries no mass at the
/// tolerances used here.
pub fn graded_breaks_toward_zero(hi: f64, levels: u32) -> Vec<f64> {
    assert!(hi > 0.0);
    let mut breaks = Vec::with_capacity(levels as usize + 2);
    breaks.push(0.0);
    for k in (0..=levels).rev() {
        breaks.push(hi * libm::exp2(-(k as f64)));
    }
    breaks
}

/// Locates `x` in the sorted mesh: returns i with mesh[i] <= x <= mesh[i+1],
/// clamped to the end cells for out-of-range arguments.
pub fn bracket(mesh: &[f64], x: f64) -> usize {
    debug_assert!(mesh.len() >= 2);
    let n = mesh.len();
    if x <= mesh[0] {
        return 0;
    }
    if x >= mesh[n - 1] {
        return n - 2;
    }
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if mesh[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Three-point finite-difference slopes on a nonuniform mesh (second order
/// in the interior, one-sided second order at the ends).
pub fn slopes_3pt(mesh: &[f64], values: &[f64]) -> Vec<f64> {
    let n = mesh.len();
    assert_eq!(values.len(), n);
    assert!(n >= 3, "need at least 3 nodes for slopes");
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let hm = mesh[i] - mesh[i - 1];
        let hp = mesh[i + 1] - mesh[i];
        d[i] = -hp / (hm * (hm + hp)) * values[i - 1]
            + (hp - hm) / (hm * hp) * values[i]
            + hm / (hp * (hm + hp)) * values[i + 1];
    }
    // One-sided ends from the quadratic through the first/last three nodes.
    let h0 = mesh[1] - mesh[0];
    let h1 = mesh[2] - mesh[1];
    d[0] = -(2.0 * h0 + h1) / (h0 * (h0 + h1)) * values[0]
        + (h0 + h1) / (h0 * h1) * values[1]
        - h0 / (h1 * (h0 + h1)) * values[2];
    let hm = mesh[n - 2] - mesh[n - 3];
    let hp = mesh[n - 1] - mesh[n - 2];
    d[n - 1] = hp / (hm * (hm + hp)) * values[n - 3]
        - (hm + hp) / (hm * hp) * values[n - 2]
        + (2.0 * hp + hm) / (hp * (hm + hp)) * values[n - 1];
    d
}

/// Second-derivative values by the three-point stencil (exact on local
/// quadratics; second order on smoothly graded meshes).
pub fn second_derivative_3pt(mesh: &[f64], values: &[f64]) -> Vec<f64> {
    let n = mesh.len();
    assert_eq!(values.len(), n);
    assert!(n >= 3);
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        let hm = mesh[i] - mesh[i - 1];
        let hp = mesh[i + 1] - mesh[i];
        d2[i] = 2.0
            * (values[i - 1] / (hm * (hm + hp)) - values[i] / (hm * hp)
                + values[i + 1] / (hp * (hm + hp)));
    }
    d2[0] = d2[1];
    d2[n - 1] = d2[n - 2];
    d2
}

/// Piecewise-cubic Hermite interpolant on a strictly increasing mesh.
///
/// Slopes may be supplied (when the caller knows them analytically) or
/// derived by [`slopes_3pt`]. Evaluation outside the mesh extends with
/// zero: sampled curve data is always compactly supported here.
#[derive(Debug, Clone)]
pub struct SampledFn {
    mesh: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl SampledFn {
    pub fn new(mesh: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if mesh.len() != values.len() {
            return Err(Error::ParameterError(format!(
                "mesh/value length mismatch: {} vs {}",
                mesh.len(),
                values.len()
            )));
        }
        if mesh.len() < 3 {
            return Err(Error::MeshTooCoarse(format!(
                "need >= 3 samples for cubic interpolation, got {}",
                mesh.len()
            )));
        }
        if mesh.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ParameterError("mesh must strictly increase".into()));
        }
        let slopes = slopes_3pt(&mesh, &values);
        Ok(SampledFn { mesh, values, slopes })
    }

    pub fn with_slopes(mesh: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if mesh.len() != values.len() || mesh.len() != slopes.len() {
            return Err(Error::ParameterError("mesh/value/slope length mismatch".into()));
        }
        if mesh.len() < 2 || mesh.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::ParameterError("mesh must strictly increase".into()));
        }
        Ok(SampledFn { mesh, values, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.mesh[0], *self.mesh.last().unwrap())
    }

    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interpolated value; zero outside the sampled support.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_deriv(x).0
    }

    /// Interpolated (value, first derivative); zero outside support.
    pub fn eval_with_deriv(&self, x: f64) -> (f64, f64) {
        let (lo, hi) = self.domain();
        if x < lo || x > hi {
            return (0.0, 0.0);
        }
        let i = bracket(&self.mesh, x);
        let h = self.mesh[i + 1] - self.mesh[i];
        let t = (x - self.mesh[i]) / h;
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let value = h00 * v0 + h10 * m0 + h01 * v1 + h11 * m1;
        let dh00 = 6.0 * t2 - 6.0 * t;
        let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
        let dh01 = -dh00;
        let dh11 = 3.0 * t2 - 2.0 * t;
        let deriv = (dh00 * v0 + dh10 * m0 + dh01 * v1 + dh11 * m1) / h;
        (value, deriv)
    }
}

/// One adaptive Dormand-Prince 5(4) integration of y' = f(t, y).
///
/// Records the solution at every point of `record_at` (which must be
/// strictly increasing and contained in [t0, t_end]) by clamping steps to
/// land exactly on them — at these tolerances dense output buys nothing.
/// `guard` is consulted after every accepted step and turns a diverging
/// trajectory into a clean error.
pub fn integrate_dp54<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    record_at: &[f64],
    rtol: f64,
    atol: f64,
    mut guard: impl FnMut(f64, &[f64; N]) -> Result<()>,
) -> Result<Vec<[f64; N]>> {
    // Butcher tableau (Dormand & Prince 1980), 5th-order solution with
    // embedded 4th-order error estimate.
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    if record_at.is_empty() {
        return Ok(Vec::new());
    }
    if record_at.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::ParameterError("record points must strictly increase".into()));
    }
    let t_end = *record_at.last().unwrap();
    if !(t_end > t0) || record_at[0] < t0 {
        return Err(Error::ParameterError(format!(
            "record points must lie in ({t0}, {}]",
            t_end
        )));
    }

    let mut out = Vec::with_capacity(record_at.len());
    let mut t = t0;
    let mut y = y0;
    let mut k0 = f(t, &y);
    let mut h = ((t_end - t0) * 1e-6).max(1e-12);
    let mut next_record = 0usize;

    // y0 itself may coincide with the first record point.
    while next_record < record_at.len() && record_at[next_record] <= t0 {
        out.push(y);
        next_record += 1;
    }

    let mut rejected_in_a_row = 0u32;
    while next_record < record_at.len() {
        let target = record_at[next_record];
        let mut hitting_record = false;
        if t + h >= target {
            h = target - t;
            hitting_record = true;
        }

        let mut ks = [[0.0; N]; 7];
        ks[0] = k0;
        for stage in 0..6 {
            let mut ys = y;
            for (j, yj) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (m, k) in ks.iter().enumerate().take(stage + 1) {
                    acc += A[stage][m] * k[j];
                }
                *yj += h * acc;
            }
            ks[stage + 1] = f(t + C[stage] * h, &ys);
        }
        // 5th-order solution is the stage-6 argument (FSAL property).
        let mut y5 = y;
        for (j, yj) in y5.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (m, k) in ks.iter().enumerate().take(6) {
                acc += A[5][m] * k[j];
            }
            *yj += h * acc;
        }
        let mut err: f64 = 0.0;
        for j in 0..N {
            let mut e = 0.0;
            for (m, k) in ks.iter().enumerate() {
                e += E[m] * k[j];
            }
            e *= h;
            let scale = atol + rtol * y[j].abs().max(y5[j].abs());
            err = err.max((e / scale).abs());
        }

        if err <= 1.0 {
            t += h;
            y = y5;
            k0 = ks[6];
            guard(t, &y)?;
            if hitting_record {
                out.push(y);
                next_record += 1;
            }
            rejected_in_a_row = 0;
            let grow = (0.9 * libm::pow(err.max(1e-10), -0.2)).min(5.0);
            h *= grow;
        } else {
            rejected_in_a_row += 1;
            if rejected_in_a_row > 60 {
                return Err(Error::NonConvergence(format!(
                    "step control collapsed at t = {t:.6e} (h = {h:.3e}, err = {err:.3e})"
                )));
            }
            h *= (0.9 * libm::pow(err, -0.2)).max(0.1);
        }
        if !h.is_finite() || h <= 0.0 || t + h == t {
            return Err(Error::NonConvergence(format!(
                "step size underflow at t = {t:.6e}"
            )));
        }
    }
    Ok(out)
}

/// Ordinary least squares for y = slope * x + intercept.
///
/// Returns (slope, intercept, slope standard error). The standard error
/// uses the unbiased residual variance; degenerate spans are reported
/// rather than silently producing NaN.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::SpanTooShort(format!(
            "line fit needs >= 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::SpanTooShort("zero abscissa spread in line fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        ss_res += r * r;
    }
    let stderr = libm::sqrt(ss_res / (nf - 2.0) / sxx);
    Ok((slope, intercept, stderr))
}

/// Refines a grid maximum by the parabola through three consecutive
/// samples; returns (arg, value) of the vertex clamped to [x0, x2].
pub fn parabolic_peak(x: [f64; 3], f: [f64; 3]) -> (f64, f64) {
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let (f0, f1, f2) = (f[0], f[1], f[2]);
    let h0 = x1 - x0;
    let h1 = x2 - x1;
    let d0 = (f1 - f0) / h0;
    let d1 = (f2 - f1) / h1;
    let curv = (d1 - d0) / (h0 + h1);
    if curv >= 0.0 || !curv.is_finite() {
        // Not a local max in the parabolic model; keep the middle sample.
        return (x1, f1);
    }
    // Newton form f(x) = f0 + d0 (x-x0) + curv (x-x0)(x-x1) peaks where the
    // derivative d0 + curv (2x - x0 - x1) vanishes.
    let xv = (0.5 * (x0 + x1) - d0 / (2.0 * curv)).clamp(x0, x2);
    (xv, f0 + d0 * (xv - x0) + curv * (xv - x0) * (xv - x1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tridiagonal_reproduces_dense_solution() {
        // Frozen 4x4 system solved by hand elimination.
        let sub = vec![1.0, 2.0, -1.0];
        let diag = vec![4.0, 5.0, 6.0, 5.0];
        let sup = vec![-1.0, 1.0, 2.0];
        let x_true = vec![1.0, -2.0, 3.0, 0.5];
        let rhs = vec![
            4.0 * 1.0 + (-1.0) * (-2.0),
            1.0 * 1.0 + 5.0 * (-2.0) + 1.0 * 3.0,
            2.0 * (-2.0) + 6.0 * 3.0 + 2.0 * 0.5,
            -1.0 * 3.0 + 5.0 * 0.5,
        ];
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn tridiagonal_rejects_singular() {
        let err = solve_tridiagonal(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]);
        assert!(matches!(err, Err(Error::SolveFailure(_))));
    }

    #[test]
    fn gauss_legendre_matches_frozen_tables() {
        // 5-point rule, nodes/weights to 15 digits (classical values).
        let (x, w) = gauss_legendre(5);
        let x_ref = [
            -0.906179845938664,
            -0.538469310105683,
            0.0,
            0.538469310105683,
            0.906179845938664,
        ];
        let w_ref = [
            0.236926885056189,
            0.478628670499366,
            0.568888888888889,
            0.478628670499366,
            0.236926885056189,
        ];
        for i in 0..5 {
            assert!((x[i] - x_ref[i]).abs() < 1e-14, "node {i}");
            assert!((w[i] - w_ref[i]).abs() < 1e-14, "weight {i}");
        }
    }

    #[test]
    fn panels_integrate_polynomials_exactly() {
        let rule =
            PanelRule::from_breakpoints(&[0.0, 0.3, 1.0, 2.5], 8).unwrap();
        // degree 15 is exact for 8-point Gauss.
        let exact = libm::pow(2.5, 16.0) / 16.0;
        let got = rule.integrate(|x| 15.0 * libm::pow(x, 14.0) * x / 15.0);
        assert!((got - exact).abs() / exact < 1e-14);
    }

    #[test]
    fn graded_panels_handle_algebraic_endpoint() {
        // integral_0^1 x^0.83 dx = 1/1.83; grading toward 0 recovers it.
        let breaks = graded_breaks_toward_zero(1.0, 40);
        let rule = PanelRule::from_breakpoints(&breaks[1..], 16).unwrap();
        let got = rule.integrate(|x| libm::pow(x, 0.83));
        let exact = 1.0 / 1.83;
        assert!((got - exact).abs() / exact < 1e-13);
    }

    #[test]
    fn hermite_interpolation_is_fourth_order() {
        let f = |x: f64| libm::sin(1.7 * x) + 0.3 * x * x;
        let build = |n: usize| {
            let mesh: Vec<f64> = (0..=n).map(|i| 2.0 * i as f64 / n as f64).collect();
            let vals: Vec<f64> = mesh.iter().map(|&x| f(x)).collect();
            SampledFn::new(mesh, vals).unwrap()
        };
        let err = |s: &SampledFn| {
            let mut e = 0.0f64;
            for i in 0..400 {
                let x = 0.05 + 1.9 * i as f64 / 399.0;
                e = e.max((s.eval(x) - f(x)).abs());
            }
            e
        };
        let e1 = err(&build(40));
        let e2 = err(&build(80));
        // FD slopes make this ~O(h^3..h^4); halving h must shrink error >= 7x.
        assert!(e1 / e2 > 7.0, "e1 {e1:e}, e2 {e2:e}");
        assert!(e2 < 5e-6, "e2 {e2:e}");
    }

    #[test]
    fn sampled_fn_extends_with_zero() {
        let s = SampledFn::new(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(s.eval(3.5), 0.0);
        assert!((s.eval(2.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn dp54_integrates_exponential_to_tolerance() {
        // y' = -3y, y(0) = 2, exact 2 e^{-3t}.
        let recs: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
        let ys = integrate_dp54(
            |_t, y: &[f64; 1]| [-3.0 * y[0]],
            0.0,
            [2.0],
            &recs,
            1e-11,
            1e-14,
            |_, _| Ok(()),
        )
        .unwrap();
        for (i, y) in ys.iter().enumerate() {
            let exact = 2.0 * libm::exp(-3.0 * recs[i]);
            assert!((y[0] - exact).abs() < 1e-9 * exact.max(1e-3), "at {}", recs[i]);
        }
    }

    #[test]
    fn dp54_guard_stops_blowup() {
        // y' = y^2, y(0)=1 blows up at t=1; guard cuts it off.
        let res = integrate_dp54(
            |_t, y: &[f64; 1]| [y[0] * y[0]],
            0.0,
            [1.0],
            &[2.0],
            1e-8,
            1e-10,
            |t, y| {
                if y[0] > 1e6 {
                    Err(Error::IntegrationBlowup(format!("y exceeded 1e6 at t = {t}")))
                } else {
                    Ok(())
                }
            },
        );
        assert!(matches!(res, Err(Error::IntegrationBlowup(_))));
    }

    #[test]
    fn line_fit_recovers_slope_with_noise_free_data() {
        let xs: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -2.5 * x + 0.7).collect();
        let (m, b, se) = fit_line(&xs, &ys).unwrap();
        assert!((m + 2.5).abs() < 1e-12);
        assert!((b - 0.7).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn parabolic_peak_finds_vertex() {
        // f(x) = 3 - (x - 1.2)^2 sampled off-vertex.
        let f = |x: f64| 3.0 - (x - 1.2) * (x - 1.2);
        let (xv, fv) = parabolic_peak([0.8, 1.1, 1.5], [f(0.8), f(1.1), f(1.5)]);
        assert!((xv - 1.2).abs() < 1e-12);
        assert!((fv - 3.0).abs() < 1e-12);
    }
}
