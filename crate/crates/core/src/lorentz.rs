//! Lorentz model of hyperbolic space with constant curvature `-c`.
//!
//! Points live on the upper sheet `<x, x>_L = -1/c` and are stored as
//! ambient vectors `[space..., time]`. Every operation comes in two flavours:
//! a typed one working on [`LorentzPoint`] / [`TangentVector`], and a raw one
//! over ambient slices plus an explicit curvature, which also exposes
//! vector-Jacobian products for the training code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on curvature magnitudes.
pub const DEFAULT_C_MIN: f64 = 1e-4;
/// Hyperboloid membership and tangency tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// How far an arcosh / sqrt argument may fall outside its domain before the
/// input is rejected instead of clamped.
pub const DOMAIN_SLACK: f64 = 1e-6;
/// Below this Lorentz norm, `sinh(a)/a` is replaced by its limit 1.
pub const SERIES_SWITCH: f64 = 1e-8;
/// Aperture constant `k` of the entailment cone.
pub const DEFAULT_APERTURE_K: f64 = 0.1;

const DEGENERATE_EPS: f64 = 1e-12;

/// Magnitude of the negative curvature, bounded below by a positive floor.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        Self::with_floor(c, DEFAULT_C_MIN)
    }

    pub fn with_floor(c: f64, floor: f64) -> Result<Self> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(Error::contract(format!("curvature floor must be positive, got {floor}")));
        }
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::contract(format!("curvature must be positive and finite, got {c}")));
        }
        if c < floor {
            return Err(Error::contract(format!("curvature {c} is below the floor {floor}")));
        }
        Ok(Curvature(c))
    }

    /// For values already known to lie between two valid curvatures.
    pub(crate) fn from_raw(c: f64) -> Self {
        debug_assert!(c.is_finite() && c > 0.0);
        Curvature(c)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// A point on the hyperboloid of curvature `-c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzPoint {
    /// Lifts a space component onto the hyperboloid, solving for the time coordinate.
    pub fn from_space(space: &[f64], c: Curvature) -> Result<Self> {
        check_finite(space, "space coordinates")?;
        let time = (1.0 / c.get() + norm_sq(space)).sqrt();
        let mut coords = space.to_vec();
        coords.push(time);
        Ok(LorentzPoint { coords, curvature: c })
    }

    /// Wraps an ambient vector, checking hyperboloid membership.
    pub fn from_ambient(ambient: &[f64], c: Curvature) -> Result<Self> {
        if ambient.len() < 2 {
            return Err(Error::contract("ambient vector needs at least one space and one time coordinate"));
        }
        check_finite(ambient, "ambient coordinates")?;
        let time = ambient[ambient.len() - 1];
        let residual = minkowski(ambient, ambient) + 1.0 / c.get();
        if time <= 0.0 || residual.abs() > MEMBERSHIP_TOL * time.powi(2).max(1.0) {
            return Err(Error::contract(format!(
                "point is not on the hyperboloid of curvature {} (residual {residual:e})",
                c.get()
            )));
        }
        Ok(LorentzPoint { coords: ambient.to_vec(), curvature: c })
    }

    pub fn origin(dim: usize, c: Curvature) -> Self {
        let mut coords = vec![0.0; dim + 1];
        coords[dim] = 1.0 / c.sqrt();
        LorentzPoint { coords, curvature: c }
    }

    /// Space dimension `n` (the ambient dimension is `n + 1`).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn ambient(&self) -> &[f64] {
        &self.coords
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    pub fn time(&self) -> f64 {
        self.coords[self.dim()]
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// `|‖space‖² − time² + 1/c|`.
    pub fn membership_residual(&self) -> f64 {
        (minkowski(&self.coords, &self.coords) + 1.0 / self.curvature.get()).abs()
    }
}

/// An ambient vector tangent to the hyperboloid at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    ambient: Vec<f64>,
    base: LorentzPoint,
}

impl TangentVector {
    pub fn new(base: LorentzPoint, ambient: Vec<f64>) -> Result<Self> {
        check_dims(base.ambient(), &ambient)?;
        check_finite(&ambient, "tangent vector")?;
        let scale = base.time().abs().max(1.0) * norm_sq(&ambient).sqrt().max(1.0);
        let dot = minkowski(base.ambient(), &ambient);
        if dot.abs() > MEMBERSHIP_TOL * scale {
            return Err(Error::contract(format!("vector is not tangent at the base point (<x,u>_L = {dot:e})")));
        }
        Ok(TangentVector { ambient, base })
    }

    /// Builds a tangent vector at `base` from its space part alone; the time
    /// component is solved from the tangency constraint.
    pub fn from_space(base: LorentzPoint, space: &[f64]) -> Result<Self> {
        check_dims(base.space(), space)?;
        let time = dot(base.space(), space) / base.time();
        let mut ambient = space.to_vec();
        ambient.push(time);
        TangentVector::new(base, ambient)
    }

    pub fn zero(base: LorentzPoint) -> Self {
        TangentVector { ambient: vec![0.0; base.ambient().len()], base }
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    /// `sqrt(|<v, v>_L|)`.
    pub fn lorentz_norm(&self) -> f64 {
        minkowski(&self.ambient, &self.ambient).abs().sqrt()
    }

    pub fn into_ambient(self) -> Vec<f64> {
        self.ambient
    }
}

/// Gradient of a scalar (or a vector-Jacobian product) with respect to two
/// ambient arguments, in call order, and the curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub c: f64,
}

// ---------------------------------------------------------------------------
// Typed operations
// ---------------------------------------------------------------------------

/// `<x_space, y_space> − x_time · y_time`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    Ok(minkowski(x, y))
}

pub fn distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    same_manifold(x, y)?;
    distance_raw(x.ambient(), y.ambient(), x.curvature.get())
}

pub fn proj_tangent(x: &LorentzPoint, u: &[f64]) -> Result<TangentVector> {
    check_dims(x.ambient(), u)?;
    check_finite(u, "u")?;
    let ambient = proj_tangent_raw(x.ambient(), u, x.curvature.get());
    Ok(TangentVector { ambient, base: x.clone() })
}

pub fn expm(x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    if v.base != *x {
        return Err(Error::contract("tangent vector is based at a different point"));
    }
    let coords = expm_raw(x.ambient(), v.ambient(), x.curvature.get());
    Ok(LorentzPoint { coords, curvature: x.curvature })
}

/// Tangent vector at `y` pointing along the geodesic to `x`.
pub fn logm(y: &LorentzPoint, x: &LorentzPoint) -> Result<TangentVector> {
    same_manifold(y, x)?;
    let ambient = logm_raw(y.ambient(), x.ambient(), y.curvature.get())?;
    Ok(TangentVector { ambient, base: y.clone() })
}

/// Exponential map at the origin of a Euclidean feature, read as a tangent
/// vector with zero time component.
pub fn expm_origin(c: Curvature, v_space: &[f64]) -> Result<LorentzPoint> {
    check_finite(v_space, "feature")?;
    Ok(LorentzPoint { coords: expm_origin_raw(c.get(), v_space), curvature: c })
}

/// Half-aperture of the entailment cone at `x`.
pub fn half_aperture(x: &LorentzPoint, k: f64) -> Result<f64> {
    half_aperture_raw(x.ambient(), x.curvature.get(), k)
}

/// Exterior angle at `t` between the ray from the origin and the geodesic to `v`.
pub fn exterior_angle(v: &LorentzPoint, t: &LorentzPoint) -> Result<f64> {
    same_manifold(v, t)?;
    exterior_angle_raw(v.ambient(), t.ambient(), t.curvature.get())
}

// ---------------------------------------------------------------------------
// Raw kernels and their derivatives
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() - 1;
    dot(&x[..n], &y[..n]) - x[n] * y[n]
}

/// `J y` with `J = diag(1, …, 1, −1)`, scaled by `s` and accumulated into `out`.
#[inline]
fn add_metric_scaled(out: &mut [f64], y: &[f64], s: f64) {
    let n = y.len() - 1;
    for (o, yi) in out[..n].iter_mut().zip(&y[..n]) {
        *o += s * yi;
    }
    out[n] -= s * y[n];
}

/// Gradient of `<x, y>_L` with respect to `x` and `y`.
pub fn lorentz_inner_grad(x: &[f64], y: &[f64]) -> Result<PairGrad> {
    check_dims(x, y)?;
    let mut lhs = vec![0.0; x.len()];
    let mut rhs = vec![0.0; y.len()];
    add_metric_scaled(&mut lhs, y, 1.0);
    add_metric_scaled(&mut rhs, x, 1.0);
    Ok(PairGrad { lhs, rhs, c: 0.0 })
}

fn arcosh_arg(x: &[f64], y: &[f64], c: f64) -> Result<f64> {
    let q = -c * minkowski(x, y);
    if !q.is_finite() {
        return Err(Error::NumericDomain("non-finite Lorentz inner product".into()));
    }
    if q < 1.0 - DOMAIN_SLACK {
        return Err(Error::NumericDomain(format!("arcosh argument {q} is below 1")));
    }
    Ok(q.max(1.0))
}

pub fn distance_raw(x: &[f64], y: &[f64], c: f64) -> Result<f64> {
    check_dims(x, y)?;
    let q = arcosh_arg(x, y, c)?;
    // rounding in <x,x>_L would otherwise leave arcosh(1 + eps) ~ sqrt(eps)
    if x == y {
        return Ok(0.0);
    }
    Ok(q.acosh() / c.sqrt())
}

/// Distance and its gradient. Undefined at coincident points (the arcosh
/// branch point), which is reported as degenerate geometry.
pub fn distance_grad(x: &[f64], y: &[f64], c: f64) -> Result<(f64, PairGrad)> {
    check_dims(x, y)?;
    let q = arcosh_arg(x, y, c)?;
    let root = (q * q - 1.0).sqrt();
    if root < DEGENERATE_EPS {
        return Err(Error::DegenerateGeometry("distance gradient at coincident points".into()));
    }
    let s = c.sqrt();
    let value = q.acosh() / s;
    let gq = 1.0 / (s * root);
    let mut lhs = vec![0.0; x.len()];
    let mut rhs = vec![0.0; y.len()];
    add_metric_scaled(&mut lhs, y, -c * gq);
    add_metric_scaled(&mut rhs, x, -c * gq);
    let gc = -q.acosh() / (2.0 * c * s) + gq * (-minkowski(x, y));
    Ok((value, PairGrad { lhs, rhs, c: gc }))
}

/// `u + c · x · <x, u>_L`.
pub fn proj_tangent_raw(x: &[f64], u: &[f64], c: f64) -> Vec<f64> {
    let l = minkowski(x, u);
    x.iter().zip(u).map(|(xi, ui)| ui + c * xi * l).collect()
}

/// Vector-Jacobian product of [`proj_tangent_raw`]: `lhs` is w.r.t. `x`, `rhs` w.r.t. `u`.
pub fn proj_tangent_vjp(x: &[f64], u: &[f64], c: f64, g: &[f64]) -> PairGrad {
    let l = minkowski(x, u);
    let gx_dot = dot(g, x);
    let mut rhs = g.to_vec();
    add_metric_scaled(&mut rhs, x, c * gx_dot);
    let mut lhs: Vec<f64> = g.iter().map(|gi| c * l * gi).collect();
    add_metric_scaled(&mut lhs, u, c * gx_dot);
    PairGrad { lhs, rhs, c: l * gx_dot }
}

/// `sinh(a) / a`, with the limit 1 below [`SERIES_SWITCH`].
#[inline]
pub(crate) fn sinhc(a: f64) -> f64 {
    if a < SERIES_SWITCH {
        1.0
    } else {
        a.sinh() / a
    }
}

/// `(d/da sinhc(a)) / a = (a cosh a − sinh a) / a³`.
#[inline]
pub(crate) fn sinhc_slope(a: f64) -> f64 {
    if a < 1e-2 {
        let a2 = a * a;
        1.0 / 3.0 + a2 * (1.0 / 30.0 + a2 * (1.0 / 840.0 + a2 / 45360.0))
    } else {
        (a * a.cosh() - a.sinh()) / (a * a * a)
    }
}

pub fn expm_raw(x: &[f64], v: &[f64], c: f64) -> Vec<f64> {
    let nv = minkowski(v, v).abs().sqrt();
    let a = c.sqrt() * nv;
    let (ch, k) = (a.cosh(), sinhc(a));
    x.iter().zip(v).map(|(xi, vi)| ch * xi + k * vi).collect()
}

/// Vector-Jacobian product of [`expm_raw`]: `lhs` is w.r.t. `x`, `rhs` w.r.t. `v`.
pub fn expm_vjp(x: &[f64], v: &[f64], c: f64, g: &[f64]) -> PairGrad {
    let vv = minkowski(v, v);
    let sigma = if vv < 0.0 { -1.0 } else { 1.0 };
    let nv2 = vv.abs();
    let a = (c * nv2).sqrt();
    let (ch, k, m) = (a.cosh(), sinhc(a), sinhc_slope(a));
    let (gx, gv) = (dot(g, x), dot(g, v));
    let lhs: Vec<f64> = g.iter().map(|gi| ch * gi).collect();
    let mut rhs: Vec<f64> = g.iter().map(|gi| k * gi).collect();
    add_metric_scaled(&mut rhs, v, sigma * c * (k * gx + m * gv));
    let gc = 0.5 * nv2 * (k * gx + m * gv);
    PairGrad { lhs, rhs, c: gc }
}

/// `arcosh(q) / sqrt(q² − 1)` for `q ≥ 1`.
#[inline]
fn log_factor(q: f64) -> f64 {
    let d = q - 1.0;
    if d < 1e-4 {
        1.0 - d / 3.0 + 2.0 * d * d / 15.0 - 2.0 * d * d * d / 35.0
    } else {
        q.acosh() / (q * q - 1.0).sqrt()
    }
}

#[inline]
fn log_factor_slope(q: f64) -> f64 {
    let d = q - 1.0;
    if d < 1e-4 {
        -1.0 / 3.0 + 4.0 * d / 15.0 - 6.0 * d * d / 35.0
    } else {
        (1.0 - q * log_factor(q)) / (q * q - 1.0)
    }
}

fn log_arg(y: &[f64], x: &[f64], c: f64) -> Result<f64> {
    let p = c * minkowski(y, x);
    if !p.is_finite() {
        return Err(Error::NumericDomain("non-finite Lorentz inner product".into()));
    }
    if p * p - 1.0 < -DOMAIN_SLACK || p > 0.0 {
        return Err(Error::NumericDomain(format!("(c<y,x>_L)^2 - 1 = {} is negative", p * p - 1.0)));
    }
    Ok((-p).max(1.0))
}

pub fn logm_raw(y: &[f64], x: &[f64], c: f64) -> Result<Vec<f64>> {
    check_dims(y, x)?;
    let q = log_arg(y, x, c)?;
    let f = log_factor(q);
    Ok(x.iter().zip(y).map(|(xi, yi)| f * (xi - q * yi)).collect())
}

/// Vector-Jacobian product of [`logm_raw`]: `lhs` is w.r.t. the base `y`, `rhs` w.r.t. `x`.
pub fn logm_vjp(y: &[f64], x: &[f64], c: f64, g: &[f64]) -> Result<PairGrad> {
    check_dims(y, x)?;
    let q = log_arg(y, x, c)?;
    let (h, hq) = (log_factor(q), log_factor_slope(q));
    let w: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| xi - q * yi).collect();
    let gq = hq * dot(g, &w) - h * dot(g, y);
    let mut rhs: Vec<f64> = g.iter().map(|gi| h * gi).collect();
    add_metric_scaled(&mut rhs, y, -c * gq);
    let mut lhs: Vec<f64> = g.iter().map(|gi| -q * h * gi).collect();
    add_metric_scaled(&mut lhs, x, -c * gq);
    Ok(PairGrad { lhs, rhs, c: -gq * minkowski(y, x) })
}

/// `[sinhc(√c‖v‖) · v, cosh(√c‖v‖) / √c]`.
pub fn expm_origin_raw(c: f64, v: &[f64]) -> Vec<f64> {
    let s = c.sqrt();
    let a = s * norm_sq(v).sqrt();
    let k = sinhc(a);
    let mut out: Vec<f64> = v.iter().map(|vi| k * vi).collect();
    out.push(a.cosh() / s);
    out
}

/// Vector-Jacobian product of [`expm_origin_raw`] given an upstream ambient
/// gradient. Returns the gradient w.r.t. `v` and w.r.t. `c`.
pub fn expm_origin_vjp(c: f64, v: &[f64], g: &[f64]) -> (Vec<f64>, f64) {
    let n = v.len();
    let (gs, gt) = (&g[..n], g[n]);
    let s = c.sqrt();
    let n2 = norm_sq(v);
    let nrm = n2.sqrt();
    let a = s * nrm;
    let (k, m) = (sinhc(a), sinhc_slope(a));
    let gsv = dot(gs, v);
    // space = k v,  time = cosh(a)/s,  d time/dv = s k v
    let coef = c * m * gsv + gt * s * k;
    let gv: Vec<f64> = gs.iter().zip(v).map(|(gi, vi)| k * gi + coef * vi).collect();
    let dtime_dc = (nrm * a.sinh() / s - a.cosh() / c) / (2.0 * s);
    let gc = 0.5 * m * n2 * gsv + gt * dtime_dc;
    (gv, gc)
}

pub fn half_aperture_raw(x: &[f64], c: f64, k: f64) -> Result<f64> {
    let n = x.len() - 1;
    let rho = norm_sq(&x[..n]).sqrt();
    if rho == 0.0 {
        return Err(Error::DegenerateApex);
    }
    Ok((2.0 * k / (c.sqrt() * rho)).min(1.0).asin())
}

/// Half-aperture with its gradient w.r.t. the ambient point and `c`. The
/// gradient is zero once the aperture saturates at π/2.
pub fn half_aperture_grad(x: &[f64], c: f64, k: f64) -> Result<(f64, Vec<f64>, f64)> {
    let n = x.len() - 1;
    let rho = norm_sq(&x[..n]).sqrt();
    if rho == 0.0 {
        return Err(Error::DegenerateApex);
    }
    let q = 2.0 * k / (c.sqrt() * rho);
    let mut gx = vec![0.0; x.len()];
    if q >= 1.0 {
        return Ok((std::f64::consts::FRAC_PI_2, gx, 0.0));
    }
    let dq = 1.0 / (1.0 - q * q).sqrt();
    let scale = -dq * q / (rho * rho);
    for (g, xi) in gx[..n].iter_mut().zip(&x[..n]) {
        *g = scale * xi;
    }
    Ok((q.asin(), gx, -dq * q / (2.0 * c)))
}

struct AngleParts {
    l: f64,
    p: f64,
    rho: f64,
    root: f64,
    num: f64,
    den: f64,
}

fn angle_parts(v: &[f64], t: &[f64], c: f64) -> Result<AngleParts> {
    check_dims(v, t)?;
    let n = t.len() - 1;
    let rho = norm_sq(&t[..n]).sqrt();
    if rho == 0.0 {
        return Err(Error::DegenerateGeometry("parent point has a zero space component".into()));
    }
    let l = minkowski(t, v);
    let p = c * l;
    if !(p * p > 1.0 + DEGENERATE_EPS) {
        return Err(Error::DegenerateGeometry(format!("(c<t,v>_L)^2 = {} is not above 1", p * p)));
    }
    let root = (p * p - 1.0).sqrt();
    let num = v[n] + t[n] * p;
    Ok(AngleParts { l, p, rho, root, num, den: rho * root })
}

pub fn exterior_angle_raw(v: &[f64], t: &[f64], c: f64) -> Result<f64> {
    let parts = angle_parts(v, t, c)?;
    Ok((parts.num / parts.den).clamp(-1.0, 1.0).acos())
}

/// Exterior angle with its gradient: `lhs` w.r.t. the child `v`, `rhs` w.r.t.
/// the apex `t`. The gradient is zero where the arccos argument is clamped.
pub fn exterior_angle_grad(v: &[f64], t: &[f64], c: f64) -> Result<(f64, PairGrad)> {
    let AngleParts { l, p, rho, root, num, den } = angle_parts(v, t, c)?;
    let n = t.len() - 1;
    let g = num / den;
    let mut lhs = vec![0.0; v.len()];
    let mut rhs = vec![0.0; t.len()];
    if g.abs() >= 1.0 {
        return Ok((g.clamp(-1.0, 1.0).acos(), PairGrad { lhs, rhs, c: 0.0 }));
    }
    let value = g.acos();
    let dphi_dg = -1.0 / ((1.0 - g) * (1.0 + g)).sqrt().max(1e-300);
    // dg = (dnum − g · dden) / den
    let k_num = dphi_dg / den;
    let k_den = -dphi_dg * g / den;
    // den = rho · root(p)
    let dden_dp = rho * p / root;
    let dden_drho = root;
    let (vt, tt) = (v[n], t[n]);
    // num = v_t + t_t · p,  p = c · L,  L = <t_s, v_s> − t_t v_t
    let gp = k_num * tt + k_den * dden_dp;
    // child
    for i in 0..n {
        lhs[i] = gp * c * t[i];
    }
    lhs[n] = k_num - gp * c * tt;
    // apex
    for i in 0..n {
        rhs[i] = gp * c * v[i] + k_den * dden_drho * t[i] / rho;
    }
    rhs[n] = k_num * p - gp * c * vt;
    let gc = gp * l;
    Ok((value, PairGrad { lhs, rhs, c: gc }))
}

// ---------------------------------------------------------------------------
// Small vector helpers
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::contract("ambient vectors need at least two coordinates"));
    }
    Ok(())
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::contract(format!("{what} contain non-finite values")))
    }
}

fn same_manifold(a: &LorentzPoint, b: &LorentzPoint) -> Result<()> {
    if a.curvature != b.curvature {
        return Err(Error::CurvatureMismatch(a.curvature.get(), b.curvature.get()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}
