//! Distance between hyperbolic manifolds of different curvature and the
//! intermediate curvature that minimizes the summed distance to two of them.
//!
//! `D(c_a, c_b) = (−√c_a + 2√c_b · cosh((√c_b − √c_a) r)) / (2 √c_a c_b)`
//! is asymmetric: `c_a` is the reference manifold and `c_b` the candidate.
//! `J_c(c3) = D(c1, c3) + D(c2, c3)` is minimized over `[min(c1,c2), max(c1,c2)]`
//! by golden-section search, and the minimizer is differentiated with the
//! implicit function theorem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorentz::{norm_sq, Curvature, DEFAULT_C_MIN};

/// Golden ratio conjugate `(√5 − 1) / 2`.
pub const GOLDEN_CONJUGATE: f64 = 0.618_033_988_749_894_9;
/// Default absolute tolerance of the curvature search.
pub const DEFAULT_TOL: f64 = 1e-8;
/// `cosh` arguments above this are reported as overflow.
pub const COSH_LIMIT: f64 = 700.0;
/// Stationarity target for the refined minimizer, relative to `max(1, |J_c|)`.
pub const STATIONARITY_TOL: f64 = 1e-8;

const SINGULAR_HESSIAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSource {
    Fixed,
    BatchComputed,
}

/// Norm of the tangent-space feature midpoint entering the manifold distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusParameter {
    pub r: f64,
    pub source: RadiusSource,
}

impl RadiusParameter {
    pub fn fixed(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::contract(format!("radius must be positive and finite, got {r}")));
        }
        Ok(RadiusParameter { r, source: RadiusSource::Fixed })
    }

    /// Raises `r` to the certificate threshold if it falls below it. Returns
    /// the (possibly) adjusted radius and whether clamping happened.
    pub fn clamp_to(self, cert: &ConvexityCertificate) -> (Self, bool) {
        if self.r < cert.r_min_star {
            (RadiusParameter { r: cert.r_min_star, ..self }, true)
        } else {
            (self, false)
        }
    }
}

/// Norm of the arithmetic mean of tangent-space features.
///
/// The result may be zero (cancelling features); callers clamp it against a
/// [`ConvexityCertificate`] before use.
pub fn compute_r<V: AsRef<[f64]>>(tangent_features: &[V]) -> Result<RadiusParameter> {
    let first = tangent_features
        .first()
        .ok_or_else(|| Error::contract("compute_r needs at least one feature"))?
        .as_ref();
    let mut mean = vec![0.0; first.len()];
    for f in tangent_features {
        let f = f.as_ref();
        if f.len() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: f.len() });
        }
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    let n = tangent_features.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(RadiusParameter { r: norm_sq(&mean).sqrt(), source: RadiusSource::BatchComputed })
}

fn cosh_guard(arg: f64) -> Result<()> {
    if arg.abs() > COSH_LIMIT || !arg.is_finite() {
        Err(Error::Overflow(format!("cosh argument {arg} exceeds {COSH_LIMIT}")))
    } else {
        Ok(())
    }
}

pub fn manifold_distance(c_a: Curvature, c_b: Curvature, r: RadiusParameter) -> Result<f64> {
    let (sa, sb) = (c_a.sqrt(), c_b.sqrt());
    let arg = (sb - sa) * r.r;
    cosh_guard(arg)?;
    Ok((-sa + 2.0 * sb * arg.cosh()) / (2.0 * sa * c_b.get()))
}

pub fn objective_jc(c3: Curvature, c1: Curvature, c2: Curvature, r: RadiusParameter) -> Result<f64> {
    Ok(manifold_distance(c1, c3, r)? + manifold_distance(c2, c3, r)?)
}

/// `D(a, b)` with `∂D/∂b`, `∂²D/∂b²`, `∂²D/∂b∂a`.
#[derive(Debug, Clone, Copy)]
struct DistanceParts {
    value: f64,
    db: f64,
    dbb: f64,
    dba: f64,
}

fn distance_parts(a: f64, b: f64, r: f64) -> DistanceParts {
    let (sa, sb) = (a.sqrt(), b.sqrt());
    let z = (sb - sa) * r;
    let (ch, sh) = (z.cosh(), z.sinh());
    let value = -0.5 / b + ch / (sa * sb);
    // ∂D/∂b = g / (2 √a b²)
    let g = sa - sb * ch + b * r * sh;
    let db = g / (2.0 * sa * b * b);
    let g_b = -ch / (2.0 * sb) + 0.5 * r * sh + 0.5 * r * r * sb * ch;
    let dbb = g_b / (2.0 * sa * b * b) - g / (sa * b * b * b);
    let g_a = (1.0 + r * sb * sh - r * r * b * ch) / (2.0 * sa);
    let dba = g_a / (2.0 * sa * b * b) - g / (4.0 * a * sa * b * b);
    DistanceParts { value, db, dbb, dba }
}

/// First and mixed second derivatives of `J_c` at `c3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JcDerivatives {
    /// `∂J_c/∂c3`
    pub d1: f64,
    /// `∂²J_c/∂c3²`
    pub d2: f64,
    /// `∂²J_c/∂c3∂c1`
    pub d_c3c1: f64,
    /// `∂²J_c/∂c3∂c2`
    pub d_c3c2: f64,
}

pub fn jc_derivatives(c3: Curvature, c1: Curvature, c2: Curvature, r: RadiusParameter) -> Result<JcDerivatives> {
    let s3 = c3.sqrt();
    cosh_guard((s3 - c1.sqrt()) * r.r)?;
    cosh_guard((s3 - c2.sqrt()) * r.r)?;
    let p1 = distance_parts(c1.get(), c3.get(), r.r);
    let p2 = distance_parts(c2.get(), c3.get(), r.r);
    Ok(JcDerivatives { d1: p1.db + p2.db, d2: p1.dbb + p2.dbb, d_c3c1: p1.dba, d_c3c2: p2.dba })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenSectionResult {
    pub x_star: f64,
    pub f_star: f64,
    pub iterations: usize,
}

/// Number of golden-section iterations needed to shrink `[low, high]` below `tol`.
pub fn golden_section_iterations(low: f64, high: f64, tol: f64) -> usize {
    let ratio = (high - low) / tol;
    if ratio <= 1.0 {
        0
    } else {
        (ratio.ln() / (1.0 / GOLDEN_CONJUGATE).ln()).ceil() as usize
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[low, high]`.
///
/// Runs exactly [`golden_section_iterations`] steps, each shrinking the
/// bracket by [`GOLDEN_CONJUGATE`], and returns the midpoint of the final
/// bracket.
pub fn golden_section_minimize<F>(mut f: F, low: f64, high: f64, tol: f64) -> Result<GoldenSectionResult>
where
    F: FnMut(f64) -> f64,
{
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::contract(format!("golden section needs low < high, got [{low}, {high}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::contract(format!("tolerance must be positive, got {tol}")));
    }
    let mut eval = |x: f64| -> Result<f64> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NumericDomain(format!("objective is not finite at {x}")))
        }
    };
    let iterations = golden_section_iterations(low, high, tol);
    let (mut a, mut b) = (low, high);
    let mut x1 = b - GOLDEN_CONJUGATE * (b - a);
    let mut x2 = a + GOLDEN_CONJUGATE * (b - a);
    let (mut f1, mut f2) = (eval(x1)?, eval(x2)?);
    for _ in 0..iterations {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN_CONJUGATE * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN_CONJUGATE * (b - a);
            f2 = eval(x2)?;
        }
    }
    let x_star = 0.5 * (a + b);
    Ok(GoldenSectionResult { x_star, f_star: eval(x_star)?, iterations })
}

/// Terms of the sufficient radius condition for convexity of `J_c`.
///
/// `Low` / `High` refer to `min(c1,c2)` / `max(c1,c2)`; `L = √low − √c_min`,
/// `M_min = √high − √c_min`, `M = √high − √low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    InvSqrtLow,
    TwoOverL,
    LogOverL,
    InvSqrtHigh,
    TwoOverMmin,
    LogOverMmin,
    FourOverM,
    ThreeOverSqrtHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub r_min_star: f64,
    pub binding_term: BindingTerm,
    /// Terms removed because their denominator vanished (`L = 0` or `M = 0`).
    pub dropped_terms: Vec<BindingTerm>,
    /// The radius checked with [`ConvexityCertificate::evaluate`], if any.
    pub radius: Option<f64>,
    /// `radius >= r_min_star`; false until a radius is evaluated.
    pub satisfied: bool,
}

impl ConvexityCertificate {
    pub fn evaluate(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self.satisfied = r >= self.r_min_star;
        self
    }
}

/// Sufficient radius for strict convexity of `J_c` on the curvature bracket.
pub fn r_min_threshold(c1: Curvature, c2: Curvature, c_min: Curvature) -> Result<ConvexityCertificate> {
    let (lo, hi) = if c1 <= c2 { (c1.get(), c2.get()) } else { (c2.get(), c1.get()) };
    let cm = c_min.get();
    if cm > lo {
        return Err(Error::contract(format!("c_min = {cm} exceeds min(c1, c2) = {lo}")));
    }
    let (slo, shi, scm) = (lo.sqrt(), hi.sqrt(), cm.sqrt());
    let cm32 = cm * scm;
    let l = slo - scm;
    let m_min = shi - scm;
    let m = shi - slo;

    let mut terms: Vec<(BindingTerm, f64)> = vec![(BindingTerm::InvSqrtLow, 1.0 / slo)];
    let mut dropped = Vec::new();
    if l > 0.0 {
        terms.push((BindingTerm::TwoOverL, 2.0 / l));
        terms.push((BindingTerm::LogOverL, (12.0 * slo / (cm32 * l * l)).ln() / l));
    } else {
        dropped.extend([BindingTerm::TwoOverL, BindingTerm::LogOverL]);
    }
    if m > 0.0 {
        terms.push((BindingTerm::InvSqrtHigh, 1.0 / shi));
        terms.push((BindingTerm::TwoOverMmin, 2.0 / m_min));
        terms.push((BindingTerm::LogOverMmin, (12.0 * shi / (cm32 * m_min * m_min)).ln() / m_min));
        terms.push((BindingTerm::FourOverM, 4.0 / m));
        terms.push((BindingTerm::ThreeOverSqrtHigh, 3.0 / shi));
    } else {
        dropped.extend([
            BindingTerm::InvSqrtHigh,
            BindingTerm::TwoOverMmin,
            BindingTerm::LogOverMmin,
            BindingTerm::FourOverM,
            BindingTerm::ThreeOverSqrtHigh,
        ]);
    }
    let (binding_term, r_min_star) = terms
        .into_iter()
        .fold((BindingTerm::InvSqrtLow, f64::NEG_INFINITY), |best, t| if t.1 > best.1 { t } else { best });
    Ok(ConvexityCertificate { r_min_star, binding_term, dropped_terms: dropped, radius: None, satisfied: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub low: f64,
    pub high: f64,
}

/// The intermediate curvature with its implicit derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntermediateSolution {
    pub c3_star: Curvature,
    pub dc3_dc1: f64,
    pub dc3_dc2: f64,
    pub objective_value: f64,
    pub bracket: Bracket,
    pub iterations: usize,
    /// `|∂J_c/∂c3|` at `c3_star`.
    pub stationarity_residual: f64,
    pub r_min_star: f64,
    /// False when the radius is below the convexity threshold; the solver
    /// still runs but uniqueness is no longer guaranteed.
    pub certified: bool,
}

/// Minimizes `J_c` over `[min(c1,c2), max(c1,c2)]` and differentiates the
/// minimizer with respect to `c1` and `c2`.
///
/// The golden-section result is refined by safeguarded Newton steps on
/// `∂J_c/∂c3`; golden section alone cannot resolve the minimizer below
/// `√(ε |J_c| / J_c'')` because the objective is flat there.
pub fn solve_intermediate(c1: Curvature, c2: Curvature, r: RadiusParameter, tol: f64) -> Result<IntermediateSolution> {
    let floor = DEFAULT_C_MIN.min(c1.get()).min(c2.get());
    solve_intermediate_with_floor(c1, c2, r, tol, Curvature::from_raw(floor))
}

pub fn solve_intermediate_with_floor(
    c1: Curvature,
    c2: Curvature,
    r: RadiusParameter,
    tol: f64,
    c_min: Curvature,
) -> Result<IntermediateSolution> {
    if !(r.r.is_finite() && r.r > 0.0) {
        return Err(Error::contract(format!("radius must be positive, got {}", r.r)));
    }
    let cert = r_min_threshold(c1, c2, c_min)?.evaluate(r.r);
    let (lo, hi) = if c1 <= c2 { (c1.get(), c2.get()) } else { (c2.get(), c1.get()) };
    let at = Curvature::from_raw;
    // The cosh arguments are largest at the bracket ends.
    objective_jc(at(lo), c1, c2, r)?;
    objective_jc(at(hi), c1, c2, r)?;

    let (mut x, iterations) = if hi - lo <= tol {
        (0.5 * (lo + hi), 0)
    } else {
        let gs = golden_section_minimize(|x| distance_parts(c1.get(), x, r.r).value + distance_parts(c2.get(), x, r.r).value, lo, hi, tol)?;
        (gs.x_star, gs.iterations)
    };

    if hi > lo {
        x = newton_polish(x, lo, hi, |x| {
            let (p1, p2) = (distance_parts(c1.get(), x, r.r), distance_parts(c2.get(), x, r.r));
            (p1.value + p2.value, p1.db + p2.db, p1.dbb + p2.dbb)
        });
    }

    let c3 = at(x);
    let objective_value = objective_jc(c3, c1, c2, r)?;
    let d = jc_derivatives(c3, c1, c2, r)?;
    if d.d2.abs() < SINGULAR_HESSIAN || !d.d2.is_finite() {
        return Err(Error::SingularHessian { c3: x, value: d.d2 });
    }
    Ok(IntermediateSolution {
        c3_star: c3,
        dc3_dc1: -d.d_c3c1 / d.d2,
        dc3_dc2: -d.d_c3c2 / d.d2,
        objective_value,
        bracket: Bracket { low: lo, high: hi },
        iterations,
        stationarity_residual: d.d1.abs(),
        r_min_star: cert.r_min_star,
        certified: cert.satisfied,
    })
}

/// Newton iterations on the derivative, kept inside `[lo, hi]` and accepted
/// only while they reduce `|f'|`.
fn newton_polish<F>(mut x: f64, lo: f64, hi: f64, f: F) -> f64
where
    F: Fn(f64) -> (f64, f64, f64),
{
    let (mut val, mut d1, mut d2) = f(x);
    for _ in 0..50 {
        if d1.abs() <= 0.01 * STATIONARITY_TOL * val.abs().max(1.0) || !(d2 > 0.0) {
            break;
        }
        let next = (x - d1 / d2).clamp(lo, hi);
        if next == x {
            break;
        }
        let (nv, nd1, nd2) = f(next);
        if !(nd1.abs() < d1.abs()) {
            break;
        }
        (x, val, d1, d2) = (next, nv, nd1, nd2);
    }
    x
}

/// `A(y) = arcosh²(y) − 2 arcosh(y) y / √(y² − 1)`.
pub fn taylor_a(y: f64) -> f64 {
    let ac = y.acosh();
    ac * ac - 2.0 * ac * y / (y * y - 1.0).sqrt()
}

/// `B(y) = 2 arcosh(y) / √(y² − 1)`.
pub fn taylor_b(y: f64) -> f64 {
    2.0 * y.acosh() / (y * y - 1.0).sqrt()
}

/// Root of `A(y) + B(y)/2` on `[1 + 1e-6, 10]`, the Taylor anchor that makes
/// the approximate manifold distance stationary at equal curvatures.
pub fn solve_y1_star() -> Result<f64> {
    let f = |y: f64| taylor_a(y) + 0.5 * taylor_b(y);
    let (mut lo, mut hi) = (1.0 + 1e-6, 10.0);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return Err(Error::RootBracket { low: lo, high: hi });
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
