//! Entailment-cone hinge losses.
//!
//! A child point `v` is entailed by a parent `t` when the exterior angle at
//! `t` does not exceed the cone half-aperture of `t`. Text entails image at
//! each level; within a modality the coarser level entails the finer one.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorentz::{
    expm_origin_raw, expm_origin_vjp, exterior_angle_grad, half_aperture_grad, LorentzPoint, PairGrad,
    DEFAULT_APERTURE_K,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentReport {
    pub per_level_losses: Vec<f64>,
    pub total: f64,
    pub violation_count: usize,
}

impl EntailmentReport {
    pub fn zero() -> Self {
        EntailmentReport { per_level_losses: Vec::new(), total: 0.0, violation_count: 0 }
    }

    pub fn from_levels(per_level_losses: Vec<f64>) -> Self {
        let total = per_level_losses.iter().sum();
        let violation_count = per_level_losses.iter().filter(|&&l| l > 0.0).count();
        EntailmentReport { per_level_losses, total, violation_count }
    }
}

/// Child/parent pair on one manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyPair {
    pub parent: LorentzPoint,
    pub child: LorentzPoint,
}

impl HierarchyPair {
    pub fn new(parent: LorentzPoint, child: LorentzPoint) -> Result<Self> {
        if parent.curvature() != child.curvature() {
            return Err(Error::CurvatureMismatch(parent.curvature().get(), child.curvature().get()));
        }
        if parent.space().iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateApex);
        }
        Ok(HierarchyPair { parent, child })
    }

    pub fn violation(&self) -> Result<f64> {
        cone_violation(&self.child, &self.parent)
    }
}

/// `max(0, φ(child, parent) − ω(parent))`.
pub fn cone_violation(child: &LorentzPoint, parent: &LorentzPoint) -> Result<f64> {
    if child.curvature() != parent.curvature() {
        return Err(Error::CurvatureMismatch(child.curvature().get(), parent.curvature().get()));
    }
    Ok(cone_violation_grad(child.ambient(), parent.ambient(), parent.curvature().get(), DEFAULT_APERTURE_K)?.0)
}

/// Hinge value with its gradient: `lhs` w.r.t. the child, `rhs` w.r.t. the
/// parent, `c` w.r.t. the curvature.
///
/// The inactive side of the hinge has zero gradient, including the boundary.
/// A child coinciding with its parent has no defined angle and counts as
/// entailed.
pub fn cone_violation_grad(child: &[f64], parent: &[f64], c: f64, k: f64) -> Result<(f64, PairGrad)> {
    let (aperture, g_ap, gc_ap) = half_aperture_grad(parent, c, k)?;
    let zero = || PairGrad { lhs: vec![0.0; child.len()], rhs: vec![0.0; parent.len()], c: 0.0 };
    let (angle, g_angle) = match exterior_angle_grad(child, parent, c) {
        Ok(v) => v,
        Err(Error::DegenerateGeometry(_)) => return Ok((0.0, zero())),
        Err(e) => return Err(e),
    };
    let gap = angle - aperture;
    if gap <= 0.0 {
        return Ok((0.0, zero()));
    }
    let rhs = g_angle.rhs.iter().zip(&g_ap).map(|(a, b)| a - b).collect();
    Ok((gap, PairGrad { lhs: g_angle.lhs, rhs, c: g_angle.c - gc_ap }))
}

/// Per-level `cone_violation(v_i, t_i)` with text as the parent.
pub fn cross_modal_loss(visual: &[LorentzPoint], textual: &[LorentzPoint]) -> Result<EntailmentReport> {
    if visual.len() != textual.len() {
        return Err(Error::contract(format!(
            "cross-modal trees differ in depth: {} visual vs {} textual",
            visual.len(),
            textual.len()
        )));
    }
    let levels = visual
        .iter()
        .zip(textual)
        .map(|(v, t)| cone_violation(v, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(EntailmentReport::from_levels(levels))
}

/// Sum of `cone_violation(level i+1, level i)` over adjacent levels.
pub fn in_modal_loss(tree: &[LorentzPoint]) -> Result<EntailmentReport> {
    if tree.len() < 2 {
        return Ok(EntailmentReport::zero());
    }
    let levels = tree
        .windows(2)
        .map(|w| cone_violation(&w[1], &w[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(EntailmentReport::from_levels(levels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricLoss {
    pub total: f64,
    pub text: EntailmentReport,
    pub visual: EntailmentReport,
    pub cross: EntailmentReport,
}

/// `J_Tent(T^{c1}) + J_Vent(V^{c2}) + J_ent(V^{c3}, T^{c3})`, unweighted.
pub fn geometric_loss(
    text_c1: &[LorentzPoint],
    visual_c2: &[LorentzPoint],
    text_c3: &[LorentzPoint],
    visual_c3: &[LorentzPoint],
) -> Result<GeometricLoss> {
    let depth = text_c1.len();
    if [visual_c2.len(), text_c3.len(), visual_c3.len()].iter().any(|&h| h != depth) {
        return Err(Error::contract("feature trees have inconsistent depths"));
    }
    let text = in_modal_loss(text_c1)?;
    let visual = in_modal_loss(visual_c2)?;
    let cross = cross_modal_loss(visual_c3, text_c3)?;
    Ok(GeometricLoss { total: text.total + visual.total + cross.total, text, visual, cross })
}

fn lift_rows(features: ArrayView2<f64>, c: f64) -> Vec<Vec<f64>> {
    features.rows().into_iter().map(|row| expm_origin_raw(c, &row.to_vec())).collect()
}

fn pull_back(features: ArrayView2<f64>, c: f64, ambient_grads: &[Vec<f64>]) -> (Array2<f64>, f64) {
    let mut grad = Array2::zeros(features.raw_dim());
    let mut gc = 0.0;
    for (i, (row, g)) in features.rows().into_iter().zip(ambient_grads).enumerate() {
        let (gv, gci) = expm_origin_vjp(c, &row.to_vec(), g);
        grad.row_mut(i).assign(&ndarray::Array1::from(gv));
        gc += gci;
    }
    (grad, gc)
}

/// In-modal loss of Euclidean features lifted to curvature `c`, with
/// gradients w.r.t. the features and `c`.
#[derive(Debug, Clone)]
pub struct InModalGrad {
    pub report: EntailmentReport,
    pub features: Array2<f64>,
    pub c: f64,
}

pub fn in_modal_lifted(features: ArrayView2<f64>, c: f64) -> Result<InModalGrad> {
    let depth = features.nrows();
    if depth < 2 {
        return Ok(InModalGrad { report: EntailmentReport::zero(), features: Array2::zeros(features.raw_dim()), c: 0.0 });
    }
    let points = lift_rows(features, c);
    let mut ambient = vec![vec![0.0; features.ncols() + 1]; depth];
    let mut levels = Vec::with_capacity(depth - 1);
    let mut gc = 0.0;
    for i in 0..depth - 1 {
        let (loss, g) = cone_violation_grad(&points[i + 1], &points[i], c, DEFAULT_APERTURE_K)?;
        levels.push(loss);
        if loss > 0.0 {
            add_into(&mut ambient[i + 1], &g.lhs);
            add_into(&mut ambient[i], &g.rhs);
            gc += g.c;
        }
    }
    let (grad, gc_lift) = pull_back(features, c, &ambient);
    Ok(InModalGrad { report: EntailmentReport::from_levels(levels), features: grad, c: gc + gc_lift })
}

/// Cross-modal loss of Euclidean features lifted to curvature `c`.
#[derive(Debug, Clone)]
pub struct CrossModalGrad {
    pub report: EntailmentReport,
    pub visual: Array2<f64>,
    pub text: Array2<f64>,
    pub c: f64,
}

pub fn cross_modal_lifted(visual: ArrayView2<f64>, text: ArrayView2<f64>, c: f64) -> Result<CrossModalGrad> {
    if visual.dim() != text.dim() {
        return Err(Error::contract(format!("visual tree {:?} and text tree {:?} differ in shape", visual.dim(), text.dim())));
    }
    let vp = lift_rows(visual, c);
    let tp = lift_rows(text, c);
    let mut gv = Vec::with_capacity(vp.len());
    let mut gt = Vec::with_capacity(tp.len());
    let mut levels = Vec::with_capacity(vp.len());
    let mut gc = 0.0;
    for (v, t) in vp.iter().zip(&tp) {
        let (loss, g) = cone_violation_grad(v, t, c, DEFAULT_APERTURE_K)?;
        levels.push(loss);
        gc += g.c;
        gv.push(g.lhs);
        gt.push(g.rhs);
    }
    let (visual_grad, gc_v) = pull_back(visual, c, &gv);
    let (text_grad, gc_t) = pull_back(text, c, &gt);
    Ok(CrossModalGrad {
        report: EntailmentReport::from_levels(levels),
        visual: visual_grad,
        text: text_grad,
        c: gc + gc_v + gc_t,
    })
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
