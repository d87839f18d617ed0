//! Reconstruction and kinematic objectives with exact gradients.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dipr::DiprFrame;
use crate::domain::{Heatmap, HeatmapGrid, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::renderer::{render_joints, FrameGradient, RenderKernelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Bone vs. velocity balance inside the kinematic term.
    pub lambda1: f64,
    /// Reconstruction vs. kinematic balance.
    pub lambda2: f64,
    /// Fraction of cells kept by each mask.
    pub top_fraction_t: f64,
    /// Logistic temperature relative to the threshold value.
    pub softness_tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.3,
            top_fraction_t: 0.10,
            softness_tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("loss.{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.top_fraction_t > 0.0 && self.top_fraction_t <= 1.0) {
            return Err(Error::Config(format!(
                "loss.top_fraction_t must be in (0, 1], got {}",
                self.top_fraction_t
            )));
        }
        if !(self.softness_tau > 0.0 && self.softness_tau.is_finite()) {
            return Err(Error::Config(format!("loss.softness_tau must be > 0, got {}", self.softness_tau)));
        }
        Ok(())
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    pub(crate) fn value(self) -> f64 {
        self.s + self.c
    }
}

/// Number of cells a top-fraction mask keeps.
pub fn top_count(cells: usize, top_fraction: f64) -> usize {
    ((top_fraction * cells as f64).ceil() as usize).clamp(1, cells.max(1))
}

/// Threshold value and the cell holding it: the `⌈T·N⌉`-th largest value,
/// ties broken by ascending flat index.
pub fn top_threshold(values: &[f64], top_fraction: f64) -> (f64, usize) {
    let k = top_count(values.len(), top_fraction);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.select_nth_unstable_by(k - 1, |&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let cell = idx[k - 1];
    (values[cell], cell)
}

/// Binary mask semantics shared with the hard IoU metric: every cell with
/// value ≥ t, or (when t = 0) every strictly positive cell.
pub fn hard_mask(values: &[f64], top_fraction: f64) -> Vec<bool> {
    let (t, _) = top_threshold(values, top_fraction);
    values
        .iter()
        .map(|&v| if t > 0.0 { v >= t } else { v > 0.0 })
        .collect()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SoftMask {
    m: Vec<f64>,
    /// dM/dh per cell; empty for hard masks.
    dm_dh: Vec<f64>,
}

fn soft_mask(values: &[f64], t: f64, w: &LossWeights, with_grad: bool) -> SoftMask {
    if !(t > 0.0) {
        return SoftMask {
            m: values.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
            dm_dh: Vec::new(),
        };
    }
    let s = w.softness_tau * t;
    let mut m = Vec::with_capacity(values.len());
    let mut dm_dh = Vec::new();
    for &v in values {
        let y = logistic((v - t) / s);
        m.push(y);
        if with_grad {
            dm_dh.push(y * (1.0 - y) / s);
        }
    }
    SoftMask { m, dm_dh }
}

/// `(I, U)` with product intersection and `Σa² + Σb² − I` union.
fn overlap(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut i, mut aa, mut bb) = (Sum::default(), Sum::default(), Sum::default());
    for (&x, &y) in a.iter().zip(b) {
        i.add(x * y);
        aa.add(x * x);
        bb.add(y * y);
    }
    let i = i.value();
    (i, aa.value() + bb.value() - i)
}

/// Mask thresholds `(t_dipr, t_obs)` of a heatmap pair.
pub fn recon_thresholds(h_dipr: &Heatmap, h_obs: &Heatmap, w: &LossWeights) -> Result<(f64, f64)> {
    h_dipr.check_same_grid(h_obs)?;
    w.validate()?;
    Ok((
        top_threshold(h_dipr.values(), w.top_fraction_t).0,
        top_threshold(h_obs.values(), w.top_fraction_t).0,
    ))
}

/// Loss at explicit mask thresholds; with_grad also returns dL/dh_dipr.
pub fn recon_loss_at(
    h_dipr: &Heatmap,
    h_obs: &Heatmap,
    w: &LossWeights,
    thresholds: (f64, f64),
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    h_dipr.check_same_grid(h_obs)?;
    w.validate()?;
    let md = soft_mask(h_dipr.values(), thresholds.0, w, with_grad);
    let mo = soft_mask(h_obs.values(), thresholds.1, w, false);
    let n = md.m.len();
    let (inter, union) = overlap(&md.m, &mo.m);
    if !(union > 0.0) {
        return Ok((0.0, if with_grad { vec![0.0; n] } else { Vec::new() }));
    }
    let loss = (1.0 - inter / union).clamp(0.0, 1.0);
    if !with_grad {
        return Ok((loss, Vec::new()));
    }
    let mut adj = vec![0.0; n];
    if md.dm_dh.is_empty() {
        return Ok((loss, adj));
    }
    // dL/dMd_i = -(Mo_i U - I (2 Md_i - Mo_i)) / U².
    let u2 = union * union;
    for i in 0..n {
        adj[i] = -(mo.m[i] * union - inter * (2.0 * md.m[i] - mo.m[i])) / u2 * md.dm_dh[i];
    }
    Ok((loss, adj))
}

/// `1 − soft IoU` of the top-fraction masks of both heatmaps.
pub fn recon_loss(h_dipr: &Heatmap, h_obs: &Heatmap, w: &LossWeights) -> Result<f64> {
    let t = recon_thresholds(h_dipr, h_obs, w)?;
    Ok(recon_loss_at(h_dipr, h_obs, w, t, false)?.0)
}

/// Loss and its gradient with respect to every cell of `h_dipr`, with both
/// thresholds held constant.
pub fn recon_loss_with_adjoint(h_dipr: &Heatmap, h_obs: &Heatmap, w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    let t = recon_thresholds(h_dipr, h_obs, w)?;
    recon_loss_at(h_dipr, h_obs, w, t, true)
}

fn check_frame(frame: &DiprFrame, sk: &Skeleton) -> Result<()> {
    if frame.joints.len() != sk.len() {
        return Err(Error::Shape(format!(
            "frame has {} joints, skeleton {}",
            frame.joints.len(),
            sk.len()
        )));
    }
    Ok(())
}

fn add_bone(frame: &DiprFrame, sk: &Skeleton, scale: f64, grad: Option<&mut FrameGradient>) -> f64 {
    let mut total = Sum::default();
    let mut grad = grad;
    for (e, &(i, j)) in sk.edges().iter().enumerate() {
        let d = frame.joints[i].position_m - frame.joints[j].position_m;
        let len = d.norm();
        let res = len - sk.bone_lengths()[e];
        total.add(res * res);
        if let Some(g) = grad.as_deref_mut() {
            if len > 0.0 {
                let gi = d * (2.0 * res / len * scale);
                g.joints[i].position += gi;
                g.joints[j].position -= gi;
            }
        }
    }
    total.value()
}

fn add_velocity(frame: &DiprFrame, sk: &Skeleton, scale: f64, grad: Option<&mut FrameGradient>) -> Result<f64> {
    let mut total = Sum::default();
    let mut grad = grad;
    for &(i, j) in sk.edges() {
        let d = frame.joints[i].position_m - frame.joints[j].position_m;
        let len = d.norm();
        if !(len > 1e-6) {
            return Err(Error::Domain(format!("joints {i} and {j} coincide")));
        }
        let e = d / len;
        let dv = frame.joints[i].velocity_mps - frame.joints[j].velocity_mps;
        let w = dv.dot(&e);
        total.add(w * w);
        if let Some(g) = grad.as_deref_mut() {
            let gv = e * (2.0 * w * scale);
            g.joints[i].velocity += gv;
            g.joints[j].velocity -= gv;
            let gp: Vector3<f64> = (dv - e * w) * (2.0 * w * scale / len);
            g.joints[i].position += gp;
            g.joints[j].position -= gp;
        }
    }
    Ok(total.value())
}

/// `Σ (‖pᵢ − pⱼ‖ − lᵢⱼ)²` over skeleton edges.
pub fn bone_loss(frame: &DiprFrame, sk: &Skeleton) -> Result<f64> {
    check_frame(frame, sk)?;
    Ok(add_bone(frame, sk, 1.0, None))
}

/// Squared relative velocity along each bone.
pub fn velocity_loss(frame: &DiprFrame, sk: &Skeleton) -> Result<f64> {
    check_frame(frame, sk)?;
    add_velocity(frame, sk, 1.0, None)
}

pub fn kine_loss(frame: &DiprFrame, sk: &Skeleton, w: &LossWeights) -> Result<f64> {
    Ok(w.lambda1 * bone_loss(frame, sk)? + (1.0 - w.lambda1) * velocity_loss(frame, sk)?)
}

/// Kinematic loss with its gradient (non-zero only for positions and
/// velocities).
pub fn kine_loss_with_gradient(frame: &DiprFrame, sk: &Skeleton, w: &LossWeights) -> Result<(f64, FrameGradient)> {
    check_frame(frame, sk)?;
    let mut g = FrameGradient::zeros_like(frame);
    let bone = add_bone(frame, sk, w.lambda1, Some(&mut g));
    let vel = add_velocity(frame, sk, 1.0 - w.lambda1, Some(&mut g))?;
    Ok((w.lambda1 * bone + (1.0 - w.lambda1) * vel, g))
}

/// Total objective without gradients. `thresholds` pins the mask
/// thresholds, which is the function the analytic gradient differentiates.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_value(
    frame: &DiprFrame,
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    w: &LossWeights,
    thresholds: Option<(f64, f64)>,
) -> Result<f64> {
    w.validate()?;
    check_frame(frame, sk)?;
    let state = render_joints(&frame.joints, rp, grid, kp)?;
    let t = match thresholds {
        Some(t) => t,
        None => recon_thresholds(state.heatmap(), h_obs, w)?,
    };
    let recon = recon_loss_at(state.heatmap(), h_obs, w, t, false)?.0;
    let kine = w.lambda1 * add_bone(frame, sk, 1.0, None) + (1.0 - w.lambda1) * add_velocity(frame, sk, 1.0, None)?;
    Ok(w.lambda2 * recon + (1.0 - w.lambda2) * kine)
}

/// Individual terms of one total-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub bone: f64,
    pub velocity: f64,
    /// Mask thresholds `(t_dipr, t_obs)` used for `recon`.
    pub thresholds: (f64, f64),
}

/// Total objective with gradient over every joint parameter.
pub fn total_loss(
    frame: &DiprFrame,
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    w: &LossWeights,
) -> Result<(f64, FrameGradient)> {
    let (b, g) = total_loss_breakdown(frame, h_obs, sk, rp, grid, kp, w)?;
    Ok((b.total, g))
}

pub fn total_loss_breakdown(
    frame: &DiprFrame,
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    w: &LossWeights,
) -> Result<(LossBreakdown, FrameGradient)> {
    total_loss_at(frame, h_obs, sk, rp, grid, kp, w, None)
}

/// As [`total_loss_breakdown`], optionally with pinned mask thresholds.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_at(
    frame: &DiprFrame,
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    w: &LossWeights,
    thresholds: Option<(f64, f64)>,
) -> Result<(LossBreakdown, FrameGradient)> {
    w.validate()?;
    check_frame(frame, sk)?;
    let state = render_joints(&frame.joints, rp, grid, kp)?;
    let thresholds = match thresholds {
        Some(t) => t,
        None => recon_thresholds(state.heatmap(), h_obs, w)?,
    };
    let (recon, mut adj) = recon_loss_at(state.heatmap(), h_obs, w, thresholds, true)?;
    for a in &mut adj {
        *a *= w.lambda2;
    }
    let mut g = FrameGradient {
        joints: state.backward(&frame.joints, &adj)?,
    };
    let kscale = 1.0 - w.lambda2;
    let bone = add_bone(frame, sk, kscale * w.lambda1, Some(&mut g));
    let velocity = add_velocity(frame, sk, kscale * (1.0 - w.lambda1), Some(&mut g))?;
    let kine = w.lambda1 * bone + (1.0 - w.lambda1) * velocity;
    let total = w.lambda2 * recon + kscale * kine;
    Ok((
        LossBreakdown {
            total,
            recon,
            bone,
            velocity,
            thresholds,
        },
        g,
    ))
}
