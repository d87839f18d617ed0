//! Analysis-by-synthesis fitting of Gaussian joints to an observed heatmap.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cfar::{ca_cfar, CfarConfig};
use crate::dipr::{init_from_coarse, DiprFrame, GaussianJoint, InitConfig};
use crate::domain::{Heatmap, HeatmapGrid, PointCloud, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::geometry::extract_coarse;
use crate::losses::{total_loss, LossWeights};
use crate::renderer::{render, FrameGradient, JointGradient, RenderKernelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_iters: usize,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_velocity: f64,
    pub lr_opacity: f64,
    pub lr_doppler: f64,
    pub adaptive_beta1: f64,
    pub adaptive_beta2: f64,
    pub adaptive_eps: f64,
    /// Step sizes decay exponentially to this fraction of their value at
    /// `max_iters`.
    pub lr_final_ratio: f64,
    /// Relative loss change below which an iteration counts as stalled.
    pub convergence_tol: f64,
    /// Consecutive stalled iterations that end the fit.
    pub convergence_patience: usize,
    /// Loss magnitude below which changes are measured absolutely.
    pub convergence_floor: f64,
    /// The loss is non-negative; reaching this value ends the fit as converged.
    pub target_loss: f64,
    pub scale_min_m: f64,
    pub scale_max_m: f64,
    /// Fraction of cells used for coarse extraction when no init is given.
    pub extraction_top_fraction: f64,
    pub loss_weights: LossWeights,
    pub init: InitConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 500,
            lr_position: 1e-2,
            lr_scale: 1e-3,
            lr_rotation: 1e-2,
            lr_velocity: 1e-2,
            lr_opacity: 1e-2,
            lr_doppler: 1e-2,
            adaptive_beta1: 0.9,
            adaptive_beta2: 0.999,
            adaptive_eps: 1e-8,
            lr_final_ratio: 1.0,
            convergence_tol: 1e-6,
            convergence_patience: 10,
            convergence_floor: 1e-9,
            target_loss: 1e-12,
            scale_min_m: 0.02,
            scale_max_m: 0.5,
            extraction_top_fraction: 0.01,
            loss_weights: LossWeights::default(),
            init: InitConfig::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("fit.max_iters must be >= 1".into()));
        }
        for (name, v) in [
            ("lr_position", self.lr_position),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_velocity", self.lr_velocity),
            ("lr_opacity", self.lr_opacity),
            ("lr_doppler", self.lr_doppler),
            ("adaptive_eps", self.adaptive_eps),
            ("convergence_floor", self.convergence_floor),
            ("lr_final_ratio", self.lr_final_ratio),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("fit.{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("adaptive_beta1", self.adaptive_beta1), ("adaptive_beta2", self.adaptive_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("fit.{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("fit.convergence_tol must be >= 0".into()));
        }
        if !(self.scale_min_m > 0.0 && self.scale_min_m <= self.scale_max_m) {
            return Err(Error::Config("fit.scale_min_m must be in (0, scale_max_m]".into()));
        }
        if !(self.extraction_top_fraction > 0.0 && self.extraction_top_fraction <= 1.0) {
            return Err(Error::Config("fit.extraction_top_fraction must be in (0, 1]".into()));
        }
        self.loss_weights.validate()?;
        self.init.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_loss: f64,
    /// Lowest loss seen; the returned frame is the one that achieved it.
    pub final_loss: f64,
    /// Loss after each iteration.
    pub loss_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Not serialized, so report files are byte-identical across runs.
    #[serde(skip_serializing, default)]
    pub wall_time_s: f64,
}

impl FitReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// First and second moment buffers laid out like a frame gradient.
struct Adam {
    m: FrameGradient,
    v: FrameGradient,
    t: i32,
}

fn moments(
    m: &mut f64,
    v: &mut f64,
    g: f64,
    lr: f64,
    fc: &FitConfig,
    c1: f64,
    c2: f64,
) -> f64 {
    *m = fc.adaptive_beta1 * *m + (1.0 - fc.adaptive_beta1) * g;
    *v = fc.adaptive_beta2 * *v + (1.0 - fc.adaptive_beta2) * g * g;
    let mh = *m / c1;
    let vh = *v / c2;
    lr * mh / (vh.sqrt() + fc.adaptive_eps)
}

impl Adam {
    fn new(frame: &DiprFrame) -> Self {
        Adam {
            m: FrameGradient::zeros_like(frame),
            v: FrameGradient::zeros_like(frame),
            t: 0,
        }
    }

    fn step(&mut self, frame: &mut DiprFrame, g: &FrameGradient, fc: &FitConfig, lr_mult: f64) {
        self.t += 1;
        let c1 = 1.0 - fc.adaptive_beta1.powi(self.t);
        let c2 = 1.0 - fc.adaptive_beta2.powi(self.t);
        for ((j, gj), (mj, vj)) in frame
            .joints
            .iter_mut()
            .zip(&g.joints)
            .zip(self.m.joints.iter_mut().zip(self.v.joints.iter_mut()))
        {
            update_joint(j, gj, mj, vj, fc, lr_mult, c1, c2);
            project(j, fc);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_joint(
    j: &mut GaussianJoint,
    g: &JointGradient,
    m: &mut JointGradient,
    v: &mut JointGradient,
    fc: &FitConfig,
    lr_mult: f64,
    c1: f64,
    c2: f64,
) {
    let lr = |base: f64| base * lr_mult;
    for k in 0..3 {
        j.position_m[k] -= moments(&mut m.position[k], &mut v.position[k], g.position[k], lr(fc.lr_position), fc, c1, c2);
        j.scale_m[k] -= moments(&mut m.scale[k], &mut v.scale[k], g.scale[k], lr(fc.lr_scale), fc, c1, c2);
        j.velocity_mps[k] -= moments(&mut m.velocity[k], &mut v.velocity[k], g.velocity[k], lr(fc.lr_velocity), fc, c1, c2);
    }
    for k in 0..4 {
        j.rotation[k] -= moments(&mut m.rotation[k], &mut v.rotation[k], g.rotation[k], lr(fc.lr_rotation), fc, c1, c2);
    }
    j.opacity -= moments(&mut m.opacity, &mut v.opacity, g.opacity, lr(fc.lr_opacity), fc, c1, c2);
    for k in 0..j.doppler_features.len() {
        j.doppler_features[k] -= moments(
            &mut m.doppler_features[k],
            &mut v.doppler_features[k],
            g.doppler_features[k],
            lr(fc.lr_doppler),
            fc,
            c1,
            c2,
        );
    }
}

/// Restores unit quaternion, bounded scales, non-negative opacity and
/// simplex Doppler features.
pub fn project(j: &mut GaussianJoint, fc: &FitConfig) {
    let n = j.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        j.rotation = j.rotation.map(|c| c / n);
    } else {
        j.rotation = [1.0, 0.0, 0.0, 0.0];
    }
    for s in j.scale_m.iter_mut() {
        *s = s.clamp(fc.scale_min_m, fc.scale_max_m);
    }
    j.opacity = j.opacity.max(0.0);
    for f in j.doppler_features.iter_mut() {
        *f = f.max(0.0);
    }
    let total: f64 = j.doppler_features.iter().sum();
    let len = j.doppler_features.len() as f64;
    if total > 0.0 {
        j.doppler_features.iter_mut().for_each(|f| *f /= total);
    } else {
        j.doppler_features.iter_mut().for_each(|f| *f = 1.0 / len);
    }
}

/// Coarse extraction followed by skeleton placement.
pub fn initialize(h_obs: &Heatmap, sk: &Skeleton, fc: &FitConfig) -> Result<DiprFrame> {
    let cs = extract_coarse(h_obs, fc.extraction_top_fraction)?;
    init_from_coarse(sk, &cs, &fc.init)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_frame(
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    fc: &FitConfig,
    init: Option<&DiprFrame>,
) -> Result<(DiprFrame, FitReport)> {
    fit_frame_with_hook(h_obs, sk, rp, grid, kp, fc, init, |_, _| {})
}

/// As [`fit_frame`], calling `hook(iteration, frame)` after every step.
#[allow(clippy::too_many_arguments)]
pub fn fit_frame_with_hook<H>(
    h_obs: &Heatmap,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    fc: &FitConfig,
    init: Option<&DiprFrame>,
    mut hook: H,
) -> Result<(DiprFrame, FitReport)>
where
    H: FnMut(usize, &DiprFrame),
{
    fc.validate()?;
    if h_obs.grid() != grid {
        return Err(Error::Shape("observed heatmap grid differs from the fit grid".into()));
    }
    let start = Instant::now();
    let mut frame = match init {
        Some(f) => f.clone(),
        None => initialize(h_obs, sk, fc)?,
    };
    frame.check_aligned(sk)?;
    let w = &fc.loss_weights;
    let (initial, mut grad) = total_loss(&frame, h_obs, sk, rp, grid, kp, w)?;
    if !initial.is_finite() {
        return Err(Error::Fit {
            iteration: 0,
            msg: format!("initial loss is {initial}"),
        });
    }
    let mut best = (initial, frame.clone());
    let mut adam = Adam::new(&frame);
    let mut trace = Vec::new();
    let mut prev = initial;
    let mut stalled = 0;
    let mut converged = false;
    for it in 1..=fc.max_iters {
        let lr_mult = fc.lr_final_ratio.powf((it - 1) as f64 / fc.max_iters as f64);
        adam.step(&mut frame, &grad, fc, lr_mult);
        hook(it, &frame);
        let (loss, g) = total_loss(&frame, h_obs, sk, rp, grid, kp, w)?;
        if !loss.is_finite() {
            return Err(Error::Fit {
                iteration: it,
                msg: format!("loss became {loss}"),
            });
        }
        trace.push(loss);
        grad = g;
        if loss < best.0 {
            best = (loss, frame.clone());
        }
        let rel = (loss - prev).abs() / prev.abs().max(fc.convergence_floor);
        prev = loss;
        stalled = if rel < fc.convergence_tol { stalled + 1 } else { 0 };
        if stalled >= fc.convergence_patience || loss <= fc.target_loss {
            converged = true;
            break;
        }
    }
    log::debug!(
        "fit: {} iterations, loss {:.6e} -> {:.6e}",
        trace.len(),
        initial,
        best.0
    );
    let report = FitReport {
        initial_loss: initial,
        final_loss: best.0,
        iterations_run: trace.len(),
        loss_trace: trace,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best.1, report))
}

/// Fits frames in order, warm-starting each from the previous result.
#[allow(clippy::too_many_arguments)]
pub fn fit_sequence(
    frames: &[Heatmap],
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    fc: &FitConfig,
    init: Option<&DiprFrame>,
) -> Result<Vec<(DiprFrame, FitReport)>> {
    let mut out: Vec<(DiprFrame, FitReport)> = Vec::with_capacity(frames.len());
    for (t, h) in frames.iter().enumerate() {
        let start = match out.last() {
            Some((prev, _)) => Some(prev.clone()),
            None => init.cloned(),
        };
        let fitted = fit_frame(h, sk, rp, grid, kp, fc, start.as_ref()).map_err(|e| Error::Frame {
            frame: t,
            source: Box::new(e),
        })?;
        out.push(fitted);
    }
    Ok(out)
}

/// DIPR → conventional heatmap.
pub fn dipr_to_heatmap(frame: &DiprFrame, rp: &RadarParams, grid: &HeatmapGrid, kp: &RenderKernelParams) -> Result<Heatmap> {
    render(frame, rp, grid, kp)
}

/// DIPR → CFAR point cloud of its rendered heatmap.
pub fn dipr_to_pointcloud(
    frame: &DiprFrame,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    cfg: &CfarConfig,
) -> Result<PointCloud> {
    ca_cfar(&dipr_to_heatmap(frame, rp, grid, kp)?, cfg)
}
