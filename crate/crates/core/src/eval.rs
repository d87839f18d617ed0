//! Pose and heatmap metrics.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::domain::Heatmap;
use crate::error::{Error, Result};
use crate::losses::hard_mask;

/// Per-frame joint positions in metres; every frame has the same joint count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    pub poses: Vec<Vec<[f64; 3]>>,
}

impl PoseSequence {
    pub fn new(poses: Vec<Vec<Vector3<f64>>>, dt_s: Option<f64>) -> Result<Self> {
        let seq = PoseSequence {
            dt_s,
            poses: poses
                .into_iter()
                .map(|f| f.into_iter().map(Into::into).collect())
                .collect(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.poses.first() {
            if let Some(t) = self.poses.iter().position(|f| f.len() != first.len()) {
                return Err(Error::Shape(format!(
                    "frame {t} has {} joints, frame 0 has {}",
                    self.poses[t].len(),
                    first.len()
                )));
            }
        }
        if self.poses.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Domain("pose sequence contains non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn joints(&self) -> usize {
        self.poses.first().map_or(0, Vec::len)
    }

    pub fn frame(&self, t: usize) -> Vec<Vector3<f64>> {
        self.poses[t].iter().map(|&p| p.into()).collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let seq: PoseSequence = toml::from_str(text).map_err(|e| Error::Config(format!("poses: {e}")))?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seq: PoseSequence = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("pose sequence serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

fn check_shapes(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    pred.validate()?;
    gt.validate()?;
    if pred.frames() != gt.frames() || pred.joints() != gt.joints() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.frames(),
            pred.joints(),
            gt.frames(),
            gt.joints()
        )));
    }
    if pred.frames() == 0 || pred.joints() == 0 {
        return Err(Error::Shape("empty pose sequence".into()));
    }
    Ok(())
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64
}

pub fn mpjpe_per_frame(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    Ok((0..pred.frames())
        .map(|t| mean_distance(&pred.frame(t), &gt.frame(t)))
        .collect())
}

/// Mean joint position error over all frames and joints.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let per = mpjpe_per_frame(pred, gt)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Rotation, translation and uniform scale.
    #[default]
    Similarity,
    Rigid,
}

/// Least-squares transform taking `src` onto `dst`, as (scale, rotation,
/// translation). Reflections are excluded.
pub fn procrustes(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    alignment: Alignment,
) -> Option<(f64, Matrix3<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if !collinear_free(src, &mu_s) || !collinear_free(dst, &mu_d) {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let scale = match alignment {
        Alignment::Similarity => (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_s,
        Alignment::Rigid => 1.0,
    };
    Some((scale, r, mu_d - scale * r * mu_s))
}

/// True when the centred points span at least a plane.
fn collinear_free(p: &[Vector3<f64>], mu: &Vector3<f64>) -> bool {
    let mut scatter = Matrix3::zeros();
    for x in p {
        let a = x - mu;
        scatter += a * a.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] > 0.0 && s[1] > 1e-12 * s[0]
}

pub fn pa_mpjpe_per_frame(pred: &PoseSequence, gt: &PoseSequence, alignment: Alignment) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    (0..pred.frames())
        .map(|t| {
            let (p, g) = (pred.frame(t), gt.frame(t));
            let (c, r, tr) = procrustes(&p, &g, alignment).ok_or_else(|| Error::Metric {
                frame: t,
                msg: "fewer than 3 non-collinear joints".into(),
            })?;
            let aligned: Vec<Vector3<f64>> = p.iter().map(|x| c * r * x + tr).collect();
            // The identity is a feasible alignment, so the optimum is never worse.
            Ok(mean_distance(&aligned, &g).min(mean_distance(&p, &g)))
        })
        .collect()
}

/// MPJPE after per-frame Procrustes alignment of the prediction.
pub fn pa_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    pa_mpjpe_with(pred, gt, Alignment::Similarity)
}

pub fn pa_mpjpe_with(pred: &PoseSequence, gt: &PoseSequence, alignment: Alignment) -> Result<f64> {
    let per = pa_mpjpe_per_frame(pred, gt, alignment)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean joint speed between consecutive frames, one value per frame after
/// the first.
pub fn motion_intensity(seq: &PoseSequence, dt: f64) -> Result<Vec<f64>> {
    seq.validate()?;
    if seq.frames() < 2 {
        return Err(Error::Metric {
            frame: seq.frames(),
            msg: "motion intensity needs >= 2 frames".into(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be > 0, got {dt}")));
    }
    Ok((1..seq.frames())
        .map(|t| mean_distance(&seq.frame(t), &seq.frame(t - 1)) / dt)
        .collect())
}

/// IoU of binary top-fraction masks; two empty masks give 1.
pub fn hard_iou(a: &Heatmap, b: &Heatmap, top_fraction: f64) -> Result<f64> {
    a.check_same_grid(b)?;
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("top_fraction must be in (0, 1], got {top_fraction}")));
    }
    let (ma, mb) = (hard_mask(a.values(), top_fraction), hard_mask(b.values(), top_fraction));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_m: f64,
    pub pa_mpjpe_m: f64,
    pub alignment: Alignment,
    pub per_frame_mpjpe_m: Vec<f64>,
    pub per_frame_pa_mpjpe_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_intensity_mps: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("eval report serializes")
    }
}

/// All pose metrics; motion intensity is included for sequences of two or
/// more frames when `dt` is known.
pub fn evaluate(pred: &PoseSequence, gt: &PoseSequence, alignment: Alignment, dt: Option<f64>) -> Result<EvalReport> {
    let per = mpjpe_per_frame(pred, gt)?;
    let pa = pa_mpjpe_per_frame(pred, gt, alignment)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let motion = match dt.or(pred.dt_s).or(gt.dt_s) {
        Some(dt) if pred.frames() >= 2 => Some(motion_intensity(pred, dt)?),
        _ => None,
    };
    Ok(EvalReport {
        mpjpe_m: mean(&per),
        pa_mpjpe_m: mean(&pa),
        alignment,
        per_frame_mpjpe_m: per,
        per_frame_pa_mpjpe_m: pa,
        motion_intensity_mps: motion,
    })
}
