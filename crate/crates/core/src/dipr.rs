//! Gaussian joint primitives and the frame-level human representation.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::domain::Skeleton;
use crate::error::{Error, Result};
use crate::geometry::CoarseState;

const UNIT_TOL: f64 = 1e-9;

/// One joint: position, anisotropic scale, orientation, velocity, opacity and
/// a normalized Doppler envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianJoint {
    pub position_m: Vector3<f64>,
    pub scale_m: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub velocity_mps: Vector3<f64>,
    pub opacity: f64,
    pub doppler_features: Vec<f64>,
}

impl GaussianJoint {
    /// Renormalizes the quaternion and Doppler features (unless already unit
    /// to within 1e-12, so serialized joints round-trip exactly), then
    /// validates.
    pub fn new(
        position_m: Vector3<f64>,
        scale_m: Vector3<f64>,
        rotation: [f64; 4],
        velocity_mps: Vector3<f64>,
        opacity: f64,
        doppler_features: Vec<f64>,
    ) -> Result<Self> {
        let qn = quat_norm(&rotation);
        if !(qn > 0.0) || !qn.is_finite() {
            return Err(Error::Domain("rotation quaternion has zero norm".into()));
        }
        let mut j = GaussianJoint {
            position_m,
            scale_m,
            rotation: if (qn - 1.0).abs() > 1e-12 { rotation.map(|c| c / qn) } else { rotation },
            velocity_mps,
            opacity,
            doppler_features,
        };
        let total: f64 = j.doppler_features.iter().sum();
        if total > 0.0 && (total - 1.0).abs() > 1e-12 {
            for f in &mut j.doppler_features {
                *f /= total;
            }
        }
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        if (quat_norm(&self.rotation) - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain("rotation is not a unit quaternion".into()));
        }
        if self.scale_m.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Domain(format!("scale must be > 0, got {:?}", self.scale_m.as_slice())));
        }
        if !(self.opacity >= 0.0) {
            return Err(Error::Domain(format!("opacity must be >= 0, got {}", self.opacity)));
        }
        if self.doppler_features.is_empty() || self.doppler_features.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::Domain("doppler features must be non-negative and non-empty".into()));
        }
        let sum: f64 = self.doppler_features.iter().sum();
        if (sum - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!("doppler features sum to {sum}, expected 1")));
        }
        if !self.position_m.iter().chain(self.velocity_mps.iter()).all(|x| x.is_finite()) {
            return Err(Error::Domain("position and velocity must be finite".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    /// `R S S^T R^T`.
    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        if (quat_norm(&self.rotation) - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain("rotation is not a unit quaternion".into()));
        }
        Ok(covariance_of(&self.rotation, &self.scale_m))
    }

    /// Unnormalized Gaussian `exp(-d^T Σ^-1 d / 2)`, equal to 1 at the center.
    pub fn density(&self, x: &Vector3<f64>) -> f64 {
        // Σ^-1 = R S^-2 R^T: whiten in the joint's principal frame.
        let local = self.rotation_matrix().transpose() * (x - self.position_m);
        let q = local.component_div(&self.scale_m).norm_squared();
        (-0.5 * q).exp()
    }

    /// Mean of the Doppler features; the scalar used in the disturbance phase.
    pub fn mean_doppler_feature(&self) -> f64 {
        self.doppler_features.iter().sum::<f64>() / self.doppler_features.len() as f64
    }

    /// Complex signal disturbance `β G(x) exp(j φ̄ v·(x - p))`.
    pub fn disturbance(&self, x: &Vector3<f64>) -> Complex64 {
        let phase = self.mean_doppler_feature() * self.velocity_mps.dot(&(x - self.position_m));
        Complex64::from_polar(self.opacity * self.density(x), phase)
    }
}

pub(crate) fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub(crate) fn covariance_of(q: &[f64; 4], s: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation_matrix(q);
    let d = Matrix3::from_diagonal(&s.component_mul(s));
    r * d * r.transpose()
}

/// Joints index-aligned to a skeleton at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiprFrame {
    pub joints: Vec<GaussianJoint>,
    pub timestamp_s: f64,
}

impl DiprFrame {
    pub fn check_aligned(&self, sk: &Skeleton) -> Result<()> {
        if self.joints.len() != sk.len() {
            return Err(Error::Shape(format!(
                "frame has {} joints, skeleton {}",
                self.joints.len(),
                sk.len()
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.joints.iter().map(|j| j.position_m).collect()
    }

    /// Translates every joint by `offset`.
    pub fn translated(&self, offset: &Vector3<f64>) -> DiprFrame {
        let mut out = self.clone();
        for j in &mut out.joints {
            j.position_m += offset;
        }
        out
    }

    pub fn to_toml_string(&self, sk: Option<&Skeleton>) -> String {
        let doc = FrameDoc {
            timestamp_s: self.timestamp_s,
            joints: self
                .joints
                .iter()
                .enumerate()
                .map(|(i, j)| JointDoc {
                    name: sk.and_then(|s| s.joint_names().get(i).cloned()),
                    position_m: j.position_m.into(),
                    scale_m: j.scale_m.into(),
                    rotation: j.rotation,
                    velocity_mps: j.velocity_mps.into(),
                    opacity: j.opacity,
                    doppler_features: j.doppler_features.clone(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("frame serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: FrameDoc = toml::from_str(text).map_err(|e| Error::Config(format!("dipr frame: {e}")))?;
        let joints = doc
            .joints
            .into_iter()
            .map(|j| {
                GaussianJoint::new(
                    j.position_m.into(),
                    j.scale_m.into(),
                    j.rotation,
                    j.velocity_mps.into(),
                    j.opacity,
                    j.doppler_features,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiprFrame {
            joints,
            timestamp_s: doc.timestamp_s,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>, sk: Option<&Skeleton>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string(sk)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DiprFrame::from_toml_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    timestamp_s: f64,
    joints: Vec<JointDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    position_m: [f64; 3],
    scale_m: [f64; 3],
    rotation: [f64; 4],
    velocity_mps: [f64; 3],
    opacity: f64,
    doppler_features: Vec<f64>,
}

/// Initialization defaults for joints built from coarse extraction or T-pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub n_doppler: usize,
    pub envelope_sigma_bins: f64,
    pub limb_scale_m: f64,
    pub torso_scale_m: f64,
    pub torso_joints: Vec<String>,
    pub association_radius_m: f64,
    pub default_anchor_m: [f64; 3],
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            n_doppler: 16,
            envelope_sigma_bins: 2.0,
            limb_scale_m: 0.08,
            torso_scale_m: 0.12,
            torso_joints: ["pelvis", "neck", "head", "l_shoulder", "r_shoulder", "l_hip", "r_hip"]
                .map(String::from)
                .to_vec(),
            association_radius_m: 0.3,
            default_anchor_m: [3.0, 0.0, 0.0],
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_doppler == 0 {
            return Err(Error::Config("init.n_doppler must be >= 1".into()));
        }
        for (name, v) in [
            ("envelope_sigma_bins", self.envelope_sigma_bins),
            ("limb_scale_m", self.limb_scale_m),
            ("torso_scale_m", self.torso_scale_m),
            ("association_radius_m", self.association_radius_m),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("init.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Discretized Gaussian envelope centered on bin `n_doppler / 2`.
    pub fn doppler_envelope(&self) -> Vec<f64> {
        let c = (self.n_doppler / 2) as f64;
        let raw: Vec<f64> = (0..self.n_doppler)
            .map(|k| (-0.5 * ((k as f64 - c) / self.envelope_sigma_bins).powi(2)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    pub fn scale_for(&self, name: &str) -> f64 {
        if self.torso_joints.iter().any(|t| t == name) {
            self.torso_scale_m
        } else {
            self.limb_scale_m
        }
    }

    /// Joint with default shape parameters at `position` moving at `velocity`.
    pub fn joint(&self, name: &str, position: Vector3<f64>, velocity: Vector3<f64>) -> GaussianJoint {
        let s = self.scale_for(name);
        GaussianJoint {
            position_m: position,
            scale_m: Vector3::repeat(s),
            rotation: [1.0, 0.0, 0.0, 0.0],
            velocity_mps: velocity,
            opacity: 1.0,
            doppler_features: self.doppler_envelope(),
        }
    }
}

/// Rigid T-pose with the root joint at `anchor` and every velocity set to
/// `velocity`.
pub fn tpose_frame(sk: &Skeleton, cfg: &InitConfig, anchor: &Vector3<f64>, velocity: &Vector3<f64>) -> DiprFrame {
    let root = sk.tpose()[sk.root()];
    DiprFrame {
        joints: sk
            .tpose()
            .iter()
            .zip(sk.joint_names())
            .map(|(p, name)| cfg.joint(name, anchor + (p - root), *velocity))
            .collect(),
        timestamp_s: 0.0,
    }
}

/// Places the T-pose at the intensity-weighted centroid of the coarse state
/// and gives each joint the weighted mean velocity of coarse entries within
/// the association radius. Joints with no entry in range take the weighted
/// mean velocity of the whole coarse state.
pub fn init_from_coarse(sk: &Skeleton, cs: &CoarseState, cfg: &InitConfig) -> Result<DiprFrame> {
    cfg.validate()?;
    let total_w: f64 = cs.weights.iter().sum();
    if cs.is_empty() || !(total_w > 0.0) {
        log::warn!(
            "empty coarse state; anchoring T-pose at default {:?}",
            cfg.default_anchor_m
        );
        return Ok(tpose_frame(sk, cfg, &cfg.default_anchor_m.into(), &Vector3::zeros()));
    }
    if cs.velocities_mps.len() != cs.len() || cs.weights.len() != cs.len() {
        return Err(Error::Shape("coarse state columns differ in length".into()));
    }
    let centroid = cs
        .positions_m
        .iter()
        .zip(&cs.weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w)
        / total_w;
    let mean_velocity = cs
        .velocities_mps
        .iter()
        .zip(&cs.weights)
        .fold(Vector3::zeros(), |acc, (v, w)| acc + v * *w)
        / total_w;
    let mut frame = tpose_frame(sk, cfg, &centroid, &mean_velocity);
    let rho2 = cfg.association_radius_m * cfg.association_radius_m;
    for joint in &mut frame.joints {
        let mut acc = Vector3::zeros();
        let mut w_sum = 0.0;
        for ((p, v), w) in cs.positions_m.iter().zip(&cs.velocities_mps).zip(&cs.weights) {
            if (p - joint.position_m).norm_squared() <= rho2 {
                acc += v * *w;
                w_sum += w;
            }
        }
        if w_sum > 0.0 {
            joint.velocity_mps = acc / w_sum;
        }
    }
    Ok(frame)
}
