//! Synthetic scenes: analytic motion programs rendered through the forward
//! model, with optional static clutter, multipath ghosts and receiver noise.

use std::f64::consts::TAU;

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dipr::{DiprFrame, GaussianJoint, InitConfig};
use crate::domain::{Axis, Heatmap, HeatmapGrid, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::geometry::spherical_to_cartesian;
use crate::renderer::{render, render_joints, RenderKernelParams};
use crate::seeds;

const CLUTTER_STREAM: u64 = 0xC1;
const NOISE_STREAM: u64 = 0x4E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    StaticTpose,
    /// Both arms swing about the vertical axis through the shoulders, in
    /// antiphase; `amplitude_m` is the peak wrist displacement along its arc.
    ArmSwing { amplitude_m: f64, period_s: f64 },
    /// Pelvis approaches the radar at `speed_mps` while legs pitch about the
    /// hips and arms swing counter to the legs.
    Walk { speed_mps: f64, stride_period_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub motion: Motion,
    /// Pelvis position at t = 0.
    pub anchor_m: [f64; 3],
    pub frames: usize,
    pub dt_s: f64,
    pub clutter_points: usize,
    /// Clutter opacity relative to a body joint's unit opacity.
    pub clutter_intensity_rel: f64,
    /// Clutter elevation is drawn uniformly in ±this.
    pub clutter_elevation_max_rad: f64,
    /// No clutter centre lies within this distance of any body joint.
    pub clutter_exclusion_m: f64,
    pub ghost_range_ratio: f64,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    pub init: InitConfig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            motion: Motion::StaticTpose,
            anchor_m: [3.0, 0.0, 0.0],
            frames: 1,
            dt_s: 0.1,
            clutter_points: 0,
            clutter_intensity_rel: 0.5,
            clutter_elevation_max_rad: 0.3,
            clutter_exclusion_m: 0.5,
            ghost_range_ratio: 1.4,
            noise_snr_db: None,
            seed: 0,
            init: InitConfig::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("scene.frames must be >= 1".into()));
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::Config(format!("scene.dt_s must be > 0, got {}", self.dt_s)));
        }
        match self.motion {
            Motion::StaticTpose => {}
            Motion::ArmSwing { amplitude_m, period_s } => {
                if !(amplitude_m >= 0.0 && period_s > 0.0) {
                    return Err(Error::Config(
                        "scene.motion: arm_swing needs amplitude_m >= 0 and period_s > 0".into(),
                    ));
                }
            }
            Motion::Walk { speed_mps, stride_period_s } => {
                if !(speed_mps.is_finite() && stride_period_s > 0.0) {
                    return Err(Error::Config(
                        "scene.motion: walk needs finite speed_mps and stride_period_s > 0".into(),
                    ));
                }
            }
        }
        if !(self.clutter_intensity_rel >= 0.0) {
            return Err(Error::Config("scene.clutter_intensity_rel must be >= 0".into()));
        }
        if !(self.ghost_range_ratio >= 1.0) {
            return Err(Error::Config("scene.ghost_range_ratio must be >= 1".into()));
        }
        if !(self.clutter_exclusion_m >= 0.0 && self.clutter_elevation_max_rad >= 0.0) {
            return Err(Error::Config("scene clutter bounds must be >= 0".into()));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("scene.noise_snr_db must be finite".into()));
            }
        }
        self.init.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("scene: {e}")))?;
        if let Some(m) = table.get("motion") {
            Motion::deserialize(m.clone()).map_err(|e| Error::Config(format!("scene.motion: {}", e.message())))?;
        }
        let spec: SceneSpec = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("scene: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSequence {
    pub dt_s: f64,
    pub poses: Vec<Vec<[f64; 3]>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
}

impl GroundTruthSequence {
    pub fn positions(&self, t: usize) -> Vec<Vector3<f64>> {
        self.poses[t].iter().map(|&p| p.into()).collect()
    }

    pub fn velocity_vectors(&self, t: usize) -> Vec<Vector3<f64>> {
        self.velocities[t].iter().map(|&v| v.into()).collect()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("ground truth serializes")
    }
}

fn rotate_about(p: &Vector3<f64>, pivot: &Vector3<f64>, axis: Vector3<f64>, angle: f64) -> Vector3<f64> {
    let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
    pivot + r * (p - pivot)
}

/// Joint positions of the motion program at time `t`.
pub fn pose_at(spec: &SceneSpec, sk: &Skeleton, t: f64) -> Vec<Vector3<f64>> {
    let root = sk.tpose()[sk.root()];
    let anchor = Vector3::from(spec.anchor_m);
    let mut p: Vec<Vector3<f64>> = sk.tpose().iter().map(|q| q - root).collect();
    let idx = |name: &str| sk.joint_index(name);
    let swing_arm = |p: &mut Vec<Vector3<f64>>, side: &str, angle: f64| {
        if let (Some(s), Some(e), Some(w)) = (
            idx(&format!("{side}_shoulder")),
            idx(&format!("{side}_elbow")),
            idx(&format!("{side}_wrist")),
        ) {
            let pivot = p[s];
            for j in [e, w] {
                p[j] = rotate_about(&p[j], &pivot, Vector3::z(), angle);
            }
        }
    };
    let arm_reach = |p: &[Vector3<f64>], side: &str| -> f64 {
        match (idx(&format!("{side}_shoulder")), idx(&format!("{side}_wrist"))) {
            (Some(s), Some(w)) => (p[w] - p[s]).norm(),
            _ => 1.0,
        }
    };
    let mut offset = Vector3::zeros();
    match spec.motion {
        Motion::StaticTpose => {}
        Motion::ArmSwing { amplitude_m, period_s } => {
            let phase = (TAU * t / period_s).sin();
            for (side, sign) in [("l", 1.0), ("r", -1.0)] {
                let theta = sign * amplitude_m / arm_reach(&p, side) * phase;
                swing_arm(&mut p, side, theta);
            }
        }
        Motion::Walk { speed_mps, stride_period_s } => {
            let phase = (TAU * t / stride_period_s).sin();
            let leg_angle = 0.35 * phase;
            for (side, sign) in [("l", 1.0), ("r", -1.0)] {
                if let (Some(h), Some(k), Some(a)) = (
                    idx(&format!("{side}_hip")),
                    idx(&format!("{side}_knee")),
                    idx(&format!("{side}_ankle")),
                ) {
                    let pivot = p[h];
                    for j in [k, a] {
                        p[j] = rotate_about(&p[j], &pivot, Vector3::y(), sign * leg_angle);
                    }
                }
                // Left arm swings with the right leg.
                swing_arm(&mut p, side, sign * 0.3 * phase);
            }
            offset = Vector3::new(-speed_mps * t, 0.0, 0.0);
        }
    }
    p.iter().map(|q| q + anchor + offset).collect()
}

/// Samples the motion program: central differences inside, one-sided at the
/// ends, and a central difference of the program itself for one frame.
pub fn ground_truth(spec: &SceneSpec, sk: &Skeleton) -> Result<GroundTruthSequence> {
    spec.validate()?;
    let dt = spec.dt_s;
    let n = spec.frames;
    let poses: Vec<Vec<Vector3<f64>>> = (0..n).map(|t| pose_at(spec, sk, t as f64 * dt)).collect();
    let diff = |a: &[Vector3<f64>], b: &[Vector3<f64>], span: f64| -> Vec<[f64; 3]> {
        a.iter().zip(b).map(|(x, y)| ((x - y) / span).into()).collect()
    };
    let velocities = if n == 1 {
        vec![diff(&pose_at(spec, sk, dt), &pose_at(spec, sk, -dt), 2.0 * dt)]
    } else {
        (0..n)
            .map(|t| match t {
                0 => diff(&poses[1], &poses[0], dt),
                t if t == n - 1 => diff(&poses[t], &poses[t - 1], dt),
                t => diff(&poses[t + 1], &poses[t - 1], 2.0 * dt),
            })
            .collect()
    };
    Ok(GroundTruthSequence {
        dt_s: dt,
        poses: poses
            .into_iter()
            .map(|f| f.into_iter().map(Into::into).collect())
            .collect(),
        velocities,
    })
}

/// Ground-truth DIPR frame with default shape parameters.
pub fn gt_frame(gt: &GroundTruthSequence, t: usize, sk: &Skeleton, init: &InitConfig) -> DiprFrame {
    DiprFrame {
        joints: sk
            .joint_names()
            .iter()
            .zip(gt.positions(t))
            .zip(gt.velocity_vectors(t))
            .map(|((name, p), v)| init.joint(name, p, v))
            .collect(),
        timestamp_s: t as f64 * gt.dt_s,
    }
}

/// Static point scatterers uniform in the coverage volume, each followed by
/// its ghost at `ghost_range_ratio` times the range when that stays in view.
/// The ghost keeps the source opacity; the r⁻⁴ path loss gives it the
/// ratio⁻⁴ relative amplitude.
pub fn clutter(spec: &SceneSpec, gt: &GroundTruthSequence, grid: &HeatmapGrid) -> Result<Vec<GaussianJoint>> {
    let (r_lo, r_hi) = grid.coverage(Axis::Range);
    let (a_lo, a_hi) = grid.coverage(Axis::Angle);
    let mut rng = seeds::rng(spec.seed, CLUTTER_STREAM);
    let body: Vec<Vector3<f64>> = (0..gt.poses.len()).flat_map(|t| gt.positions(t)).collect();
    let excl2 = spec.clutter_exclusion_m * spec.clutter_exclusion_m;
    let point = |p: Vector3<f64>| {
        let mut j = spec.init.joint("clutter", p, Vector3::zeros());
        j.scale_m = Vector3::repeat(0.02);
        j.opacity = spec.clutter_intensity_rel;
        j
    };
    let mut out = Vec::new();
    let mut placed = 0;
    let mut attempts = 0usize;
    while placed < spec.clutter_points {
        attempts += 1;
        if attempts > 10_000 * spec.clutter_points.max(1) {
            return Err(Error::Scene {
                frame: 0,
                msg: "cannot place clutter outside the body exclusion shell".into(),
            });
        }
        let r = rng.random_range(r_lo..r_hi);
        let az = rng.random_range(a_lo..a_hi);
        let el = if spec.clutter_elevation_max_rad > 0.0 {
            rng.random_range(-spec.clutter_elevation_max_rad..spec.clutter_elevation_max_rad)
        } else {
            0.0
        };
        let p = spherical_to_cartesian(r, az, el)?;
        if body.iter().any(|b| (b - p).norm_squared() < excl2) {
            continue;
        }
        out.push(point(p));
        if r * spec.ghost_range_ratio < r_hi {
            out.push(point(p * spec.ghost_range_ratio));
        }
        placed += 1;
    }
    Ok(out)
}

/// 10·log10(Σ clean² / Σ (noisy − clean)²); `None` when the two are equal.
pub fn snr_of(clean: &Heatmap, noisy: &Heatmap) -> Result<Option<f64>> {
    clean.check_same_grid(noisy)?;
    let signal: f64 = clean.values().iter().map(|c| c * c).sum();
    if !(signal > 0.0) {
        return Err(Error::Domain("clean heatmap has zero energy".into()));
    }
    let noise: f64 = clean
        .values()
        .iter()
        .zip(noisy.values())
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if noise == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (signal / noise).log10()))
}

fn noisy_magnitude(field: &[Complex64], unit_noise: &[Complex64], sigma: f64) -> Vec<f64> {
    field
        .iter()
        .zip(unit_noise)
        .map(|(c, w)| (c + w * sigma).norm())
        .collect()
}

/// Adds one complex Gaussian draw per cell, its scale found by bisection so
/// the measured SNR of the magnitude matches `snr_db` within 0.01 dB.
fn add_noise(field: &[Complex64], clean: &Heatmap, snr_db: f64, seed: u64) -> Result<Heatmap> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<Complex64> = (0..field.len())
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        })
        .collect();
    let grid = *clean.grid();
    let measure = |sigma: f64| -> Result<f64> {
        let h = Heatmap::new(grid, noisy_magnitude(field, &unit, sigma))?;
        Ok(snr_of(clean, &h)?.unwrap_or(f64::INFINITY))
    };
    let rms = (clean.values().iter().map(|c| c * c).sum::<f64>() / clean.values().len() as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::Domain("cannot calibrate noise on an all-zero heatmap".into()));
    }
    // SNR falls monotonically with sigma; bracket then bisect in log sigma.
    let (mut lo, mut hi) = (rms * 1e-6, rms * 1e3);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let s = measure(mid)?;
        if (s - snr_db).abs() < 1e-3 {
            lo = mid;
            hi = mid;
            break;
        }
        if s > snr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Heatmap::new(grid, noisy_magnitude(field, &unit, (lo * hi).sqrt()))
}

/// Renders the scene frame by frame from ground-truth joints plus clutter.
pub fn generate_scene(
    spec: &SceneSpec,
    sk: &Skeleton,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
) -> Result<(Vec<Heatmap>, GroundTruthSequence)> {
    let gt = ground_truth(spec, sk)?;
    let scatterers = clutter(spec, &gt, grid)?;
    let scene_err = |t: usize| {
        move |e: Error| match e {
            Error::Render { joint, msg } => Error::Scene {
                frame: t,
                msg: format!("joint {joint}: {msg}"),
            },
            other => other,
        }
    };
    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let frame = gt_frame(&gt, t, sk, &spec.init);
        if scatterers.is_empty() && spec.noise_snr_db.is_none() {
            out.push(render(&frame, rp, grid, kp).map_err(scene_err(t))?);
            continue;
        }
        // Body joints must be in view on their own.
        render_joints(&frame.joints, rp, grid, kp).map_err(scene_err(t))?;
        let mut joints = frame.joints;
        joints.extend(scatterers.iter().cloned());
        let state = render_joints(&joints, rp, grid, kp).map_err(scene_err(t))?;
        let field = state.field();
        let clean = state.into_heatmap();
        let h = match spec.noise_snr_db {
            Some(snr) => add_noise(&field, &clean, snr, seeds::derive(spec.seed, NOISE_STREAM + 1 + t as u64))?,
            None => clean,
        };
        out.push(h);
    }
    Ok((out, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> (Skeleton, RadarParams, HeatmapGrid, RenderKernelParams) {
        (
            Skeleton::default_skeleton(),
            RadarParams::default(),
            HeatmapGrid::default(),
            RenderKernelParams::default(),
        )
    }

    #[test]
    fn clean_static_scene_is_the_plain_render() {
        let (sk, rp, grid, kp) = env();
        let spec = SceneSpec::default();
        let (hs, gt) = generate_scene(&spec, &sk, &rp, &grid, &kp).unwrap();
        let frame = crate::dipr::tpose_frame(&sk, &spec.init, &Vector3::new(3.0, 0.0, 0.0), &Vector3::zeros());
        assert_eq!(gt.positions(0), frame.positions());
        assert_eq!(hs[0], render(&frame, &rp, &grid, &kp).unwrap());
    }

    #[test]
    fn arm_swing_wrist_speed_peak() {
        let (sk, ..) = env();
        let spec = SceneSpec {
            motion: Motion::ArmSwing { amplitude_m: 0.3, period_s: 2.0 },
            frames: 201,
            dt_s: 0.01,
            ..SceneSpec::default()
        };
        let gt = ground_truth(&spec, &sk).unwrap();
        let w = sk.joint_index("l_wrist").unwrap();
        let peak = (0..spec.frames)
            .map(|t| gt.velocity_vectors(t)[w].norm())
            .fold(0.0, f64::max);
        let expect = TAU * 0.3 / 2.0;
        assert!((peak - expect).abs() < 1e-3 * expect, "{peak}");
    }

    #[test]
    fn interior_velocities_are_central_differences() {
        let (sk, ..) = env();
        let spec = SceneSpec {
            motion: Motion::Walk { speed_mps: 0.5, stride_period_s: 1.0 },
            frames: 5,
            ..SceneSpec::default()
        };
        let gt = ground_truth(&spec, &sk).unwrap();
        for t in 1..4 {
            for j in 0..sk.len() {
                let fd = (gt.positions(t + 1)[j] - gt.positions(t - 1)[j]) / (2.0 * spec.dt_s);
                assert!((fd - gt.velocity_vectors(t)[j]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn swing_preserves_bone_lengths() {
        let (sk, ..) = env();
        let spec = SceneSpec {
            motion: Motion::Walk { speed_mps: 0.5, stride_period_s: 1.0 },
            ..SceneSpec::default()
        };
        let p = pose_at(&spec, &sk, 0.3);
        for (&(i, j), &len) in sk.edges().iter().zip(sk.bone_lengths()) {
            assert!(((p[i] - p[j]).norm() - len).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_cluttered_scene_is_deterministic_and_calibrated() {
        let (sk, rp, grid, kp) = env();
        let spec = SceneSpec {
            clutter_points: 20,
            noise_snr_db: Some(10.0),
            frames: 2,
            seed: 7,
            ..SceneSpec::default()
        };
        let (a, _) = generate_scene(&spec, &sk, &rp, &grid, &kp).unwrap();
        let (b, _) = generate_scene(&spec, &sk, &rp, &grid, &kp).unwrap();
        assert_eq!(a, b);
        let quiet = SceneSpec { noise_snr_db: None, ..spec.clone() };
        let (clean, _) = generate_scene(&quiet, &sk, &rp, &grid, &kp).unwrap();
        for (c, n) in clean.iter().zip(&a) {
            let snr = snr_of(c, n).unwrap().unwrap();
            assert!((snr - 10.0).abs() < 0.5, "{snr}");
        }
    }

    #[test]
    fn snr_examples() {
        let grid = HeatmapGrid::default();
        let c = Heatmap::new(grid, vec![1.0; grid.len()]).unwrap();
        assert_eq!(snr_of(&c, &c).unwrap(), None);
        let n = Heatmap::new(grid, vec![2.0; grid.len()]).unwrap();
        assert!(snr_of(&c, &n).unwrap().unwrap().abs() < 1e-12);
        assert!(matches!(snr_of(&Heatmap::zeros(grid), &c), Err(Error::Domain(_))));
    }

    #[test]
    fn anchor_out_of_view_names_frame() {
        let (sk, rp, grid, kp) = env();
        let spec = SceneSpec {
            motion: Motion::Walk { speed_mps: 2.0, stride_period_s: 1.0 },
            frames: 10,
            ..SceneSpec::default()
        };
        match generate_scene(&spec, &sk, &rp, &grid, &kp) {
            Err(Error::Scene { frame, .. }) => assert!(frame > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_motion_is_config_error_naming_field() {
        let err = SceneSpec::from_toml_str("motion = { kind = \"jog\" }").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("motion")), "{err}");
    }
}
