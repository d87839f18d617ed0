//! Loss-weight ablations on synthetic scenes.

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dipr::DiprFrame;
use crate::domain::{HeatmapGrid, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::eval::{mpjpe, pa_mpjpe, PoseSequence};
use crate::fitter::{fit_sequence, FitConfig};
use crate::losses::LossWeights;
use crate::renderer::RenderKernelParams;
use crate::seeds;
use crate::synth::{generate_scene, gt_frame, Motion, SceneSpec};

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda1,
    Lambda2,
    TopFraction,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 3] = [SweepAxis::Lambda1, SweepAxis::TopFraction, SweepAxis::Lambda2];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda1 => "lambda1",
            SweepAxis::Lambda2 => "lambda2",
            SweepAxis::TopFraction => "top_fraction",
        }
    }

    fn apply(self, w: &LossWeights, value: f64) -> LossWeights {
        let mut w = *w;
        match self {
            SweepAxis::Lambda1 => w.lambda1 = value,
            SweepAxis::Lambda2 => w.lambda2 = value,
            SweepAxis::TopFraction => w.top_fraction_t = value,
        }
        w
    }

    fn default_value(self, w: &LossWeights) -> f64 {
        match self {
            SweepAxis::Lambda1 => w.lambda1,
            SweepAxis::Lambda2 => w.lambda2,
            SweepAxis::TopFraction => w.top_fraction_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scene: SceneSpec,
    /// One scene per seed; every setting is fitted on the same scenes.
    pub seeds: Vec<u64>,
    /// Ground-truth positions are perturbed by this per-coordinate noise to
    /// initialize frame 0.
    pub init_noise_m: f64,
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub top_fraction_values: Vec<f64>,
    pub fit: FitConfig,
    pub radar: RadarParams,
    pub grid: HeatmapGrid,
    pub kernel: RenderKernelParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            scene: SceneSpec {
                motion: Motion::ArmSwing { amplitude_m: 0.2, period_s: 2.0 },
                frames: 3,
                clutter_points: 20,
                noise_snr_db: Some(10.0),
                ..SceneSpec::default()
            },
            seeds: vec![1, 2, 3],
            init_noise_m: 0.1,
            lambda1_values: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            lambda2_values: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            top_fraction_values: vec![0.05, 0.10, 0.30, 0.70, 1.0],
            fit: FitConfig::default(),
            radar: RadarParams::default(),
            grid: HeatmapGrid::default(),
            kernel: RenderKernelParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn values(&self, axis: SweepAxis) -> &[f64] {
        match axis {
            SweepAxis::Lambda1 => &self.lambda1_values,
            SweepAxis::Lambda2 => &self.lambda2_values,
            SweepAxis::TopFraction => &self.top_fraction_values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep.seeds must not be empty".into()));
        }
        if !(self.init_noise_m >= 0.0) {
            return Err(Error::Config("sweep.init_noise_m must be >= 0".into()));
        }
        for axis in SweepAxis::ALL {
            for &v in self.values(axis) {
                axis.apply(&self.fit.loss_weights, v).validate()?;
            }
        }
        self.scene.validate()?;
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub is_default: bool,
    /// Mean over seeds.
    pub mpjpe_m: f64,
    pub pa_mpjpe_m: f64,
    pub per_seed_mpjpe_m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub defaults: LossWeights,
    pub init_mpjpe_m: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn axis(&self, axis: SweepAxis) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.axis == axis).collect()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sweep report serializes")
    }
}

struct Scene {
    heatmaps: Vec<crate::domain::Heatmap>,
    gt: PoseSequence,
    init: DiprFrame,
}

fn build_scene(cfg: &SweepConfig, sk: &Skeleton, seed: u64) -> Result<Scene> {
    let spec = SceneSpec { seed, ..cfg.scene.clone() };
    let (heatmaps, gt) = generate_scene(&spec, sk, &cfg.radar, &cfg.grid, &cfg.kernel)?;
    let mut init = gt_frame(&gt, 0, sk, &spec.init);
    let mut rng = seeds::rng(seed, INIT_STREAM);
    let noise = Normal::new(0.0, cfg.init_noise_m).map_err(|e| Error::Config(e.to_string()))?;
    for j in &mut init.joints {
        j.position_m += Vector3::from_fn(|_, _| noise.sample(&mut rng));
    }
    let poses = (0..gt.poses.len()).map(|t| gt.positions(t)).collect();
    Ok(Scene {
        heatmaps,
        gt: PoseSequence::new(poses, Some(gt.dt_s))?,
        init,
    })
}

/// Fits every scene once per swept value, varying one loss weight at a time
/// from the defaults in `cfg.fit.loss_weights`.
pub fn run_sweep(cfg: &SweepConfig, sk: &Skeleton) -> Result<SweepReport> {
    cfg.validate()?;
    let scenes: Vec<Scene> = cfg
        .seeds
        .par_iter()
        .map(|&s| build_scene(cfg, sk, s))
        .collect::<Result<_>>()?;
    let defaults = cfg.fit.loss_weights;
    let init_err = scenes
        .iter()
        .map(|s| {
            let init = PoseSequence::new(vec![s.init.positions()], None)?;
            let first = PoseSequence::new(vec![s.gt.frame(0)], None)?;
            mpjpe(&init, &first)
        })
        .sum::<Result<f64>>()?
        / scenes.len() as f64;
    let jobs: Vec<(SweepAxis, f64, usize)> = SweepAxis::ALL
        .iter()
        .flat_map(|&a| cfg.values(a).iter().flat_map(move |&v| (0..cfg.seeds.len()).map(move |s| (a, v, s))))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(axis, value, s)| {
            let fc = FitConfig {
                loss_weights: axis.apply(&defaults, value),
                ..cfg.fit.clone()
            };
            let scene = &scenes[s];
            let fitted = fit_sequence(&scene.heatmaps, sk, &cfg.radar, &cfg.grid, &cfg.kernel, &fc, Some(&scene.init))?;
            let pred = PoseSequence::new(fitted.iter().map(|(f, _)| f.positions()).collect(), scene.gt.dt_s)?;
            Ok((mpjpe(&pred, &scene.gt)?, pa_mpjpe(&pred, &scene.gt)?))
        })
        .collect::<Result<_>>()?;
    let n = cfg.seeds.len();
    let points = jobs
        .chunks(n)
        .zip(results.chunks(n))
        .map(|(j, r)| {
            let (axis, value, _) = j[0];
            SweepPoint {
                axis,
                value,
                is_default: value == axis.default_value(&defaults),
                mpjpe_m: r.iter().map(|x| x.0).sum::<f64>() / n as f64,
                pa_mpjpe_m: r.iter().map(|x| x.1).sum::<f64>() / n as f64,
                per_seed_mpjpe_m: r.iter().map(|x| x.0).collect(),
            }
        })
        .collect();
    Ok(SweepReport {
        defaults,
        init_mpjpe_m: init_err,
        points,
    })
}
