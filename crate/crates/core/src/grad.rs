//! Flat parameter view of a frame and the finite-difference oracle used to
//! verify analytic gradients.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dipr::{tpose_frame, DiprFrame, InitConfig};
use crate::domain::{Heatmap, HeatmapGrid, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::losses::{total_loss_breakdown, total_loss_value, LossWeights};
use crate::renderer::{render, FrameGradient, RenderKernelParams};
use crate::seeds;

/// Which parameter group a flat coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Position,
    Scale,
    Rotation,
    Velocity,
    Opacity,
    Doppler,
}

impl ParamKind {
    /// Magnitude used to size finite-difference steps.
    pub fn typical_scale(self) -> f64 {
        match self {
            ParamKind::Scale | ParamKind::Doppler => 0.1,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub joint: usize,
    pub kind: ParamKind,
    pub component: usize,
}

/// Per joint: `p[3] s[3] q[4] v[3] β φ[N_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    n_doppler: usize,
}

impl ParamVector {
    pub fn from_frame(frame: &DiprFrame) -> Result<Self> {
        let n_doppler = frame.joints.first().map_or(0, |j| j.doppler_features.len());
        if frame.joints.iter().any(|j| j.doppler_features.len() != n_doppler) {
            return Err(Error::Shape("joints disagree on doppler feature length".into()));
        }
        let mut values = Vec::with_capacity(frame.joints.len() * (14 + n_doppler));
        for j in &frame.joints {
            values.extend(j.position_m.iter());
            values.extend(j.scale_m.iter());
            values.extend(j.rotation);
            values.extend(j.velocity_mps.iter());
            values.push(j.opacity);
            values.extend(&j.doppler_features);
        }
        Ok(ParamVector { values, n_doppler })
    }

    pub fn stride(&self) -> usize {
        14 + self.n_doppler
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coordinate(&self, idx: usize) -> Coordinate {
        let joint = idx / self.stride();
        let (kind, component) = match idx % self.stride() {
            o @ 0..=2 => (ParamKind::Position, o),
            o @ 3..=5 => (ParamKind::Scale, o - 3),
            o @ 6..=9 => (ParamKind::Rotation, o - 6),
            o @ 10..=12 => (ParamKind::Velocity, o - 10),
            13 => (ParamKind::Opacity, 0),
            o => (ParamKind::Doppler, o - 14),
        };
        Coordinate { joint, kind, component }
    }

    /// Writes the values into a copy of `template` without any
    /// normalization.
    pub fn to_frame(&self, template: &DiprFrame) -> Result<DiprFrame> {
        if template.joints.len() * self.stride() != self.values.len() {
            return Err(Error::Shape("parameter vector does not match the frame".into()));
        }
        let mut out = template.clone();
        for (j, chunk) in out.joints.iter_mut().zip(self.values.chunks(self.stride())) {
            j.position_m = Vector3::new(chunk[0], chunk[1], chunk[2]);
            j.scale_m = Vector3::new(chunk[3], chunk[4], chunk[5]);
            j.rotation = [chunk[6], chunk[7], chunk[8], chunk[9]];
            j.velocity_mps = Vector3::new(chunk[10], chunk[11], chunk[12]);
            j.opacity = chunk[13];
            j.doppler_features = chunk[14..].to_vec();
        }
        Ok(out)
    }

    /// Flattens a gradient in the same layout.
    pub fn flatten_gradient(&self, g: &FrameGradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for j in &g.joints {
            out.extend(j.position.iter());
            out.extend(j.scale.iter());
            out.extend(j.rotation);
            out.extend(j.velocity.iter());
            out.push(j.opacity);
            out.extend(&j.doppler_features);
        }
        out
    }

    pub fn step_for(&self, idx: usize) -> f64 {
        1e-6 * self.values[idx].abs().max(self.coordinate(idx).kind.typical_scale())
    }
}

/// Central difference `(f(x + h e) − f(x − h e)) / 2h`.
pub fn finite_difference_oracle<F>(f: F, x: &ParamVector, idx: usize, h: f64) -> Result<f64>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let (fp, fm) = one_sided_values(&f, x, idx, h)?;
    Ok((fp - fm) / (2.0 * h))
}

fn one_sided_values<F>(f: &F, x: &ParamVector, idx: usize, h: f64) -> Result<(f64, f64)>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Oracle(format!("step must be > 0, got {h}")));
    }
    if idx >= x.len() {
        return Err(Error::Oracle(format!("coordinate {idx} out of range {}", x.len())));
    }
    let eval = |delta: f64| -> Result<f64> {
        let mut y = x.clone();
        y.values[idx] += delta;
        let v = f(&y)?;
        if !v.is_finite() {
            return Err(Error::Oracle(format!("non-finite value at coordinate {idx}")));
        }
        Ok(v)
    };
    Ok((eval(h)?, eval(-h)?))
}

/// Ridders' polynomial extrapolation of central differences over the steps
/// `h0, h0/c, h0/c², …`. Each tableau entry's error is its extrapolation
/// residual plus `f_noise / h` for the smallest step it uses, where
/// `f_noise` bounds the absolute rounding noise of `f`. Returns the estimate
/// with the smallest error and that error.
pub fn ridders_derivative<F>(f: F, x: &ParamVector, idx: usize, h0: f64, f_noise: f64) -> Result<(f64, f64)>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    const CON: f64 = 1.4;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = finite_difference_oracle(&f, x, idx, h)?;
    let mut best = (a[0][0], f64::INFINITY);
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = finite_difference_oracle(&f, x, idx, h)?;
        let mut fac = CON * CON;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON * CON;
            let err = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs()) + f_noise / h;
            if err <= best.1 {
                best = (a[j][i], err);
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() + f_noise / h >= SAFE * best.1 {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub scenes: usize,
    pub tolerance: f64,
    /// Coordinates where both analytic and numeric gradients are below this
    /// magnitude are not scored.
    pub gradient_floor: f64,
    /// Initial Ridders steps as multiples of the per-coordinate base step;
    /// the run with the smallest error estimate is kept.
    pub ridders_step_multipliers: Vec<f64>,
    pub position_noise_m: f64,
    pub velocity_noise_mps: f64,
    pub radar: RadarParams,
    pub grid: HeatmapGrid,
    pub kernel: RenderKernelParams,
    pub loss: LossWeights,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            scenes: 20,
            tolerance: 1e-4,
            gradient_floor: 1e-8,
            ridders_step_multipliers: vec![1.0, 100.0, 10000.0],
            position_noise_m: 0.03,
            velocity_noise_mps: 0.5,
            radar: RadarParams::default(),
            grid: HeatmapGrid::default(),
            kernel: RenderKernelParams::default(),
            loss: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub scene: usize,
    pub index: usize,
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: Option<CoordinateCheck>,
    pub pass: bool,
    pub checked: usize,
    pub below_floor: usize,
    /// Coordinates whose one-sided differences disagree (kinks).
    pub excluded_kinks: usize,
}

impl GradcheckReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// A random small scene: a perturbed T-pose with random appearance, and an
/// observation rendered from a second perturbed T-pose.
pub fn random_scene(cfg: &GradcheckConfig, sk: &Skeleton, seed: u64, scene: usize) -> Result<(DiprFrame, Heatmap)> {
    let mut rng = seeds::rng(seed, scene as u64);
    let anchor = Vector3::new(rng.random_range(2.7..3.3), rng.random_range(-0.1..0.1), 0.0);
    let init = InitConfig::default();
    let make = |rng: &mut rand_chacha::ChaCha8Rng| -> DiprFrame {
        let pos = Normal::new(0.0, cfg.position_noise_m).unwrap();
        let vel = Normal::new(0.0, cfg.velocity_noise_mps).unwrap();
        let mut f = tpose_frame(sk, &init, &anchor, &Vector3::zeros());
        for j in &mut f.joints {
            for k in 0..3 {
                j.position_m[k] += pos.sample(rng);
                j.velocity_mps[k] = vel.sample(rng);
                j.scale_m[k] = rng.random_range(0.04..0.15);
            }
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            j.rotation = q.map(|c| c / n);
            j.opacity = rng.random_range(0.5..1.5);
            let mut phi: Vec<f64> = j.doppler_features.iter().map(|&f| f * rng.random_range(0.5..1.5)).collect();
            let s: f64 = phi.iter().sum();
            phi.iter_mut().for_each(|x| *x /= s);
            j.doppler_features = phi;
        }
        f
    };
    let frame = make(&mut rng);
    let target = make(&mut rng);
    let h_obs = render(&target, &cfg.radar, &cfg.grid, &cfg.kernel)?;
    Ok((frame, h_obs))
}

/// Compares the analytic total-loss gradient with central differences on
/// `count` random coordinates spread over `cfg.scenes` random scenes.
pub fn gradcheck(cfg: &GradcheckConfig, count: usize, seed: u64) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_coordinate: None,
        pass: true,
        checked: 0,
        below_floor: 0,
        excluded_kinks: 0,
    };
    if count == 0 {
        return Ok(report);
    }
    for o in gradcheck_outcomes(cfg, count, seed)? {
        match o {
            Outcome::Floor => report.below_floor += 1,
            Outcome::Kink(_) => report.excluded_kinks += 1,
            Outcome::Scored(c) => {
                report.checked += 1;
                if c.rel_err > report.max_rel_err || report.worst_coordinate.is_none() {
                    report.max_rel_err = report.max_rel_err.max(c.rel_err);
                    report.worst_coordinate = Some(c);
                }
            }
        }
    }
    report.pass = report.max_rel_err <= cfg.tolerance;
    Ok(report)
}

/// Every sampled coordinate's outcome, in sampling order per scene.
pub fn gradcheck_outcomes(cfg: &GradcheckConfig, count: usize, seed: u64) -> Result<Vec<Outcome>> {
    if cfg.scenes == 0 {
        return Err(Error::Config("gradcheck.scenes must be >= 1".into()));
    }
    if !(cfg.tolerance > 0.0) || !(cfg.gradient_floor >= 0.0) {
        return Err(Error::Config("gradcheck.tolerance must be > 0 and gradient_floor >= 0".into()));
    }
    if cfg.ridders_step_multipliers.is_empty() || cfg.ridders_step_multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Config("gradcheck.ridders_step_multipliers must be non-empty and positive".into()));
    }
    let sk = Skeleton::default_skeleton();
    let mut pick = seeds::rng(seed, u64::MAX);
    let per_scene: Vec<Vec<usize>> = {
        let stride = 14 + InitConfig::default().n_doppler;
        let len = sk.len() * stride;
        let mut v = vec![Vec::new(); cfg.scenes];
        for c in 0..count {
            v[c % cfg.scenes].push(pick.random_range(0..len));
        }
        v
    };
    let results: Vec<Vec<Outcome>> = per_scene
        .par_iter()
        .enumerate()
        .map(|(s, coords)| check_scene(cfg, &sk, seed, s, coords))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Result for one sampled coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Floor,
    Kink(CoordinateCheck),
    Scored(CoordinateCheck),
}

fn check_scene(cfg: &GradcheckConfig, sk: &Skeleton, seed: u64, scene: usize, coords: &[usize]) -> Result<Vec<Outcome>> {
    if coords.is_empty() {
        return Ok(Vec::new());
    }
    let (frame, h_obs) = random_scene(cfg, sk, seed, scene)?;
    let x = ParamVector::from_frame(&frame)?;
    let (b, g) = total_loss_breakdown(&frame, &h_obs, sk, &cfg.radar, &cfg.grid, &cfg.kernel, &cfg.loss)?;
    let f0 = b.total;
    let g = x.flatten_gradient(&g);
    let f = |y: &ParamVector| -> Result<f64> {
        let fr = y.to_frame(&frame)?;
        total_loss_value(&fr, &h_obs, sk, &cfg.radar, &cfg.grid, &cfg.kernel, &cfg.loss, Some(b.thresholds))
    };
    // A few ulps of the loss value.
    let noise = 8.0 * f64::EPSILON * f0.abs().max(f64::MIN_POSITIVE);
    coords
        .iter()
        .map(|&idx| {
            let h = x.step_for(idx);
            let mut numeric = (0.0, f64::INFINITY);
            for &m in &cfg.ridders_step_multipliers {
                let est = ridders_derivative(f, &x, idx, h * m, noise)?;
                if est.1 < numeric.1 {
                    numeric = est;
                }
            }
            let numeric = numeric.0;
            let analytic = g[idx];
            let scale = analytic.abs().max(numeric.abs());
            if scale <= cfg.gradient_floor {
                return Ok(Outcome::Floor);
            }
            let check = CoordinateCheck {
                scene,
                index: idx,
                coordinate: x.coordinate(idx),
                analytic,
                numeric,
                rel_err: (analytic - numeric).abs() / scale,
            };
            if check.rel_err > cfg.tolerance && is_kink(&f, &x, idx, h, f0, noise)? {
                return Ok(Outcome::Kink(check));
            }
            Ok(Outcome::Scored(check))
        })
        .collect()
}

/// A derivative jump near `x`: the one-sided difference mismatch, which is
/// `f''·h` on smooth functions, fails to shrink when the step is quartered.
fn is_kink<F>(f: &F, x: &ParamVector, idx: usize, h: f64, f0: f64, noise: f64) -> Result<bool>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let mismatch = |h: f64| -> Result<(f64, f64)> {
        let (fp, fm) = one_sided_values(f, x, idx, h)?;
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        Ok(((fwd - bwd).abs(), fwd.abs().max(bwd.abs())))
    };
    let (d1, g1) = mismatch(h)?;
    let (d4, _) = mismatch(h / 4.0)?;
    let significant = d1 > 1e-3 * g1 && d4 > 8.0 * noise / h;
    Ok(significant && d4 > 0.5 * d1)
}
