//! Forward model from Gaussian joints to a range × Doppler × azimuth heatmap,
//! with exact reverse-mode gradients.
//!
//! Each joint contributes a complex term
//!
//! ```text
//! β / r⁴ · exp(j (ψ_chirp + ψ_doppler + ψ_array)) · K_r(k) · P(m) · K_a(n)
//! ```
//!
//! where `K_r`, `K_a` are truncated Gaussians in bin space whose widths come
//! from the joint covariance projected onto the line of sight and the
//! azimuth tangent, and `P(m)` is a Doppler kernel at the joint's radial
//! velocity multiplied by the joint's Doppler features resampled around the
//! same bin. Terms are summed coherently and the heatmap is the magnitude.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dipr::{covariance_of, quat_norm, rotation_matrix, DiprFrame, GaussianJoint};
use crate::domain::{Axis, Heatmap, HeatmapGrid, RadarParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// Rasterization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderKernelParams {
    pub range_sigma_floor_bins: f64,
    pub doppler_sigma_floor_bins: f64,
    pub angle_sigma_floor_bins: f64,
    pub truncation_sigmas: f64,
    /// Width of the Gaussian used to resample Doppler features onto the grid.
    pub feature_interp_bins: f64,
    /// Joints closer than this to the array are rejected.
    pub min_range_m: f64,
    /// Complex (interfering) accumulation; `false` sums power instead.
    pub coherent: bool,
}

impl Default for RenderKernelParams {
    fn default() -> Self {
        RenderKernelParams {
            range_sigma_floor_bins: 0.75,
            doppler_sigma_floor_bins: 0.75,
            angle_sigma_floor_bins: 0.75,
            truncation_sigmas: 4.0,
            feature_interp_bins: 0.5,
            min_range_m: 0.1,
            coherent: true,
        }
    }
}

impl RenderKernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("range_sigma_floor_bins", self.range_sigma_floor_bins),
            ("doppler_sigma_floor_bins", self.doppler_sigma_floor_bins),
            ("angle_sigma_floor_bins", self.angle_sigma_floor_bins),
            ("truncation_sigmas", self.truncation_sigmas),
            ("feature_interp_bins", self.feature_interp_bins),
            ("min_range_m", self.min_range_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("kernel.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn require_range(p: &Vector3<f64>) -> Result<f64> {
    let r = p.norm();
    if !(r > 0.0) {
        return Err(Error::Domain("modulation undefined at the array origin".into()));
    }
    Ok(r)
}

/// Chirp phase `2π f₀ τ` with IF frequency `f₀ = 2 S r / c` and round trip
/// `τ = 2 r / c`.
pub fn signal_phase(rp: &RadarParams, r: f64) -> f64 {
    let f0 = 2.0 * rp.chirp_slope() * r / SPEED_OF_LIGHT;
    let tau = 2.0 * r / SPEED_OF_LIGHT;
    2.0 * PI * f0 * tau
}

pub fn signal_modulation(rp: &RadarParams, p: &Vector3<f64>) -> Result<Complex64> {
    let r = require_range(p)?;
    Ok(Complex64::from_polar(1.0, signal_phase(rp, r)))
}

/// Doppler phase `2π · 2 v_r / λ`.
pub fn doppler_phase(rp: &RadarParams, v_r: f64) -> f64 {
    2.0 * PI * 2.0 * v_r / rp.wavelength_m
}

pub fn doppler_modulation(rp: &RadarParams, p: &Vector3<f64>, v: &Vector3<f64>) -> Result<Complex64> {
    let r = require_range(p)?;
    Ok(Complex64::from_polar(1.0, doppler_phase(rp, v.dot(p) / r)))
}

pub fn array_phase(rp: &RadarParams, az: f64, el: f64) -> f64 {
    2.0 * PI * (rp.antenna_spacing_az_m * az.sin() + rp.antenna_spacing_el_m * el.sin()) / rp.wavelength_m
}

pub fn antenna_phase(rp: &RadarParams, p: &Vector3<f64>) -> Result<Complex64> {
    let (_, az, el) = crate::geometry::cartesian_to_spherical(p)?;
    Ok(Complex64::from_polar(1.0, array_phase(rp, az, el)))
}

/// Two-way amplitude attenuation `1 / r⁴`.
pub fn path_loss(p: &Vector3<f64>, min_range_m: f64) -> Result<f64> {
    let r = p.norm();
    if !(r >= min_range_m) {
        return Err(Error::Domain(format!(
            "range {r} m is below the minimum {min_range_m} m"
        )));
    }
    Ok(1.0 / (r * r * r * r))
}

/// Per-parameter gradient of one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGradient {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub velocity: Vector3<f64>,
    pub opacity: f64,
    pub doppler_features: Vec<f64>,
}

impl JointGradient {
    pub fn zeros(n_doppler: usize) -> Self {
        JointGradient {
            position: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: [0.0; 4],
            velocity: Vector3::zeros(),
            opacity: 0.0,
            doppler_features: vec![0.0; n_doppler],
        }
    }

    fn add_scaled(&mut self, other: &JointGradient, c: f64) {
        self.position += other.position * c;
        self.scale += other.scale * c;
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            *a += b * c;
        }
        self.velocity += other.velocity * c;
        self.opacity += other.opacity * c;
        for (a, b) in self.doppler_features.iter_mut().zip(&other.doppler_features) {
            *a += b * c;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.position == Vector3::zeros()
            && self.scale == Vector3::zeros()
            && self.rotation == [0.0; 4]
            && self.velocity == Vector3::zeros()
            && self.opacity == 0.0
            && self.doppler_features.iter().all(|g| *g == 0.0)
    }
}

/// Gradient of a scalar with respect to every joint parameter of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGradient {
    pub joints: Vec<JointGradient>,
}

impl FrameGradient {
    pub fn zeros_like(frame: &DiprFrame) -> Self {
        FrameGradient {
            joints: frame
                .joints
                .iter()
                .map(|j| JointGradient::zeros(j.doppler_features.len()))
                .collect(),
        }
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &FrameGradient, c: f64) {
        for (a, b) in self.joints.iter_mut().zip(&other.joints) {
            a.add_scaled(b, c);
        }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        for j in &mut self.joints {
            let copy = j.clone();
            *j = JointGradient::zeros(copy.doppler_features.len());
            j.add_scaled(&copy, c);
        }
        self
    }
}

/// Window of a truncated Gaussian along one axis. The Gaussian of the
/// squared distance `x = d²/σ²` has its tangent at the cutoff `x = T²`
/// subtracted, so both value and slope vanish at the window edge.
#[derive(Debug, Clone)]
struct AxisKernel {
    center: f64,
    sigma: f64,
    start: usize,
    values: Vec<f64>,
    /// `exp(-x/2) − exp(-T²/2)`, the factor shared by `∂K/∂u` and `∂K/∂σ`.
    slopes: Vec<f64>,
}

impl AxisKernel {
    fn new(center: f64, sigma: f64, truncation: f64, bins: usize) -> Self {
        let lo = (center - truncation * sigma).ceil().max(0.0);
        let hi = (center + truncation * sigma).floor().min(bins as f64 - 1.0);
        let mut k = AxisKernel {
            center,
            sigma,
            start: 0,
            values: Vec::new(),
            slopes: Vec::new(),
        };
        if !(lo <= hi) {
            return k;
        }
        let t2 = truncation * truncation;
        let tail = (-0.5 * t2).exp();
        k.start = lo as usize;
        for i in lo as usize..=hi as usize {
            let d = (i as f64 - center) / sigma;
            let x = (d * d).min(t2);
            let e = (-0.5 * x).exp();
            k.values.push((e - tail * (1.0 + 0.5 * (t2 - x))).max(0.0));
            k.slopes.push(e - tail);
        }
        k
    }

    fn indices(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.start + i, v))
    }
}

/// Everything the backward pass needs about one joint's projection.
#[derive(Debug, Clone)]
struct Projection {
    r: f64,
    dir: Vector3<f64>,
    az: f64,
    el: f64,
    v_r: f64,
    tangent: Vector3<f64>,
    cov: Matrix3<f64>,
    amplitude: f64,
    phase: Complex64,
    range: AxisKernel,
    range_sigma_active: bool,
    radial_extent: f64,
    angle: AxisKernel,
    angle_sigma_active: bool,
    tangential_extent: f64,
    doppler: AxisKernel,
    /// Doppler features resampled onto the Doppler window.
    features: Vec<f64>,
    /// `K_v(m) * Φ(m)` on the Doppler window.
    profile: Vec<f64>,
}

fn project_joint(
    idx: usize,
    j: &GaussianJoint,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
) -> Result<Projection> {
    let p = j.position_m;
    let fail = |msg: String| Error::Render { joint: idx, msg };
    if !p.iter().chain(j.velocity_mps.iter()).all(|x| x.is_finite()) {
        return Err(fail("non-finite position or velocity".into()));
    }
    let r = p.norm();
    if !(r >= kp.min_range_m) {
        return Err(fail(format!("range {r:.4} m below minimum {} m", kp.min_range_m)));
    }
    if !(p.x > 0.0) {
        return Err(fail("joint is behind the array plane".into()));
    }
    let rho = p.x.hypot(p.y);
    let az = p.y.atan2(p.x);
    let el = p.z.atan2(rho);
    let (r_lo, r_hi) = grid.coverage(Axis::Range);
    let (a_lo, a_hi) = grid.coverage(Axis::Angle);
    if r < r_lo || r > r_hi {
        return Err(fail(format!("range {r:.4} m outside grid coverage [{r_lo}, {r_hi}]")));
    }
    if az < a_lo || az > a_hi {
        return Err(fail(format!("azimuth {az:.4} rad outside grid coverage [{a_lo}, {a_hi}]")));
    }
    let dir = p / r;
    let v_r = j.velocity_mps.dot(&dir);
    let (sa, ca) = az.sin_cos();
    let tangent = Vector3::new(-sa, ca, 0.0);

    let qn = quat_norm(&j.rotation);
    let q = j.rotation.map(|c| c / qn);
    let cov = covariance_of(&q, &j.scale_m);

    let radial_extent = dir.dot(&(cov * dir)).max(0.0).sqrt();
    let range_sigma_raw = radial_extent / grid.range_res_m;
    let range_sigma_active = range_sigma_raw > kp.range_sigma_floor_bins;
    let range_sigma = if range_sigma_active {
        range_sigma_raw
    } else {
        kp.range_sigma_floor_bins
    };

    let tangential_extent = tangent.dot(&(cov * tangent)).max(0.0).sqrt();
    let angle_sigma_raw = (tangential_extent / r).atan() / grid.angle_res_rad;
    let angle_sigma_active = angle_sigma_raw > kp.angle_sigma_floor_bins;
    let angle_sigma = if angle_sigma_active {
        angle_sigma_raw
    } else {
        kp.angle_sigma_floor_bins
    };

    let t = kp.truncation_sigmas;
    let range = AxisKernel::new(grid.bin_coord(Axis::Range, r), range_sigma, t, grid.range_bins);
    let angle = AxisKernel::new(grid.bin_coord(Axis::Angle, az), angle_sigma, t, grid.angle_bins);
    let doppler = AxisKernel::new(
        grid.bin_coord(Axis::Doppler, v_r),
        kp.doppler_sigma_floor_bins,
        t,
        grid.doppler_bins,
    );

    let n_d = j.doppler_features.len();
    let c = (n_d / 2) as f64;
    let w = kp.feature_interp_bins;
    let features: Vec<f64> = doppler
        .indices()
        .map(|(m, _)| {
            let base = m as f64 - doppler.center + c;
            j.doppler_features
                .iter()
                .enumerate()
                .map(|(k, &f)| {
                    let x = (base - k as f64) / w;
                    f * (-0.5 * x * x).exp()
                })
                .sum()
        })
        .collect();
    let profile = doppler.values.iter().zip(&features).map(|(a, b)| a * b).collect();

    let amplitude = j.opacity / (r * r * r * r);
    let psi = signal_phase(rp, r) + doppler_phase(rp, v_r) + array_phase(rp, az, el);
    Ok(Projection {
        r,
        dir,
        az,
        el,
        v_r,
        tangent,
        cov,
        amplitude,
        phase: Complex64::from_polar(1.0, psi),
        range,
        range_sigma_active,
        radial_extent,
        angle,
        angle_sigma_active,
        tangential_extent,
        doppler,
        features,
        profile,
    })
}

/// Forward pass state, reusable for gradients.
#[derive(Debug, Clone)]
pub struct Rendered {
    grid: HeatmapGrid,
    rp: RadarParams,
    kp: RenderKernelParams,
    /// Complex field (coherent) or per-cell power stored in `re` (incoherent).
    field: Vec<Complex64>,
    heatmap: Heatmap,
    projections: Vec<Projection>,
}

impl Rendered {
    pub fn heatmap(&self) -> &Heatmap {
        &self.heatmap
    }

    pub fn into_heatmap(self) -> Heatmap {
        self.heatmap
    }

    /// Pre-magnitude complex field. For incoherent accumulation this is the
    /// real non-negative amplitude `sqrt(power)`.
    pub fn field(&self) -> Vec<Complex64> {
        if self.kp.coherent {
            self.field.clone()
        } else {
            self.field.iter().map(|c| Complex64::new(c.re.sqrt(), 0.0)).collect()
        }
    }

    /// Gradient of `<adjoint, H>` with respect to every parameter of
    /// `joints`, which must be the joints this state was rendered from.
    pub fn backward(&self, joints: &[GaussianJoint], adjoint: &[f64]) -> Result<Vec<JointGradient>> {
        if adjoint.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "adjoint has {} cells, grid {}",
                adjoint.len(),
                self.grid.len()
            )));
        }
        if joints.len() != self.projections.len() {
            return Err(Error::Shape("joint list differs from the rendered one".into()));
        }
        let h = self.heatmap.values();
        // Complex cotangent of the field: dL/dRe C + j dL/dIm C.
        let cot: Vec<Complex64> = if self.kp.coherent {
            self.field
                .iter()
                .zip(h)
                .zip(adjoint)
                .map(|((c, &mag), &g)| if mag > 0.0 && g != 0.0 { c * (g / mag) } else { Complex64::new(0.0, 0.0) })
                .collect()
        } else {
            h.iter()
                .zip(adjoint)
                .map(|(&mag, &g)| if mag > 0.0 { Complex64::new(g / mag, 0.0) } else { Complex64::new(0.0, 0.0) })
                .collect()
        };
        Ok(joints
            .iter()
            .zip(&self.projections)
            .map(|(j, pr)| joint_backward(j, pr, &cot, &self.grid, &self.rp, &self.kp))
            .collect())
    }
}

/// Renders arbitrary scatterers (joints, clutter) into a heatmap.
pub fn render_joints(
    joints: &[GaussianJoint],
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
) -> Result<Rendered> {
    rp.validate()?;
    grid.validate()?;
    kp.validate()?;
    let projections = joints
        .iter()
        .enumerate()
        .map(|(i, j)| project_joint(i, j, rp, grid, kp))
        .collect::<Result<Vec<_>>>()?;
    let mut field = vec![Complex64::new(0.0, 0.0); grid.len()];
    for pr in &projections {
        let a = pr.phase * pr.amplitude;
        for (k, kr) in pr.range.indices() {
            for (mi, &pm) in pr.profile.iter().enumerate() {
                let m = pr.doppler.start + mi;
                let row = grid.index(k, m, 0);
                let krm = kr * pm;
                for (n, ka) in pr.angle.indices() {
                    let term = krm * ka;
                    if kp.coherent {
                        field[row + n] += a * term;
                    } else {
                        let t = pr.amplitude * term;
                        field[row + n].re += t * t;
                    }
                }
            }
        }
    }
    let values = if kp.coherent {
        field.iter().map(|c| c.norm()).collect()
    } else {
        field.iter().map(|c| c.re.sqrt()).collect()
    };
    Ok(Rendered {
        grid: *grid,
        rp: *rp,
        kp: *kp,
        field,
        heatmap: Heatmap::from_raw(*grid, values),
        projections,
    })
}

/// `H = |Σ_i term_i|` over the grid.
pub fn render(frame: &DiprFrame, rp: &RadarParams, grid: &HeatmapGrid, kp: &RenderKernelParams) -> Result<Heatmap> {
    Ok(render_joints(&frame.joints, rp, grid, kp)?.into_heatmap())
}

/// Renders and returns the gradient of `<adjoint, H>` w.r.t. every parameter.
pub fn render_with_gradients(
    frame: &DiprFrame,
    rp: &RadarParams,
    grid: &HeatmapGrid,
    kp: &RenderKernelParams,
    adjoint: &[f64],
) -> Result<(Heatmap, FrameGradient)> {
    let state = render_joints(&frame.joints, rp, grid, kp)?;
    let joints = state.backward(&frame.joints, adjoint)?;
    Ok((state.into_heatmap(), FrameGradient { joints }))
}

/// Derivative of `R(q)` entries with respect to `(w, x, y, z)` contracted
/// with `g_r` (gradient w.r.t. the rotation matrix).
fn rotation_vjp(q: &[f64; 4], g_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |a: usize, b: usize| g_r[(a, b)];
    let dw = -2.0 * z * g(0, 1) + 2.0 * y * g(0, 2) + 2.0 * z * g(1, 0) - 2.0 * x * g(1, 2) - 2.0 * y * g(2, 0)
        + 2.0 * x * g(2, 1);
    let dx = 2.0 * y * g(0, 1) + 2.0 * z * g(0, 2) + 2.0 * y * g(1, 0) - 4.0 * x * g(1, 1) - 2.0 * w * g(1, 2)
        + 2.0 * z * g(2, 0)
        + 2.0 * w * g(2, 1)
        - 4.0 * x * g(2, 2);
    let dy = -4.0 * y * g(0, 0) + 2.0 * x * g(0, 1) + 2.0 * w * g(0, 2) + 2.0 * x * g(1, 0) + 2.0 * z * g(1, 2)
        - 2.0 * w * g(2, 0)
        + 2.0 * z * g(2, 1)
        - 4.0 * y * g(2, 2);
    let dz = -4.0 * z * g(0, 0) - 2.0 * w * g(0, 1) + 2.0 * x * g(0, 2) + 2.0 * w * g(1, 0) - 4.0 * z * g(1, 1)
        + 2.0 * y * g(1, 2)
        + 2.0 * x * g(2, 0)
        + 2.0 * y * g(2, 1);
    [dw, dx, dy, dz]
}

fn joint_backward(
    j: &GaussianJoint,
    pr: &Projection,
    cot: &[Complex64],
    grid: &HeatmapGrid,
    rp: &RadarParams,
    kp: &RenderKernelParams,
) -> JointGradient {
    let n_d = j.doppler_features.len();
    let mut out = JointGradient::zeros(n_d);
    if pr.range.values.is_empty() || pr.angle.values.is_empty() || pr.profile.is_empty() {
        return out;
    }
    let a = pr.amplitude;

    // Sums over the window, per joint.
    let mut s_amp = 0.0; // Σ w_re K
    let mut s_im = 0.0; // Σ w_im K
    let mut s_r1 = 0.0; // Σ w_re K' (k - u_r)
    let mut s_r2 = 0.0; // Σ w_re K' (k - u_r)²
    let mut s_a1 = 0.0;
    let mut s_a2 = 0.0;
    let mut per_m = vec![0.0; pr.profile.len()]; // Σ_{k,n} w_re K_r K_a
    let rot = pr.phase.conj();
    for (ki, (k, kr)) in pr.range.indices().enumerate() {
        let dk = k as f64 - pr.range.center;
        let dkr = pr.range.slopes[ki];
        for (mi, &pm) in pr.profile.iter().enumerate() {
            let row = grid.index(k, pr.doppler.start + mi, 0);
            for (ni, (n, ka)) in pr.angle.indices().enumerate() {
                let g = cot[row + n];
                if g.re == 0.0 && g.im == 0.0 {
                    continue;
                }
                let base = kr * ka;
                let kk = base * pm;
                // Re/Im of conj(G) e^{jψ}; incoherent uses w_re = G·|t|.
                let (wr, wi) = if kp.coherent {
                    let z = (g * rot).conj();
                    (z.re, z.im)
                } else {
                    (g.re * a * kk, 0.0)
                };
                let dn = n as f64 - pr.angle.center;
                let rk = wr * dkr * ka * pm;
                let ak = wr * kr * pr.angle.slopes[ni] * pm;
                s_amp += wr * kk;
                s_im += wi * kk;
                s_r1 += rk * dk;
                s_r2 += rk * dk * dk;
                s_a1 += ak * dn;
                s_a2 += ak * dn * dn;
                per_m[mi] += wr * base;
            }
        }
    }

    let g_amp = s_amp;
    let g_psi = -a * s_im;
    let sr = pr.range.sigma;
    let sa = pr.angle.sigma;
    let g_ur = a * s_r1 / (sr * sr);
    let g_sr = a * s_r2 / (sr * sr * sr);
    let g_ua = a * s_a1 / (sa * sa);
    let g_sa = a * s_a2 / (sa * sa * sa);

    // Doppler window: dP/du_v and dP/dφ_k.
    let sv = pr.doppler.sigma;
    let w = kp.feature_interp_bins;
    let c = (n_d / 2) as f64;
    let mut g_uv = 0.0;
    for (mi, (m, kv)) in pr.doppler.indices().enumerate() {
        let dkv = pr.doppler.slopes[mi];
        let weight = per_m[mi];
        if weight == 0.0 {
            continue;
        }
        let dm = m as f64 - pr.doppler.center;
        let mut dphi_du = 0.0;
        let base = m as f64 - pr.doppler.center + c;
        for (k, &f) in j.doppler_features.iter().enumerate() {
            let x = (base - k as f64) / w;
            let gk = (-0.5 * x * x).exp();
            dphi_du += f * gk * x / w;
            out.doppler_features[k] += a * weight * kv * gk;
        }
        let dp_du = dkv * dm / (sv * sv) * pr.features[mi] + kv * dphi_du;
        g_uv += a * weight * dp_du;
    }

    // Latent -> geometric quantities.
    let r = pr.r;
    let lambda = rp.wavelength_m;
    let dpsi_dr = 16.0 * PI * rp.chirp_slope() * r / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
    let dpsi_dvr = 4.0 * PI / lambda;
    let dpsi_daz = 2.0 * PI * rp.antenna_spacing_az_m * pr.az.cos() / lambda;
    let dpsi_del = 2.0 * PI * rp.antenna_spacing_el_m * pr.el.cos() / lambda;

    let mut g_r = g_amp * (-4.0 * a / r) + g_psi * dpsi_dr + g_ur / grid.range_res_m;
    let mut g_az = g_psi * dpsi_daz + g_ua / grid.angle_res_rad;
    let g_el = g_psi * dpsi_del;
    let g_vr = g_psi * dpsi_dvr + g_uv / grid.doppler_res_mps;

    let mut g_cov = Matrix3::zeros();
    let mut g_p = Vector3::zeros();
    let proj = Matrix3::identity() - pr.dir * pr.dir.transpose();
    if pr.range_sigma_active && pr.radial_extent > 0.0 {
        let g_q = g_sr / (2.0 * pr.radial_extent * grid.range_res_m);
        g_cov += pr.dir * pr.dir.transpose() * g_q;
        g_p += proj * (pr.cov * pr.dir) * (2.0 * g_q / r);
    }
    if pr.angle_sigma_active && pr.tangential_extent > 0.0 {
        let ext = pr.tangential_extent;
        let ratio = ext / r;
        let datan = 1.0 / (grid.angle_res_rad * (1.0 + ratio * ratio));
        let g_q = g_sa * datan / (2.0 * ext * r);
        g_r += g_sa * datan * (-ext / (r * r));
        g_cov += pr.tangent * pr.tangent.transpose() * g_q;
        let (s, co) = pr.az.sin_cos();
        let dt = Vector3::new(-co, -s, 0.0);
        g_az += g_q * 2.0 * pr.tangent.dot(&(pr.cov * dt));
    }

    let p = j.position_m;
    let rho2 = p.x * p.x + p.y * p.y;
    let rho = rho2.sqrt();
    let daz_dp = Vector3::new(-p.y / rho2, p.x / rho2, 0.0);
    let del_dp = Vector3::new(-p.z * p.x / (rho * r * r), -p.z * p.y / (rho * r * r), rho / (r * r));
    let dvr_dp = (j.velocity_mps - pr.dir * pr.v_r) / r;
    g_p += pr.dir * g_r + daz_dp * g_az + del_dp * g_el + dvr_dp * g_vr;
    out.position = g_p;
    out.velocity = pr.dir * g_vr;
    out.opacity = g_amp / (r * r * r * r);

    // Covariance -> scale and rotation.
    let qn = quat_norm(&j.rotation);
    let q = j.rotation.map(|x| x / qn);
    let rm = rotation_matrix(&q);
    let s2 = j.scale_m.component_mul(&j.scale_m);
    let d = Matrix3::from_diagonal(&s2);
    let g_sym = (g_cov + g_cov.transpose()) * 0.5;
    let local = rm.transpose() * g_sym * rm;
    for k in 0..3 {
        out.scale[k] = 2.0 * j.scale_m[k] * local[(k, k)];
    }
    let g_rot = g_sym * rm * d * 2.0;
    let g_qhat = rotation_vjp(&q, &g_rot);
    let dot: f64 = g_qhat.iter().zip(&q).map(|(a, b)| a * b).sum();
    for k in 0..4 {
        out.rotation[k] = (g_qhat[k] - q[k] * dot) / qn;
    }
    out
}
