//! Conversions between heatmap (range, Doppler, azimuth) space and Cartesian
//! space, and coarse state extraction from a heatmap.
//!
//! Frame convention: radar at the origin looking along +x, +y to the left,
//! +z up. Azimuth is measured in the x-y plane, elevation from it.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;

use crate::domain::{Axis, Heatmap, HeatmapGrid};
use crate::error::{Error, Result};

/// Coarse positions and velocities read off a heatmap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoarseState {
    pub positions_m: Vec<Vector3<f64>>,
    pub velocities_mps: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl CoarseState {
    pub fn len(&self) -> usize {
        self.positions_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions_m.is_empty()
    }
}

pub fn spherical_to_cartesian(r: f64, az: f64, el: f64) -> Result<Vector3<f64>> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("range must be >= 0, got {r}")));
    }
    if !(az.abs() < FRAC_PI_2) || !(el.abs() < FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "angles must lie in (-pi/2, pi/2): az = {az}, el = {el}"
        )));
    }
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    Ok(Vector3::new(r * ce * ca, r * ce * sa, r * se))
}

/// Returns `(r, az, el)`. Requires the point to lie in front of the array.
pub fn cartesian_to_spherical(p: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    if !(p.x > 0.0) {
        return Err(Error::Domain(format!(
            "point {:?} is not in front of the array (x must be > 0)",
            p.as_slice()
        )));
    }
    let rho = p.x.hypot(p.y);
    Ok((p.norm(), p.y.atan2(p.x), p.z.atan2(rho)))
}

pub fn radial_velocity(p: &Vector3<f64>, v: &Vector3<f64>) -> Result<f64> {
    let r = p.norm();
    if !(r > 0.0) {
        return Err(Error::Domain("radial velocity undefined at zero position".into()));
    }
    Ok(v.dot(p) / r)
}

/// Keeps the `ceil(top_fraction * cells)` strongest cells (lower flat index
/// wins ties), drops zero-intensity ones, and maps each to a position and a
/// velocity along its line of sight. Elevation is taken as 0.
pub fn extract_coarse(h: &Heatmap, top_fraction: f64) -> Result<CoarseState> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top_fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    let grid = h.grid();
    let values = h.values();
    let keep = ((top_fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    let by_strength = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if keep < order.len() {
        order.select_nth_unstable_by(keep, by_strength);
        order.truncate(keep);
    }
    order.sort_unstable_by(by_strength);

    let mut out = CoarseState::default();
    for flat in order {
        let w = values[flat];
        if w <= 0.0 {
            continue;
        }
        let (k, m, n) = grid.unflatten(flat);
        let (position, velocity) = cell_state(grid, k, m, n)?;
        out.positions_m.push(position);
        out.velocities_mps.push(velocity);
        out.weights.push(w);
    }
    Ok(out)
}

fn cell_state(grid: &HeatmapGrid, k: usize, m: usize, n: usize) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let r = grid.range_center(k);
    let az = grid.angle_center(n);
    let el = 0.0_f64;
    let position = spherical_to_cartesian(r.max(0.0), az, el)?;
    let v_d = grid.doppler_center(m);
    let v_r = v_d * az.cos() * el.cos();
    let velocity = Vector3::new(v_r * az.cos(), v_r * az.sin(), v_r * el.sin());
    Ok((position, velocity))
}

/// Range × angle grid (range outer, angle inner).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAngleMap {
    pub range_bins: usize,
    pub angle_bins: usize,
    pub values: Vec<f64>,
}

impl RangeAngleMap {
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.values[k * self.angle_bins + n]
    }
}

/// Sum over the Doppler axis.
pub fn range_angle_marginal(h: &Heatmap) -> RangeAngleMap {
    let (r, v, a) = h.grid().shape();
    let mut values = vec![0.0; r * a];
    for k in 0..r {
        for m in 0..v {
            for n in 0..a {
                values[k * a + n] += h.get(k, m, n);
            }
        }
    }
    RangeAngleMap {
        range_bins: r,
        angle_bins: a,
        values,
    }
}

/// Frame-to-frame intensity change of the range-angle marginal, per second.
pub fn temporal_velocity(prev: &Heatmap, curr: &Heatmap, dt: f64) -> Result<RangeAngleMap> {
    prev.check_same_grid(curr)?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be > 0, got {dt}")));
    }
    let a = range_angle_marginal(prev);
    let b = range_angle_marginal(curr);
    Ok(RangeAngleMap {
        range_bins: a.range_bins,
        angle_bins: a.angle_bins,
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(p, c)| (c - p) / dt)
            .collect(),
    })
}

/// Radial velocity per range-angle cell from the temporal change of the
/// marginal under brightness constancy along range: `v_r = -I_t / I_r`.
/// Cells whose range gradient is below `min_gradient_frac` of the largest
/// range gradient are reported as 0.
pub fn radial_flow(prev: &Heatmap, curr: &Heatmap, dt: f64, min_gradient_frac: f64) -> Result<RangeAngleMap> {
    let it = temporal_velocity(prev, curr, dt)?;
    let a = range_angle_marginal(prev);
    let b = range_angle_marginal(curr);
    let res = curr.grid().range_res_m;
    let (rb, ab) = (a.range_bins, a.angle_bins);
    let mean = |k: usize, n: usize| 0.5 * (a.get(k, n) + b.get(k, n));
    let mut grad = vec![0.0; rb * ab];
    for k in 0..rb {
        for n in 0..ab {
            grad[k * ab + n] = if rb < 2 {
                0.0
            } else if k == 0 {
                (mean(1, n) - mean(0, n)) / res
            } else if k == rb - 1 {
                (mean(k, n) - mean(k - 1, n)) / res
            } else {
                (mean(k + 1, n) - mean(k - 1, n)) / (2.0 * res)
            };
        }
    }
    let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let floor = gmax * min_gradient_frac;
    let values = grad
        .iter()
        .zip(&it.values)
        .map(|(&g, &t)| if g.abs() > floor && g != 0.0 { -t / g } else { 0.0 })
        .collect();
    Ok(RangeAngleMap {
        range_bins: rb,
        angle_bins: ab,
        values,
    })
}

/// Coarse extraction for heatmaps without a usable Doppler axis: cells are
/// chosen from the range-angle marginal of `curr` and velocities come from
/// [`radial_flow`] between `prev` and `curr`.
pub fn extract_coarse_from_flow(
    prev: &Heatmap,
    curr: &Heatmap,
    dt: f64,
    top_fraction: f64,
) -> Result<CoarseState> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top_fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    let flow = radial_flow(prev, curr, dt, 0.05)?;
    let marginal = range_angle_marginal(curr);
    let grid = curr.grid();
    let values = &marginal.values;
    let keep = ((top_fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    let mut out = CoarseState::default();
    for &flat in order.iter().take(keep) {
        let w = values[flat];
        if w <= 0.0 {
            continue;
        }
        let (k, n) = (flat / marginal.angle_bins, flat % marginal.angle_bins);
        let az = grid.center_of(Axis::Angle, n);
        let position = spherical_to_cartesian(grid.range_center(k).max(0.0), az, 0.0)?;
        let v_r = flow.values[flat];
        out.positions_m.push(position);
        out.velocities_mps.push(Vector3::new(v_r * az.cos(), v_r * az.sin(), 0.0));
        out.weights.push(w);
    }
    Ok(out)
}
