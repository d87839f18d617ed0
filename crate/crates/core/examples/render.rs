//! Renders a T-pose walking toward the radar and prints the range, Doppler
//! and angle profiles of the heatmap.

use nalgebra::Vector3;

use mgs::dipr::{tpose_frame, InitConfig};
use mgs::domain::{Axis, HeatmapGrid, RadarParams, Skeleton};
use mgs::renderer::{render, RenderKernelParams};

fn bars(label: &str, profile: &[f64], centers: impl Fn(usize) -> f64) {
    let peak = profile.iter().copied().fold(0.0, f64::max);
    println!("{label}");
    for (i, v) in profile.iter().enumerate() {
        let n = if peak > 0.0 { (40.0 * v / peak).round() as usize } else { 0 };
        println!("  {:>7.3} {}", centers(i), "#".repeat(n));
    }
}

fn main() -> mgs::Result<()> {
    let sk = Skeleton::default_skeleton();
    let grid = HeatmapGrid::default();
    let frame = tpose_frame(&sk, &InitConfig::default(), &Vector3::new(3.0, 0.1, 0.0), &Vector3::new(-0.8, 0.0, 0.0));
    let h = render(&frame, &RadarParams::default(), &grid, &RenderKernelParams::default())?;
    let (k, m, n) = grid.unflatten(h.argmax());
    println!(
        "peak {:.3e} at range {:.3} m, v_r {:.3} m/s, az {:.3} rad",
        h.max(),
        grid.center_of(Axis::Range, k),
        grid.center_of(Axis::Doppler, m),
        grid.center_of(Axis::Angle, n)
    );
    bars("range (m)", &h.range_profile(), |i| grid.range_center(i));
    bars("radial velocity (m/s)", &h.doppler_profile(), |i| grid.doppler_center(i));
    bars("azimuth (rad)", &h.angle_profile(), |i| grid.angle_center(i));
    Ok(())
}
