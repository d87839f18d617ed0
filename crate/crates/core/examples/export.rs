//! Writes one PGM image per Doppler slice of a rendered walking frame to the
//! directory given as the first argument (default `slices`).

use std::path::PathBuf;

use mgs::cli::pgm_slice;
use mgs::domain::{HeatmapGrid, RadarParams, Skeleton};
use mgs::renderer::RenderKernelParams;
use mgs::synth::{generate_scene, Motion, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "slices".into()));
    let spec = SceneSpec {
        motion: Motion::Walk { speed_mps: 0.8, stride_period_s: 1.2 },
        ..SceneSpec::default()
    };
    let (heatmaps, _) = generate_scene(
        &spec,
        &Skeleton::default_skeleton(),
        &RadarParams::default(),
        &HeatmapGrid::default(),
        &RenderKernelParams::default(),
    )?;
    let h = &heatmaps[0];
    std::fs::create_dir_all(&out)?;
    for m in 0..h.grid().doppler_bins {
        let path = out.join(format!("slice_{m:03}.pgm"));
        std::fs::write(&path, pgm_slice(h, m))?;
    }
    println!("wrote {} slices to {}", h.grid().doppler_bins, out.display());
    Ok(())
}
