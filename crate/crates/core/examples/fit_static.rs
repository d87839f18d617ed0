//! Fits one static T-pose frame from coarse extraction and from a perturbed
//! ground truth, reporting loss and joint error.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use mgs::domain::{HeatmapGrid, RadarParams, Skeleton};
use mgs::eval::{mpjpe, pa_mpjpe, PoseSequence};
use mgs::fitter::{fit_frame, FitConfig};
use mgs::renderer::RenderKernelParams;
use mgs::synth::{generate_scene, gt_frame, SceneSpec};

fn main() -> mgs::Result<()> {
    let (sk, rp, grid, kp) = (
        Skeleton::default_skeleton(),
        RadarParams::default(),
        HeatmapGrid::default(),
        RenderKernelParams::default(),
    );
    let spec = SceneSpec::default();
    let (heatmaps, gt) = generate_scene(&spec, &sk, &rp, &grid, &kp)?;
    let truth = PoseSequence::new(vec![gt.positions(0)], None)?;

    let mut perturbed = gt_frame(&gt, 0, &sk, &spec.init);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.1).unwrap();
    for j in &mut perturbed.joints {
        j.position_m += Vector3::from_fn(|_, _| noise.sample(&mut rng));
    }

    for (label, init) in [("coarse extraction", None), ("ground truth + 0.1 m noise", Some(&perturbed))] {
        let start = init.map(|f| PoseSequence::new(vec![f.positions()], None)).transpose()?;
        let (frame, report) = fit_frame(&heatmaps[0], &sk, &rp, &grid, &kp, &FitConfig::default(), init)?;
        let pred = PoseSequence::new(vec![frame.positions()], None)?;
        println!("{label}:");
        if let Some(s) = start {
            println!("  init MPJPE {:.4} m", mpjpe(&s, &truth)?);
        }
        println!(
            "  loss {:.4} -> {:.4} in {} iterations ({:.2} s)",
            report.initial_loss, report.final_loss, report.iterations_run, report.wall_time_s
        );
        println!("  MPJPE {:.4} m, PA-MPJPE {:.4} m", mpjpe(&pred, &truth)?, pa_mpjpe(&pred, &truth)?);
    }
    Ok(())
}
