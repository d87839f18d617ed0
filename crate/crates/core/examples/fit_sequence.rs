//! Tracks an arm-swing sequence with warm-started fits and prints per-frame
//! error and the fitted wrist speed against ground truth.

use mgs::domain::{HeatmapGrid, RadarParams, Skeleton};
use mgs::eval::{mpjpe_per_frame, PoseSequence};
use mgs::fitter::{fit_sequence, FitConfig};
use mgs::renderer::RenderKernelParams;
use mgs::synth::{generate_scene, gt_frame, Motion, SceneSpec};

fn main() -> mgs::Result<()> {
    let (sk, rp, grid, kp) = (
        Skeleton::default_skeleton(),
        RadarParams::default(),
        HeatmapGrid::default(),
        RenderKernelParams::default(),
    );
    let spec = SceneSpec {
        motion: Motion::ArmSwing { amplitude_m: 0.2, period_s: 2.0 },
        frames: 10,
        ..SceneSpec::default()
    };
    let (heatmaps, gt) = generate_scene(&spec, &sk, &rp, &grid, &kp)?;
    let init = gt_frame(&gt, 0, &sk, &spec.init);
    let fitted = fit_sequence(&heatmaps, &sk, &rp, &grid, &kp, &FitConfig::default(), Some(&init))?;

    let pred = PoseSequence::new(fitted.iter().map(|(f, _)| f.positions()).collect(), Some(spec.dt_s))?;
    let truth = PoseSequence::new((0..spec.frames).map(|t| gt.positions(t)).collect(), Some(spec.dt_s))?;
    let wrist = sk.joint_index("l_wrist").expect("default skeleton has l_wrist");
    println!("frame  MPJPE(m)  iters  wrist |v| fit / truth (m/s)");
    for (t, e) in mpjpe_per_frame(&pred, &truth)?.iter().enumerate() {
        let (frame, report) = &fitted[t];
        println!(
            "{t:>5}  {e:.4}    {:>5}  {:.3} / {:.3}",
            report.iterations_run,
            frame.joints[wrist].velocity_mps.norm(),
            gt.velocity_vectors(t)[wrist].norm()
        );
    }
    Ok(())
}
