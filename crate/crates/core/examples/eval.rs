//! Pose metrics on a known perturbation: a rigid offset, a similarity copy
//! and per-joint noise.

use nalgebra::{Rotation3, Vector3};

use mgs::domain::Skeleton;
use mgs::eval::{evaluate, Alignment, PoseSequence};

type Perturb<'a> = Box<dyn Fn(usize, &Vector3<f64>) -> Vector3<f64> + 'a>;

fn main() -> mgs::Result<()> {
    let sk = Skeleton::default_skeleton();
    let gt: Vec<Vec<Vector3<f64>>> = (0..3)
        .map(|t| sk.tpose().iter().map(|p| p + Vector3::new(3.0 - 0.1 * t as f64, 0.0, 0.0)).collect())
        .collect();
    let truth = PoseSequence::new(gt.clone(), Some(0.1))?;
    let rot = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
    let cases: [(&str, Perturb); 3] = [
        ("(3, 4, 0) cm offset", Box::new(|_, p| p + Vector3::new(0.03, 0.04, 0.0))),
        ("rotated, scaled, shifted", Box::new(|_, p| rot * p * 1.2 + Vector3::new(0.5, 0.0, 0.2))),
        ("alternating 2 cm jitter", Box::new(|j, p| p + Vector3::new(0.0, if j % 2 == 0 { 0.02 } else { -0.02 }, 0.0))),
    ];
    for (label, f) in &cases {
        let pred = PoseSequence::new(
            gt.iter().map(|pose| pose.iter().enumerate().map(|(j, p)| f(j, p)).collect()).collect(),
            Some(0.1),
        )?;
        let r = evaluate(&pred, &truth, Alignment::Similarity, None)?;
        println!("{label}: MPJPE {:.4} m, PA-MPJPE {:.4} m", r.mpjpe_m, r.pa_mpjpe_m);
        if let Some(mi) = r.motion_intensity_mps {
            println!("  motion intensity {:?}", mi.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
        }
    }
    Ok(())
}
