//! Loss-weight ablation on a small synthetic set; prints one table per axis.
//! Pass `--full` for the default three-seed sweep.

use mgs::domain::Skeleton;
use mgs::sweep::{run_sweep, SweepAxis, SweepConfig};

fn main() -> mgs::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut cfg = SweepConfig::default();
    if !full {
        cfg.seeds = vec![1];
        cfg.scene.frames = 2;
    }
    let report = run_sweep(&cfg, &Skeleton::default_skeleton())?;
    println!("init MPJPE {:.4} m", report.init_mpjpe_m);
    for axis in SweepAxis::ALL {
        println!("{}", axis.name());
        for p in report.axis(axis) {
            let mark = if p.is_default { " *" } else { "" };
            println!("  {:>5.2}  MPJPE {:.4}  PA-MPJPE {:.4}{mark}", p.value, p.mpjpe_m, p.pa_mpjpe_m);
        }
    }
    Ok(())
}
