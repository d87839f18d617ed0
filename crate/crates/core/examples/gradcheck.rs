//! Verifies analytic total-loss gradients against central differences.
//! Pass `--verbose` to list every coordinate above the tolerance.

use mgs::grad::{gradcheck, gradcheck_outcomes, GradcheckConfig, Outcome};

fn main() -> mgs::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let verbose = args.iter().any(|a| a == "--verbose");
    let count: usize = args.iter().find_map(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args
        .iter()
        .find_map(|s| s.strip_prefix("--seed=").and_then(|v| v.parse().ok()))
        .unwrap_or(1);
    let cfg = GradcheckConfig::default();
    let t = std::time::Instant::now();
    let report = gradcheck(&cfg, count, seed)?;
    println!("{}", report.to_toml_string());
    println!("elapsed {:.2} s", t.elapsed().as_secs_f64());
    if verbose {
        for o in gradcheck_outcomes(&cfg, count, seed)? {
            if let Outcome::Kink(c) = &o {
                println!("kink scene {:2} joint {:2} {:?}[{}] analytic {:+.6e} numeric {:+.6e}", c.scene, c.coordinate.joint, c.coordinate.kind, c.coordinate.component, c.analytic, c.numeric);
            }
            if let Outcome::Scored(c) = o {
                if c.rel_err > cfg.tolerance {
                    println!(
                        "scene {:2} joint {:2} {:?}[{}] analytic {:+.6e} numeric {:+.6e} rel {:.2e}",
                        c.scene, c.coordinate.joint, c.coordinate.kind, c.coordinate.component, c.analytic, c.numeric, c.rel_err
                    );
                }
            }
        }
    }
    Ok(())
}
