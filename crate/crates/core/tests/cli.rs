use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;

use mgs::dipr::{tpose_frame, InitConfig};
use mgs::domain::{heatmap_read, heatmap_write, Heatmap, HeatmapGrid, RadarParams, Skeleton};
use mgs::eval::PoseSequence;
use mgs::renderer::{render, RenderKernelParams};

fn mgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgs")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn write_tpose(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let sk = Skeleton::default_skeleton();
    let frame = tpose_frame(&sk, &InitConfig::default(), &Vector3::new(3.0, 0.0, 0.0), &Vector3::zeros());
    let h = render(&frame, &RadarParams::default(), &HeatmapGrid::default(), &RenderKernelParams::default()).unwrap();
    let dipr = dir.join("tpose.dipr.toml");
    let mgsh = dir.join("tpose.mgsh");
    frame.write(&dipr, Some(&sk)).unwrap();
    heatmap_write(&h, &mgsh).unwrap();
    (dipr, mgsh)
}

#[test]
fn help_lists_every_subcommand_and_exit_codes() {
    let o = mgs(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["synth", "fit", "render", "cfar", "gradcheck", "eval", "export", "sweep"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("Exit codes"));
}

#[test]
fn synth_static_scene_writes_one_frame_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    let o = mgs(&["synth", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    assert!(out.join("frame_0000.mgsh").exists());
    assert!(!out.join("frame_0001.mgsh").exists());
    assert!(out.join("manifest.toml").exists());
    let gt = PoseSequence::load(out.join("gt.poses")).unwrap();
    assert_eq!((gt.frames(), gt.joints()), (1, 14));
}

#[test]
fn synth_bad_motion_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.toml");
    fs::write(&scene, "[motion]\nkind = \"moonwalk\"\n").unwrap();
    let o = mgs(&["synth", "--scene", s(&scene), "--out-dir", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("motion"));
}

#[test]
fn fit_of_self_rendered_input_reaches_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let (dipr, mgsh) = write_tpose(dir.path());
    let out = dir.path().join("fit");
    let o = mgs(&["fit", "--in", s(&mgsh), "--out", s(&out), "--init", s(&dipr)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: toml::Table = toml::from_str(&fs::read_to_string(out.join("tpose.report.toml")).unwrap()).unwrap();
    assert!(report["final_loss"].as_float().unwrap() < 1e-6);
    assert!(!report["loss_trace"].as_array().unwrap().is_empty());
    assert!(out.join("tpose.dipr.toml").exists());
    assert_eq!(PoseSequence::load(out.join("pred.poses")).unwrap().frames(), 1);
}

#[test]
fn fit_of_empty_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mgs(&["fit", "--in", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn render_reproduces_the_library_render() {
    let dir = tempfile::tempdir().unwrap();
    let (dipr, mgsh) = write_tpose(dir.path());
    let out = dir.path().join("r.mgsh");
    assert_eq!(code(&mgs(&["render", "--in", s(&dipr), "--out", s(&out)])), 0);
    assert_eq!(fs::read(out).unwrap(), fs::read(mgsh).unwrap());
}

#[test]
fn cfar_of_zeros_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = dir.path().join("z.mgsh");
    heatmap_write(&Heatmap::zeros(HeatmapGrid::default()), &zeros).unwrap();
    let out = dir.path().join("z.txt");
    assert_eq!(code(&mgs(&["cfar", "--in", s(&zeros), "--out", s(&out)])), 0);
    assert!(fs::read_to_string(out).unwrap().trim().is_empty());
}

#[test]
fn cfar_of_a_rendered_body_finds_points() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mgsh) = write_tpose(dir.path());
    let out = dir.path().join("pc.txt");
    assert_eq!(code(&mgs(&["cfar", "--in", s(&mgsh), "--out", s(&out)])), 0);
    let cloud = mgs::domain::PointCloud::from_text(&fs::read_to_string(out).unwrap()).unwrap();
    assert!(!cloud.is_empty());
}

#[test]
fn gradcheck_small_run_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.toml");
    let o = mgs(&["gradcheck", "--count", "40", "--seed", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: toml::Table = toml::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["pass"].as_bool(), Some(true));
}

#[test]
fn gradcheck_failure_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[gradcheck]\ntolerance = 1e-300\n").unwrap();
    let o = mgs(&["gradcheck", "--count", "10", "--config", s(&cfg)]);
    assert_eq!(code(&o), 5);
    fs::write(&cfg, "[gradcheck]\ntolerance = -1.0\n").unwrap();
    let o = mgs(&["gradcheck", "--count", "10", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_of_identical_poses_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    assert_eq!(code(&mgs(&["synth", "--out-dir", s(&scene)])), 0);
    let gt = scene.join("gt.poses");
    let out = dir.path().join("eval.toml");
    let o = mgs(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: toml::Table = toml::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["mpjpe_m"].as_float(), Some(0.0));
    assert_eq!(report["pa_mpjpe_m"].as_float(), Some(0.0));
}

#[test]
fn eval_joint_count_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.poses");
    let b = dir.path().join("b.poses");
    let pose = |n: usize| vec![(0..n).map(|i| Vector3::new(i as f64, 1.0, 0.5)).collect::<Vec<_>>()];
    PoseSequence::new(pose(14), None).unwrap().write(&a).unwrap();
    PoseSequence::new(pose(13), None).unwrap().write(&b).unwrap();
    let o = mgs(&["eval", "--pred", s(&a), "--gt", s(&b), "--out", s(&dir.path().join("e.toml"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn export_puts_brightest_pixel_at_the_peak_cell() {
    let dir = tempfile::tempdir().unwrap();
    let grid = HeatmapGrid {
        range_bins: 6,
        doppler_bins: 4,
        angle_bins: 5,
        ..HeatmapGrid::default()
    };
    let mut vals = vec![1.0; grid.len()];
    vals[grid.index(4, 2, 1)] = 9.0;
    let h = Heatmap::new(grid, vals).unwrap();
    let input = dir.path().join("h.mgsh");
    heatmap_write(&h, &input).unwrap();
    let out = dir.path().join("img");
    assert_eq!(code(&mgs(&["export", "--in", s(&input), "--out-dir", s(&out)])), 0);
    for m in 0..4 {
        let bytes = fs::read(out.join(format!("slice_{m:03}.pgm"))).unwrap();
        let header = b"P5\n5 6\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 30);
        if m == 2 {
            assert_eq!(pixels[4 * 5 + 1], 255);
            assert_eq!(pixels.iter().filter(|&&p| p == 255).count(), 1);
        } else {
            assert!(pixels.iter().all(|&p| p == 0), "constant slice {m} must be black");
        }
    }
    assert!(!out.join("slice_004.pgm").exists());
}

#[test]
fn missing_input_exits_1_and_corrupt_heatmap_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.txt");
    assert_eq!(code(&mgs(&["cfar", "--in", s(&dir.path().join("nope.mgsh")), "--out", s(&out)])), 1);
    let bad = dir.path().join("bad.mgsh");
    fs::write(&bad, b"NOPE0000").unwrap();
    assert_eq!(code(&mgs(&["cfar", "--in", s(&bad), "--out", s(&out)])), 1);
}

#[test]
fn invalid_flags_exit_2() {
    assert_eq!(code(&mgs(&["gradcheck", "--threads", "0"])), 2);
    assert_eq!(code(&mgs(&["fit", "--bogus"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[fit]\nmax_iters = 0\n").unwrap();
    let (_, mgsh) = write_tpose(dir.path());
    let o = mgs(&["fit", "--in", s(&mgsh), "--out", s(&dir.path().join("f")), "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.toml");
    fs::write(&scene, "frames = 2\nclutter_points = 6\nnoise_snr_db = 10.0\n").unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert_eq!(code(&mgs(&["synth", "--scene", s(&scene), "--out-dir", s(&out), "--seed", seed])), 0);
        (fs::read(out.join("frame_0001.mgsh")).unwrap(), fs::read(out.join("manifest.toml")).unwrap())
    };
    let a = run("a", "3");
    assert_eq!(a, run("b", "3"));
    assert_ne!(a.0, run("c", "4").0);
    let h = heatmap_read(dir.path().join("a/frame_0000.mgsh")).unwrap();
    assert_eq!(h.grid(), &HeatmapGrid::default());
}
