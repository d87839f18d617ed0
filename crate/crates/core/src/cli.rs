//! Command-line front end. Configuration precedence, lowest first: built-in
//! defaults, the `--config` file, per-command files (`--scene`, `--fit-cfg`,
//! `--sweep-cfg`), then flags such as `--seed`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cfar::{ca_cfar, CfarConfig};
use crate::dipr::DiprFrame;
use crate::domain::{heatmap_read, heatmap_write, Heatmap, HeatmapGrid, RadarParams, Skeleton};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Alignment, PoseSequence};
use crate::fitter::{dipr_to_heatmap, fit_sequence, FitConfig};
use crate::grad::{gradcheck, GradcheckConfig};
use crate::renderer::RenderKernelParams;
use crate::sweep::{run_sweep, SweepConfig};
use crate::synth::{generate_scene, SceneSpec};

const AFTER_HELP: &str = "\
Configuration precedence (later wins): built-in defaults, --config file,
per-command file (--scene, --fit-cfg, --sweep-cfg), command-line flags.
The [radar], [grid] and [kernel] tables of --config apply to every command,
including gradcheck and sweep.

Exit codes: 0 success, 1 I/O or file format, 2 configuration,
3 fit divergence, 4 metric or shape, 5 gradcheck failed.";

#[derive(Debug, Parser)]
#[command(name = "mgs", version, about = "Gaussian joint fitting for mmWave radar heatmaps", after_help = AFTER_HELP)]
pub struct Cli {
    /// Nested TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// Increase log verbosity on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignArg {
    Similarity,
    Rigid,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: heatmaps, ground truth and a manifest.
    Synth {
        /// Scene spec TOML; defaults to the [scene] table of --config.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit DIPR frames to one heatmap or to every .mgsh file in a directory.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit config TOML; defaults to the [fit] table of --config.
        #[arg(long)]
        fit_cfg: Option<PathBuf>,
        /// Initial DIPR frame; defaults to coarse extraction.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render a DIPR document to a heatmap.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// CA-CFAR detection on a heatmap, written as a point-cloud text file.
    Cfar {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients; exit 0 iff pass.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MPJPE, PA-MPJPE and motion intensity of predicted poses.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = AlignArg::Similarity)]
        alignment: AlignArg,
        /// Frame interval for motion intensity; defaults to the files' dt_s.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// One P5 graymap per Doppler slice (rows = range, columns = angle).
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Loss-weight ablation on synthetic scenes.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        /// Sweep config TOML; defaults to the [sweep] table of --config.
        #[arg(long)]
        sweep_cfg: Option<PathBuf>,
    },
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub radar: RadarParams,
    pub grid: HeatmapGrid,
    pub kernel: RenderKernelParams,
    /// Skeleton TOML path; the built-in 14-joint skeleton when absent.
    pub skeleton: Option<PathBuf>,
    pub fit: FitConfig,
    pub cfar: CfarConfig,
    pub gradcheck: GradcheckConfig,
    pub scene: SceneSpec,
    pub sweep: SweepConfig,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: AppConfig = match path {
            Some(p) => parse_toml(p)?,
            None => AppConfig::default(),
        };
        cfg.radar.validate()?;
        cfg.grid.validate()?;
        cfg.kernel.validate()?;
        Ok(cfg)
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        match &self.skeleton {
            Some(p) => Skeleton::load(p),
            None => Ok(Skeleton::default_skeleton()),
        }
    }
}

/// Maps an error to the documented exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } | Error::Format { .. } => 1,
        Error::Config(_) | Error::Scene { .. } | Error::Render { .. } => 2,
        Error::Fit { .. } => 3,
        Error::Metric { .. } | Error::Shape(_) | Error::Domain(_) | Error::Oracle(_) => 4,
        Error::Frame { .. } => unreachable!("root() looks through frame wrappers"),
    }
}

/// Outcome of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    GradcheckFailed,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(&cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::GradcheckFailed) => 5,
        Err(e) => {
            eprintln!("mgs: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command inside a pool of `--threads` workers.
pub fn run(cli: &Cli) -> Result<Status> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<Status> {
    let cfg = AppConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth { scene, out_dir } => cmd_synth(&cfg, cli.seed, scene.as_deref(), out_dir),
        Command::Fit { input, out, fit_cfg, init } => {
            cmd_fit(&cfg, cli.seed, input, out, fit_cfg.as_deref(), init.as_deref())
        }
        Command::Render { input, out } => cmd_render(&cfg, input, out),
        Command::Cfar { input, out } => cmd_cfar(&cfg, input, out),
        Command::Gradcheck { count, out } => cmd_gradcheck(&cfg, cli.seed, *count, out.as_deref()),
        Command::Eval { pred, gt, out, alignment, dt } => cmd_eval(pred, gt, out, *alignment, *dt),
        Command::Export { input, out_dir } => cmd_export(input, out_dir),
        Command::Sweep { out, sweep_cfg } => cmd_sweep(&cfg, cli.seed, out, sweep_cfg.as_deref()),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    frames: Vec<String>,
    ground_truth: &'a str,
    scene: &'a SceneSpec,
    radar: &'a RadarParams,
    grid: &'a HeatmapGrid,
    kernel: &'a RenderKernelParams,
}

pub fn cmd_synth(cfg: &AppConfig, seed: Option<u64>, scene: Option<&Path>, out_dir: &Path) -> Result<Status> {
    let mut spec = match scene {
        Some(p) => SceneSpec::from_toml_str(&read_text(p)?)?,
        None => cfg.scene.clone(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let sk = cfg.skeleton()?;
    let (heatmaps, gt) = generate_scene(&spec, &sk, &cfg.radar, &cfg.grid, &cfg.kernel)?;
    create_dir(out_dir)?;
    let mut names = Vec::with_capacity(heatmaps.len());
    for (t, h) in heatmaps.iter().enumerate() {
        let name = format!("frame_{t:04}.mgsh");
        heatmap_write(h, out_dir.join(&name))?;
        names.push(name);
    }
    write_text(&out_dir.join("gt.poses"), &gt.to_toml_string())?;
    let manifest = Manifest {
        frames: names,
        ground_truth: "gt.poses",
        scene: &spec,
        radar: &cfg.radar,
        grid: &cfg.grid,
        kernel: &cfg.kernel,
    };
    write_text(
        &out_dir.join("manifest.toml"),
        &toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    log::info!("wrote {} frames to {}", heatmaps.len(), out_dir.display());
    Ok(Status::Ok)
}

/// `.mgsh` files of a directory in name order, or the file itself.
fn heatmap_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mgsh"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!("no .mgsh files in {}", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

pub fn cmd_fit(
    cfg: &AppConfig,
    seed: Option<u64>,
    input: &Path,
    out: &Path,
    fit_cfg: Option<&Path>,
    init: Option<&Path>,
) -> Result<Status> {
    let mut fc: FitConfig = match fit_cfg {
        Some(p) => parse_toml(p)?,
        None => cfg.fit.clone(),
    };
    if let Some(s) = seed {
        fc.seed = s;
    }
    fc.validate()?;
    let sk = cfg.skeleton()?;
    let files = heatmap_inputs(input)?;
    let heatmaps: Vec<Heatmap> = files.iter().map(heatmap_read).collect::<Result<_>>()?;
    let grid = *heatmaps[0].grid();
    if let Some(t) = heatmaps.iter().position(|h| h.grid() != &grid) {
        return Err(Error::Shape(format!("{} has a different grid from {}", files[t].display(), files[0].display())));
    }
    let init = init.map(DiprFrame::load).transpose()?;
    let fitted = fit_sequence(&heatmaps, &sk, &cfg.radar, &grid, &cfg.kernel, &fc, init.as_ref())?;
    create_dir(out)?;
    for (file, (frame, report)) in files.iter().zip(&fitted) {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        log::info!(
            "{stem}: loss {:.3e} -> {:.3e} in {} iterations, {:.2} s",
            report.initial_loss,
            report.final_loss,
            report.iterations_run,
            report.wall_time_s
        );
        frame.write(out.join(format!("{stem}.dipr.toml")), Some(&sk))?;
        write_text(&out.join(format!("{stem}.report.toml")), &report.to_toml_string())?;
    }
    let poses = PoseSequence::new(fitted.iter().map(|(f, _)| f.positions()).collect(), None)?;
    poses.write(out.join("pred.poses"))?;
    Ok(Status::Ok)
}

pub fn cmd_render(cfg: &AppConfig, input: &Path, out: &Path) -> Result<Status> {
    let frame = DiprFrame::load(input)?;
    let h = dipr_to_heatmap(&frame, &cfg.radar, &cfg.grid, &cfg.kernel)?;
    heatmap_write(&h, out)?;
    Ok(Status::Ok)
}

pub fn cmd_cfar(cfg: &AppConfig, input: &Path, out: &Path) -> Result<Status> {
    let h = heatmap_read(input)?;
    let cloud = ca_cfar(&h, &cfg.cfar)?;
    cloud.write(out)?;
    log::info!("{} detections", cloud.len());
    Ok(Status::Ok)
}

pub fn cmd_gradcheck(cfg: &AppConfig, seed: Option<u64>, count: usize, out: Option<&Path>) -> Result<Status> {
    let gc = GradcheckConfig {
        radar: cfg.radar,
        grid: cfg.grid,
        kernel: cfg.kernel,
        ..cfg.gradcheck.clone()
    };
    let report = gradcheck(&gc, count, seed.unwrap_or(0))?;
    log::info!(
        "gradcheck: {} scored, max rel err {:.3e}, pass {}",
        report.checked,
        report.max_rel_err,
        report.pass
    );
    if let Some(p) = out {
        write_text(p, &report.to_toml_string())?;
    }
    Ok(if report.pass { Status::Ok } else { Status::GradcheckFailed })
}

pub fn cmd_eval(pred: &Path, gt: &Path, out: &Path, alignment: AlignArg, dt: Option<f64>) -> Result<Status> {
    let pred = PoseSequence::load(pred)?;
    let gt = PoseSequence::load(gt)?;
    let alignment = match alignment {
        AlignArg::Similarity => Alignment::Similarity,
        AlignArg::Rigid => Alignment::Rigid,
    };
    let report = evaluate(&pred, &gt, alignment, dt)?;
    write_text(out, &report.to_toml_string())?;
    Ok(Status::Ok)
}

/// P5 graymap bytes of one Doppler slice, min-max normalized to 0..=255.
pub fn pgm_slice(h: &Heatmap, m: usize) -> Vec<u8> {
    let (rb, _, ab) = h.grid().shape();
    let vals: Vec<f64> = (0..rb)
        .flat_map(|k| (0..ab).map(move |n| (k, n)))
        .map(|(k, n)| h.get(k, m, n))
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{ab} {rb}\n255\n").into_bytes();
    out.extend(vals.iter().map(|&v| {
        if hi > lo {
            (255.0 * (v - lo) / (hi - lo)).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn cmd_export(input: &Path, out_dir: &Path) -> Result<Status> {
    let h = heatmap_read(input)?;
    create_dir(out_dir)?;
    for m in 0..h.grid().doppler_bins {
        let path = out_dir.join(format!("slice_{m:03}.pgm"));
        fs::write(&path, pgm_slice(&h, m)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(Status::Ok)
}

pub fn cmd_sweep(cfg: &AppConfig, seed: Option<u64>, out: &Path, sweep_cfg: Option<&Path>) -> Result<Status> {
    let mut sc: SweepConfig = match sweep_cfg {
        Some(p) => parse_toml(p)?,
        None => cfg.sweep.clone(),
    };
    sc.radar = cfg.radar;
    sc.grid = cfg.grid;
    sc.kernel = cfg.kernel;
    if let Some(s) = seed {
        let n = sc.seeds.len() as u64;
        sc.seeds = (0..n).map(|i| s.wrapping_add(i)).collect();
    }
    let sk = cfg.skeleton()?;
    let report = run_sweep(&sc, &sk)?;
    write_text(out, &report.to_toml_string())?;
    Ok(Status::Ok)
}
