//! Command-line front end.

use std::env;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::accuracy::{temporal_accuracy, DetectionTrack};
use crate::error::{Error, Result};
use crate::filters::{filter_sequence, load_frame_dir};
use crate::objective::{Configuration, FilterKind};
use crate::online::{baseline_mean_power, run_simulated, write_trace_jsonl, LoopParams, Summary, TraceEvent};
use crate::protocol::{run_camera_agent, run_server_agent};
use crate::scene::{profile_front, read_profile_csv, write_profile_csv, SceneModel};
use crate::svg::render_trace;

pub const OUT_DIR_ENV: &str = "ECOLENS_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "ecolens-out";

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.svg";

#[derive(Debug, Parser)]
#[command(name = "ecolens", version, about = "Energy-aware video configuration tuning for edge cameras")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile every configuration of the scene grid at a fixed day/night mix.
    Profile(ProfileArgs),
    /// Run the online controller against the simulated scene.
    Run(RunArgs),
    /// Filter a frame directory and score detection tracks under the kept set.
    Eval(EvalArgs),
    /// Run the controller as a server, driving a remote camera.
    Serve(ServeArgs),
    /// Run a simulated camera that connects to a server.
    Camera(CameraArgs),
    /// Extract the Pareto front of a profile CSV.
    Pareto(ParetoArgs),
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Scene parameter file (defaults to the built-in scene).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Day/night mix in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub regime: f64,
    /// Output CSV (defaults to profile.csv in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pareto-front CSV (defaults to <out>_front.csv).
    #[arg(long)]
    pub front: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LoopOverrides {
    /// Run configuration JSON; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target: Option<f64>,
    /// Simulated run length in seconds.
    #[arg(long)]
    pub duration: Option<u64>,
    #[arg(long)]
    pub explore: Option<u64>,
    #[arg(long)]
    pub exploit: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub manual: Option<usize>,
    #[arg(long)]
    pub mbo: Option<usize>,
    /// Output directory (defaults to $ECOLENS_OUT_DIR, then ./ecolens-out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Skip the SVG plot.
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub opts: LoopOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of binary PGM frames, read in file-name order.
    #[arg(long)]
    pub frames: PathBuf,
    /// Ground-truth detections (JSON Lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections produced by the degraded pipeline (JSON Lines).
    #[arg(long)]
    pub kept: PathBuf,
    #[arg(long, default_value = "pixel")]
    pub feature: FilterKind,
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on, host:port.
    #[arg(long)]
    pub listen: String,
    #[command(flatten)]
    pub opts: LoopOverrides,
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Server address, host:port.
    #[arg(long)]
    pub connect: String,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Optional PGM directory whose frames are sent in ground-truth bursts.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    /// Profile CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output CSV (defaults to standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_baseline() -> Configuration {
    Configuration {
        cpu_ghz: 2.4,
        filter: FilterKind::Pixel,
        threshold: 0.0,
        bitrate_kbps: 3000,
    }
}

/// Reproducible bundle for a run; every field may be overridden by a flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    #[serde(rename = "loop")]
    pub loop_params: LoopParams,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub baseline: Configuration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: None,
            loop_params: LoopParams::default(),
            seed: None,
            out_dir: None,
            baseline: default_baseline(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse("run configuration", path, e))
    }
}

/// A run configuration with flags applied and the scene loaded.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub scene: SceneModel,
    pub params: LoopParams,
    pub baseline: Configuration,
    pub out_dir: PathBuf,
    pub plot: bool,
}

pub fn default_out_dir() -> PathBuf {
    env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

fn load_scene(path: Option<&Path>) -> Result<SceneModel> {
    match path {
        Some(p) => SceneModel::load(p),
        None => Ok(SceneModel::default_scene()),
    }
}

impl LoopOverrides {
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let scene = load_scene(self.scene.as_deref().or(cfg.scene.as_deref()))?;
        let mut params = cfg.loop_params;
        params.seed = self.seed.or(cfg.seed).unwrap_or(scene.seed);
        if let Some(v) = self.target {
            params.target_accuracy = v;
        }
        if let Some(v) = self.duration {
            params.total_duration_s = v;
        }
        if let Some(v) = self.explore {
            params.explore_duration_s = v;
        }
        if let Some(v) = self.exploit {
            params.exploit_duration_s = v;
        }
        if let Some(v) = self.window {
            params.window_capacity = v;
        }
        if let Some(v) = self.manual {
            params.n_manual = v;
        }
        if let Some(v) = self.mbo {
            params.n_mbo = v;
        }
        params.validate()?;
        cfg.baseline.validate()?;
        Ok(ResolvedRun {
            scene,
            params,
            baseline: cfg.baseline,
            out_dir: self.out_dir.clone().or(cfg.out_dir).unwrap_or_else(default_out_dir),
            plot: !self.no_plot,
        })
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub target_accuracy: f64,
    #[serde(flatten)]
    pub summary: Summary,
    pub baseline: Configuration,
    pub baseline_mean_power_w: f64,
    pub normalized_energy: f64,
    pub energy_savings_pct: f64,
}

impl RunReport {
    pub fn new(run: &ResolvedRun, trace: &[TraceEvent], summary: Summary) -> Self {
        let base = baseline_mean_power(&run.scene, &run.baseline, trace);
        let normalized = if base > 0.0 { summary.mean_power_w / base } else { f64::NAN };
        RunReport {
            seed: run.params.seed,
            target_accuracy: run.params.target_accuracy,
            summary,
            baseline: run.baseline,
            baseline_mean_power_w: base,
            normalized_energy: normalized,
            energy_savings_pct: 100.0 * (1.0 - normalized),
        }
    }
}

/// Writes trace, summary and (optionally) plot into `run.out_dir`.
pub fn write_run_outputs(run: &ResolvedRun, trace: &[TraceEvent], report: Option<&RunReport>) -> Result<()> {
    fs::create_dir_all(&run.out_dir)?;
    let mut w = BufWriter::new(fs::File::create(run.out_dir.join(TRACE_FILE))?);
    write_trace_jsonl(&mut w, trace)?;
    w.flush()?;
    if let Some(r) = report {
        let mut text = serde_json::to_string_pretty(r)?;
        text.push('\n');
        fs::write(run.out_dir.join(SUMMARY_FILE), text)?;
    }
    if run.plot {
        fs::write(
            run.out_dir.join(PLOT_FILE),
            render_trace(trace, Some(run.params.target_accuracy)),
        )?;
    }
    Ok(())
}

pub fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.regime) {
        return Err(Error::invalid(format!("regime {} outside [0, 1]", args.regime)));
    }
    let scene = load_scene(args.scene.as_deref())?;
    let out = args.out.clone().unwrap_or_else(|| default_out_dir().join("profile.csv"));
    let front_path = args.front.clone().unwrap_or_else(|| {
        let stem = out.file_stem().map_or("profile".into(), |s| s.to_string_lossy().into_owned());
        out.with_file_name(format!("{stem}_front.csv"))
    });
    let records = scene.offline_profile(args.regime);
    let front = profile_front(&records);
    for path in [&out, &front_path] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
    }
    write_csv(&out, |w| write_profile_csv(w, &records))?;
    write_csv(&front_path, |w| write_profile_csv(w, &front))?;
    eprintln!(
        "wrote {} records to {} and {} front records to {}",
        records.len(),
        out.display(),
        front.len(),
        front_path.display()
    );
    Ok(())
}

fn write_csv(path: &Path, body: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport> {
    let run = args.opts.resolve()?;
    let out = run_simulated(run.params.clone(), &run.scene)?;
    let report = RunReport::new(&run, &out.trace, out.summary);
    write_run_outputs(&run, &out.trace, Some(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature: FilterKind,
    pub threshold: f64,
    pub frames: usize,
    pub kept_indices: Vec<usize>,
    pub accuracy: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let frames = load_frame_dir(&args.frames)?;
    if frames.is_empty() {
        return Err(Error::parse("frame directory", &args.frames, "no .pgm files"));
    }
    let gt = DetectionTrack::load_jsonl(&args.gt)?;
    let produced = DetectionTrack::load_jsonl(&args.kept)?;
    let decisions = filter_sequence(&frames, args.feature, args.threshold)?;
    let kept_indices: Vec<usize> = decisions.iter().filter(|d| d.kept).map(|d| d.frame_index).collect();
    let kept = produced.restrict(kept_indices.iter().copied());
    let accuracy = temporal_accuracy(&gt, &kept, frames.len())?;
    Ok(EvalReport {
        feature: args.feature,
        threshold: args.threshold,
        frames: frames.len(),
        kept_indices,
        accuracy,
    })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<RunReport> {
    let run = args.opts.resolve()?;
    let listener = TcpListener::bind(&args.listen)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    eprintln!("camera connected from {peer}");
    stream.set_nodelay(true)?;
    let served = run_server_agent(stream, run.params.clone(), &run.scene);
    match served.result {
        Ok(summary) => {
            let report = RunReport::new(&run, &served.trace, summary);
            write_run_outputs(&run, &served.trace, Some(&report))?;
            Ok(report)
        }
        Err(e) => {
            write_run_outputs(&run, &served.trace, None)?;
            Err(e)
        }
    }
}

pub fn cmd_camera(args: &CameraArgs) -> Result<()> {
    let scene = load_scene(args.scene.as_deref())?;
    let frames = match &args.frames {
        Some(dir) => load_frame_dir(dir)?,
        None => Vec::new(),
    };
    let stream = TcpStream::connect(&args.connect)?;
    stream.set_nodelay(true)?;
    let report = run_camera_agent(stream, scene, &frames)?;
    eprintln!(
        "camera done: seed {}, {} phases, {} bursts, {} s streamed",
        report.seed, report.phases, report.bursts, report.seconds_streamed
    );
    Ok(())
}

pub fn cmd_pareto(args: &ParetoArgs) -> Result<usize> {
    let text = fs::read_to_string(&args.input)?;
    let records = read_profile_csv(&text, &args.input, f64::NAN)?;
    let front = profile_front(&records);
    match &args.out {
        Some(p) => write_csv(p, |w| write_profile_csv(w, &front))?,
        None => write_profile_csv(io::stdout().lock(), &front)?,
    }
    Ok(front.len())
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile(a) => cmd_profile(&a),
        Command::Run(a) => {
            let report = cmd_run(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Serve(a) => {
            let report = cmd_serve(&a)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Camera(a) => cmd_camera(&a),
        Command::Pareto(a) => cmd_pareto(&a).map(|_| ()),
    }
}
