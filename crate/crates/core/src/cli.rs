//! `simulate`, `run` and `evaluate` commands behind the `dynslam` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration errors, 2 data errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::evaluation::{
    ape, clear_metrics, detection_ap, iou_3d, read_kitti_tracks, read_tum, rpe, write_kitti_tracks, write_tum,
    ClearReport, ErrorStats, EvalError, Labeled, TrackRow, Trajectory,
};
use crate::mot::{iou_2d, Box2D};
use crate::objects::OrientedBox3D;
use crate::pipeline::{run_frames, EvaluationParams, PipelineConfig, RunOutput};
use crate::simulator::{emit_sequence, generate, load_sequence, Sequence};

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const TRACKS_FILE: &str = "tracks.txt";
pub const LOG_FILE: &str = "run.log";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const META_FILE: &str = "run.meta";
pub const REPORT_FILE: &str = "metrics.txt";
pub const ERRORS_FILE: &str = "ape.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "dynslam", version, about = "Object-aware dynamic SLAM on synthetic sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sequence file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline over a sequence.
    Run {
        sequence: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; must exist.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run directory against the sequence ground truth.
    Evaluate {
        run: PathBuf,
        sequence: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "threshold-2d")]
        threshold_2d: Option<f64>,
        #[arg(long = "threshold-3d")]
        threshold_3d: Option<f64>,
        /// Also write the report and per-pose errors here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

pub fn cmd_simulate(config: &PipelineConfig, seed: Option<u64>, out: &Path) -> Result<Sequence, CliError> {
    let mut scene = config.scene.clone();
    if let Some(s) = seed.or(config.seed) {
        scene.seed = s;
    }
    let seq = generate(&scene).map_err(|e| CliError::Usage(e.to_string()))?;
    emit_sequence(&seq, out).map_err(data)?;
    Ok(seq)
}

/// Identifies the sequence a run was made from.
fn meta(seq: &Sequence) -> String {
    format!("sequence_frames={}\nsequence_config={}\n", seq.frames.len(), seq.header.config)
}

pub fn cmd_run(sequence: &Path, config: &PipelineConfig, out: &Path) -> Result<RunOutput, CliError> {
    if !out.is_dir() {
        return Err(CliError::Data(format!("{}: output directory does not exist", out.display())));
    }
    let seq = load_sequence(sequence).map_err(data)?;
    let output = run_frames(config, &seq.header, seq.frames.iter().map(|f| &f.input)).map_err(data)?;
    write(&out.join(CONFIG_ECHO_FILE), &config.to_toml())?;
    write(&out.join(META_FILE), &meta(&seq))?;
    write(&out.join(TRAJECTORY_FILE), &write_tum(&output.trajectory))?;
    write(&out.join(TRACKS_FILE), &write_kitti_tracks(&output.tracks))?;
    let mut log = output.log.join("\n");
    log.push('\n');
    write(&out.join(LOG_FILE), &log)?;
    Ok(output)
}

/// Camera-to-world ground truth expressed relative to the first camera, the
/// frame the pipeline estimates in.
pub fn ground_truth_trajectory(seq: &Sequence) -> Trajectory {
    let samples =
        seq.frames.iter().map(|f| (f.input.timestamp, f.truth.camera.pose().inverse())).collect();
    Trajectory::new(samples).unwrap_or_default()
}

/// Visible ground-truth boxes per frame: 2D boxes and camera-frame 3D boxes.
pub fn ground_truth_boxes(seq: &Sequence) -> (Vec<Labeled<Box2D>>, Vec<Labeled<OrientedBox3D>>) {
    let mut b2 = Vec::new();
    let mut b3 = Vec::new();
    for f in &seq.frames {
        let cam = f.truth.camera.pose();
        let visible: Vec<_> = f.truth.objects.iter().filter_map(|o| o.box2d.map(|b| (o, b))).collect();
        b2.push(visible.iter().map(|(o, b)| (o.id, *b)).collect());
        b3.push(visible.iter().map(|(o, _)| (o.id, o.box3d().transformed(&cam))).collect());
    }
    (b2, b3)
}

/// Track rows grouped by frame index.
pub fn estimated_boxes(rows: &[TrackRow], frames: usize) -> (Vec<Labeled<Box2D>>, Vec<Labeled<OrientedBox3D>>) {
    let mut b2 = vec![Vec::new(); frames];
    let mut b3 = vec![Vec::new(); frames];
    for r in rows.iter().filter(|r| r.frame < frames) {
        b2[r.frame].push((r.id, r.box2d));
        if let Some(b) = r.box3d() {
            b3[r.frame].push((r.id, b));
        }
    }
    (b2, b3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub ape: ErrorStats,
    pub ape_scale: f64,
    pub ape_errors: Vec<(f64, f64)>,
    pub rpe_rotation: ErrorStats,
    pub rpe_translation: ErrorStats,
    pub clear_2d: ClearReport,
    pub clear_3d: ClearReport,
    pub ap_3d: f64,
    pub params: EvaluationParams,
}

pub fn evaluate(
    seq: &Sequence,
    trajectory: &Trajectory,
    rows: &[TrackRow],
    params: &EvaluationParams,
) -> Result<Report, EvalError> {
    let gt = ground_truth_trajectory(seq);
    let a = ape(trajectory, &gt, true)?;
    let r = rpe(trajectory, &gt, params.rpe_delta)?;
    // RPE translation is reported in ground-truth units.
    let rpe_translation = ErrorStats {
        rmse: r.translation.rmse * a.alignment.scale,
        mean: r.translation.mean * a.alignment.scale,
        median: r.translation.median * a.alignment.scale,
        max: r.translation.max * a.alignment.scale,
        min: r.translation.min * a.alignment.scale,
        count: r.translation.count,
    };
    let (g2, g3) = ground_truth_boxes(seq);
    let (e2, e3) = estimated_boxes(rows, seq.frames.len());
    let clear_2d = clear_metrics(&e2, &g2, iou_2d, params.threshold_2d);
    let clear_3d = clear_metrics(&e3, &g3, iou_3d, params.threshold_3d);
    let scored: Vec<Vec<(OrientedBox3D, f64)>> = {
        let mut v = vec![Vec::new(); seq.frames.len()];
        for row in rows.iter().filter(|r| r.frame < seq.frames.len()) {
            if let Some(b) = row.box3d() {
                v[row.frame].push((b, row.score));
            }
        }
        v
    };
    let gt_boxes: Vec<Vec<OrientedBox3D>> = g3.iter().map(|f| f.iter().map(|(_, b)| *b).collect()).collect();
    let ap_3d = detection_ap(&scored, &gt_boxes, iou_3d, params.ap_overlap);
    let ape_errors = trajectory.samples().iter().map(|(t, _)| *t).zip(a.errors.iter().copied()).collect();
    Ok(Report {
        ape: a.stats,
        ape_scale: a.alignment.scale,
        ape_errors,
        rpe_rotation: r.rotation,
        rpe_translation,
        clear_2d,
        clear_3d,
        ap_3d,
        params: params.clone(),
    })
}

impl Report {
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("ape_rmse", format!("{:.9}", self.ape.rmse));
        kv("ape_mean", format!("{:.9}", self.ape.mean));
        kv("ape_max", format!("{:.9}", self.ape.max));
        kv("ape_scale", format!("{:.9}", self.ape_scale));
        kv("rpe_rot_rmse_deg", format!("{:.9}", self.rpe_rotation.rmse.to_degrees()));
        kv("rpe_trans_rmse", format!("{:.9}", self.rpe_translation.rmse));
        for (name, c, t) in
            [("2d", &self.clear_2d, self.params.threshold_2d), ("3d", &self.clear_3d, self.params.threshold_3d)]
        {
            kv(&format!("threshold_{name}"), format!("{t}"));
            kv(&format!("mota_{name}"), format!("{:.9}", c.mota));
            kv(&format!("motp_{name}"), format!("{:.9}", c.motp));
            kv(&format!("matches_{name}"), c.matches.to_string());
            kv(&format!("misses_{name}"), c.misses.to_string());
            kv(&format!("false_positives_{name}"), c.false_positives.to_string());
            kv(&format!("id_switches_{name}"), c.id_switches.to_string());
        }
        kv("ap_3d", format!("{:.9}", self.ap_3d));
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<26}{:>14}", "metric", "value");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<26}{v:>14}");
        };
        row("APE RMSE [m]", format!("{:.4}", self.ape.rmse));
        row("R.RPE RMSE [deg]", format!("{:.4}", self.rpe_rotation.rmse.to_degrees()));
        row("T.RPE RMSE [m]", format!("{:.4}", self.rpe_translation.rmse));
        row("MOTA 2D", format!("{:.4}", self.clear_2d.mota));
        row("MOTP 2D", format!("{:.4}", self.clear_2d.motp));
        row("MOTA 3D", format!("{:.4}", self.clear_3d.mota));
        row("MOTP 3D", format!("{:.4}", self.clear_3d.motp));
        row("ID switches 2D", self.clear_2d.id_switches.to_string());
        row("AP 3D [%]", format!("{:.2}", 100.0 * self.ap_3d));
        s
    }

    pub fn errors_csv(&self) -> String {
        let mut s = String::from("timestamp,ape\n");
        for (t, e) in &self.ape_errors {
            let _ = writeln!(s, "{t},{e}");
        }
        s
    }
}

pub fn cmd_evaluate(
    run: &Path,
    sequence: &Path,
    params: &EvaluationParams,
    out: Option<&Path>,
) -> Result<Report, CliError> {
    let seq = load_sequence(sequence).map_err(data)?;
    let recorded = read(&run.join(META_FILE))?;
    if recorded != meta(&seq) {
        return Err(CliError::Data(format!(
            "{} was produced from a different sequence than {}",
            run.display(),
            sequence.display()
        )));
    }
    let trajectory = read_tum(&read(&run.join(TRAJECTORY_FILE))?).map_err(|e| {
        CliError::Data(format!("{}: {e}", run.join(TRAJECTORY_FILE).display()))
    })?;
    let rows = read_kitti_tracks(&read(&run.join(TRACKS_FILE))?)
        .map_err(|e| CliError::Data(format!("{}: {e}", run.join(TRACKS_FILE).display())))?;
    let report = evaluate(&seq, &trajectory, &rows, params).map_err(data)?;
    if let Some(dir) = out {
        write(&dir.join(REPORT_FILE), &report.key_values())?;
        write(&dir.join(ERRORS_FILE), &report.errors_csv())?;
    }
    Ok(report)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => {
            let config = load_config(config.as_deref())?;
            let seq = cmd_simulate(&config, seed, &out)?;
            println!("wrote {} frames to {}", seq.frames.len(), out.display());
        }
        Command::Run { sequence, config, out } => {
            let config = load_config(config.as_deref())?;
            let output = cmd_run(&sequence, &config, &out)?;
            let lost = output.log.iter().filter(|l| l.contains("tracking=LOST")).count();
            println!("processed {} frames ({lost} carried forward), outputs in {}", output.log.len(), out.display());
        }
        Command::Evaluate { run, sequence, config, threshold_2d, threshold_3d, out } => {
            let mut params = load_config(config.as_deref())?.evaluation;
            if let Some(t) = threshold_2d {
                params.threshold_2d = t;
            }
            if let Some(t) = threshold_3d {
                params.threshold_3d = t;
            }
            let report = cmd_evaluate(&run, &sequence, &params, out.as_deref())?;
            print!("{}\n{}", report.key_values(), report.table());
        }
    }
    Ok(())
}
