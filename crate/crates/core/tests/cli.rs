use std::path::Path;

use dynslam::cli::{
    cmd_evaluate, cmd_run, cmd_simulate, ground_truth_boxes, ground_truth_trajectory, main_with_args, CliError,
    ERRORS_FILE, LOG_FILE, REPORT_FILE, TRACKS_FILE, TRAJECTORY_FILE,
};
use dynslam::evaluation::{write_kitti_tracks, write_tum, TrackRow};
use dynslam::pipeline::PipelineConfig;
use dynslam::simulator::{load_sequence, Sequence};

fn small_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.scene.frames = 20;
    c
}

fn simulate(dir: &Path, config: &PipelineConfig) -> (std::path::PathBuf, Sequence) {
    let path = dir.join("seq.txt");
    let seq = cmd_simulate(config, Some(3), &path).unwrap();
    (path, seq)
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("dynslam").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    let c = dir.path().join("c.txt");
    cmd_simulate(&config, Some(5), &a).unwrap();
    cmd_simulate(&config, Some(5), &b).unwrap();
    cmd_simulate(&config, Some(6), &c).unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn run_into_missing_directory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (seq, _) = simulate(dir.path(), &small_config());
    let missing = dir.path().join("nowhere");
    let err = cmd_run(&seq, &PipelineConfig::default(), &missing).unwrap_err();
    assert!(matches!(err, CliError::Data(_)));
    assert!(err.to_string().contains("nowhere"), "{err}");
}

#[test]
fn corrupted_sequence_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (seq, _) = simulate(dir.path(), &small_config());
    let text = std::fs::read_to_string(&seq).unwrap();
    let cut: String = text.lines().take(text.lines().count() / 2).map(|l| format!("{l}\n")).collect();
    std::fs::write(&seq, cut).unwrap();
    let out = dir.path().join("run");
    std::fs::create_dir(&out).unwrap();
    let code = main_with_args(args(&["run", seq.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(code, 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(main_with_args(args(&["run"])), 1);
    assert_eq!(main_with_args(args(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = dir.path().join("s.txt");
    assert_eq!(main_with_args(args(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()])), 1);
}

#[test]
fn scene_without_objects_runs_and_reports_no_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.scene.objects.clear();
    let (seq, _) = simulate(dir.path(), &config);
    let out = dir.path().join("run");
    std::fs::create_dir(&out).unwrap();
    let output = cmd_run(&seq, &config, &out).unwrap();
    assert!(output.tracks.is_empty());
    assert_eq!(std::fs::read_to_string(out.join(TRACKS_FILE)).unwrap(), "");
    assert_eq!(std::fs::read_to_string(out.join(LOG_FILE)).unwrap().lines().count(), 20);
    let report = cmd_evaluate(&out, &seq, &config.evaluation, None).unwrap();
    assert!(report.ape.rmse < 1e-6);
    assert_eq!(report.clear_2d.mota, 1.0);
}

#[test]
fn ground_truth_run_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let (seq_path, _) = simulate(dir.path(), &config);
    let seq = load_sequence(&seq_path).unwrap();
    let out = dir.path().join("run");
    std::fs::create_dir(&out).unwrap();
    cmd_run(&seq_path, &config, &out).unwrap();

    // replace the estimates with ground truth
    std::fs::write(out.join(TRAJECTORY_FILE), write_tum(&ground_truth_trajectory(&seq))).unwrap();
    let (b2, b3) = ground_truth_boxes(&seq);
    let mut rows = Vec::new();
    for (frame, (f2, f3)) in b2.iter().zip(&b3).enumerate() {
        for ((id, b), (_, b3)) in f2.iter().zip(f3) {
            rows.push(TrackRow::from_box(frame, *id, *b, Some(b3), 1.0));
        }
    }
    std::fs::write(out.join(TRACKS_FILE), write_kitti_tracks(&rows)).unwrap();

    let report = cmd_evaluate(&out, &seq_path, &config.evaluation, None).unwrap();
    assert!(report.ape.rmse < 1e-9, "{}", report.ape.rmse);
    assert_eq!(report.clear_2d.mota, 1.0);
    assert_eq!(report.clear_2d.id_switches, 0);
    assert!(report.clear_3d.motp > 0.999_999);
    assert!((report.ap_3d - 1.0).abs() < 1e-12);
}

#[test]
fn evaluate_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let (seq, _) = simulate(dir.path(), &config);
    let run = dir.path().join("run");
    std::fs::create_dir(&run).unwrap();
    cmd_run(&seq, &config, &run).unwrap();
    let mut texts = Vec::new();
    for name in ["e1", "e2"] {
        let out = dir.path().join(name);
        std::fs::create_dir(&out).unwrap();
        cmd_evaluate(&run, &seq, &config.evaluation, Some(&out)).unwrap();
        texts.push((std::fs::read(out.join(REPORT_FILE)).unwrap(), std::fs::read(out.join(ERRORS_FILE)).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn evaluate_rejects_a_run_from_another_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config();
    let (seq, _) = simulate(dir.path(), &config);
    let run = dir.path().join("run");
    std::fs::create_dir(&run).unwrap();
    cmd_run(&seq, &config, &run).unwrap();
    let other = dir.path().join("other.txt");
    cmd_simulate(&config, Some(4), &other).unwrap();
    let err = cmd_evaluate(&run, &other, &config.evaluation, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
