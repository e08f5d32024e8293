//! Generates a sequence, writes it to disk and reads it back.
//!
//! `cargo run --example simulate_sequence -- out.txt` keeps the file.

use dynslam::simulator::{emit_sequence, generate, load_sequence, NoiseSpec, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        frames: 50,
        noise: NoiseSpec { pixel_sigma: 1.0, depth_sigma: 0.02, detection_fn_rate: 0.05, outlier_rate: 0.1, ..NoiseSpec::default() },
        ..SceneConfig::default()
    };
    let seq = generate(&scene)?;

    let dir = tempfile::tempdir()?;
    let path = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| dir.path().join("sequence.txt"));
    emit_sequence(&seq, &path)?;
    let loaded = load_sequence(&path)?;
    assert_eq!(loaded, seq);

    let observations: usize = seq.frames.iter().map(|f| f.input.observations.len()).sum();
    let on_objects: usize =
        seq.frames.iter().flat_map(|f| &f.truth.observations).filter(|t| t.object != 0).count();
    let decoys = seq.frames.iter().flat_map(|f| &f.truth.observations).filter(|t| t.landmark.is_none()).count();
    let detections: usize = seq.frames.iter().map(|f| f.input.detections.len()).sum();
    println!("{} frames, {} landmarks -> {}", seq.frames.len(), seq.landmarks.len(), path.display());
    println!("{observations} observations, {on_objects} on objects, {decoys} decoys");
    println!("{detections} 2D detections over {} frames", seq.frames.len());
    Ok(())
}
